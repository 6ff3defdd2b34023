#include "hfkit/episode_buffer.hpp"

#include <sys/file.h>
#include <fcntl.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <set>
#include <sstream>

#include "hfkit/feedback.hpp"

namespace hfkit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kLogName = "episodes.log";
constexpr const char* kIndexName = "episodes.idx";
constexpr const char* kLockName = "LOCK";

std::uint32_t crc_of(std::string_view text) {
    return static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(text.data()), static_cast<uInt>(text.size())));
}

std::string hex8(std::uint32_t v) {
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08x", v);
    return buf;
}

// Splits "<crc> <json>" and verifies the checksum. Returns the json text.
std::string_view checked_payload(std::string_view line, std::int64_t offset) {
    if (line.size() < 10 || line[8] != ' ') throw CorruptRecord("malformed log line at byte " + std::to_string(offset));
    auto payload = line.substr(9);
    std::uint32_t stored = 0;
    try {
        stored = static_cast<std::uint32_t>(std::stoul(std::string(line.substr(0, 8)), nullptr, 16));
    } catch (const std::exception&) {
        throw CorruptRecord("malformed checksum at byte " + std::to_string(offset));
    }
    if (stored != crc_of(payload)) throw CorruptRecord("checksum mismatch at byte " + std::to_string(offset));
    return payload;
}

void sort_ordering(BufferIndex& index) {
    index.ordering.clear();
    index.ordering.reserve(index.entries.size());
    for (const auto& [id, _] : index.entries) index.ordering.push_back(id);
    std::sort(index.ordering.begin(), index.ordering.end(), [&](const EpisodeId& a, const EpisodeId& b) {
        const auto& ea = index.entries.at(a);
        const auto& eb = index.entries.at(b);
        if (ea.skill_level != eb.skill_level) return ea.skill_level < eb.skill_level;
        if (ea.total_return != eb.total_return) return ea.total_return < eb.total_return;
        return a < b;
    });
}

json entry_to_json(const EpisodeId& id, const IndexEntry& e) {
    return json{{"id", to_json(id)},          {"offset", e.offset},
                {"length", e.length},         {"steps", e.steps},
                {"total_return", e.total_return}, {"skill", e.skill_level},
                {"labeled", e.labeled_count}, {"flagged", e.flagged}};
}

// Applies one parsed log line to the index.
void apply_line(BufferIndex& index, const json& j, std::int64_t offset, std::int64_t length) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "episode") {
        auto ep = episode_from_json(j.at("episode"));
        if (index.entries.contains(ep.id)) throw CorruptRecord("duplicate episode " + ep.id.key() + " in log");
        index.entries.emplace(ep.id, IndexEntry{offset, length, ep.length(), ep.total_return, ep.id.skill_level, 0,
                                                false});
    } else if (kind == "label") {
        auto id = episode_id_from_json(j.at("id"));
        auto it = index.entries.find(id);
        if (it == index.entries.end()) throw CorruptRecord("label for unknown episode " + id.key());
        ++it->second.labeled_count;
    } else if (kind == "flag") {
        auto id = episode_id_from_json(j.at("id"));
        auto it = index.entries.find(id);
        if (it == index.entries.end()) throw CorruptRecord("flag for unknown episode " + id.key());
        it->second.flagged = j.at("flagged").get<bool>();
    } else {
        throw CorruptRecord("unknown log record kind '" + kind + "'");
    }
}

std::optional<BufferIndex> read_index_file(const fs::path& path, std::int64_t log_bytes) {
    std::ifstream in(path);
    if (!in) return std::nullopt;
    try {
        std::string line;
        if (!std::getline(in, line)) return std::nullopt;
        auto header = json::parse(line);
        if (header.at("format") != "hfkit-episode-index" || header.at("version") != 1 ||
            header.at("log_bytes").get<std::int64_t>() != log_bytes)
            return std::nullopt;
        BufferIndex index;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto j = json::parse(line);
            IndexEntry e;
            e.offset = j.at("offset").get<std::int64_t>();
            e.length = j.at("length").get<std::int64_t>();
            e.steps = j.at("steps").get<int>();
            e.total_return = j.at("total_return").get<double>();
            e.skill_level = j.at("skill").get<std::int64_t>();
            e.labeled_count = j.at("labeled").get<std::int64_t>();
            e.flagged = j.at("flagged").get<bool>();
            index.entries.emplace(episode_id_from_json(j.at("id")), e);
        }
        sort_ordering(index);
        return index;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

}  // namespace

// ---------------------------------------------------------------------------

std::optional<int> BufferIndex::steps(const EpisodeId& id) const {
    auto it = entries.find(id);
    if (it == entries.end()) return std::nullopt;
    return it->second.steps;
}

std::vector<Cell> Segment::reward_cells() const {
    std::vector<Cell> out;
    out.reserve(actions.size());
    for (std::size_t i = 1; i < states.size(); ++i) out.push_back(states[i].agent);
    return out;
}

Segment make_segment(const EpisodeRecord& ep, int start, int end) {
    if (!(0 <= start && start < end && end <= ep.length()))
        throw RangeError("segment [" + std::to_string(start) + "," + std::to_string(end) + ") outside episode of length " +
                         std::to_string(ep.length()));
    Segment s;
    s.id = ep.id;
    s.start = start;
    s.end = end;
    s.states.assign(ep.states.begin() + start, ep.states.begin() + end + 1);
    s.actions.assign(ep.actions.begin() + start, ep.actions.begin() + end);
    s.gt_rewards.assign(ep.gt_rewards.begin() + start, ep.gt_rewards.begin() + end);
    return s;
}

// ---------------------------------------------------------------------------

EpisodeBuffer::EpisodeBuffer(fs::path dir, Mode mode) : dir_(std::move(dir)), mode_(mode) {}

std::shared_ptr<EpisodeBuffer> EpisodeBuffer::open(const fs::path& dir, Mode mode) {
    std::shared_ptr<EpisodeBuffer> buffer(new EpisodeBuffer(dir, mode));
    if (mode == Mode::read_write) {
        fs::create_directories(dir);
        buffer->lock_fd_ = ::open((dir / kLockName).c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
        if (buffer->lock_fd_ < 0) throw StoreLocked("cannot open lock file in " + dir.string());
        if (::flock(buffer->lock_fd_, LOCK_EX | LOCK_NB) != 0) {
            ::close(buffer->lock_fd_);
            buffer->lock_fd_ = -1;
            throw StoreLocked("episode store " + dir.string() + " is held by another writer");
        }
    } else if (!fs::exists(dir / kLogName)) {
        throw NotFound("no episode store at " + dir.string());
    }
    buffer->load();
    return buffer;
}

EpisodeBuffer::~EpisodeBuffer() {
    if (mode_ == Mode::read_write && index_) {
        try {
            flush_index();
        } catch (const std::exception& e) {
            std::clog << "warning: could not write episode index: " << e.what() << "\n";
        }
    }
    if (lock_fd_ >= 0) {
        ::flock(lock_fd_, LOCK_UN);
        ::close(lock_fd_);
    }
}

BufferIndex EpisodeBuffer::scan_log(const fs::path& log_path) {
    BufferIndex index;
    std::ifstream in(log_path, std::ios::binary);
    if (!in) return index;
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::int64_t offset = 0;
    while (offset < static_cast<std::int64_t>(content.size())) {
        auto nl = content.find('\n', static_cast<std::size_t>(offset));
        if (nl == std::string::npos) break;  // torn tail from an interrupted append
        std::string_view line(content.data() + offset, nl - static_cast<std::size_t>(offset));
        const auto length = static_cast<std::int64_t>(line.size()) + 1;
        auto payload = checked_payload(line, offset);
        try {
            apply_line(index, json::parse(payload), offset, length);
        } catch (const json::exception& e) {
            throw CorruptRecord("unreadable log record at byte " + std::to_string(offset) + ": " + e.what());
        }
        offset += length;
    }
    sort_ordering(index);
    return index;
}

void EpisodeBuffer::load() {
    const auto log_path = dir_ / kLogName;
    std::int64_t complete_bytes = 0;
    if (fs::exists(log_path)) {
        // Drop a torn trailing line so later appends start on a line boundary.
        std::ifstream in(log_path, std::ios::binary);
        std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        auto last_nl = content.rfind('\n');
        complete_bytes = last_nl == std::string::npos ? 0 : static_cast<std::int64_t>(last_nl) + 1;
        if (complete_bytes != static_cast<std::int64_t>(content.size()) && mode_ == Mode::read_write)
            fs::resize_file(log_path, static_cast<std::uintmax_t>(complete_bytes));
    } else if (mode_ == Mode::read_write) {
        std::ofstream touch(log_path, std::ios::binary | std::ios::app);
    }
    log_bytes_ = complete_bytes;

    auto index = read_index_file(dir_ / kIndexName, log_bytes_);
    if (!index) index = scan_log(log_path);
    index_ = std::make_shared<const BufferIndex>(std::move(*index));
}

void EpisodeBuffer::require_writable() const {
    if (mode_ != Mode::read_write) throw StoreLocked("episode store opened read-only");
}

std::int64_t EpisodeBuffer::append_line(const std::string& json_text) {
    const std::string line = hex8(crc_of(json_text)) + " " + json_text + "\n";
    std::ofstream out(dir_ / kLogName, std::ios::binary | std::ios::app);
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
    out.flush();
    if (!out) throw CorruptRecord("failed to append to " + (dir_ / kLogName).string());
    const auto offset = log_bytes_;
    log_bytes_ += static_cast<std::int64_t>(line.size());
    return offset;
}

void EpisodeBuffer::publish(std::shared_ptr<BufferIndex> next) {
    std::unique_lock lock(index_mutex_);
    index_ = std::move(next);
}

std::size_t EpisodeBuffer::ingest(std::span<const EpisodeRecord> episodes) {
    require_writable();
    for (const auto& ep : episodes) {
        if (auto v = episode_violations(ep); !v.empty())
            throw CorruptRecord("episode " + ep.id.key() + ": " + v.front());
    }
    std::lock_guard write_lock(write_mutex_);
    auto next = std::make_shared<BufferIndex>(*snapshot());
    std::size_t written = 0;
    std::size_t duplicates = 0;
    for (const auto& ep : episodes) {
        if (next->entries.contains(ep.id)) {
            if (duplicates++ == 0) std::clog << "warning: episode " << ep.id.key() << " already stored; skipped\n";
            continue;
        }
        const auto text = json{{"kind", "episode"}, {"episode", to_json(ep)}}.dump();
        const auto offset = append_line(text);
        next->entries.emplace(ep.id, IndexEntry{offset, static_cast<std::int64_t>(text.size()) + 10, ep.length(),
                                                ep.total_return, ep.id.skill_level, 0, false});
        ++written;
    }
    if (duplicates > 1) std::clog << "warning: " << duplicates << " duplicate episodes skipped in total\n";
    if (written > 0) {
        sort_ordering(*next);
        publish(std::move(next));
    }
    return written;
}

EpisodeId EpisodeBuffer::ingest_with_fresh_id(EpisodeRecord episode) {
    require_writable();
    if (auto v = episode_violations(episode); !v.empty())
        throw CorruptRecord("episode " + episode.id.key() + ": " + v.front());
    std::lock_guard write_lock(write_mutex_);
    auto next = std::make_shared<BufferIndex>(*snapshot());
    std::int64_t num = 0;
    for (const auto& [id, _] : next->entries) {
        if (id.env_name == episode.id.env_name && id.source_kind == episode.id.source_kind &&
            id.policy_id == episode.id.policy_id && id.skill_level == episode.id.skill_level)
            num = std::max(num, id.episode_num + 1);
    }
    episode.id.episode_num = num;
    const auto text = json{{"kind", "episode"}, {"episode", to_json(episode)}}.dump();
    const auto offset = append_line(text);
    next->entries.emplace(episode.id, IndexEntry{offset, static_cast<std::int64_t>(text.size()) + 10,
                                                 episode.length(), episode.total_return, episode.id.skill_level, 0,
                                                 false});
    sort_ordering(*next);
    publish(std::move(next));
    return episode.id;
}

EpisodeRecord EpisodeBuffer::fetch(const EpisodeId& id) const {
    {
        std::lock_guard lock(cache_mutex_);
        if (auto it = cache_.find(id); it != cache_.end()) return *it->second;
    }
    auto index = snapshot();
    auto it = index->entries.find(id);
    if (it == index->entries.end()) throw NotFound("episode " + id.key() + " not in buffer");
    const auto& entry = it->second;

    std::ifstream in(dir_ / kLogName, std::ios::binary);
    in.seekg(entry.offset);
    std::string line(static_cast<std::size_t>(entry.length), '\0');
    in.read(line.data(), entry.length);
    if (!in || line.back() != '\n') throw CorruptRecord("short read for episode " + id.key());
    line.pop_back();
    auto payload = checked_payload(line, entry.offset);
    auto record = std::make_shared<const EpisodeRecord>(episode_from_json(json::parse(payload).at("episode")));
    if (!(record->id == id)) throw CorruptRecord("index points at the wrong record for " + id.key());

    std::lock_guard lock(cache_mutex_);
    cache_.emplace(id, record);
    return *record;
}

Segment EpisodeBuffer::slice(const EpisodeId& id, int start, int end) const {
    return make_segment(fetch(id), start, end);
}

std::int64_t EpisodeBuffer::mark_labeled(const EpisodeId& id) {
    require_writable();
    std::lock_guard write_lock(write_mutex_);
    auto current = snapshot();
    if (!current->contains(id)) throw NotFound("episode " + id.key() + " not in buffer");
    append_line(json{{"kind", "label"}, {"id", to_json(id)}}.dump());
    auto next = std::make_shared<BufferIndex>(*current);
    auto& entry = next->entries.at(id);
    ++entry.labeled_count;
    const auto count = entry.labeled_count;
    publish(std::move(next));
    return count;
}

void EpisodeBuffer::set_flagged(const EpisodeId& id, bool flagged) {
    require_writable();
    std::lock_guard write_lock(write_mutex_);
    auto current = snapshot();
    if (!current->contains(id)) throw NotFound("episode " + id.key() + " not in buffer");
    append_line(json{{"kind", "flag"}, {"id", to_json(id)}, {"flagged", flagged}}.dump());
    auto next = std::make_shared<BufferIndex>(*current);
    next->entries.at(id).flagged = flagged;
    publish(std::move(next));
}

std::shared_ptr<const BufferIndex> EpisodeBuffer::snapshot() const {
    std::shared_lock lock(index_mutex_);
    return index_;
}

bool EpisodeBuffer::contains(const EpisodeId& id) const { return snapshot()->contains(id); }
std::optional<int> EpisodeBuffer::steps(const EpisodeId& id) const { return snapshot()->steps(id); }
std::size_t EpisodeBuffer::size() const { return snapshot()->size(); }

void EpisodeBuffer::flush_index() {
    require_writable();
    std::lock_guard write_lock(write_mutex_);
    auto index = snapshot();
    const auto tmp = dir_ / (std::string(kIndexName) + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << json{{"format", "hfkit-episode-index"}, {"version", 1}, {"log_bytes", log_bytes_}}.dump() << "\n";
        for (const auto& [id, e] : index->entries) out << entry_to_json(id, e).dump() << "\n";
        if (!out) throw CorruptRecord("failed to write episode index");
    }
    fs::rename(tmp, dir_ / kIndexName);
}

// ---------------------------------------------------------------------------

EpisodeBuffer* EpisodeCatalog::owner(const EpisodeId& id) const {
    for (const auto& b : buffers_)
        if (b->contains(id)) return b.get();
    return nullptr;
}

bool EpisodeCatalog::contains(const EpisodeId& id) const { return owner(id) != nullptr; }

std::optional<int> EpisodeCatalog::steps(const EpisodeId& id) const {
    for (const auto& b : buffers_)
        if (auto s = b->steps(id)) return s;
    return std::nullopt;
}

EpisodeRecord EpisodeCatalog::fetch(const EpisodeId& id) const {
    if (auto* b = owner(id)) return b->fetch(id);
    throw NotFound("episode " + id.key() + " not in any buffer");
}

Segment EpisodeCatalog::slice(const EpisodeId& id, int start, int end) const {
    return make_segment(fetch(id), start, end);
}

EpisodeBuffer& EpisodeCatalog::primary() const {
    if (buffers_.empty()) throw NotFound("catalog has no buffers");
    return *buffers_.front();
}

}  // namespace hfkit
