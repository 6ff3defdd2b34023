#pragma once

// Persistent, append-only store of episode records.
//
// Directory layout:
//   episodes.log  one record per line: "<crc32 as 8 hex digits> <json>\n".
//                 json is {"kind":"episode","episode":{...}},
//                 {"kind":"label","id":{...}} or {"kind":"flag","id":{...},"flagged":b}.
//   episodes.idx  header line {"format":"hfkit-episode-index","version":1,"log_bytes":N}
//                 followed by one json entry per episode. Rebuilt from the log
//                 whenever it is missing, unreadable or stale (log_bytes differs).
//   LOCK          held with flock() by the single writer.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <vector>

#include "hfkit/gridworld.hpp"

namespace hfkit {

struct IndexEntry {
    std::int64_t offset = 0;  // byte offset of the episode line in episodes.log
    std::int64_t length = 0;  // byte length of that line, newline included
    int steps = 0;
    double total_return = 0.0;
    std::int64_t skill_level = 0;
    std::int64_t labeled_count = 0;
    bool flagged = false;

    bool operator==(const IndexEntry&) const = default;
};

struct BufferIndex {
    std::map<EpisodeId, IndexEntry> entries;
    std::vector<EpisodeId> ordering;  // sorted by (skill_level, total_return, id)

    bool operator==(const BufferIndex&) const = default;

    bool contains(const EpisodeId& id) const { return entries.contains(id); }
    std::size_t size() const { return entries.size(); }
    std::optional<int> steps(const EpisodeId& id) const;
};

/// Sub-range [start, end) of an episode: end - start actions and rewards,
/// end - start + 1 states.
struct Segment {
    EpisodeId id;
    int start = 0;
    int end = 0;
    std::vector<Observation> states;
    std::vector<Action> actions;
    std::vector<double> gt_rewards;

    bool operator==(const Segment&) const = default;

    double gt_return() const { return sum_rewards(gt_rewards); }
    /// States entered by the segment's actions (states[1..]).
    std::vector<Cell> reward_cells() const;
};

Segment make_segment(const EpisodeRecord& ep, int start, int end);

class EpisodeBuffer {
public:
    enum class Mode { read_write, read_only };

    /// Opens (creating when writable) the store in `dir`. Throws StoreLocked
    /// when another writer holds the directory, CorruptRecord on a checksum
    /// mismatch.
    static std::shared_ptr<EpisodeBuffer> open(const std::filesystem::path& dir, Mode mode = Mode::read_write);

    ~EpisodeBuffer();
    EpisodeBuffer(const EpisodeBuffer&) = delete;
    EpisodeBuffer& operator=(const EpisodeBuffer&) = delete;

    /// Appends new episodes; duplicates are skipped with a warning. Returns
    /// the number of episodes written. Throws CorruptRecord if a record
    /// breaks its bookkeeping invariants (nothing from the batch is written).
    std::size_t ingest(std::span<const EpisodeRecord> episodes);

    /// Ingests a record whose episode_num is replaced by the next free number
    /// for its (env, source, policy, skill) prefix. Returns the assigned id.
    EpisodeId ingest_with_fresh_id(EpisodeRecord episode);

    EpisodeRecord fetch(const EpisodeId& id) const;
    Segment slice(const EpisodeId& id, int start, int end) const;
    std::int64_t mark_labeled(const EpisodeId& id);
    void set_flagged(const EpisodeId& id, bool flagged);

    /// Immutable view of the index; stays valid while writers continue.
    std::shared_ptr<const BufferIndex> snapshot() const;
    bool contains(const EpisodeId& id) const;
    std::optional<int> steps(const EpisodeId& id) const;
    std::size_t size() const;

    /// Writes episodes.idx. Also done on destruction.
    void flush_index();

    /// Rebuilds the index by scanning the whole log.
    static BufferIndex scan_log(const std::filesystem::path& log_path);

    const std::filesystem::path& directory() const { return dir_; }
    bool writable() const { return mode_ == Mode::read_write; }

private:
    EpisodeBuffer(std::filesystem::path dir, Mode mode);

    void load();
    void require_writable() const;
    std::int64_t append_line(const std::string& json_text);
    void publish(std::shared_ptr<BufferIndex> next);

    std::filesystem::path dir_;
    Mode mode_;
    int lock_fd_ = -1;

    mutable std::mutex write_mutex_;
    mutable std::shared_mutex index_mutex_;
    std::shared_ptr<const BufferIndex> index_;
    std::int64_t log_bytes_ = 0;

    mutable std::mutex cache_mutex_;
    mutable std::map<EpisodeId, std::shared_ptr<const EpisodeRecord>> cache_;
};

/// Several buffers consulted in order (e.g. main + calibration).
class EpisodeCatalog {
public:
    EpisodeCatalog() = default;
    explicit EpisodeCatalog(std::vector<std::shared_ptr<EpisodeBuffer>> buffers) : buffers_(std::move(buffers)) {}

    void add(std::shared_ptr<EpisodeBuffer> buffer) { buffers_.push_back(std::move(buffer)); }

    bool contains(const EpisodeId& id) const;
    std::optional<int> steps(const EpisodeId& id) const;
    EpisodeRecord fetch(const EpisodeId& id) const;
    Segment slice(const EpisodeId& id, int start, int end) const;
    /// Buffer holding `id`, or nullptr.
    EpisodeBuffer* owner(const EpisodeId& id) const;

    EpisodeBuffer& primary() const;
    const std::vector<std::shared_ptr<EpisodeBuffer>>& buffers() const { return buffers_; }

private:
    std::vector<std::shared_ptr<EpisodeBuffer>> buffers_;
};

}  // namespace hfkit
