#include "hfkit/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "hfkit/feedback.hpp"

namespace hfkit {

using nlohmann::json;

namespace {

std::mt19937_64 batch_rng(std::uint64_t seed, std::uint64_t draws) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(draws), static_cast<std::uint32_t>(draws >> 32)};
    return std::mt19937_64(seq);
}

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
    return std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)));
}

const BufferIndex& require_source(const SamplingSources& sources, SampleSource s) {
    const BufferIndex* index = s == SampleSource::main ? sources.main : sources.calibration;
    if (index == nullptr) throw InsufficientData(std::string("no ") + std::string(to_string(s)) + " buffer configured");
    if (index->size() == 0) throw InsufficientData(std::string(to_string(s)) + " buffer is empty");
    return *index;
}

// Last position in the history at which each id was served.
std::map<EpisodeId, std::size_t> last_served(const SamplerState& st) {
    std::map<EpisodeId, std::size_t> out;
    for (std::size_t i = 0; i < st.served_history.size(); ++i) out[st.served_history[i].id] = i;
    return out;
}

// Up to k ids from `pool` (in pool order) at random among the never-served,
// topped up with the least recently served.
std::vector<EpisodeId> draw_fresh(const std::vector<EpisodeId>& pool, int k, std::mt19937_64& rng,
                                  const std::map<EpisodeId, std::size_t>& served, const std::set<EpisodeId>& taken) {
    std::vector<EpisodeId> fresh;
    std::vector<std::pair<std::size_t, EpisodeId>> recycled;
    for (const auto& id : pool) {
        if (taken.contains(id)) continue;
        if (auto it = served.find(id); it != served.end()) recycled.emplace_back(it->second, id);
        else fresh.push_back(id);
    }
    std::vector<EpisodeId> out;
    const auto want = static_cast<std::size_t>(k);
    while (out.size() < want && !fresh.empty()) {
        const auto i = uniform_index(rng, fresh.size());
        out.push_back(fresh[i]);
        fresh[i] = fresh.back();
        fresh.pop_back();
    }
    std::sort(recycled.begin(), recycled.end());
    for (std::size_t i = 0; out.size() < want && i < recycled.size(); ++i) out.push_back(recycled[i].second);
    return out;
}

std::vector<EpisodeId> all_ids(const BufferIndex& index) {
    std::vector<EpisodeId> out;
    out.reserve(index.size());
    for (const auto& [id, _] : index.entries) out.push_back(id);
    return out;
}

}  // namespace

std::string_view to_string(SamplerMode m) {
    switch (m) {
        case SamplerMode::manual: return "manual";
        case SamplerMode::random: return "random";
        case SamplerMode::progressive: return "progressive";
        case SamplerMode::query_based: return "query_based";
        case SamplerMode::interleaved: return "interleaved";
        case SamplerMode::repeat: return "repeat";
    }
    return "?";
}

SamplerMode sampler_mode_from_string(std::string_view s) {
    for (auto m : {SamplerMode::manual, SamplerMode::random, SamplerMode::progressive, SamplerMode::query_based,
                   SamplerMode::interleaved, SamplerMode::repeat})
        if (to_string(m) == s) return m;
    throw ConfigError("unknown sampler mode '" + std::string(s) + "'");
}

std::string_view to_string(SampleSource s) { return s == SampleSource::main ? "main" : "calibration"; }

SamplerState make_sampler_state(SamplerSchedule schedule) {
    SamplerState st;
    st.active = schedule.initial;
    st.schedule = std::move(schedule);
    return st;
}

std::pair<std::vector<SampledItem>, SamplerState> next_batch(const SamplerState& st, int k, const SamplingSources& sources,
                                                             std::int64_t now_ms) {
    if (k < 1) throw RangeError("batch size must be at least 1");
    SamplerState next = st;
    auto rng = batch_rng(st.active.seed, st.draws);
    const auto served = last_served(st);
    std::vector<SampledItem> out;
    next.cold_start = false;

    auto take_random = [&](SampleSource source, int count, std::set<EpisodeId>& taken) {
        const auto& index = require_source(sources, source);
        for (auto& id : draw_fresh(all_ids(index), count, rng, served, taken)) {
            taken.insert(id);
            out.push_back({std::move(id), source});
        }
    };

    switch (st.active.mode) {
        case SamplerMode::manual: {
            if (st.manual_queue.empty()) throw Exhausted("manual mode: no episode selected");
            std::set<EpisodeId> taken;
            while (static_cast<int>(out.size()) < k && !next.manual_queue.empty()) {
                auto id = next.manual_queue.front();
                next.manual_queue.pop_front();
                if (!taken.insert(id).second) continue;
                const bool calib = sources.calibration != nullptr && sources.calibration->contains(id);
                if (!calib && (sources.main == nullptr || !sources.main->contains(id)))
                    throw NotFound("episode " + id.key() + " not in any buffer");
                out.push_back({id, calib ? SampleSource::calibration : SampleSource::main});
            }
            break;
        }
        case SamplerMode::random: {
            std::set<EpisodeId> taken;
            take_random(st.active.source, k, taken);
            break;
        }
        case SamplerMode::progressive: {
            const auto& index = require_source(sources, st.active.source);
            const auto n = static_cast<std::int64_t>(index.ordering.size());
            if (st.cursor >= n) throw Exhausted("progressive cursor past the end of the buffer");
            std::int64_t window = st.active.window > 0 ? st.active.window
                                                       : static_cast<std::int64_t>(std::ceil(0.1 * static_cast<double>(n)));
            window = std::max<std::int64_t>(window, k);
            const auto hi = std::min(n, st.cursor + window);
            std::vector<EpisodeId> pool(index.ordering.begin() + st.cursor, index.ordering.begin() + hi);
            std::vector<EpisodeId> picked;
            if (static_cast<int>(pool.size()) <= k) {
                picked = pool;
            } else {
                std::vector<std::size_t> slots(pool.size());
                for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
                std::vector<std::size_t> chosen;
                for (int i = 0; i < k; ++i) {
                    const auto j = uniform_index(rng, slots.size());
                    chosen.push_back(slots[j]);
                    slots[j] = slots.back();
                    slots.pop_back();
                }
                std::sort(chosen.begin(), chosen.end());
                for (auto c : chosen) picked.push_back(pool[c]);
            }
            for (auto& id : picked) out.push_back({std::move(id), st.active.source});
            next.cursor = std::min(n, st.cursor + k);
            break;
        }
        case SamplerMode::query_based: {
            if (sources.loss == nullptr || !*sources.loss) throw ModelRequired("query-based sampling needs a reward model");
            const auto& index = require_source(sources, SampleSource::main);
            struct Scored {
                bool was_served;
                double loss;
                EpisodeId id;
            };
            std::vector<Scored> scored;
            bool any_signal = false;
            for (const auto& [id, _] : index.entries) {
                const auto l = (*sources.loss)(id);
                any_signal = any_signal || !l.cold_start;
                scored.push_back({served.contains(id), l.value, id});
            }
            if (!any_signal) {
                next.cold_start = true;
                std::set<EpisodeId> taken;
                take_random(SampleSource::main, k, taken);
                break;
            }
            std::stable_sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
                if (a.was_served != b.was_served) return !a.was_served;
                return a.loss > b.loss;
            });
            for (int i = 0; i < k && i < static_cast<int>(scored.size()); ++i) out.push_back({scored[i].id, SampleSource::main});
            break;
        }
        case SamplerMode::interleaved: {
            const double rho = st.active.rho;
            int calib = 0;
            for (int i = 0; i < k; ++i) calib += uniform01(rng) < rho ? 1 : 0;
            std::set<EpisodeId> taken;
            if (calib > 0) take_random(SampleSource::calibration, calib, taken);
            if (k - calib > 0) take_random(SampleSource::main, k - calib, taken);
            break;
        }
        case SamplerMode::repeat: {
            if (st.served_history.empty()) throw Exhausted("repeat mode: nothing has been served yet");
            std::map<EpisodeId, SampleSource> seen;
            std::vector<EpisodeId> pool;
            for (const auto& item : st.served_history)
                if (seen.emplace(item.id, item.source).second) pool.push_back(item.id);
            const int count = std::min<int>(k, static_cast<int>(pool.size()));
            for (int i = 0; i < count; ++i) {
                const auto j = uniform_index(rng, pool.size());
                out.push_back({pool[j], seen.at(pool[j])});
                pool[j] = pool.back();
                pool.pop_back();
            }
            break;
        }
    }

    for (const auto& item : out) next.served_history.push_back({item.id, now_ms, item.source});
    ++next.draws;
    return {std::move(out), std::move(next)};
}

SamplerState advance_trigger(const SamplerState& st, TriggerEvent event) {
    SamplerState next = st;
    if (event.kind == TriggerEvent::Kind::feedback_received) ++next.feedback_since;
    else next.elapsed_since += event.ms;
    if (next.next_entry >= next.schedule.entries.size()) return next;

    const auto& entry = next.schedule.entries[next.next_entry];
    const auto counter =
        entry.trigger.kind == Trigger::Kind::feedback_count ? next.feedback_since : next.elapsed_since;
    if (counter >= entry.trigger.threshold) {
        next.active = entry.mode;
        ++next.next_entry;
        next.feedback_since = 0;
        next.elapsed_since = 0;
        next.cursor = 0;
    }
    return next;
}

SamplerState select_manual(const SamplerState& st, const std::vector<EpisodeId>& ids) {
    SamplerState next = st;
    next.manual_queue.insert(next.manual_queue.end(), ids.begin(), ids.end());
    return next;
}

json to_json(const ModeSpec& m) {
    json j{{"mode", to_string(m.mode)}, {"seed", m.seed}, {"source", to_string(m.source)}};
    if (m.mode == SamplerMode::progressive) j["window"] = m.window;
    if (m.mode == SamplerMode::interleaved) j["rho"] = m.rho;
    return j;
}

ModeSpec mode_spec_from_json(const json& j) {
    ModeSpec m;
    m.mode = sampler_mode_from_string(j.at("mode").get<std::string>());
    m.seed = j.value("seed", std::uint64_t{0});
    m.window = j.value("window", 0);
    m.rho = j.value("rho", 0.1);
    const auto source = j.value("source", std::string("main"));
    if (source != "main" && source != "calibration") throw ConfigError("unknown sample source '" + source + "'");
    m.source = source == "main" ? SampleSource::main : SampleSource::calibration;
    if (m.window < 0) throw ConfigError("window must be non-negative");
    if (!(m.rho >= 0.0 && m.rho <= 1.0)) throw ConfigError("rho must lie in [0,1]");
    return m;
}

json to_json(const SamplerSchedule& s) {
    json entries = json::array();
    for (const auto& e : s.entries) {
        const char* key = e.trigger.kind == Trigger::Kind::feedback_count ? "feedback_count" : "elapsed_ms";
        entries.push_back({{"trigger", {{key, e.trigger.threshold}}}, {"mode", to_json(e.mode)}});
    }
    return {{"initial", to_json(s.initial)}, {"schedule", entries}};
}

SamplerSchedule schedule_from_json(const json& j) {
    SamplerSchedule s;
    if (j.contains("initial")) s.initial = mode_spec_from_json(j.at("initial"));
    for (const auto& e : j.value("schedule", json::array())) {
        ScheduleEntry entry;
        const auto& t = e.at("trigger");
        if (t.contains("feedback_count")) {
            entry.trigger = {Trigger::Kind::feedback_count, t.at("feedback_count").get<std::int64_t>()};
        } else if (t.contains("elapsed_ms")) {
            entry.trigger = {Trigger::Kind::elapsed_ms, t.at("elapsed_ms").get<std::int64_t>()};
        } else {
            throw ConfigError("trigger needs feedback_count or elapsed_ms");
        }
        if (entry.trigger.threshold < 1) throw ConfigError("trigger threshold must be at least 1");
        entry.mode = mode_spec_from_json(e.at("mode"));
        s.entries.push_back(entry);
    }
    return s;
}

}  // namespace hfkit
