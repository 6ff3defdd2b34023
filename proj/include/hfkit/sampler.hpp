#pragma once

// Chooses which stored episodes to present next.

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hfkit/episode_buffer.hpp"

namespace hfkit {

enum class SamplerMode { manual, random, progressive, query_based, interleaved, repeat };
std::string_view to_string(SamplerMode m);
SamplerMode sampler_mode_from_string(std::string_view s);

enum class SampleSource { main, calibration };
std::string_view to_string(SampleSource s);

struct ModeSpec {
    SamplerMode mode = SamplerMode::random;
    std::uint64_t seed = 0;
    int window = 0;                           // progressive; 0 means 10% of the buffer (at least k)
    double rho = 0.1;                         // interleaved: fraction of calibration items
    SampleSource source = SampleSource::main;  // random/progressive draw from this buffer

    bool operator==(const ModeSpec&) const = default;
};

struct Trigger {
    enum class Kind { feedback_count, elapsed_ms } kind = Kind::feedback_count;
    std::int64_t threshold = 0;  // counted since the previous transition

    bool operator==(const Trigger&) const = default;
};

struct ScheduleEntry {
    Trigger trigger;
    ModeSpec mode;  // becomes active when the trigger fires

    bool operator==(const ScheduleEntry&) const = default;
};

struct SamplerSchedule {
    ModeSpec initial;
    std::vector<ScheduleEntry> entries;

    bool operator==(const SamplerSchedule&) const = default;
};

struct ServedItem {
    EpisodeId id;
    std::int64_t timestamp = 0;
    SampleSource source = SampleSource::main;

    bool operator==(const ServedItem&) const = default;
};

struct SamplerState {
    SamplerSchedule schedule;
    ModeSpec active;
    std::size_t next_entry = 0;        // index of the next schedule entry to fire
    std::int64_t feedback_since = 0;   // counters since the last transition
    std::int64_t elapsed_since = 0;
    std::int64_t cursor = 0;           // progressive position in the skill ordering
    std::uint64_t draws = 0;           // batches drawn so far (seeds the batch rng)
    std::vector<ServedItem> served_history;
    std::deque<EpisodeId> manual_queue;
    bool cold_start = false;           // last query-based batch fell back to random

    bool operator==(const SamplerState&) const = default;

    bool is_state_machine() const { return !schedule.entries.empty(); }
};

SamplerState make_sampler_state(SamplerSchedule schedule);

/// Per-episode loss used by query-based sampling.
struct EpisodeLoss {
    double value = 0.0;
    bool cold_start = false;  // no feedback and no ensemble touched the episode
};
using EpisodeLossFn = std::function<EpisodeLoss(const EpisodeId&)>;

struct SamplingSources {
    const BufferIndex* main = nullptr;
    const BufferIndex* calibration = nullptr;
    const EpisodeLossFn* loss = nullptr;  // absent means no reward model
};

struct SampledItem {
    EpisodeId id;
    SampleSource source = SampleSource::main;

    bool operator==(const SampledItem&) const = default;
};

/// Draws up to k distinct items under the active mode. Items not yet served
/// are preferred; once exhausted, the least recently served are recycled.
/// Throws Exhausted, ModelRequired, RangeError (k < 1) or InsufficientData
/// (empty buffer).
std::pair<std::vector<SampledItem>, SamplerState> next_batch(const SamplerState& st, int k, const SamplingSources& sources,
                                                             std::int64_t now_ms = 0);

struct TriggerEvent {
    enum class Kind { feedback_received, tick } kind = Kind::feedback_received;
    std::int64_t ms = 0;  // tick duration

    static TriggerEvent feedback() { return {Kind::feedback_received, 0}; }
    static TriggerEvent tick(std::int64_t ms) { return {Kind::tick, ms}; }
};

/// Updates counters; fires at most one pending schedule entry per event.
SamplerState advance_trigger(const SamplerState& st, TriggerEvent event);

/// Queues explicit selections for manual mode.
SamplerState select_manual(const SamplerState& st, const std::vector<EpisodeId>& ids);

nlohmann::json to_json(const ModeSpec& m);
ModeSpec mode_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SamplerSchedule& s);
SamplerSchedule schedule_from_json(const nlohmann::json& j);

}  // namespace hfkit
