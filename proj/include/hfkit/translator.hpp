#pragma once

// Converts raw UI events into standardized feedback records.
//
// Payload schemas (targets use the record target encoding):
//   rating         {target, value, scale?: [min, max]}
//   ranking        {targets: [best, ..., worst], ranks?: [int]}   ranks express ties
//   correction     {target: episode target, step, action, continuation?: [action]}
//   demonstration  {actions: [action], start?: [x, y], optimality?}
//   brush          {target?, cells?: [[x, y]], polygon?: [[x, y]], sign: +1 | -1}

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hfkit/config.hpp"
#include "hfkit/episode_buffer.hpp"
#include "hfkit/feedback.hpp"
#include "hfkit/gridworld.hpp"

namespace hfkit {

enum class RawEventKind { rating, ranking, correction, demonstration, brush };
std::string_view to_string(RawEventKind k);
RawEventKind raw_event_kind_from_string(std::string_view s);
FeedbackKind feedback_kind_of(RawEventKind k);
RawEventKind raw_event_kind_of(FeedbackKind k);

struct RawFeedbackEvent {
    std::string session_id;
    std::string user_id;
    std::string ui_element;
    RawEventKind kind = RawEventKind::rating;
    nlohmann::json payload = nlohmann::json::object();
    std::int64_t client_timestamp = 0;
    std::int64_t latency_ms = 0;
    std::optional<std::string> free_text;
    nlohmann::json extra = nlohmann::json::object();  // copied into record metadata

    bool operator==(const RawFeedbackEvent&) const = default;
};

nlohmann::json to_json(const RawFeedbackEvent& ev);
/// Throws ParseError.
RawFeedbackEvent raw_event_from_json(const nlohmann::json& j);

struct TranslationContext {
    const ExperimentConfig& config;
    const GridSpec& spec;
    EpisodeCatalog& episodes;  // demonstrations are ingested into the primary buffer
};

/// Throws UnknownTargets, ScaleError, EmptyRanking, ReplayError,
/// DisabledFeedbackType or ValidationError (malformed payload).
std::vector<StandardizedFeedback> translate(const RawFeedbackEvent& ev, const TranslationContext& ctx);

struct Preference {
    Target winner;
    Target loser;

    bool operator==(const Preference&) const = default;
};

/// One pair per (i, j) with rank_i < rank_j. Throws NotRelative.
std::vector<Preference> expand_ranking(const StandardizedFeedback& fb);

struct SegmentPreference {
    Segment winner;  // replay of the corrected actions
    Segment loser;   // original behavior over the same number of steps
    bool degenerate = false;
};

/// Throws WrongKind, UnknownTargets or ReplayError.
SegmentPreference correction_to_preference(const StandardizedFeedback& fb, const EpisodeCatalog& episodes,
                                           const GridSpec& spec);

/// Cells whose centers lie inside the polygon (even-odd rule); vertices are in
/// cell units with cell (x, y) centered at (x + 0.5, y + 0.5).
std::vector<Cell> rasterize_polygon(const std::vector<std::pair<double, double>>& vertices, int width, int height);

}  // namespace hfkit
