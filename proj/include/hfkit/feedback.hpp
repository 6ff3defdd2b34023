#pragma once

// Standard feedback encoding: every feedback record, regardless of how it was
// given, is described by its targets, a six-dimension type tag, a content
// payload and free-form metadata.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "hfkit/errors.hpp"
#include "hfkit/types.hpp"

namespace hfkit {

inline constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Targets

struct EpisodeTarget {
    EpisodeId ref;
    bool operator==(const EpisodeTarget&) const = default;
};

// Transition `step` of the referenced episode (0 <= step < number of actions).
struct StateTarget {
    EpisodeId ref;
    int step = 0;
    bool operator==(const StateTarget&) const = default;
};

// Transitions [start, end).
struct SegmentTarget {
    EpisodeId ref;
    int start = 0;
    int end = 0;
    bool operator==(const SegmentTarget&) const = default;
};

// Untargeted feedback about the task as a whole.
struct AllTarget {
    bool operator==(const AllTarget&) const = default;
};

using TargetRef = std::variant<EpisodeTarget, StateTarget, SegmentTarget, AllTarget>;

struct Target {
    TargetRef ref;
    std::string origin = "replay";  // or "generated"
    std::int64_t timestamp = 0;     // ms since epoch

    bool operator==(const Target&) const = default;

    /// Referenced episode, or nullptr for AllTarget.
    const EpisodeId* episode() const;
    bool is_all() const { return std::holds_alternative<AllTarget>(ref); }
};

Target episode_target(EpisodeId id, std::string origin = "replay");
Target state_target(EpisodeId id, int step);
Target segment_target(EpisodeId id, int start, int end);
Target all_target();

// ---------------------------------------------------------------------------
// Type tag

enum class Intention { evaluate, instruct, describe, none };
enum class Expression { explicit_, implicit };
enum class Actuality { observed, generated };
enum class Relation { absolute, relative };
enum class ContentLevel { instance, feature };
enum class Granularity { state, segment, episode, entire };

std::string_view to_string(Intention v);
std::string_view to_string(Expression v);
std::string_view to_string(Actuality v);
std::string_view to_string(Relation v);
std::string_view to_string(ContentLevel v);
std::string_view to_string(Granularity v);

struct FeedbackTypeTag {
    Intention intention = Intention::evaluate;
    Expression expression = Expression::explicit_;
    Actuality actuality = Actuality::observed;
    Relation relation = Relation::absolute;
    ContentLevel content_level = ContentLevel::instance;
    Granularity granularity = Granularity::episode;

    bool operator==(const FeedbackTypeTag&) const = default;
};

// ---------------------------------------------------------------------------
// Content

struct MaskCell {
    Cell cell;
    double weight = 1.0;
    bool operator==(const MaskCell&) const = default;
};

// `features` makes a score or instruction feature-level (e.g. rating a
// highlighted region rather than the whole target).
struct Evaluation {
    double score = 0.0;  // normalized to [-1, 1]
    std::vector<MaskCell> features;
    bool operator==(const Evaluation&) const = default;
};

// Lower rank is preferred; ties share a rank.
struct Ranking {
    std::vector<int> ranks;
    bool operator==(const Ranking&) const = default;
};

struct InstructedAction {
    int step = 0;
    Action action = Action::up;
    std::optional<double> optimality;  // [0, 1]
    bool operator==(const InstructedAction&) const = default;
};

struct Instruction {
    std::vector<InstructedAction> actions;
    std::optional<Cell> goal;
    std::vector<MaskCell> features;
    bool operator==(const Instruction&) const = default;
};

struct Description {
    std::vector<MaskCell> mask;
    double importance = 1.0;  // [-1, 1]
    std::optional<std::string> annotation;
    bool operator==(const Description&) const = default;
};

struct NoContent {
    bool operator==(const NoContent&) const = default;
};

using FeedbackContent = std::variant<Evaluation, Ranking, Instruction, Description, NoContent>;

// ---------------------------------------------------------------------------
// Record

struct FeedbackMeta {
    std::int64_t timestamp = 0;
    std::string session_id;
    std::string user_id;
    std::int64_t latency_ms = 0;
    std::string ui_element;
    std::optional<double> confidence;
    std::optional<std::string> free_text;
    nlohmann::json extra = nlohmann::json::object();  // unknown keys, preserved verbatim

    bool operator==(const FeedbackMeta&) const = default;
};

struct StandardizedFeedback {
    std::int64_t feedback_id = 0;
    std::vector<Target> targets;
    FeedbackTypeTag type_tag;
    FeedbackContent content = NoContent{};
    FeedbackMeta meta;

    bool operator==(const StandardizedFeedback&) const = default;
};

// ---------------------------------------------------------------------------
// Encoding

/// Violations of the record's structural invariants (those that need no
/// episode store). Empty means the record may be serialized.
std::vector<std::string> structural_violations(const StandardizedFeedback& fb);

/// Number of transitions of a stored episode, or nullopt when unknown.
using EpisodeLengthLookup = std::function<std::optional<int>(const EpisodeId&)>;

/// All violations, including dangling references and out-of-range steps.
/// Targets with origin "generated" are exempt from the existence check.
std::vector<std::string> validate_feedback(const StandardizedFeedback& fb, const EpisodeLengthLookup& lengths);
std::vector<std::string> validate_feedback(const StandardizedFeedback& fb, const std::map<EpisodeId, int>& lengths);

/// One-line record (no trailing newline). Throws InvariantViolation.
std::string serialize_feedback(const StandardizedFeedback& fb);

/// Inverse of serialize_feedback. Throws ParseError or SchemaVersionError.
StandardizedFeedback parse_feedback(std::string_view raw);

nlohmann::json to_json(const EpisodeId& id);
EpisodeId episode_id_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Target& t);
Target target_from_json(const nlohmann::json& j);
nlohmann::json to_json(const StandardizedFeedback& fb);
StandardizedFeedback feedback_from_json(const nlohmann::json& j);

}  // namespace hfkit
