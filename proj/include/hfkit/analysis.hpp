#pragma once

// Offline analysis of exported feedback logs: rationality estimates and
// their decomposition, repeat consistency, per-user quality and reward-model
// evaluation against the ground-truth optimal values.
//
// Record metadata consulted (all optional):
//   extra.service.calibration  true when the item came from the calibration buffer
//   extra.service.phase        session phase assigned by the service
//   extra.calibration          calibration flag set by offline simulations
//   extra.phase                annotator phase, used when no service phase exists
//   extra.context              {type?, task?, progress?} overriding the derived context

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "hfkit/config.hpp"
#include "hfkit/episode_buffer.hpp"
#include "hfkit/feedback.hpp"
#include "hfkit/gridworld.hpp"
#include "hfkit/rationality.hpp"
#include "hfkit/reward_model.hpp"

namespace hfkit {

// ---------------------------------------------------------------------------
// Logs

struct LogSnapshot {
    std::vector<StandardizedFeedback> records;
    std::uint32_t crc32 = 0;  // over the complete lines
    std::size_t bytes = 0;    // length of the complete lines
};

/// Parses every complete line; a trailing partial line is ignored. Throws
/// ParseError (position is the byte offset of the line) on a bad line.
LogSnapshot parse_log(std::string_view text);
/// Throws NotFound when the file is missing.
LogSnapshot read_log(const std::filesystem::path& path);

std::uint32_t crc32_of(std::string_view bytes);
/// Checksum of the canonical JSON form of the config.
std::uint32_t config_hash(const ExperimentConfig& config);

/// Feedback type a record was translated from; nullopt for records no
/// interaction produces.
std::optional<FeedbackKind> feedback_kind_of(const StandardizedFeedback& fb);

bool is_calibration(const StandardizedFeedback& fb);
/// "type", "task" and "progress" of a record.
ChoiceContext record_context(const StandardizedFeedback& fb);

// ---------------------------------------------------------------------------
// Statistics

/// Spearman rank correlation with average ranks for ties; 0 when either
/// side is constant. Throws LengthMismatch.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

/// Ground-truth return of the target's transitions. Throws UnknownTargets
/// or RangeError.
double target_return(const Target& target, const EpisodeCatalog& episodes);

// ---------------------------------------------------------------------------
// Rationality

/// One observation per choice stage of each ranking: the best remaining
/// target among the remaining ones, utilities from ground-truth returns.
/// Stages whose best rank is tied are skipped.
std::vector<ChoiceObservation> choice_observations(const std::vector<StandardizedFeedback>& records,
                                                   const EpisodeCatalog& episodes, bool calibration_only = true);

struct BetaReport {
    std::vector<SliceEstimate> slices;
    std::map<std::string, std::string> skipped;  // slice label -> reason
    std::optional<BetaDecomposition> decomposition;
    std::string decomposition_error;  // set when the slices do not cover the full factorial
    std::int64_t n_obs = 0;
};

/// Fits beta per (type, task, progress) slice of the comparative calibration
/// records and decomposes over the dependencies that vary (type alone when
/// none does) with uniform alpha. Throws NoCalibrationData.
BetaReport beta_report(const std::vector<StandardizedFeedback>& records, const EpisodeCatalog& episodes);
BetaReport beta_report(const std::vector<ChoiceObservation>& observations);

std::string slice_label(const ChoiceContext& slice);
nlohmann::json to_json(const RationalityEstimate& e);
nlohmann::json to_json(const BetaReport& r);
std::string format_table(const BetaReport& r);

// ---------------------------------------------------------------------------
// Consistency

/// Repeated answers grouped by target: evaluative scores per target, and
/// comparative outcomes per unordered target pair (+1 when the pair's
/// lexicographically first target wins).
std::vector<RepeatSet> repeat_sets(const std::vector<StandardizedFeedback>& records);

struct UserConsistency {
    std::string user_id;
    std::optional<double> evaluative;
    std::optional<double> comparative;
    std::int64_t repeat_sets = 0;

    bool operator==(const UserConsistency&) const = default;
};

/// Users without repeats are omitted.
std::vector<UserConsistency> consistency_table(const std::vector<StandardizedFeedback>& records);
nlohmann::json to_json(const std::vector<UserConsistency>& table);
std::string format_table(const std::vector<UserConsistency>& table);

// ---------------------------------------------------------------------------
// Per-session quality

struct QualityEstimate {
    std::optional<double> correlation;  // Spearman of calibration ratings vs ground truth
    std::optional<RationalityEstimate> beta;
    std::optional<double> consistency;
    std::int64_t calibration_records = 0;
    std::int64_t repeat_sets = 0;
};

/// Metrics over the session's calibration records and repeats. Throws
/// InsufficientData when it has neither.
QualityEstimate quality_estimate(const std::vector<StandardizedFeedback>& records, const std::string& session_id,
                                 const EpisodeCatalog& episodes);
nlohmann::json to_json(const QualityEstimate& q);

// ---------------------------------------------------------------------------
// Reward-model evaluation

struct ModelEvaluation {
    double value_spearman = 0.0;   // optimal values under the learned reward vs V*, floor cells
    double reward_spearman = 0.0;  // predicted reward vs V*, floor cells
    double learned_return = 0.0;   // ground-truth return of the greedy policy planned on the learned reward
    double optimal_return = 0.0;
    double return_ratio = 0.0;
    std::size_t cells = 0;
};

ModelEvaluation evaluate_cell_rewards(const Eigen::VectorXd& cell_rewards, const GridSpec& spec);
ModelEvaluation evaluate_model(const RewardModel& model, const GridSpec& spec);
nlohmann::json to_json(const ModelEvaluation& m);
std::string format_table(const ModelEvaluation& m);

/// Records per feedback type.
std::map<std::string, std::int64_t> feedback_counts(const std::vector<StandardizedFeedback>& records);

}  // namespace hfkit
