#pragma once

// Offline simulation experiments driven through the full event pipeline:
// simulated annotator -> translator -> standardized records -> analysis.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "hfkit/analysis.hpp"
#include "hfkit/annotator.hpp"
#include "hfkit/config.hpp"
#include "hfkit/episode_buffer.hpp"
#include "hfkit/gridworld.hpp"
#include "hfkit/reward_model.hpp"

namespace hfkit {

/// Rollouts from eight behavior policies (epsilon 0, 0.1, 0.3, 0.5, 1 and
/// Boltzmann 1, 5, 20 over Q*), `per_policy` episodes each.
std::vector<EpisodeRecord> mixed_rollouts(const GridSpec& spec, const ValueTable& q_star, int per_policy,
                                          std::uint64_t seed);

/// Segments [a, b) for every start a and b in {a+1, ..., a+max_len-1} plus the
/// episode end, reduced to one representative per distinct return (rounded
/// to 1e-10), in ascending order of return.
struct SegmentPool {
    std::vector<Segment> segments;
    std::vector<double> returns;
};
SegmentPool segment_pool(const std::vector<EpisodeRecord>& episodes, int max_len = 12);

/// Episode store plus the environment every simulation runs in.
struct SimulationWorld {
    GridSpec spec;
    ValueTable q_star;
    std::shared_ptr<EpisodeBuffer> buffer;
    EpisodeCatalog catalog;
    std::vector<EpisodeRecord> episodes;
    SegmentPool pool;
    ExperimentConfig config;  // all feedback types enabled, continuous rating scale
};

/// Creates (or reuses) the store in `dir` holding mixed rollouts.
SimulationWorld make_world(const std::filesystem::path& dir, const std::string& env = "default-8x8",
                           int per_policy = 40, std::uint64_t seed = 7);

/// Writes mixed rollouts into the episode store at `dir` under `source_kind`
/// ids and closes it. Returns the number of episodes written.
std::size_t write_rollout_store(const std::filesystem::path& dir, const std::string& env, int per_policy,
                                std::uint64_t seed, const std::string& source_kind = "policy-rollout");

/// Translates one event; throws whatever translation throws.
std::vector<StandardizedFeedback> translate_event(const RawFeedbackEvent& ev, SimulationWorld& world);

// ---------------------------------------------------------------------------
// Rationality recovery

struct CalibrationDesign {
    int choices = 2000;
    int rounds = 10;            // pairs are re-targeted after each round
    double initial_beta = 1.0;  // beta guess targeted by the first round
    int candidates = 64;
};

struct RecoveryRun {
    double beta_true = 0.0;
    RationalityEstimate estimate;
    bool within_tolerance = false;  // |beta_hat - beta| <= 10% of beta
    bool within_3se = false;
};

/// Pairwise calibration choices on pool segments by an annotator of
/// rationality `beta`, pairs targeted at the informative gap of the current
/// estimate. Each event is translated and refitted from the records.
RecoveryRun simulate_beta_recovery(SimulationWorld& world, double beta, std::uint64_t seed,
                                   const CalibrationDesign& design = {});

/// Records of one adaptive calibration run under the given context label.
std::vector<StandardizedFeedback> simulate_calibration_records(SimulationWorld& world, double beta,
                                                               const std::map<std::string, std::string>& context,
                                                               std::size_t phase, std::uint64_t seed,
                                                               const CalibrationDesign& design = {});

struct FactorialResult {
    BetaReport report;
    std::map<std::string, std::map<std::string, double>> truth;  // dependency -> value -> beta
    std::map<std::string, std::map<std::string, double>> relative_error;
    bool within_tolerance = false;
};

/// Full factorial over type x progress with additive per-dependency betas
/// and alpha = 1/2; each cell annotated at sum_d alpha_d beta_d.
FactorialResult simulate_factorial(SimulationWorld& world, const std::map<std::string, double>& beta_type,
                                   const std::map<std::string, double>& beta_progress, int obs_per_cell,
                                   std::uint64_t seed, double tolerance = 0.15);

// ---------------------------------------------------------------------------
// Reward learning

struct RewardLearningOptions {
    int pairs = 5000;
    double beta = 5.0;
    int max_segment = 12;
    TrainOptions train;
    std::uint64_t seed = 1;

    RewardLearningOptions() {
        train.steps = 1000;
        train.lr = 1.0;
    }
};

struct RewardLearningResult {
    RewardModel model;
    ModelEvaluation evaluation;
    std::size_t records = 0;
    std::size_t pairs = 0;
};

/// Random segment pairs ranked by a pairwise annotator, translated and used
/// to train a linear one-hot reward model.
RewardLearningResult simulate_reward_learning(SimulationWorld& world, const RewardLearningOptions& options = {});

}  // namespace hfkit
