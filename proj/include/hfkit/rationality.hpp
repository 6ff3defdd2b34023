#pragma once

// Boltzmann-rational choice model, maximum-likelihood rationality estimates
// and their decomposition over dependencies.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "hfkit/errors.hpp"
#include "hfkit/sampler.hpp"

namespace hfkit {

inline constexpr double kBetaMax = 100.0;

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& z) {
    using Scalar = typename Derived::Scalar;
    if (z.size() == 0) return -std::numeric_limits<Scalar>::infinity();
    const Scalar m = z.maxCoeff();
    return m + std::log((z.array() - m).exp().sum());
}

/// p_i = exp(beta u_i) / sum_j exp(beta u_j).
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> boltzmann_prob(const Eigen::MatrixBase<Derived>& utilities,
                                                                         typename Derived::Scalar beta) {
    using Scalar = typename Derived::Scalar;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> z = beta * utilities.derived().template cast<Scalar>();
    const Scalar lse = log_sum_exp(z);
    return (z.array() - lse).exp().matrix();
}

inline Eigen::VectorXd boltzmann_prob(const std::vector<double>& utilities, double beta) {
    return boltzmann_prob(Eigen::Map<const Eigen::VectorXd>(utilities.data(), static_cast<Eigen::Index>(utilities.size())),
                          beta);
}

// ---------------------------------------------------------------------------
// Estimation

enum class UtilityNormalization { raw, zscore_within_set };
std::string_view to_string(UtilityNormalization n);

/// Dependency values of a choice; keys are "type", "task" and "progress".
using ChoiceContext = std::map<std::string, std::string>;

struct ChoiceObservation {
    std::vector<double> utilities;
    int chosen = 0;
    ChoiceContext context;
    std::string user_id;
};

struct RationalityEstimate {
    double beta_hat = 0.0;
    double stderr_ = 0.0;  // inf when the likelihood is flat or saturated
    std::int64_t n_obs = 0;
    bool saturated = false;  // clamped to a bound
    UtilityNormalization normalization = UtilityNormalization::raw;
    ChoiceContext slice;
};

/// Log-likelihood of beta and its first two derivatives.
struct LikelihoodPoint {
    double value = 0.0;
    double d1 = 0.0;
    double d2 = 0.0;
};
LikelihoodPoint choice_log_likelihood(const std::vector<ChoiceObservation>& obs, double beta,
                                      UtilityNormalization normalization = UtilityNormalization::raw);

/// Maximizes the concave log-likelihood by bisection on its derivative over
/// [0, beta_max] to 1e-8. Throws TooFewObservations or Degenerate.
RationalityEstimate fit_beta(const std::vector<ChoiceObservation>& obs, double beta_max = kBetaMax,
                             UtilityNormalization normalization = UtilityNormalization::raw);

// ---------------------------------------------------------------------------
// Decomposition

struct SliceEstimate {
    ChoiceContext slice;
    RationalityEstimate estimate;
};

struct BetaDecomposition {
    std::vector<std::string> dependencies;                        // K entries
    std::map<std::string, double> alpha;                          // per dependency
    std::map<std::string, std::map<std::string, double>> beta_d;  // dependency -> value -> beta
    std::map<std::string, std::map<std::string, double>> marginal; // n_obs-weighted marginal means
    double grand_mean = 0.0;

    std::size_t k() const { return dependencies.size(); }
    /// sum_d alpha_d beta_d(ctx_d). Throws MissingSlice for unknown values.
    double predict(const ChoiceContext& ctx) const;
};

/// Marginalizes slice estimates per dependency value (weighted by n_obs) and
/// removes the other dependencies' contribution under the gauge that every
/// dependency has the same mean. Uniform alpha = 1/K when `alpha` is empty.
/// Throws MissingSlice when the slices do not cover the full factorial.
BetaDecomposition decompose_beta(const std::vector<SliceEstimate>& estimates, const std::vector<std::string>& dependencies,
                                 const std::map<std::string, double>& alpha = {});

// ---------------------------------------------------------------------------
// Calibration design

struct CalibrationPhase {
    std::int64_t after_feedback = 0;  // main-task feedback preceding the phase
    std::int64_t items = 0;           // feedback collected in the phase
    enum class Kind { calibration, repeat } kind = Kind::calibration;

    bool operator==(const CalibrationPhase&) const = default;
};

struct CalibrationSettings {
    std::int64_t initial_items = 0;  // initial calibration phase length, 0 for none
    std::vector<CalibrationPhase> phases;
    double rho = 0.0;                // calibration mix-in rate during main sampling
    std::uint64_t seed = 0;

    bool operator==(const CalibrationSettings&) const = default;
};

/// State-machine schedule alternating calibration and main sampling. `main`
/// is the main-task mode used between phases (interleaved when rho > 0).
/// Throws ConfigError.
SamplerSchedule calibration_schedule(const CalibrationSettings& settings, const ModeSpec& main, bool has_calibration_buffer);

nlohmann::json to_json(const CalibrationSettings& s);
CalibrationSettings calibration_settings_from_json(const nlohmann::json& j);

/// Picks `m` index pairs from `pool` (utilities) whose gap is close, on a log
/// scale, to `target_gap`, scanning `candidates` random partners per pair.
std::vector<std::pair<std::size_t, std::size_t>> select_calibration_pairs(const std::vector<double>& pool, int m,
                                                                          double target_gap, std::mt19937_64& rng,
                                                                          int candidates = 64);

/// Information-maximizing utility gap for a pairwise logistic choice.
inline double informative_gap(double beta_hat) { return 2.4 / std::max(beta_hat, 0.05); }

// ---------------------------------------------------------------------------
// Consistency

struct RepeatSet {
    std::string key;  // target identity
    enum class Kind { evaluative, comparative } kind = Kind::evaluative;
    std::vector<double> values;  // scores in [-1,1], or +-1 preference outcomes
};

/// Mean agreement over all pairs of repeated answers: 1 - |a-b|/2 for
/// scores, 1 if equal else 0 for preference outcomes. Throws NoRepeats.
double consistency_score(const std::vector<RepeatSet>& repeats);

}  // namespace hfkit
