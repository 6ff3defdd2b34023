#pragma once

// Synthetic Boltzmann-rational annotators emitting raw UI events.
//
// Every event carries extra.effective_beta (type beta times the phase
// multiplier), extra.phase and extra.simulated = true.

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "hfkit/config.hpp"
#include "hfkit/episode_buffer.hpp"
#include "hfkit/gridworld.hpp"
#include "hfkit/translator.hpp"

namespace hfkit {

struct LatencyModel {
    double mean_ms = 1500.0;
    double jitter_ms = 500.0;  // standard deviation

    bool operator==(const LatencyModel&) const = default;
};

struct AnnotatorProfile {
    std::map<FeedbackKind, double> beta_by_type;  // missing types use beta 1
    std::vector<double> beta_progress_modifier;   // per-phase multipliers; the last one persists
    std::uint64_t rng_seed = 0;
    LatencyModel latency;
    std::string user_id = "simulated";
    std::string session_id = "simulated-session";
    std::int64_t start_time_ms = 1700000000000;

    bool operator==(const AnnotatorProfile&) const = default;

    double effective_beta(FeedbackKind kind, std::size_t phase) const;
};

/// Throws ConfigError on negative betas or non-positive multipliers.
void validate_profile(const AnnotatorProfile& p);
nlohmann::json to_json(const AnnotatorProfile& p);
AnnotatorProfile annotator_profile_from_json(const nlohmann::json& j);

/// Segment score normalized to [-1, 1] from the mean per-step reward.
double normalized_score(const GridSpec& spec, const std::vector<double>& rewards);

class SimulatedAnnotator {
public:
    SimulatedAnnotator(AnnotatorProfile profile, GridSpec spec, RatingScale scale = {});

    const AnnotatorProfile& profile() const { return profile_; }
    void set_phase(std::size_t phase) { phase_ = phase; }
    std::size_t phase() const { return phase_; }
    /// Overrides session and user identity for subsequent events.
    void set_identity(std::string session_id, std::string user_id);

    /// Ranking event, best first, sampled by successive Boltzmann choices
    /// over ground-truth returns. Episode targets for records, segment
    /// targets for segments.
    RawFeedbackEvent annotate_comparative(const std::vector<EpisodeRecord>& options);
    RawFeedbackEvent annotate_comparative(const std::vector<Segment>& options);

    /// Rating of the normalized ground-truth score plus N(0, 1/(1+beta)),
    /// clamped and mapped to the rating scale (rounded to its steps).
    RawFeedbackEvent annotate_evaluative(const EpisodeRecord& episode);
    RawFeedbackEvent annotate_evaluative(const Segment& segment);

    /// Replacement action at `step` sampled from exp(beta Q*); nullopt when it
    /// equals the logged action.
    std::optional<RawFeedbackEvent> annotate_corrective(const EpisodeRecord& episode, int step, const ValueTable& q_star);

    /// Full Boltzmann-policy episode from the start cell.
    RawFeedbackEvent annotate_demonstrative(const ValueTable& q_star);

    /// Brush events for goal (+1) and lava (-1) cells, each included with
    /// probability beta/(1+beta); other floor cells are included with
    /// probability 1/(4(1+beta)) under a random sign. Empty masks emit nothing.
    std::vector<RawFeedbackEvent> annotate_descriptive(const Target& target);

    std::mt19937_64& rng() { return rng_; }

private:
    RawFeedbackEvent base_event(RawEventKind kind, FeedbackKind type, std::string ui_element);
    RawFeedbackEvent rating_event(const Target& target, const std::vector<double>& rewards);

    AnnotatorProfile profile_;
    GridSpec spec_;
    RatingScale scale_;
    std::size_t phase_ = 0;
    std::int64_t clock_ms_ = 0;
    std::mt19937_64 rng_;
};

}  // namespace hfkit
