#pragma once

// Experiment configuration file (JSON):
//
//   experiment_id           string, [A-Za-z0-9_.-]+
//   env                     fixture name or map file path
//   buffer                  episode store directory (relative paths resolve against the store root)
//   calibration_buffer      optional episode store with ground-truth-labeled calibration items
//   enabled_feedback_types  subset of evaluative, comparative, corrective, demonstrative, descriptive
//   rating_scale            {min, max, steps}; steps = 0 means continuous
//   comparison_slots        targets per ranking, >= 2 when comparative is enabled
//   demo_optimality         optimality attached to demonstrations, default 1.0
//   sampler                 {initial: mode, schedule: [{trigger: {feedback_count|elapsed_ms: n}, mode}]}
//                           mode = {mode: manual|random|progressive|query_based|interleaved|repeat,
//                                   seed, window, rho, source: main|calibration}
//   reward_model            {kind: linear|mlp, hidden, features: {kind: onehot_cell|cell_plus_local_window, radius},
//                            loss_weights: {evaluative, comparative, instructive, descriptive},
//                            optimizer: {lr, steps, batch, seed, l2, margin, log_every}}
//   calibration             {initial_items, rho, seed, phases: [{after_feedback, items, kind: calibration|repeat}]}
//   ui                      {show_quality_widget, instructions}

#include <array>
#include <optional>
#include <set>
#include <string>

#include <json.hpp>

#include "hfkit/rationality.hpp"
#include "hfkit/reward_model.hpp"
#include "hfkit/sampler.hpp"

namespace hfkit {

enum class FeedbackKind { evaluative, comparative, corrective, demonstrative, descriptive };
inline constexpr std::array<FeedbackKind, 5> kFeedbackKinds{FeedbackKind::evaluative, FeedbackKind::comparative,
                                                           FeedbackKind::corrective, FeedbackKind::demonstrative,
                                                           FeedbackKind::descriptive};
std::string_view to_string(FeedbackKind k);
FeedbackKind feedback_kind_from_string(std::string_view s);

struct RatingScale {
    double min = 1.0;
    double max = 5.0;
    int steps = 5;

    bool operator==(const RatingScale&) const = default;
};

struct RewardModelSettings {
    RewardModel::Kind kind = RewardModel::Kind::linear;
    int hidden = 32;
    FeatureMap::Kind features = FeatureMap::Kind::onehot_cell;
    int radius = 1;
    LossWeights weights;
    TrainOptions optimizer;

    bool operator==(const RewardModelSettings&) const = default;
};

struct UiOptions {
    bool show_quality_widget = false;
    std::string instructions;

    bool operator==(const UiOptions&) const = default;
};

struct ExperimentConfig {
    std::string experiment_id;
    std::string env = "default-8x8";
    std::string buffer;
    std::optional<std::string> calibration_buffer;
    std::set<FeedbackKind> enabled_feedback_types{FeedbackKind::comparative};
    RatingScale rating_scale;
    int comparison_slots = 2;
    double demo_optimality = 1.0;
    SamplerSchedule sampler;
    RewardModelSettings reward_model;
    CalibrationSettings calibration;
    UiOptions ui;

    bool operator==(const ExperimentConfig&) const = default;

    bool enabled(FeedbackKind k) const { return enabled_feedback_types.contains(k); }
    /// Schedule actually used: the calibration schedule wrapped around the
    /// configured sampler when calibration is configured, else the sampler.
    SamplerSchedule effective_schedule() const;
};

/// Field-level checks that need no filesystem. Throws ValidationError whose
/// message starts with the offending field path.
void validate_config(const ExperimentConfig& c);

nlohmann::json to_json(const ExperimentConfig& c);
/// Parses and validates. Throws ValidationError.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config_file(const std::string& path);

}  // namespace hfkit
