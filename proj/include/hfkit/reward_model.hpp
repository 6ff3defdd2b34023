#pragma once

// Trainable state-reward functions with one loss term per feedback type.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "hfkit/episode_buffer.hpp"
#include "hfkit/feedback.hpp"
#include "hfkit/gridworld.hpp"
#include "hfkit/sampler.hpp"

namespace hfkit {

// ---------------------------------------------------------------------------
// Features

struct FeatureMap {
    enum class Kind { onehot_cell, cell_plus_local_window } kind = Kind::onehot_cell;
    int radius = 1;  // local window half-width
    int width = 0;
    int height = 0;

    bool operator==(const FeatureMap&) const = default;

    static FeatureMap onehot(const GridSpec& spec) { return {Kind::onehot_cell, 1, spec.width, spec.height}; }
    static FeatureMap local_window(const GridSpec& spec, int radius) {
        return {Kind::cell_plus_local_window, radius, spec.width, spec.height};
    }

    /// width*height, plus 3*(2r+1)^2 wall/lava/goal indicators for the window.
    int dimension() const;
    /// Feature matrix, one row per cell in GridSpec::index order.
    Eigen::MatrixXd matrix(const GridSpec& spec) const;
};

std::string_view to_string(FeatureMap::Kind k);

// ---------------------------------------------------------------------------
// Model

struct RewardModel {
    enum class Kind { linear, mlp } kind = Kind::linear;
    FeatureMap features;
    int hidden = 0;           // mlp width
    Eigen::VectorXd params;   // linear: theta (d); mlp: W1 (h x d, column-major), b1 (h), w2 (h), b2

    bool operator==(const RewardModel&) const = default;

    int input_dim() const { return features.dimension(); }
    static Eigen::Index param_count(Kind kind, int d, int h) { return kind == Kind::linear ? d : d * h + 2 * h + 1; }
};

std::string_view to_string(RewardModel::Kind k);

/// Zero parameters for linear; small seeded weights for mlp.
RewardModel make_linear_model(const FeatureMap& features);
RewardModel make_mlp_model(const FeatureMap& features, int hidden, std::uint64_t seed);

/// Predicted reward of entering each cell, in GridSpec::index order.
Eigen::VectorXd predict_cells(const RewardModel& model, const Eigen::MatrixXd& feature_matrix);
double predict(const RewardModel& model, const GridSpec& spec, Cell c);

/// Backpropagates dL/dr (one entry per cell) to dL/dparams.
Eigen::VectorXd backprop_cells(const RewardModel& model, const Eigen::MatrixXd& feature_matrix,
                               const Eigen::VectorXd& d_rewards);

// ---------------------------------------------------------------------------
// Training items: feedback resolved to reward-bearing cells

struct EvaluativeItem {
    std::vector<int> cells;  // cell indices, one per step
    double score = 0.0;
    std::set<EpisodeId> touches;
};

struct PreferenceItem {
    std::vector<int> winner;
    std::vector<int> loser;
    std::set<EpisodeId> touches;
};

struct DemonstrationItem {
    std::vector<int> cells;
    double optimality = 1.0;
    std::set<EpisodeId> touches;
};

struct DescriptiveItem {
    int on = 0;        // masked cell
    int baseline = 0;  // nearest unmasked floor cell
    double importance = 1.0;
    std::set<EpisodeId> touches;
};

/// Instructive data: demonstrations plus corrections converted to preferences.
struct InstructiveItems {
    std::vector<DemonstrationItem> demonstrations;
    std::vector<PreferenceItem> corrections;
};

struct TrainingSet {
    std::vector<EvaluativeItem> evaluative;
    std::vector<PreferenceItem> comparative;
    InstructiveItems instructive;
    std::vector<DescriptiveItem> descriptive;
    std::size_t skipped = 0;  // records carrying no trainable signal

    std::size_t size() const {
        return evaluative.size() + comparative.size() + instructive.demonstrations.size() +
               instructive.corrections.size() + descriptive.size();
    }
};

/// Reward-bearing cells of a target (states entered by its transitions).
std::vector<int> target_cells(const Target& target, const EpisodeCatalog& episodes, const GridSpec& spec);

/// Nearest floor cell outside `mask` (Manhattan distance, ties to the lower index).
int nearest_unmasked_floor(const GridSpec& spec, Cell c, const std::set<Cell>& mask);

/// Per-kind builders; each throws WrongKind on a record of another kind.
std::vector<EvaluativeItem> evaluative_items(const std::vector<StandardizedFeedback>& records,
                                             const EpisodeCatalog& episodes, const GridSpec& spec);
std::vector<PreferenceItem> comparative_items(const std::vector<StandardizedFeedback>& records,
                                              const EpisodeCatalog& episodes, const GridSpec& spec);
InstructiveItems instructive_items(const std::vector<StandardizedFeedback>& records, const EpisodeCatalog& episodes,
                                   const GridSpec& spec);
std::vector<DescriptiveItem> descriptive_items(const std::vector<StandardizedFeedback>& records, const GridSpec& spec);

/// Routes every record to its bucket.
TrainingSet assemble_training_set(const std::vector<StandardizedFeedback>& records, const EpisodeCatalog& episodes,
                                  const GridSpec& spec);

// ---------------------------------------------------------------------------
// Losses over per-cell rewards r. Each returns the loss and dL/dr.

struct CellLoss {
    double value = 0.0;
    Eigen::VectorXd grad;  // d loss / d r, one entry per cell
};

CellLoss loss_evaluative(const Eigen::VectorXd& r, const std::vector<EvaluativeItem>& items);
CellLoss loss_comparative(const Eigen::VectorXd& r, const std::vector<PreferenceItem>& items);
CellLoss loss_instructive(const Eigen::VectorXd& r, const InstructiveItems& items);
CellLoss loss_descriptive(const Eigen::VectorXd& r, const std::vector<DescriptiveItem>& items, double margin = 0.1);

/// Loss value and parameter gradient.
struct ParamLoss {
    double value = 0.0;
    Eigen::VectorXd grad;
};

ParamLoss to_params(const RewardModel& model, const Eigen::MatrixXd& feature_matrix, const CellLoss& loss);

// ---------------------------------------------------------------------------
// Training

struct LossWeights {
    double evaluative = 1.0;
    double comparative = 1.0;
    double instructive = 1.0;
    double descriptive = 1.0;

    bool operator==(const LossWeights&) const = default;
};

struct TrainOptions {
    double lr = 0.1;
    int steps = 2000;
    int batch = 0;  // items per loss type per step; 0 means full batch
    std::uint64_t seed = 0;
    double l2 = 1e-4;
    double margin = 0.1;
    int log_every = 10;

    bool operator==(const TrainOptions&) const = default;
};

struct TrainLogEntry {
    int step = 0;
    std::map<std::string, double> losses;  // only types with positive weight and data
    double total = 0.0;                    // weighted objective including the l2 term
    double lr = 0.0;

    bool operator==(const TrainLogEntry&) const = default;
};

struct TrainResult {
    RewardModel model;
    std::vector<TrainLogEntry> log;
};

/// Minibatch gradient descent on sum_t w_t loss_t + l2 |params|^2. The
/// learning rate halves whenever the logged full-data objective rises.
/// Throws EmptyDataset.
TrainResult train(const RewardModel& init, const TrainingSet& data, const GridSpec& spec, const LossWeights& weights,
                  const TrainOptions& opts);

/// Full-data per-type losses (types with no data are omitted).
std::map<std::string, double> evaluate_losses(const RewardModel& model, const TrainingSet& data, const GridSpec& spec,
                                              double margin = 0.1);

nlohmann::json to_json(const TrainLogEntry& e);

// ---------------------------------------------------------------------------
// Aggregation and per-episode loss

enum class AggregateMode { weighting, voting };

/// Weighted mean of the models' predictions, or (voting) the weighted mean of
/// the models on the majority side of the sign of their z-scored predictions.
/// Throws LengthMismatch.
double aggregate(const std::vector<RewardModel>& models, const std::vector<double>& weights, const GridSpec& spec,
                 Cell c, AggregateMode mode = AggregateMode::weighting);

/// Mean loss over the items touching `id`; untouched episodes get the
/// ensemble variance of their mean per-step prediction, or 0 with the
/// cold-start flag when no ensemble is given. Throws NotFound.
EpisodeLoss per_episode_loss(const RewardModel& model, const EpisodeId& id, const TrainingSet& data,
                             const EpisodeCatalog& episodes, const GridSpec& spec,
                             const std::vector<RewardModel>& ensemble = {}, double margin = 0.1);

// ---------------------------------------------------------------------------
// Checkpoints: "HFRM" magic, u32 version, u32 model kind, u32 feature kind,
// i32 radius, i32 width, i32 height, i32 hidden, u64 count, count f64 params
// (all little-endian).

void save_checkpoint(const RewardModel& model, const std::filesystem::path& path);
RewardModel load_checkpoint(const std::filesystem::path& path);

}  // namespace hfkit
