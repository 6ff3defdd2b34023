#pragma once

// Experiment backend: configuration, sessions, sample serving, feedback
// ingestion into the append-only log, training and quality metrics.
//
// Store layout (root from HFKIT_STORE_DIR):
//   experiments/<id>/config.json    experiment configuration
//   experiments/<id>/feedback.log   one serialized record per line, feedback_id = line number
//   experiments/<id>/models/        <snapshot>.hfrm checkpoints and <snapshot>.json metrics
// Training appends "snapshot-rollout" episodes to the main buffer.
// Relative buffer paths in a config resolve against the store root.
//
// Every accepted record carries extra.service = {phase, calibration}.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "hfkit/analysis.hpp"
#include "hfkit/config.hpp"
#include "hfkit/episode_buffer.hpp"
#include "hfkit/reward_model.hpp"
#include "hfkit/sampler.hpp"
#include "hfkit/translator.hpp"

namespace hfkit {

struct ServiceOptions {
    std::filesystem::path store_dir;
    std::function<std::int64_t()> clock;  // milliseconds; system clock when empty

    /// store_dir from HFKIT_STORE_DIR, default "./hfkit-store".
    static ServiceOptions from_env();
};

struct SessionState {
    std::string session_id;
    std::string user_id;
    std::string experiment_id;
    SamplerState sampler;
    std::set<EpisodeId> served;
    std::int64_t feedback_count = 0;  // records in the log for this session
    std::size_t phase = 0;            // schedule transitions fired so far
    std::int64_t last_clock_ms = 0;
};

nlohmann::json to_json(const SessionState& s);

struct ServedSample {
    EpisodeId id;
    SampleSource source = SampleSource::main;
    nlohmann::json render;
};

/// Result for one submitted event: the new record ids, or the error.
struct SubmitOutcome {
    std::vector<std::int64_t> feedback_ids;
    std::string error_code;
    std::string error_field;
    std::string error_message;

    bool ok() const { return error_code.empty(); }
};

nlohmann::json to_json(const SubmitOutcome& o);

struct TrainingOutcome {
    std::string snapshot_id;
    std::map<std::string, double> losses;  // final logged per-type losses
    ModelEvaluation evaluation;
    std::size_t records = 0;
    std::size_t items = 0;
    std::uint32_t log_crc32 = 0;
    std::vector<TrainLogEntry> log;
    std::vector<EpisodeId> minted;  // snapshot-rollout episodes added to the main buffer
};

nlohmann::json to_json(const TrainingOutcome& t);

/// Layout plus per-step agent positions for client-side playback.
nlohmann::json render_payload(const EpisodeRecord& ep, const GridSpec& spec);

class FeedbackService {
public:
    /// Loads every experiment already in the store.
    explicit FeedbackService(ServiceOptions options);
    ~FeedbackService();
    FeedbackService(const FeedbackService&) = delete;
    FeedbackService& operator=(const FeedbackService&) = delete;

    /// Throws ValidationError (field path) or Conflict.
    std::string create_experiment(const ExperimentConfig& config);
    ExperimentConfig experiment(const std::string& experiment_id) const;
    std::vector<std::string> experiments() const;

    /// Anonymous token generated when `user_id` is empty. Throws NotFound.
    SessionState create_session(const std::string& experiment_id, const std::string& user_id = {});
    SessionState session(const std::string& session_id) const;

    /// Throws SessionNotFound, Exhausted, ModelRequired.
    std::vector<ServedSample> next_samples(const std::string& session_id, int k);

    /// Translate, validate and append each event independently. Throws
    /// SessionNotFound; per-event failures are reported positionally.
    std::vector<SubmitOutcome> submit_feedback(const std::string& session_id, const std::vector<RawFeedbackEvent>& events);

    /// Trains on the whole log and publishes an immutable snapshot, then adds
    /// episodes of an epsilon-greedy (0.1) policy planned on the learned
    /// reward to the main buffer. Throws NotFound or EmptyDataset.
    TrainingOutcome run_training(const std::string& experiment_id);
    nlohmann::json metrics(const std::string& experiment_id) const;

    /// Throws SessionNotFound or InsufficientData.
    QualityEstimate quality_estimate(const std::string& session_id) const;

    /// Byte-exact log. Throws NotFound.
    std::string export_log(const std::string& experiment_id) const;

    /// Throws NotFound.
    nlohmann::json render_episode(const std::string& experiment_id, const EpisodeId& id) const;

    /// Snapshot checkpoint path. Throws NotFound.
    std::filesystem::path snapshot_path(const std::string& experiment_id, const std::string& snapshot_id) const;
    std::filesystem::path log_path(const std::string& experiment_id) const;
    const std::filesystem::path& store_dir() const { return options_.store_dir; }

    struct Experiment;
    struct Session;

private:
    std::int64_t now() const;
    Experiment& find_experiment(const std::string& id) const;
    Session& find_session(const std::string& id) const;
    std::shared_ptr<EpisodeBuffer> open_buffer(const std::string& path);
    std::unique_ptr<Experiment> load_experiment(const ExperimentConfig& config);

    ServiceOptions options_;
    mutable std::shared_mutex experiments_mutex_;
    std::map<std::string, std::unique_ptr<Experiment>> experiments_;
    mutable std::shared_mutex sessions_mutex_;
    std::map<std::string, std::unique_ptr<Session>> sessions_;
    std::mutex buffers_mutex_;
    std::map<std::filesystem::path, std::shared_ptr<EpisodeBuffer>> buffers_;  // one writer per store path
    std::uint64_t session_counter_ = 0;
};

}  // namespace hfkit
