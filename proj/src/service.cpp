#include "hfkit/service.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

namespace hfkit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kMintedPerSnapshot = 4;

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw NotFound("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const fs::path& p, const std::string& text) {
    const fs::path tmp = p.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw InvalidState("cannot write " + tmp.string());
        out << text;
        out.flush();
        if (!out) throw InvalidState("cannot write " + tmp.string());
    }
    fs::rename(tmp, p);
}

std::string random_token(std::size_t bytes) {
    static thread_local std::mt19937_64 rng(std::random_device{}());
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (std::size_t i = 0; i < bytes; ++i) {
        const auto b = static_cast<unsigned>(rng() & 0xff);
        out += hex[b >> 4];
        out += hex[b & 15];
    }
    return out;
}

json cells_json(const std::set<Cell>& cells) {
    json out = json::array();
    for (const auto& c : cells) out.push_back({c.x, c.y});
    return out;
}

void write_all(int fd, const std::string& text) {
    std::size_t done = 0;
    while (done < text.size()) {
        const auto n = ::write(fd, text.data() + done, text.size() - done);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw InvalidState("log append failed");
        }
        done += static_cast<std::size_t>(n);
    }
}

}  // namespace

// ---------------------------------------------------------------------------

struct FeedbackService::Experiment {
    struct Snapshot {
        std::string id;
        RewardModel model;
        TrainingSet data;
        json metrics;
    };

    ExperimentConfig config;
    GridSpec spec;
    fs::path dir;
    std::shared_ptr<EpisodeBuffer> main;
    std::shared_ptr<EpisodeBuffer> calibration;
    EpisodeCatalog catalog;

    std::mutex log_mutex;
    int log_fd = -1;
    std::int64_t next_id = 0;

    mutable std::shared_mutex model_mutex;
    std::shared_ptr<const Snapshot> snapshot;
    std::mutex train_mutex;
    int snapshots = 0;

    ~Experiment() {
        if (log_fd >= 0) ::close(log_fd);
    }

    std::shared_ptr<const Snapshot> latest() const {
        std::shared_lock lock(model_mutex);
        return snapshot;
    }

    bool from_calibration(const EpisodeId& id) const {
        return calibration && catalog.owner(id) == calibration.get();
    }
};

struct FeedbackService::Session {
    std::mutex mutex;
    SessionState state;
};

ServiceOptions ServiceOptions::from_env() {
    ServiceOptions o;
    const char* dir = std::getenv("HFKIT_STORE_DIR");
    o.store_dir = dir != nullptr && *dir != '\0' ? fs::path(dir) : fs::path("hfkit-store");
    return o;
}

json to_json(const SessionState& s) {
    json served = json::array();
    for (const auto& id : s.served) served.push_back(id.key());
    return {{"session_id", s.session_id},
            {"user_id", s.user_id},
            {"experiment_id", s.experiment_id},
            {"mode", to_json(s.sampler.active)},
            {"served", served},
            {"feedback_count", s.feedback_count},
            {"phase", s.phase}};
}

json to_json(const SubmitOutcome& o) {
    if (o.ok()) return {{"feedback_ids", o.feedback_ids}};
    json err = {{"code", o.error_code}, {"message", o.error_message}};
    if (!o.error_field.empty()) err["field"] = o.error_field;
    return {{"error", err}};
}

json to_json(const TrainingOutcome& t) {
    json minted = json::array();
    for (const auto& id : t.minted) minted.push_back(id.key());
    json log = json::array();
    for (const auto& e : t.log) log.push_back(to_json(e));
    return {{"snapshot_id", t.snapshot_id},
            {"losses", t.losses},
            {"evaluation", to_json(t.evaluation)},
            {"records", t.records},
            {"items", t.items},
            {"log_crc32", t.log_crc32},
            {"train_log", log},
            {"minted", minted}};
}

json render_payload(const EpisodeRecord& ep, const GridSpec& spec) {
    json states = json::array(), actions = json::array();
    for (const auto& s : ep.states) states.push_back({s.agent.x, s.agent.y});
    for (auto a : ep.actions) actions.push_back(std::string(to_string(a)));
    return {{"id", to_json(ep.id)},
            {"key", ep.id.key()},
            {"grid",
             {{"name", spec.name},
              {"width", spec.width},
              {"height", spec.height},
              {"walls", cells_json(spec.walls)},
              {"lava", cells_json(spec.lava)},
              {"goal", {spec.goal.x, spec.goal.y}},
              {"start", {spec.start.x, spec.start.y}}}},
            {"steps", ep.length()},
            {"states", states},
            {"actions", actions},
            {"terminated", std::string(to_string(ep.terminated))}};
}

// ---------------------------------------------------------------------------

FeedbackService::FeedbackService(ServiceOptions options) : options_(std::move(options)) {
    fs::create_directories(options_.store_dir / "experiments");
    for (const auto& entry : fs::directory_iterator(options_.store_dir / "experiments")) {
        const auto cfg = entry.path() / "config.json";
        if (!entry.is_directory() || !fs::exists(cfg)) continue;
        auto config = config_from_json(json::parse(read_file(cfg)));
        experiments_[config.experiment_id] = load_experiment(config);
    }
}

FeedbackService::~FeedbackService() = default;

std::int64_t FeedbackService::now() const {
    if (options_.clock) return options_.clock();
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

std::shared_ptr<EpisodeBuffer> FeedbackService::open_buffer(const std::string& path) {
    fs::path p(path);
    if (p.is_relative()) p = options_.store_dir / p;
    if (!fs::exists(p / "episodes.log")) throw ValidationError("buffer", "no episode store at " + p.string());
    const auto key = fs::weakly_canonical(p);
    std::lock_guard lock(buffers_mutex_);
    auto it = buffers_.find(key);
    if (it != buffers_.end()) return it->second;
    auto buffer = EpisodeBuffer::open(key);
    buffers_[key] = buffer;
    return buffer;
}

std::unique_ptr<FeedbackService::Experiment> FeedbackService::load_experiment(const ExperimentConfig& config) {
    auto ex = std::make_unique<Experiment>();
    ex->config = config;
    try {
        ex->spec = resolve_environment(config.env);
    } catch (const Error& e) {
        throw ValidationError("env", e.what());
    }
    ex->dir = options_.store_dir / "experiments" / config.experiment_id;
    ex->main = open_buffer(config.buffer);
    ex->catalog.add(ex->main);
    if (config.calibration_buffer) {
        try {
            ex->calibration = open_buffer(*config.calibration_buffer);
        } catch (const ValidationError& e) {
            throw ValidationError("calibration_buffer", e.what());
        }
        if (ex->calibration != ex->main) ex->catalog.add(ex->calibration);
    }

    fs::create_directories(ex->dir / "models");
    const auto log = ex->dir / "feedback.log";
    if (fs::exists(log)) {
        const auto text = read_file(log);
        const auto complete = text.rfind('\n') == std::string::npos ? 0 : text.rfind('\n') + 1;
        if (complete != text.size()) {
            std::cerr << "warning: dropping " << text.size() - complete << " bytes of a partial record in " << log << "\n";
            fs::resize_file(log, complete);
        }
        ex->next_id = static_cast<std::int64_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(complete), '\n'));
    }
    ex->log_fd = ::open(log.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
    if (ex->log_fd < 0) throw InvalidState("cannot open " + log.string());

    std::vector<fs::path> checkpoints;
    for (const auto& entry : fs::directory_iterator(ex->dir / "models"))
        if (entry.path().extension() == ".hfrm") checkpoints.push_back(entry.path());
    std::sort(checkpoints.begin(), checkpoints.end());
    ex->snapshots = static_cast<int>(checkpoints.size());
    if (!checkpoints.empty()) {
        auto snap = std::make_shared<Experiment::Snapshot>();
        snap->id = checkpoints.back().stem().string();
        snap->model = load_checkpoint(checkpoints.back());
        const auto metrics_path = ex->dir / "models" / (snap->id + ".json");
        if (fs::exists(metrics_path)) snap->metrics = json::parse(read_file(metrics_path));
        snap->data = assemble_training_set(parse_log(read_file(log)).records, ex->catalog, ex->spec);
        ex->snapshot = std::move(snap);
    }
    return ex;
}

std::string FeedbackService::create_experiment(const ExperimentConfig& config) {
    validate_config(config);
    std::unique_lock lock(experiments_mutex_);
    if (experiments_.contains(config.experiment_id) ||
        fs::exists(options_.store_dir / "experiments" / config.experiment_id))
        throw Conflict("experiment " + config.experiment_id + " already exists");
    auto ex = load_experiment(config);
    write_file_atomic(ex->dir / "config.json", to_json(config).dump(2) + "\n");
    experiments_[config.experiment_id] = std::move(ex);
    return config.experiment_id;
}

FeedbackService::Experiment& FeedbackService::find_experiment(const std::string& id) const {
    std::shared_lock lock(experiments_mutex_);
    auto it = experiments_.find(id);
    if (it == experiments_.end()) throw NotFound("no experiment " + id);
    return *it->second;
}

FeedbackService::Session& FeedbackService::find_session(const std::string& id) const {
    std::shared_lock lock(sessions_mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw SessionNotFound("no session " + id);
    return *it->second;
}

ExperimentConfig FeedbackService::experiment(const std::string& experiment_id) const {
    return find_experiment(experiment_id).config;
}

std::vector<std::string> FeedbackService::experiments() const {
    std::shared_lock lock(experiments_mutex_);
    std::vector<std::string> out;
    for (const auto& [id, _] : experiments_) out.push_back(id);
    return out;
}

SessionState FeedbackService::create_session(const std::string& experiment_id, const std::string& user_id) {
    auto& ex = find_experiment(experiment_id);
    auto session = std::make_unique<Session>();
    auto& s = session->state;
    s.experiment_id = experiment_id;
    s.user_id = user_id.empty() ? "anon-" + random_token(8) : user_id;
    s.sampler = make_sampler_state(ex.config.effective_schedule());
    s.last_clock_ms = now();
    std::unique_lock lock(sessions_mutex_);
    s.session_id = experiment_id + "-" + std::to_string(++session_counter_) + "-" + random_token(4);
    const auto out = s;
    sessions_[s.session_id] = std::move(session);
    return out;
}

SessionState FeedbackService::session(const std::string& session_id) const {
    auto& s = find_session(session_id);
    std::lock_guard lock(s.mutex);
    return s.state;
}

namespace {

void advance_clock(SessionState& s, std::int64_t now_ms) {
    const auto delta = now_ms - s.last_clock_ms;
    if (delta > 0) {
        s.sampler = advance_trigger(s.sampler, TriggerEvent::tick(delta));
        s.phase = s.sampler.next_entry;
    }
    s.last_clock_ms = std::max(s.last_clock_ms, now_ms);
}

}  // namespace

std::vector<ServedSample> FeedbackService::next_samples(const std::string& session_id, int k) {
    auto& session = find_session(session_id);
    std::lock_guard lock(session.mutex);
    auto& s = session.state;
    auto& ex = find_experiment(s.experiment_id);
    const auto t = now();
    advance_clock(s, t);

    const auto main_index = ex.main->snapshot();
    const auto calib_index = ex.calibration ? ex.calibration->snapshot() : nullptr;
    const auto snap = ex.latest();
    EpisodeLossFn loss;
    if (snap) {
        loss = [snap, &ex](const EpisodeId& id) {
            return per_episode_loss(snap->model, id, snap->data, ex.catalog, ex.spec, {}, ex.config.reward_model.optimizer.margin);
        };
    }
    SamplingSources sources{main_index.get(), calib_index.get(), snap ? &loss : nullptr};
    auto [items, next] = next_batch(s.sampler, k, sources, t);
    s.sampler = std::move(next);

    std::vector<ServedSample> out;
    for (const auto& item : items) {
        s.served.insert(item.id);
        out.push_back({item.id, item.source, render_payload(ex.catalog.fetch(item.id), ex.spec)});
    }
    return out;
}

std::vector<SubmitOutcome> FeedbackService::submit_feedback(const std::string& session_id,
                                                            const std::vector<RawFeedbackEvent>& events) {
    auto& session = find_session(session_id);
    std::lock_guard lock(session.mutex);
    auto& s = session.state;
    auto& ex = find_experiment(s.experiment_id);
    advance_clock(s, now());
    const TranslationContext ctx{ex.config, ex.spec, ex.catalog};
    const auto lengths = [&ex](const EpisodeId& id) { return ex.catalog.steps(id); };

    std::vector<SubmitOutcome> out;
    for (const auto& raw : events) {
        SubmitOutcome result;
        try {
            if (raw.session_id != s.session_id) throw ValidationError("session_id", "does not match the session");
            if (raw.user_id != s.user_id) throw ValidationError("user_id", "does not match the session");
            if (raw.extra.is_object() && raw.extra.contains("service"))
                throw ValidationError("extra.service", "is reserved");
            auto records = translate(raw, ctx);
            for (auto& r : records) {
                bool calibration = false;
                for (const auto& t : r.targets)
                    if (const auto* id = t.episode()) calibration = calibration || ex.from_calibration(*id);
                r.meta.extra["service"] = {{"phase", s.phase}, {"calibration", calibration}};
            }
            {
                std::lock_guard log_lock(ex.log_mutex);
                std::string text;
                std::int64_t id = ex.next_id;
                for (auto& r : records) {
                    r.feedback_id = id++;
                    const auto violations = validate_feedback(r, lengths);
                    if (!violations.empty()) throw ValidationError("record", violations.front());
                    text += serialize_feedback(r);
                    text += '\n';
                }
                write_all(ex.log_fd, text);
                for (const auto& r : records) result.feedback_ids.push_back(r.feedback_id);
                ex.next_id = id;
            }
            std::set<EpisodeId> touched;
            for (const auto& r : records)
                for (const auto& t : r.targets)
                    if (const auto* id = t.episode()) touched.insert(*id);
            for (const auto& id : touched)
                if (auto* owner = ex.catalog.owner(id)) owner->mark_labeled(id);
            s.feedback_count += static_cast<std::int64_t>(records.size());
            s.sampler = advance_trigger(s.sampler, TriggerEvent::feedback());
            s.phase = s.sampler.next_entry;
        } catch (const ValidationError& e) {
            result.feedback_ids.clear();
            result.error_code = e.code();
            result.error_field = e.field();
            result.error_message = e.what();
        } catch (const Error& e) {
            result.feedback_ids.clear();
            result.error_code = e.code();
            result.error_message = e.what();
        }
        out.push_back(std::move(result));
    }
    return out;
}

TrainingOutcome FeedbackService::run_training(const std::string& experiment_id) {
    auto& ex = find_experiment(experiment_id);
    std::lock_guard train_lock(ex.train_mutex);
    const auto log = parse_log(read_file(ex.dir / "feedback.log"));
    if (log.records.empty()) throw EmptyDataset("the log is empty");
    auto data = assemble_training_set(log.records, ex.catalog, ex.spec);
    const auto& rm = ex.config.reward_model;
    const FeatureMap features =
        rm.features == FeatureMap::Kind::onehot_cell ? FeatureMap::onehot(ex.spec) : FeatureMap::local_window(ex.spec, rm.radius);
    const auto init = rm.kind == RewardModel::Kind::linear ? make_linear_model(features)
                                                            : make_mlp_model(features, rm.hidden, rm.optimizer.seed);
    auto result = train(init, data, ex.spec, rm.weights, rm.optimizer);

    TrainingOutcome out;
    char name[32];
    std::snprintf(name, sizeof name, "snapshot-%04d", ex.snapshots + 1);
    out.snapshot_id = name;
    out.losses = result.log.back().losses;
    out.evaluation = evaluate_model(result.model, ex.spec);
    out.records = log.records.size();
    out.items = data.size();
    out.log_crc32 = log.crc32;
    out.log = result.log;

    const auto models = ex.dir / "models";
    save_checkpoint(result.model, models / (out.snapshot_id + ".tmp"));
    fs::rename(models / (out.snapshot_id + ".tmp"), models / (out.snapshot_id + ".hfrm"));
    const auto learned = value_iteration(ex.spec, predict_cells(result.model, features.matrix(ex.spec)));
    RolloutOptions rollout;
    rollout.source_kind = "snapshot-rollout";
    for (auto ep : rollout_policy(ex.spec, learned, PolicyKind::epsilon(0.1), kMintedPerSnapshot,
                                  static_cast<std::uint64_t>(ex.snapshots + 1), rollout))
        out.minted.push_back(ex.main->ingest_with_fresh_id(std::move(ep)));

    auto snap = std::make_shared<Experiment::Snapshot>();
    snap->id = out.snapshot_id;
    snap->model = std::move(result.model);
    snap->data = std::move(data);
    snap->metrics = to_json(out);
    write_file_atomic(models / (out.snapshot_id + ".json"), snap->metrics.dump(2) + "\n");
    {
        std::unique_lock lock(ex.model_mutex);
        ex.snapshot = std::move(snap);
        ++ex.snapshots;
    }
    return out;
}

json FeedbackService::metrics(const std::string& experiment_id) const {
    auto& ex = find_experiment(experiment_id);
    const auto log = parse_log(read_file(ex.dir / "feedback.log"));
    std::int64_t sessions = 0;
    {
        std::shared_lock lock(sessions_mutex_);
        for (const auto& [_, s] : sessions_) sessions += s->state.experiment_id == experiment_id;
    }
    const auto snap = ex.latest();
    return {{"experiment_id", experiment_id},
            {"records", log.records.size()},
            {"feedback_counts", feedback_counts(log.records)},
            {"consistency", to_json(consistency_table(log.records))},
            {"sessions", sessions},
            {"log_bytes", log.bytes},
            {"log_crc32", log.crc32},
            {"snapshot", snap ? snap->metrics : json(nullptr)}};
}

QualityEstimate FeedbackService::quality_estimate(const std::string& session_id) const {
    const auto s = session(session_id);
    auto& ex = find_experiment(s.experiment_id);
    const auto log = parse_log(read_file(ex.dir / "feedback.log"));
    return hfkit::quality_estimate(log.records, session_id, ex.catalog);
}

std::string FeedbackService::export_log(const std::string& experiment_id) const {
    auto& ex = find_experiment(experiment_id);
    const auto text = read_file(ex.dir / "feedback.log");
    const auto nl = text.rfind('\n');
    return nl == std::string::npos ? std::string() : text.substr(0, nl + 1);
}

json FeedbackService::render_episode(const std::string& experiment_id, const EpisodeId& id) const {
    auto& ex = find_experiment(experiment_id);
    if (!ex.catalog.contains(id)) throw NotFound("no episode " + id.key());
    return render_payload(ex.catalog.fetch(id), ex.spec);
}

fs::path FeedbackService::snapshot_path(const std::string& experiment_id, const std::string& snapshot_id) const {
    auto& ex = find_experiment(experiment_id);
    const auto p = ex.dir / "models" / (snapshot_id + ".hfrm");
    if (snapshot_id.find('/') != std::string::npos || !fs::exists(p)) throw NotFound("no snapshot " + snapshot_id);
    return p;
}

fs::path FeedbackService::log_path(const std::string& experiment_id) const {
    return find_experiment(experiment_id).dir / "feedback.log";
}

}  // namespace hfkit
