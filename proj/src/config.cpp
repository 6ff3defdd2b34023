#include "hfkit/config.hpp"

#include <cmath>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

namespace hfkit {

using nlohmann::json;

namespace {

bool calibration_configured(const CalibrationSettings& c) {
    return c.initial_items > 0 || !c.phases.empty() || c.rho > 0.0;
}

// Runs `f`, converting library and json errors into a ValidationError on `field`.
template <typename F>
auto at_field(const std::string& field, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const ValidationError&) {
        throw;
    } catch (const json::exception& e) {
        throw ValidationError(field, e.what());
    } catch (const Error& e) {
        throw ValidationError(field, e.what());
    }
}

template <typename T>
T field_or(const json& j, const char* key, T fallback, const std::string& path) {
    if (!j.contains(key)) return fallback;
    return at_field(path + key, [&] { return j.at(key).get<T>(); });
}

FeatureMap::Kind feature_kind_from_string(const std::string& s) {
    if (s == "onehot_cell") return FeatureMap::Kind::onehot_cell;
    if (s == "cell_plus_local_window") return FeatureMap::Kind::cell_plus_local_window;
    throw ConfigError("unknown feature map '" + s + "'");
}

RewardModel::Kind model_kind_from_string(const std::string& s) {
    if (s == "linear") return RewardModel::Kind::linear;
    if (s == "mlp") return RewardModel::Kind::mlp;
    throw ConfigError("unknown reward model kind '" + s + "'");
}

}  // namespace

std::string_view to_string(FeedbackKind k) {
    switch (k) {
        case FeedbackKind::evaluative: return "evaluative";
        case FeedbackKind::comparative: return "comparative";
        case FeedbackKind::corrective: return "corrective";
        case FeedbackKind::demonstrative: return "demonstrative";
        case FeedbackKind::descriptive: return "descriptive";
    }
    return "?";
}

FeedbackKind feedback_kind_from_string(std::string_view s) {
    for (auto k : kFeedbackKinds)
        if (to_string(k) == s) return k;
    throw ConfigError("unknown feedback type '" + std::string(s) + "'");
}

SamplerSchedule ExperimentConfig::effective_schedule() const {
    if (!calibration_configured(calibration)) return sampler;
    return calibration_schedule(calibration, sampler.initial, calibration_buffer.has_value());
}

void validate_config(const ExperimentConfig& c) {
    static const std::regex id_pattern("[A-Za-z0-9_.-]+");
    if (!std::regex_match(c.experiment_id, id_pattern) || c.experiment_id == "." || c.experiment_id == "..")
        throw ValidationError("experiment_id", "must match [A-Za-z0-9_.-]+");
    if (c.env.empty()) throw ValidationError("env", "must name a fixture or map file");
    if (c.buffer.empty()) throw ValidationError("buffer", "must name an episode store");
    if (c.calibration_buffer && c.calibration_buffer->empty())
        throw ValidationError("calibration_buffer", "must not be empty when given");
    if (c.enabled_feedback_types.empty()) throw ValidationError("enabled_feedback_types", "must enable at least one type");
    if (!(std::isfinite(c.rating_scale.min) && std::isfinite(c.rating_scale.max) && c.rating_scale.min < c.rating_scale.max))
        throw ValidationError("rating_scale", "min must be below max");
    if (c.rating_scale.steps < 0 || c.rating_scale.steps == 1)
        throw ValidationError("rating_scale.steps", "must be 0 (continuous) or at least 2");
    if (c.enabled(FeedbackKind::comparative) && c.comparison_slots < 2)
        throw ValidationError("comparison_slots", "must be at least 2 when comparative feedback is enabled");
    if (!(c.demo_optimality >= 0.0 && c.demo_optimality <= 1.0))
        throw ValidationError("demo_optimality", "must lie in [0,1]");

    const auto& rm = c.reward_model;
    if (rm.kind == RewardModel::Kind::mlp && rm.hidden < 1) throw ValidationError("reward_model.hidden", "must be at least 1");
    if (rm.radius < 0) throw ValidationError("reward_model.features.radius", "must be non-negative");
    const auto& w = rm.weights;
    for (auto [name, v] : {std::pair{"evaluative", w.evaluative}, std::pair{"comparative", w.comparative},
                           std::pair{"instructive", w.instructive}, std::pair{"descriptive", w.descriptive}})
        if (!(v >= 0.0 && std::isfinite(v))) throw ValidationError(std::string("reward_model.loss_weights.") + name, "must be >= 0");
    if (w.evaluative + w.comparative + w.instructive + w.descriptive <= 0.0)
        throw ValidationError("reward_model.loss_weights", "at least one weight must be positive");
    const auto& o = rm.optimizer;
    if (!(o.lr > 0.0)) throw ValidationError("reward_model.optimizer.lr", "must be positive");
    if (o.steps < 1) throw ValidationError("reward_model.optimizer.steps", "must be at least 1");
    if (o.batch < 0) throw ValidationError("reward_model.optimizer.batch", "must be non-negative");
    if (!(o.l2 >= 0.0)) throw ValidationError("reward_model.optimizer.l2", "must be non-negative");
    if (!(o.margin >= 0.0)) throw ValidationError("reward_model.optimizer.margin", "must be non-negative");
    if (o.log_every < 1) throw ValidationError("reward_model.optimizer.log_every", "must be at least 1");

    if (calibration_configured(c.calibration) && !c.sampler.entries.empty())
        throw ValidationError("sampler.schedule", "cannot be combined with calibration phases");
    at_field("calibration", [&] { return c.effective_schedule(); });
    auto check_source = [&](const ModeSpec& m, const std::string& field) {
        if ((m.source == SampleSource::calibration || m.mode == SamplerMode::interleaved) && !c.calibration_buffer)
            throw ValidationError(field, "needs a calibration_buffer");
    };
    check_source(c.sampler.initial, "sampler.initial");
    for (std::size_t i = 0; i < c.sampler.entries.size(); ++i)
        check_source(c.sampler.entries[i].mode, "sampler.schedule[" + std::to_string(i) + "].mode");
}

json to_json(const ExperimentConfig& c) {
    json types = json::array();
    for (auto k : c.enabled_feedback_types) types.push_back(to_string(k));
    const auto& rm = c.reward_model;
    json j{{"experiment_id", c.experiment_id},
           {"env", c.env},
           {"buffer", c.buffer},
           {"enabled_feedback_types", types},
           {"rating_scale", {{"min", c.rating_scale.min}, {"max", c.rating_scale.max}, {"steps", c.rating_scale.steps}}},
           {"comparison_slots", c.comparison_slots},
           {"demo_optimality", c.demo_optimality},
           {"sampler", to_json(c.sampler)},
           {"reward_model",
            {{"kind", to_string(rm.kind)},
             {"hidden", rm.hidden},
             {"features", {{"kind", to_string(rm.features)}, {"radius", rm.radius}}},
             {"loss_weights",
              {{"evaluative", rm.weights.evaluative},
               {"comparative", rm.weights.comparative},
               {"instructive", rm.weights.instructive},
               {"descriptive", rm.weights.descriptive}}},
             {"optimizer",
              {{"lr", rm.optimizer.lr},
               {"steps", rm.optimizer.steps},
               {"batch", rm.optimizer.batch},
               {"seed", rm.optimizer.seed},
               {"l2", rm.optimizer.l2},
               {"margin", rm.optimizer.margin},
               {"log_every", rm.optimizer.log_every}}}}},
           {"calibration", to_json(c.calibration)},
           {"ui", {{"show_quality_widget", c.ui.show_quality_widget}, {"instructions", c.ui.instructions}}}};
    if (c.calibration_buffer) j["calibration_buffer"] = *c.calibration_buffer;
    return j;
}

ExperimentConfig config_from_json(const json& j) {
    if (!j.is_object()) throw ValidationError("", "configuration must be an object");
    static const std::set<std::string> known{"experiment_id", "env", "buffer", "calibration_buffer",
                                             "enabled_feedback_types", "rating_scale", "comparison_slots",
                                             "demo_optimality", "sampler", "reward_model", "calibration", "ui"};
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) throw ValidationError(key, "unknown configuration key");
    ExperimentConfig c;
    c.experiment_id = field_or<std::string>(j, "experiment_id", "", "");
    c.env = field_or<std::string>(j, "env", c.env, "");
    c.buffer = field_or<std::string>(j, "buffer", "", "");
    if (j.contains("calibration_buffer")) c.calibration_buffer = field_or<std::string>(j, "calibration_buffer", "", "");
    if (j.contains("enabled_feedback_types")) {
        c.enabled_feedback_types.clear();
        const auto& types = j.at("enabled_feedback_types");
        if (!types.is_array()) throw ValidationError("enabled_feedback_types", "must be an array");
        for (std::size_t i = 0; i < types.size(); ++i)
            c.enabled_feedback_types.insert(at_field("enabled_feedback_types[" + std::to_string(i) + "]", [&] {
                return feedback_kind_from_string(types[i].get<std::string>());
            }));
    }
    if (j.contains("rating_scale")) {
        const auto& s = j.at("rating_scale");
        c.rating_scale.min = field_or(s, "min", c.rating_scale.min, "rating_scale.");
        c.rating_scale.max = field_or(s, "max", c.rating_scale.max, "rating_scale.");
        c.rating_scale.steps = field_or(s, "steps", c.rating_scale.steps, "rating_scale.");
    }
    c.comparison_slots = field_or(j, "comparison_slots", c.comparison_slots, "");
    c.demo_optimality = field_or(j, "demo_optimality", c.demo_optimality, "");
    if (j.contains("sampler")) c.sampler = at_field("sampler", [&] { return schedule_from_json(j.at("sampler")); });
    if (j.contains("reward_model")) {
        const auto& r = j.at("reward_model");
        auto& rm = c.reward_model;
        if (r.contains("kind"))
            rm.kind = at_field("reward_model.kind", [&] { return model_kind_from_string(r.at("kind").get<std::string>()); });
        rm.hidden = field_or(r, "hidden", rm.hidden, "reward_model.");
        if (r.contains("features")) {
            const auto& f = r.at("features");
            if (f.contains("kind"))
                rm.features = at_field("reward_model.features.kind",
                                       [&] { return feature_kind_from_string(f.at("kind").get<std::string>()); });
            rm.radius = field_or(f, "radius", rm.radius, "reward_model.features.");
        }
        if (r.contains("loss_weights")) {
            const auto& w = r.at("loss_weights");
            const std::string p = "reward_model.loss_weights.";
            rm.weights.evaluative = field_or(w, "evaluative", rm.weights.evaluative, p);
            rm.weights.comparative = field_or(w, "comparative", rm.weights.comparative, p);
            rm.weights.instructive = field_or(w, "instructive", rm.weights.instructive, p);
            rm.weights.descriptive = field_or(w, "descriptive", rm.weights.descriptive, p);
        }
        if (r.contains("optimizer")) {
            const auto& o = r.at("optimizer");
            const std::string p = "reward_model.optimizer.";
            rm.optimizer.lr = field_or(o, "lr", rm.optimizer.lr, p);
            rm.optimizer.steps = field_or(o, "steps", rm.optimizer.steps, p);
            rm.optimizer.batch = field_or(o, "batch", rm.optimizer.batch, p);
            rm.optimizer.seed = field_or(o, "seed", rm.optimizer.seed, p);
            rm.optimizer.l2 = field_or(o, "l2", rm.optimizer.l2, p);
            rm.optimizer.margin = field_or(o, "margin", rm.optimizer.margin, p);
            rm.optimizer.log_every = field_or(o, "log_every", rm.optimizer.log_every, p);
        }
    }
    if (j.contains("calibration"))
        c.calibration = at_field("calibration", [&] { return calibration_settings_from_json(j.at("calibration")); });
    if (j.contains("ui")) {
        const auto& u = j.at("ui");
        c.ui.show_quality_widget = field_or(u, "show_quality_widget", false, "ui.");
        c.ui.instructions = field_or<std::string>(u, "instructions", "", "ui.");
    }
    validate_config(c);
    return c;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw NotFound("cannot read configuration file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return config_from_json(json::parse(ss.str()));
    } catch (const json::parse_error& e) {
        throw ValidationError("", e.what());
    }
}

}  // namespace hfkit
