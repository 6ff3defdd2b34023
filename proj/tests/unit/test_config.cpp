#include <doctest.h>

#include <string>

#include "hfkit/config.hpp"

using namespace hfkit;
using nlohmann::json;

namespace {

std::string failing_field(const json& j) {
    try {
        config_from_json(j);
    } catch (const ValidationError& e) {
        return e.field();
    }
    return "<accepted>";
}

json minimal() { return {{"experiment_id", "exp-1"}, {"buffer", "buf"}}; }

}  // namespace

TEST_CASE("minimal configuration uses comparative defaults") {
    const auto c = config_from_json(minimal());
    CHECK(c.enabled_feedback_types == std::set<FeedbackKind>{FeedbackKind::comparative});
    CHECK(c.comparison_slots == 2);
    CHECK(c.env == "default-8x8");
    CHECK_FALSE(c.ui.show_quality_widget);
    CHECK(c.effective_schedule() == c.sampler);
}

TEST_CASE("configuration round trip") {
    auto j = minimal();
    j["enabled_feedback_types"] = {"evaluative", "descriptive", "comparative"};
    j["rating_scale"] = {{"min", 0}, {"max", 10}, {"steps", 11}};
    j["calibration_buffer"] = "calib";
    j["calibration"] = {{"initial_items", 5}, {"phases", {{{"after_feedback", 20}, {"items", 3}, {"kind", "repeat"}}}}};
    j["reward_model"] = {{"kind", "mlp"},
                         {"hidden", 8},
                         {"features", {{"kind", "cell_plus_local_window"}, {"radius", 2}}},
                         {"loss_weights", {{"evaluative", 0.5}}},
                         {"optimizer", {{"steps", 50}, {"seed", 3}}}};
    j["ui"] = {{"show_quality_widget", true}, {"instructions", "Rank the episodes."}};
    const auto c = config_from_json(j);
    CHECK(c.reward_model.kind == RewardModel::Kind::mlp);
    CHECK(c.reward_model.weights.evaluative == 0.5);
    CHECK(c.reward_model.weights.comparative == 1.0);
    CHECK(c.rating_scale.steps == 11);
    CHECK(config_from_json(to_json(c)) == c);
    CHECK(to_json(config_from_json(to_json(c))).dump() == to_json(c).dump());
    const auto sched = c.effective_schedule();
    CHECK(sched.initial.source == SampleSource::calibration);
    CHECK(sched.entries.size() == 3);
}

TEST_CASE("validation reports field paths") {
    auto j = minimal();
    j["comparison_slots"] = 1;
    CHECK(failing_field(j) == "comparison_slots");
    j["enabled_feedback_types"] = {"evaluative"};
    CHECK(failing_field(j) == "<accepted>");

    j = minimal();
    j["experiment_id"] = "../escape";
    CHECK(failing_field(j) == "experiment_id");
    j = minimal();
    j.erase("buffer");
    CHECK(failing_field(j) == "buffer");
    j = minimal();
    j["enabled_feedback_types"] = {"comparative", "telepathic"};
    CHECK(failing_field(j) == "enabled_feedback_types[1]");
    j = minimal();
    j["rating_scale"] = {{"min", 5}, {"max", 1}};
    CHECK(failing_field(j) == "rating_scale");
    j = minimal();
    j["rating_scale"] = {{"steps", 1}};
    CHECK(failing_field(j) == "rating_scale.steps");
    j = minimal();
    j["reward_model"] = {{"optimizer", {{"lr", -1}}}};
    CHECK(failing_field(j) == "reward_model.optimizer.lr");
    j = minimal();
    j["reward_model"] = {{"loss_weights", {{"evaluative", 0}, {"comparative", 0}, {"instructive", 0}, {"descriptive", 0}}}};
    CHECK(failing_field(j) == "reward_model.loss_weights");
    j = minimal();
    j["reward_model"] = {{"features", {{"kind", "pixels"}}}};
    CHECK(failing_field(j) == "reward_model.features.kind");
    j = minimal();
    j["demo_optimality"] = "high";
    CHECK(failing_field(j) == "demo_optimality");
    j = minimal();
    j["calibration"] = {{"rho", 0.1}};
    CHECK(failing_field(j) == "calibration");
    j = minimal();
    j["sampler"] = {{"initial", {{"mode", "interleaved"}}}};
    CHECK(failing_field(j) == "sampler.initial");
    j = minimal();
    j["calibration_buffer"] = "calib";
    j["calibration"] = {{"rho", 0.1}};
    j["sampler"] = {{"schedule", {{{"trigger", {{"feedback_count", 3}}}, {"mode", {{"mode", "random"}}}}}}};
    CHECK(failing_field(j) == "sampler.schedule");
    CHECK(failing_field(json::array()) == "");
}

TEST_CASE("validation error message starts with the field") {
    auto j = minimal();
    j["comparison_slots"] = 0;
    try {
        config_from_json(j);
        FAIL("accepted");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("comparison_slots") != std::string::npos);
    }
}

TEST_CASE("missing configuration file") {
    CHECK_THROWS_AS(load_config_file("/nonexistent/config.json"), NotFound);
}

TEST_CASE("unknown top-level keys are rejected") {
    auto j = minimal();
    j["feedback_types"] = {"evaluative"};
    CHECK(failing_field(j) == "feedback_types");
}
