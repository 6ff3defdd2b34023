#include <doctest.h>

#include <random>

#include "hfkit/analysis.hpp"
#include "hfkit/simulation.hpp"
#include "support/temp_dir.hpp"

using namespace hfkit;
using hfkit::testing::TempDir;
using nlohmann::json;

namespace {

struct World {
    TempDir dir{"hfkit-analysis"};
    SimulationWorld w = make_world(dir.path / "buffer", "default-8x8", 3, 7);
};

// n episodes with distinct returns, ascending.
std::vector<EpisodeRecord> distinct_episodes(const SimulationWorld& w, std::size_t n) {
    std::map<double, EpisodeRecord> by_return;
    for (const auto& ep : w.episodes) by_return.emplace(std::round(ep.total_return * 1e9), ep);
    std::vector<EpisodeRecord> out;
    for (const auto& [_, ep] : by_return) out.push_back(ep);
    REQUIRE(out.size() >= n);
    std::vector<EpisodeRecord> picked;
    for (std::size_t i = 0; i < n; ++i) picked.push_back(out[i * (out.size() - 1) / (n - 1)]);
    return picked;
}

StandardizedFeedback one(const RawFeedbackEvent& ev, SimulationWorld& w) {
    auto records = translate_event(ev, w);
    REQUIRE(records.size() == 1);
    return records.front();
}

}  // namespace

TEST_CASE("spearman matches reference values") {
    CHECK(spearman({1, 2, 3, 4, 5}, {5, 6, 7, 8, 7}) == doctest::Approx(0.8207826816681233).epsilon(1e-12));
    CHECK(spearman({3, 1, 4, 1, 5, 9, 2, 6}, {2, 7, 1, 8, 2, 8, 1, 8}) == doctest::Approx(0.19885368120992467).epsilon(1e-12));
    CHECK(spearman({0.5, -1, 2, 2, 3}, {10, 9, 8, 8, 1}) == doctest::Approx(-0.8947368421052632).epsilon(1e-12));
    CHECK(spearman({1, 1, 1}, {1, 2, 3}) == 0.0);
    CHECK_THROWS_AS(spearman({1, 2}, {1}), LengthMismatch);
}

TEST_CASE("log parsing ignores a partial trailing line") {
    World world;
    auto& w = world.w;
    SimulatedAnnotator annotator({}, w.spec, w.config.rating_scale);
    std::string text;
    for (int i = 0; i < 5; ++i) {
        auto r = one(annotator.annotate_evaluative(w.episodes[static_cast<std::size_t>(i)]), w);
        r.feedback_id = i;
        text += serialize_feedback(r) + "\n";
    }
    const auto full = parse_log(text);
    CHECK(full.records.size() == 5);
    CHECK(full.bytes == text.size());
    CHECK(full.crc32 == crc32_of(text));
    const auto partial = parse_log(text + text.substr(0, 40));
    CHECK(partial.records.size() == 5);
    CHECK(partial.crc32 == full.crc32);
    CHECK_THROWS_AS(parse_log(text + "garbage\n"), ParseError);
    CHECK(crc32_of("123456789") == 0xCBF43926u);
    CHECK_THROWS_AS(read_log(world.dir.path / "missing.log"), NotFound);
}

TEST_CASE("record context prefers service metadata and explicit overrides") {
    World world;
    auto& w = world.w;
    SimulatedAnnotator annotator({}, w.spec, w.config.rating_scale);
    annotator.set_phase(2);
    auto r = one(annotator.annotate_evaluative(w.episodes[0]), w);
    CHECK(feedback_kind_of(r) == FeedbackKind::evaluative);
    auto ctx = record_context(r);
    CHECK(ctx.at("type") == "evaluative");
    CHECK(ctx.at("task") == "default-8x8");
    CHECK(ctx.at("progress") == "2");
    CHECK(!is_calibration(r));
    r.meta.extra["service"] = {{"phase", 5}, {"calibration", true}};
    CHECK(record_context(r).at("progress") == "5");
    CHECK(is_calibration(r));
    r.meta.extra["context"] = {{"type", "custom"}};
    CHECK(record_context(r).at("type") == "custom");
    CHECK(target_return(r.targets.front(), w.catalog) == doctest::Approx(w.episodes[0].total_return));

    const auto q = w.q_star;
    CHECK(feedback_kind_of(one(annotator.annotate_demonstrative(q), w)) == FeedbackKind::demonstrative);
}

TEST_CASE("choice observations follow the ranking stages") {
    World world;
    auto& w = world.w;
    const auto eps = distinct_episodes(w, 3);
    AnnotatorProfile profile;
    profile.rng_seed = 4;
    SimulatedAnnotator annotator(profile, w.spec);
    auto r = one(annotator.annotate_comparative(eps), w);
    CHECK(choice_observations({r}, w.catalog).empty());
    r.meta.extra["calibration"] = true;
    const auto obs = choice_observations({r}, w.catalog);
    REQUIRE(obs.size() == 2);
    CHECK(obs[0].utilities.size() == 3);
    CHECK(obs[1].utilities.size() == 2);
    const auto& ranks = std::get<Ranking>(r.content).ranks;
    const auto best = static_cast<std::size_t>(std::min_element(ranks.begin(), ranks.end()) - ranks.begin());
    CHECK(obs[0].utilities[static_cast<std::size_t>(obs[0].chosen)] == doctest::Approx(target_return(r.targets[best], w.catalog)));
    CHECK(choice_observations({r}, w.catalog, false).size() == 2);

    // Tied stages are skipped.
    std::get<Ranking>(r.content).ranks = {1, 2, 2};
    CHECK(choice_observations({r}, w.catalog).size() == 1);
    std::get<Ranking>(r.content).ranks = {1, 1, 2};
    CHECK(choice_observations({r}, w.catalog).empty());
}

TEST_CASE("beta report with one slice equals the direct fit") {
    World world;
    auto& w = world.w;
    CHECK_THROWS_AS(beta_report(std::vector<StandardizedFeedback>{}, w.catalog), NoCalibrationData);
    const auto records = simulate_calibration_records(w, 2.0, {}, 0, 3, CalibrationDesign{400, 4, 1.0, 64});
    const auto report = beta_report(records, w.catalog);
    REQUIRE(report.slices.size() == 1);
    const auto direct = fit_beta(choice_observations(records, w.catalog));
    CHECK(report.slices[0].estimate.beta_hat == doctest::Approx(direct.beta_hat).epsilon(1e-12));
    CHECK(report.n_obs == direct.n_obs);
    CHECK(to_json(report).contains("slices"));
    CHECK(!format_table(report).empty());
}

TEST_CASE("consistency table over repeats") {
    World world;
    auto& w = world.w;
    const auto eps = distinct_episodes(w, 2);
    CHECK(consistency_table({}).empty());

    AnnotatorProfile profile;
    profile.beta_by_type[FeedbackKind::comparative] = 0.0;
    profile.rng_seed = 9;
    SimulatedAnnotator annotator(profile, w.spec);

    // Identical answers agree perfectly.
    const auto r = one(annotator.annotate_comparative(eps), w);
    auto table = consistency_table({r, r, r});
    REQUIRE(table.size() == 1);
    CHECK(table[0].comparative == doctest::Approx(1.0));
    CHECK(!table[0].evaluative.has_value());
    CHECK(consistency_table({r}).empty());

    // A random chooser agrees half of the time.
    std::vector<StandardizedFeedback> records;
    std::mt19937_64 rng(2);
    for (int i = 0; i < 1000; ++i) {
        const auto& a = w.episodes[rng() % w.episodes.size()];
        const auto& b = w.episodes[rng() % w.episodes.size()];
        if (a.id == b.id) continue;
        records.push_back(one(annotator.annotate_comparative(std::vector{a, b}), w));
        records.push_back(one(annotator.annotate_comparative(std::vector{a, b}), w));
    }
    table = consistency_table(records);
    REQUIRE(table.size() == 1);
    CHECK(*table[0].comparative == doctest::Approx(0.5).epsilon(0.1));
    CHECK(to_json(table).is_array());
}

TEST_CASE("model evaluation of the true reward is optimal") {
    const auto spec = resolve_environment("default-8x8");
    Eigen::VectorXd truth = Eigen::VectorXd::Zero(spec.width * spec.height);
    for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x) truth(spec.index({x, y})) = transition_reward(spec, {x, y});
    const auto m = evaluate_cell_rewards(truth, spec);
    CHECK(m.value_spearman == doctest::Approx(1.0));
    CHECK(m.return_ratio == doctest::Approx(1.0));
    CHECK(m.optimal_return == doctest::Approx(0.91).epsilon(1e-9));

    auto model = make_linear_model(FeatureMap::onehot(spec));
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n;
    for (Eigen::Index i = 0; i < model.params.size(); ++i) model.params(i) = n(rng);
    const auto random = evaluate_model(model, spec);
    CHECK(std::isfinite(random.value_spearman));
    CHECK(random.cells == m.cells);
    CHECK(!format_table(random).empty());

    const auto other = resolve_environment("empty-3x3");
    CHECK_THROWS_AS(evaluate_model(make_linear_model(FeatureMap::onehot(other)), spec), LengthMismatch);
}

TEST_CASE("feedback counts per type") {
    World world;
    auto& w = world.w;
    SimulatedAnnotator annotator({}, w.spec, w.config.rating_scale);
    std::vector<StandardizedFeedback> records{one(annotator.annotate_evaluative(w.episodes[0]), w),
                                              one(annotator.annotate_evaluative(w.episodes[1]), w),
                                              one(annotator.annotate_comparative(std::vector{w.episodes[0], w.episodes[1]}), w)};
    const auto counts = feedback_counts(records);
    CHECK(counts.at("evaluative") == 2);
    CHECK(counts.at("comparative") == 1);
}
