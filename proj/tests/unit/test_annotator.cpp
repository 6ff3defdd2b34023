#include <doctest.h>

#include <cmath>
#include <map>

#include "hfkit/annotator.hpp"
#include "hfkit/rationality.hpp"
#include "support/temp_dir.hpp"

using namespace hfkit;
using hfkit::testing::TempDir;

namespace {

AnnotatorProfile profile(double beta, std::uint64_t seed = 1) {
    AnnotatorProfile p;
    for (auto k : kFeedbackKinds) p.beta_by_type[k] = beta;
    p.rng_seed = seed;
    return p;
}

EpisodeRecord synthetic(int num, std::vector<double> rewards) {
    EpisodeRecord ep;
    ep.id = EpisodeId{"default-8x8", "policy-rollout", 0, 0, num};
    ep.gt_rewards = std::move(rewards);
    ep.total_return = sum_rewards(ep.gt_rewards);
    return ep;
}

bool first_is(const RawFeedbackEvent& ev, const EpisodeRecord& ep) {
    return ev.payload.at("targets")[0] == to_json(episode_target(ep.id));
}

}  // namespace

TEST_CASE("comparative choices follow the Boltzmann probability") {
    const auto spec = fixture("default-8x8");
    const auto good = synthetic(1, {0.5}), bad = synthetic(2, {-0.5});
    SimulatedAnnotator coin(profile(0.0), spec);
    int wins = 0;
    for (int i = 0; i < 10000; ++i) wins += first_is(coin.annotate_comparative({good, bad}), good);
    CHECK(std::abs(wins - 5000) < 200);  // 4 sigma

    SimulatedAnnotator sharp(profile(50.0), spec);
    wins = 0;
    for (int i = 0; i < 10000; ++i) wins += first_is(sharp.annotate_comparative({bad, good}), good);
    // Closed form: 1 / (1 + e^-50) leaves an expected 2e-18 losses.
    CHECK(wins == 10000);

    SimulatedAnnotator mid(profile(std::log(3.0)), spec);
    const auto a = synthetic(3, {1.0}), b = synthetic(4, {0.0});
    wins = 0;
    for (int i = 0; i < 10000; ++i) wins += first_is(mid.annotate_comparative({b, a}), a);
    CHECK(std::abs(wins - 7500) < 4 * std::sqrt(10000 * 0.75 * 0.25));
}

TEST_CASE("annotators are reproducible under a seed") {
    const auto spec = fixture("default-8x8");
    const auto vt = value_iteration(spec);
    SimulatedAnnotator a(profile(2.0, 9), spec), b(profile(2.0, 9), spec);
    const auto ep = rollout_policy(spec, PolicyKind::epsilon(0.5), 1, 4)[0];
    for (int i = 0; i < 20; ++i) {
        CHECK(a.annotate_comparative({ep, synthetic(7, {0.1})}) == b.annotate_comparative({ep, synthetic(7, {0.1})}));
        CHECK(a.annotate_evaluative(ep) == b.annotate_evaluative(ep));
        CHECK(a.annotate_demonstrative(vt) == b.annotate_demonstrative(vt));
        CHECK(a.annotate_descriptive(all_target()) == b.annotate_descriptive(all_target()));
    }
}

TEST_CASE("evaluative noise") {
    const auto spec = fixture("default-8x8");
    RatingScale continuous{-1.0, 1.0, 0};
    const auto ep = synthetic(1, {1.0, -1.0, 0.3, -0.1});
    const double truth = normalized_score(spec, ep.gt_rewards);
    CHECK(truth == doctest::Approx(0.05));
    SimulatedAnnotator exact(profile(1e12), spec, continuous);
    CHECK(exact.annotate_evaluative(ep).payload.at("value").get<double>() == doctest::Approx(truth).epsilon(1e-9));

    // beta = 0: unit noise clamped to [-1, 1]. For truth 0 the clamped
    // standard deviation is sqrt(2 Phi(1) - 1 - 2 phi(1) + 2 (1 - Phi(1))).
    const auto zero = synthetic(2, {0.5, -0.5});
    SimulatedAnnotator noisy(profile(0.0, 3), spec, continuous);
    const double phi1 = std::exp(-0.5) / std::sqrt(2 * M_PI), Phi1 = 0.5 * std::erfc(-1.0 / std::sqrt(2.0));
    const double expected_sd = std::sqrt(2 * Phi1 - 1 - 2 * phi1 + 2 * (1 - Phi1));
    double s = 0.0, ss = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double v = noisy.annotate_evaluative(zero).payload.at("value").get<double>();
        CHECK(std::abs(v) <= 1.0);
        s += v;
        ss += v * v;
    }
    const double sd = std::sqrt(ss / 10000 - (s / 10000) * (s / 10000));
    CHECK(std::abs(sd - expected_sd) < 0.05 * expected_sd);

    SimulatedAnnotator likert(profile(0.0, 4), spec, RatingScale{1, 5, 5});
    for (int i = 0; i < 200; ++i) {
        const double v = likert.annotate_evaluative(zero).payload.at("value").get<double>();
        CHECK(v == std::round(v));
        CHECK(v >= 1.0);
        CHECK(v <= 5.0);
    }
}

TEST_CASE("corrections sample from the optimal Q values") {
    const auto spec = fixture("default-8x8");
    const auto vt = value_iteration(spec);
    const auto ep = rollout_policy(spec, PolicyKind::epsilon(1.0), 1, 8)[0];
    REQUIRE(ep.length() > 2);
    const int step = 1;
    const Cell at = ep.states[step].agent;
    const Action logged = ep.actions[step];
    for (double beta : {0.0, 50.0}) {
        SimulatedAnnotator ann(profile(beta, 5), spec);
        std::vector<double> q;
        for (auto a : kActions) q.push_back(vt.q_of(spec, at, a));
        const auto p = boltzmann_prob(q, beta);
        std::map<Action, int> counts;
        int suppressed = 0;
        const int n = 20000;
        for (int i = 0; i < n; ++i) {
            const auto ev = ann.annotate_corrective(ep, step, vt);
            if (!ev) {
                ++suppressed;
                continue;
            }
            const auto a = *action_from_string(ev->payload.at("action").get<std::string>());
            CHECK(a != logged);
            counts[a]++;
        }
        counts[logged] = suppressed;
        for (auto a : kActions) {
            const double pa = p(static_cast<int>(a));
            CHECK(std::abs(counts[a] - n * pa) <= 4 * std::sqrt(n * pa * (1 - pa)) + 1);
        }
        if (beta == 0.0)
            for (auto a : kActions) CHECK(std::abs(counts[a] / double(n) - 0.25) < 0.02);
    }
}

TEST_CASE("high-beta demonstrations are near optimal") {
    const auto spec = fixture("default-8x8");
    const auto vt = value_iteration(spec);
    const double optimal = greedy_return(spec, vt);
    SimulatedAnnotator expert(profile(50.0, 6), spec);
    double mean = 0.0;
    for (int i = 0; i < 200; ++i) mean += expert.annotate_demonstrative(vt).extra.at("gt_return").get<double>() / 200;
    CHECK(mean >= optimal - std::abs(spec.step_penalty));

    // beta = 0 matches a uniform random walk baseline.
    SimulatedAnnotator novice(profile(0.0, 7), spec);
    double walk = 0.0, base = 0.0;
    for (int i = 0; i < 400; ++i) walk += novice.annotate_demonstrative(vt).extra.at("gt_return").get<double>() / 400;
    for (const auto& ep : rollout_policy(spec, PolicyKind::epsilon(1.0), 400, 77)) base += ep.total_return / 400;
    CHECK(std::abs(walk - base) < 0.15);
}

TEST_CASE("descriptive masks") {
    const auto spec = fixture("default-8x8");
    SimulatedAnnotator exact(profile(1e12), spec);
    const auto events = exact.annotate_descriptive(all_target());
    REQUIRE(events.size() == 2);
    CHECK(events[0].payload.at("sign") == 1);
    CHECK(events[0].payload.at("cells") == nlohmann::json::parse("[[6,6]]"));
    CHECK(events[1].payload.at("sign") == -1);
    CHECK(events[1].payload.at("cells").size() == 3);

    // Inclusion beta/(1+beta): 0 at beta = 0 and 0.5 at beta = 1; other
    // cells at 1/(4(1+beta)).
    for (auto [beta, p_hit] : {std::pair{0.0, 0.0}, std::pair{1.0, 0.5}}) {
        SimulatedAnnotator ann(profile(beta, 2), spec);
        int hits = 0, false_hits = 0;
        const int n = 2000;
        for (int i = 0; i < n; ++i) {
            for (const auto& ev : ann.annotate_descriptive(all_target())) {
                for (const auto& c : ev.payload.at("cells")) {
                    const Cell cell{c[0].get<int>(), c[1].get<int>()};
                    CHECK(spec.in_bounds(cell));
                    CHECK_FALSE(spec.is_wall(cell));
                    const bool salient = spec.is_goal(cell) || spec.is_lava(cell);
                    hits += salient;
                    false_hits += !salient;
                }
            }
        }
        const double others = static_cast<double>(spec.floor_cells().size());
        CHECK(std::abs(hits / (4.0 * n) - p_hit) < 0.05);
        CHECK(std::abs(false_hits / (others * n) - 1.0 / (4.0 * (1.0 + beta))) < 0.01);
    }
}

TEST_CASE("effective beta combines type and phase") {
    AnnotatorProfile p = profile(2.0);
    p.beta_by_type[FeedbackKind::evaluative] = 4.0;
    p.beta_progress_modifier = {1.0, 0.5, 2.0};
    CHECK(p.effective_beta(FeedbackKind::evaluative, 1) == 2.0);
    CHECK(p.effective_beta(FeedbackKind::comparative, 7) == 4.0);
    const auto spec = fixture("default-8x8");
    SimulatedAnnotator ann(p, spec);
    ann.set_phase(2);
    const auto ev = ann.annotate_evaluative(synthetic(1, {0.0}));
    CHECK(ev.extra.at("effective_beta") == 8.0);
    CHECK(ev.extra.at("phase") == 2);
    CHECK(annotator_profile_from_json(to_json(p)) == p);
    p.beta_progress_modifier = {0.0};
    CHECK_THROWS_AS(validate_profile(p), ConfigError);
}

TEST_CASE("every simulated event passes translation") {
    TempDir dir{"hfkit-annotator"};
    const auto spec = fixture("default-8x8");
    const auto vt = value_iteration(spec);
    auto buffer = EpisodeBuffer::open(dir.path);
    const auto episodes = rollout_policy(spec, PolicyKind::epsilon(0.4), 30, 3);
    buffer->ingest(episodes);
    EpisodeCatalog catalog({buffer});
    ExperimentConfig config;
    config.experiment_id = "sim";
    config.buffer = "b";
    config.enabled_feedback_types = {kFeedbackKinds.begin(), kFeedbackKinds.end()};
    TranslationContext ctx{config, spec, catalog};
    auto accept = [&](const RawFeedbackEvent& ev) {
        const auto records = translate(ev, ctx);
        for (const auto& r : records)
            CHECK(validate_feedback(r, [&](const EpisodeId& id) { return catalog.steps(id); }).empty());
    };
    for (double beta : {0.0, 1.0, 50.0}) {
        SimulatedAnnotator ann(profile(beta, 11), spec, config.rating_scale);
        for (std::size_t i = 0; i + 2 < episodes.size(); i += 3) {
            const auto& ep = episodes[i];
            accept(ann.annotate_comparative({ep, episodes[i + 1], episodes[i + 2]}));
            accept(ann.annotate_comparative({make_segment(ep, 0, 1), make_segment(episodes[i + 1], 0, 1)}));
            accept(ann.annotate_evaluative(ep));
            accept(ann.annotate_evaluative(make_segment(ep, 0, ep.length())));
            for (int s = 0; s < ep.length(); ++s)
                if (auto ev = ann.annotate_corrective(ep, s, vt)) accept(*ev);
            accept(ann.annotate_demonstrative(vt));
            for (const auto& ev : ann.annotate_descriptive(episode_target(ep.id))) accept(ev);
        }
    }
}
