#include <doctest.h>

#include <cmath>
#include <random>

#include "hfkit/gridworld.hpp"
#include "hfkit/rationality.hpp"

using namespace hfkit;

namespace {

// Pairwise choices with utility gaps uniform in [-2, 2].
std::vector<ChoiceObservation> simulate_pairs(double beta, int n, std::uint64_t seed, ChoiceContext ctx = {}) {
    std::mt19937_64 rng(seed);
    std::vector<ChoiceObservation> out;
    for (int i = 0; i < n; ++i) {
        const double a = 4.0 * uniform01(rng) - 2.0, b = 4.0 * uniform01(rng) - 2.0;
        const double pa = 1.0 / (1.0 + std::exp(-beta * (a - b)));
        out.push_back({{a, b}, uniform01(rng) < pa ? 0 : 1, ctx, "u"});
    }
    return out;
}

// Direct evaluation without log-sum-exp, for small inputs.
double naive_loglik(const std::vector<ChoiceObservation>& obs, double beta) {
    double s = 0.0;
    for (const auto& o : obs) {
        double z = 0.0;
        for (double u : o.utilities) z += std::exp(beta * u);
        s += beta * o.utilities[static_cast<std::size_t>(o.chosen)] - std::log(z);
    }
    return s;
}

}  // namespace

TEST_CASE("boltzmann probabilities") {
    const auto p = boltzmann_prob(std::vector<double>{1.0, 0.0}, std::log(3.0));
    CHECK(std::abs(p(0) - 0.75) < 1e-12);
    CHECK(std::abs(p(1) - 0.25) < 1e-12);
    const auto u = boltzmann_prob(std::vector<double>{3.0, -1.0, 7.5}, 0.0);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(u(i) - 1.0 / 3.0) < 1e-15);
    // Large utilities stay finite.
    const auto big = boltzmann_prob(std::vector<double>{1000.0, 999.0}, 50.0);
    CHECK(std::isfinite(big(0)));
    CHECK(std::abs(big.sum() - 1.0) < 1e-12);
    CHECK(std::abs(log_sum_exp(Eigen::Vector2d(1000.0, 1000.0)) - (1000.0 + std::log(2.0))) < 1e-9);
}

TEST_CASE("best option probability grows with beta") {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 1000; ++t) {
        const int n = 2 + static_cast<int>(rng() % 6);
        std::vector<double> u(static_cast<std::size_t>(n));
        for (auto& x : u) x = 4.0 * uniform01(rng) - 2.0;
        const auto best = std::max_element(u.begin(), u.end()) - u.begin();
        double prev = -1.0, prev_eu = -1e9;
        for (double beta : {0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 20.0, 100.0}) {
            const auto p = boltzmann_prob(u, beta);
            const double eu = p.dot(Eigen::Map<const Eigen::VectorXd>(u.data(), n));
            CHECK(p(best) >= prev - 1e-12);
            CHECK(eu >= prev_eu - 1e-12);
            prev = p(best);
            prev_eu = eu;
        }
    }
}

TEST_CASE("log-likelihood derivatives match finite differences") {
    const auto obs = simulate_pairs(1.5, 200, 9);
    for (double b : {0.1, 1.0, 3.0}) {
        const auto pt = choice_log_likelihood(obs, b);
        const double h = 1e-5;
        const auto up = choice_log_likelihood(obs, b + h), dn = choice_log_likelihood(obs, b - h);
        CHECK(std::abs(pt.value - naive_loglik(obs, b)) < 1e-9);
        CHECK(std::abs((up.value - dn.value) / (2 * h) - pt.d1) < 1e-5 * std::max(1.0, std::abs(pt.d1)));
        CHECK(std::abs((up.d1 - dn.d1) / (2 * h) - pt.d2) < 1e-5 * std::max(1.0, std::abs(pt.d2)));
        CHECK(pt.d2 <= 0.0);
    }
}

TEST_CASE("fit_beta agrees with a grid search of the likelihood") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto obs = simulate_pairs(2.0, 500, seed);
        const auto est = fit_beta(obs);
        double best = -1e300, arg = 0.0;
        for (double b = 0.0; b <= 10.0; b += 1e-3) {
            const double v = naive_loglik(obs, b);
            if (v > best) {
                best = v;
                arg = b;
            }
        }
        CHECK(std::abs(est.beta_hat - arg) < 2e-3);
        CHECK_FALSE(est.saturated);
        CHECK(est.n_obs == 500);
        CHECK(std::abs(est.stderr_ - 1.0 / std::sqrt(-choice_log_likelihood(obs, est.beta_hat).d2)) < 1e-12);
    }
}

TEST_CASE("fit_beta recovers the generating beta") {
    int within = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto est = fit_beta(simulate_pairs(1.0, 2000, 100 + seed));
        within += std::abs(est.beta_hat - 1.0) <= 3.0 * est.stderr_;
    }
    CHECK(within >= 18);
}

TEST_CASE("fit_beta edge cases") {
    std::vector<ChoiceObservation> perfect{{{1.0, 0.0}, 0, {}, ""}, {{0.0, 2.0}, 1, {}, ""}};
    const auto top = fit_beta(perfect);
    CHECK(top.saturated);
    CHECK(top.beta_hat == kBetaMax);
    CHECK(std::isinf(top.stderr_));
    std::vector<ChoiceObservation> contrary{{{1.0, 0.0}, 1, {}, ""}, {{0.0, 2.0}, 0, {}, ""}};
    const auto bottom = fit_beta(contrary);
    CHECK(bottom.saturated);
    CHECK(bottom.beta_hat == 0.0);
    CHECK_THROWS_AS(fit_beta({perfect[0]}), TooFewObservations);
    std::vector<ChoiceObservation> flat{{{1.0, 1.0}, 0, {}, ""}, {{2.0, 2.0}, 1, {}, ""}};
    CHECK_THROWS_AS(fit_beta(flat), Degenerate);
    std::vector<ChoiceObservation> bad{{{1.0, 0.0}, 2, {}, ""}, {{0.0, 1.0}, 0, {}, ""}};
    CHECK_THROWS_AS(fit_beta(bad), RangeError);
}

TEST_CASE("z-score normalization is scale invariant") {
    auto obs = simulate_pairs(1.0, 300, 4);
    auto scaled = obs;
    for (auto& o : scaled)
        for (auto& u : o.utilities) u = 10.0 * u + 3.0;
    const auto a = fit_beta(obs, kBetaMax, UtilityNormalization::zscore_within_set);
    const auto b = fit_beta(scaled, kBetaMax, UtilityNormalization::zscore_within_set);
    CHECK(std::abs(a.beta_hat - b.beta_hat) < 1e-7);
    CHECK(a.normalization == UtilityNormalization::zscore_within_set);
}

TEST_CASE("decomposition recovers additive dependencies exactly") {
    // Equal-mean gauge: both dependencies average 2.
    const std::map<std::string, double> type_beta{{"comparative", 1.0}, {"evaluative", 3.0}};
    const std::map<std::string, double> prog_beta{{"early", 1.5}, {"mid", 2.0}, {"late", 2.5}};
    std::vector<SliceEstimate> slices;
    for (const auto& [t, bt] : type_beta)
        for (const auto& [p, bp] : prog_beta) {
            RationalityEstimate e;
            e.beta_hat = 0.5 * bt + 0.5 * bp;
            e.n_obs = 100;
            slices.push_back({{{"type", t}, {"progress", p}}, e});
        }
    const auto d = decompose_beta(slices, {"type", "progress"});
    CHECK(d.k() == 2);
    CHECK(d.alpha.at("type") == 0.5);
    for (const auto& [t, bt] : type_beta) CHECK(std::abs(d.beta_d.at("type").at(t) - bt) < 1e-12);
    for (const auto& [p, bp] : prog_beta) CHECK(std::abs(d.beta_d.at("progress").at(p) - bp) < 1e-12);
    CHECK(std::abs(d.predict({{"type", "evaluative"}, {"progress", "late"}}) - 2.75) < 1e-12);
    CHECK_THROWS_AS(d.predict({{"type", "descriptive"}, {"progress", "late"}}), MissingSlice);

    slices.pop_back();
    CHECK_THROWS_AS(decompose_beta(slices, {"type", "progress"}), MissingSlice);
    CHECK_THROWS_AS(decompose_beta(slices, {"type", "progress"}, {{"type", 0.7}, {"progress", 0.7}}), ConfigError);
}

TEST_CASE("single dependency decomposition equals the slice fits") {
    std::vector<SliceEstimate> slices;
    for (auto [name, beta] : {std::pair{"a", 0.5}, std::pair{"b", 2.0}}) {
        const auto obs = simulate_pairs(beta, 400, 17, {{"type", name}});
        slices.push_back({{{"type", name}}, fit_beta(obs)});
    }
    const auto d = decompose_beta(slices, {"type"});
    CHECK(d.beta_d.at("type").at("a") == doctest::Approx(slices[0].estimate.beta_hat).epsilon(1e-12));
    CHECK(d.beta_d.at("type").at("b") == doctest::Approx(slices[1].estimate.beta_hat).epsilon(1e-12));
}

TEST_CASE("calibration schedule structure") {
    CalibrationSettings s;
    s.initial_items = 10;
    s.phases = {{50, 5, CalibrationPhase::Kind::calibration}, {30, 4, CalibrationPhase::Kind::repeat}};
    ModeSpec main{SamplerMode::random, 3};
    const auto sched = calibration_schedule(s, main, true);
    CHECK(sched.initial.source == SampleSource::calibration);
    REQUIRE(sched.entries.size() == 5);
    CHECK(sched.entries[0].trigger.threshold == 10);
    CHECK(sched.entries[0].mode == main);
    CHECK(sched.entries[1].trigger.threshold == 50);
    CHECK(sched.entries[1].mode.source == SampleSource::calibration);
    CHECK(sched.entries[2].trigger.threshold == 5);
    CHECK(sched.entries[3].mode.mode == SamplerMode::repeat);
    CHECK(sched.entries[4].trigger.threshold == 4);
    CHECK_THROWS_AS(calibration_schedule(s, main, false), ConfigError);

    CalibrationSettings cont;
    cont.rho = 0.2;
    const auto mixed = calibration_schedule(cont, main, true);
    CHECK(mixed.initial.mode == SamplerMode::interleaved);
    CHECK(mixed.initial.rho == 0.2);
    CHECK(mixed.entries.empty());
    CHECK(calibration_settings_from_json(to_json(s)) == s);
}

TEST_CASE("calibration pairs target the requested gap") {
    std::mt19937_64 rng(8);
    std::vector<double> pool;
    for (int i = 0; i < 500; ++i) pool.push_back(uniform01(rng) * 10.0);
    const auto pairs = select_calibration_pairs(pool, 200, 1.2, rng);
    CHECK(pairs.size() == 200);
    double mean_gap = 0.0;
    for (auto [i, j] : pairs) {
        CHECK(i != j);
        mean_gap += std::abs(pool[i] - pool[j]);
    }
    mean_gap /= 200.0;
    CHECK(std::abs(mean_gap - 1.2) < 0.2);
    CHECK(informative_gap(2.0) == doctest::Approx(1.2));
    CHECK_THROWS_AS(select_calibration_pairs({1.0}, 1, 1.0, rng), InsufficientData);
}

TEST_CASE("consistency score") {
    CHECK(consistency_score({{"a", RepeatSet::Kind::evaluative, {0.5, 0.5, 0.5}}}) == 1.0);
    CHECK(consistency_score({{"a", RepeatSet::Kind::comparative, {1, 1}}, {"b", RepeatSet::Kind::comparative, {-1, -1}}}) ==
          1.0);
    CHECK(consistency_score({{"a", RepeatSet::Kind::evaluative, {-1.0, 1.0}}}) == 0.0);
    CHECK_THROWS_AS(consistency_score({{"a", RepeatSet::Kind::comparative, {1}}}), NoRepeats);
    CHECK_THROWS_AS(consistency_score({}), NoRepeats);

    std::mt19937_64 rng(21);
    std::vector<RepeatSet> coin;
    for (int i = 0; i < 1000; ++i)
        coin.push_back({std::to_string(i), RepeatSet::Kind::comparative, {rng() % 2 ? 1.0 : -1.0, rng() % 2 ? 1.0 : -1.0}});
    CHECK(std::abs(consistency_score(coin) - 0.5) < 0.05);
}
