#include "hfkit/rationality.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <set>

#include "hfkit/gridworld.hpp"

namespace hfkit {

using nlohmann::json;

namespace {

std::vector<double> normalized(const std::vector<double>& u, UtilityNormalization n) {
    if (n == UtilityNormalization::raw) return u;
    const double mean = std::accumulate(u.begin(), u.end(), 0.0) / static_cast<double>(u.size());
    double var = 0.0;
    for (double x : u) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / static_cast<double>(u.size()));
    std::vector<double> out(u.size(), 0.0);
    if (sd > 0.0)
        for (std::size_t i = 0; i < u.size(); ++i) out[i] = (u[i] - mean) / sd;
    return out;
}

void check_observation(const ChoiceObservation& o) {
    if (o.utilities.size() < 2) throw RangeError("choice set needs at least two options");
    if (o.chosen < 0 || o.chosen >= static_cast<int>(o.utilities.size())) throw RangeError("chosen index out of range");
    for (double u : o.utilities)
        if (!std::isfinite(u)) throw RangeError("utilities must be finite");
}

std::string combo_key(const ChoiceContext& slice, const std::vector<std::string>& deps) {
    std::string key;
    for (const auto& d : deps) key += d + "=" + slice.at(d) + ";";
    return key;
}

}  // namespace

std::string_view to_string(UtilityNormalization n) {
    return n == UtilityNormalization::raw ? "raw" : "zscore_within_set";
}

LikelihoodPoint choice_log_likelihood(const std::vector<ChoiceObservation>& obs, double beta,
                                      UtilityNormalization normalization) {
    LikelihoodPoint out;
    for (const auto& o : obs) {
        const auto u = normalized(o.utilities, normalization);
        const Eigen::Map<const Eigen::VectorXd> uv(u.data(), static_cast<Eigen::Index>(u.size()));
        const Eigen::VectorXd z = beta * uv;
        const double lse = log_sum_exp(z);
        const Eigen::VectorXd p = (z.array() - lse).exp().matrix();
        const double mean = p.dot(uv);
        const double second = p.dot(uv.cwiseProduct(uv));
        out.value += z(o.chosen) - lse;
        out.d1 += u[static_cast<std::size_t>(o.chosen)] - mean;
        out.d2 -= second - mean * mean;
    }
    return out;
}

RationalityEstimate fit_beta(const std::vector<ChoiceObservation>& obs, double beta_max,
                             UtilityNormalization normalization) {
    if (obs.size() < 2) throw TooFewObservations("fitting beta needs at least two observations");
    bool informative = false;
    for (const auto& o : obs) {
        check_observation(o);
        const auto [lo, hi] = std::minmax_element(o.utilities.begin(), o.utilities.end());
        informative = informative || *lo != *hi;
    }
    if (!informative) throw Degenerate("every choice set has identical utilities");

    RationalityEstimate est;
    est.n_obs = static_cast<std::int64_t>(obs.size());
    est.normalization = normalization;

    auto d1 = [&](double b) { return choice_log_likelihood(obs, b, normalization).d1; };
    double beta = 0.0;
    if (d1(0.0) <= 0.0) {
        beta = 0.0;
        est.saturated = true;
    } else if (d1(beta_max) >= 0.0) {
        beta = beta_max;
        est.saturated = true;
    } else {
        double lo = 0.0, hi = beta_max;
        while (hi - lo > 1e-8) {
            const double mid = 0.5 * (lo + hi);
            (d1(mid) > 0.0 ? lo : hi) = mid;
        }
        beta = 0.5 * (lo + hi);
    }
    est.beta_hat = beta;
    const double info = -choice_log_likelihood(obs, beta, normalization).d2;
    est.stderr_ = info > 0.0 && !est.saturated ? 1.0 / std::sqrt(info) : std::numeric_limits<double>::infinity();
    return est;
}

// ---------------------------------------------------------------------------

double BetaDecomposition::predict(const ChoiceContext& ctx) const {
    double out = 0.0;
    for (const auto& d : dependencies) {
        auto value = ctx.find(d);
        if (value == ctx.end()) throw MissingSlice("context lacks dependency '" + d + "'");
        const auto& table = beta_d.at(d);
        auto it = table.find(value->second);
        if (it == table.end()) throw MissingSlice("no estimate for " + d + "=" + value->second);
        out += alpha.at(d) * it->second;
    }
    return out;
}

BetaDecomposition decompose_beta(const std::vector<SliceEstimate>& estimates, const std::vector<std::string>& dependencies,
                                 const std::map<std::string, double>& alpha) {
    if (dependencies.empty()) throw ConfigError("decomposition needs at least one dependency");
    if (estimates.empty()) throw MissingSlice("no slice estimates");
    BetaDecomposition out;
    out.dependencies = dependencies;
    const double k = static_cast<double>(dependencies.size());
    if (alpha.empty()) {
        for (const auto& d : dependencies) out.alpha[d] = 1.0 / k;
    } else {
        double sum = 0.0;
        for (const auto& d : dependencies) {
            auto it = alpha.find(d);
            if (it == alpha.end() || !(it->second > 0.0)) throw ConfigError("alpha for '" + d + "' must be positive");
            out.alpha[d] = it->second;
            sum += it->second;
        }
        if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("alpha weights must sum to 1");
    }

    std::map<std::string, std::set<std::string>> values;
    std::set<std::string> combos;
    for (const auto& s : estimates) {
        for (const auto& d : dependencies) {
            auto it = s.slice.find(d);
            if (it == s.slice.end()) throw MissingSlice("slice lacks dependency '" + d + "'");
            values[d].insert(it->second);
        }
        combos.insert(combo_key(s.slice, dependencies));
    }
    std::size_t expected = 1;
    for (const auto& d : dependencies) expected *= values[d].size();
    if (combos.size() != expected)
        throw MissingSlice(std::to_string(expected - std::min(expected, combos.size())) +
                           " cells of the full factorial have no estimate");

    auto weight = [](const SliceEstimate& s) { return static_cast<double>(std::max<std::int64_t>(s.estimate.n_obs, 1)); };
    double total_w = 0.0, total = 0.0;
    for (const auto& s : estimates) {
        total_w += weight(s);
        total += weight(s) * s.estimate.beta_hat;
    }
    out.grand_mean = total / total_w;

    for (const auto& d : dependencies) {
        const double a = out.alpha.at(d);
        for (const auto& v : values[d]) {
            double w = 0.0, acc = 0.0;
            for (const auto& s : estimates) {
                if (s.slice.at(d) != v) continue;
                w += weight(s);
                acc += weight(s) * s.estimate.beta_hat;
            }
            const double m = acc / w;
            out.marginal[d][v] = m;
            out.beta_d[d][v] = (m - (1.0 - a) * out.grand_mean) / a;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

SamplerSchedule calibration_schedule(const CalibrationSettings& settings, const ModeSpec& main, bool has_calibration_buffer) {
    if (!(settings.rho >= 0.0 && settings.rho <= 1.0)) throw ConfigError("calibration.rho must lie in [0,1]");
    if (settings.initial_items < 0) throw ConfigError("calibration.initial_items must be non-negative");
    bool needs_calibration = settings.initial_items > 0 || settings.rho > 0.0;
    for (const auto& p : settings.phases) {
        if (p.items < 1) throw ConfigError("calibration phase items must be at least 1");
        if (p.after_feedback < 1) throw ConfigError("calibration phase after_feedback must be at least 1");
        needs_calibration = needs_calibration || p.kind == CalibrationPhase::Kind::calibration;
    }
    if (needs_calibration && !has_calibration_buffer) throw ConfigError("calibration requested without a calibration buffer");

    ModeSpec main_mode = main;
    if (settings.rho > 0.0) main_mode = ModeSpec{SamplerMode::interleaved, settings.seed, 0, settings.rho, SampleSource::main};
    const ModeSpec calib{SamplerMode::random, settings.seed, 0, 0.0, SampleSource::calibration};
    const ModeSpec repeat{SamplerMode::repeat, settings.seed, 0, 0.0, SampleSource::main};

    SamplerSchedule s;
    s.initial = settings.initial_items > 0 ? calib : main_mode;
    if (settings.initial_items > 0) s.entries.push_back({{Trigger::Kind::feedback_count, settings.initial_items}, main_mode});
    for (const auto& p : settings.phases) {
        s.entries.push_back({{Trigger::Kind::feedback_count, p.after_feedback},
                             p.kind == CalibrationPhase::Kind::calibration ? calib : repeat});
        s.entries.push_back({{Trigger::Kind::feedback_count, p.items}, main_mode});
    }
    return s;
}

json to_json(const CalibrationSettings& s) {
    json phases = json::array();
    for (const auto& p : s.phases)
        phases.push_back({{"after_feedback", p.after_feedback},
                          {"items", p.items},
                          {"kind", p.kind == CalibrationPhase::Kind::calibration ? "calibration" : "repeat"}});
    return {{"initial_items", s.initial_items}, {"phases", phases}, {"rho", s.rho}, {"seed", s.seed}};
}

CalibrationSettings calibration_settings_from_json(const json& j) {
    CalibrationSettings s;
    s.initial_items = j.value("initial_items", std::int64_t{0});
    s.rho = j.value("rho", 0.0);
    s.seed = j.value("seed", std::uint64_t{0});
    for (const auto& p : j.value("phases", json::array())) {
        CalibrationPhase phase;
        phase.after_feedback = p.at("after_feedback").get<std::int64_t>();
        phase.items = p.at("items").get<std::int64_t>();
        const auto kind = p.value("kind", std::string("calibration"));
        if (kind != "calibration" && kind != "repeat") throw ConfigError("unknown calibration phase kind '" + kind + "'");
        phase.kind = kind == "calibration" ? CalibrationPhase::Kind::calibration : CalibrationPhase::Kind::repeat;
        s.phases.push_back(phase);
    }
    return s;
}

std::vector<std::pair<std::size_t, std::size_t>> select_calibration_pairs(const std::vector<double>& pool, int m,
                                                                          double target_gap, std::mt19937_64& rng,
                                                                          int candidates) {
    if (pool.size() < 2) throw InsufficientData("calibration pool needs at least two items");
    if (!(target_gap > 0.0)) throw RangeError("target gap must be positive");
    auto index = [&](std::size_t n) { return std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n))); };
    const double log_target = std::log(target_gap);
    std::vector<std::pair<std::size_t, std::size_t>> out;
    out.reserve(static_cast<std::size_t>(std::max(m, 0)));
    for (int n = 0; n < m; ++n) {
        const auto i = index(pool.size());
        std::size_t best = i == 0 ? 1 : 0;
        double best_score = std::numeric_limits<double>::infinity();
        for (int c = 0; c < candidates; ++c) {
            const auto j = index(pool.size());
            if (j == i) continue;
            const double score = std::abs(std::log(std::abs(pool[j] - pool[i]) + 1e-9) - log_target);
            if (score < best_score) {
                best_score = score;
                best = j;
            }
        }
        out.emplace_back(i, best);
    }
    return out;
}

double consistency_score(const std::vector<RepeatSet>& repeats) {
    double agree = 0.0;
    std::int64_t pairs = 0;
    for (const auto& set : repeats) {
        for (std::size_t a = 0; a < set.values.size(); ++a) {
            for (std::size_t b = a + 1; b < set.values.size(); ++b) {
                if (set.kind == RepeatSet::Kind::evaluative)
                    agree += 1.0 - std::min(1.0, std::abs(set.values[a] - set.values[b]) / 2.0);
                else
                    agree += set.values[a] == set.values[b] ? 1.0 : 0.0;
                ++pairs;
            }
        }
    }
    if (pairs == 0) throw NoRepeats("no target received repeated feedback");
    return agree / static_cast<double>(pairs);
}

}  // namespace hfkit
