#include "hfkit/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "hfkit/rationality.hpp"
#include "hfkit/translator.hpp"

namespace hfkit {

namespace {

AnnotatorProfile uniform_profile(double beta, std::uint64_t seed) {
    AnnotatorProfile p;
    for (auto k : kFeedbackKinds) p.beta_by_type[k] = beta;
    p.rng_seed = seed;
    return p;
}

}  // namespace

std::vector<EpisodeRecord> mixed_rollouts(const GridSpec& spec, const ValueTable& q_star, int per_policy,
                                          std::uint64_t seed) {
    const PolicyKind policies[] = {PolicyKind::epsilon(0.0), PolicyKind::epsilon(0.1),  PolicyKind::epsilon(0.3),
                                   PolicyKind::epsilon(0.5), PolicyKind::epsilon(1.0),  PolicyKind::boltzmann(1.0),
                                   PolicyKind::boltzmann(5.0), PolicyKind::boltzmann(20.0)};
    std::vector<EpisodeRecord> out;
    std::uint64_t s = seed;
    for (const auto& p : policies) {
        auto batch = rollout_policy(spec, q_star, p, per_policy, s++);
        out.insert(out.end(), std::make_move_iterator(batch.begin()), std::make_move_iterator(batch.end()));
    }
    return out;
}

SegmentPool segment_pool(const std::vector<EpisodeRecord>& episodes, int max_len) {
    std::map<double, Segment> by_return;
    for (const auto& ep : episodes) {
        const int L = ep.length();
        for (int a = 0; a < L; ++a) {
            std::vector<int> ends{L};
            for (int b = a + 1; b < std::min(L, a + max_len); ++b) ends.push_back(b);
            for (int b : ends) {
                double r = 0.0;
                for (int t = a; t < b; ++t) r += ep.gt_rewards[static_cast<std::size_t>(t)];
                const double key = std::round(r * 1e10) / 1e10;
                if (!by_return.contains(key)) by_return.emplace(key, make_segment(ep, a, b));
            }
        }
    }
    SegmentPool pool;
    for (auto& [key, seg] : by_return) {
        pool.returns.push_back(seg.gt_return());
        pool.segments.push_back(std::move(seg));
    }
    return pool;
}

SimulationWorld make_world(const std::filesystem::path& dir, const std::string& env, int per_policy,
                           std::uint64_t seed) {
    SimulationWorld w;
    w.spec = resolve_environment(env);
    w.q_star = value_iteration(w.spec);
    w.episodes = mixed_rollouts(w.spec, w.q_star, per_policy, seed);
    w.buffer = EpisodeBuffer::open(dir);
    w.buffer->ingest(w.episodes);
    w.catalog.add(w.buffer);
    w.pool = segment_pool(w.episodes);
    w.config.experiment_id = "simulation";
    w.config.env = env;
    w.config.buffer = dir.string();
    w.config.enabled_feedback_types = {kFeedbackKinds.begin(), kFeedbackKinds.end()};
    w.config.rating_scale = RatingScale{-1.0, 1.0, 0};
    return w;
}

std::size_t write_rollout_store(const std::filesystem::path& dir, const std::string& env, int per_policy,
                                std::uint64_t seed, const std::string& source_kind) {
    const auto spec = resolve_environment(env);
    auto episodes = mixed_rollouts(spec, value_iteration(spec), per_policy, seed);
    for (auto& ep : episodes) ep.id.source_kind = source_kind;
    return EpisodeBuffer::open(dir)->ingest(episodes);
}

std::vector<StandardizedFeedback> translate_event(const RawFeedbackEvent& ev, SimulationWorld& world) {
    const TranslationContext ctx{world.config, world.spec, world.catalog};
    return translate(ev, ctx);
}

// ---------------------------------------------------------------------------

namespace {

// Runs the adaptive design; `on_round` receives the records of each round
// and returns the refitted beta.
template <typename OnRound>
void adaptive_rounds(SimulationWorld& world, SimulatedAnnotator& annotator, const nlohmann::json& extra,
                     std::uint64_t seed, const CalibrationDesign& design, OnRound on_round) {
    std::mt19937_64 rng(seed);
    double beta_hat = design.initial_beta;
    int remaining = design.choices;
    for (int round = 0; round < design.rounds && remaining > 0; ++round) {
        const int m = round + 1 == design.rounds ? remaining : std::min(remaining, design.choices / design.rounds);
        remaining -= m;
        const auto pairs =
            select_calibration_pairs(world.pool.returns, m, informative_gap(beta_hat), rng, design.candidates);
        std::vector<StandardizedFeedback> records;
        for (const auto& [i, j] : pairs) {
            auto ev = annotator.annotate_comparative(std::vector<Segment>{world.pool.segments[i], world.pool.segments[j]});
            for (const auto& [k, v] : extra.items()) ev.extra[k] = v;
            for (auto& r : translate_event(ev, world)) records.push_back(std::move(r));
        }
        beta_hat = on_round(std::move(records));
    }
}

}  // namespace

RecoveryRun simulate_beta_recovery(SimulationWorld& world, double beta, std::uint64_t seed,
                                   const CalibrationDesign& design) {
    SimulatedAnnotator annotator(uniform_profile(beta, seed), world.spec, world.config.rating_scale);
    std::vector<ChoiceObservation> obs;
    RecoveryRun run;
    run.beta_true = beta;
    adaptive_rounds(world, annotator, {{"calibration", true}}, seed, design, [&](std::vector<StandardizedFeedback> recs) {
        const auto fresh = choice_observations(recs, world.catalog, true);
        obs.insert(obs.end(), fresh.begin(), fresh.end());
        run.estimate = fit_beta(obs);
        return run.estimate.beta_hat;
    });
    const double err = std::abs(run.estimate.beta_hat - beta);
    run.within_tolerance = err <= 0.1 * beta;
    run.within_3se = err <= 3.0 * run.estimate.stderr_;
    return run;
}

std::vector<StandardizedFeedback> simulate_calibration_records(SimulationWorld& world, double beta,
                                                               const std::map<std::string, std::string>& context,
                                                               std::size_t phase, std::uint64_t seed,
                                                               const CalibrationDesign& design) {
    SimulatedAnnotator annotator(uniform_profile(beta, seed), world.spec, world.config.rating_scale);
    annotator.set_phase(phase);
    nlohmann::json extra = {{"calibration", true}};
    if (!context.empty()) extra["context"] = context;
    std::vector<StandardizedFeedback> all;
    std::vector<ChoiceObservation> obs;
    adaptive_rounds(world, annotator, extra, seed, design, [&](std::vector<StandardizedFeedback> recs) {
        const auto fresh = choice_observations(recs, world.catalog, true);
        obs.insert(obs.end(), fresh.begin(), fresh.end());
        all.insert(all.end(), std::make_move_iterator(recs.begin()), std::make_move_iterator(recs.end()));
        return fit_beta(obs).beta_hat;
    });
    return all;
}

FactorialResult simulate_factorial(SimulationWorld& world, const std::map<std::string, double>& beta_type,
                                   const std::map<std::string, double>& beta_progress, int obs_per_cell,
                                   std::uint64_t seed, double tolerance) {
    FactorialResult out;
    out.truth["type"] = beta_type;
    std::map<std::string, std::size_t> phase_of;
    for (const auto& [value, beta] : beta_progress) {
        const std::size_t phase = phase_of.size();
        phase_of[value] = phase;
        out.truth["progress"][std::to_string(phase)] = beta;
    }
    CalibrationDesign design;
    design.choices = obs_per_cell;

    std::vector<StandardizedFeedback> records;
    std::uint64_t cell_seed = seed;
    for (const auto& [type, bt] : beta_type) {
        for (const auto& [progress, bp] : beta_progress) {
            const double beta = 0.5 * bt + 0.5 * bp;
            auto recs = simulate_calibration_records(world, beta, {{"type", type}}, phase_of.at(progress), cell_seed++, design);
            records.insert(records.end(), std::make_move_iterator(recs.begin()), std::make_move_iterator(recs.end()));
        }
    }
    out.report = beta_report(records, world.catalog);
    out.within_tolerance = out.report.decomposition.has_value();
    if (!out.report.decomposition) return out;
    const auto& d = *out.report.decomposition;
    for (const auto& [dep, values] : out.truth) {
        for (const auto& [value, beta] : values) {
            double err = std::numeric_limits<double>::infinity();
            if (d.beta_d.contains(dep) && d.beta_d.at(dep).contains(value))
                err = std::abs(d.beta_d.at(dep).at(value) - beta) / beta;
            out.relative_error[dep][value] = err;
            out.within_tolerance = out.within_tolerance && err <= tolerance;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

RewardLearningResult simulate_reward_learning(SimulationWorld& world, const RewardLearningOptions& options) {
    SimulatedAnnotator annotator(uniform_profile(options.beta, options.seed), world.spec, world.config.rating_scale);
    std::mt19937_64 rng(options.seed ^ 0x5eedULL);
    auto pick = [&](std::size_t n) { return std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n))); };
    auto random_segment = [&]() {
        const auto& ep = world.episodes[pick(world.episodes.size())];
        const int len = 1 + static_cast<int>(pick(static_cast<std::size_t>(std::min(ep.length(), options.max_segment))));
        const int s = static_cast<int>(pick(static_cast<std::size_t>(ep.length() - len + 1)));
        return make_segment(ep, s, s + len);
    };

    std::vector<StandardizedFeedback> records;
    RewardLearningResult out;
    while (out.pairs < static_cast<std::size_t>(options.pairs)) {
        const auto a = random_segment(), b = random_segment();
        if (a.id == b.id && a.start == b.start && a.end == b.end) continue;
        for (auto& r : translate_event(annotator.annotate_comparative(std::vector<Segment>{a, b}), world))
            records.push_back(std::move(r));
        ++out.pairs;
    }
    out.records = records.size();
    const auto data = assemble_training_set(records, world.catalog, world.spec);
    auto trained = train(make_linear_model(FeatureMap::onehot(world.spec)), data, world.spec, {0, 1, 0, 0}, options.train);
    out.model = std::move(trained.model);
    out.evaluation = evaluate_model(out.model, world.spec);
    return out;
}

}  // namespace hfkit
