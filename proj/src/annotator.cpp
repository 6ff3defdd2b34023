#include "hfkit/annotator.hpp"

#include <algorithm>
#include <cmath>

#include "hfkit/rationality.hpp"

namespace hfkit {

using nlohmann::json;

namespace {

std::size_t sample_index(const Eigen::VectorXd& p, std::mt19937_64& rng) {
    const double u = uniform01(rng);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        acc += p(i);
        if (u < acc) return static_cast<std::size_t>(i);
    }
    return static_cast<std::size_t>(p.size() - 1);
}

// Successive Boltzmann choices: position i holds the index ranked i-th.
std::vector<std::size_t> sample_order(const std::vector<double>& utilities, double beta, std::mt19937_64& rng) {
    std::vector<std::size_t> remaining(utilities.size());
    for (std::size_t i = 0; i < remaining.size(); ++i) remaining[i] = i;
    std::vector<std::size_t> order;
    while (remaining.size() > 1) {
        std::vector<double> u;
        for (auto i : remaining) u.push_back(utilities[i]);
        const auto pick = sample_index(boltzmann_prob(u, beta), rng);
        order.push_back(remaining[pick]);
        remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(pick));
    }
    order.push_back(remaining.front());
    return order;
}

json action_name(Action a) { return std::string(to_string(a)); }

Target target_of(const Segment& s) { return segment_target(s.id, s.start, s.end); }

}  // namespace

double AnnotatorProfile::effective_beta(FeedbackKind kind, std::size_t phase) const {
    const auto it = beta_by_type.find(kind);
    const double base = it == beta_by_type.end() ? 1.0 : it->second;
    if (beta_progress_modifier.empty()) return base;
    return base * beta_progress_modifier[std::min(phase, beta_progress_modifier.size() - 1)];
}

void validate_profile(const AnnotatorProfile& p) {
    for (const auto& [kind, beta] : p.beta_by_type)
        if (!(beta >= 0.0)) throw ConfigError("beta for " + std::string(to_string(kind)) + " must be non-negative");
    for (double m : p.beta_progress_modifier)
        if (!(m > 0.0) || !std::isfinite(m)) throw ConfigError("progress multipliers must be positive");
    if (!(p.latency.mean_ms >= 0.0 && p.latency.jitter_ms >= 0.0)) throw ConfigError("latency model must be non-negative");
}

json to_json(const AnnotatorProfile& p) {
    json betas = json::object();
    for (const auto& [kind, beta] : p.beta_by_type) betas[std::string(to_string(kind))] = beta;
    return {{"beta_by_type", betas},
            {"beta_progress_modifier", p.beta_progress_modifier},
            {"rng_seed", p.rng_seed},
            {"latency", {{"mean_ms", p.latency.mean_ms}, {"jitter_ms", p.latency.jitter_ms}}},
            {"user_id", p.user_id},
            {"session_id", p.session_id},
            {"start_time_ms", p.start_time_ms}};
}

AnnotatorProfile annotator_profile_from_json(const json& j) {
    AnnotatorProfile p;
    try {
        const auto betas = j.value("beta_by_type", json::object());
        for (const auto& [kind, beta] : betas.items())
            p.beta_by_type[feedback_kind_from_string(kind)] = beta.get<double>();
        p.beta_progress_modifier = j.value("beta_progress_modifier", std::vector<double>{});
        p.rng_seed = j.value("rng_seed", std::uint64_t{0});
        if (j.contains("latency")) {
            p.latency.mean_ms = j.at("latency").value("mean_ms", p.latency.mean_ms);
            p.latency.jitter_ms = j.at("latency").value("jitter_ms", p.latency.jitter_ms);
        }
        p.user_id = j.value("user_id", p.user_id);
        p.session_id = j.value("session_id", p.session_id);
        p.start_time_ms = j.value("start_time_ms", p.start_time_ms);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("annotator profile: ") + e.what());
    }
    validate_profile(p);
    return p;
}

double normalized_score(const GridSpec& spec, const std::vector<double>& rewards) {
    if (rewards.empty()) return 0.0;
    const double lo = std::min({spec.step_penalty, spec.lava_reward, spec.goal_reward});
    const double hi = std::max({spec.step_penalty, spec.lava_reward, spec.goal_reward});
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= static_cast<double>(rewards.size());
    if (!(hi > lo)) return 0.0;
    return std::clamp(2.0 * (mean - lo) / (hi - lo) - 1.0, -1.0, 1.0);
}

SimulatedAnnotator::SimulatedAnnotator(AnnotatorProfile profile, GridSpec spec, RatingScale scale)
    : profile_(std::move(profile)), spec_(std::move(spec)), scale_(scale), clock_ms_(profile_.start_time_ms),
      rng_(profile_.rng_seed) {
    validate_profile(profile_);
}

void SimulatedAnnotator::set_identity(std::string session_id, std::string user_id) {
    profile_.session_id = std::move(session_id);
    profile_.user_id = std::move(user_id);
}

RawFeedbackEvent SimulatedAnnotator::base_event(RawEventKind kind, FeedbackKind type, std::string ui_element) {
    RawFeedbackEvent ev;
    ev.session_id = profile_.session_id;
    ev.user_id = profile_.user_id;
    ev.ui_element = std::move(ui_element);
    ev.kind = kind;
    const double latency =
        std::max(0.0, std::normal_distribution<double>(profile_.latency.mean_ms, profile_.latency.jitter_ms)(rng_));
    ev.latency_ms = static_cast<std::int64_t>(std::llround(latency));
    clock_ms_ += ev.latency_ms;
    ev.client_timestamp = clock_ms_;
    ev.extra = {{"effective_beta", profile_.effective_beta(type, phase_)},
                {"phase", static_cast<std::int64_t>(phase_)},
                {"simulated", true}};
    return ev;
}

RawFeedbackEvent SimulatedAnnotator::annotate_comparative(const std::vector<EpisodeRecord>& options) {
    std::vector<double> u;
    for (const auto& ep : options) u.push_back(sum_rewards(ep.gt_rewards));
    auto ev = base_event(RawEventKind::ranking, FeedbackKind::comparative, "ranking");
    const double beta = ev.extra.at("effective_beta").get<double>();
    json targets = json::array();
    for (auto i : sample_order(u, beta, rng_)) targets.push_back(to_json(episode_target(options[i].id)));
    ev.payload = {{"targets", targets}};
    return ev;
}

RawFeedbackEvent SimulatedAnnotator::annotate_comparative(const std::vector<Segment>& options) {
    std::vector<double> u;
    for (const auto& s : options) u.push_back(s.gt_return());
    auto ev = base_event(RawEventKind::ranking, FeedbackKind::comparative, "ranking");
    const double beta = ev.extra.at("effective_beta").get<double>();
    json targets = json::array();
    for (auto i : sample_order(u, beta, rng_)) targets.push_back(to_json(target_of(options[i])));
    ev.payload = {{"targets", targets}};
    return ev;
}

RawFeedbackEvent SimulatedAnnotator::rating_event(const Target& target, const std::vector<double>& rewards) {
    auto ev = base_event(RawEventKind::rating, FeedbackKind::evaluative, "rating");
    const double beta = ev.extra.at("effective_beta").get<double>();
    const double truth = normalized_score(spec_, rewards);
    const double noisy = std::clamp(truth + std::normal_distribution<double>(0.0, 1.0 / (1.0 + beta))(rng_), -1.0, 1.0);
    double value = scale_.min + (noisy + 1.0) / 2.0 * (scale_.max - scale_.min);
    if (scale_.steps >= 2) {
        const double unit = (scale_.max - scale_.min) / (scale_.steps - 1);
        value = scale_.min + std::round((value - scale_.min) / unit) * unit;
    }
    ev.payload = {{"target", to_json(target)}, {"value", value}};
    ev.extra["gt_score"] = truth;
    return ev;
}

RawFeedbackEvent SimulatedAnnotator::annotate_evaluative(const EpisodeRecord& episode) {
    return rating_event(episode_target(episode.id), episode.gt_rewards);
}

RawFeedbackEvent SimulatedAnnotator::annotate_evaluative(const Segment& segment) {
    return rating_event(target_of(segment), segment.gt_rewards);
}

std::optional<RawFeedbackEvent> SimulatedAnnotator::annotate_corrective(const EpisodeRecord& episode, int step,
                                                                        const ValueTable& q_star) {
    if (step < 0 || step >= episode.length()) throw RangeError("correction step outside the episode");
    auto ev = base_event(RawEventKind::correction, FeedbackKind::corrective, "correction");
    const double beta = ev.extra.at("effective_beta").get<double>();
    const Cell at = episode.states[static_cast<std::size_t>(step)].agent;
    const Action a = sample_boltzmann_action(q_star, spec_, at, beta, rng_);
    if (a == episode.actions[static_cast<std::size_t>(step)]) return std::nullopt;
    ev.payload = {{"target", to_json(episode_target(episode.id))}, {"step", step}, {"action", action_name(a)}};
    return ev;
}

RawFeedbackEvent SimulatedAnnotator::annotate_demonstrative(const ValueTable& q_star) {
    auto ev = base_event(RawEventKind::demonstration, FeedbackKind::demonstrative, "demonstration");
    const double beta = ev.extra.at("effective_beta").get<double>();
    const auto ep = rollout_policy(spec_, q_star, PolicyKind::boltzmann(beta), 1, rng_())[0];
    json actions = json::array();
    for (auto a : ep.actions) actions.push_back(action_name(a));
    ev.payload = {{"actions", actions}};
    ev.extra["gt_return"] = ep.total_return;
    return ev;
}

std::vector<RawFeedbackEvent> SimulatedAnnotator::annotate_descriptive(const Target& target) {
    auto ev = base_event(RawEventKind::brush, FeedbackKind::descriptive, "brush");
    const double beta = ev.extra.at("effective_beta").get<double>();
    const double p_hit = beta / (1.0 + beta);
    const double p_false = 1.0 / (4.0 * (1.0 + beta));
    json positive = json::array(), negative = json::array();
    for (int i = 0; i < spec_.cell_count(); ++i) {
        const Cell c = spec_.cell_at(i);
        if (spec_.is_wall(c)) continue;
        const json cell = {c.x, c.y};
        if (spec_.is_goal(c) || spec_.is_lava(c)) {
            if (uniform01(rng_) < p_hit) (spec_.is_goal(c) ? positive : negative).push_back(cell);
        } else if (uniform01(rng_) < p_false) {
            (uniform01(rng_) < 0.5 ? positive : negative).push_back(cell);
        }
    }
    std::vector<RawFeedbackEvent> out;
    for (auto [cells, sign] : {std::pair{&positive, 1}, std::pair{&negative, -1}}) {
        if (cells->empty()) continue;
        auto e = ev;
        e.payload = {{"target", to_json(target)}, {"cells", *cells}, {"sign", sign}};
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace hfkit
