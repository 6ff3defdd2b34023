#include "hfkit/session_sim.hpp"

#include <random>

namespace hfkit {

using nlohmann::json;

json to_json(const SessionRunSummary& s) {
    return {{"session_id", s.session_id},
            {"user_id", s.user_id},
            {"submitted", s.submitted},
            {"accepted", s.accepted},
            {"records", s.records},
            {"samples", s.samples},
            {"accepted_by_type", s.accepted_by_type},
            {"errors", s.errors},
            {"exhausted", s.exhausted}};
}

EpisodeRecord episode_from_render(const json& render, const GridSpec& spec) {
    try {
        const auto id = EpisodeId::from_key(render.at("key").get<std::string>());
        if (!id) throw ParseError(0, "malformed episode key");
        const auto& first = render.at("states").at(0);
        const Cell start{first.at(0).get<int>(), first.at(1).get<int>()};
        std::vector<Action> actions;
        for (const auto& a : render.at("actions")) {
            const auto action = action_from_string(a.get<std::string>());
            if (!action) throw ParseError(0, "unknown action " + a.get<std::string>());
            actions.push_back(*action);
        }
        return replay(spec, *id, start, actions);
    } catch (const json::exception& e) {
        throw ParseError(0, std::string("render payload: ") + e.what());
    }
}

namespace {

std::vector<RawFeedbackEvent> annotate(SimulatedAnnotator& annotator, FeedbackKind kind,
                                       const std::vector<EpisodeRecord>& episodes, const ValueTable& q_star,
                                       std::size_t slots) {
    std::vector<RawFeedbackEvent> out;
    switch (kind) {
        case FeedbackKind::comparative:
            if (episodes.size() >= 2 && episodes.size() <= slots) out.push_back(annotator.annotate_comparative(episodes));
            break;
        case FeedbackKind::evaluative:
            if (!episodes.empty()) out.push_back(annotator.annotate_evaluative(episodes.front()));
            break;
        case FeedbackKind::corrective: {
            if (episodes.empty() || episodes.front().length() == 0) break;
            const auto& ep = episodes.front();
            const int n = static_cast<int>(ep.length());
            const int first = std::uniform_int_distribution<int>(0, n - 1)(annotator.rng());
            for (int i = 0; i < n && out.empty(); ++i)
                if (auto ev = annotator.annotate_corrective(ep, (first + i) % n, q_star)) out.push_back(std::move(*ev));
            break;
        }
        case FeedbackKind::demonstrative:
            out.push_back(annotator.annotate_demonstrative(q_star));
            break;
        case FeedbackKind::descriptive:
            if (!episodes.empty()) out = annotator.annotate_descriptive(episode_target(episodes.front().id));
            break;
    }
    return out;
}

}  // namespace

SessionRunSummary run_simulated_session(ApiClient& client, const std::string& experiment_id, const SessionPlan& plan) {
    validate_profile(plan.profile);
    const auto config = config_from_json(client.request("GET", "/api/experiments/" + experiment_id));
    const auto spec = resolve_environment(config.env);
    const auto q_star = value_iteration(spec);

    auto kinds = plan.kinds;
    if (kinds.empty()) kinds.assign(config.enabled_feedback_types.begin(), config.enabled_feedback_types.end());
    if (kinds.empty()) throw ConfigError("no feedback type to simulate");

    const auto session =
        client.request("POST", "/api/experiments/" + experiment_id + "/sessions", {{"user_id", plan.profile.user_id}});
    SessionRunSummary summary;
    summary.session_id = session.at("session_id").get<std::string>();
    summary.user_id = session.at("user_id").get<std::string>();
    const auto base = "/api/sessions/" + summary.session_id;

    SimulatedAnnotator annotator(plan.profile, spec, config.rating_scale);
    annotator.set_identity(summary.session_id, summary.user_id);

    std::vector<RawFeedbackEvent> pending;
    const auto flush = [&] {
        if (pending.empty()) return;
        json events = json::array();
        for (const auto& ev : pending) events.push_back(to_json(ev));
        const auto res = client.request("POST", base + "/feedback", {{"events", events}});
        const auto& results = res.at("results");
        for (std::size_t i = 0; i < results.size(); ++i) {
            const auto& r = results[i];
            if (r.contains("error")) {
                ++summary.errors[r.at("error").at("code").get<std::string>()];
                continue;
            }
            ++summary.accepted;
            summary.records += static_cast<std::int64_t>(r.at("feedback_ids").size());
            ++summary.accepted_by_type[std::string(to_string(feedback_kind_of(pending[i].kind)))];
        }
        summary.submitted += static_cast<std::int64_t>(pending.size());
        pending.clear();
        annotator.set_phase(client.request("GET", base).at("phase").get<std::size_t>());
    };

    const auto slots = static_cast<std::size_t>(std::max(config.comparison_slots, 1));
    int idle = 0;
    for (std::size_t turn = 0; summary.submitted + static_cast<std::int64_t>(pending.size()) < plan.events; ++turn) {
        const auto kind = kinds[turn % kinds.size()];
        std::vector<EpisodeRecord> episodes;
        if (kind != FeedbackKind::demonstrative) {
            const int k = kind == FeedbackKind::comparative ? static_cast<int>(slots) : 1;
            json items;
            try {
                items = client.request("POST", base + "/next", {{"k", k}}).at("items");
            } catch (const Exhausted&) {
                summary.exhausted = true;
                break;
            } catch (const Error& e) {
                ++summary.errors[std::string(e.code())];
                break;
            }
            for (const auto& item : items) episodes.push_back(episode_from_render(item.at("render"), spec));
            summary.samples += static_cast<std::int64_t>(episodes.size());
        }
        auto events = annotate(annotator, kind, episodes, q_star, slots);
        idle = events.empty() ? idle + 1 : 0;
        if (idle > 1000) break;
        for (auto& ev : events) {
            if (summary.submitted + static_cast<std::int64_t>(pending.size()) >= plan.events) break;
            pending.push_back(std::move(ev));
            if (static_cast<int>(pending.size()) >= plan.events_per_request) flush();
        }
    }
    flush();
    return summary;
}

}  // namespace hfkit
