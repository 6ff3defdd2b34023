#include "hfkit/translator.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace hfkit {

using nlohmann::json;

namespace {

const json& require(const json& payload, const char* key) {
    if (!payload.is_object() || !payload.contains(key))
        throw ValidationError(std::string("payload.") + key, "is required");
    return payload.at(key);
}

template <typename T>
T get_field(const json& payload, const char* key) {
    try {
        return require(payload, key).get<T>();
    } catch (const json::exception& e) {
        throw ValidationError(std::string("payload.") + key, e.what());
    }
}

Action parse_action(const json& j, const std::string& field) {
    std::optional<Action> a;
    try {
        a = action_from_string(j.get<std::string>());
    } catch (const std::exception& e) {
        throw ValidationError(field, e.what());
    }
    if (!a) throw ValidationError(field, "unknown action");
    return *a;
}

Cell parse_cell(const json& j, const std::string& field) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer())
        throw ValidationError(field, "cell must be [x, y]");
    return {j[0].get<int>(), j[1].get<int>()};
}

Target parse_target(const json& j, const std::string& field) {
    try {
        return target_from_json(j);
    } catch (const Error& e) {
        throw ValidationError(field, e.what());
    } catch (const json::exception& e) {
        throw ValidationError(field, e.what());
    }
}

Granularity granularity_of(const Target& t) {
    return std::visit(
        [](const auto& ref) {
            using T = std::decay_t<decltype(ref)>;
            if constexpr (std::is_same_v<T, EpisodeTarget>) return Granularity::episode;
            else if constexpr (std::is_same_v<T, StateTarget>) return Granularity::state;
            else if constexpr (std::is_same_v<T, SegmentTarget>) return Granularity::segment;
            else return Granularity::entire;
        },
        t.ref);
}

void require_known(const Target& t, const EpisodeCatalog& episodes) {
    const auto* id = t.episode();
    if (id != nullptr && t.origin != "generated" && !episodes.contains(*id))
        throw UnknownTargets("episode " + id->key() + " is not in any buffer");
}

StandardizedFeedback stamped(const RawFeedbackEvent& ev) {
    static const std::set<std::string> known{"timestamp", "session_id", "user_id", "latency_ms",
                                             "ui_element", "confidence", "free_text"};
    if (!ev.extra.is_object()) throw ValidationError("extra", "must be an object");
    for (const auto& [key, _] : ev.extra.items())
        if (known.contains(key)) throw ValidationError("extra." + key, "shadows a metadata field");
    StandardizedFeedback fb;
    fb.meta.timestamp = ev.client_timestamp;
    fb.meta.session_id = ev.session_id;
    fb.meta.user_id = ev.user_id;
    fb.meta.latency_ms = ev.latency_ms;
    fb.meta.ui_element = ev.ui_element;
    fb.meta.free_text = ev.free_text;
    fb.meta.extra = ev.extra;
    return fb;
}

StandardizedFeedback translate_rating(const RawFeedbackEvent& ev, const TranslationContext& ctx) {
    auto fb = stamped(ev);
    const auto target = parse_target(require(ev.payload, "target"), "payload.target");
    require_known(target, ctx.episodes);
    const double value = get_field<double>(ev.payload, "value");
    const auto& scale = ctx.config.rating_scale;
    if (ev.payload.contains("scale")) {
        const auto s = ev.payload.at("scale");
        if (!s.is_array() || s.size() != 2 || !s[0].is_number() || !s[1].is_number())
            throw ValidationError("payload.scale", "must be [min, max]");
        if (s[0].get<double>() != scale.min || s[1].get<double>() != scale.max)
            throw ScaleError("rating scale does not match the configured scale");
    }
    if (!std::isfinite(value) || value < scale.min || value > scale.max)
        throw ScaleError("rating " + std::to_string(value) + " outside [" + std::to_string(scale.min) + ", " +
                         std::to_string(scale.max) + "]");
    if (scale.steps >= 2) {
        const double unit = (scale.max - scale.min) / (scale.steps - 1);
        const double pos = (value - scale.min) / unit;
        if (std::abs(pos - std::round(pos)) > 1e-9) throw ScaleError("rating is not one of the configured steps");
    }
    fb.targets = {target};
    fb.type_tag.intention = Intention::evaluate;
    fb.type_tag.granularity = granularity_of(target);
    fb.content = Evaluation{2.0 * (value - scale.min) / (scale.max - scale.min) - 1.0, {}};
    fb.meta.extra["raw_value"] = value;
    fb.meta.extra["scale"] = json::array({scale.min, scale.max});
    return fb;
}

StandardizedFeedback translate_ranking(const RawFeedbackEvent& ev, const TranslationContext& ctx) {
    auto fb = stamped(ev);
    const auto& list = require(ev.payload, "targets");
    if (!list.is_array()) throw ValidationError("payload.targets", "must be an array");
    if (list.size() < 2) throw EmptyRanking("a ranking needs at least two targets");
    for (std::size_t i = 0; i < list.size(); ++i) {
        auto t = parse_target(list[i], "payload.targets[" + std::to_string(i) + "]");
        require_known(t, ctx.episodes);
        if (std::find(fb.targets.begin(), fb.targets.end(), t) != fb.targets.end())
            throw ValidationError("payload.targets", "targets must be distinct");
        fb.targets.push_back(std::move(t));
    }
    std::vector<int> ranks(fb.targets.size());
    if (ev.payload.contains("ranks")) {
        ranks = get_field<std::vector<int>>(ev.payload, "ranks");
        if (ranks.size() != fb.targets.size()) throw ValidationError("payload.ranks", "must align with targets");
        if (!std::is_sorted(ranks.begin(), ranks.end()))
            throw ValidationError("payload.ranks", "targets must be listed best first");
    } else {
        for (std::size_t i = 0; i < ranks.size(); ++i) ranks[i] = static_cast<int>(i) + 1;
    }
    fb.type_tag.intention = Intention::evaluate;
    fb.type_tag.relation = Relation::relative;
    fb.type_tag.granularity = granularity_of(fb.targets.front());
    for (const auto& t : fb.targets)
        if (granularity_of(t) != fb.type_tag.granularity)
            throw ValidationError("payload.targets", "ranked targets must share one granularity");
    fb.content = Ranking{ranks};
    return fb;
}

StandardizedFeedback translate_correction(const RawFeedbackEvent& ev, const TranslationContext& ctx) {
    auto fb = stamped(ev);
    const auto target = parse_target(require(ev.payload, "target"), "payload.target");
    const auto* id = target.episode();
    if (id == nullptr || !std::holds_alternative<EpisodeTarget>(target.ref))
        throw ValidationError("payload.target", "must be an episode target");
    if (!ctx.episodes.contains(*id)) throw UnknownTargets("episode " + id->key() + " is not in any buffer");
    const int step = get_field<int>(ev.payload, "step");
    const int length = *ctx.episodes.steps(*id);
    if (step < 0 || step >= length) throw ValidationError("payload.step", "step out of range");

    Instruction ins;
    ins.actions.push_back({step, parse_action(require(ev.payload, "action"), "payload.action"), std::nullopt});
    if (ev.payload.contains("continuation")) {
        const auto& cont = ev.payload.at("continuation");
        if (!cont.is_array()) throw ValidationError("payload.continuation", "must be an array of actions");
        for (std::size_t i = 0; i < cont.size(); ++i)
            ins.actions.push_back({step + 1 + static_cast<int>(i),
                                   parse_action(cont[i], "payload.continuation[" + std::to_string(i) + "]"), std::nullopt});
    }
    fb.targets = {state_target(*id, step)};
    fb.type_tag.intention = Intention::instruct;
    fb.type_tag.granularity = Granularity::state;
    fb.content = std::move(ins);
    correction_to_preference(fb, ctx.episodes, ctx.spec);  // surfaces ReplayError now
    if (ev.payload.contains("continuation")) fb.meta.extra["continuation"] = ev.payload.at("continuation").size();
    return fb;
}

StandardizedFeedback translate_demonstration(const RawFeedbackEvent& ev, const TranslationContext& ctx) {
    auto fb = stamped(ev);
    const auto& list = require(ev.payload, "actions");
    if (!list.is_array() || list.empty()) throw ValidationError("payload.actions", "must be a non-empty array");
    std::vector<Action> actions;
    for (std::size_t i = 0; i < list.size(); ++i)
        actions.push_back(parse_action(list[i], "payload.actions[" + std::to_string(i) + "]"));
    const Cell start = ev.payload.contains("start") ? parse_cell(ev.payload.at("start"), "payload.start") : ctx.spec.start;
    double optimality = ctx.config.demo_optimality;
    if (ev.payload.contains("optimality")) optimality = get_field<double>(ev.payload, "optimality");
    if (!(optimality >= 0.0 && optimality <= 1.0)) throw ValidationError("payload.optimality", "must lie in [0,1]");

    EpisodeRecord record;
    try {
        record = replay(ctx.spec, EpisodeId{ctx.spec.name, "human-demo", 0, 0, 0}, start, actions);
    } catch (const InvalidState& e) {
        throw ReplayError(e.what());
    }
    if (record.length() != static_cast<int>(actions.size()))
        throw ReplayError("demonstration continues past a terminal state");
    const auto id = ctx.episodes.primary().ingest_with_fresh_id(record);

    Instruction ins;
    for (int i = 0; i < record.length(); ++i) ins.actions.push_back({i, record.actions[static_cast<std::size_t>(i)], optimality});
    fb.targets = {episode_target(id, "generated")};
    fb.type_tag.intention = Intention::instruct;
    fb.type_tag.actuality = Actuality::generated;
    fb.type_tag.granularity = Granularity::episode;
    fb.content = std::move(ins);
    return fb;
}

StandardizedFeedback translate_brush(const RawFeedbackEvent& ev, const TranslationContext& ctx) {
    auto fb = stamped(ev);
    const auto target = ev.payload.contains("target") ? parse_target(ev.payload.at("target"), "payload.target") : all_target();
    require_known(target, ctx.episodes);
    const double sign = get_field<double>(ev.payload, "sign");
    if (sign != 1.0 && sign != -1.0) throw ValidationError("payload.sign", "must be +1 or -1");

    std::set<Cell> cells;
    if (ev.payload.contains("cells")) {
        const auto& list = ev.payload.at("cells");
        if (!list.is_array()) throw ValidationError("payload.cells", "must be an array of cells");
        for (std::size_t i = 0; i < list.size(); ++i) {
            const auto c = parse_cell(list[i], "payload.cells[" + std::to_string(i) + "]");
            if (!ctx.spec.in_bounds(c)) throw ValidationError("payload.cells[" + std::to_string(i) + "]", "outside the grid");
            cells.insert(c);
        }
    }
    if (ev.payload.contains("polygon")) {
        const auto& list = ev.payload.at("polygon");
        if (!list.is_array() || list.size() < 3) throw ValidationError("payload.polygon", "needs at least three vertices");
        std::vector<std::pair<double, double>> vertices;
        for (const auto& v : list) {
            if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
                throw ValidationError("payload.polygon", "vertices must be [x, y]");
            vertices.emplace_back(v[0].get<double>(), v[1].get<double>());
        }
        for (const auto& c : rasterize_polygon(vertices, ctx.spec.width, ctx.spec.height)) cells.insert(c);
    }
    if (cells.empty()) throw ValidationError("payload", "brush mask is empty");

    Description d;
    for (const auto& c : cells) d.mask.push_back({c, 1.0});
    d.importance = sign;
    fb.targets = {target};
    fb.type_tag.intention = Intention::describe;
    fb.type_tag.content_level = ContentLevel::feature;
    fb.type_tag.granularity = granularity_of(target);
    fb.content = std::move(d);
    return fb;
}

}  // namespace

std::string_view to_string(RawEventKind k) {
    switch (k) {
        case RawEventKind::rating: return "rating";
        case RawEventKind::ranking: return "ranking";
        case RawEventKind::correction: return "correction";
        case RawEventKind::demonstration: return "demonstration";
        case RawEventKind::brush: return "brush";
    }
    return "?";
}

RawEventKind raw_event_kind_from_string(std::string_view s) {
    for (auto k : {RawEventKind::rating, RawEventKind::ranking, RawEventKind::correction, RawEventKind::demonstration,
                   RawEventKind::brush})
        if (to_string(k) == s) return k;
    throw ParseError(0, "unknown event kind '" + std::string(s) + "'");
}

FeedbackKind feedback_kind_of(RawEventKind k) {
    switch (k) {
        case RawEventKind::rating: return FeedbackKind::evaluative;
        case RawEventKind::ranking: return FeedbackKind::comparative;
        case RawEventKind::correction: return FeedbackKind::corrective;
        case RawEventKind::demonstration: return FeedbackKind::demonstrative;
        case RawEventKind::brush: return FeedbackKind::descriptive;
    }
    return FeedbackKind::evaluative;
}

RawEventKind raw_event_kind_of(FeedbackKind k) {
    switch (k) {
        case FeedbackKind::evaluative: return RawEventKind::rating;
        case FeedbackKind::comparative: return RawEventKind::ranking;
        case FeedbackKind::corrective: return RawEventKind::correction;
        case FeedbackKind::demonstrative: return RawEventKind::demonstration;
        case FeedbackKind::descriptive: return RawEventKind::brush;
    }
    return RawEventKind::rating;
}

json to_json(const RawFeedbackEvent& ev) {
    json j{{"session_id", ev.session_id},
           {"user_id", ev.user_id},
           {"ui_element", ev.ui_element},
           {"kind", to_string(ev.kind)},
           {"payload", ev.payload},
           {"client_timestamp", ev.client_timestamp},
           {"latency_ms", ev.latency_ms},
           {"extra", ev.extra}};
    if (ev.free_text) j["free_text"] = *ev.free_text;
    return j;
}

RawFeedbackEvent raw_event_from_json(const json& j) {
    if (!j.is_object()) throw ParseError(0, "event must be an object");
    try {
        RawFeedbackEvent ev;
        ev.session_id = j.value("session_id", std::string());
        ev.user_id = j.value("user_id", std::string());
        ev.ui_element = j.value("ui_element", std::string());
        ev.kind = raw_event_kind_from_string(j.at("kind").get<std::string>());
        ev.payload = j.value("payload", json::object());
        ev.client_timestamp = j.value("client_timestamp", std::int64_t{0});
        ev.latency_ms = j.value("latency_ms", std::int64_t{0});
        if (j.contains("free_text")) ev.free_text = j.at("free_text").get<std::string>();
        ev.extra = j.value("extra", json::object());
        return ev;
    } catch (const json::exception& e) {
        throw ParseError(0, e.what());
    }
}

std::vector<StandardizedFeedback> translate(const RawFeedbackEvent& ev, const TranslationContext& ctx) {
    if (!ctx.config.enabled(feedback_kind_of(ev.kind)))
        throw DisabledFeedbackType(std::string(to_string(feedback_kind_of(ev.kind))) + " feedback is disabled");
    if (!ev.payload.is_object()) throw ValidationError("payload", "must be an object");
    StandardizedFeedback fb;
    switch (ev.kind) {
        case RawEventKind::rating: fb = translate_rating(ev, ctx); break;
        case RawEventKind::ranking: fb = translate_ranking(ev, ctx); break;
        case RawEventKind::correction: fb = translate_correction(ev, ctx); break;
        case RawEventKind::demonstration: fb = translate_demonstration(ev, ctx); break;
        case RawEventKind::brush: fb = translate_brush(ev, ctx); break;
    }
    const auto violations = validate_feedback(fb, [&](const EpisodeId& id) { return ctx.episodes.steps(id); });
    if (!violations.empty()) throw ValidationError("payload", violations.front());
    return {std::move(fb)};
}

std::vector<Preference> expand_ranking(const StandardizedFeedback& fb) {
    const auto* ranking = std::get_if<Ranking>(&fb.content);
    if (fb.type_tag.relation != Relation::relative || ranking == nullptr)
        throw NotRelative("ranking expansion needs a relative record with a ranking payload");
    if (ranking->ranks.size() != fb.targets.size()) throw NotRelative("ranking length must equal target count");
    std::vector<Preference> out;
    const auto& r = ranking->ranks;
    for (std::size_t i = 0; i < r.size(); ++i) {
        for (std::size_t j = i + 1; j < r.size(); ++j) {
            if (r[i] < r[j]) out.push_back({fb.targets[i], fb.targets[j]});
            else if (r[j] < r[i]) out.push_back({fb.targets[j], fb.targets[i]});
        }
    }
    return out;
}

SegmentPreference correction_to_preference(const StandardizedFeedback& fb, const EpisodeCatalog& episodes,
                                           const GridSpec& spec) {
    const auto* ins = std::get_if<Instruction>(&fb.content);
    if (fb.type_tag.intention != Intention::instruct || ins == nullptr || ins->actions.empty() || fb.targets.size() != 1)
        throw WrongKind("correction needs an instruct record with instructed actions");
    const auto* st = std::get_if<StateTarget>(&fb.targets.front().ref);
    if (st == nullptr) throw WrongKind("correction must target a state");
    if (!episodes.contains(st->ref)) throw UnknownTargets("episode " + st->ref.key() + " is not in any buffer");
    const auto ep = episodes.fetch(st->ref);
    if (st->step < 0 || st->step >= ep.length()) throw ReplayError("correction step outside the episode");

    auto sorted = ins->actions;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.step < b.step; });
    std::vector<Action> actions;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (sorted[i].step != st->step + static_cast<int>(i))
            throw ReplayError("corrected actions must be consecutive from the corrected step");
        actions.push_back(sorted[i].action);
    }

    EpisodeRecord replayed;
    try {
        replayed = replay(spec, ep.id, ep.states[static_cast<std::size_t>(st->step)].agent, actions);
    } catch (const InvalidState& e) {
        throw ReplayError(e.what());
    }
    if (replayed.length() != static_cast<int>(actions.size()))
        throw ReplayError("corrected actions continue past a terminal state");

    SegmentPreference out;
    out.loser = make_segment(ep, st->step, std::min(ep.length(), st->step + static_cast<int>(actions.size())));
    out.winner.id = ep.id;
    out.winner.start = st->step;
    out.winner.end = st->step + replayed.length();
    out.winner.states = replayed.states;
    out.winner.actions = replayed.actions;
    out.winner.gt_rewards = replayed.gt_rewards;
    out.degenerate = out.winner.actions == out.loser.actions;
    return out;
}

std::vector<Cell> rasterize_polygon(const std::vector<std::pair<double, double>>& vertices, int width, int height) {
    std::vector<Cell> out;
    const std::size_t n = vertices.size();
    if (n < 3) return out;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            bool inside = false;
            for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
                const auto [xi, yi] = vertices[i];
                const auto [xj, yj] = vertices[j];
                if ((yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi) inside = !inside;
            }
            if (inside) out.push_back({x, y});
        }
    }
    return out;
}

}  // namespace hfkit
