#include "hfkit/feedback.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace hfkit {

using nlohmann::json;

namespace {

template <typename... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <typename... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

template <typename E, std::size_t N>
E enum_from(std::string_view s, const std::array<E, N>& values, const char* what) {
    for (E v : values)
        if (to_string(v) == s) return v;
    throw ParseError(0, std::string("unknown ") + what + " '" + std::string(s) + "'");
}

const json& field(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end()) throw ParseError(0, std::string("missing key '") + key + "'");
    return *it;
}

constexpr std::array kMetaKeys{"timestamp", "session_id", "user_id", "latency_ms", "ui_element", "confidence", "free_text"};

bool in_unit_interval(double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; }
bool in_signed_unit(double v) { return std::isfinite(v) && v >= -1.0 && v <= 1.0; }

Granularity granularity_of(const TargetRef& ref) {
    return std::visit(Overloaded{[](const EpisodeTarget&) { return Granularity::episode; },
                                 [](const StateTarget&) { return Granularity::state; },
                                 [](const SegmentTarget&) { return Granularity::segment; },
                                 [](const AllTarget&) { return Granularity::entire; }},
                      ref);
}

}  // namespace

// ---------------------------------------------------------------------------

const EpisodeId* Target::episode() const {
    return std::visit(Overloaded{[](const EpisodeTarget& t) -> const EpisodeId* { return &t.ref; },
                                 [](const StateTarget& t) -> const EpisodeId* { return &t.ref; },
                                 [](const SegmentTarget& t) -> const EpisodeId* { return &t.ref; },
                                 [](const AllTarget&) -> const EpisodeId* { return nullptr; }},
                      ref);
}

Target episode_target(EpisodeId id, std::string origin) {
    return Target{EpisodeTarget{std::move(id)}, std::move(origin), 0};
}
Target state_target(EpisodeId id, int step) { return Target{StateTarget{std::move(id), step}, "replay", 0}; }
Target segment_target(EpisodeId id, int start, int end) {
    return Target{SegmentTarget{std::move(id), start, end}, "replay", 0};
}
Target all_target() { return Target{AllTarget{}, "replay", 0}; }

std::string_view to_string(Intention v) {
    switch (v) {
        case Intention::evaluate: return "evaluate";
        case Intention::instruct: return "instruct";
        case Intention::describe: return "describe";
        case Intention::none: return "none";
    }
    return "?";
}
std::string_view to_string(Expression v) { return v == Expression::explicit_ ? "explicit" : "implicit"; }
std::string_view to_string(Actuality v) { return v == Actuality::observed ? "observed" : "generated"; }
std::string_view to_string(Relation v) { return v == Relation::absolute ? "absolute" : "relative"; }
std::string_view to_string(ContentLevel v) { return v == ContentLevel::instance ? "instance" : "feature"; }
std::string_view to_string(Granularity v) {
    switch (v) {
        case Granularity::state: return "state";
        case Granularity::segment: return "segment";
        case Granularity::episode: return "episode";
        case Granularity::entire: return "entire";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Invariants

std::vector<std::string> structural_violations(const StandardizedFeedback& fb) {
    std::vector<std::string> out;
    auto add = [&](std::string v) {
        if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(std::move(v));
    };
    const auto& tag = fb.type_tag;

    if (fb.targets.empty()) add("at least one target required");
    for (const auto& t : fb.targets) {
        if (t.is_all() && fb.targets.size() > 1) add("all-target must be the only target");
        if (granularity_of(t.ref) != tag.granularity) add("granularity does not match target kind");
        if (t.origin != "replay" && t.origin != "generated") add("origin must be replay or generated");
        if (const auto* id = t.episode()) {
            if (id->policy_id < 0 || id->skill_level < 0 || id->episode_num < 0)
                add("episode id fields must be non-negative");
        }
        if (const auto* s = std::get_if<StateTarget>(&t.ref); s && s->step < 0) add("step must be non-negative");
        if (const auto* s = std::get_if<SegmentTarget>(&t.ref); s && !(0 <= s->start && s->start < s->end))
            add("segment requires 0 <= start < end");
    }

    if (tag.relation == Relation::absolute && fb.targets.size() != 1) add("absolute requires exactly one target");
    if (tag.relation == Relation::relative) {
        if (fb.targets.size() < 2) add("relative requires ≥2 targets");
        const auto* ranking = std::get_if<Ranking>(&fb.content);
        if (!ranking) {
            add("relative requires a ranking payload");
        } else {
            if (ranking->ranks.size() != fb.targets.size()) add("ranking length must equal target count");
            const int k = static_cast<int>(ranking->ranks.size());
            bool has_first = false;
            for (int r : ranking->ranks) {
                if (r < 1 || r > k) add("rank indices must lie in 1..k");
                has_first = has_first || r == 1;
            }
            if (k > 0 && !has_first) add("rank indices must include 1");
        }
    } else if (std::holds_alternative<Ranking>(fb.content)) {
        add("ranking payload requires relative relation");
    }

    switch (tag.intention) {
        case Intention::evaluate:
            if (!std::holds_alternative<Evaluation>(fb.content) && !std::holds_alternative<Ranking>(fb.content))
                add("evaluate requires an evaluation or ranking payload");
            break;
        case Intention::instruct:
            if (!std::holds_alternative<Instruction>(fb.content)) add("instruct requires an instruction payload");
            break;
        case Intention::describe:
            if (!std::holds_alternative<Description>(fb.content)) add("describe requires a description payload");
            break;
        case Intention::none:
            if (!std::holds_alternative<NoContent>(fb.content) && !std::holds_alternative<Evaluation>(fb.content))
                add("none admits only an extracted score or no payload");
            break;
    }
    if (tag.content_level == ContentLevel::feature) {
        const auto* e = std::get_if<Evaluation>(&fb.content);
        const auto* ins = std::get_if<Instruction>(&fb.content);
        const bool has_mask = (e && !e->features.empty()) || (ins && !ins->features.empty());
        if (!std::holds_alternative<Description>(fb.content) && !has_mask)
            add("feature content requires a description payload or a feature mask");
    }

    std::visit(Overloaded{[&](const Evaluation& e) {
                              if (!in_signed_unit(e.score)) add("score must be finite and within [-1,1]");
                          },
                          [&](const Ranking&) {},
                          [&](const Instruction& ins) {
                              if (ins.actions.empty() && !ins.goal) add("instruction must carry actions or a goal");
                              for (const auto& a : ins.actions) {
                                  if (a.step < 0) add("instructed step must be non-negative");
                                  if (a.optimality && !in_unit_interval(*a.optimality))
                                      add("optimality must lie in [0,1]");
                              }
                          },
                          [&](const Description& d) {
                              if (!in_signed_unit(d.importance)) add("importance must lie in [-1,1]");
                              if (d.mask.empty() && !d.annotation) add("description requires a mask or annotation");
                              for (const auto& m : d.mask)
                                  if (!std::isfinite(m.weight)) add("mask weights must be finite");
                          },
                          [&](const NoContent&) {}},
               fb.content);

    if (fb.meta.confidence && !in_unit_interval(*fb.meta.confidence)) add("confidence must lie in [0,1]");
    if (fb.meta.latency_ms < 0) add("latency must be non-negative");
    if (!fb.meta.extra.is_object()) {
        add("meta extras must be an object");
    } else {
        for (const char* key : kMetaKeys)
            if (fb.meta.extra.contains(key)) add("meta extras must not shadow known keys");
    }
    return out;
}

std::vector<std::string> validate_feedback(const StandardizedFeedback& fb, const EpisodeLengthLookup& lengths) {
    auto out = structural_violations(fb);
    auto add = [&](std::string v) {
        if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(std::move(v));
    };
    for (const auto& t : fb.targets) {
        const EpisodeId* id = t.episode();
        if (!id) continue;
        auto len = lengths ? lengths(*id) : std::nullopt;
        if (!len) {
            if (t.origin != "generated") add("unknown episode " + id->key());
            continue;
        }
        if (const auto* s = std::get_if<StateTarget>(&t.ref); s && s->step >= *len) add("step out of range");
        if (const auto* s = std::get_if<SegmentTarget>(&t.ref); s && s->end > *len) add("segment out of range");
    }
    return out;
}

std::vector<std::string> validate_feedback(const StandardizedFeedback& fb, const std::map<EpisodeId, int>& lengths) {
    return validate_feedback(fb, [&](const EpisodeId& id) -> std::optional<int> {
        auto it = lengths.find(id);
        if (it == lengths.end()) return std::nullopt;
        return it->second;
    });
}

// ---------------------------------------------------------------------------
// JSON mapping

json to_json(const EpisodeId& id) {
    return json{{"env", id.env_name},
                {"source", id.source_kind},
                {"policy", id.policy_id},
                {"skill", id.skill_level},
                {"episode", id.episode_num}};
}

EpisodeId episode_id_from_json(const json& j) {
    EpisodeId id;
    id.env_name = field(j, "env").get<std::string>();
    id.source_kind = field(j, "source").get<std::string>();
    id.policy_id = field(j, "policy").get<std::int64_t>();
    id.skill_level = field(j, "skill").get<std::int64_t>();
    id.episode_num = field(j, "episode").get<std::int64_t>();
    return id;
}

json to_json(const Target& t) {
    json j = std::visit(Overloaded{[](const EpisodeTarget& e) { return json{{"kind", "episode"}, {"ref", to_json(e.ref)}}; },
                                   [](const StateTarget& s) {
                                       return json{{"kind", "state"}, {"ref", to_json(s.ref)}, {"step", s.step}};
                                   },
                                   [](const SegmentTarget& s) {
                                       return json{{"kind", "segment"},
                                                   {"ref", to_json(s.ref)},
                                                   {"start", s.start},
                                                   {"end", s.end}};
                                   },
                                   [](const AllTarget&) { return json{{"kind", "all"}}; }},
                        t.ref);
    j["origin"] = t.origin;
    j["timestamp"] = t.timestamp;
    return j;
}

Target target_from_json(const json& j) {
    Target t;
    const auto kind = field(j, "kind").get<std::string>();
    if (kind == "episode") {
        t.ref = EpisodeTarget{episode_id_from_json(field(j, "ref"))};
    } else if (kind == "state") {
        t.ref = StateTarget{episode_id_from_json(field(j, "ref")), field(j, "step").get<int>()};
    } else if (kind == "segment") {
        t.ref = SegmentTarget{episode_id_from_json(field(j, "ref")), field(j, "start").get<int>(),
                              field(j, "end").get<int>()};
    } else if (kind == "all") {
        t.ref = AllTarget{};
    } else {
        throw ParseError(0, "unknown target kind '" + kind + "'");
    }
    t.origin = j.value("origin", std::string("replay"));
    t.timestamp = j.value("timestamp", std::int64_t{0});
    return t;
}

namespace {

json mask_to_json(const std::vector<MaskCell>& mask) {
    json out = json::array();
    for (const auto& m : mask) out.push_back(json::array({m.cell.x, m.cell.y, m.weight}));
    return out;
}

std::vector<MaskCell> mask_from_json(const json& j) {
    std::vector<MaskCell> out;
    for (const auto& m : j) out.push_back(MaskCell{Cell{m.at(0).get<int>(), m.at(1).get<int>()}, m.at(2).get<double>()});
    return out;
}

json content_to_json(const FeedbackContent& c) {
    return std::visit(
        Overloaded{[](const Evaluation& e) {
                       json j{{"kind", "evaluation"}, {"score", e.score}};
                       if (!e.features.empty()) j["features"] = mask_to_json(e.features);
                       return j;
                   },
                   [](const Ranking& r) { return json{{"kind", "ranking"}, {"ranks", r.ranks}}; },
                   [](const Instruction& ins) {
                       json actions = json::array();
                       for (const auto& a : ins.actions) {
                           json ja{{"step", a.step}, {"action", std::string(to_string(a.action))}};
                           if (a.optimality) ja["optimality"] = *a.optimality;
                           actions.push_back(std::move(ja));
                       }
                       json j{{"kind", "instruction"}, {"actions", std::move(actions)}};
                       if (ins.goal) j["goal"] = json::array({ins.goal->x, ins.goal->y});
                       if (!ins.features.empty()) j["features"] = mask_to_json(ins.features);
                       return j;
                   },
                   [](const Description& d) {
                       json j{{"kind", "description"}, {"mask", mask_to_json(d.mask)}, {"importance", d.importance}};
                       if (d.annotation) j["annotation"] = *d.annotation;
                       return j;
                   },
                   [](const NoContent&) { return json{{"kind", "none"}}; }},
        c);
}

FeedbackContent content_from_json(const json& j) {
    const auto kind = field(j, "kind").get<std::string>();
    if (kind == "evaluation") {
        Evaluation e{field(j, "score").get<double>(), {}};
        if (auto it = j.find("features"); it != j.end()) e.features = mask_from_json(*it);
        return e;
    }
    if (kind == "ranking") return Ranking{field(j, "ranks").get<std::vector<int>>()};
    if (kind == "instruction") {
        Instruction ins;
        for (const auto& ja : field(j, "actions")) {
            InstructedAction a;
            a.step = field(ja, "step").get<int>();
            auto name = field(ja, "action").get<std::string>();
            auto act = action_from_string(name);
            if (!act) throw ParseError(0, "unknown action '" + name + "'");
            a.action = *act;
            if (auto it = ja.find("optimality"); it != ja.end()) a.optimality = it->get<double>();
            ins.actions.push_back(a);
        }
        if (auto it = j.find("goal"); it != j.end()) ins.goal = Cell{it->at(0).get<int>(), it->at(1).get<int>()};
        if (auto it = j.find("features"); it != j.end()) ins.features = mask_from_json(*it);
        return ins;
    }
    if (kind == "description") {
        Description d;
        d.mask = mask_from_json(field(j, "mask"));
        d.importance = field(j, "importance").get<double>();
        if (auto it = j.find("annotation"); it != j.end()) d.annotation = it->get<std::string>();
        return d;
    }
    if (kind == "none") return NoContent{};
    throw ParseError(0, "unknown content kind '" + kind + "'");
}

}  // namespace

json to_json(const StandardizedFeedback& fb) {
    json targets = json::array();
    for (const auto& t : fb.targets) targets.push_back(to_json(t));
    const auto& tag = fb.type_tag;
    json type_tag{{"intention", to_string(tag.intention)},
                  {"expression", to_string(tag.expression)},
                  {"actuality", to_string(tag.actuality)},
                  {"relation", to_string(tag.relation)},
                  {"content_level", to_string(tag.content_level)},
                  {"granularity", to_string(tag.granularity)}};
    json meta = fb.meta.extra.is_object() ? fb.meta.extra : json::object();
    meta["timestamp"] = fb.meta.timestamp;
    meta["session_id"] = fb.meta.session_id;
    meta["user_id"] = fb.meta.user_id;
    meta["latency_ms"] = fb.meta.latency_ms;
    meta["ui_element"] = fb.meta.ui_element;
    if (fb.meta.confidence) meta["confidence"] = *fb.meta.confidence;
    if (fb.meta.free_text) meta["free_text"] = *fb.meta.free_text;
    return json{{"v", kSchemaVersion},
                {"feedback_id", fb.feedback_id},
                {"targets", std::move(targets)},
                {"type_tag", std::move(type_tag)},
                {"content", content_to_json(fb.content)},
                {"meta", std::move(meta)}};
}

StandardizedFeedback feedback_from_json(const json& j) {
    if (!j.is_object()) throw ParseError(0, "record must be an object");
    const auto version = field(j, "v").get<int>();
    if (version != kSchemaVersion)
        throw SchemaVersionError("unsupported schema version " + std::to_string(version));

    StandardizedFeedback fb;
    fb.feedback_id = field(j, "feedback_id").get<std::int64_t>();
    for (const auto& t : field(j, "targets")) fb.targets.push_back(target_from_json(t));

    const auto& tag = field(j, "type_tag");
    auto str = [&](const char* key) { return field(tag, key).get<std::string>(); };
    fb.type_tag.intention = enum_from(str("intention"),
                                      std::array{Intention::evaluate, Intention::instruct, Intention::describe,
                                                 Intention::none},
                                      "intention");
    fb.type_tag.expression =
        enum_from(str("expression"), std::array{Expression::explicit_, Expression::implicit}, "expression");
    {
        auto a = str("actuality");
        // "hypothetical" is the older spelling of generated behavior.
        fb.type_tag.actuality =
            a == "hypothetical" ? Actuality::generated
                                : enum_from(a, std::array{Actuality::observed, Actuality::generated}, "actuality");
    }
    fb.type_tag.relation = enum_from(str("relation"), std::array{Relation::absolute, Relation::relative}, "relation");
    fb.type_tag.content_level =
        enum_from(str("content_level"), std::array{ContentLevel::instance, ContentLevel::feature}, "content level");
    fb.type_tag.granularity = enum_from(
        str("granularity"),
        std::array{Granularity::state, Granularity::segment, Granularity::episode, Granularity::entire}, "granularity");

    fb.content = content_from_json(field(j, "content"));

    const auto& meta = field(j, "meta");
    if (!meta.is_object()) throw ParseError(0, "meta must be an object");
    fb.meta.timestamp = meta.value("timestamp", std::int64_t{0});
    fb.meta.session_id = meta.value("session_id", std::string{});
    fb.meta.user_id = meta.value("user_id", std::string{});
    fb.meta.latency_ms = meta.value("latency_ms", std::int64_t{0});
    fb.meta.ui_element = meta.value("ui_element", std::string{});
    if (auto it = meta.find("confidence"); it != meta.end()) fb.meta.confidence = it->get<double>();
    if (auto it = meta.find("free_text"); it != meta.end()) fb.meta.free_text = it->get<std::string>();
    fb.meta.extra = json::object();
    for (auto it = meta.begin(); it != meta.end(); ++it) {
        if (std::find(kMetaKeys.begin(), kMetaKeys.end(), it.key()) == kMetaKeys.end())
            fb.meta.extra[it.key()] = it.value();
    }
    return fb;
}

std::string serialize_feedback(const StandardizedFeedback& fb) {
    if (auto v = structural_violations(fb); !v.empty()) throw InvariantViolation(v.front());
    return to_json(fb).dump();
}

StandardizedFeedback parse_feedback(std::string_view raw) {
    json j;
    try {
        j = json::parse(raw.begin(), raw.end());
    } catch (const json::parse_error& e) {
        throw ParseError(e.byte, e.what());
    }
    try {
        return feedback_from_json(j);
    } catch (const json::exception& e) {
        throw ParseError(0, e.what());
    }
}

}  // namespace hfkit
