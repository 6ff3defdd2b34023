#pragma once

// Generators of structurally valid feedback records for property checks.

#include <random>
#include <string>
#include <vector>

#include "hfkit/feedback.hpp"

namespace hfkit::gen {

inline EpisodeId random_episode_id(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> small(0, 50);
    const char* sources[] = {"policy-rollout", "human-demo", "calibration-rollout"};
    return EpisodeId{"default-8x8", sources[small(rng) % 3], small(rng) % 3, small(rng) * 20, small(rng)};
}

inline double random_real(std::mt19937_64& rng, double lo, double hi) {
    // Mix round and arbitrary values so both short and long decimal forms appear.
    std::uniform_real_distribution<double> d(lo, hi);
    double v = d(rng);
    if (rng() % 3 == 0) v = std::round(v * 4.0) / 4.0;
    return v;
}

inline Target random_target(std::mt19937_64& rng, Granularity g) {
    Target t;
    auto id = random_episode_id(rng);
    std::uniform_int_distribution<int> steps(0, 40);
    switch (g) {
        case Granularity::episode: t.ref = EpisodeTarget{id}; break;
        case Granularity::state: t.ref = StateTarget{id, steps(rng)}; break;
        case Granularity::segment: {
            int a = steps(rng);
            t.ref = SegmentTarget{id, a, a + 1 + steps(rng)};
            break;
        }
        case Granularity::entire: t.ref = AllTarget{}; break;
    }
    t.origin = rng() % 4 == 0 ? "generated" : "replay";
    t.timestamp = static_cast<std::int64_t>(rng() % 2000000000000ull);
    return t;
}

inline std::vector<MaskCell> random_mask(std::mt19937_64& rng, bool allow_empty) {
    std::vector<MaskCell> mask;
    int n = static_cast<int>(rng() % 5) + (allow_empty ? 0 : 1);
    for (int i = 0; i < n; ++i)
        mask.push_back(MaskCell{Cell{static_cast<int>(rng() % 8), static_cast<int>(rng() % 8)},
                                rng() % 2 ? 1.0 : random_real(rng, 0.0, 1.0)});
    return mask;
}

inline StandardizedFeedback random_feedback(std::mt19937_64& rng) {
    StandardizedFeedback fb;
    fb.feedback_id = static_cast<std::int64_t>(rng() % 1000000);
    auto& tag = fb.type_tag;
    const Granularity grans[] = {Granularity::state, Granularity::segment, Granularity::episode, Granularity::entire};
    tag.granularity = grans[rng() % 4];
    tag.expression = rng() % 2 ? Expression::explicit_ : Expression::implicit;
    tag.actuality = rng() % 2 ? Actuality::observed : Actuality::generated;

    const bool relative = tag.granularity != Granularity::entire && rng() % 3 == 0;
    if (relative) {
        tag.relation = Relation::relative;
        tag.intention = Intention::evaluate;
        tag.content_level = ContentLevel::instance;
        int k = 2 + static_cast<int>(rng() % 4);
        Ranking r;
        for (int i = 0; i < k; ++i) {
            fb.targets.push_back(random_target(rng, tag.granularity));
            r.ranks.push_back(1 + static_cast<int>(rng() % k));
        }
        r.ranks[rng() % k] = 1;
        fb.content = r;
    } else {
        tag.relation = Relation::absolute;
        fb.targets.push_back(random_target(rng, tag.granularity));
        const Intention intents[] = {Intention::evaluate, Intention::instruct, Intention::describe, Intention::none};
        tag.intention = intents[rng() % 4];
        tag.content_level = rng() % 2 ? ContentLevel::instance : ContentLevel::feature;
        const bool feature = tag.content_level == ContentLevel::feature;
        switch (tag.intention) {
            case Intention::evaluate:
            case Intention::none:
                if (tag.intention == Intention::none && !feature && rng() % 2) {
                    fb.content = NoContent{};
                } else {
                    fb.content = Evaluation{random_real(rng, -1.0, 1.0), random_mask(rng, !feature)};
                }
                break;
            case Intention::instruct: {
                Instruction ins;
                int n = 1 + static_cast<int>(rng() % 4);
                for (int i = 0; i < n; ++i) {
                    InstructedAction a;
                    a.step = static_cast<int>(rng() % 30);
                    a.action = kActions[rng() % 4];
                    if (rng() % 2) a.optimality = random_real(rng, 0.0, 1.0);
                    ins.actions.push_back(a);
                }
                if (rng() % 3 == 0) ins.goal = Cell{static_cast<int>(rng() % 8), static_cast<int>(rng() % 8)};
                ins.features = random_mask(rng, !feature);
                fb.content = ins;
                break;
            }
            case Intention::describe: {
                Description d;
                d.mask = random_mask(rng, !feature);
                d.importance = random_real(rng, -1.0, 1.0);
                if (d.mask.empty() || rng() % 2) d.annotation = "note " + std::to_string(rng() % 100);
                fb.content = d;
                break;
            }
        }
    }

    fb.meta.timestamp = static_cast<std::int64_t>(rng() % 2000000000000ull);
    fb.meta.session_id = "s" + std::to_string(rng() % 100);
    fb.meta.user_id = "u" + std::to_string(rng() % 100);
    fb.meta.latency_ms = static_cast<std::int64_t>(rng() % 10000);
    fb.meta.ui_element = rng() % 2 ? "slider" : "ranking-board";
    if (rng() % 2) fb.meta.confidence = random_real(rng, 0.0, 1.0);
    if (rng() % 3 == 0) fb.meta.free_text = "looks \"fine\"\n";
    if (rng() % 2) fb.meta.extra["raw_value"] = static_cast<int>(rng() % 5) + 1;
    if (rng() % 3 == 0) fb.meta.extra["scale"] = nlohmann::json::array({1, 5});
    return fb;
}

/// One record per (granularity, intention, content level) combination.
inline std::vector<StandardizedFeedback> grammar_productions() {
    const EpisodeId id{"default-8x8", "policy-rollout", 0, 1000, 0};
    const std::vector<MaskCell> mask{{Cell{3, 2}, 1.0}};
    std::vector<StandardizedFeedback> out;
    for (auto g : {Granularity::episode, Granularity::state, Granularity::segment, Granularity::entire}) {
        for (auto in : {Intention::evaluate, Intention::instruct, Intention::describe, Intention::none}) {
            for (auto level : {ContentLevel::instance, ContentLevel::feature}) {
                StandardizedFeedback fb;
                fb.feedback_id = static_cast<std::int64_t>(out.size());
                fb.type_tag.granularity = g;
                fb.type_tag.intention = in;
                fb.type_tag.content_level = level;
                const bool feature = level == ContentLevel::feature;
                const std::vector<MaskCell> features = feature ? mask : std::vector<MaskCell>{};
                switch (g) {
                    case Granularity::episode: fb.targets = {episode_target(id)}; break;
                    case Granularity::state: fb.targets = {state_target(id, 3)}; break;
                    case Granularity::segment: fb.targets = {segment_target(id, 2, 5)}; break;
                    case Granularity::entire: fb.targets = {all_target()}; break;
                }
                switch (in) {
                    case Intention::evaluate: fb.content = Evaluation{0.25, features}; break;
                    case Intention::instruct: fb.content = Instruction{{{3, Action::right, 1.0}}, std::nullopt, features}; break;
                    case Intention::describe:
                        fb.content = feature ? Description{mask, 1.0, std::nullopt}
                                             : Description{{}, 1.0, std::string("avoid the corridor")};
                        break;
                    case Intention::none:
                        if (feature) fb.content = Evaluation{0.0, mask};
                        else fb.content = NoContent{};
                        break;
                }
                out.push_back(std::move(fb));
            }
        }
    }
    // Relative productions: pairwise, k-wise with ties, per granularity.
    for (auto g : {Granularity::episode, Granularity::state, Granularity::segment}) {
        for (const std::vector<int>& ranks : {std::vector<int>{1, 2}, std::vector<int>{1, 2, 2}}) {
            StandardizedFeedback fb;
            fb.feedback_id = static_cast<std::int64_t>(out.size());
            fb.type_tag.granularity = g;
            fb.type_tag.relation = Relation::relative;
            for (std::size_t i = 0; i < ranks.size(); ++i) {
                EpisodeId other = id;
                other.episode_num = static_cast<std::int64_t>(i);
                switch (g) {
                    case Granularity::state: fb.targets.push_back(state_target(other, 1)); break;
                    case Granularity::segment: fb.targets.push_back(segment_target(other, 0, 2)); break;
                    default: fb.targets.push_back(episode_target(other)); break;
                }
            }
            fb.content = Ranking{ranks};
            out.push_back(std::move(fb));
        }
    }
    return out;
}

}  // namespace hfkit::gen
