#include <doctest.h>

#include <random>
#include <set>
#include <tuple>

#include "hfkit/feedback.hpp"
#include "hfkit/random_feedback.hpp"

using namespace hfkit;

namespace {

EpisodeId ep(int num = 0) { return EpisodeId{"default-8x8", "policy-rollout", 0, 1000, num}; }

StandardizedFeedback absolute_evaluation(double score) {
    StandardizedFeedback fb;
    fb.feedback_id = 1;
    fb.targets = {episode_target(ep())};
    fb.content = Evaluation{score, {}};
    return fb;
}

StandardizedFeedback pairwise(std::vector<int> ranks) {
    StandardizedFeedback fb;
    fb.feedback_id = 2;
    for (std::size_t i = 0; i < ranks.size(); ++i) fb.targets.push_back(episode_target(ep(static_cast<int>(i))));
    fb.type_tag.relation = Relation::relative;
    fb.content = Ranking{std::move(ranks)};
    return fb;
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
    return std::find(v.begin(), v.end(), s) != v.end();
}

}  // namespace

TEST_CASE("minimal absolute evaluation serializes to one line") {
    auto line = serialize_feedback(absolute_evaluation(1.0));
    CHECK(line.find('\n') == std::string::npos);
    auto j = nlohmann::json::parse(line);
    CHECK(j["v"] == 1);
    CHECK(j["type_tag"]["intention"] == "evaluate");
    CHECK(j["type_tag"]["relation"] == "absolute");
    CHECK(j["content"]["score"] == 1.0);
}

TEST_CASE("pairwise ranking serializes as relative with two targets") {
    auto j = nlohmann::json::parse(serialize_feedback(pairwise({1, 2})));
    CHECK(j["type_tag"]["relation"] == "relative");
    CHECK(j["targets"].size() == 2);
}

TEST_CASE("three-target ranking round trips") {
    auto fb = pairwise({2, 1, 3});
    fb.meta.extra["raw_order"] = nlohmann::json::array({"B", "A", "C"});
    CHECK(parse_feedback(serialize_feedback(fb)) == fb);
}

TEST_CASE("randomized records round trip and reserialize byte-identically") {
    std::mt19937_64 rng(20240611);
    for (int i = 0; i < 1000; ++i) {
        auto fb = gen::random_feedback(rng);
        REQUIRE(structural_violations(fb).empty());
        auto once = serialize_feedback(fb);
        auto parsed = parse_feedback(once);
        CHECK(parsed == fb);
        CHECK(serialize_feedback(parsed) == once);
    }
}

TEST_CASE("hypothetical actuality parses as generated") {
    auto j = nlohmann::json::parse(serialize_feedback(absolute_evaluation(0.5)));
    j["type_tag"]["actuality"] = "hypothetical";
    auto fb = parse_feedback(j.dump());
    CHECK(fb.type_tag.actuality == Actuality::generated);
}

TEST_CASE("malformed input") {
    auto line = serialize_feedback(absolute_evaluation(0.5));
    SUBCASE("truncated record") {
        CHECK_THROWS_AS(parse_feedback(line.substr(0, line.size() / 2)), ParseError);
        try {
            parse_feedback(line.substr(0, 20));
        } catch (const ParseError& e) {
            CHECK(e.position() > 0);
        }
    }
    SUBCASE("unsupported version") {
        auto j = nlohmann::json::parse(line);
        j["v"] = 2;
        CHECK_THROWS_AS(parse_feedback(j.dump()), SchemaVersionError);
    }
    SUBCASE("unknown enum value") {
        auto j = nlohmann::json::parse(line);
        j["type_tag"]["relation"] = "sideways";
        CHECK_THROWS_AS(parse_feedback(j.dump()), ParseError);
    }
    SUBCASE("missing key") {
        auto j = nlohmann::json::parse(line);
        j.erase("targets");
        CHECK_THROWS_AS(parse_feedback(j.dump()), ParseError);
    }
}

TEST_CASE("unknown metadata keys are preserved verbatim") {
    auto j = nlohmann::json::parse(serialize_feedback(absolute_evaluation(0.5)));
    j["meta"]["gaze_model"] = {{"name", "v3"}, {"fps", 30}};
    auto fb = parse_feedback(j.dump());
    CHECK(fb.meta.extra["gaze_model"]["fps"] == 30);
    CHECK(nlohmann::json::parse(serialize_feedback(fb))["meta"]["gaze_model"] == j["meta"]["gaze_model"]);
}

TEST_CASE("serialization is deterministic") {
    std::mt19937_64 a(7), b(7);
    for (int i = 0; i < 50; ++i) CHECK(serialize_feedback(gen::random_feedback(a)) == serialize_feedback(gen::random_feedback(b)));
}

TEST_CASE("validate_feedback") {
    std::map<EpisodeId, int> lengths{{ep(0), 12}, {ep(1), 5}};

    CHECK(validate_feedback(absolute_evaluation(0.5), lengths).empty());

    SUBCASE("relative with one target") {
        auto fb = pairwise({1});
        CHECK(contains(validate_feedback(fb, lengths), "relative requires ≥2 targets"));
    }
    SUBCASE("state step equal to the episode length is out of range") {
        auto fb = absolute_evaluation(0.5);
        fb.type_tag.granularity = Granularity::state;
        fb.targets = {state_target(ep(0), 12)};
        CHECK(contains(validate_feedback(fb, lengths), "step out of range"));
        fb.targets = {state_target(ep(0), 11)};
        CHECK(validate_feedback(fb, lengths).empty());
    }
    SUBCASE("segment end past the episode") {
        auto fb = absolute_evaluation(0.5);
        fb.type_tag.granularity = Granularity::segment;
        fb.targets = {segment_target(ep(1), 2, 6)};
        CHECK(contains(validate_feedback(fb, lengths), "segment out of range"));
    }
    SUBCASE("dangling reference unless generated") {
        auto fb = absolute_evaluation(0.5);
        fb.targets = {episode_target(ep(9))};
        CHECK(validate_feedback(fb, lengths).size() == 1);
        fb.targets = {episode_target(ep(9), "generated")};
        CHECK(validate_feedback(fb, lengths).empty());
    }
    SUBCASE("score outside [-1,1]") {
        CHECK(contains(validate_feedback(absolute_evaluation(1.5), lengths), "score must be finite and within [-1,1]"));
        CHECK_THROWS_AS(serialize_feedback(absolute_evaluation(std::nan(""))), InvariantViolation);
    }
    SUBCASE("ranking misaligned with targets") {
        auto fb = pairwise({1, 2});
        std::get<Ranking>(fb.content).ranks = {1, 2, 3};
        CHECK(contains(validate_feedback(fb, lengths), "ranking length must equal target count"));
    }
    SUBCASE("ties are allowed") { CHECK(validate_feedback(pairwise({1, 1}), lengths).empty()); }
    SUBCASE("instruct requires an instruction payload") {
        auto fb = absolute_evaluation(0.5);
        fb.type_tag.intention = Intention::instruct;
        CHECK(contains(validate_feedback(fb, lengths), "instruct requires an instruction payload"));
    }
    SUBCASE("all-target must stand alone") {
        auto fb = pairwise({1, 2});
        fb.type_tag.granularity = Granularity::entire;
        fb.targets = {all_target(), all_target()};
        CHECK(contains(validate_feedback(fb, lengths), "all-target must be the only target"));
    }
}

TEST_CASE("every grammar production is representable") {
    const Granularity grans[] = {Granularity::episode, Granularity::state, Granularity::segment, Granularity::entire};
    const Intention intents[] = {Intention::evaluate, Intention::instruct, Intention::describe, Intention::none};
    const ContentLevel levels[] = {ContentLevel::instance, ContentLevel::feature};
    const std::vector<MaskCell> mask{{Cell{3, 2}, 1.0}};
    int built = 0;
    for (auto g : grans) {
        for (auto in : intents) {
            for (auto level : levels) {
                StandardizedFeedback fb;
                fb.type_tag.granularity = g;
                fb.type_tag.intention = in;
                fb.type_tag.content_level = level;
                const bool feature = level == ContentLevel::feature;
                switch (g) {
                    case Granularity::episode: fb.targets = {episode_target(ep())}; break;
                    case Granularity::state: fb.targets = {state_target(ep(), 3)}; break;
                    case Granularity::segment: fb.targets = {segment_target(ep(), 2, 5)}; break;
                    case Granularity::entire: fb.targets = {all_target()}; break;
                }
                switch (in) {
                    case Intention::evaluate: fb.content = Evaluation{0.25, feature ? mask : std::vector<MaskCell>{}}; break;
                    case Intention::instruct:
                        fb.content = Instruction{{{3, Action::right, 1.0}}, std::nullopt,
                                                 feature ? mask : std::vector<MaskCell>{}};
                        break;
                    case Intention::describe:
                        fb.content = feature ? Description{mask, 1.0, std::nullopt}
                                             : Description{{}, 1.0, std::string("avoid the corridor")};
                        break;
                    case Intention::none:
                        if (feature) fb.content = Evaluation{0.0, mask};
                        else fb.content = NoContent{};
                        break;
                }
                INFO(to_string(g), " ", to_string(in), " ", to_string(level));
                CHECK(structural_violations(fb).empty());
                CHECK(parse_feedback(serialize_feedback(fb)) == fb);
                ++built;
            }
        }
    }
    CHECK(built == 32);
}

TEST_CASE("library grammar productions cover every combination") {
    const auto records = gen::grammar_productions();
    std::set<std::tuple<Granularity, Intention, ContentLevel, Relation>> seen;
    for (const auto& fb : records) {
        CHECK(structural_violations(fb).empty());
        CHECK(serialize_feedback(parse_feedback(serialize_feedback(fb))) == serialize_feedback(fb));
        seen.insert({fb.type_tag.granularity, fb.type_tag.intention, fb.type_tag.content_level, fb.type_tag.relation});
    }
    CHECK(seen.size() == 32 + 3);
}
