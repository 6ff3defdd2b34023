#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "hfkit/sampler.hpp"

using namespace hfkit;

namespace {

EpisodeId eid(int i) { return EpisodeId{"default-8x8", "policy-rollout", 0, 0, i}; }

// Index of n episodes whose skill ordering follows their return.
BufferIndex make_index(int n, std::uint64_t shuffle = 0) {
    BufferIndex index;
    std::vector<int> returns(n);
    for (int i = 0; i < n; ++i) returns[i] = i;
    if (shuffle) std::shuffle(returns.begin(), returns.end(), std::mt19937_64(shuffle));
    for (int i = 0; i < n; ++i) {
        IndexEntry e;
        e.steps = 5;
        e.total_return = returns[i];
        index.entries[eid(i)] = e;
    }
    for (const auto& [id, _] : index.entries) index.ordering.push_back(id);
    std::sort(index.ordering.begin(), index.ordering.end(), [&](const EpisodeId& a, const EpisodeId& b) {
        return index.entries.at(a).total_return < index.entries.at(b).total_return;
    });
    return index;
}

SamplerState state_for(SamplerMode mode, std::uint64_t seed = 1) {
    SamplerSchedule s;
    s.initial.mode = mode;
    s.initial.seed = seed;
    return make_sampler_state(s);
}

std::vector<EpisodeId> ids_of(const std::vector<SampledItem>& items) {
    std::vector<EpisodeId> out;
    for (const auto& i : items) out.push_back(i.id);
    return out;
}

}  // namespace

TEST_CASE("random mode is reproducible and duplicate-free") {
    const auto index = make_index(20);
    SamplingSources src{&index};
    auto st = state_for(SamplerMode::random, 42);
    auto [a, s1] = next_batch(st, 5, src);
    auto [b, s2] = next_batch(st, 5, src);
    CHECK(a == b);
    CHECK(s1 == s2);
    const auto ids = ids_of(a);
    CHECK(std::set<EpisodeId>(ids.begin(), ids.end()).size() == 5);
}

TEST_CASE("random mode serves every episode before recycling") {
    const auto index = make_index(10);
    SamplingSources src{&index};
    auto st = state_for(SamplerMode::random, 7);
    std::set<EpisodeId> seen;
    for (int i = 0; i < 3; ++i) {
        auto [batch, next] = next_batch(st, 3, src, i);
        for (const auto& item : batch) CHECK(seen.insert(item.id).second);
        st = next;
    }
    auto [batch, next] = next_batch(st, 3, src, 3);
    // One fresh episode remains; the rest recycle the earliest served.
    CHECK(!seen.contains(batch[0].id));
    CHECK(batch[1].id == st.served_history[0].id);
    CHECK(batch[2].id == st.served_history[1].id);
    CHECK(next.served_history.size() == 12);
}

TEST_CASE("random mode marginal is uniform") {
    // Chi-square with 9 degrees of freedom; 99.9% quantile is 27.88.
    const auto index = make_index(10);
    SamplingSources src{&index};
    std::map<EpisodeId, int> counts;
    for (int draw = 0; draw < 10000; ++draw) {
        auto st = state_for(SamplerMode::random, 1000 + draw);
        counts[next_batch(st, 1, src).first.front().id]++;
    }
    double chi2 = 0.0;
    for (const auto& [id, c] : counts) chi2 += (c - 1000.0) * (c - 1000.0) / 1000.0;
    CHECK(counts.size() == 10);
    CHECK(chi2 < 27.88);
}

TEST_CASE("progressive mode walks the skill ordering") {
    const auto index = make_index(30, 99);
    SamplingSources src{&index};
    auto st = state_for(SamplerMode::progressive);
    double prev_max = -1.0;
    std::vector<double> firsts;
    for (int b = 0; b < 10; ++b) {
        auto [batch, next] = next_batch(st, 3, src);
        CHECK(next.cursor == st.cursor + 3);
        std::vector<double> r;
        for (const auto& item : batch) r.push_back(index.entries.at(item.id).total_return);
        CHECK(std::is_sorted(r.begin(), r.end()));
        CHECK(r.front() > prev_max - 3.0);
        prev_max = r.back();
        firsts.push_back(r.front());
        st = next;
    }
    CHECK(std::is_sorted(firsts.begin(), firsts.end()));
    CHECK_THROWS_AS(next_batch(st, 3, src), Exhausted);
}

TEST_CASE("progressive first and last batch") {
    const auto index = make_index(12);
    SamplingSources src{&index};
    SamplerSchedule s;
    s.initial.mode = SamplerMode::progressive;
    s.initial.window = 3;
    auto st = make_sampler_state(s);
    auto [first, st1] = next_batch(st, 3, src);
    CHECK(ids_of(first) == std::vector<EpisodeId>(index.ordering.begin(), index.ordering.begin() + 3));
    st = st1;
    std::vector<SampledItem> last;
    while (st.cursor < 12) std::tie(last, st) = next_batch(st, 3, src);
    CHECK(ids_of(last) == std::vector<EpisodeId>(index.ordering.end() - 3, index.ordering.end()));
}

TEST_CASE("query-based returns the argmax-loss set") {
    const auto index = make_index(10);
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        std::map<EpisodeId, double> losses;
        for (int i = 0; i < 10; ++i) losses[eid(i)] = uniform01(rng);
        EpisodeLossFn fn = [&](const EpisodeId& id) { return EpisodeLoss{losses.at(id), false}; };
        SamplingSources src{&index, nullptr, &fn};
        auto [batch, next] = next_batch(state_for(SamplerMode::query_based), 2, src);
        // Exhaustive oracle: the pair with the largest summed loss.
        double best = -1.0;
        std::set<EpisodeId> best_pair;
        for (int i = 0; i < 10; ++i)
            for (int j = i + 1; j < 10; ++j)
                if (losses[eid(i)] + losses[eid(j)] > best) {
                    best = losses[eid(i)] + losses[eid(j)];
                    best_pair = {eid(i), eid(j)};
                }
        const auto ids = ids_of(batch);
        CHECK(std::set<EpisodeId>(ids.begin(), ids.end()) == best_pair);
        CHECK_FALSE(next.cold_start);
    }
}

TEST_CASE("query-based needs a model and falls back to random when cold") {
    const auto index = make_index(10);
    SamplingSources none{&index};
    CHECK_THROWS_AS(next_batch(state_for(SamplerMode::query_based), 2, none), ModelRequired);
    EpisodeLossFn cold = [](const EpisodeId&) { return EpisodeLoss{0.0, true}; };
    SamplingSources src{&index, nullptr, &cold};
    auto [batch, next] = next_batch(state_for(SamplerMode::query_based, 3), 4, src);
    CHECK(batch.size() == 4);
    CHECK(next.cold_start);
}

TEST_CASE("interleaved mixes calibration items at rate rho") {
    const auto main = make_index(400);
    BufferIndex calib;
    for (int i = 0; i < 400; ++i) {
        EpisodeId id{"default-8x8", "calibration-rollout", 0, 0, i};
        calib.entries[id] = IndexEntry{};
        calib.ordering.push_back(id);
    }
    SamplingSources src{&main, &calib};
    SamplerSchedule s;
    s.initial.mode = SamplerMode::interleaved;
    s.initial.rho = 0.25;
    auto st = make_sampler_state(s);
    int n_calib = 0, total = 0;
    for (int b = 0; b < 100; ++b) {
        auto [batch, next] = next_batch(st, 4, src);
        for (const auto& item : batch) {
            n_calib += item.source == SampleSource::calibration;
            CHECK((item.source == SampleSource::calibration) == calib.contains(item.id));
        }
        total += static_cast<int>(batch.size());
        st = next;
    }
    CHECK(total == 400);
    CHECK(std::abs(n_calib / 400.0 - 0.25) < 0.07);
}

TEST_CASE("repeat mode redraws served items") {
    const auto index = make_index(10);
    SamplingSources src{&index};
    CHECK_THROWS_AS(next_batch(state_for(SamplerMode::repeat), 1, src), Exhausted);
    auto st = state_for(SamplerMode::random);
    auto [first, st1] = next_batch(st, 3, src);
    st1.active.mode = SamplerMode::repeat;
    auto [again, st2] = next_batch(st1, 5, src);
    CHECK(again.size() == 3);
    const auto a = ids_of(first), b = ids_of(again);
    CHECK(std::set<EpisodeId>(a.begin(), a.end()) == std::set<EpisodeId>(b.begin(), b.end()));
}

TEST_CASE("manual mode serves the queue") {
    const auto index = make_index(5);
    SamplingSources src{&index};
    auto st = state_for(SamplerMode::manual);
    CHECK_THROWS_AS(next_batch(st, 1, src), Exhausted);
    st = select_manual(st, {eid(3), eid(1), eid(3)});
    auto [batch, next] = next_batch(st, 5, src);
    CHECK(ids_of(batch) == std::vector<EpisodeId>{eid(3), eid(1)});
    CHECK(next.manual_queue.empty());
    CHECK_THROWS_AS(next_batch(select_manual(next, {eid(42)}), 1, src), NotFound);
}

TEST_CASE("batch preconditions") {
    const auto index = make_index(5);
    BufferIndex empty;
    CHECK_THROWS_AS(next_batch(state_for(SamplerMode::random), 0, SamplingSources{&index}), RangeError);
    CHECK_THROWS_AS(next_batch(state_for(SamplerMode::random), 1, SamplingSources{&empty}), InsufficientData);
}

TEST_CASE("trigger fires exactly once") {
    SamplerSchedule s;
    s.initial.mode = SamplerMode::random;
    ModeSpec prog;
    prog.mode = SamplerMode::progressive;
    s.entries.push_back({Trigger{Trigger::Kind::feedback_count, 5}, prog});
    auto st = make_sampler_state(s);
    CHECK(st.is_state_machine());
    for (int i = 0; i < 4; ++i) st = advance_trigger(st, TriggerEvent::feedback());
    CHECK(st.active.mode == SamplerMode::random);
    st = advance_trigger(st, TriggerEvent::feedback());
    CHECK(st.active.mode == SamplerMode::progressive);
    int transitions = 1;
    for (int i = 0; i < 100; ++i) {
        auto next = advance_trigger(st, TriggerEvent::feedback());
        transitions += next.active != st.active;
        st = next;
    }
    CHECK(transitions == 1);
    CHECK(st.next_entry == 1);
}

TEST_CASE("schedule sequence follows a scripted event stream") {
    SamplerSchedule s;
    s.initial.mode = SamplerMode::random;
    ModeSpec m1{SamplerMode::progressive, 1}, m2{SamplerMode::random, 2}, m3{SamplerMode::repeat, 3};
    s.entries = {{Trigger{Trigger::Kind::feedback_count, 3}, m1},
                 {Trigger{Trigger::Kind::elapsed_ms, 1000}, m2},
                 {Trigger{Trigger::Kind::feedback_count, 2}, m3}};
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        auto st = make_sampler_state(s);
        std::vector<ModeSpec> seen{st.active};
        std::int64_t fb = 0, ms = 0;
        std::vector<ModeSpec> expected{s.initial};
        std::size_t entry = 0;
        for (int e = 0; e < 60; ++e) {
            const bool is_fb = rng() % 2 == 0;
            const std::int64_t dt = static_cast<std::int64_t>(rng() % 400);
            st = advance_trigger(st, is_fb ? TriggerEvent::feedback() : TriggerEvent::tick(dt));
            if (st.active != seen.back()) seen.push_back(st.active);
            // Independent model of the schedule.
            if (is_fb) ++fb;
            else ms += dt;
            if (entry < s.entries.size()) {
                const auto& t = s.entries[entry].trigger;
                if ((t.kind == Trigger::Kind::feedback_count ? fb : ms) >= t.threshold) {
                    expected.push_back(s.entries[entry].mode);
                    ++entry;
                    fb = ms = 0;
                }
            }
        }
        CHECK(seen == expected);
    }
}

TEST_CASE("transition resets the progressive cursor") {
    const auto index = make_index(10);
    SamplerSchedule s;
    s.initial.mode = SamplerMode::progressive;
    ModeSpec again{SamplerMode::progressive, 0};
    s.entries.push_back({Trigger{Trigger::Kind::feedback_count, 1}, again});
    auto st = make_sampler_state(s);
    st = next_batch(st, 2, SamplingSources{&index}).second;
    CHECK(st.cursor == 2);
    st = advance_trigger(st, TriggerEvent::feedback());
    CHECK(st.cursor == 0);
}

TEST_CASE("schedule json round trip") {
    SamplerSchedule s;
    s.initial = ModeSpec{SamplerMode::interleaved, 9, 0, 0.3, SampleSource::main};
    s.entries.push_back({Trigger{Trigger::Kind::elapsed_ms, 500}, ModeSpec{SamplerMode::progressive, 2, 7}});
    CHECK(schedule_from_json(to_json(s)) == s);
    CHECK_THROWS_AS(schedule_from_json(nlohmann::json::parse(R"({"initial":{"mode":"bogus"}})")), ConfigError);
    CHECK_THROWS_AS(schedule_from_json(nlohmann::json::parse(
                        R"({"schedule":[{"trigger":{"feedback_count":0},"mode":{"mode":"random"}}]})")),
                    ConfigError);
}
