#include <doctest.h>

#include <cmath>
#include <deque>
#include <functional>
#include <map>

#include "hfkit/gridworld.hpp"

using namespace hfkit;

namespace {

// Shortest path length from start to goal avoiding walls and lava.
int bfs_distance(const GridSpec& spec) {
    std::map<Cell, int> dist{{spec.start, 0}};
    std::deque<Cell> queue{spec.start};
    while (!queue.empty()) {
        Cell c = queue.front();
        queue.pop_front();
        if (c == spec.goal) return dist[c];
        for (Action a : kActions) {
            Cell n = move(c, a);
            if (spec.is_wall(n) || spec.is_lava(n) || dist.contains(n)) continue;
            dist[n] = dist[c] + 1;
            queue.push_back(n);
        }
    }
    return -1;
}

// Best discounted return from `c` by exhaustive search over simple paths,
// including the option of never terminating.
double exhaustive_value(const GridSpec& spec, Cell c) {
    const double never = spec.step_penalty / (1.0 - spec.discount);
    std::set<Cell> visited{c};
    std::function<double(Cell)> search = [&](Cell at) {
        double best = never;
        for (Action a : kActions) {
            Cell n = move(at, a);
            if (spec.is_wall(n) || visited.contains(n)) continue;
            double r = transition_reward(spec, n);
            double v = r;
            if (!spec.is_terminal(n)) {
                visited.insert(n);
                v = r + spec.discount * search(n);
                visited.erase(n);
            }
            best = std::max(best, v);
        }
        return best;
    };
    return search(c);
}

GridSpec small_grid() {
    return parse_map(
        "gridworld name=small step_penalty=-0.01 discount=0.9\n"
        "S...\n"
        ".#L.\n"
        "..#.\n"
        "L..G\n");
}

}  // namespace

TEST_CASE("entering the goal pays the goal reward and terminates") {
    auto spec = fixture("empty-3x3");
    auto r = step(spec, Observation{{1, 2}, spec.layout_hash()}, Action::right);
    CHECK(r.reward == 1.0);
    CHECK(r.terminal);
    CHECK(r.next.agent == Cell{2, 2});
}

TEST_CASE("bumping a wall costs one step and stays put") {
    auto spec = fixture("default-8x8");
    auto r = step(spec, initial_observation(spec), Action::up);
    CHECK(r.reward == doctest::Approx(-0.01));
    CHECK_FALSE(r.terminal);
    CHECK(r.next.agent == spec.start);
}

TEST_CASE("lava terminates with the lava reward") {
    auto spec = fixture("default-8x8");
    auto r = step(spec, Observation{{2, 2}, spec.layout_hash()}, Action::right);
    CHECK(r.reward == -1.0);
    CHECK(r.terminal);
}

TEST_CASE("stepping from a wall or terminal cell is invalid") {
    auto spec = fixture("default-8x8");
    CHECK_THROWS_AS(step(spec, Observation{{0, 0}, 0}, Action::down), InvalidState);
    CHECK_THROWS_AS(step(spec, Observation{spec.goal, 0}, Action::up), InvalidState);
}

TEST_CASE("map text round trips") {
    auto spec = fixture("default-8x8");
    auto again = parse_map(format_map(spec));
    CHECK(again.walls == spec.walls);
    CHECK(again.lava == spec.lava);
    CHECK(again.goal == spec.goal);
    CHECK(again.start == spec.start);
    CHECK(again.max_steps == spec.max_steps);
    CHECK(again.layout_hash() == spec.layout_hash());
    CHECK_THROWS_AS(parse_map("gridworld\n..\n.G\n"), ConfigError);
}

TEST_CASE("optimal return on the empty grid equals the shortest-path return") {
    auto spec = fixture("empty-8x8");
    int d = bfs_distance(spec);
    REQUIRE(d == 10);
    double expected = (d - 1) * spec.step_penalty + spec.goal_reward;
    auto episodes = rollout_policy(spec, PolicyKind::optimal(), 3, 1);
    for (const auto& ep : episodes) {
        CHECK(ep.total_return == doctest::Approx(expected).epsilon(1e-12));
        CHECK(ep.length() == d);
        CHECK(ep.terminated == Termination::goal);
    }
    CHECK(expected == doctest::Approx(0.91));
}

TEST_CASE("value next to the goal equals the goal reward") {
    auto spec = fixture("empty-3x3");
    auto vt = value_iteration(spec);
    CHECK(vt.v(spec, {1, 2}) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(vt.v(spec, {2, 1}) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(vt.v(spec, {1, 1}) == doctest::Approx(-0.01 + 0.95).epsilon(1e-9));
    CHECK(vt.v(spec, spec.goal) == 0.0);
}

TEST_CASE("value iteration matches exhaustive search") {
    for (auto spec : {small_grid(), fixture("empty-3x3")}) {
        auto vt = value_iteration(spec, 1e-12);
        CHECK(vt.residual < 1e-12);
        for (Cell c : spec.floor_cells()) {
            INFO(spec.name, " ", c.x, ",", c.y);
            CHECK(vt.v(spec, c) == doctest::Approx(exhaustive_value(spec, c)).epsilon(1e-9));
        }
    }
}

TEST_CASE("greedy ties break up, down, left, right") {
    auto spec = fixture("empty-3x3");
    auto vt = value_iteration(spec);
    // From (1,1) both down and right reach a cell adjacent to the goal.
    CHECK(greedy_action(vt, spec, {1, 1}) == Action::down);
    CHECK(greedy_action(vt, spec, {0, 0}) == Action::down);
}

TEST_CASE("residual is below tolerance") {
    auto spec = fixture("default-8x8");
    for (double tol : {1e-6, 1e-9, 1e-12}) CHECK(value_iteration(spec, tol).residual < tol);
}

TEST_CASE("epsilon zero behaves exactly like the optimal policy") {
    auto spec = fixture("default-8x8");
    auto a = rollout_policy(spec, PolicyKind::optimal(), 5, 11);
    auto b = rollout_policy(spec, PolicyKind::epsilon(0.0), 5, 11);
    for (int i = 0; i < 5; ++i) {
        CHECK(a[i].actions == b[i].actions);
        CHECK(a[i].total_return == b[i].total_return);
    }
}

TEST_CASE("rollouts are reproducible and bookkeeping-consistent") {
    auto spec = fixture("default-8x8");
    auto a = rollout_policy(spec, PolicyKind::boltzmann(2.0), 20, 99);
    auto b = rollout_policy(spec, PolicyKind::boltzmann(2.0), 20, 99);
    CHECK(a == b);
    for (const auto& ep : a) {
        CHECK(episode_violations(ep, &spec).empty());
        CHECK(ep.length() <= spec.effective_max_steps());
        CHECK(episode_from_json(to_json(ep)) == ep);
    }
}

TEST_CASE("boltzmann with beta zero picks actions uniformly") {
    auto spec = fixture("default-8x8");
    auto vt = value_iteration(spec);
    std::mt19937_64 rng(5);
    const int n = 40000;
    std::array<int, 4> counts{};
    for (int i = 0; i < n; ++i) counts[static_cast<int>(sample_boltzmann_action(vt, spec, {3, 3}, 0.0, rng))]++;
    double chi2 = 0;
    for (int c : counts) chi2 += std::pow(c - n / 4.0, 2) / (n / 4.0);
    // 3 degrees of freedom, p = 0.001
    CHECK(chi2 < 16.27);
}

TEST_CASE("more exploration lowers mean return") {
    auto spec = fixture("default-8x8");
    auto mean = [&](double eps) {
        double s = 0;
        for (const auto& ep : rollout_policy(spec, PolicyKind::epsilon(eps), 500, 3)) s += ep.total_return;
        return s / 500;
    };
    CHECK(mean(0.5) < mean(0.1));
}

TEST_CASE("skill levels") {
    CHECK(PolicyKind::optimal().skill_level() == 1000);
    CHECK(PolicyKind::epsilon(0.25).skill_level() == 750);
    CHECK(PolicyKind::boltzmann(2.0).skill_level() == 20);
    CHECK(PolicyKind::boltzmann(500.0).skill_level() == 1000);
}

TEST_CASE("replay follows the dynamics and stops at terminals") {
    auto spec = fixture("empty-3x3");
    EpisodeId id{"empty-3x3", "human-demo", 0, 0, 0};
    auto ep = replay(spec, id, spec.start, {Action::right, Action::right, Action::down, Action::down, Action::left});
    CHECK(ep.length() == 4);
    CHECK(ep.terminated == Termination::goal);
    CHECK(ep.total_return == doctest::Approx(0.97));
    CHECK_THROWS_AS(replay(spec, id, spec.goal, {Action::up}), InvalidState);
}

TEST_CASE("uniform01 uses 53 bits") {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 1000; ++i) {
        double u = uniform01(rng);
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        CHECK(std::ldexp(u, 53) == std::floor(std::ldexp(u, 53)));
    }
}
