#pragma once

#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "hfkit/errors.hpp"
#include "hfkit/types.hpp"

namespace hfkit {

/// Static layout and reward parameters of a grid. Cells outside
/// [0,width) x [0,height) are walls.
struct GridSpec {
    std::string name = "grid";
    int width = 3;
    int height = 3;
    std::set<Cell> walls;
    std::set<Cell> lava;
    Cell goal{};
    Cell start{};
    double step_penalty = -0.01;
    double goal_reward = 1.0;
    double lava_reward = -1.0;
    int max_steps = 0;  // 0 means 4 * width * height
    double discount = 0.95;
    std::int64_t seed = 0;

    int effective_max_steps() const { return max_steps > 0 ? max_steps : 4 * width * height; }
    bool in_bounds(Cell c) const { return c.x >= 0 && c.y >= 0 && c.x < width && c.y < height; }
    bool is_wall(Cell c) const { return !in_bounds(c) || walls.contains(c); }
    bool is_lava(Cell c) const { return lava.contains(c); }
    bool is_goal(Cell c) const { return c == goal; }
    bool is_terminal(Cell c) const { return is_goal(c) || is_lava(c); }
    // Non-wall, non-terminal cell.
    bool is_floor(Cell c) const { return !is_wall(c) && !is_terminal(c); }

    int cell_count() const { return width * height; }
    int index(Cell c) const { return c.y * width + c.x; }
    Cell cell_at(int index) const { return {index % width, index / width}; }

    std::vector<Cell> floor_cells() const;
    std::uint64_t layout_hash() const;
};

/// Throws ConfigError on an inconsistent spec.
void check_spec(const GridSpec& spec);

/// Named fixtures shipped with the library ("default-8x8", "empty-8x8", "empty-3x3").
GridSpec fixture(std::string_view name);

/// Map file: a header line `gridworld key=value ...` followed by rows of
/// '#' wall, 'G' goal, 'L' lava, 'S' start, '.' floor.
GridSpec parse_map(std::string_view text);
std::string format_map(const GridSpec& spec);
GridSpec load_map_file(const std::string& path);

/// Fixture name or path to a map file.
GridSpec resolve_environment(const std::string& name_or_path);

struct Observation {
    Cell agent;
    std::uint64_t layout = 0;

    bool operator==(const Observation&) const = default;
};

enum class Termination { goal, lava, timeout };
std::string_view to_string(Termination t);

struct StepResult {
    Observation next;
    double reward = 0.0;
    bool terminal = false;
};

/// One transition. Throws InvalidState if the agent stands in a wall or on a
/// terminal cell.
StepResult step(const GridSpec& spec, const Observation& state, Action action);

Observation initial_observation(const GridSpec& spec);

struct EpisodeRecord {
    EpisodeId id;
    std::vector<Observation> states;  // actions.size() + 1 entries
    std::vector<Action> actions;
    std::vector<double> gt_rewards;
    double total_return = 0.0;
    Termination terminated = Termination::timeout;

    bool operator==(const EpisodeRecord&) const = default;

    int length() const { return static_cast<int>(actions.size()); }
};

/// Sums rewards left to right; the stored total_return must equal this exactly.
double sum_rewards(const std::vector<double>& rewards);

/// Bookkeeping and (when a spec is given) dynamics consistency.
std::vector<std::string> episode_violations(const EpisodeRecord& ep, const GridSpec* spec = nullptr);

nlohmann::json to_json(const EpisodeRecord& ep);
EpisodeRecord episode_from_json(const nlohmann::json& j);

/// Replays `actions` from `start` until the actions run out or a terminal
/// cell is reached. Throws InvalidState if `start` is not a floor cell.
EpisodeRecord replay(const GridSpec& spec, EpisodeId id, Cell start, const std::vector<Action>& actions);

// ---------------------------------------------------------------------------
// Optimal control

/// State values and action values indexed by GridSpec::index. Walls and
/// terminal cells have value 0.
struct ValueTable {
    Eigen::VectorXd values;
    Eigen::MatrixXd q;  // cell_count x 4, columns in Action order
    int iterations = 0;
    double residual = 0.0;

    double v(const GridSpec& spec, Cell c) const { return values(spec.index(c)); }
    double q_of(const GridSpec& spec, Cell c, Action a) const { return q(spec.index(c), static_cast<int>(a)); }
};

/// Ground-truth reward of entering `to` (the reward `step` would return).
double transition_reward(const GridSpec& spec, Cell to);

/// Bellman optimality fixed point for the environment reward.
ValueTable value_iteration(const GridSpec& spec, double tol = 1e-9);

/// Same dynamics and termination, but the reward of entering cell c is
/// cell_reward(index(c)).
ValueTable value_iteration(const GridSpec& spec, const Eigen::VectorXd& cell_reward, double tol = 1e-9);

/// First maximizing action in up < down < left < right order.
Action greedy_action(const ValueTable& table, const GridSpec& spec, Cell c);

// ---------------------------------------------------------------------------
// Rollouts

struct PolicyKind {
    enum class Kind { optimal, epsilon, boltzmann } kind = Kind::optimal;
    double param = 0.0;  // epsilon or beta

    static PolicyKind optimal() { return {Kind::optimal, 0.0}; }
    static PolicyKind epsilon(double eps) { return {Kind::epsilon, eps}; }
    static PolicyKind boltzmann(double beta) { return {Kind::boltzmann, beta}; }

    std::int64_t policy_id() const { return static_cast<std::int64_t>(kind); }
    /// Grade in [0, 1000]: 1000 for optimal, round(1000 (1 - eps)) for epsilon,
    /// min(1000, round(10 beta)) for boltzmann.
    std::int64_t skill_level() const;
};

struct RolloutOptions {
    std::string source_kind = "policy-rollout";
    std::int64_t first_episode_num = 0;
};

/// n episodes from the spec's start, reproducible given the seed.
std::vector<EpisodeRecord> rollout_policy(const GridSpec& spec, const ValueTable& q_star, PolicyKind policy, int n,
                                          std::uint64_t rng_seed, const RolloutOptions& opts = {});
std::vector<EpisodeRecord> rollout_policy(const GridSpec& spec, PolicyKind policy, int n, std::uint64_t rng_seed,
                                          const RolloutOptions& opts = {});

/// Samples an action with probability proportional to exp(beta * Q(s, a)).
/// beta = +inf selects the greedy action.
Action sample_boltzmann_action(const ValueTable& table, const GridSpec& spec, Cell c, double beta, std::mt19937_64& rng);

/// Uniform double in [0, 1) from 53 random bits; identical on every platform.
double uniform01(std::mt19937_64& rng);

/// Return of the greedy policy of `table` executed in the true environment.
double greedy_return(const GridSpec& spec, const ValueTable& table);

}  // namespace hfkit
