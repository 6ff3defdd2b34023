#include "hfkit/gridworld.hpp"

#include "hfkit/feedback.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace hfkit {

using nlohmann::json;

namespace {

constexpr std::string_view kDefault8x8 =
    "gridworld name=default-8x8 step_penalty=-0.01 goal_reward=1 lava_reward=-1 discount=0.95 max_steps=256 seed=0\n"
    "########\n"
    "#S.....#\n"
    "#..L...#\n"
    "#......#\n"
    "#...L..#\n"
    "#.L....#\n"
    "#.....G#\n"
    "########\n";

constexpr std::string_view kEmpty8x8 =
    "gridworld name=empty-8x8\n"
    "########\n"
    "#S.....#\n"
    "#......#\n"
    "#......#\n"
    "#......#\n"
    "#......#\n"
    "#.....G#\n"
    "########\n";

constexpr std::string_view kEmpty3x3 =
    "gridworld name=empty-3x3\n"
    "S..\n"
    "...\n"
    "..G\n";

constexpr double kTieTolerance = 1e-12;

}  // namespace

// ---------------------------------------------------------------------------

std::vector<Cell> GridSpec::floor_cells() const {
    std::vector<Cell> out;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            if (is_floor({x, y})) out.push_back({x, y});
    return out;
}

std::uint64_t GridSpec::layout_hash() const {
    // FNV-1a over the rendered rows.
    std::uint64_t h = 1469598103934665603ull;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            Cell c{x, y};
            char ch = is_wall(c) ? '#' : is_goal(c) ? 'G' : is_lava(c) ? 'L' : '.';
            h ^= static_cast<unsigned char>(ch);
            h *= 1099511628211ull;
        }
        h ^= '\n';
        h *= 1099511628211ull;
    }
    return h;
}

void check_spec(const GridSpec& spec) {
    if (spec.width < 3 || spec.height < 3) throw ConfigError("grid must be at least 3x3");
    if (spec.is_wall(spec.start)) throw ConfigError("start cell is a wall");
    if (spec.is_wall(spec.goal)) throw ConfigError("goal cell is a wall");
    if (spec.is_lava(spec.goal)) throw ConfigError("goal cell is lava");
    if (spec.start == spec.goal || spec.is_lava(spec.start)) throw ConfigError("start cell is terminal");
    if (!(spec.discount > 0.0 && spec.discount < 1.0)) throw ConfigError("discount must lie in (0,1)");
    if (spec.max_steps < 0) throw ConfigError("max_steps must be non-negative");
}

GridSpec parse_map(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string header;
    if (!std::getline(in, header)) throw ConfigError("empty map");
    std::istringstream hs(header);
    std::string word;
    hs >> word;
    if (word != "gridworld") throw ConfigError("map header must start with 'gridworld'");

    GridSpec spec;
    while (hs >> word) {
        auto eq = word.find('=');
        if (eq == std::string::npos) throw ConfigError("bad header parameter '" + word + "'");
        auto key = word.substr(0, eq);
        auto value = word.substr(eq + 1);
        try {
            if (key == "name") spec.name = value;
            else if (key == "step_penalty") spec.step_penalty = std::stod(value);
            else if (key == "goal_reward") spec.goal_reward = std::stod(value);
            else if (key == "lava_reward") spec.lava_reward = std::stod(value);
            else if (key == "discount") spec.discount = std::stod(value);
            else if (key == "max_steps") spec.max_steps = std::stoi(value);
            else if (key == "seed") spec.seed = std::stoll(value);
            else throw ConfigError("unknown header parameter '" + key + "'");
        } catch (const std::logic_error&) {
            throw ConfigError("bad value for '" + key + "'");
        }
    }

    std::vector<std::string> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        rows.push_back(line);
    }
    if (rows.empty()) throw ConfigError("map has no rows");
    spec.height = static_cast<int>(rows.size());
    spec.width = static_cast<int>(rows.front().size());
    bool have_start = false, have_goal = false;
    for (int y = 0; y < spec.height; ++y) {
        if (static_cast<int>(rows[y].size()) != spec.width) throw ConfigError("map rows differ in length");
        for (int x = 0; x < spec.width; ++x) {
            switch (rows[y][x]) {
                case '#': spec.walls.insert({x, y}); break;
                case 'L': spec.lava.insert({x, y}); break;
                case 'G':
                    if (have_goal) throw ConfigError("map has more than one goal");
                    spec.goal = {x, y};
                    have_goal = true;
                    break;
                case 'S':
                    if (have_start) throw ConfigError("map has more than one start");
                    spec.start = {x, y};
                    have_start = true;
                    break;
                case '.': break;
                default: throw ConfigError(std::string("unknown map character '") + rows[y][x] + "'");
            }
        }
    }
    if (!have_start || !have_goal) throw ConfigError("map needs exactly one 'S' and one 'G'");
    check_spec(spec);
    return spec;
}

std::string format_map(const GridSpec& spec) {
    std::ostringstream out;
    out.precision(17);
    out << "gridworld name=" << spec.name << " step_penalty=" << spec.step_penalty
        << " goal_reward=" << spec.goal_reward << " lava_reward=" << spec.lava_reward
        << " discount=" << spec.discount << " max_steps=" << spec.max_steps << " seed=" << spec.seed << "\n";
    for (int y = 0; y < spec.height; ++y) {
        for (int x = 0; x < spec.width; ++x) {
            Cell c{x, y};
            out << (spec.walls.contains(c) ? '#'
                    : spec.is_goal(c)      ? 'G'
                    : spec.is_lava(c)      ? 'L'
                    : c == spec.start      ? 'S'
                                           : '.');
        }
        out << "\n";
    }
    return out.str();
}

GridSpec load_map_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw NotFound("cannot open map file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_map(ss.str());
}

GridSpec fixture(std::string_view name) {
    if (name == "default-8x8") return parse_map(kDefault8x8);
    if (name == "empty-8x8") return parse_map(kEmpty8x8);
    if (name == "empty-3x3") return parse_map(kEmpty3x3);
    throw NotFound("unknown environment fixture '" + std::string(name) + "'");
}

GridSpec resolve_environment(const std::string& name_or_path) {
    if (name_or_path == "default-8x8" || name_or_path == "empty-8x8" || name_or_path == "empty-3x3")
        return fixture(name_or_path);
    return load_map_file(name_or_path);
}

std::string_view to_string(Termination t) {
    switch (t) {
        case Termination::goal: return "goal";
        case Termination::lava: return "lava";
        case Termination::timeout: return "timeout";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Dynamics

double transition_reward(const GridSpec& spec, Cell to) {
    if (spec.is_goal(to)) return spec.goal_reward;
    if (spec.is_lava(to)) return spec.lava_reward;
    return spec.step_penalty;
}

Observation initial_observation(const GridSpec& spec) { return {spec.start, spec.layout_hash()}; }

StepResult step(const GridSpec& spec, const Observation& state, Action action) {
    if (spec.is_wall(state.agent)) throw InvalidState("agent stands in a wall");
    if (spec.is_terminal(state.agent)) throw InvalidState("episode already terminated");
    Cell next = move(state.agent, action);
    if (spec.is_wall(next)) next = state.agent;
    return {Observation{next, state.layout}, transition_reward(spec, next), spec.is_terminal(next)};
}

double sum_rewards(const std::vector<double>& rewards) {
    double total = 0.0;
    for (double r : rewards) total += r;
    return total;
}

std::vector<std::string> episode_violations(const EpisodeRecord& ep, const GridSpec* spec) {
    std::vector<std::string> out;
    if (ep.states.size() != ep.actions.size() + 1) out.push_back("states must have one more entry than actions");
    if (ep.gt_rewards.size() != ep.actions.size()) out.push_back("one reward per action required");
    if (ep.total_return != sum_rewards(ep.gt_rewards)) out.push_back("total_return differs from reward sum");
    if (ep.id.policy_id < 0 || ep.id.skill_level < 0 || ep.id.episode_num < 0)
        out.push_back("episode id fields must be non-negative");
    if (!out.empty() || !spec) return out;

    for (std::size_t t = 0; t < ep.actions.size(); ++t) {
        try {
            auto r = step(*spec, ep.states[t], ep.actions[t]);
            if (!(r.next == ep.states[t + 1]) || r.reward != ep.gt_rewards[t]) {
                out.push_back("transition " + std::to_string(t) + " inconsistent with dynamics");
                break;
            }
            if (r.terminal && t + 1 != ep.actions.size()) {
                out.push_back("episode continues past a terminal state");
                break;
            }
        } catch (const InvalidState&) {
            out.push_back("transition " + std::to_string(t) + " starts from an invalid state");
            break;
        }
    }
    return out;
}

json to_json(const EpisodeRecord& ep) {
    json states = json::array();
    for (const auto& s : ep.states) states.push_back(json::array({s.agent.x, s.agent.y}));
    json actions = json::array();
    for (Action a : ep.actions) actions.push_back(std::string(to_string(a)));
    std::uint64_t layout = ep.states.empty() ? 0 : ep.states.front().layout;
    return json{{"v", 1},
                {"id", to_json(ep.id)},
                {"layout", layout},
                {"states", std::move(states)},
                {"actions", std::move(actions)},
                {"gt_rewards", ep.gt_rewards},
                {"total_return", ep.total_return},
                {"terminated", std::string(to_string(ep.terminated))}};
}

EpisodeRecord episode_from_json(const json& j) {
    EpisodeRecord ep;
    ep.id = episode_id_from_json(j.at("id"));
    const auto layout = j.at("layout").get<std::uint64_t>();
    for (const auto& s : j.at("states")) ep.states.push_back({Cell{s.at(0).get<int>(), s.at(1).get<int>()}, layout});
    for (const auto& a : j.at("actions")) {
        auto act = action_from_string(a.get<std::string>());
        if (!act) throw ParseError(0, "unknown action in episode record");
        ep.actions.push_back(*act);
    }
    ep.gt_rewards = j.at("gt_rewards").get<std::vector<double>>();
    ep.total_return = j.at("total_return").get<double>();
    const auto term = j.at("terminated").get<std::string>();
    if (term == "goal") ep.terminated = Termination::goal;
    else if (term == "lava") ep.terminated = Termination::lava;
    else if (term == "timeout") ep.terminated = Termination::timeout;
    else throw ParseError(0, "unknown termination '" + term + "'");
    return ep;
}

EpisodeRecord replay(const GridSpec& spec, EpisodeId id, Cell start, const std::vector<Action>& actions) {
    if (!spec.is_floor(start)) throw InvalidState("replay must start on a floor cell");
    EpisodeRecord ep;
    ep.id = std::move(id);
    ep.states.push_back({start, spec.layout_hash()});
    ep.terminated = Termination::timeout;
    for (Action a : actions) {
        auto r = step(spec, ep.states.back(), a);
        ep.actions.push_back(a);
        ep.states.push_back(r.next);
        ep.gt_rewards.push_back(r.reward);
        if (r.terminal) {
            ep.terminated = spec.is_goal(r.next.agent) ? Termination::goal : Termination::lava;
            break;
        }
    }
    ep.total_return = sum_rewards(ep.gt_rewards);
    return ep;
}

// ---------------------------------------------------------------------------
// Value iteration

ValueTable value_iteration(const GridSpec& spec, const Eigen::VectorXd& cell_reward, double tol) {
    const int n = spec.cell_count();
    ValueTable table;
    table.values = Eigen::VectorXd::Zero(n);
    table.q = Eigen::MatrixXd::Zero(n, 4);

    std::vector<int> active;
    std::vector<std::array<int, 4>> successor(n);
    for (int i = 0; i < n; ++i) {
        Cell c = spec.cell_at(i);
        if (!spec.is_floor(c)) continue;
        active.push_back(i);
        for (Action a : kActions) {
            Cell next = move(c, a);
            if (spec.is_wall(next)) next = c;
            successor[i][static_cast<int>(a)] = spec.index(next);
        }
    }

    const double gamma = spec.discount;
    auto backup = [&](const Eigen::VectorXd& v) {
        Eigen::VectorXd next = Eigen::VectorXd::Zero(n);
        for (int i : active) {
            double best = -std::numeric_limits<double>::infinity();
            for (int a = 0; a < 4; ++a) {
                const int s = successor[i][a];
                const bool terminal = spec.is_terminal(spec.cell_at(s));
                const double q = cell_reward(s) + (terminal ? 0.0 : gamma * v(s));
                table.q(i, a) = q;
                best = std::max(best, q);
            }
            next(i) = best;
        }
        return next;
    };

    const int max_iterations = 100000;
    for (int it = 1; it <= max_iterations; ++it) {
        Eigen::VectorXd next = backup(table.values);
        table.residual = (next - table.values).cwiseAbs().maxCoeff();
        table.values = std::move(next);
        table.iterations = it;
        if (table.residual < tol) break;
    }
    // Q consistent with the returned values.
    Eigen::VectorXd check = backup(table.values);
    table.residual = (check - table.values).cwiseAbs().maxCoeff();
    return table;
}

ValueTable value_iteration(const GridSpec& spec, double tol) {
    Eigen::VectorXd reward(spec.cell_count());
    for (int i = 0; i < spec.cell_count(); ++i) reward(i) = transition_reward(spec, spec.cell_at(i));
    return value_iteration(spec, reward, tol);
}

Action greedy_action(const ValueTable& table, const GridSpec& spec, Cell c) {
    const auto row = table.q.row(spec.index(c));
    const double best = row.maxCoeff();
    for (Action a : kActions)
        if (row(static_cast<int>(a)) >= best - kTieTolerance) return a;
    return Action::up;
}

// ---------------------------------------------------------------------------
// Rollouts

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::int64_t PolicyKind::skill_level() const {
    switch (kind) {
        case Kind::optimal: return 1000;
        case Kind::epsilon: return std::clamp<std::int64_t>(std::llround(1000.0 * (1.0 - param)), 0, 1000);
        case Kind::boltzmann:
            if (!std::isfinite(param)) return 1000;
            return std::clamp<std::int64_t>(std::llround(10.0 * param), 0, 1000);
    }
    return 0;
}

Action sample_boltzmann_action(const ValueTable& table, const GridSpec& spec, Cell c, double beta,
                               std::mt19937_64& rng) {
    if (std::isinf(beta) && beta > 0) return greedy_action(table, spec, c);
    const auto row = table.q.row(spec.index(c));
    std::array<double, 4> w{};
    const double top = beta * row.maxCoeff();
    double total = 0.0;
    for (int a = 0; a < 4; ++a) {
        w[a] = std::exp(beta * row(a) - top);
        total += w[a];
    }
    double u = uniform01(rng) * total;
    for (int a = 0; a < 4; ++a) {
        if (u < w[a]) return kActions[a];
        u -= w[a];
    }
    return kActions[3];
}

std::vector<EpisodeRecord> rollout_policy(const GridSpec& spec, const ValueTable& q_star, PolicyKind policy, int n,
                                          std::uint64_t rng_seed, const RolloutOptions& opts) {
    std::vector<EpisodeRecord> out;
    out.reserve(std::max(n, 0));
    std::mt19937_64 rng(rng_seed);
    const int horizon = spec.effective_max_steps();
    for (int e = 0; e < n; ++e) {
        EpisodeRecord ep;
        ep.id = EpisodeId{spec.name, opts.source_kind, policy.policy_id(), policy.skill_level(),
                          opts.first_episode_num + e};
        ep.states.push_back(initial_observation(spec));
        ep.terminated = Termination::timeout;
        for (int t = 0; t < horizon; ++t) {
            const Cell c = ep.states.back().agent;
            Action a;
            switch (policy.kind) {
                case PolicyKind::Kind::optimal: a = greedy_action(q_star, spec, c); break;
                case PolicyKind::Kind::epsilon:
                    if (uniform01(rng) < policy.param)
                        a = kActions[static_cast<std::size_t>(uniform01(rng) * 4.0)];
                    else
                        a = greedy_action(q_star, spec, c);
                    break;
                case PolicyKind::Kind::boltzmann: a = sample_boltzmann_action(q_star, spec, c, policy.param, rng); break;
            }
            auto r = step(spec, ep.states.back(), a);
            ep.actions.push_back(a);
            ep.states.push_back(r.next);
            ep.gt_rewards.push_back(r.reward);
            if (r.terminal) {
                ep.terminated = spec.is_goal(r.next.agent) ? Termination::goal : Termination::lava;
                break;
            }
        }
        ep.total_return = sum_rewards(ep.gt_rewards);
        out.push_back(std::move(ep));
    }
    return out;
}

std::vector<EpisodeRecord> rollout_policy(const GridSpec& spec, PolicyKind policy, int n, std::uint64_t rng_seed,
                                          const RolloutOptions& opts) {
    return rollout_policy(spec, value_iteration(spec), policy, n, rng_seed, opts);
}

double greedy_return(const GridSpec& spec, const ValueTable& table) {
    Observation s = initial_observation(spec);
    double total = 0.0;
    for (int t = 0; t < spec.effective_max_steps(); ++t) {
        auto r = step(spec, s, greedy_action(table, spec, s.agent));
        total += r.reward;
        s = r.next;
        if (r.terminal) break;
    }
    return total;
}

}  // namespace hfkit
