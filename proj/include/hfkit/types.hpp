#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

namespace hfkit {

struct Cell {
    int x = 0;
    int y = 0;

    auto operator<=>(const Cell&) const = default;
};

// Greedy tie-breaking follows the declaration order.
enum class Action : std::uint8_t { up = 0, down = 1, left = 2, right = 3 };

inline constexpr std::array<Action, 4> kActions{Action::up, Action::down, Action::left, Action::right};

std::string_view to_string(Action a);
std::optional<Action> action_from_string(std::string_view s);

inline Cell move(Cell c, Action a) {
    switch (a) {
        case Action::up: return {c.x, c.y - 1};
        case Action::down: return {c.x, c.y + 1};
        case Action::left: return {c.x - 1, c.y};
        case Action::right: return {c.x + 1, c.y};
    }
    return c;
}

/// Identifies one stored episode. The 5-tuple is unique within a buffer.
struct EpisodeId {
    std::string env_name;
    std::string source_kind;  // "policy-rollout", "human-demo", "calibration-rollout", ...
    std::int64_t policy_id = 0;
    std::int64_t skill_level = 0;  // proxy for a checkpoint step
    std::int64_t episode_num = 0;

    auto operator<=>(const EpisodeId&) const = default;

    // "env/source/policy/skill/num"; used as a map key on disk and in URLs.
    std::string key() const;
    static std::optional<EpisodeId> from_key(std::string_view key);
};

}  // namespace hfkit

template <>
struct std::hash<hfkit::Cell> {
    std::size_t operator()(const hfkit::Cell& c) const noexcept {
        return std::hash<std::int64_t>{}((static_cast<std::int64_t>(c.x) << 32) ^ static_cast<std::uint32_t>(c.y));
    }
};
