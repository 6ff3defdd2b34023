#include "hfkit/types.hpp"

#include <charconv>
#include <vector>

namespace hfkit {

std::string_view to_string(Action a) {
    switch (a) {
        case Action::up: return "up";
        case Action::down: return "down";
        case Action::left: return "left";
        case Action::right: return "right";
    }
    return "?";
}

std::optional<Action> action_from_string(std::string_view s) {
    for (Action a : kActions)
        if (to_string(a) == s) return a;
    return std::nullopt;
}

std::string EpisodeId::key() const {
    return env_name + "/" + source_kind + "/" + std::to_string(policy_id) + "/" + std::to_string(skill_level) +
           "/" + std::to_string(episode_num);
}

std::optional<EpisodeId> EpisodeId::from_key(std::string_view key) {
    std::vector<std::string_view> parts;
    std::size_t pos = 0;
    while (true) {
        auto slash = key.find('/', pos);
        parts.push_back(key.substr(pos, slash == std::string_view::npos ? std::string_view::npos : slash - pos));
        if (slash == std::string_view::npos) break;
        pos = slash + 1;
    }
    if (parts.size() != 5) return std::nullopt;
    EpisodeId id;
    id.env_name = std::string(parts[0]);
    id.source_kind = std::string(parts[1]);
    std::int64_t* fields[3] = {&id.policy_id, &id.skill_level, &id.episode_num};
    for (int i = 0; i < 3; ++i) {
        auto p = parts[2 + i];
        auto [ptr, ec] = std::from_chars(p.data(), p.data() + p.size(), *fields[i]);
        if (ec != std::errc{} || ptr != p.data() + p.size()) return std::nullopt;
    }
    return id;
}

}  // namespace hfkit
