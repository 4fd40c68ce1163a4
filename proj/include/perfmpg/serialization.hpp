#pragma once

#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "perfmpg/errors.hpp"
#include "perfmpg/game.hpp"

namespace perfmpg {

inline constexpr int kGameFormatVersion = 1;

/// Versioned game document:
/// {version, n, states, actions[], gamma, rho[], rewards[agent][s][joint_a],
///  kernel[s][joint_a][s']}, joint actions row-major in agent order.
inline nlohmann::json game_to_json(const TabularGame& g) {
    nlohmann::json doc;
    doc["version"] = kGameFormatVersion;
    doc["n"] = g.num_agents;
    doc["states"] = g.num_states;
    doc["actions"] = g.num_actions;
    doc["gamma"] = g.discount;
    doc["rho"] = g.init_dist;
    const std::size_t A = g.actions.total();
    nlohmann::json rewards = nlohmann::json::array();
    for (int i = 0; i < g.num_agents; ++i) {
        nlohmann::json per_state = nlohmann::json::array();
        for (int s = 0; s < g.num_states; ++s) {
            nlohmann::json row = nlohmann::json::array();
            for (std::size_t j = 0; j < A; ++j) row.push_back(g.reward(i, s, j));
            per_state.push_back(std::move(row));
        }
        rewards.push_back(std::move(per_state));
    }
    doc["rewards"] = std::move(rewards);
    nlohmann::json kernel = nlohmann::json::array();
    for (int s = 0; s < g.num_states; ++s) {
        nlohmann::json per_action = nlohmann::json::array();
        for (std::size_t j = 0; j < A; ++j) {
            nlohmann::json row = nlohmann::json::array();
            for (int t = 0; t < g.num_states; ++t) row.push_back(g.transition(s, j, t));
            per_action.push_back(std::move(row));
        }
        kernel.push_back(std::move(per_action));
    }
    doc["kernel"] = std::move(kernel);
    return doc;
}

inline TabularGame game_from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw ValidationError("game document must be an object");
    if (doc.value("version", -1) != kGameFormatVersion)
        throw ValidationError("unsupported game document version");
    int n = doc.at("n").get<int>();
    int states = doc.at("states").get<int>();
    std::vector<int> actions = doc.at("actions").get<std::vector<int>>();
    double gamma = doc.at("gamma").get<double>();
    TabularGame g = make_zero_game(n, states, actions, gamma);
    g.init_dist = doc.at("rho").get<std::vector<double>>();
    const std::size_t A = g.actions.total();
    const auto& rewards = doc.at("rewards");
    if (rewards.size() != static_cast<std::size_t>(n))
        throw ValidationError("rewards must have one table per agent");
    for (int i = 0; i < n; ++i) {
        const auto& per_state = rewards.at(i);
        if (per_state.size() != static_cast<std::size_t>(states))
            throw ValidationError("reward table must have one row per state");
        for (int s = 0; s < states; ++s) {
            const auto& row = per_state.at(s);
            if (row.size() != A)
                throw ValidationError("reward row must cover every joint action");
            for (std::size_t j = 0; j < A; ++j)
                g.reward(i, s, j) = row.at(j).get<double>();
        }
    }
    const auto& kernel = doc.at("kernel");
    if (kernel.size() != static_cast<std::size_t>(states))
        throw ValidationError("kernel must have one block per state");
    for (int s = 0; s < states; ++s) {
        const auto& per_action = kernel.at(s);
        if (per_action.size() != A)
            throw ValidationError("kernel block must cover every joint action");
        for (std::size_t j = 0; j < A; ++j) {
            const auto& row = per_action.at(j);
            if (row.size() != static_cast<std::size_t>(states))
                throw ValidationError("kernel row must cover every state");
            for (int t = 0; t < states; ++t)
                g.transition(s, j, t) = row.at(t).get<double>();
        }
    }
    refresh_reward_bound(g);
    validate_game(g);
    return g;
}

inline void save_game(const TabularGame& g, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out << game_to_json(g).dump(2) << '\n';
}

inline TabularGame load_game(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path + "' for reading");
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("game document: ") + e.what());
    }
    return game_from_json(doc);
}

} // namespace perfmpg
