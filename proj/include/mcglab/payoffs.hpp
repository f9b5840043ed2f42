#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "mcglab/rng.hpp"

namespace mcglab {

// Reward lookup tables for one round of a two-player matrix game.
// Both matrices are indexed [a1][a2]: agent 1's action picks the row,
// agent 2's action picks the column.
struct PayoffPair {
    int n = 0;               // actions per agent
    std::vector<double> r1;  // n*n, row-major, reward for agent 1
    std::vector<double> r2;  // n*n, row-major, reward for agent 2

    double reward1(int a1, int a2) const { return r1[static_cast<size_t>(a1) * n + a2]; }
    double reward2(int a1, int a2) const { return r2[static_cast<size_t>(a1) * n + a2]; }
};

// Every matrix entry is an independent N(mean, variance) draw; r1 is filled
// first, then r2, both row-major, so the rng advances by exactly 2*n*n draws.
inline PayoffPair sample_random_payoffs(Rng& rng, int n_actions, double mean, double variance) {
    if (n_actions < 1) throw std::invalid_argument("sample_random_payoffs: n_actions must be >= 1");
    if (!(variance > 0.0)) throw std::invalid_argument("sample_random_payoffs: variance must be > 0");
    const double stddev = std::sqrt(variance);
    PayoffPair p;
    p.n = n_actions;
    p.r1.resize(static_cast<size_t>(n_actions) * n_actions);
    p.r2.resize(static_cast<size_t>(n_actions) * n_actions);
    for (double& x : p.r1) x = rng.gaussian(mean, stddev);
    for (double& x : p.r2) x = rng.gaussian(mean, stddev);
    return p;
}

inline const std::vector<std::string>& fixed_game_names() {
    static const std::vector<std::string> names = {
        "prisoners_dilemma", "battle_of_sexes", "matching_pennies"};
    return names;
}

inline PayoffPair fixed_payoffs(const std::string& name) {
    PayoffPair p;
    p.n = 2;
    if (name == "prisoners_dilemma") {
        p.r1 = {3, 0, 4, 1};
        p.r2 = {3, 4, 0, 1};
    } else if (name == "battle_of_sexes") {
        p.r1 = {2, 0, 0, 1};
        p.r2 = {1, 0, 0, 2};
    } else if (name == "matching_pennies") {
        p.r1 = {1, -1, -1, 1};
        p.r2 = {-1, 1, 1, -1};
    } else {
        std::string valid;
        for (const auto& g : fixed_game_names()) {
            if (!valid.empty()) valid += ", ";
            valid += g;
        }
        throw std::invalid_argument("fixed_payoffs: unknown game '" + name + "' (valid: " + valid + ")");
    }
    return p;
}

}  // namespace mcglab
