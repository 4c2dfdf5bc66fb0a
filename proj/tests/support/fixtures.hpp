#pragma once

#include "dhn/optimizer.hpp"
#include "dhn/simulation.hpp"
#include "dhn/topology.hpp"

#include <filesystem>
#include <random>
#include <vector>

namespace dhn::test {

std::filesystem::path data_path(const std::string& name);

/// Bundled lab-scale network: plant -> split 3 -> leaf users 1 and 2.
NetworkTopology two_user_network();

/// Bundled 17.5 h lab profile (one row per minute) held constant over
/// `dt`-second steps.
Scenario lab_scenario(double dt);

struct RandomTopologyOptions {
    std::size_t max_users = 8;
    std::size_t max_splits = 3;
    bool buildings = false;
    bool circular_pipes = true;
};

/// Random valid tree: chains of users ending in a leaf (with bypass) or in a
/// split node with two or three branches.
NetworkTopology random_topology(std::mt19937_64& rng, const RandomTopologyOptions& options = {});

/// Plant -> split -> two chains of `left` and `right` users, each ending in a
/// leaf with bypass. Users 1..left form the first chain.
NetworkTopology two_branch_topology(std::mt19937_64& rng, std::size_t left, std::size_t right);

/// Draws that leave every branch comfortably fed: their sum is a fraction
/// of the supply and the loss coefficients of random_topology stay within a
/// narrow range.
std::vector<double> random_draws(std::mt19937_64& rng, std::size_t users, double supply);

/// Users scattered in a square, all parameters from the design table.
SiteSpec random_site(std::mt19937_64& rng, std::size_t users, double extent = 400.0);

} // namespace dhn::test
