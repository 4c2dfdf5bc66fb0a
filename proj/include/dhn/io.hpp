#pragma once

#include "dhn/assembly.hpp"
#include "dhn/optimizer.hpp"
#include "dhn/simulation.hpp"
#include "dhn/topology.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace dhn {

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

// Network JSON: {"fluid": {...}, "nodes": [...], "edges": [[parent, child], ...]}
NetworkTopology network_from_json(const std::string& text);
std::string network_to_json(const NetworkTopology& topology);
NetworkTopology load_network(const std::filesystem::path& path);
void save_network(const std::filesystem::path& path, const NetworkTopology& topology);

// Site JSON: {"plant": [x, y], "users": [[x, y], ...], "parameters": {...}}
SiteSpec site_from_json(const std::string& text);
std::string site_to_json(const SiteSpec& site);
SiteSpec load_site(const std::filesystem::path& path);

/// Scenario CSV. Columns are matched by header name:
///   t[s] T0[degC] Tamb[degC] m0[kg/s] mU_<i>[kg/s] Q_<i>[W] Tset_<i>[degC] meas:<state>[degC]
/// dt is taken from the time column unless `dt` is given.
Scenario scenario_from_csv(const std::string& text, std::size_t user_count, std::optional<double> dt = {});
std::string scenario_to_csv(const Scenario& scenario);
Scenario load_scenario(const std::filesystem::path& path, std::size_t user_count, std::optional<double> dt = {});

/// Matrix with a leading label column. Column headers carry their units.
std::string matrix_to_csv(const Eigen::MatrixXd& m, const std::vector<std::string>& row_labels,
                          const std::vector<std::string>& col_headers);
std::string state_index_csv(const std::vector<StateLabel>& states);
std::string trajectory_to_csv(const SimResult& result);
std::string h_table_csv(const CalibrationResult& result);

std::string design_to_json(const ProblemGraph& graph, const DesignResult& result);
std::string pipes_to_csv(const DesignResult& result);
std::string design_to_dot(const ProblemGraph& graph, const DesignResult& result);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// Command-line surface shared by the executable and the tests.
struct RunConfig {
    std::string command; // validate | assemble | simulate | calibrate | optimize
    std::optional<std::filesystem::path> network;
    std::optional<std::filesystem::path> scenario;
    std::optional<std::filesystem::path> site;
    std::filesystem::path out = ".";
    std::optional<double> dt;
    std::uint64_t seed = 0;

    // assemble
    double supply_flow = 1.0; // ideal split when no scenario is given
    bool buildings = false;

    // simulate
    bool closed_loop = false;
    bool track_measured = false;
    bool autotune = false;
    double kp = 0.0;
    double ki = 0.0;
    double kd = 0.0;
    double min_flow = 0.0;
    double max_flow = 1.0;
    double reassembly_tolerance = 1e-3;
    double flow_tolerance = 1e-9;

    // calibrate
    std::vector<std::string> targets; // "<node>:<segment>"
    double h_lower = 1e-4;
    double h_upper = 1e4;
    int max_evaluations = 500;

    // optimize
    double delta_t_init = 0.0;
    std::size_t max_candidates = 2'000'000;
    std::optional<double> max_child_distance;
    Objective objective = Objective::Loss;
    int max_iterations = 10;
};

/// Runs one command. Errors are written to `err` as {"code", "message",
/// "location"} and yield a nonzero status.
int run(const RunConfig& config, std::ostream& out, std::ostream& err);

} // namespace dhn
