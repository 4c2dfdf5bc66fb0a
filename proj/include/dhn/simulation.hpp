#pragma once

#include "dhn/assembly.hpp"
#include "dhn/hydraulics.hpp"
#include "dhn/topology.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dhn {

struct DiscreteModel {
    Eigen::MatrixXd Ad;
    Eigen::MatrixXd Bd;
    Eigen::MatrixXd Ed;
};

/// Tustin transform with the inputs held constant over a step:
///   Ad = (I - dt/2 A)^{-1} (I + dt/2 A),  [Bd Ed] = (I - dt/2 A)^{-1} dt [B E]
DiscreteModel discretize_bilinear(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                  const Eigen::MatrixXd& E, double dt);

/// Boundary conditions for a run. Per-user series are indexed [user - 1][step];
/// an empty outer vector means "not provided".
struct Scenario {
    double dt = 1.0;
    std::vector<double> supply_temperature;
    std::vector<double> ambient_temperature;
    std::vector<double> supply_flow;
    std::vector<std::vector<double>> user_flow;   // open-loop draws, kg/s
    std::vector<std::vector<double>> heat_demand; // W, used when buildings are not modelled
    std::vector<std::vector<double>> setpoint;    // building setpoints for closed loop
    std::map<std::string, std::vector<double>> measured; // state label -> trace
    std::optional<double> initial_temperature;    // defaults to the first ambient value

    std::size_t horizon() const { return supply_temperature.size(); }
    /// Throws Error("bad_scenario") on inconsistent lengths or dt <= 0.
    void check(std::size_t user_count) const;
};

struct SimOptions {
    bool with_buildings = false;
    double reassembly_tolerance = 1e-3; // relative segment-flow change that triggers a rebuild
    FlowSolverOptions flow;
};

struct SimResult {
    std::vector<StateLabel> states;
    std::vector<double> time;
    Eigen::MatrixXd trajectory;                   // one row per step, state at the start of the step
    std::vector<std::vector<double>> user_flow;   // commanded draws [user - 1][step]
    std::vector<std::vector<double>> model_draws; // draws the discretized model was built from
    std::vector<double> model_supply;
    std::vector<std::vector<bool>> saturated;     // controller at a limit [user - 1][step]
    std::vector<int> flow_iterations;
    std::size_t reassemblies = 0;

    std::vector<double> series(const std::string& label) const;
};

/// Open loop: draws and heat demands come from the scenario. Flows are
/// re-solved whenever the inputs change and the model is rebuilt when any
/// segment flow moves by more than the reassembly tolerance.
SimResult simulate(const NetworkTopology& topology, const Scenario& scenario, const SimOptions& options = {});

struct PidLoop {
    double kp = 0.0;
    double ki = 0.0;
    double kd = 0.0;
    double bias = 0.0;
    double min_flow = 0.0;
    double max_flow = 0.0;
};

enum class ControlTarget {
    Setpoint,         // error = setpoint - simulated building temperature
    MeasuredBuilding, // error = measured - simulated building temperature
};

struct PidConfig {
    std::vector<PidLoop> loops; // one per user
    ControlTarget target = ControlTarget::Setpoint;
};

/// Discrete PID with clamped output and conditional integration.
class PidController {
public:
    PidController(const PidLoop& loop, double dt);
    double update(double error);
    bool saturated() const noexcept { return saturated_; }

private:
    PidLoop loop_;
    double dt_;
    double integral_ = 0.0;
    double previous_ = 0.0;
    bool first_ = true;
    bool saturated_ = false;
};

/// Closed loop with one PID per user setting its draw from the building
/// temperature error. Buildings are always modelled.
SimResult simulate_closed_loop(const NetworkTopology& topology, const Scenario& scenario,
                               const PidConfig& pid, const SimOptions& options = {});

/// Relay experiment on every building at once (draw toggles between the
/// limits around the first setpoint value), followed by Ziegler-Nichols PI
/// rules on the observed ultimate gain and period.
std::vector<PidLoop> relay_autotune(const NetworkTopology& topology, const Scenario& scenario,
                                    double min_flow, double max_flow, const SimOptions& options = {});

/// RMSE normalised by the range of the measured series.
double nrmse(std::span<const double> simulated, std::span<const double> measured);

double rmse(std::span<const double> simulated, std::span<const double> measured);

struct CalibrationTarget {
    NodeId node = 0;
    Segment segment = Segment::F;
    friend bool operator==(const CalibrationTarget&, const CalibrationTarget&) = default;
};

struct CalibrationOptions {
    double lower = 1e-4;  // W/K
    double upper = 1e4;   // W/K
    int starts = 3;
    int max_evaluations = 500; // per start
    std::uint64_t seed = 0;
    SimOptions sim;
};

struct CalibrationResult {
    std::vector<CalibrationTarget> targets;
    std::vector<double> values; // W/K
    double objective = 0.0;
    double initial_objective = 0.0;
    std::vector<double> history; // best objective after each simplex iteration
    int evaluations = 0;
};

/// Sum over measured states of the RMSE between simulated and measured traces.
double calibration_objective(const NetworkTopology& topology, const Scenario& scenario, const SimOptions& options);

/// Nelder-Mead in log-conductance space with multiple starts. Candidates whose
/// simulation fails or diverges are scored +inf.
CalibrationResult calibrate_h(const NetworkTopology& topology, const Scenario& scenario,
                              std::span<const CalibrationTarget> targets, const CalibrationOptions& options = {});

} // namespace dhn
