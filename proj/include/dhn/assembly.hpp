#pragma once

#include "dhn/hydraulics.hpp"
#include "dhn/topology.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dhn {

/// Coefficients of the lumped energy balance dT/dt = c1 T_in + c2 T_amb + c3 T
/// (and c4 Q for the heat-exchanger segment).
struct ThermalCoeffs {
    double c1 = 0.0; // mdot / (rho V)
    double c2 = 0.0; // hA_s / (rho c_p V)
    double c3 = 0.0; // -(c1 + c2)
    double c4 = 0.0; // -1 / (rho c_p V)
};

ThermalCoeffs thermal_coeffs(const PipeParams& pipe, double flow, const Fluid& fluid);

/// Physical meaning of one state row. Building states use segment S2 with
/// `building` set and print as "Tb_<node>".
struct StateLabel {
    NodeId node = 0;
    Segment segment = Segment::F;
    bool building = false;

    std::string str() const;
    friend bool operator==(const StateLabel&, const StateLabel&) = default;
};

StateLabel parse_state_label(const std::string& text);

/// dT/dt = A T + B T_0 + E [T_amb, Q_1 .. Q_nu]^T
///
/// State order is [split feeding lines | user blocks 1..n_u | split return
/// lines]; a user block is F, S1, S2, S3, R and, for leaf users, B. When
/// buildings are appended their temperatures follow, and the Q columns of E
/// become zero because the heat demand is then an internal coupling.
struct StateSpaceModel {
    Eigen::SparseMatrix<double> A;
    Eigen::SparseMatrix<double> B;
    Eigen::SparseMatrix<double> E;
    std::vector<StateLabel> states;
    std::size_t user_count = 0;
    bool has_buildings = false;

    std::size_t size() const { return states.size(); }
    Eigen::MatrixXd dense_A() const { return Eigen::MatrixXd(A); }
    Eigen::MatrixXd dense_B() const { return Eigen::MatrixXd(B); }
    Eigen::MatrixXd dense_E() const { return Eigen::MatrixXd(E); }

    std::optional<std::size_t> find(const StateLabel& label) const;
    std::size_t index(const StateLabel& label) const;
    std::size_t index(const std::string& label) const { return index(parse_state_label(label)); }
};

struct UserBlock {
    Eigen::MatrixXd A; // 5x5, or 6x6 with bypass
    Eigen::MatrixXd E; // 5x2, or 6x2 with bypass; columns T_amb, Q_b
};

/// Block of one user: the S1 -> S2 -> S3 chain fed by F, the return segment
/// mixing S3 (and B) by flow ratio.
UserBlock user_block(const UserNode& user, const NodeFlow& flow, const Fluid& fluid);

StateSpaceModel assemble(const NetworkTopology& topology, const MassFlowSolution& flows);

/// Appends one building temperature per user, coupled to S2 through the
/// heat-exchanger conductance and to ambient through the envelope.
StateSpaceModel append_buildings(const StateSpaceModel& model, const NetworkTopology& topology);

/// Feeding-line-only model used for steady-state design costs.
struct ReducedModel {
    Eigen::MatrixXd A;
    Eigen::VectorXd B; // plant supply temperature
    Eigen::VectorXd E; // ambient temperature
    std::vector<std::string> states;

    /// -A^{-1} (B T_0 + E T_amb)
    Eigen::VectorXd steady_state(double supply_temperature, double ambient_temperature) const;
};

/// Keeps the F rows and columns of the assembled model, ordered split
/// feeding lines first and then user feeding lines.
ReducedModel reduce_feeding(const NetworkTopology& topology, const MassFlowSolution& flows);

/// One pipe of a feeding tree. `parent` indexes an earlier pipe whose outlet
/// feeds this one, or is -1 when the pipe leaves the plant.
struct FeedingPipe {
    int parent = -1;
    PipeParams pipe;
    double flow = 0.0;
    std::string label;
};

/// Builds the reduced model of an arbitrary feeding tree directly. Pipes must
/// be listed parents-first, which makes A lower triangular.
ReducedModel feeding_model(std::span<const FeedingPipe> pipes, const Fluid& fluid);

} // namespace dhn
