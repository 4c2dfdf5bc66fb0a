#pragma once

#include "dhn/topology.hpp"

#include <map>
#include <optional>
#include <span>
#include <vector>

namespace dhn {

/// Static pressure loss of one segment, zeta * mdot^2.
double segment_dp(double loss_coeff, double flow);

enum class BranchKind { Parallel, Series };

/// Chain of users hanging off a split node (or the plant). A parallel branch
/// ends in a leaf user and its bypass, a series branch ends in the feeding
/// segment of another split node. Users are ordered upstream to downstream.
struct BranchSpec {
    BranchKind kind = BranchKind::Parallel;
    std::vector<NodeId> users;
    std::vector<double> feed_loss;        // zeta_F of each user, same order
    double terminal_loss = 0.0;           // zeta_B (parallel) or zeta_F of the terminating split (series)
    std::optional<NodeId> terminal_split; // series only
};

/// Branch starting at `head`, which must be a child of a split node or of the plant.
BranchSpec branch_from(const NetworkTopology& topology, NodeId head);

/// Pressure loss of a branch in closed form:
///   sum_i 2^i zeta_F,i (m_in - draws upstream of i)^2 + phi
/// with phi = 2^n zeta_B m_out^2 for parallel branches and
/// phi = 2^n (zeta_F,split m_out^2 + downstream_dp) for series branches, where
/// downstream_dp is the summed loss of the branches leaving the terminating split.
/// `draws` follows the order of `branch.users`. Throws on a negative remainder.
double branch_dp(const BranchSpec& branch, double inflow, std::span<const double> draws,
                 double downstream_dp = 0.0);

struct NodeFlow {
    double feed = 0.0;   // F
    double user = 0.0;   // S1, S2, S3 (user draw)
    double bypass = 0.0; // B
    double ret = 0.0;    // R
};

struct MassFlowSolution {
    double supply = 0.0;
    std::map<NodeId, NodeFlow> nodes;
    /// Split fractions per split node, in the order of topology.children().
    std::map<NodeId, std::vector<double>> alpha;
    /// Branch pressure losses at the solution, same layout as alpha.
    std::map<NodeId, std::vector<double>> branch_losses;
    int iterations = 0;

    double flow(NodeId id, Segment segment) const;
};

struct FlowSolverOptions {
    double tolerance = 1e-9; // relative pressure-balance residual
    int max_iterations = 100;
};

/// Solves the pressure balance at every split node for the split fractions,
/// given the plant supply and the flow drawn by each user (draws[i-1] is user i).
/// Damped Newton on all fractions at once; single two-way splits fall back to
/// bisection if Newton stalls.
MassFlowSolution solve_flow_split(const NetworkTopology& topology, double supply,
                                  std::span<const double> draws, const FlowSolverOptions& options = {});

/// Flows of an ideally balanced network: every user receives supply / n_u and
/// each segment carries its share of downstream users.
MassFlowSolution ideal_flow_split(const NetworkTopology& topology, double supply);

/// Per-node flows for given split fractions and draws. Throws when a segment
/// would need a negative flow.
MassFlowSolution flows_from_fractions(const NetworkTopology& topology, double supply,
                                      std::span<const double> draws,
                                      const std::map<NodeId, std::vector<double>>& alpha);

} // namespace dhn
