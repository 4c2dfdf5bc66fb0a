#pragma once

#include "dhn/assembly.hpp"
#include "dhn/topology.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace dhn {

struct SiteParameters {
    double supply_flow = 20.0;          // m_0, kg/s
    double density = 971.0;             // kg/m^3
    double specific_heat = 4179.0;      // J/(kg K)
    double supply_temperature = 80.0;   // T_0, degC
    double ambient_temperature = -5.0;  // T_amb, degC
    double large_diameter = 0.40;       // D_L, m
    double small_diameter = 0.15;       // D_S, m
    double heat_transfer = 1.5;         // h, W/(m^2 K)
    friend bool operator==(const SiteParameters&, const SiteParameters&) = default;
};

struct SiteSpec {
    Point plant;
    std::vector<Point> users; // user i at users[i - 1]
    SiteParameters params;

    std::size_t user_count() const { return users.size(); }
    /// Throws Error("bad_site") unless 1 <= n_u <= 62, positions are distinct
    /// and the physical parameters are positive (h may be zero).
    void check() const;
    friend bool operator==(const SiteSpec&, const SiteSpec&) = default;
};

using PrizeMask = std::uint64_t;

enum class CandidateKind { Root, User, Simple, Complex, Mixed };
const char* to_string(CandidateKind kind);

/// Node of the design problem. Ids: 0 the plant, 1..n_u the users, then the
/// generated split candidates. `children` is the fixed set a candidate connects.
struct CandidateNode {
    std::size_t id = 0;
    CandidateKind kind = CandidateKind::Root;
    Point position;
    std::vector<std::size_t> children;
    PrizeMask prizes = 0;
};

struct CandidateLimits {
    std::size_t max_candidates = 2'000'000;
    /// Skip combinations whose children lie farther apart than this (m).
    std::optional<double> max_child_distance;
};

/// Every set of at least two users or earlier candidates with pairwise
/// disjoint prize sets, generated by prize set in order of increasing size.
/// Throws Error("limit_exceeded") once more than max_candidates would be produced.
std::vector<CandidateNode> generate_candidates(const SiteSpec& site, const CandidateLimits& limits = {});

/// Root, users and candidates indexed by id, with the candidates grouped by
/// prize set. Edges are implicit: root -> any node, a -> b when the prize
/// sets are disjoint.
struct ProblemGraph {
    SiteSpec site;
    std::vector<CandidateNode> nodes;
    std::vector<std::pair<PrizeMask, std::vector<std::size_t>>> groups; // ascending mask

    ProblemGraph(SiteSpec site, std::vector<CandidateNode> candidates);

    std::size_t user_count() const { return site.user_count(); }
    PrizeMask all_prizes() const;
    bool has_edge(std::size_t parent, std::size_t child) const;
    double distance(std::size_t a, std::size_t b) const;
};

enum class Objective { Loss, Length };

/// Steady-state loss of one lumped pipe, m c_p hA / (m c_p + hA) (T_in - T_amb),
/// with A = pi D L.
double pipe_loss(const SiteParameters& p, double length, double diameter, double flow, double inlet);

/// Per-edge and per-node lower bounds. For the loss objective an edge is
/// priced as a pipe carrying only the child's own users with inlet
/// T_0 - delta_t; a node carries the exact flows of every pipe inside its
/// candidate structure. For the length objective the costs are lengths.
struct LowerBounds {
    Objective objective = Objective::Loss;
    double delta_t = 0.0;
    std::vector<double> node;     // indexed by node id
    std::vector<double> incoming; // per user (index u - 1): cheapest possible pipe into u

    double edge(const ProblemGraph& graph, std::size_t parent, std::size_t child) const;
};

LowerBounds lower_bound_costs(const ProblemGraph& graph, double delta_t, Objective objective = Objective::Loss);

/// Physical feeding pipe of an expanded design. `internal` marks pipes inside
/// a candidate's fixed structure rather than design-tree edges.
struct DesignPipe {
    std::size_t from = 0;
    std::size_t to = 0;
    bool internal = false;
    int parent = -1; // index of the upstream pipe, -1 at the plant
    double length = 0.0;
    double diameter = 0.0;
    double flow = 0.0;
    double inlet = 0.0;
    double outlet = 0.0;
    double loss = 0.0;
};

using TreeEdges = std::vector<std::pair<std::size_t, std::size_t>>; // (parent, child), sorted

struct TreeEvaluation {
    std::vector<DesignPipe> pipes; // parents first
    double true_cost = 0.0;        // sum of m c_p (T_in - T_out)
    double surface_loss = 0.0;     // sum of hA (T - T_amb)
    double total_length = 0.0;
    double delta_t_max = 0.0;      // T_0 - min pipe temperature
};

/// Expands the tree into physical pipes with ideal flows, builds the
/// feeding-line model and solves its steady state. Zero-length pipes, and
/// every pipe when h = 0, are passed through without a state. Throws Error("invalid_tree") unless every
/// prize is collected exactly once by a rooted tree.
TreeEvaluation steady_state_cost(const ProblemGraph& graph, const TreeEdges& tree);

struct DesignResult {
    Objective objective = Objective::Loss;
    TreeEdges edges;
    TreeEvaluation evaluation;
    double delta_t_used = 0.0;
    int iterations = 1;
    std::uint64_t trees_evaluated = 0;
    std::uint64_t partial_trees = 0; // search states expanded
    std::size_t candidate_count = 0;

    double true_cost() const { return evaluation.true_cost; }
    double total_length() const { return evaluation.total_length; }
    double delta_t_max() const { return evaluation.delta_t_max; }
};

/// Strict weak order used to pick among designs: primary cost, then the
/// other cost, then the lexicographically smallest edge list.
bool design_less(Objective objective, const TreeEvaluation& a, const TreeEdges& ea, const TreeEvaluation& b,
                 const TreeEdges& eb);

/// Exact search over all design trees. Partial trees are grown in a canonical
/// breadth-first order so each tree is reached once; a partial tree is cut
/// when its accumulated bound plus the cheapest pipes into the users still
/// missing exceeds the incumbent.
DesignResult branch_and_bound(const ProblemGraph& graph, const LowerBounds& bounds);

struct OptimizeOptions {
    double delta_t_init = 0.0;
    int max_iterations = 10;
    CandidateLimits limits;
};

/// Candidate generation, bounds and search, repeated with delta_t set to the
/// winner's maximum temperature drop until the drop no longer exceeds it.
/// Throws Error("iteration_limit") when that does not happen within max_iterations.
DesignResult optimize(const SiteSpec& site, const OptimizeOptions& options = {});
DesignResult optimize(const ProblemGraph& graph, const OptimizeOptions& options = {});

/// Same search with pipe length as the cost; the evaluation still reports the loss.
DesignResult length_baseline(const ProblemGraph& graph);

} // namespace dhn
