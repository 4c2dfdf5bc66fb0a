#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace dhn {

/// Base class for every error raised by the library. `code` is a stable
/// machine-readable identifier, `location` names the offending entity
/// (node, step, file) when one exists.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message, std::string location = {})
        : std::runtime_error(message), code_(std::move(code)), location_(std::move(location)) {}

    const std::string& code() const noexcept { return code_; }
    const std::string& location() const noexcept { return location_; }

private:
    std::string code_;
    std::string location_;
};

/// Node index. 0 is the plant, users are 1..n_u, split nodes n_u+1..n_u+n_s.
using NodeId = std::size_t;
inline constexpr NodeId kPlant = 0;

struct Point {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const Point&, const Point&) = default;
};

double distance(const Point& a, const Point& b);

struct Fluid {
    double density = 971.0;        // kg/m^3
    double specific_heat = 4179.0; // J/(kg K)
    friend bool operator==(const Fluid&, const Fluid&) = default;
};

/// Lumped pipe segment. `loss_coeff` is zeta in dP = zeta * mdot^2 and
/// `conductance` is the total hA_s towards the surroundings.
struct PipeParams {
    double length = 0.0;        // m
    double diameter = 0.0;      // m
    double cross_section = 0.0; // m^2
    double volume = 0.0;        // m^3
    double loss_coeff = 0.0;    // Pa s^2 / kg^2
    double conductance = 0.0;   // W/K

    friend bool operator==(const PipeParams&, const PipeParams&) = default;

    /// Circular pipe: A_c = pi D^2 / 4, V = A_c L.
    static PipeParams circular(double length, double diameter, double conductance,
                               double loss_coeff = 0.0);
};

/// zeta = (k + lambda L / D) / (2 rho A_c^2)
double loss_coeff_from_friction(double k, double lambda, double length, double diameter,
                                double cross_section, double density);

struct BuildingParams {
    double hex_conductance = 0.0;      // (hA_s)_S2, W/K
    double envelope_conductance = 0.0; // (hA_s)_b, W/K
    double thermal_capacity = 0.0;     // (rho c_p V)_b, J/K
    friend bool operator==(const BuildingParams&, const BuildingParams&) = default;
};

enum class Segment { F, S1, S2, S3, R, B };

const char* to_string(Segment s);
Segment segment_from_string(const std::string& name);

struct PlantNode {
    std::optional<Point> position;
    friend bool operator==(const PlantNode&, const PlantNode&) = default;
};

struct UserNode {
    PipeParams feed;      // F
    PipeParams supply;    // S1
    PipeParams exchanger; // S2
    PipeParams discharge; // S3
    PipeParams ret;       // R
    std::optional<PipeParams> bypass;
    std::optional<BuildingParams> building;
    std::optional<Point> position;

    const PipeParams& segment(Segment s) const;
    PipeParams& segment(Segment s);
    friend bool operator==(const UserNode&, const UserNode&) = default;
};

struct SplitNode {
    PipeParams feed;
    PipeParams ret;
    std::optional<Point> position;

    const PipeParams& segment(Segment s) const;
    PipeParams& segment(Segment s);
    friend bool operator==(const SplitNode&, const SplitNode&) = default;
};

using Node = std::variant<PlantNode, UserNode, SplitNode>;
using Edge = std::pair<NodeId, NodeId>; // (parent, child)

struct Violation {
    NodeId node;
    std::string message;
};

/// Rooted directed tree describing one network configuration. Immutable
/// once built; structural checks live in validate() so that an invalid
/// description can still be loaded and reported on.
class NetworkTopology {
public:
    NetworkTopology() = default;
    NetworkTopology(std::map<NodeId, Node> nodes, std::vector<Edge> edges, Fluid fluid = {});

    const std::map<NodeId, Node>& nodes() const noexcept { return nodes_; }
    const std::vector<Edge>& edges() const noexcept { return edges_; }
    const Fluid& fluid() const noexcept { return fluid_; }

    bool contains(NodeId id) const { return nodes_.count(id) != 0; }
    const Node& node(NodeId id) const;
    bool is_user(NodeId id) const;
    bool is_split(NodeId id) const;
    const UserNode& user(NodeId id) const;
    const SplitNode& split(NodeId id) const;

    /// Children in ascending id order.
    const std::vector<NodeId>& children(NodeId id) const;
    /// Parent of a non-root node; nullopt for the plant or a node without in-edge.
    std::optional<NodeId> parent(NodeId id) const;

    std::size_t user_count() const noexcept { return users_; }
    std::size_t split_count() const noexcept { return splits_; }

    /// Copy with one segment's conductance replaced. For S2 the building's
    /// heat-exchanger conductance is replaced instead when a building exists.
    NetworkTopology with_conductance(NodeId id, Segment segment, double conductance) const;
    double conductance(NodeId id, Segment segment) const;

    friend bool operator==(const NetworkTopology& a, const NetworkTopology& b) {
        return a.nodes_ == b.nodes_ && a.edges_ == b.edges_ && a.fluid_ == b.fluid_;
    }

private:
    std::map<NodeId, Node> nodes_;
    std::vector<Edge> edges_;
    Fluid fluid_;
    std::map<NodeId, std::vector<NodeId>> children_;
    std::map<NodeId, std::vector<NodeId>> parents_;
    std::size_t users_ = 0;
    std::size_t splits_ = 0;
};

/// Every violated structural rule, with the offending node. Empty iff valid.
std::vector<Violation> validate(const NetworkTopology& topology);

/// Throws Error("invalid_topology") listing the first violation.
void require_valid(const NetworkTopology& topology);

struct NodeSets {
    std::vector<NodeId> users;
    std::vector<NodeId> splits;
    std::vector<NodeId> leaves;
    std::map<NodeId, std::vector<NodeId>> predecessors;
    std::map<NodeId, std::vector<NodeId>> successors;
};

NodeSets node_sets(const NetworkTopology& topology);

/// 2 n_s + 5 n_u + |leaves|
std::size_t state_dimension(const NetworkTopology& topology);

} // namespace dhn
