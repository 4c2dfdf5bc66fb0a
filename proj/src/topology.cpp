#include "dhn/topology.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

namespace dhn {

double distance(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

PipeParams PipeParams::circular(double length, double diameter, double conductance,
                                double loss_coeff) {
    PipeParams p;
    p.length = length;
    p.diameter = diameter;
    p.cross_section = std::numbers::pi * diameter * diameter / 4.0;
    p.volume = p.cross_section * length;
    p.loss_coeff = loss_coeff;
    p.conductance = conductance;
    return p;
}

double loss_coeff_from_friction(double k, double lambda, double length, double diameter,
                                double cross_section, double density) {
    return (k + lambda * length / diameter) / (2.0 * density * cross_section * cross_section);
}

const char* to_string(Segment s) {
    switch (s) {
    case Segment::F: return "F";
    case Segment::S1: return "S1";
    case Segment::S2: return "S2";
    case Segment::S3: return "S3";
    case Segment::R: return "R";
    case Segment::B: return "B";
    }
    return "?";
}

Segment segment_from_string(const std::string& name) {
    for (Segment s : {Segment::F, Segment::S1, Segment::S2, Segment::S3, Segment::R, Segment::B})
        if (name == to_string(s)) return s;
    throw Error("bad_segment", "unknown segment name '" + name + "'", name);
}

const PipeParams& UserNode::segment(Segment s) const {
    return const_cast<UserNode*>(this)->segment(s);
}

PipeParams& UserNode::segment(Segment s) {
    switch (s) {
    case Segment::F: return feed;
    case Segment::S1: return supply;
    case Segment::S2: return exchanger;
    case Segment::S3: return discharge;
    case Segment::R: return ret;
    case Segment::B:
        if (!bypass) throw Error("bad_segment", "user has no bypass segment");
        return *bypass;
    }
    throw Error("bad_segment", "unknown segment");
}

const PipeParams& SplitNode::segment(Segment s) const {
    return const_cast<SplitNode*>(this)->segment(s);
}

PipeParams& SplitNode::segment(Segment s) {
    if (s == Segment::F) return feed;
    if (s == Segment::R) return ret;
    throw Error("bad_segment", std::string("split nodes have no segment ") + to_string(s));
}

NetworkTopology::NetworkTopology(std::map<NodeId, Node> nodes, std::vector<Edge> edges, Fluid fluid)
    : nodes_(std::move(nodes)), edges_(std::move(edges)), fluid_(fluid) {
    for (const auto& [id, node] : nodes_) {
        if (std::holds_alternative<UserNode>(node)) ++users_;
        if (std::holds_alternative<SplitNode>(node)) ++splits_;
    }
    for (const auto& [from, to] : edges_) {
        children_[from].push_back(to);
        parents_[to].push_back(from);
    }
    for (auto& [id, list] : children_) std::sort(list.begin(), list.end());
}

const Node& NetworkTopology::node(NodeId id) const {
    auto it = nodes_.find(id);
    if (it == nodes_.end())
        throw Error("unknown_node", "node " + std::to_string(id) + " does not exist",
                    std::to_string(id));
    return it->second;
}

bool NetworkTopology::is_user(NodeId id) const {
    auto it = nodes_.find(id);
    return it != nodes_.end() && std::holds_alternative<UserNode>(it->second);
}

bool NetworkTopology::is_split(NodeId id) const {
    auto it = nodes_.find(id);
    return it != nodes_.end() && std::holds_alternative<SplitNode>(it->second);
}

const UserNode& NetworkTopology::user(NodeId id) const {
    const auto* u = std::get_if<UserNode>(&node(id));
    if (!u) throw Error("wrong_kind", "node " + std::to_string(id) + " is not a user", std::to_string(id));
    return *u;
}

const SplitNode& NetworkTopology::split(NodeId id) const {
    const auto* s = std::get_if<SplitNode>(&node(id));
    if (!s) throw Error("wrong_kind", "node " + std::to_string(id) + " is not a split node", std::to_string(id));
    return *s;
}

const std::vector<NodeId>& NetworkTopology::children(NodeId id) const {
    static const std::vector<NodeId> none;
    auto it = children_.find(id);
    return it == children_.end() ? none : it->second;
}

std::optional<NodeId> NetworkTopology::parent(NodeId id) const {
    auto it = parents_.find(id);
    if (it == parents_.end() || it->second.empty()) return std::nullopt;
    return it->second.front();
}

NetworkTopology NetworkTopology::with_conductance(NodeId id, Segment segment, double conductance) const {
    auto nodes = nodes_;
    auto it = nodes.find(id);
    if (it == nodes.end()) throw Error("unknown_node", "node " + std::to_string(id) + " does not exist");
    if (auto* u = std::get_if<UserNode>(&it->second)) {
        if (segment == Segment::S2 && u->building)
            u->building->hex_conductance = conductance;
        else
            u->segment(segment).conductance = conductance;
    } else if (auto* s = std::get_if<SplitNode>(&it->second)) {
        s->segment(segment).conductance = conductance;
    } else {
        throw Error("wrong_kind", "the plant has no pipe segments", std::to_string(id));
    }
    return NetworkTopology(std::move(nodes), edges_, fluid_);
}

double NetworkTopology::conductance(NodeId id, Segment segment) const {
    const Node& n = node(id);
    if (const auto* u = std::get_if<UserNode>(&n)) {
        if (segment == Segment::S2 && u->building) return u->building->hex_conductance;
        return u->segment(segment).conductance;
    }
    if (const auto* s = std::get_if<SplitNode>(&n)) return s->segment(segment).conductance;
    throw Error("wrong_kind", "the plant has no pipe segments", std::to_string(id));
}

namespace {

void check_pipe(const PipeParams& p, NodeId id, const char* name, std::vector<Violation>& out) {
    auto bad = [&](const std::string& what) {
        out.push_back({id, std::string("segment ") + name + ": " + what});
    };
    auto finite = std::isfinite(p.length) && std::isfinite(p.diameter) &&
                  std::isfinite(p.cross_section) && std::isfinite(p.volume) &&
                  std::isfinite(p.loss_coeff) && std::isfinite(p.conductance);
    if (!finite) return bad("non-finite parameter");
    if (p.length <= 0) bad("length must be positive");
    if (p.diameter <= 0) bad("diameter must be positive");
    if (p.cross_section <= 0) bad("cross section must be positive");
    if (p.volume <= 0) bad("volume must be positive");
    if (p.loss_coeff < 0) bad("loss coefficient must be non-negative");
    if (p.conductance < 0) bad("conductance must be non-negative");
}

} // namespace

std::vector<Violation> validate(const NetworkTopology& topology) {
    std::vector<Violation> out;
    const auto& nodes = topology.nodes();
    const std::size_t n_u = topology.user_count();
    const std::size_t n_s = topology.split_count();

    const Fluid& fluid = topology.fluid();
    if (!(fluid.density > 0) || !(fluid.specific_heat > 0))
        out.push_back({kPlant, "fluid density and specific heat must be positive"});

    if (!nodes.count(kPlant) || !std::holds_alternative<PlantNode>(nodes.at(kPlant)))
        out.push_back({kPlant, "node 0 must be the plant"});

    for (const auto& [id, node] : nodes) {
        if (id != kPlant && std::holds_alternative<PlantNode>(node))
            out.push_back({id, "only node 0 may be a plant"});
        if (std::holds_alternative<UserNode>(node) && (id < 1 || id > n_u))
            out.push_back({id, "user ids must be 1..n_u"});
        if (std::holds_alternative<SplitNode>(node) && (id <= n_u || id > n_u + n_s))
            out.push_back({id, "split node ids must be n_u+1..n_u+n_s"});
    }

    std::map<NodeId, int> in_degree;
    std::set<Edge> seen;
    for (const auto& [from, to] : topology.edges()) {
        if (!nodes.count(from) || !nodes.count(to)) {
            out.push_back({nodes.count(from) ? to : from, "edge references a missing node"});
            continue;
        }
        if (from == to) out.push_back({from, "self loop"});
        if (!seen.insert({from, to}).second) out.push_back({to, "duplicate edge"});
        ++in_degree[to];
    }
    if (in_degree.count(kPlant)) out.push_back({kPlant, "the plant cannot have a parent (not a tree)"});
    for (const auto& [id, node] : nodes) {
        if (id == kPlant) continue;
        int d = in_degree.count(id) ? in_degree[id] : 0;
        if (d > 1) out.push_back({id, "node has more than one parent (not a tree)"});
    }

    // Reachability and acyclicity from the root.
    std::set<NodeId> reached;
    std::vector<NodeId> stack{kPlant};
    bool cycle = false;
    while (!stack.empty()) {
        NodeId id = stack.back();
        stack.pop_back();
        if (!reached.insert(id).second) {
            cycle = true;
            continue;
        }
        for (NodeId c : topology.children(id))
            if (nodes.count(c)) stack.push_back(c);
    }
    if (cycle) out.push_back({kPlant, "graph contains a cycle or converging paths (not a tree)"});
    for (const auto& [id, node] : nodes)
        if (!reached.count(id)) out.push_back({id, "node is not reachable from the plant (not a tree)"});

    if (nodes.count(kPlant) && topology.children(kPlant).size() != 1)
        out.push_back({kPlant, "the plant must feed exactly one node"});

    for (const auto& [id, node] : nodes) {
        const auto& kids = topology.children(id);
        if (const auto* u = std::get_if<UserNode>(&node)) {
            check_pipe(u->feed, id, "F", out);
            check_pipe(u->supply, id, "S1", out);
            check_pipe(u->exchanger, id, "S2", out);
            check_pipe(u->discharge, id, "S3", out);
            check_pipe(u->ret, id, "R", out);
            if (u->bypass) check_pipe(*u->bypass, id, "B", out);
            if (kids.empty() && !u->bypass) out.push_back({id, "leaf user lacks bypass"});
            if (!kids.empty() && u->bypass) out.push_back({id, "non-leaf user has a bypass"});
            if (kids.size() > 1) out.push_back({id, "user feeds more than one node"});
            if (u->building) {
                const auto& b = *u->building;
                if (!(b.hex_conductance > 0) || !(b.envelope_conductance > 0) || !(b.thermal_capacity > 0))
                    out.push_back({id, "building parameters must be strictly positive"});
            }
        } else if (const auto* s = std::get_if<SplitNode>(&node)) {
            check_pipe(s->feed, id, "F", out);
            check_pipe(s->ret, id, "R", out);
            if (kids.empty()) out.push_back({id, "split node has no children"});
        }
    }
    return out;
}

void require_valid(const NetworkTopology& topology) {
    auto v = validate(topology);
    if (!v.empty())
        throw Error("invalid_topology", "invalid topology: node " + std::to_string(v.front().node) + ": " +
                                            v.front().message,
                    std::to_string(v.front().node));
}

NodeSets node_sets(const NetworkTopology& topology) {
    require_valid(topology);
    NodeSets sets;
    for (const auto& [id, node] : topology.nodes()) {
        if (std::holds_alternative<UserNode>(node)) {
            sets.users.push_back(id);
            if (topology.children(id).empty()) sets.leaves.push_back(id);
        } else if (std::holds_alternative<SplitNode>(node)) {
            sets.splits.push_back(id);
        }
        sets.successors[id] = topology.children(id);
        auto p = topology.parent(id);
        sets.predecessors[id] = p ? std::vector<NodeId>{*p} : std::vector<NodeId>{};
    }
    return sets;
}

std::size_t state_dimension(const NetworkTopology& topology) {
    std::size_t leaves = 0;
    for (const auto& [id, node] : topology.nodes())
        if (std::holds_alternative<UserNode>(node) && topology.children(id).empty()) ++leaves;
    return 2 * topology.split_count() + 5 * topology.user_count() + leaves;
}

} // namespace dhn
