#include "dhn/assembly.hpp"

#include <cstdlib>
#include <map>

namespace dhn {

ThermalCoeffs thermal_coeffs(const PipeParams& pipe, double flow, const Fluid& fluid) {
    if (flow < 0) throw Error("negative_flow", "segment flow must be non-negative");
    ThermalCoeffs c;
    const double mass = fluid.density * pipe.volume;
    c.c1 = flow / mass;
    c.c2 = pipe.conductance / (mass * fluid.specific_heat);
    c.c3 = -(c.c1 + c.c2);
    c.c4 = -1.0 / (mass * fluid.specific_heat);
    return c;
}

std::string StateLabel::str() const {
    if (building) return "Tb_" + std::to_string(node);
    return std::string(to_string(segment)) + "_" + std::to_string(node);
}

StateLabel parse_state_label(const std::string& text) {
    auto pos = text.rfind('_');
    if (pos == std::string::npos || pos + 1 >= text.size())
        throw Error("bad_label", "malformed state label '" + text + "'", text);
    const std::string head = text.substr(0, pos);
    const std::string tail = text.substr(pos + 1);
    char* end = nullptr;
    unsigned long id = std::strtoul(tail.c_str(), &end, 10);
    if (!end || *end != '\0') throw Error("bad_label", "malformed state label '" + text + "'", text);
    StateLabel label;
    label.node = id;
    if (head == "Tb") {
        label.segment = Segment::S2;
        label.building = true;
    } else {
        label.segment = segment_from_string(head);
    }
    return label;
}

std::optional<std::size_t> StateSpaceModel::find(const StateLabel& label) const {
    for (std::size_t i = 0; i < states.size(); ++i)
        if (states[i] == label) return i;
    return std::nullopt;
}

std::size_t StateSpaceModel::index(const StateLabel& label) const {
    auto i = find(label);
    if (!i) throw Error("unknown_state", "model has no state " + label.str(), label.str());
    return *i;
}

namespace {

double ratio(double part, double whole) { return whole > 0 ? part / whole : 0.0; }

constexpr Segment kUserChain[] = {Segment::F, Segment::S1, Segment::S2, Segment::S3, Segment::R};

} // namespace

UserBlock user_block(const UserNode& user, const NodeFlow& flow, const Fluid& fluid) {
    const bool bypass = user.bypass.has_value();
    const Eigen::Index n = bypass ? 6 : 5;
    UserBlock block{Eigen::MatrixXd::Zero(n, n), Eigen::MatrixXd::Zero(n, 2)};

    const auto f = thermal_coeffs(user.feed, flow.feed, fluid);
    const auto s1 = thermal_coeffs(user.supply, flow.user, fluid);
    const auto s2 = thermal_coeffs(user.exchanger, flow.user, fluid);
    const auto s3 = thermal_coeffs(user.discharge, flow.user, fluid);
    const auto r = thermal_coeffs(user.ret, flow.ret, fluid);

    auto& A = block.A;
    A(0, 0) = f.c3;
    A(1, 0) = s1.c1;
    A(1, 1) = s1.c3;
    A(2, 1) = s2.c1;
    A(2, 2) = -s2.c1;
    A(3, 2) = s3.c1;
    A(3, 3) = s3.c3;
    A(4, 3) = ratio(flow.user, flow.ret) * r.c1;
    A(4, 4) = r.c3;

    auto& E = block.E;
    E(0, 0) = f.c2;
    E(1, 0) = s1.c2;
    E(3, 0) = s3.c2;
    E(4, 0) = r.c2;
    E(2, 1) = s2.c4;

    if (bypass) {
        const auto b = thermal_coeffs(*user.bypass, flow.bypass, fluid);
        A(4, 5) = ratio(flow.bypass, flow.ret) * r.c1;
        A(5, 0) = b.c1;
        A(5, 5) = b.c3;
        E(5, 0) = b.c2;
    }
    return block;
}

StateSpaceModel assemble(const NetworkTopology& topology, const MassFlowSolution& flows) {
    const NodeSets sets = node_sets(topology);
    const std::size_t n_u = sets.users.size();
    const std::size_t n_s = sets.splits.size();
    const Fluid& fluid = topology.fluid();

    StateSpaceModel model;
    model.user_count = n_u;

    // Row offsets following the documented state order.
    std::map<NodeId, std::size_t> block_start;
    std::size_t next = n_s;
    model.states.resize(state_dimension(topology));
    for (NodeId s : sets.splits) model.states[s - n_u - 1] = {s, Segment::F};
    for (NodeId u : sets.users) {
        block_start[u] = next;
        for (Segment seg : kUserChain) model.states[next++] = {u, seg};
        if (topology.user(u).bypass) model.states[next++] = {u, Segment::B};
    }
    const std::size_t return_base = next;
    for (NodeId s : sets.splits) model.states[return_base + s - n_u - 1] = {s, Segment::R};

    auto feed_row = [&](NodeId id) -> std::size_t {
        return topology.is_split(id) ? id - n_u - 1 : block_start.at(id);
    };
    auto return_row = [&](NodeId id) -> std::size_t {
        return topology.is_split(id) ? return_base + id - n_u - 1 : block_start.at(id) + 4;
    };
    auto node_flow = [&](NodeId id) -> const NodeFlow& {
        auto it = flows.nodes.find(id);
        if (it == flows.nodes.end())
            throw Error("bad_input", "flow solution lacks node " + std::to_string(id), std::to_string(id));
        return it->second;
    };

    using Triplet = Eigen::Triplet<double>;
    std::vector<Triplet> a, b, e;
    const std::size_t N = model.states.size();

    for (NodeId u : sets.users) {
        const UserNode& user = topology.user(u);
        const NodeFlow& fl = node_flow(u);
        const UserBlock block = user_block(user, fl, fluid);
        const std::size_t base = block_start.at(u);
        for (Eigen::Index i = 0; i < block.A.rows(); ++i) {
            for (Eigen::Index j = 0; j < block.A.cols(); ++j)
                if (block.A(i, j) != 0.0) a.emplace_back(base + i, base + j, block.A(i, j));
            if (block.E(i, 0) != 0.0) e.emplace_back(base + i, 0, block.E(i, 0));
            if (block.E(i, 1) != 0.0) e.emplace_back(base + i, u, block.E(i, 1));
        }
        const double c1_feed = thermal_coeffs(user.feed, fl.feed, fluid).c1;
        const NodeId parent = sets.predecessors.at(u).front();
        if (parent == kPlant)
            b.emplace_back(base, 0, c1_feed);
        else
            a.emplace_back(base, feed_row(parent), c1_feed); // a21/b21 or aF22/bF22
        const double c1_ret = thermal_coeffs(user.ret, fl.ret, fluid).c1;
        for (NodeId c : sets.successors.at(u)) // aR22/bR22 or a23
            a.emplace_back(base + 4, return_row(c), ratio(node_flow(c).ret, fl.ret) * c1_ret);
    }

    for (NodeId s : sets.splits) {
        const SplitNode& split = topology.split(s);
        const NodeFlow& fl = node_flow(s);
        const auto f = thermal_coeffs(split.feed, fl.feed, fluid);
        const auto r = thermal_coeffs(split.ret, fl.ret, fluid);
        const std::size_t fr = feed_row(s);
        const std::size_t rr = return_row(s);
        a.emplace_back(fr, fr, f.c3);
        a.emplace_back(rr, rr, r.c3);
        const NodeId parent = sets.predecessors.at(s).front();
        if (parent == kPlant)
            b.emplace_back(fr, 0, f.c1);
        else
            a.emplace_back(fr, feed_row(parent), f.c1); // A11 or a12
        for (NodeId c : sets.successors.at(s))          // a32/b32 or A33
            a.emplace_back(rr, return_row(c), ratio(node_flow(c).ret, fl.ret) * r.c1);
        e.emplace_back(fr, 0, f.c2);
        e.emplace_back(rr, 0, r.c2);
    }

    model.A.resize(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N));
    model.B.resize(static_cast<Eigen::Index>(N), 1);
    model.E.resize(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(1 + n_u));
    model.A.setFromTriplets(a.begin(), a.end());
    model.B.setFromTriplets(b.begin(), b.end());
    model.E.setFromTriplets(e.begin(), e.end());
    return model;
}

StateSpaceModel append_buildings(const StateSpaceModel& model, const NetworkTopology& topology) {
    if (model.has_buildings) throw Error("bad_input", "buildings are already appended");
    const Fluid& fluid = topology.fluid();
    const std::size_t N = model.size();
    const std::size_t n_u = model.user_count;

    StateSpaceModel out;
    out.user_count = n_u;
    out.has_buildings = true;
    out.states = model.states;

    using Triplet = Eigen::Triplet<double>;
    std::vector<Triplet> a, e;
    for (int k = 0; k < model.A.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(model.A, k); it; ++it)
            a.emplace_back(it.row(), it.col(), it.value());
    for (int k = 0; k < model.E.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(model.E, k); it; ++it)
            if (it.col() == 0) e.emplace_back(it.row(), it.col(), it.value());

    for (NodeId u = 1; u <= n_u; ++u) {
        const UserNode& user = topology.user(u);
        if (!user.building)
            throw Error("missing_building", "user " + std::to_string(u) + " has no building parameters",
                        std::to_string(u));
        const BuildingParams& bp = *user.building;
        const std::size_t row_b = N + u - 1;
        const std::size_t row_s2 = model.index(StateLabel{u, Segment::S2});
        out.states.push_back(StateLabel{u, Segment::S2, true});

        // c4 * Q_b with Q_b = (hA)_S2 (T_S2 - T_b)
        const double c4 = -1.0 / (fluid.density * user.exchanger.volume * fluid.specific_heat);
        a.emplace_back(row_s2, row_s2, c4 * bp.hex_conductance);
        a.emplace_back(row_s2, row_b, -c4 * bp.hex_conductance);

        a.emplace_back(row_b, row_s2, bp.hex_conductance / bp.thermal_capacity);
        a.emplace_back(row_b, row_b, -(bp.hex_conductance + bp.envelope_conductance) / bp.thermal_capacity);
        e.emplace_back(row_b, 0, bp.envelope_conductance / bp.thermal_capacity);
    }

    const auto M = static_cast<Eigen::Index>(N + n_u);
    out.A.resize(M, M);
    out.A.setFromTriplets(a.begin(), a.end()); // duplicates on the S2 diagonal are summed
    out.B = model.B;
    out.B.conservativeResize(M, 1);
    out.E.resize(M, static_cast<Eigen::Index>(1 + n_u));
    out.E.setFromTriplets(e.begin(), e.end());
    return out;
}

Eigen::VectorXd ReducedModel::steady_state(double supply_temperature, double ambient_temperature) const {
    const Eigen::VectorXd rhs = -(B * supply_temperature + E * ambient_temperature);
    if (A.isLowerTriangular()) return A.triangularView<Eigen::Lower>().solve(rhs);
    return A.partialPivLu().solve(rhs);
}

ReducedModel reduce_feeding(const NetworkTopology& topology, const MassFlowSolution& flows) {
    const StateSpaceModel full = assemble(topology, flows);
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < full.size(); ++i)
        if (full.states[i].segment == Segment::F) keep.push_back(i);

    const Eigen::MatrixXd A = full.dense_A();
    const Eigen::MatrixXd B = full.dense_B();
    const Eigen::MatrixXd E = full.dense_E();
    const auto n = static_cast<Eigen::Index>(keep.size());
    ReducedModel red;
    red.A.resize(n, n);
    red.B.resize(n);
    red.E.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto r = static_cast<Eigen::Index>(keep[static_cast<std::size_t>(i)]);
        for (Eigen::Index j = 0; j < n; ++j) red.A(i, j) = A(r, static_cast<Eigen::Index>(keep[static_cast<std::size_t>(j)]));
        red.B(i) = B(r, 0);
        red.E(i) = E(r, 0);
        red.states.push_back(full.states[static_cast<std::size_t>(r)].str());
    }
    return red;
}

ReducedModel feeding_model(std::span<const FeedingPipe> pipes, const Fluid& fluid) {
    const auto n = static_cast<Eigen::Index>(pipes.size());
    ReducedModel red;
    red.A = Eigen::MatrixXd::Zero(n, n);
    red.B = Eigen::VectorXd::Zero(n);
    red.E = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const FeedingPipe& p = pipes[static_cast<std::size_t>(i)];
        if (p.parent >= i) throw Error("bad_input", "feeding pipes must be listed parents first", p.label);
        const auto c = thermal_coeffs(p.pipe, p.flow, fluid);
        red.A(i, i) = c.c3;
        if (p.parent < 0)
            red.B(i) = c.c1;
        else
            red.A(i, p.parent) = c.c1;
        red.E(i) = c.c2;
        red.states.push_back(p.label);
    }
    return red;
}

} // namespace dhn
