#include "dhn/hydraulics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dhn {

double segment_dp(double loss_coeff, double flow) {
    if (flow < 0) throw Error("negative_flow", "segment flow must be non-negative");
    return loss_coeff * flow * flow;
}

BranchSpec branch_from(const NetworkTopology& topology, NodeId head) {
    BranchSpec spec;
    NodeId id = head;
    while (topology.is_user(id)) {
        const UserNode& u = topology.user(id);
        spec.users.push_back(id);
        spec.feed_loss.push_back(u.feed.loss_coeff);
        const auto& kids = topology.children(id);
        if (kids.empty()) {
            spec.kind = BranchKind::Parallel;
            spec.terminal_loss = u.bypass ? u.bypass->loss_coeff : 0.0;
            return spec;
        }
        id = kids.front();
    }
    if (!topology.is_split(id))
        throw Error("invalid_topology", "branch does not end in a leaf user or split node", std::to_string(id));
    spec.kind = BranchKind::Series;
    spec.terminal_split = id;
    spec.terminal_loss = topology.split(id).feed.loss_coeff;
    return spec;
}

namespace {

// Closed form without feasibility checks; the Newton iteration probes
// slightly outside the feasible set when differencing.
double branch_dp_raw(const BranchSpec& b, double inflow, std::span<const double> draws, double downstream) {
    const std::size_t n = b.users.size();
    double total = 0.0;
    double weight = 1.0;
    double remaining = inflow;
    for (std::size_t i = 0; i < n; ++i) {
        total += weight * b.feed_loss[i] * remaining * remaining;
        remaining -= draws[i];
        weight *= 2.0;
    }
    if (b.kind == BranchKind::Parallel)
        total += weight * b.terminal_loss * remaining * remaining;
    else
        total += weight * (b.terminal_loss * remaining * remaining + downstream);
    return total;
}

} // namespace

double branch_dp(const BranchSpec& branch, double inflow, std::span<const double> draws, double downstream_dp) {
    if (draws.size() != branch.users.size())
        throw Error("bad_input", "one draw per branch user is required");
    if (inflow < 0) throw Error("negative_flow", "branch inflow must be non-negative");
    double remaining = inflow;
    for (double d : draws) {
        if (d < 0) throw Error("negative_flow", "user draw must be non-negative");
        remaining -= d;
    }
    if (remaining < -1e-12 * std::max(inflow, 1.0))
        throw Error("negative_flow", "branch draws exceed its inflow (negative remainder flow)");
    return branch_dp_raw(branch, inflow, draws, downstream_dp);
}

double MassFlowSolution::flow(NodeId id, Segment segment) const {
    auto it = nodes.find(id);
    if (it == nodes.end()) throw Error("unknown_node", "no flow for node " + std::to_string(id));
    switch (segment) {
    case Segment::F: return it->second.feed;
    case Segment::S1:
    case Segment::S2:
    case Segment::S3: return it->second.user;
    case Segment::R: return it->second.ret;
    case Segment::B: return it->second.bypass;
    }
    return 0.0;
}

namespace {

struct Branch {
    BranchSpec spec;
    std::vector<double> draws;  // per branch user
    double own_draw = 0.0;      // sum of draws along the branch
    double total_draw = 0.0;    // including everything behind the terminating split
    int terminal = -1;          // index into FlowProblem::splits
};

struct SplitInfo {
    NodeId id = 0;
    std::vector<Branch> branches;
    std::size_t offset = 0; // first free fraction in the unknown vector
};

// Projection of v onto {a >= lower, sum a = 1}.
void project_fractions(std::vector<double>& v, const std::vector<double>& lower) {
    const std::size_t k = v.size();
    double budget = 1.0 - std::accumulate(lower.begin(), lower.end(), 0.0);
    if (budget <= 0) {
        double s = std::accumulate(lower.begin(), lower.end(), 0.0);
        for (std::size_t j = 0; j < k; ++j) v[j] = s > 0 ? lower[j] / s : 1.0 / k;
        return;
    }
    std::vector<double> y(k);
    for (std::size_t j = 0; j < k; ++j) y[j] = v[j] - lower[j];
    std::vector<double> sorted = y;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    double cumulative = 0.0;
    double theta = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
        cumulative += sorted[j];
        double t = (cumulative - budget) / static_cast<double>(j + 1);
        if (sorted[j] - t > 0) theta = t;
    }
    for (std::size_t j = 0; j < k; ++j) v[j] = std::max(y[j] - theta, 0.0) + lower[j];
}

class FlowProblem {
public:
    FlowProblem(const NetworkTopology& topology, double supply, std::span<const double> draws)
        : topology_(topology), supply_(supply), draws_(draws.begin(), draws.end()) {
        NodeId head = topology.children(kPlant).front();
        root_ = make_branch(head);
        total_draw_ = root_.total_draw;
        std::size_t offset = 0;
        for (auto& s : splits_) {
            s.offset = offset;
            offset += s.branches.size() - 1;
        }
        unknowns_ = offset;
    }

    std::size_t unknowns() const { return unknowns_; }
    double total_draw() const { return total_draw_; }
    const std::vector<SplitInfo>& splits() const { return splits_; }

    /// Full fraction vectors from the free unknowns, projected onto the feasible set.
    std::vector<std::vector<double>> fractions(Eigen::VectorXd& x) const {
        std::vector<std::vector<double>> alpha(splits_.size());
        std::vector<double> inflow = split_inflows_with(alpha, &x);
        (void)inflow;
        return alpha;
    }

    /// Branch losses per split for the given fractions.
    std::vector<std::vector<double>> losses(const std::vector<std::vector<double>>& alpha) const {
        std::vector<double> inflow = split_inflows(alpha);
        std::vector<std::vector<double>> dp(splits_.size());
        for (std::size_t s = splits_.size(); s-- > 0;) {
            const auto& info = splits_[s];
            dp[s].resize(info.branches.size());
            for (std::size_t j = 0; j < info.branches.size(); ++j) {
                const Branch& b = info.branches[j];
                double downstream = 0.0;
                if (b.terminal >= 0)
                    for (double v : dp[b.terminal]) downstream += v;
                dp[s][j] = branch_dp_raw(b.spec, alpha[s][j] * inflow[s], b.draws, downstream);
            }
        }
        return dp;
    }

    Eigen::VectorXd residual(const std::vector<std::vector<double>>& dp) const {
        Eigen::VectorXd r(static_cast<Eigen::Index>(unknowns_));
        for (std::size_t s = 0; s < splits_.size(); ++s)
            for (std::size_t j = 1; j < dp[s].size(); ++j)
                r(static_cast<Eigen::Index>(splits_[s].offset + j - 1)) = dp[s][0] - dp[s][j];
        return r;
    }

    /// Largest relative imbalance over all split nodes.
    static double imbalance(const std::vector<std::vector<double>>& dp) {
        double worst = 0.0;
        for (const auto& row : dp) {
            if (row.size() < 2) continue;
            double peak = *std::max_element(row.begin(), row.end());
            if (peak <= 0) continue;
            for (double v : row) worst = std::max(worst, std::abs(row[0] - v) / peak);
        }
        return worst;
    }

    std::vector<double> split_inflows(const std::vector<std::vector<double>>& alpha) const {
        std::vector<double> inflow(splits_.size(), 0.0);
        if (root_.terminal >= 0) inflow[root_.terminal] = supply_ - root_.own_draw;
        for (std::size_t s = 0; s < splits_.size(); ++s)
            for (std::size_t j = 0; j < splits_[s].branches.size(); ++j) {
                const Branch& b = splits_[s].branches[j];
                if (b.terminal >= 0) inflow[b.terminal] = alpha[s][j] * inflow[s] - b.own_draw;
            }
        return inflow;
    }

    Eigen::VectorXd free_part(const std::vector<std::vector<double>>& alpha) const {
        Eigen::VectorXd x(static_cast<Eigen::Index>(unknowns_));
        for (std::size_t s = 0; s < splits_.size(); ++s)
            for (std::size_t j = 0; j + 1 < alpha[s].size(); ++j)
                x(static_cast<Eigen::Index>(splits_[s].offset + j)) = alpha[s][j];
        return x;
    }

    /// Lower bounds on the fractions of split s for a given inflow.
    std::vector<double> lower_bounds(std::size_t s, double inflow) const {
        const auto& info = splits_[s];
        std::vector<double> lower(info.branches.size(), 0.0);
        if (inflow > 0)
            for (std::size_t j = 0; j < lower.size(); ++j) lower[j] = info.branches[j].total_draw / inflow;
        return lower;
    }

private:
    // Splits are visited in preorder, so parents always precede children.
    std::vector<double> split_inflows_with(std::vector<std::vector<double>>& alpha, Eigen::VectorXd* x) const {
        std::vector<double> inflow(splits_.size(), 0.0);
        if (root_.terminal >= 0) inflow[root_.terminal] = supply_ - root_.own_draw;
        for (std::size_t s = 0; s < splits_.size(); ++s) {
            const auto& info = splits_[s];
            const std::size_t k = info.branches.size();
            auto& a = alpha[s];
            a.assign(k, 1.0 / static_cast<double>(k));
            if (x && k > 1) {
                double rest = 1.0;
                for (std::size_t j = 0; j + 1 < k; ++j) {
                    a[j] = (*x)(static_cast<Eigen::Index>(info.offset + j));
                    rest -= a[j];
                }
                a[k - 1] = rest;
            }
            if (inflow[s] > 0) {
                project_fractions(a, lower_bounds(s, inflow[s]));
            } else {
                a.assign(k, 1.0 / static_cast<double>(k));
            }
            if (x)
                for (std::size_t j = 0; j + 1 < k; ++j) (*x)(static_cast<Eigen::Index>(info.offset + j)) = a[j];
            for (std::size_t j = 0; j < k; ++j) {
                const Branch& b = info.branches[j];
                if (b.terminal >= 0) inflow[b.terminal] = a[j] * inflow[s] - b.own_draw;
            }
        }
        return inflow;
    }

    Branch make_branch(NodeId head) {
        Branch b;
        b.spec = branch_from(topology_, head);
        for (NodeId u : b.spec.users) {
            double d = draws_.at(u - 1);
            if (d < 0) throw Error("negative_flow", "user draw must be non-negative", std::to_string(u));
            b.draws.push_back(d);
            b.own_draw += d;
        }
        b.total_draw = b.own_draw;
        if (b.spec.terminal_split) {
            NodeId sid = *b.spec.terminal_split;
            std::size_t index = splits_.size();
            splits_.push_back({sid, {}, 0});
            b.terminal = static_cast<int>(index);
            std::vector<Branch> kids;
            for (NodeId c : topology_.children(sid)) kids.push_back(make_branch(c));
            double below = 0.0;
            for (const auto& k : kids) below += k.total_draw;
            splits_[index].branches = std::move(kids);
            b.total_draw += below;
        }
        return b;
    }

    const NetworkTopology& topology_;
    double supply_;
    std::vector<double> draws_;
    std::vector<SplitInfo> splits_;
    Branch root_;
    std::size_t unknowns_ = 0;
    double total_draw_ = 0.0;
};

double merit(const Eigen::VectorXd& r, const Eigen::VectorXd& scale) {
    return r.cwiseQuotient(scale).squaredNorm();
}

bool at_bound(const FlowProblem& p, const std::vector<std::vector<double>>& alpha) {
    auto inflow = p.split_inflows(alpha);
    for (std::size_t s = 0; s < p.splits().size(); ++s) {
        if (alpha[s].size() < 2 || inflow[s] <= 0) continue;
        auto lower = p.lower_bounds(s, inflow[s]);
        for (std::size_t j = 0; j < lower.size(); ++j)
            if (alpha[s][j] - lower[j] <= 1e-12) return true;
    }
    return false;
}

std::map<NodeId, std::vector<double>> keyed(const FlowProblem& p, const std::vector<std::vector<double>>& v) {
    std::map<NodeId, std::vector<double>> out;
    for (std::size_t s = 0; s < p.splits().size(); ++s) out[p.splits()[s].id] = v[s];
    return out;
}

} // namespace

MassFlowSolution flows_from_fractions(const NetworkTopology& topology, double supply,
                                      std::span<const double> draws,
                                      const std::map<NodeId, std::vector<double>>& alpha) {
    MassFlowSolution sol;
    sol.supply = supply;
    sol.alpha = alpha;
    const double tol = 1e-12 * std::max(std::abs(supply), 1.0);
    auto check = [&](double v, NodeId id) {
        if (v < -tol)
            throw Error("infeasible_flow", "negative flow required in node " + std::to_string(id), std::to_string(id));
        return std::max(v, 0.0);
    };
    // Depth-first walk carrying the inflow of each node's feeding segment.
    std::vector<std::pair<NodeId, double>> stack{{topology.children(kPlant).front(), supply}};
    while (!stack.empty()) {
        auto [id, in] = stack.back();
        stack.pop_back();
        NodeFlow f;
        f.feed = check(in, id);
        f.ret = f.feed;
        const auto& kids = topology.children(id);
        if (topology.is_user(id)) {
            f.user = draws[id - 1];
            double rest = check(in - f.user, id);
            if (kids.empty())
                f.bypass = rest;
            else
                stack.push_back({kids.front(), rest});
        } else {
            auto it = alpha.find(id);
            if (it == alpha.end() || it->second.size() != kids.size())
                throw Error("bad_input", "missing split fractions for node " + std::to_string(id), std::to_string(id));
            for (std::size_t j = 0; j < kids.size(); ++j) stack.push_back({kids[j], it->second[j] * in});
        }
        sol.nodes[id] = f;
    }
    return sol;
}

MassFlowSolution solve_flow_split(const NetworkTopology& topology, double supply,
                                  std::span<const double> draws, const FlowSolverOptions& options) {
    require_valid(topology);
    if (draws.size() != topology.user_count())
        throw Error("bad_input", "one draw per user is required");
    if (!(supply >= 0)) throw Error("negative_flow", "supply must be non-negative");

    FlowProblem problem(topology, supply, draws);
    if (problem.total_draw() > supply * (1 + 1e-12))
        throw Error("infeasible_flow", "user draws exceed the plant supply");

    const std::size_t n = problem.unknowns();
    Eigen::VectorXd x(static_cast<Eigen::Index>(n));
    x.setConstant(0.0);
    auto alpha = problem.fractions(x); // uniform start, projected
    x = problem.free_part(alpha);
    auto dp = problem.losses(alpha);

    int iterations = 0;
    bool converged = FlowProblem::imbalance(dp) <= options.tolerance;

    // Residual scale fixed at the starting point so the merit function is smooth.
    Eigen::VectorXd scale(static_cast<Eigen::Index>(n));
    for (std::size_t s = 0; s < problem.splits().size(); ++s) {
        double peak = 0.0;
        for (double v : dp[s]) peak = std::max(peak, v);
        for (std::size_t j = 1; j < dp[s].size(); ++j)
            scale(static_cast<Eigen::Index>(problem.splits()[s].offset + j - 1)) = peak > 0 ? peak : 1.0;
    }

    while (!converged && iterations < options.max_iterations) {
        ++iterations;
        Eigen::VectorXd r = problem.residual(dp);
        Eigen::MatrixXd jac(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        for (std::size_t c = 0; c < n; ++c) {
            const auto ci = static_cast<Eigen::Index>(c);
            double h = 1e-7 * std::max(1.0, std::abs(x(ci)));
            // Difference on raw fractions: projection would flatten the derivative at bounds.
            auto probe = alpha;
            for (std::size_t s = 0; s < problem.splits().size(); ++s) {
                const auto& info = problem.splits()[s];
                if (c >= info.offset && c < info.offset + info.branches.size() - 1) {
                    probe[s][c - info.offset] += h;
                    probe[s].back() -= h;
                }
            }
            jac.col(ci) = (problem.residual(problem.losses(probe)) - r) / h;
        }
        Eigen::VectorXd step = jac.fullPivLu().solve(-r);
        if (!step.allFinite()) break;

        const double m0 = merit(r, scale);
        double t = 1.0;
        bool accepted = false;
        while (t > 1e-12) {
            Eigen::VectorXd trial = x + t * step;
            auto trial_alpha = problem.fractions(trial);
            auto trial_dp = problem.losses(trial_alpha);
            double m1 = merit(problem.residual(trial_dp), scale);
            if (m1 < (1.0 - 1e-4 * t) * m0 || FlowProblem::imbalance(trial_dp) <= options.tolerance) {
                x = trial;
                alpha = std::move(trial_alpha);
                dp = std::move(trial_dp);
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        converged = FlowProblem::imbalance(dp) <= options.tolerance;
        if (!accepted) break;
    }

    if (!converged && problem.splits().size() == 1 && problem.splits()[0].branches.size() == 2) {
        // Bisection on the single two-way split: dP_0(a) - dP_1(1 - a) is increasing in a.
        auto inflow = problem.split_inflows(alpha)[0];
        auto lower = problem.lower_bounds(0, inflow);
        double lo = lower[0];
        double hi = 1.0 - lower[1];
        auto f = [&](double a) {
            std::vector<std::vector<double>> al{{a, 1.0 - a}};
            auto d = problem.losses(al);
            return d[0][0] - d[0][1];
        };
        if (f(lo) > 0 || f(hi) < 0)
            throw Error("infeasible_flow", "pressure balance requires a negative branch flow",
                        std::to_string(problem.splits()[0].id));
        for (int i = 0; i < 200 && hi - lo > 1e-16; ++i) {
            double mid = 0.5 * (lo + hi);
            (f(mid) > 0 ? hi : lo) = mid;
        }
        alpha = {{0.5 * (lo + hi), 1.0 - 0.5 * (lo + hi)}};
        dp = problem.losses(alpha);
        converged = true;
    }

    if (!converged) {
        if (at_bound(problem, alpha))
            throw Error("infeasible_flow", "pressure balance requires a negative flow in some branch");
        throw Error("flow_not_converged",
                    "flow split did not converge after " + std::to_string(iterations) + " iterations");
    }

    auto sol = flows_from_fractions(topology, supply, draws, keyed(problem, alpha));
    sol.branch_losses = keyed(problem, dp);
    sol.iterations = iterations;
    return sol;
}

MassFlowSolution ideal_flow_split(const NetworkTopology& topology, double supply) {
    require_valid(topology);
    const std::size_t n_u = topology.user_count();
    std::map<NodeId, std::size_t> downstream;
    // Post-order count of users at or below each node.
    std::vector<std::pair<NodeId, bool>> stack{{kPlant, false}};
    while (!stack.empty()) {
        auto [id, done] = stack.back();
        stack.pop_back();
        if (done) {
            std::size_t count = topology.is_user(id) ? 1 : 0;
            for (NodeId c : topology.children(id)) count += downstream[c];
            downstream[id] = count;
            continue;
        }
        stack.push_back({id, true});
        for (NodeId c : topology.children(id)) stack.push_back({c, false});
    }
    std::vector<double> draws(n_u, supply / static_cast<double>(n_u));
    std::map<NodeId, std::vector<double>> alpha;
    for (const auto& [id, node] : topology.nodes()) {
        if (!topology.is_split(id)) continue;
        auto& a = alpha[id];
        for (NodeId c : topology.children(id))
            a.push_back(static_cast<double>(downstream[c]) / static_cast<double>(downstream[id]));
    }
    return flows_from_fractions(topology, supply, draws, alpha);
}

} // namespace dhn
