#include "dhn/optimizer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <unordered_map>

namespace dhn {

namespace {

constexpr double kTieTolerance = 1e-12;
constexpr double kPruneSlack = 1e-9;

bool lower_bit_set(PrizeMask m, std::size_t bit) { return ((m >> bit) & 1U) != 0; }

std::size_t popcount(PrizeMask m) { return static_cast<std::size_t>(std::popcount(m)); }

double diameter_for(const SiteParameters& p, std::size_t users) {
    return users > 1 ? p.large_diameter : p.small_diameter;
}

double share_flow(const SiteParameters& p, std::size_t users, std::size_t n_u) {
    return static_cast<double>(users) / static_cast<double>(n_u) * p.supply_flow;
}

// Returns true when a is strictly better than b by more than roundoff.
int compare_cost(double a, double b) {
    const double scale = std::max(std::abs(a), std::abs(b));
    if (std::abs(a - b) <= kTieTolerance * scale) return 0;
    return a < b ? -1 : 1;
}

} // namespace

const char* to_string(CandidateKind kind) {
    switch (kind) {
    case CandidateKind::Root: return "root";
    case CandidateKind::User: return "user";
    case CandidateKind::Simple: return "simple";
    case CandidateKind::Complex: return "complex";
    case CandidateKind::Mixed: return "mixed";
    }
    return "?";
}

void SiteSpec::check() const {
    auto bad = [](const std::string& m) { throw Error("bad_site", m); };
    if (users.empty()) bad("a site needs at least one user");
    if (users.size() > 62) bad("at most 62 users are supported");
    const SiteParameters& p = params;
    if (!(p.supply_flow > 0) || !(p.density > 0) || !(p.specific_heat > 0))
        bad("supply flow, density and specific heat must be positive");
    if (!(p.large_diameter > 0) || !(p.small_diameter > 0)) bad("pipe diameters must be positive");
    if (!(p.heat_transfer >= 0)) bad("heat transfer coefficient must be non-negative");
    std::vector<Point> all = users;
    all.push_back(plant);
    for (std::size_t i = 0; i < all.size(); ++i)
        for (std::size_t j = i + 1; j < all.size(); ++j)
            if (all[i] == all[j]) bad("positions must be distinct");
}

std::vector<CandidateNode> generate_candidates(const SiteSpec& site, const CandidateLimits& limits) {
    site.check();
    const std::size_t n = site.user_count();
    std::vector<CandidateNode> out;
    std::unordered_map<PrizeMask, std::vector<std::size_t>> by_mask; // candidate ids

    auto position = [&](std::size_t id) -> const Point& {
        return id <= n ? site.users[id - 1] : out[id - n - 1].position;
    };
    auto items = [&](PrizeMask block, std::vector<std::size_t>& single) -> const std::vector<std::size_t>* {
        if (popcount(block) == 1) {
            single.assign(1, static_cast<std::size_t>(std::countr_zero(block)) + 1);
            return &single;
        }
        auto it = by_mask.find(block);
        return it == by_mask.end() ? nullptr : &it->second;
    };

    for (std::size_t k = 2; k <= n; ++k) {
        const PrizeMask limit = PrizeMask{1} << n;
        for (PrizeMask mask = (PrizeMask{1} << k) - 1; mask < limit;) {
            std::vector<std::size_t> fresh;
            std::vector<PrizeMask> blocks;

            auto emit = [&] {
                std::vector<std::vector<std::size_t>> singles(blocks.size());
                std::vector<const std::vector<std::size_t>*> choice(blocks.size());
                for (std::size_t b = 0; b < blocks.size(); ++b) choice[b] = items(blocks[b], singles[b]);
                std::vector<std::size_t> pick(blocks.size(), 0);
                while (true) {
                    std::vector<std::size_t> children(blocks.size());
                    for (std::size_t b = 0; b < blocks.size(); ++b) children[b] = (*choice[b])[pick[b]];
                    bool near = true;
                    if (limits.max_child_distance)
                        for (std::size_t a = 0; a < children.size() && near; ++a)
                            for (std::size_t b = a + 1; b < children.size() && near; ++b)
                                near = dhn::distance(position(children[a]), position(children[b])) <=
                                       *limits.max_child_distance;
                    if (near) {
                        if (out.size() >= limits.max_candidates)
                            throw Error("limit_exceeded",
                                        "candidate count exceeds the cap of " + std::to_string(limits.max_candidates),
                                        "max_candidates");
                        std::sort(children.begin(), children.end());
                        CandidateNode c;
                        c.id = n + 1 + out.size();
                        c.prizes = mask;
                        bool any_user = false;
                        bool any_split = false;
                        for (std::size_t ch : children) {
                            (ch <= n ? any_user : any_split) = true;
                            c.position.x += position(ch).x;
                            c.position.y += position(ch).y;
                        }
                        c.position.x /= static_cast<double>(children.size());
                        c.position.y /= static_cast<double>(children.size());
                        c.kind = !any_split ? CandidateKind::Simple
                                            : (!any_user ? CandidateKind::Complex : CandidateKind::Mixed);
                        c.children = std::move(children);
                        fresh.push_back(c.id);
                        out.push_back(std::move(c));
                    }
                    std::size_t b = 0;
                    while (b < pick.size() && ++pick[b] == choice[b]->size()) pick[b++] = 0;
                    if (b == pick.size()) break;
                }
            };

            // Partitions of mask into at least two blocks that all have items.
            std::function<void(PrizeMask)> split = [&](PrizeMask rest) {
                if (rest == 0) {
                    if (blocks.size() >= 2) emit();
                    return;
                }
                const PrizeMask low = rest & (~rest + 1);
                const PrizeMask others = rest ^ low;
                for (PrizeMask sub = others;; sub = (sub - 1) & others) {
                    const PrizeMask block = low | sub;
                    std::vector<std::size_t> tmp;
                    if (block != mask && items(block, tmp) != nullptr) {
                        blocks.push_back(block);
                        split(rest ^ block);
                        blocks.pop_back();
                    }
                    if (sub == 0) break;
                }
            };
            split(mask);
            if (!fresh.empty()) by_mask.emplace(mask, std::move(fresh));

            const PrizeMask c = mask & (~mask + 1);
            const PrizeMask r = mask + c;
            if (r == 0) break;
            mask = (((r ^ mask) >> 2) / c) | r;
        }
    }
    return out;
}

ProblemGraph::ProblemGraph(SiteSpec s, std::vector<CandidateNode> candidates) : site(std::move(s)) {
    site.check();
    const std::size_t n = site.user_count();
    nodes.reserve(1 + n + candidates.size());
    CandidateNode root;
    root.position = site.plant;
    nodes.push_back(root);
    for (std::size_t u = 1; u <= n; ++u) {
        CandidateNode user;
        user.id = u;
        user.kind = CandidateKind::User;
        user.position = site.users[u - 1];
        user.prizes = PrizeMask{1} << (u - 1);
        nodes.push_back(user);
    }
    for (auto& c : candidates) {
        if (c.id != nodes.size()) throw Error("bad_input", "candidate ids must follow the users consecutively");
        PrizeMask seen = 0;
        for (std::size_t ch : c.children) {
            if (ch == 0 || ch >= c.id) throw Error("bad_input", "candidate children must be earlier nodes");
            if (seen & nodes[ch].prizes) throw Error("bad_input", "candidate children have overlapping prizes");
            seen |= nodes[ch].prizes;
        }
        if (seen != c.prizes || c.children.size() < 2)
            throw Error("bad_input", "candidate prize set must be the union of at least two children");
        nodes.push_back(std::move(c));
    }
    std::map<PrizeMask, std::vector<std::size_t>> grouped;
    for (std::size_t id = 1; id < nodes.size(); ++id) grouped[nodes[id].prizes].push_back(id);
    groups.assign(grouped.begin(), grouped.end());
}

PrizeMask ProblemGraph::all_prizes() const {
    const std::size_t n = user_count();
    return n >= 64 ? ~PrizeMask{0} : (PrizeMask{1} << n) - 1;
}

bool ProblemGraph::has_edge(std::size_t parent, std::size_t child) const {
    if (parent >= nodes.size() || child >= nodes.size() || child == 0 || parent == child) return false;
    return parent == 0 || (nodes[parent].prizes & nodes[child].prizes) == 0;
}

double ProblemGraph::distance(std::size_t a, std::size_t b) const {
    return dhn::distance(nodes[a].position, nodes[b].position);
}

double pipe_loss(const SiteParameters& p, double length, double diameter, double flow, double inlet) {
    const double ha = p.heat_transfer * std::numbers::pi * diameter * length;
    const double mc = flow * p.specific_heat;
    if (ha == 0.0) return 0.0;
    return mc * ha / (mc + ha) * (inlet - p.ambient_temperature);
}

namespace {

double pipe_cost(const ProblemGraph& g, Objective objective, double delta_t, std::size_t from, std::size_t to) {
    const double length = g.distance(from, to);
    if (objective == Objective::Length) return length;
    const std::size_t users = popcount(g.nodes[to].prizes);
    const SiteParameters& p = g.site.params;
    return pipe_loss(p, length, diameter_for(p, users), share_flow(p, users, g.user_count()),
                     p.supply_temperature - delta_t);
}

} // namespace

double LowerBounds::edge(const ProblemGraph& graph, std::size_t parent, std::size_t child) const {
    return pipe_cost(graph, objective, delta_t, parent, child);
}

LowerBounds lower_bound_costs(const ProblemGraph& graph, double delta_t, Objective objective) {
    if (!(delta_t >= 0)) throw Error("bad_input", "delta_t must be non-negative");
    LowerBounds lb;
    lb.objective = objective;
    lb.delta_t = delta_t;
    lb.node.assign(graph.nodes.size(), 0.0);
    for (std::size_t id = graph.user_count() + 1; id < graph.nodes.size(); ++id)
        for (std::size_t ch : graph.nodes[id].children)
            lb.node[id] += pipe_cost(graph, objective, delta_t, id, ch) + lb.node[ch];

    // Any pipe into user u starts at some other node and carries at least u's share.
    for (std::size_t u = 1; u <= graph.user_count(); ++u) {
        double nearest = std::numeric_limits<double>::infinity();
        for (std::size_t v = 0; v < graph.nodes.size(); ++v)
            if (v != u) nearest = std::min(nearest, graph.distance(v, u));
        if (objective == Objective::Length) {
            lb.incoming.push_back(nearest);
        } else {
            const SiteParameters& p = graph.site.params;
            lb.incoming.push_back(pipe_loss(p, nearest, p.small_diameter, share_flow(p, 1, graph.user_count()),
                                            p.supply_temperature - delta_t));
        }
    }
    return lb;
}

TreeEvaluation steady_state_cost(const ProblemGraph& graph, const TreeEdges& tree) {
    const std::size_t n_nodes = graph.nodes.size();
    std::map<std::size_t, std::vector<std::size_t>> kids;
    std::map<std::size_t, std::size_t> parent_of;
    for (const auto& [p, c] : tree) {
        if (!graph.has_edge(p, c)) throw Error("invalid_tree", "edge is not in the problem graph");
        if (!parent_of.emplace(c, p).second) throw Error("invalid_tree", "node has two parents");
        kids[p].push_back(c);
    }
    for (auto& [p, list] : kids) std::sort(list.begin(), list.end());

    // Reachability from the root and prize exactness.
    PrizeMask collected = 0;
    std::size_t reached = 0;
    std::vector<std::size_t> stack{0};
    std::vector<bool> seen(n_nodes, false);
    std::map<std::size_t, PrizeMask> subtree;
    std::vector<std::size_t> order;
    while (!stack.empty()) {
        const std::size_t v = stack.back();
        stack.pop_back();
        if (seen[v]) throw Error("invalid_tree", "tree contains a cycle");
        seen[v] = true;
        order.push_back(v);
        if (v != 0) {
            ++reached;
            if (collected & graph.nodes[v].prizes) throw Error("invalid_tree", "a prize is collected twice");
            collected |= graph.nodes[v].prizes;
        }
        for (std::size_t c : kids[v]) stack.push_back(c);
    }
    if (reached != tree.size()) throw Error("invalid_tree", "tree is not connected to the plant");
    if (collected != graph.all_prizes()) throw Error("invalid_tree", "not every prize is collected");
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        PrizeMask m = graph.nodes[*it].prizes;
        for (std::size_t c : kids[*it]) m |= subtree[c];
        subtree[*it] = m;
    }

    const SiteParameters& p = graph.site.params;
    const std::size_t n_u = graph.user_count();
    TreeEvaluation ev;
    std::vector<int> state_of;   // per pipe: row in the reduced model, -1 for pass-through
    std::vector<int> feed_state; // per pipe: row feeding its inlet, -1 for the plant
    std::vector<FeedingPipe> model_pipes;

    auto add_pipe = [&](std::size_t from, std::size_t to, bool internal, int upstream, PrizeMask served) {
        DesignPipe d;
        d.from = from;
        d.to = to;
        d.internal = internal;
        d.parent = upstream;
        d.length = graph.distance(from, to);
        const std::size_t users = popcount(served);
        d.diameter = diameter_for(p, users);
        d.flow = share_flow(p, users, n_u);
        const int feed = upstream < 0 ? -1 : (state_of[static_cast<std::size_t>(upstream)] >= 0
                                                  ? state_of[static_cast<std::size_t>(upstream)]
                                                  : feed_state[static_cast<std::size_t>(upstream)]);
        feed_state.push_back(feed);
        // without surface conductance the outlet equals the inlet exactly
        if (d.length > 0 && p.heat_transfer > 0) {
            FeedingPipe fp;
            fp.parent = feed;
            fp.pipe = PipeParams::circular(d.length, d.diameter,
                                           p.heat_transfer * std::numbers::pi * d.diameter * d.length);
            fp.flow = d.flow;
            fp.label = std::to_string(from) + "->" + std::to_string(to);
            state_of.push_back(static_cast<int>(model_pipes.size()));
            model_pipes.push_back(fp);
        } else {
            state_of.push_back(-1);
        }
        ev.pipes.push_back(d);
        return static_cast<int>(ev.pipes.size() - 1);
    };

    std::function<void(std::size_t, int)> expand_template = [&](std::size_t node, int upstream) {
        for (std::size_t ch : graph.nodes[node].children) {
            const int idx = add_pipe(node, ch, true, upstream, graph.nodes[ch].prizes);
            expand_template(ch, idx);
        }
    };
    std::function<void(std::size_t, int)> expand = [&](std::size_t node, int upstream) {
        if (node != 0) expand_template(node, upstream);
        for (std::size_t c : kids[node]) {
            const int idx = add_pipe(node, c, false, upstream, subtree[c]);
            expand(c, idx);
        }
    };
    expand(0, -1);

    Eigen::VectorXd temps;
    if (!model_pipes.empty()) {
        const ReducedModel red = feeding_model(model_pipes, Fluid{p.density, p.specific_heat});
        temps = red.steady_state(p.supply_temperature, p.ambient_temperature);
        if (!temps.allFinite()) throw Error("singular_matrix", "reduced feeding model has no steady state");
    }
    double lowest = p.supply_temperature;
    for (std::size_t i = 0; i < ev.pipes.size(); ++i) {
        DesignPipe& d = ev.pipes[i];
        d.inlet = feed_state[i] < 0 ? p.supply_temperature : temps(feed_state[i]);
        d.outlet = state_of[i] < 0 ? d.inlet : temps(state_of[i]);
        d.loss = d.flow * p.specific_heat * (d.inlet - d.outlet);
        ev.true_cost += d.loss;
        ev.total_length += d.length;
        if (state_of[i] >= 0)
            ev.surface_loss += model_pipes[static_cast<std::size_t>(state_of[i])].pipe.conductance *
                               (d.outlet - p.ambient_temperature);
        lowest = std::min(lowest, d.outlet);
    }
    ev.delta_t_max = p.supply_temperature - lowest;
    return ev;
}

bool design_less(Objective objective, const TreeEvaluation& a, const TreeEdges& ea, const TreeEvaluation& b,
                 const TreeEdges& eb) {
    const bool loss = objective == Objective::Loss;
    if (int c = compare_cost(loss ? a.true_cost : a.total_length, loss ? b.true_cost : b.total_length); c != 0)
        return c < 0;
    if (int c = compare_cost(loss ? a.total_length : a.true_cost, loss ? b.total_length : b.true_cost); c != 0)
        return c < 0;
    return ea < eb;
}

namespace {

class Search {
public:
    Search(const ProblemGraph& g, const LowerBounds& lb) : g_(g), lb_(lb), full_(g.all_prizes()) {
        for (const auto& [mask, ids] : g.groups) {
            double rem = 0.0;
            for (std::size_t u = 0; u < g.user_count(); ++u)
                if (lower_bit_set(mask, u)) rem += lb.incoming[u];
            group_remaining_.push_back(rem);
            double cheapest = std::numeric_limits<double>::infinity();
            for (std::size_t id : ids) cheapest = std::min(cheapest, lb.node[id]);
            group_node_min_.push_back(cheapest);
        }
        for (double v : lb.incoming) remaining_ += v;
    }

    DesignResult run() {
        // Incumbent: the cheapest node holding every prize, hung from the plant.
        std::optional<std::size_t> first;
        double first_cost = std::numeric_limits<double>::infinity();
        for (const auto& [mask, ids] : g_.groups)
            if (mask == full_)
                for (std::size_t id : ids) {
                    const double c = lb_.edge(g_, 0, id) + lb_.node[id];
                    if (c < first_cost) {
                        first_cost = c;
                        first = id;
                    }
                }
        if (!first) throw Error("infeasible_design", "no node collects every prize");
        edges_ = {{0, *first}};
        consider();
        edges_.clear();

        order_ = {0};
        dfs(0, 0);

        DesignResult r;
        r.objective = lb_.objective;
        r.edges = best_edges_;
        r.evaluation = *best_;
        r.delta_t_used = lb_.delta_t;
        r.trees_evaluated = evaluated_;
        r.partial_trees = expanded_;
        r.candidate_count = g_.nodes.size() - 1 - g_.user_count();
        return r;
    }

private:
    struct Move {
        double bound;
        std::size_t child;
        double run;
        double remaining;
    };

    bool cut(double bound) const { return bound > best_primary_ + kPruneSlack * std::abs(best_primary_); }

    void consider() {
        TreeEdges sorted = edges_;
        std::sort(sorted.begin(), sorted.end());
        TreeEvaluation ev = steady_state_cost(g_, sorted);
        ++evaluated_;
        if (!best_ || design_less(lb_.objective, ev, sorted, *best_, best_edges_)) {
            best_primary_ = lb_.objective == Objective::Loss ? ev.true_cost : ev.total_length;
            best_ = std::move(ev);
            best_edges_ = std::move(sorted);
        }
    }

    void dfs(std::size_t cursor, std::size_t last) {
        ++expanded_;
        if (collected_ == full_) {
            consider();
            return;
        }
        if (cursor == order_.size() || cut(run_ + remaining_)) return;
        const std::size_t parent = order_[cursor];

        std::vector<Move> moves;
        for (std::size_t gi = 0; gi < g_.groups.size(); ++gi) {
            const auto& [mask, ids] = g_.groups[gi];
            if (mask & collected_) continue;
            const double rem = remaining_ - group_remaining_[gi];
            if (cut(run_ + group_node_min_[gi] + rem)) continue;
            for (auto it = std::upper_bound(ids.begin(), ids.end(), last); it != ids.end(); ++it) {
                if (*it == parent) continue;
                const double r = run_ + lb_.edge(g_, parent, *it) + lb_.node[*it];
                if (!cut(r + rem)) moves.push_back({r + rem, *it, r, rem});
            }
        }
        std::sort(moves.begin(), moves.end(),
                  [](const Move& a, const Move& b) { return a.bound != b.bound ? a.bound < b.bound : a.child < b.child; });

        const double saved_run = run_;
        const double saved_remaining = remaining_;
        for (const Move& m : moves) {
            if (cut(m.bound)) continue;
            const PrizeMask prizes = g_.nodes[m.child].prizes;
            collected_ |= prizes;
            run_ = m.run;
            remaining_ = m.remaining;
            order_.push_back(m.child);
            edges_.emplace_back(parent, m.child);
            dfs(cursor, m.child);
            edges_.pop_back();
            order_.pop_back();
            collected_ &= ~prizes;
            run_ = saved_run;
            remaining_ = saved_remaining;
        }
        dfs(cursor + 1, 0);
    }

    const ProblemGraph& g_;
    const LowerBounds& lb_;
    PrizeMask full_;
    std::vector<double> group_remaining_;
    std::vector<double> group_node_min_;

    std::vector<std::size_t> order_;
    TreeEdges edges_;
    PrizeMask collected_ = 0;
    double run_ = 0.0;
    double remaining_ = 0.0;

    std::optional<TreeEvaluation> best_;
    TreeEdges best_edges_;
    double best_primary_ = std::numeric_limits<double>::infinity();
    std::uint64_t evaluated_ = 0;
    std::uint64_t expanded_ = 0;
};

} // namespace

DesignResult branch_and_bound(const ProblemGraph& graph, const LowerBounds& bounds) {
    if (bounds.node.size() != graph.nodes.size() || bounds.incoming.size() != graph.user_count())
        throw Error("bad_input", "lower bounds do not belong to this problem graph");
    return Search(graph, bounds).run();
}

DesignResult optimize(const ProblemGraph& graph, const OptimizeOptions& options) {
    if (!(options.delta_t_init >= 0)) throw Error("bad_input", "initial delta_t must be non-negative");
    double delta_t = options.delta_t_init;
    std::uint64_t trees = 0;
    for (int it = 1; it <= options.max_iterations; ++it) {
        DesignResult r = branch_and_bound(graph, lower_bound_costs(graph, delta_t, Objective::Loss));
        trees += r.trees_evaluated;
        r.iterations = it;
        if (delta_t >= r.delta_t_max()) {
            r.trees_evaluated = trees;
            return r;
        }
        delta_t = r.delta_t_max();
    }
    throw Error("iteration_limit",
                "delta_t did not settle within " + std::to_string(options.max_iterations) + " iterations");
}

DesignResult optimize(const SiteSpec& site, const OptimizeOptions& options) {
    return optimize(ProblemGraph(site, generate_candidates(site, options.limits)), options);
}

DesignResult length_baseline(const ProblemGraph& graph) {
    return branch_and_bound(graph, lower_bound_costs(graph, 0.0, Objective::Length));
}

} // namespace dhn
