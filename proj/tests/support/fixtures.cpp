#include "fixtures.hpp"

#include "dhn/io.hpp"

#include <functional>

namespace dhn::test {

std::filesystem::path data_path(const std::string& name) { return std::filesystem::path(DHN_DATA_DIR) / name; }

NetworkTopology two_user_network() { return load_network(data_path("two_user_network.json")); }

Scenario lab_scenario(double dt) {
    const Scenario minute = load_scenario(data_path("two_user_lab_scenario.csv"), 2);
    const auto repeat = static_cast<std::size_t>(std::llround(minute.dt / dt));
    Scenario sc;
    sc.dt = dt;
    auto stretch = [&](const std::vector<double>& v) {
        std::vector<double> out;
        out.reserve(v.size() * repeat);
        for (double x : v) out.insert(out.end(), repeat, x);
        return out;
    };
    sc.supply_temperature = stretch(minute.supply_temperature);
    sc.ambient_temperature = stretch(minute.ambient_temperature);
    sc.supply_flow = stretch(minute.supply_flow);
    for (const auto& s : minute.setpoint) sc.setpoint.push_back(stretch(s));
    return sc;
}

namespace {

struct Draft {
    bool user = true;
    std::vector<std::size_t> kids;
};

} // namespace

NetworkTopology random_topology(std::mt19937_64& rng, const RandomTopologyOptions& opt) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    auto range = [&](double lo, double hi) { return lo + (hi - lo) * uni(rng); };
    auto pick = [&](std::size_t lo, std::size_t hi) {
        return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
    };

    std::vector<Draft> draft{{false, {}}}; // index 0 stands for the plant
    std::size_t users = 0;
    std::size_t splits = 0;

    // Appends a chain of at most `budget` users (and whatever hangs below it) to `parent`.
    std::function<void(std::size_t, std::size_t, std::size_t)> chain = [&](std::size_t parent, std::size_t min_len,
                                                                           std::size_t budget) {
        const std::size_t len = std::min(pick(min_len, 3), budget);
        std::size_t at = parent;
        for (std::size_t i = 0; i < len; ++i) {
            draft.push_back({true, {}});
            draft[at].kids.push_back(draft.size() - 1);
            at = draft.size() - 1;
            ++users;
        }
        std::size_t room = budget - len;
        if (splits < opt.max_splits && room >= 2 && uni(rng) < 0.6) {
            draft.push_back({false, {}});
            draft[at].kids.push_back(draft.size() - 1);
            const std::size_t s = draft.size() - 1;
            ++splits;
            const std::size_t ways = std::min<std::size_t>(pick(2, 3), room);
            for (std::size_t w = 0; w < ways; ++w) {
                const std::size_t before = users;
                chain(s, 1, room - (ways - 1 - w));
                room -= users - before;
            }
            return;
        }
        if (at == parent) { // a chain never ends empty
            draft.push_back({true, {}});
            draft[at].kids.push_back(draft.size() - 1);
            ++users;
        }
    };
    chain(0, 0, opt.max_users);

    // Renumber: users 1..n_u then splits, both in depth-first order.
    std::vector<std::size_t> order;
    std::function<void(std::size_t)> visit = [&](std::size_t v) {
        order.push_back(v);
        for (std::size_t c : draft[v].kids) visit(c);
    };
    visit(0);
    std::vector<NodeId> id(draft.size());
    NodeId next_user = 1;
    NodeId next_split = users + 1;
    for (std::size_t v : order) {
        if (v == 0) id[v] = kPlant;
        else if (draft[v].user) id[v] = next_user++;
        else id[v] = next_split++;
    }

    auto pipe = [&](double len_lo, double len_hi) {
        const double len = range(len_lo, len_hi);
        const double d = range(0.02, 0.06);
        const double zeta = range(1.0e3, 4.0e3);
        if (opt.circular_pipes) return PipeParams::circular(len, d, range(0.05, 5.0), zeta);
        PipeParams p = PipeParams::circular(len, d, range(0.05, 5.0), zeta);
        p.volume *= range(0.5, 2.0);
        return p;
    };

    std::map<NodeId, Node> nodes;
    std::vector<Edge> edges;
    nodes[kPlant] = PlantNode{};
    for (std::size_t v : order) {
        if (v == 0) continue;
        if (draft[v].user) {
            UserNode u;
            u.feed = pipe(5.0, 40.0);
            u.supply = pipe(2.0, 10.0);
            u.exchanger = pipe(1.0, 4.0);
            u.discharge = pipe(2.0, 10.0);
            u.ret = pipe(5.0, 40.0);
            if (draft[v].kids.empty()) u.bypass = pipe(1.0, 6.0);
            if (opt.buildings)
                u.building = BuildingParams{range(200.0, 2000.0), range(10.0, 80.0), range(1e6, 5e6)};
            nodes[id[v]] = u;
        } else {
            nodes[id[v]] = SplitNode{pipe(5.0, 40.0), pipe(5.0, 40.0), std::nullopt};
        }
    }
    for (std::size_t v : order)
        for (std::size_t c : draft[v].kids) edges.emplace_back(id[v], id[c]);
    return NetworkTopology(std::move(nodes), std::move(edges));
}

NetworkTopology two_branch_topology(std::mt19937_64& rng, std::size_t left, std::size_t right) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    auto pipe = [&](double zeta_lo, double zeta_hi) {
        return PipeParams::circular(5.0 + 20.0 * uni(rng), 0.02 + 0.03 * uni(rng), 0.5,
                                    zeta_lo + (zeta_hi - zeta_lo) * uni(rng));
    };
    const std::size_t n_u = left + right;
    const NodeId split = n_u + 1;
    std::map<NodeId, Node> nodes{{kPlant, PlantNode{}}, {split, SplitNode{pipe(1e3, 4e3), pipe(1e3, 4e3), std::nullopt}}};
    std::vector<Edge> edges{{kPlant, split}};
    NodeId next = 1;
    for (std::size_t len : {left, right}) {
        NodeId at = split;
        for (std::size_t i = 0; i < len; ++i, ++next) {
            UserNode u;
            u.feed = pipe(5e2, 5e3);
            u.supply = u.exchanger = u.discharge = u.ret = pipe(1e3, 2e3);
            if (i + 1 == len) u.bypass = pipe(5e2, 5e3);
            nodes[next] = u;
            edges.emplace_back(at, next);
            at = next;
        }
    }
    return NetworkTopology(std::move(nodes), std::move(edges));
}

std::vector<double> random_draws(std::mt19937_64& rng, std::size_t users, double supply) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::vector<double> w(users);
    double sum = 0.0;
    for (auto& x : w) sum += (x = 0.2 + uni(rng));
    const double share = 0.03 + 0.07 * uni(rng); // fraction of the supply drawn in total
    for (auto& x : w) x *= share * supply / sum;
    return w;
}

SiteSpec random_site(std::mt19937_64& rng, std::size_t users, double extent) {
    std::uniform_real_distribution<double> uni(0.0, extent);
    SiteSpec s;
    s.plant = {0.0, 0.0};
    for (std::size_t i = 0; i < users; ++i) s.users.push_back({uni(rng), uni(rng)});
    return s;
}

} // namespace dhn::test
