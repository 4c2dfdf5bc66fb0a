#include "dhn/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <random>

namespace dhn {

DiscreteModel discretize_bilinear(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                  const Eigen::MatrixXd& E, double dt) {
    if (!(dt > 0)) throw Error("bad_input", "time step must be positive");
    const Eigen::Index n = A.rows();
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
    const Eigen::MatrixXd left = I - 0.5 * dt * A;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(left);
    if (!lu.isInvertible()) throw Error("singular_matrix", "I - dt/2 A is singular");
    DiscreteModel d;
    d.Ad = lu.solve(I + 0.5 * dt * A);
    d.Bd = lu.solve(dt * B);
    d.Ed = lu.solve(dt * E);
    return d;
}

void Scenario::check(std::size_t user_count) const {
    const std::size_t h = horizon();
    auto bad = [](const std::string& msg) { throw Error("bad_scenario", msg); };
    if (!(dt > 0)) bad("dt must be positive");
    if (h == 0) bad("scenario is empty");
    if (ambient_temperature.size() != h || supply_flow.size() != h)
        bad("supply temperature, ambient temperature and supply flow must have the same length");
    auto per_user = [&](const std::vector<std::vector<double>>& s, const char* name) {
        if (s.empty()) return;
        if (s.size() != user_count) bad(std::string(name) + " needs one series per user");
        for (const auto& v : s)
            if (v.size() != h) bad(std::string(name) + " series length differs from the horizon");
    };
    per_user(user_flow, "user flow");
    per_user(heat_demand, "heat demand");
    per_user(setpoint, "setpoint");
    for (const auto& [label, v] : measured)
        if (v.size() != h) bad("measured series " + label + " length differs from the horizon");
}

std::vector<double> SimResult::series(const std::string& label) const {
    const StateLabel wanted = parse_state_label(label);
    for (std::size_t i = 0; i < states.size(); ++i)
        if (states[i] == wanted) {
            const Eigen::VectorXd col = trajectory.col(static_cast<Eigen::Index>(i));
            return {col.data(), col.data() + col.size()};
        }
    throw Error("unknown_state", "result has no state " + label, label);
}

namespace {

bool flows_close(const MassFlowSolution& a, const MassFlowSolution& b, double tol) {
    auto close = [tol](double x, double y) {
        double scale = std::max(std::abs(x), std::abs(y));
        return scale == 0.0 || std::abs(x - y) <= tol * scale;
    };
    for (const auto& [id, fa] : a.nodes) {
        const auto it = b.nodes.find(id);
        if (it == b.nodes.end()) return false;
        const NodeFlow& fb = it->second;
        if (!close(fa.feed, fb.feed) || !close(fa.user, fb.user) || !close(fa.bypass, fb.bypass) ||
            !close(fa.ret, fb.ret))
            return false;
    }
    return true;
}

std::vector<StateLabel> labels_for(const NetworkTopology& topology, bool buildings) {
    std::map<NodeId, std::vector<double>> alpha;
    for (const auto& [id, node] : topology.nodes())
        if (topology.is_split(id))
            alpha[id].assign(topology.children(id).size(), 1.0 / static_cast<double>(topology.children(id).size()));
    std::vector<double> zero(topology.user_count(), 0.0);
    auto model = assemble(topology, flows_from_fractions(topology, 0.0, zero, alpha));
    if (buildings) model = append_buildings(model, topology);
    return model.states;
}

// Draw policy: fills draws and saturation flags for step k from state x.
using DrawPolicy = std::function<void(std::size_t k, const Eigen::VectorXd& x, std::vector<double>& draws,
                                      std::vector<bool>& saturated)>;

SimResult run(const NetworkTopology& topology, const Scenario& scenario, const SimOptions& options,
              bool buildings, const DrawPolicy& policy) {
    require_valid(topology);
    const std::size_t n_u = topology.user_count();
    scenario.check(n_u);
    const std::size_t steps = scenario.horizon();

    SimResult result;
    result.states = labels_for(topology, buildings);
    const auto n = static_cast<Eigen::Index>(result.states.size());
    result.trajectory.resize(static_cast<Eigen::Index>(steps), n);
    result.user_flow.assign(n_u, std::vector<double>(steps, 0.0));
    result.model_draws.assign(n_u, std::vector<double>(steps, 0.0));
    result.saturated.assign(n_u, std::vector<bool>(steps, false));
    result.model_supply.assign(steps, 0.0);
    result.flow_iterations.assign(steps, 0);

    Eigen::VectorXd x = Eigen::VectorXd::Constant(
        n, scenario.initial_temperature.value_or(scenario.ambient_temperature.front()));

    std::optional<MassFlowSolution> model_flows;
    std::optional<MassFlowSolution> last_flows;
    std::vector<double> model_inputs; // supply followed by draws the model was built from
    std::vector<double> last_inputs;
    DiscreteModel disc;

    std::vector<double> draws(n_u, 0.0);
    std::vector<bool> sat(n_u, false);
    Eigen::VectorXd d(static_cast<Eigen::Index>(1 + n_u));

    for (std::size_t k = 0; k < steps; ++k) {
        std::fill(sat.begin(), sat.end(), false);
        policy(k, x, draws, sat);

        std::vector<double> inputs;
        inputs.reserve(1 + n_u);
        inputs.push_back(scenario.supply_flow[k]);
        inputs.insert(inputs.end(), draws.begin(), draws.end());

        if (!last_flows || inputs != last_inputs) {
            try {
                last_flows = solve_flow_split(topology, inputs.front(), draws, options.flow);
            } catch (const Error& e) {
                throw Error(e.code(), "step " + std::to_string(k) + ": " + e.what(), "step " + std::to_string(k));
            }
            last_inputs = inputs;
            result.flow_iterations[k] = last_flows->iterations;
        }
        if (!model_flows || !flows_close(*model_flows, *last_flows, options.reassembly_tolerance)) {
            model_flows = last_flows;
            model_inputs = last_inputs;
            auto model = assemble(topology, *model_flows);
            if (buildings) model = append_buildings(model, topology);
            disc = discretize_bilinear(model.dense_A(), model.dense_B(), model.dense_E(), scenario.dt);
            ++result.reassemblies;
        }

        result.trajectory.row(static_cast<Eigen::Index>(k)) = x.transpose();
        result.model_supply[k] = model_inputs.front();
        for (std::size_t u = 0; u < n_u; ++u) {
            result.user_flow[u][k] = draws[u];
            result.model_draws[u][k] = model_inputs[1 + u];
            result.saturated[u][k] = sat[u];
        }

        d(0) = scenario.ambient_temperature[k];
        for (std::size_t u = 0; u < n_u; ++u)
            d(static_cast<Eigen::Index>(1 + u)) =
                (!buildings && !scenario.heat_demand.empty()) ? scenario.heat_demand[u][k] : 0.0;
        x = disc.Ad * x + disc.Bd.col(0) * scenario.supply_temperature[k] + disc.Ed * d;
        if (!x.allFinite())
            throw Error("diverged", "simulation produced non-finite temperatures at step " + std::to_string(k),
                        "step " + std::to_string(k));
    }
    result.time.resize(steps);
    for (std::size_t k = 0; k < steps; ++k) result.time[k] = static_cast<double>(k) * scenario.dt;
    return result;
}

std::vector<Eigen::Index> building_rows(const NetworkTopology& topology) {
    const auto labels = labels_for(topology, true);
    std::vector<Eigen::Index> rows;
    for (NodeId u = 1; u <= topology.user_count(); ++u)
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == StateLabel{u, Segment::S2, true}) rows.push_back(static_cast<Eigen::Index>(i));
    return rows;
}

} // namespace

SimResult simulate(const NetworkTopology& topology, const Scenario& scenario, const SimOptions& options) {
    if (scenario.user_flow.empty() && topology.user_count() > 0)
        throw Error("bad_scenario", "open-loop simulation needs a flow series for every user");
    return run(topology, scenario, options, options.with_buildings,
               [&](std::size_t k, const Eigen::VectorXd&, std::vector<double>& draws, std::vector<bool>&) {
                   for (std::size_t u = 0; u < draws.size(); ++u) draws[u] = scenario.user_flow[u][k];
               });
}

PidController::PidController(const PidLoop& loop, double dt) : loop_(loop), dt_(dt) {
    if (loop.min_flow < 0 || loop.max_flow < loop.min_flow)
        throw Error("bad_input", "PID output limits must satisfy 0 <= min <= max");
}

double PidController::update(double error) {
    const double derivative = first_ ? 0.0 : (error - previous_) / dt_;
    first_ = false;
    previous_ = error;
    double integral = integral_ + error * dt_;
    double raw = loop_.bias + loop_.kp * error + loop_.ki * integral + loop_.kd * derivative;
    saturated_ = false;
    if (raw > loop_.max_flow) {
        saturated_ = true;
        if (error > 0) integral = integral_;
    } else if (raw < loop_.min_flow) {
        saturated_ = true;
        if (error < 0) integral = integral_;
    }
    integral_ = integral;
    raw = loop_.bias + loop_.kp * error + loop_.ki * integral_ + loop_.kd * derivative;
    return std::clamp(raw, loop_.min_flow, loop_.max_flow);
}

SimResult simulate_closed_loop(const NetworkTopology& topology, const Scenario& scenario, const PidConfig& pid,
                               const SimOptions& options) {
    const std::size_t n_u = topology.user_count();
    if (pid.loops.size() != n_u) throw Error("bad_input", "one PID loop per user is required");
    std::vector<std::vector<double>> reference(n_u);
    for (std::size_t u = 0; u < n_u; ++u) {
        if (pid.target == ControlTarget::Setpoint) {
            if (scenario.setpoint.size() != n_u) throw Error("bad_scenario", "closed loop needs a setpoint per user");
            reference[u] = scenario.setpoint[u];
        } else {
            const std::string label = StateLabel{u + 1, Segment::S2, true}.str();
            auto it = scenario.measured.find(label);
            if (it == scenario.measured.end())
                throw Error("bad_scenario", "tracking mode needs a measured trace for " + label, label);
            reference[u] = it->second;
        }
    }
    std::vector<PidController> controllers;
    for (const auto& loop : pid.loops) controllers.emplace_back(loop, scenario.dt);
    const auto rows = building_rows(topology);

    return run(topology, scenario, options, true,
               [&](std::size_t k, const Eigen::VectorXd& x, std::vector<double>& draws, std::vector<bool>& sat) {
                   for (std::size_t u = 0; u < n_u; ++u) {
                       draws[u] = controllers[u].update(reference[u][k] - x(rows[u]));
                       sat[u] = controllers[u].saturated();
                   }
               });
}

std::vector<PidLoop> relay_autotune(const NetworkTopology& topology, const Scenario& scenario, double min_flow,
                                    double max_flow, const SimOptions& options) {
    const std::size_t n_u = topology.user_count();
    if (scenario.setpoint.size() != n_u) throw Error("bad_scenario", "autotuning needs a setpoint per user");
    const auto rows = building_rows(topology);
    const SimResult res = run(topology, scenario, options, true,
                              [&](std::size_t, const Eigen::VectorXd& x, std::vector<double>& draws,
                                  std::vector<bool>& sat) {
                                  for (std::size_t u = 0; u < n_u; ++u) {
                                      draws[u] = x(rows[u]) < scenario.setpoint[u].front() ? max_flow : min_flow;
                                      sat[u] = true;
                                  }
                              });

    std::vector<PidLoop> loops;
    const double relay = 0.5 * (max_flow - min_flow);
    for (std::size_t u = 0; u < n_u; ++u) {
        const double target = scenario.setpoint[u].front();
        const Eigen::VectorXd tb = res.trajectory.col(rows[u]);
        std::vector<std::size_t> ups;
        for (Eigen::Index k = 1; k < tb.size(); ++k)
            if (tb(k - 1) < target && tb(k) >= target) ups.push_back(static_cast<std::size_t>(k));
        if (ups.size() < 3)
            throw Error("autotune_failed", "no sustained relay oscillation for user " + std::to_string(u + 1),
                        std::to_string(u + 1));
        const std::size_t a = ups[ups.size() - 2];
        const std::size_t b = ups.back();
        const double period = static_cast<double>(b - a) * scenario.dt;
        const Eigen::VectorXd cycle = tb.segment(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b - a));
        const double amplitude = 0.5 * (cycle.maxCoeff() - cycle.minCoeff());
        if (!(amplitude > 0)) throw Error("autotune_failed", "relay oscillation has zero amplitude");
        const double ku = 4.0 * relay / (std::numbers::pi * amplitude);
        PidLoop loop;
        loop.kp = 0.45 * ku;
        loop.ki = loop.kp * 1.2 / period;
        loop.min_flow = min_flow;
        loop.max_flow = max_flow;
        loops.push_back(loop);
    }
    return loops;
}

double rmse(std::span<const double> simulated, std::span<const double> measured) {
    if (simulated.size() != measured.size()) throw Error("bad_input", "series lengths differ");
    if (simulated.empty()) throw Error("bad_input", "series are empty");
    double sum = 0.0;
    for (std::size_t i = 0; i < simulated.size(); ++i) {
        const double e = simulated[i] - measured[i];
        sum += e * e;
    }
    return std::sqrt(sum / static_cast<double>(simulated.size()));
}

double nrmse(std::span<const double> simulated, std::span<const double> measured) {
    if (measured.size() < 2) throw Error("bad_input", "nRMSE needs at least two samples");
    const auto [lo, hi] = std::minmax_element(measured.begin(), measured.end());
    const double range = *hi - *lo;
    if (!(range > 0)) throw Error("zero_range", "measured series has zero range");
    return rmse(simulated, measured) / range;
}

double calibration_objective(const NetworkTopology& topology, const Scenario& scenario, const SimOptions& options) {
    if (scenario.measured.empty()) throw Error("bad_scenario", "calibration needs measured traces");
    SimResult res;
    try {
        res = simulate(topology, scenario, options);
    } catch (const Error&) {
        return std::numeric_limits<double>::infinity();
    }
    double total = 0.0;
    for (const auto& [label, meas] : scenario.measured) total += rmse(res.series(label), meas);
    return std::isfinite(total) ? total : std::numeric_limits<double>::infinity();
}

namespace {

// Nelder-Mead on a box; vertices are clamped after every move.
struct Simplex {
    using Objective = std::function<double(const Eigen::VectorXd&)>;

    Simplex(Objective f, Eigen::VectorXd lo, Eigen::VectorXd hi)
        : f_(std::move(f)), lo_(std::move(lo)), hi_(std::move(hi)) {}

    Eigen::VectorXd clamp(Eigen::VectorXd z) const { return z.cwiseMax(lo_).cwiseMin(hi_); }

    double eval(const Eigen::VectorXd& z) {
        ++evaluations;
        double v = f_(z);
        return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    }

    // Runs from `start` with initial edge `step`; calls `record` with the best
    // value after every iteration.
    std::pair<Eigen::VectorXd, double> minimize(const Eigen::VectorXd& start, double step, int budget,
                                                const std::function<void(double)>& record) {
        const Eigen::Index n = start.size();
        std::vector<Eigen::VectorXd> pts;
        std::vector<double> vals;
        const int stop_at = evaluations + budget;
        pts.push_back(clamp(start));
        vals.push_back(eval(pts.back()));
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::VectorXd p = pts.front();
            p(i) += (p(i) + step <= hi_(i)) ? step : -step;
            pts.push_back(clamp(p));
            vals.push_back(eval(pts.back()));
        }
        std::vector<std::size_t> order(pts.size());
        auto sort = [&] {
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return vals[a] < vals[b]; });
        };
        sort();
        record(vals[order.front()]);
        while (evaluations < stop_at) {
            const std::size_t best = order.front();
            const std::size_t worst = order.back();
            const std::size_t second = order[order.size() - 2];
            double spread = 0.0;
            for (const auto& p : pts) spread = std::max(spread, (p - pts[best]).cwiseAbs().maxCoeff());
            if (spread < 1e-10) break;
            if (std::isfinite(vals[worst]) && vals[worst] - vals[best] <= 1e-14 * std::abs(vals[best]) &&
                spread < 1e-6)
                break;

            Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
            for (std::size_t i = 0; i < pts.size(); ++i)
                if (i != worst) centroid += pts[i];
            centroid /= static_cast<double>(n);

            const Eigen::VectorXd reflected = clamp(centroid + (centroid - pts[worst]));
            const double fr = eval(reflected);
            if (fr < vals[best]) {
                const Eigen::VectorXd expanded = clamp(centroid + 2.0 * (centroid - pts[worst]));
                const double fe = eval(expanded);
                if (fe < fr) {
                    pts[worst] = expanded;
                    vals[worst] = fe;
                } else {
                    pts[worst] = reflected;
                    vals[worst] = fr;
                }
            } else if (fr < vals[second]) {
                pts[worst] = reflected;
                vals[worst] = fr;
            } else {
                const bool outside = fr < vals[worst];
                const Eigen::VectorXd contracted = outside ? clamp(centroid + 0.5 * (reflected - centroid))
                                                           : clamp(centroid + 0.5 * (pts[worst] - centroid));
                const double fc = eval(contracted);
                if (fc < std::min(fr, vals[worst])) {
                    pts[worst] = contracted;
                    vals[worst] = fc;
                } else {
                    for (std::size_t i = 0; i < pts.size(); ++i) {
                        if (i == best) continue;
                        pts[i] = clamp(pts[best] + 0.5 * (pts[i] - pts[best]));
                        vals[i] = eval(pts[i]);
                    }
                }
            }
            sort();
            record(vals[order.front()]);
        }
        return {pts[order.front()], vals[order.front()]};
    }

    int evaluations = 0;

private:
    Objective f_;
    Eigen::VectorXd lo_;
    Eigen::VectorXd hi_;
};

} // namespace

CalibrationResult calibrate_h(const NetworkTopology& topology, const Scenario& scenario,
                              std::span<const CalibrationTarget> targets, const CalibrationOptions& options) {
    if (!(options.lower > 0) || options.upper < options.lower)
        throw Error("bad_input", "calibration bounds must satisfy 0 < lower <= upper");
    if (targets.empty()) throw Error("bad_input", "no calibration targets");

    const auto n = static_cast<Eigen::Index>(targets.size());
    auto apply = [&](const Eigen::VectorXd& z) {
        NetworkTopology t = topology;
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& tg = targets[static_cast<std::size_t>(i)];
            t = t.with_conductance(tg.node, tg.segment, std::exp(z(i)));
        }
        return t;
    };
    auto objective = [&](const Eigen::VectorXd& z) {
        return calibration_objective(apply(z), scenario, options.sim);
    };

    const Eigen::VectorXd lo = Eigen::VectorXd::Constant(n, std::log(options.lower));
    const Eigen::VectorXd hi = Eigen::VectorXd::Constant(n, std::log(options.upper));
    Eigen::VectorXd start(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& tg = targets[static_cast<std::size_t>(i)];
        const double v = topology.conductance(tg.node, tg.segment);
        start(i) = std::log(std::clamp(v > 0 ? v : options.lower, options.lower, options.upper));
    }

    CalibrationResult result;
    result.targets.assign(targets.begin(), targets.end());
    Simplex simplex(objective, lo, hi);
    start = simplex.clamp(start);
    result.initial_objective = simplex.eval(start);

    Eigen::VectorXd best = start;
    double best_value = result.initial_objective;
    result.history.push_back(best_value);

    if (options.upper > options.lower) {
        auto record = [&](double v) {
            result.history.push_back(std::min(result.history.back(), v));
        };
        const double width = std::log(options.upper) - std::log(options.lower);
        const double step = std::min(0.5, 0.25 * width);
        std::mt19937_64 rng(options.seed);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        for (int s = 0; s < options.starts; ++s) {
            Eigen::VectorXd from;
            if (s == 0) {
                from = start;
            } else if (s == 1) {
                from = best; // restart with a fresh simplex around the incumbent
            } else {
                from.resize(n);
                for (Eigen::Index i = 0; i < n; ++i) from(i) = lo(i) + unit(rng) * (hi(i) - lo(i));
            }
            auto [z, v] = simplex.minimize(from, step, options.max_evaluations, record);
            if (v < best_value) {
                best_value = v;
                best = z;
            }
        }
    }

    result.objective = best_value;
    result.evaluations = simplex.evaluations;
    for (Eigen::Index i = 0; i < n; ++i) result.values.push_back(std::exp(best(i)));
    return result;
}

} // namespace dhn
