#include "dhn/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <ostream>

namespace dhn {

namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

const fs::path& require(const std::optional<fs::path>& p, const char* flag) {
    if (!p) throw Error("missing_argument", std::string(flag) + " is required", flag);
    if (!fs::exists(*p)) throw Error("io_error", "file not found: " + p->string(), p->string());
    return *p;
}

SimOptions sim_options(const RunConfig& c) {
    SimOptions o;
    o.with_buildings = c.buildings;
    o.reassembly_tolerance = c.reassembly_tolerance;
    o.flow.tolerance = c.flow_tolerance;
    return o;
}

int validate_cmd(const RunConfig& c, std::ostream& out) {
    const NetworkTopology topo = load_network(require(c.network, "--network"));
    const auto violations = validate(topo);
    out << violations.size() << " violations\n";
    for (const auto& v : violations) out << "node " << v.node << ": " << v.message << "\n";
    if (!violations.empty())
        throw Error("invalid_topology", violations.front().message, "node " + std::to_string(violations.front().node));
    return 0;
}

int assemble_cmd(const RunConfig& c, std::ostream& out) {
    const NetworkTopology topo = load_network(require(c.network, "--network"));
    require_valid(topo);
    MassFlowSolution flows;
    if (c.scenario) {
        const Scenario sc = load_scenario(*c.scenario, topo.user_count(), c.dt);
        if (sc.user_flow.empty()) throw Error("bad_scenario", "assembly from a scenario needs mU_<i> columns");
        std::vector<double> draws;
        for (const auto& f : sc.user_flow) draws.push_back(f.front());
        FlowSolverOptions fo;
        fo.tolerance = c.flow_tolerance;
        flows = solve_flow_split(topo, sc.supply_flow.front(), draws, fo);
    } else {
        flows = ideal_flow_split(topo, c.supply_flow);
    }
    StateSpaceModel model = assemble(topo, flows);
    if (c.buildings) model = append_buildings(model, topo);

    std::vector<std::string> labels;
    for (const auto& s : model.states) labels.push_back(s.str());
    std::vector<std::string> a_cols;
    for (const auto& l : labels) a_cols.push_back(l + "[1/s]");
    std::vector<std::string> e_cols{"Tamb[1/s]"};
    for (std::size_t u = 1; u <= model.user_count; ++u) e_cols.push_back("Q_" + std::to_string(u) + "[K/J]");

    write_text(c.out / "A.csv", matrix_to_csv(model.dense_A(), labels, a_cols));
    write_text(c.out / "B.csv", matrix_to_csv(model.dense_B(), labels, {"T0[1/s]"}));
    write_text(c.out / "E.csv", matrix_to_csv(model.dense_E(), labels, e_cols));
    write_text(c.out / "states.csv", state_index_csv(model.states));

    std::string f = "node,F[kg/s],U[kg/s],B[kg/s],R[kg/s]\n";
    for (const auto& [id, nf] : flows.nodes)
        f += std::to_string(id) + "," + format_double(nf.feed) + "," + format_double(nf.user) + "," +
             format_double(nf.bypass) + "," + format_double(nf.ret) + "\n";
    write_text(c.out / "flows.csv", f);
    out << "assembled " << model.size() << " states (" << model.A.nonZeros() << " nonzeros in A)\n";
    return 0;
}

int simulate_cmd(const RunConfig& c, std::ostream& out) {
    const NetworkTopology topo = load_network(require(c.network, "--network"));
    const Scenario sc = load_scenario(require(c.scenario, "--scenario"), topo.user_count(), c.dt);
    const SimOptions opts = sim_options(c);

    json summary;
    SimResult res;
    if (c.closed_loop) {
        PidConfig pid;
        pid.target = c.track_measured ? ControlTarget::MeasuredBuilding : ControlTarget::Setpoint;
        if (c.autotune) {
            pid.loops = relay_autotune(topo, sc, c.min_flow, c.max_flow, opts);
        } else {
            PidLoop loop{c.kp, c.ki, c.kd, 0.0, c.min_flow, c.max_flow};
            pid.loops.assign(topo.user_count(), loop);
        }
        json gains = json::array();
        for (const auto& l : pid.loops)
            gains.push_back({{"kp", l.kp}, {"ki", l.ki}, {"kd", l.kd}, {"min_flow", l.min_flow}, {"max_flow", l.max_flow}});
        summary["pid"] = gains;
        res = simulate_closed_loop(topo, sc, pid, opts);
    } else {
        res = simulate(topo, sc, opts);
    }
    write_text(c.out / "trajectory.csv", trajectory_to_csv(res));

    summary["steps"] = res.trajectory.rows();
    summary["states"] = res.states.size();
    summary["dt_s"] = sc.dt;
    summary["reassemblies"] = res.reassemblies;
    summary["max_flow_iterations"] =
        res.flow_iterations.empty() ? 0 : *std::max_element(res.flow_iterations.begin(), res.flow_iterations.end());
    json sat = json::array();
    for (const auto& s : res.saturated) sat.push_back(std::count(s.begin(), s.end(), true));
    summary["saturated_steps"] = sat;
    json metrics = json::object();
    for (const auto& [label, meas] : sc.measured) {
        const bool present = std::any_of(res.states.begin(), res.states.end(),
                                         [&](const StateLabel& s) { return s.str() == label; });
        if (!present) continue;
        const auto sim = res.series(label);
        json m{{"rmse_K", rmse(sim, meas)}};
        try {
            m["nrmse"] = nrmse(sim, meas);
        } catch (const Error&) {
            m["nrmse"] = nullptr;
        }
        metrics[label] = m;
    }
    summary["measured"] = metrics;
    write_text(c.out / "summary.json", summary.dump(2) + "\n");
    out << "simulated " << res.trajectory.rows() << " steps of " << res.states.size() << " states\n";
    return 0;
}

CalibrationTarget parse_target(const std::string& text) {
    const auto colon = text.find(':');
    if (colon == std::string::npos) throw Error("bad_input", "target must be <node>:<segment>", text);
    CalibrationTarget t;
    try {
        t.node = std::stoul(text.substr(0, colon));
    } catch (const std::exception&) {
        throw Error("bad_input", "target must be <node>:<segment>", text);
    }
    t.segment = segment_from_string(text.substr(colon + 1));
    return t;
}

int calibrate_cmd(const RunConfig& c, std::ostream& out) {
    const NetworkTopology topo = load_network(require(c.network, "--network"));
    const Scenario sc = load_scenario(require(c.scenario, "--scenario"), topo.user_count(), c.dt);
    std::vector<CalibrationTarget> targets;
    for (const auto& t : c.targets) targets.push_back(parse_target(t));
    if (targets.empty())
        for (const auto& [label, series] : sc.measured) {
            const StateLabel s = parse_state_label(label);
            CalibrationTarget t{s.node, s.segment};
            if (std::find(targets.begin(), targets.end(), t) == targets.end()) targets.push_back(t);
        }
    CalibrationOptions opts;
    opts.lower = c.h_lower;
    opts.upper = c.h_upper;
    opts.max_evaluations = c.max_evaluations;
    opts.seed = c.seed;
    opts.sim = sim_options(c);
    const CalibrationResult r = calibrate_h(topo, sc, targets, opts);

    NetworkTopology calibrated = topo;
    for (std::size_t i = 0; i < r.targets.size(); ++i)
        calibrated = calibrated.with_conductance(r.targets[i].node, r.targets[i].segment, r.values[i]);
    write_text(c.out / "h_table.csv", h_table_csv(r));
    save_network(c.out / "calibrated_network.json", calibrated);
    json report{{"objective_K", r.objective},
                {"initial_objective_K", r.initial_objective},
                {"evaluations", r.evaluations},
                {"history_K", r.history}};
    write_text(c.out / "calibration.json", report.dump(2) + "\n");
    out << "calibrated " << r.targets.size() << " conductances, objective " << format_double(r.initial_objective)
        << " -> " << format_double(r.objective) << "\n";
    return 0;
}

int optimize_cmd(const RunConfig& c, std::ostream& out) {
    const SiteSpec site = load_site(require(c.site, "--site"));
    CandidateLimits limits;
    limits.max_candidates = c.max_candidates;
    limits.max_child_distance = c.max_child_distance;
    const ProblemGraph graph(site, generate_candidates(site, limits));
    OptimizeOptions opts;
    opts.delta_t_init = c.delta_t_init;
    opts.max_iterations = c.max_iterations;
    const DesignResult loss = optimize(graph, opts);
    const DesignResult length = length_baseline(graph);

    for (const auto* r : {&loss, &length}) {
        const std::string stem = r->objective == Objective::Loss ? "loss" : "length";
        write_text(c.out / (stem + "_design.json"), design_to_json(graph, *r));
        write_text(c.out / (stem + "_pipes.csv"), pipes_to_csv(*r));
        write_text(c.out / (stem + "_design.dot"), design_to_dot(graph, *r));
    }
    const DesignResult& chosen = c.objective == Objective::Loss ? loss : length;
    json summary{{"selected", c.objective == Objective::Loss ? "loss" : "length"},
                 {"candidate_count", loss.candidate_count},
                 {"loss_minimized", {{"true_cost_W", loss.true_cost()}, {"total_length_m", loss.total_length()}}},
                 {"length_minimized", {{"true_cost_W", length.true_cost()}, {"total_length_m", length.total_length()}}},
                 {"loss_reduction", length.true_cost() > 0 ? 1.0 - loss.true_cost() / length.true_cost() : 0.0}};
    write_text(c.out / "summary.json", summary.dump(2) + "\n");
    out << (c.objective == Objective::Loss ? "loss" : "length") << "-minimized design: TC "
        << format_double(chosen.true_cost()) << " W, length " << format_double(chosen.total_length()) << " m, "
        << chosen.edges.size() << " edges\n";
    return 0;
}

} // namespace

int run(const RunConfig& config, std::ostream& out, std::ostream& err) {
    try {
        if (config.command == "validate") return validate_cmd(config, out);
        if (config.command == "assemble") return assemble_cmd(config, out);
        if (config.command == "simulate") return simulate_cmd(config, out);
        if (config.command == "calibrate") return calibrate_cmd(config, out);
        if (config.command == "optimize") return optimize_cmd(config, out);
        throw Error("bad_command", "unknown command '" + config.command + "'", config.command);
    } catch (const Error& e) {
        err << json{{"code", e.code()}, {"message", e.what()}, {"location", e.location()}}.dump() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << json{{"code", "internal"}, {"message", e.what()}, {"location", ""}}.dump() << "\n";
        return 3;
    }
}

} // namespace dhn
