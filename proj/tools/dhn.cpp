// Command-line front end: dhn <command> [options]
#include "dhn/io.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"District heating network modelling and layout design"};
    app.require_subcommand(1);
    dhn::RunConfig cfg;

    auto paths = [&](CLI::App* sub) {
        sub->add_option("--out", cfg.out, "Output directory")->capture_default_str();
        sub->add_option("--seed", cfg.seed, "Seed for randomized search")->capture_default_str();
    };
    auto network = [&](CLI::App* sub) { sub->add_option("--network", cfg.network, "Network JSON")->required(); };
    auto scenario = [&](CLI::App* sub, bool required) {
        auto* o = sub->add_option("--scenario", cfg.scenario, "Scenario CSV");
        if (required) o->required();
        sub->add_option("--dt", cfg.dt, "Time step in s (default: from the time column, else 1)");
    };
    auto sim = [&](CLI::App* sub) {
        sub->add_flag("--buildings", cfg.buildings, "Append building temperatures");
        sub->add_option("--reassembly-tolerance", cfg.reassembly_tolerance,
                        "Relative flow change that rebuilds the model")->capture_default_str();
        sub->add_option("--flow-tolerance", cfg.flow_tolerance, "Pressure balance tolerance")->capture_default_str();
    };

    auto* validate = app.add_subcommand("validate", "Check a network description");
    network(validate);
    paths(validate);

    auto* assemble = app.add_subcommand("assemble", "Write A, B, E and the state index");
    network(assemble);
    scenario(assemble, false);
    paths(assemble);
    assemble->add_flag("--buildings", cfg.buildings, "Append building temperatures");
    assemble->add_option("--supply-flow", cfg.supply_flow, "Plant flow for the ideal split (kg/s)")
        ->capture_default_str();
    assemble->add_option("--flow-tolerance", cfg.flow_tolerance, "Pressure balance tolerance")->capture_default_str();

    auto* simulate = app.add_subcommand("simulate", "Open- or closed-loop simulation");
    network(simulate);
    scenario(simulate, true);
    paths(simulate);
    sim(simulate);
    simulate->add_flag("--closed-loop", cfg.closed_loop, "PID control of the user draws");
    simulate->add_flag("--track-measured", cfg.track_measured, "Drive the PID from measured building traces");
    simulate->add_flag("--autotune", cfg.autotune, "Relay autotuning of the PID gains");
    simulate->add_option("--kp", cfg.kp)->capture_default_str();
    simulate->add_option("--ki", cfg.ki)->capture_default_str();
    simulate->add_option("--kd", cfg.kd)->capture_default_str();
    simulate->add_option("--min-flow", cfg.min_flow, "Lower draw limit (kg/s)")->capture_default_str();
    simulate->add_option("--max-flow", cfg.max_flow, "Upper draw limit (kg/s)")->capture_default_str();

    auto* calibrate = app.add_subcommand("calibrate", "Fit pipe conductances to measured traces");
    network(calibrate);
    scenario(calibrate, true);
    paths(calibrate);
    sim(calibrate);
    calibrate->add_option("--target", cfg.targets, "Conductance to fit, <node>:<segment> (repeatable)");
    calibrate->add_option("--h-lower", cfg.h_lower, "Lower bound (W/K)")->capture_default_str();
    calibrate->add_option("--h-upper", cfg.h_upper, "Upper bound (W/K)")->capture_default_str();
    calibrate->add_option("--max-evaluations", cfg.max_evaluations, "Per start")->capture_default_str();

    auto* optimize = app.add_subcommand("optimize", "Loss- and length-minimized layouts for a site");
    optimize->add_option("--site", cfg.site, "Site JSON")->required();
    paths(optimize);
    optimize->add_option("--delta-t-init", cfg.delta_t_init, "Initial temperature drop bound (K)")
        ->capture_default_str();
    optimize->add_option("--max-candidates", cfg.max_candidates, "Candidate split node cap")->capture_default_str();
    optimize->add_option("--max-child-distance", cfg.max_child_distance, "Skip wider candidate groups (m)");
    optimize->add_option("--max-iterations", cfg.max_iterations, "Outer iteration cap")->capture_default_str();
    std::string objective = "loss";
    optimize->add_option("--objective", objective, "Design reported on stdout")
        ->check(CLI::IsMember({"loss", "length"}))
        ->capture_default_str();

    CLI11_PARSE(app, argc, argv);
    cfg.command = app.get_subcommands().front()->get_name();
    cfg.objective = objective == "length" ? dhn::Objective::Length : dhn::Objective::Loss;
    return dhn::run(cfg, std::cout, std::cerr);
}
