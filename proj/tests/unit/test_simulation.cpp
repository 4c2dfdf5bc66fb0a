#include "fixtures.hpp"
#include "oracles.hpp"

#include "dhn/simulation.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

using namespace dhn;

namespace {

Scenario constant_scenario(std::size_t steps, double dt, double t0, double tamb, double supply,
                           const std::vector<double>& draws) {
    Scenario sc;
    sc.dt = dt;
    sc.supply_temperature.assign(steps, t0);
    sc.ambient_temperature.assign(steps, tamb);
    sc.supply_flow.assign(steps, supply);
    for (double d : draws) sc.user_flow.emplace_back(steps, d);
    return sc;
}

PidConfig lab_pid() {
    PidConfig pid;
    pid.loops.assign(2, PidLoop{0.02, 2e-5, 0.0, 0.0, 0.0, 0.04});
    return pid;
}

} // namespace

TEST_CASE("bilinear transform of a scalar system") {
    Eigen::MatrixXd A(1, 1), B(1, 1), E(1, 2);
    A << -0.2;
    B << 0.15;
    E << 0.05, -1e-3;
    const auto d = discretize_bilinear(A, B, E, 2.0);
    CHECK(d.Ad(0, 0) == doctest::Approx(0.8 / 1.2).epsilon(1e-15));
    CHECK(d.Bd(0, 0) == doctest::Approx(0.3 / 1.2).epsilon(1e-15));
    CHECK(d.Ed(0, 0) == doctest::Approx(0.1 / 1.2).epsilon(1e-15));
    CHECK(d.Ed(0, 1) == doctest::Approx(-2e-3 / 1.2).epsilon(1e-15));
    CHECK_THROWS_AS(discretize_bilinear(A, B, E, 0.0), Error);
    Eigen::MatrixXd S(1, 1);
    S << 1.0; // I - dt/2 A = 0
    CHECK_THROWS_AS(discretize_bilinear(S, B, E, 2.0), Error);
}

TEST_CASE("discrete model keeps the uniform fixed point") {
    std::mt19937_64 rng(29);
    for (int i = 0; i < 10; ++i) {
        const auto t = test::random_topology(rng, {8, 3, true, true});
        const auto flows = solve_flow_split(t, 1.0, test::random_draws(rng, t.user_count(), 1.0));
        const auto m = append_buildings(assemble(t, flows), t);
        for (double dt : {0.1, 1.0, 60.0}) {
            const auto d = discretize_bilinear(m.dense_A(), m.dense_B(), m.dense_E(), dt);
            const Eigen::VectorXd x = Eigen::VectorXd::Constant(d.Ad.rows(), 42.0);
            const Eigen::VectorXd next = d.Ad * x + d.Bd.col(0) * 42.0 + d.Ed.col(0) * 42.0;
            CHECK((next - x).cwiseAbs().maxCoeff() <= 1e-12 * 42.0);
        }
    }
}

TEST_CASE("constant inputs settle at the continuous steady state") {
    const auto t = test::two_user_network();
    const std::vector<double> draws{0.02, 0.03};
    Scenario sc = constant_scenario(2000, 60.0, 70.0, 5.0, 0.1, draws);
    sc.heat_demand = {std::vector<double>(2000, 800.0), std::vector<double>(2000, 1200.0)};
    const auto res = simulate(t, sc);
    CHECK(res.reassemblies == 1);
    CHECK(res.trajectory.row(0).cwiseAbs().maxCoeff() == 5.0);

    const auto m = assemble(t, solve_flow_split(t, 0.1, draws));
    Eigen::VectorXd d(3);
    d << 5.0, 800.0, 1200.0;
    const Eigen::VectorXd rhs = m.dense_B().col(0) * 70.0 + m.dense_E() * d;
    const Eigen::VectorXd steady = -m.dense_A().fullPivLu().solve(rhs);
    const Eigen::VectorXd last = res.trajectory.row(1999).transpose();
    CHECK((last - steady).cwiseAbs().maxCoeff() <= 1e-6);
    // heat removed at the exchangers lowers the user return below the feed
    CHECK(last(m.index("S3_2")) < last(m.index("S1_2")));
}

TEST_CASE("open loop agrees with fine RK4 over a short horizon") {
    const auto t = test::two_user_network();
    Scenario sc = constant_scenario(600, 1.0, 60.0, 4.0, 0.1, {0.02, 0.03});
    for (std::size_t k = 300; k < 600; ++k) sc.user_flow[0][k] = 0.01;
    sc.initial_temperature = 20.0;
    SimOptions opt;
    opt.with_buildings = true;
    const auto res = simulate(t, sc, opt);
    CHECK(res.reassemblies == 2);
    const auto oracle = test::rk4_replay(t, sc, res, true, 0.01);
    CHECK((oracle - res.trajectory).cwiseAbs().maxCoeff() <= 1e-3);
}

TEST_CASE("reassembly follows the flow tolerance") {
    const auto t = test::two_user_network();
    Scenario sc = constant_scenario(10, 1.0, 60.0, 4.0, 0.1, {0.02, 0.03});
    sc.user_flow[0][5] = 0.02 * (1 + 1e-6);
    CHECK(simulate(t, sc).reassemblies == 1);
    sc.user_flow[0][5] = 0.025;
    const auto res = simulate(t, sc);
    CHECK(res.reassemblies == 3);
    CHECK(res.model_draws[0][5] == 0.025);
    CHECK(res.model_draws[0][6] == 0.02);
}

TEST_CASE("PID controller") {
    SUBCASE("proportional with clamping") {
        PidController c(PidLoop{2.0, 0.0, 0.0, 0.0, 0.0, 1.0}, 1.0);
        CHECK(c.update(0.25) == 0.5);
        CHECK_FALSE(c.saturated());
        CHECK(c.update(3.0) == 1.0);
        CHECK(c.saturated());
        CHECK(c.update(-1.0) == 0.0);
        CHECK(c.saturated());
    }
    SUBCASE("integral accumulates error times dt") {
        PidController c(PidLoop{0.0, 0.5, 0.0, 0.0, 0.0, 10.0}, 2.0);
        CHECK(c.update(1.0) == doctest::Approx(1.0));
        CHECK(c.update(1.0) == doctest::Approx(2.0));
        CHECK(c.update(-0.5) == doctest::Approx(1.5));
    }
    SUBCASE("no windup while saturated") {
        PidController c(PidLoop{0.0, 1.0, 0.0, 0.0, 0.0, 1.0}, 1.0);
        for (int i = 0; i < 50; ++i) c.update(5.0);
        CHECK(c.saturated());
        // integral stayed at its last unsaturated value (0), so a small
        // negative error brings the output straight back below the limit
        CHECK(c.update(-0.5) == doctest::Approx(0.0));
    }
    SUBCASE("derivative on the error difference") {
        PidController c(PidLoop{0.0, 0.0, 3.0, 0.5, 0.0, 10.0}, 0.5);
        CHECK(c.update(1.0) == doctest::Approx(0.5));
        CHECK(c.update(2.0) == doctest::Approx(0.5 + 3.0 * 2.0));
    }
    CHECK_THROWS_AS(PidController(PidLoop{1, 0, 0, 0, 1.0, 0.5}, 1.0), Error);
}

TEST_CASE("closed loop tracks the building setpoints") {
    const auto t = test::two_user_network();
    const Scenario sc = test::lab_scenario(60.0);
    const auto res = simulate_closed_loop(t, sc, lab_pid());
    REQUIRE(res.states.back().str() == "Tb_2");
    const auto tb1 = res.series("Tb_1");
    const auto tb2 = res.series("Tb_2");
    // end of the first comfort period of each user
    CHECK(std::abs(tb1[349] - 20.0) < 0.3);
    CHECK(std::abs(tb2[379] - 21.0) < 0.3);
    for (std::size_t u = 0; u < 2; ++u)
        for (double m : res.user_flow[u]) {
            CHECK(m >= 0.0);
            CHECK(m <= 0.04);
        }

    PidConfig wrong = lab_pid();
    wrong.loops.pop_back();
    CHECK_THROWS_AS(simulate_closed_loop(t, sc, wrong), Error);
    PidConfig track = lab_pid();
    track.target = ControlTarget::MeasuredBuilding;
    CHECK_THROWS_AS(simulate_closed_loop(t, sc, track), Error);
}

TEST_CASE("tracking a measured building trace") {
    const auto t = test::two_user_network();
    Scenario sc = test::lab_scenario(60.0);
    const std::size_t steps = sc.horizon();
    // the recorded trace, not the setpoint, is what the controller chases
    sc.measured["Tb_1"] = std::vector<double>(steps, 18.5);
    sc.measured["Tb_2"] = std::vector<double>(steps, 17.5);
    PidConfig track = lab_pid();
    track.target = ControlTarget::MeasuredBuilding;
    const auto res = simulate_closed_loop(t, sc, track);
    CHECK(std::abs(res.series("Tb_1")[steps - 1] - 18.5) < 0.3);
    CHECK(std::abs(res.series("Tb_2")[steps - 1] - 17.5) < 0.3);
}

TEST_CASE("relay autotuning yields usable PI gains") {
    const auto t = test::two_user_network();
    const Scenario sc = test::lab_scenario(60.0);
    const auto loops = relay_autotune(t, sc, 0.0, 0.04);
    REQUIRE(loops.size() == 2);
    for (const auto& l : loops) {
        CHECK(l.kp > 0);
        CHECK(l.ki > 0);
        CHECK(l.kd == 0);
        CHECK(l.max_flow == 0.04);
    }
    PidConfig pid;
    pid.loops = loops;
    const auto res = simulate_closed_loop(t, sc, pid);
    CHECK(std::abs(res.series("Tb_1")[349] - 20.0) < 1.0);
}

TEST_CASE("error metrics") {
    const std::vector<double> a{1.0, 2.0, 4.0};
    CHECK(nrmse(a, a) == 0.0);
    CHECK(rmse(a, a) == 0.0);
    CHECK(nrmse(std::vector<double>{0.0, 1.0}, std::vector<double>{1.0, 0.0}) == 1.0);
    CHECK(rmse(std::vector<double>{0.0, 0.0}, std::vector<double>{3.0, 4.0}) == doctest::Approx(std::sqrt(12.5)));
    CHECK(nrmse(std::vector<double>{0.0, 0.0, 0.0}, std::vector<double>{0.0, 2.0, 4.0}) ==
          doctest::Approx(std::sqrt(20.0 / 3.0) / 4.0));
    CHECK_THROWS_AS(nrmse(a, std::vector<double>{1.0, 1.0, 1.0}), Error);
    CHECK_THROWS_AS(nrmse(a, std::vector<double>{1.0, 2.0}), Error);
    CHECK_THROWS_AS(rmse(std::vector<double>{}, std::vector<double>{}), Error);
}

TEST_CASE("scenario checks and run errors") {
    const auto t = test::two_user_network();
    Scenario sc = constant_scenario(5, 1.0, 60.0, 4.0, 0.1, {0.02, 0.03});
    CHECK_NOTHROW(sc.check(2));
    Scenario short_flow = sc;
    short_flow.supply_flow.pop_back();
    CHECK_THROWS_AS(short_flow.check(2), Error);
    Scenario missing = sc;
    missing.user_flow.pop_back();
    CHECK_THROWS_AS(missing.check(2), Error);
    Scenario zero_dt = sc;
    zero_dt.dt = 0.0;
    CHECK_THROWS_AS(zero_dt.check(2), Error);

    Scenario nan = sc;
    nan.supply_temperature[2] = std::numeric_limits<double>::quiet_NaN();
    try {
        simulate(t, nan);
        FAIL("expected divergence");
    } catch (const Error& e) {
        CHECK(e.code() == "diverged");
        CHECK(e.location() == "step 2");
    }

    Scenario greedy = sc;
    greedy.user_flow[0][3] = 0.5;
    try {
        simulate(t, greedy);
        FAIL("expected an infeasible flow");
    } catch (const Error& e) {
        CHECK(e.code() == "infeasible_flow");
        CHECK(e.location() == "step 3");
    }
}

TEST_CASE("calibration") {
    const auto truth = test::two_user_network();
    Scenario sc = test::lab_scenario(60.0);
    sc.setpoint.clear();
    const std::size_t steps = 240;
    for (auto* v : {&sc.supply_temperature, &sc.ambient_temperature, &sc.supply_flow}) v->resize(steps);
    sc.user_flow = {std::vector<double>(steps, 0.02), std::vector<double>(steps, 0.03)};
    for (std::size_t k = 120; k < steps; ++k) sc.user_flow[1][k] = 0.015;
    sc.initial_temperature = 30.0;
    SimOptions opt;
    opt.with_buildings = true;
    const auto reference = simulate(truth, sc, opt);
    sc.measured["F_3"] = reference.series("F_3");
    CHECK(calibration_objective(truth, sc, opt) == 0.0);

    const std::vector<CalibrationTarget> targets{{3, Segment::F}};
    const double h = truth.conductance(3, Segment::F);
    CalibrationOptions co;
    co.sim = opt;
    co.max_evaluations = 120;

    SUBCASE("recovers a perturbed value") {
        const auto guess = truth.with_conductance(3, Segment::F, 2.5 * h);
        const auto r = calibrate_h(guess, sc, targets, co);
        CHECK(r.values[0] == doctest::Approx(h).epsilon(0.01));
        CHECK(r.objective <= r.initial_objective);
        for (std::size_t i = 1; i < r.history.size(); ++i) CHECK(r.history[i] <= r.history[i - 1]);
        CHECK(r.history.front() == r.initial_objective);
        CHECK(r.history.back() == r.objective);
    }
    SUBCASE("collapsed bounds return the bound") {
        co.lower = co.upper = 2.0;
        const auto r = calibrate_h(truth, sc, targets, co);
        CHECK(r.values[0] == doctest::Approx(2.0));
        CHECK(r.evaluations == 1);
    }
    SUBCASE("same seed, same answer") {
        const auto guess = truth.with_conductance(3, Segment::F, 0.3 * h);
        co.seed = 9;
        const auto a = calibrate_h(guess, sc, targets, co);
        const auto b = calibrate_h(guess, sc, targets, co);
        CHECK(a.values == b.values);
        CHECK(a.history == b.history);
    }
    CHECK_THROWS_AS(calibrate_h(truth, sc, std::vector<CalibrationTarget>{}, co), Error);
    co.lower = -1.0;
    CHECK_THROWS_AS(calibrate_h(truth, sc, targets, co), Error);
}
