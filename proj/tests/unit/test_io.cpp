#include "fixtures.hpp"

#include "dhn/io.hpp"

#include <doctest.h>
#include <json.hpp>

#include <filesystem>
#include <limits>
#include <random>
#include <sstream>

#include <unistd.h>

using namespace dhn;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() / ("dhn_io_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

struct Outcome {
    int status;
    std::string out;
    nlohmann::json err;
};

Outcome run_cli(const RunConfig& c) {
    std::ostringstream out, err;
    const int status = run(c, out, err);
    nlohmann::json e;
    if (!err.str().empty()) e = nlohmann::json::parse(err.str());
    return {status, out.str(), e};
}

} // namespace

TEST_CASE("shortest round-trip number text") {
    for (double v : {0.1, 1.0 / 3.0, 1e-300, -2.5e17, 60.0}) CHECK(std::stod(format_double(v)) == v);
    CHECK(format_double(60.0) == "60");
    CHECK(format_double(0.1) == "0.1");
}

TEST_CASE("network JSON round trip") {
    const auto t = test::two_user_network();
    CHECK(network_from_json(network_to_json(t)) == t);
    std::mt19937_64 rng(12);
    for (int i = 0; i < 10; ++i) {
        const auto r = test::random_topology(rng, {8, 3, i % 2 == 0, i % 3 == 0});
        CHECK(network_from_json(network_to_json(r)) == r);
    }
}

TEST_CASE("network JSON accepts friction parameters") {
    const std::string text = R"({
      "fluid": {"density": 1000, "specific_heat": 4000},
      "nodes": [
        {"id": 0, "kind": "plant"},
        {"id": 1, "kind": "user", "segments": {
          "F":  {"length": 10, "diameter": 0.1, "k": 1.5, "lambda": 0.02, "conductance": 1},
          "S1": {"length": 1, "diameter": 0.1, "conductance": 1},
          "S2": {"length": 1, "diameter": 0.1, "conductance": 0},
          "S3": {"length": 1, "diameter": 0.1, "conductance": 1},
          "R":  {"length": 10, "diameter": 0.1, "conductance": 1},
          "B":  {"length": 2, "diameter": 0.1, "loss_coeff": 5, "volume": 0.5, "cross_section": 0.01}}}
      ],
      "edges": [[0, 1]]
    })";
    const auto t = network_from_json(text);
    CHECK(validate(t).empty());
    const auto& f = t.user(1).feed;
    CHECK(f.loss_coeff ==
          doctest::Approx(loss_coeff_from_friction(1.5, 0.02, 10, 0.1, f.cross_section, 1000)).epsilon(1e-14));
    CHECK(t.user(1).bypass->volume == 0.5);
    CHECK(t.user(1).bypass->cross_section == 0.01);
    CHECK(t.user(1).bypass->loss_coeff == 5.0);
}

TEST_CASE("malformed network JSON") {
    auto code = [](const std::string& text) {
        try {
            network_from_json(text);
        } catch (const Error& e) {
            return e.code();
        }
        return std::string("ok");
    };
    CHECK(code("{") == "bad_json");
    CHECK(code("[]") == "bad_json");
    CHECK(code(R"({"nodes": [{"id": 0}]})") == "bad_json");
    CHECK(code(R"({"nodes": [{"id": 0, "kind": "pump"}]})") == "bad_json");
    CHECK(code(R"({"nodes": [{"id": 0, "kind": "plant"}, {"id": 0, "kind": "plant"}]})") == "bad_json");
    CHECK(code(R"({"nodes": [{"id": 1, "kind": "split", "segments": {"F": {}}}]})") == "bad_json");
    CHECK(code(R"({"nodes": [{"id": 0, "kind": "plant"}], "edges": [[0]]})") == "bad_json");
    CHECK(code(R"({"nodes": [{"id": 0, "kind": "plant"}]})") == "ok");
}

TEST_CASE("site JSON round trip") {
    const auto site = load_site(test::data_path("site_8_users.json"));
    CHECK(site_from_json(site_to_json(site)) == site);
    CHECK_THROWS_AS(site_from_json(R"({"plant": [0, 0], "users": []})"), Error);
    CHECK_THROWS_AS(site_from_json(R"({"plant": [0], "users": [[1, 1]]})"), Error);
    const auto s = site_from_json(R"({"plant": [0, 0], "users": [[1, 1]], "parameters": {"h": 0.5}})");
    CHECK(s.params.heat_transfer == 0.5);
    CHECK(s.params.supply_flow == SiteParameters{}.supply_flow);
}

TEST_CASE("scenario CSV") {
    const auto sc = load_scenario(test::data_path("two_user_lab_scenario.csv"), 2);
    CHECK(sc.dt == 60.0);
    CHECK(sc.horizon() == 1050);
    CHECK(sc.setpoint.size() == 2);
    CHECK(sc.user_flow.empty());

    Scenario s;
    s.dt = 2.0;
    s.supply_temperature = {60, 61, 62};
    s.ambient_temperature = {1, 2, 3};
    s.supply_flow = {0.1, 0.1, 0.2};
    s.user_flow = {{0.01, 0.02, 0.03}, {0.04, 0.05, 0.06}};
    s.heat_demand = {{100, 200, 300}, {1, 2, 3}};
    s.measured["Tb_1"] = {20, 20.5, 21};
    const auto back = scenario_from_csv(scenario_to_csv(s), 2);
    CHECK(back.dt == 2.0);
    CHECK(back.supply_temperature == s.supply_temperature);
    CHECK(back.user_flow == s.user_flow);
    CHECK(back.heat_demand == s.heat_demand);
    CHECK(back.measured == s.measured);
    CHECK(scenario_from_csv(scenario_to_csv(s), 2, 0.5).dt == 0.5);

    auto code = [](const std::string& text, std::size_t users) {
        try {
            scenario_from_csv(text, users);
        } catch (const Error& e) {
            return e.code() + "@" + e.location();
        }
        return std::string("ok");
    };
    const std::string head = "t[s],T0[degC],Tamb[degC],m0[kg/s]\n";
    CHECK(code(head + "0,60,1,0.1\n1,60,1,0.1\n", 0) == "ok");
    CHECK(code(head + "0,60,1,0.1\n1,60,1\n", 0) == "bad_scenario@row 3");
    CHECK(code(head + "0,60,1,0.1\n1,60,x,0.1\n", 0).rfind("bad_scenario", 0) == 0);
    CHECK(code(head + "0,60,1,0.1\n1,60,1,0.1\n3,60,1,0.1\n", 0).rfind("bad_scenario", 0) == 0);
    CHECK(code("t[s],T0[degC],Tamb[degC],m0[kg/s],mU_2[kg/s]\n0,60,1,0.1,0.01\n", 2).rfind("bad_scenario", 0) == 0);
    CHECK(code("t[s],T0[degC],Tamb[degC],m0[kg/s],wind\n0,60,1,0.1,3\n", 0) == "bad_scenario@wind");
    CHECK(code("t[s],T0[degC]\n0,60\n", 0).rfind("bad_scenario", 0) == 0);
}

TEST_CASE("matrix and table writers") {
    Eigen::MatrixXd m(2, 2);
    m << 1.5, 0, -2, 1e-20;
    CHECK(matrix_to_csv(m, {"F_1", "S1_1"}, {"F_1[1/s]", "S1_1[1/s]"}) ==
          "state,F_1[1/s],S1_1[1/s]\nF_1,1.5,0\nS1_1,-2,1e-20\n");
    CHECK_THROWS_AS(matrix_to_csv(m, {"a"}, {"b", "c"}), Error);
    CHECK(state_index_csv({StateLabel{3, Segment::F}, StateLabel{1, Segment::S2, true}}) ==
          "index,label,node,segment,building\n0,F_3,3,F,0\n1,Tb_1,1,S2,1\n");
}

TEST_CASE("command runner") {
    TempDir dir;
    RunConfig c;
    c.network = test::data_path("two_user_network.json");
    c.out = dir.path;

    SUBCASE("validate") {
        c.command = "validate";
        const auto r = run_cli(c);
        CHECK(r.status == 0);
        CHECK(r.out == "0 violations\n");
    }
    SUBCASE("invalid network") {
        auto t = test::two_user_network();
        auto nodes = t.nodes();
        std::get<UserNode>(nodes[1]).bypass.reset();
        save_network(dir.path / "bad.json", NetworkTopology(nodes, t.edges()));
        c.command = "validate";
        c.network = dir.path / "bad.json";
        const auto r = run_cli(c);
        CHECK(r.status == 2);
        CHECK(r.out.rfind("1 violations", 0) == 0);
        CHECK(r.err["code"] == "invalid_topology");
        CHECK(r.err["location"] == "node 1");
    }
    SUBCASE("missing input") {
        c.command = "simulate";
        const auto r = run_cli(c);
        CHECK(r.status == 2);
        CHECK(r.err["code"] == "missing_argument");
        CHECK(r.err["location"] == "--scenario");
        c.command = "launch";
        CHECK(run_cli(c).err["code"] == "bad_command");
    }
    SUBCASE("assemble") {
        c.command = "assemble";
        c.buildings = true;
        c.supply_flow = 0.1;
        REQUIRE(run_cli(c).status == 0);
        const std::string a = read_text(dir.path / "A.csv");
        CHECK(a.rfind("state,F_3[1/s],F_1[1/s],S1_1[1/s]", 0) == 0);
        CHECK(read_text(dir.path / "E.csv").rfind("state,Tamb[1/s],Q_1[K/J],Q_2[K/J]\n", 0) == 0);
        CHECK(read_text(dir.path / "B.csv").rfind("state,T0[1/s]\nF_3,", 0) == 0);
        CHECK(read_text(dir.path / "states.csv").find("15,Tb_2,2,S2,1") != std::string::npos);
        CHECK(fs::exists(dir.path / "flows.csv"));
    }
    SUBCASE("simulate closed loop") {
        c.command = "simulate";
        c.scenario = test::data_path("two_user_lab_scenario.csv");
        c.closed_loop = true;
        c.kp = 0.02;
        c.ki = 2e-5;
        c.max_flow = 0.04;
        REQUIRE(run_cli(c).status == 0);
        const auto summary = nlohmann::json::parse(read_text(dir.path / "summary.json"));
        CHECK(summary["steps"] == 1050);
        CHECK(summary["states"] == 16);
        const std::string traj = read_text(dir.path / "trajectory.csv");
        CHECK(traj.rfind("t[s],F_3[degC]", 0) == 0);
        CHECK(traj.find("Tb_2[degC],mU_1[kg/s],mU_2[kg/s]\n") != std::string::npos);
    }
    SUBCASE("calibrate") {
        // measured trace produced by the network itself
        Scenario sc = test::lab_scenario(60.0);
        sc.setpoint.clear();
        for (auto* v : {&sc.supply_temperature, &sc.ambient_temperature, &sc.supply_flow}) v->resize(120);
        sc.user_flow = {std::vector<double>(120, 0.02), std::vector<double>(120, 0.03)};
        const auto res = simulate(test::two_user_network(), sc);
        sc.measured["R_3"] = res.series("R_3");
        write_text(dir.path / "sc.csv", scenario_to_csv(sc));
        c.command = "calibrate";
        c.scenario = dir.path / "sc.csv";
        c.max_evaluations = 40;
        REQUIRE(run_cli(c).status == 0);
        CHECK(read_text(dir.path / "h_table.csv").rfind("node,segment,h[W/K]\n3,R,", 0) == 0);
        const auto report = nlohmann::json::parse(read_text(dir.path / "calibration.json"));
        CHECK(report["objective_K"].get<double>() <= report["initial_objective_K"].get<double>());
        CHECK(validate(load_network(dir.path / "calibrated_network.json")).empty());
        const std::string first = read_text(dir.path / "h_table.csv") + read_text(dir.path / "calibration.json");
        c.out = dir.path / "again";
        REQUIRE(run_cli(c).status == 0);
        CHECK(read_text(c.out / "h_table.csv") + read_text(c.out / "calibration.json") == first);
    }
    SUBCASE("optimize") {
        SiteSpec site;
        site.users = {{100, 0}, {0, 120}, {90, 110}};
        write_text(dir.path / "site.json", site_to_json(site));
        c.command = "optimize";
        c.site = dir.path / "site.json";
        REQUIRE(run_cli(c).status == 0);
        for (const char* f : {"loss_design.json", "length_design.json", "loss_pipes.csv", "length_design.dot"})
            CHECK(fs::exists(dir.path / f));
        const auto s = nlohmann::json::parse(read_text(dir.path / "summary.json"));
        CHECK(s["loss_minimized"]["true_cost_W"].get<double>() <= s["length_minimized"]["true_cost_W"].get<double>());
        const auto d = nlohmann::json::parse(read_text(dir.path / "loss_design.json"));
        CHECK(d["objective"] == "loss");
        CHECK(d["site"]["users"].size() == 3);
        // same inputs, byte-identical outputs
        const std::string first = read_text(dir.path / "loss_design.json");
        REQUIRE(run_cli(c).status == 0);
        CHECK(read_text(dir.path / "loss_design.json") == first);
        c.max_candidates = 2;
        CHECK(run_cli(c).err["code"] == "limit_exceeded");
    }
}
