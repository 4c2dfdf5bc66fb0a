#include "dhn/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

namespace dhn {

using json = nlohmann::ordered_json;

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("io_error", "cannot write " + path.string(), path.string());
    f << text;
    if (!f) throw Error("io_error", "failed writing " + path.string(), path.string());
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("io_error", "cannot read " + path.string(), path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

namespace {

json parse_json(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw Error("bad_json", std::string("cannot parse ") + what + ": " + e.what(), what);
    }
}

double number(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw Error("bad_json", std::string("missing '") + key + "'", where);
    if (!j.at(key).is_number()) throw Error("bad_json", std::string("'") + key + "' must be a number", where);
    return j.at(key).get<double>();
}

double number_or(const json& j, const char* key, double fallback, const std::string& where) {
    return j.contains(key) ? number(j, key, where) : fallback;
}

Point point_from(const json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
        throw Error("bad_json", "position must be [x, y]", where);
    return {j[0].get<double>(), j[1].get<double>()};
}

json point_to(const Point& p) { return json::array({p.x, p.y}); }

PipeParams pipe_from(const json& j, double density, const std::string& where) {
    if (!j.is_object()) throw Error("bad_json", "pipe segment must be an object", where);
    PipeParams p;
    p.length = number(j, "length", where);
    p.diameter = number(j, "diameter", where);
    p.conductance = number_or(j, "conductance", 0.0, where);
    p.cross_section = number_or(j, "cross_section", std::numbers::pi * p.diameter * p.diameter / 4.0, where);
    p.volume = number_or(j, "volume", p.cross_section * p.length, where);
    if (j.contains("loss_coeff")) {
        p.loss_coeff = number(j, "loss_coeff", where);
    } else if (j.contains("k") || j.contains("lambda")) {
        p.loss_coeff = loss_coeff_from_friction(number_or(j, "k", 0.0, where), number_or(j, "lambda", 0.0, where),
                                                p.length, p.diameter, p.cross_section, density);
    }
    return p;
}

json pipe_to(const PipeParams& p) {
    return json{{"length", p.length},           {"diameter", p.diameter},     {"cross_section", p.cross_section},
                {"volume", p.volume},           {"loss_coeff", p.loss_coeff}, {"conductance", p.conductance}};
}

const char* user_segments[] = {"F", "S1", "S2", "S3", "R"};

} // namespace

NetworkTopology network_from_json(const std::string& text) {
    const json root = parse_json(text, "network");
    if (!root.is_object()) throw Error("bad_json", "network must be an object", "network");
    Fluid fluid;
    if (root.contains("fluid")) {
        fluid.density = number_or(root["fluid"], "density", fluid.density, "fluid");
        fluid.specific_heat = number_or(root["fluid"], "specific_heat", fluid.specific_heat, "fluid");
    }
    if (!root.contains("nodes") || !root["nodes"].is_array()) throw Error("bad_json", "missing 'nodes' array", "nodes");
    std::map<NodeId, Node> nodes;
    for (std::size_t i = 0; i < root["nodes"].size(); ++i) {
        const json& jn = root["nodes"][i];
        const std::string where = "nodes[" + std::to_string(i) + "]";
        if (!jn.contains("id") || !jn["id"].is_number_unsigned())
            throw Error("bad_json", "node needs a non-negative integer 'id'", where);
        if (!jn.contains("kind") || !jn["kind"].is_string()) throw Error("bad_json", "node needs a 'kind'", where);
        const NodeId id = jn["id"].get<NodeId>();
        const std::string kind = jn["kind"].get<std::string>();
        std::optional<Point> pos;
        if (jn.contains("position")) pos = point_from(jn["position"], where + ".position");
        const json segs = jn.value("segments", json::object());
        auto seg = [&](const char* name) {
            if (!segs.contains(name)) throw Error("bad_json", std::string("missing segment ") + name, where);
            return pipe_from(segs[name], fluid.density, where + ".segments." + name);
        };
        Node node;
        if (kind == "plant") {
            node = PlantNode{pos};
        } else if (kind == "user") {
            UserNode u;
            u.feed = seg("F");
            u.supply = seg("S1");
            u.exchanger = seg("S2");
            u.discharge = seg("S3");
            u.ret = seg("R");
            if (segs.contains("B")) u.bypass = seg("B");
            if (jn.contains("building")) {
                const json& b = jn["building"];
                const std::string bw = where + ".building";
                u.building = BuildingParams{number(b, "hex_conductance", bw), number(b, "envelope_conductance", bw),
                                            number(b, "thermal_capacity", bw)};
            }
            u.position = pos;
            node = u;
        } else if (kind == "split") {
            SplitNode s;
            s.feed = seg("F");
            s.ret = seg("R");
            s.position = pos;
            node = s;
        } else {
            throw Error("bad_json", "unknown node kind '" + kind + "'", where);
        }
        if (!nodes.emplace(id, node).second) throw Error("bad_json", "duplicate node id " + std::to_string(id), where);
    }
    std::vector<Edge> edges;
    if (root.contains("edges")) {
        for (std::size_t i = 0; i < root["edges"].size(); ++i) {
            const json& e = root["edges"][i];
            if (!e.is_array() || e.size() != 2 || !e[0].is_number_unsigned() || !e[1].is_number_unsigned())
                throw Error("bad_json", "edge must be [parent, child]", "edges[" + std::to_string(i) + "]");
            edges.emplace_back(e[0].get<NodeId>(), e[1].get<NodeId>());
        }
    }
    return NetworkTopology(std::move(nodes), std::move(edges), fluid);
}

std::string network_to_json(const NetworkTopology& topology) {
    json root;
    root["fluid"] = {{"density", topology.fluid().density}, {"specific_heat", topology.fluid().specific_heat}};
    json nodes = json::array();
    for (const auto& [id, node] : topology.nodes()) {
        json jn;
        jn["id"] = id;
        std::visit(
            [&](const auto& n) {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, PlantNode>) {
                    jn["kind"] = "plant";
                    if (n.position) jn["position"] = point_to(*n.position);
                } else if constexpr (std::is_same_v<T, UserNode>) {
                    jn["kind"] = "user";
                    if (n.position) jn["position"] = point_to(*n.position);
                    json segs;
                    for (const char* s : user_segments) segs[s] = pipe_to(n.segment(segment_from_string(s)));
                    if (n.bypass) segs["B"] = pipe_to(*n.bypass);
                    jn["segments"] = segs;
                    if (n.building)
                        jn["building"] = {{"hex_conductance", n.building->hex_conductance},
                                          {"envelope_conductance", n.building->envelope_conductance},
                                          {"thermal_capacity", n.building->thermal_capacity}};
                } else {
                    jn["kind"] = "split";
                    if (n.position) jn["position"] = point_to(*n.position);
                    jn["segments"] = {{"F", pipe_to(n.feed)}, {"R", pipe_to(n.ret)}};
                }
            },
            node);
        nodes.push_back(jn);
    }
    root["nodes"] = nodes;
    json edges = json::array();
    for (const auto& [p, c] : topology.edges()) edges.push_back(json::array({p, c}));
    root["edges"] = edges;
    return root.dump(2) + "\n";
}

NetworkTopology load_network(const std::filesystem::path& path) { return network_from_json(read_text(path)); }

void save_network(const std::filesystem::path& path, const NetworkTopology& topology) {
    write_text(path, network_to_json(topology));
}

SiteSpec site_from_json(const std::string& text) {
    const json root = parse_json(text, "site");
    SiteSpec site;
    if (!root.contains("plant")) throw Error("bad_json", "missing 'plant'", "plant");
    site.plant = point_from(root["plant"], "plant");
    if (!root.contains("users") || !root["users"].is_array()) throw Error("bad_json", "missing 'users'", "users");
    for (std::size_t i = 0; i < root["users"].size(); ++i)
        site.users.push_back(point_from(root["users"][i], "users[" + std::to_string(i) + "]"));
    if (root.contains("parameters")) {
        const json& p = root["parameters"];
        SiteParameters& s = site.params;
        s.supply_flow = number_or(p, "m0", s.supply_flow, "parameters");
        s.density = number_or(p, "density", s.density, "parameters");
        s.specific_heat = number_or(p, "specific_heat", s.specific_heat, "parameters");
        s.supply_temperature = number_or(p, "T0", s.supply_temperature, "parameters");
        s.ambient_temperature = number_or(p, "Tamb", s.ambient_temperature, "parameters");
        s.large_diameter = number_or(p, "D_large", s.large_diameter, "parameters");
        s.small_diameter = number_or(p, "D_small", s.small_diameter, "parameters");
        s.heat_transfer = number_or(p, "h", s.heat_transfer, "parameters");
    }
    site.check();
    return site;
}

std::string site_to_json(const SiteSpec& site) {
    json root;
    root["plant"] = point_to(site.plant);
    json users = json::array();
    for (const auto& u : site.users) users.push_back(point_to(u));
    root["users"] = users;
    const SiteParameters& p = site.params;
    root["parameters"] = {{"m0", p.supply_flow},         {"density", p.density},
                          {"specific_heat", p.specific_heat}, {"T0", p.supply_temperature},
                          {"Tamb", p.ambient_temperature}, {"D_large", p.large_diameter},
                          {"D_small", p.small_diameter},   {"h", p.heat_transfer}};
    return root.dump(2) + "\n";
}

SiteSpec load_site(const std::filesystem::path& path) { return site_from_json(read_text(path)); }

namespace {

std::string trim(std::string s) {
    const auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_number(const std::string& s, const std::string& where) {
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (!s.empty() && *first == '+') ++first;
    auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last) throw Error("bad_scenario", "not a number: '" + s + "'", where);
    return v;
}

// "mU_3[kg/s]" with prefix "mU_" and unit "[kg/s]" -> 3
std::optional<std::size_t> user_column(const std::string& name, const std::string& prefix, const std::string& unit) {
    if (name.rfind(prefix, 0) != 0 || name.size() <= prefix.size() + unit.size()) return std::nullopt;
    if (name.compare(name.size() - unit.size(), unit.size(), unit) != 0) return std::nullopt;
    const std::string digits = name.substr(prefix.size(), name.size() - prefix.size() - unit.size());
    std::size_t v = 0;
    auto res = std::from_chars(digits.data(), digits.data() + digits.size(), v);
    if (res.ec != std::errc() || res.ptr != digits.data() + digits.size()) return std::nullopt;
    return v;
}

} // namespace

Scenario scenario_from_csv(const std::string& text, std::size_t user_count, std::optional<double> dt) {
    std::istringstream in(text);
    std::string line;
    std::vector<std::string> header;
    while (header.empty() && std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!trim(line).empty()) header = split_csv(line);
    }
    if (header.empty()) throw Error("bad_scenario", "scenario has no header");

    std::vector<std::vector<double>> cols(header.size());
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        const auto cells = split_csv(line);
        if (cells.size() != header.size())
            throw Error("bad_scenario", "row has " + std::to_string(cells.size()) + " cells, header has " +
                                            std::to_string(header.size()),
                        "row " + std::to_string(row));
        for (std::size_t c = 0; c < cells.size(); ++c)
            cols[c].push_back(parse_number(cells[c], "row " + std::to_string(row) + ", column " + header[c]));
    }

    Scenario sc;
    std::optional<std::size_t> time_col;
    std::map<std::size_t, std::vector<double>> flows, demands, setpoints;
    for (std::size_t c = 0; c < header.size(); ++c) {
        const std::string& h = header[c];
        if (h == "t[s]") {
            time_col = c;
        } else if (h == "T0[degC]") {
            sc.supply_temperature = cols[c];
        } else if (h == "Tamb[degC]") {
            sc.ambient_temperature = cols[c];
        } else if (h == "m0[kg/s]") {
            sc.supply_flow = cols[c];
        } else if (auto u = user_column(h, "mU_", "[kg/s]")) {
            flows[*u] = cols[c];
        } else if (auto u2 = user_column(h, "Q_", "[W]")) {
            demands[*u2] = cols[c];
        } else if (auto u3 = user_column(h, "Tset_", "[degC]")) {
            setpoints[*u3] = cols[c];
        } else if (h.rfind("meas:", 0) == 0 && h.size() > 11 && h.substr(h.size() - 6) == "[degC]") {
            const std::string label = h.substr(5, h.size() - 11);
            sc.measured[parse_state_label(label).str()] = cols[c];
        } else {
            throw Error("bad_scenario", "unknown column '" + h + "'", h);
        }
    }
    if (sc.supply_temperature.empty() || sc.ambient_temperature.empty() || sc.supply_flow.empty())
        throw Error("bad_scenario", "columns T0[degC], Tamb[degC] and m0[kg/s] are required");

    auto per_user = [&](const std::map<std::size_t, std::vector<double>>& m, const char* name) {
        std::vector<std::vector<double>> out;
        if (m.empty()) return out;
        for (std::size_t u = 1; u <= user_count; ++u) {
            auto it = m.find(u);
            if (it == m.end())
                throw Error("bad_scenario", std::string("missing column ") + name + std::to_string(u), name);
            out.push_back(it->second);
        }
        if (m.size() != user_count || m.rbegin()->first != user_count)
            throw Error("bad_scenario", std::string("column ") + name + " refers to an unknown user", name);
        return out;
    };
    sc.user_flow = per_user(flows, "mU_");
    sc.heat_demand = per_user(demands, "Q_");
    sc.setpoint = per_user(setpoints, "Tset_");

    if (dt) {
        sc.dt = *dt;
    } else if (time_col && cols[*time_col].size() >= 2) {
        const auto& t = cols[*time_col];
        sc.dt = t[1] - t[0];
        for (std::size_t k = 2; k < t.size(); ++k)
            if (std::abs((t[k] - t[k - 1]) - sc.dt) > 1e-9 * std::max(1.0, std::abs(sc.dt)))
                throw Error("bad_scenario", "time column is not uniformly spaced", "row " + std::to_string(k + 2));
    }
    sc.check(user_count);
    return sc;
}

std::string scenario_to_csv(const Scenario& sc) {
    std::vector<std::string> header{"t[s]", "T0[degC]", "Tamb[degC]", "m0[kg/s]"};
    std::vector<const std::vector<double>*> cols{nullptr, &sc.supply_temperature, &sc.ambient_temperature,
                                                 &sc.supply_flow};
    auto add = [&](const std::vector<std::vector<double>>& s, const char* prefix, const char* unit) {
        for (std::size_t u = 0; u < s.size(); ++u) {
            header.push_back(prefix + std::to_string(u + 1) + unit);
            cols.push_back(&s[u]);
        }
    };
    add(sc.user_flow, "mU_", "[kg/s]");
    add(sc.heat_demand, "Q_", "[W]");
    add(sc.setpoint, "Tset_", "[degC]");
    for (const auto& [label, v] : sc.measured) {
        header.push_back("meas:" + label + "[degC]");
        cols.push_back(&v);
    }
    std::string out;
    for (std::size_t c = 0; c < header.size(); ++c) out += (c ? "," : "") + header[c];
    out += "\n";
    for (std::size_t k = 0; k < sc.horizon(); ++k) {
        for (std::size_t c = 0; c < cols.size(); ++c) {
            if (c) out += ",";
            out += format_double(cols[c] ? (*cols[c])[k] : static_cast<double>(k) * sc.dt);
        }
        out += "\n";
    }
    return out;
}

Scenario load_scenario(const std::filesystem::path& path, std::size_t user_count, std::optional<double> dt) {
    return scenario_from_csv(read_text(path), user_count, dt);
}

std::string matrix_to_csv(const Eigen::MatrixXd& m, const std::vector<std::string>& row_labels,
                          const std::vector<std::string>& col_headers) {
    if (row_labels.size() != static_cast<std::size_t>(m.rows()) ||
        col_headers.size() != static_cast<std::size_t>(m.cols()))
        throw Error("bad_input", "label count does not match the matrix shape");
    std::string out = "state";
    for (const auto& h : col_headers) out += "," + h;
    out += "\n";
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        out += row_labels[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < m.cols(); ++j) out += "," + format_double(m(i, j));
        out += "\n";
    }
    return out;
}

std::string state_index_csv(const std::vector<StateLabel>& states) {
    std::string out = "index,label,node,segment,building\n";
    for (std::size_t i = 0; i < states.size(); ++i)
        out += std::to_string(i) + "," + states[i].str() + "," + std::to_string(states[i].node) + "," +
               to_string(states[i].segment) + "," + (states[i].building ? "1" : "0") + "\n";
    return out;
}

std::string trajectory_to_csv(const SimResult& r) {
    std::string out = "t[s]";
    for (const auto& s : r.states) out += "," + s.str() + "[degC]";
    for (std::size_t u = 0; u < r.user_flow.size(); ++u) out += ",mU_" + std::to_string(u + 1) + "[kg/s]";
    out += "\n";
    for (Eigen::Index k = 0; k < r.trajectory.rows(); ++k) {
        const auto ks = static_cast<std::size_t>(k);
        out += format_double(r.time[ks]);
        for (Eigen::Index j = 0; j < r.trajectory.cols(); ++j) out += "," + format_double(r.trajectory(k, j));
        for (const auto& f : r.user_flow) out += "," + format_double(f[ks]);
        out += "\n";
    }
    return out;
}

std::string h_table_csv(const CalibrationResult& r) {
    std::string out = "node,segment,h[W/K]\n";
    for (std::size_t i = 0; i < r.targets.size(); ++i)
        out += std::to_string(r.targets[i].node) + "," + to_string(r.targets[i].segment) + "," +
               format_double(r.values[i]) + "\n";
    return out;
}

namespace {

json prize_list(const ProblemGraph& g, std::size_t id) {
    json out = json::array();
    for (std::size_t u = 1; u <= g.user_count(); ++u)
        if ((g.nodes[id].prizes >> (u - 1)) & 1U) out.push_back(u);
    return out;
}

// Every problem node a design touches, tree nodes and candidate internals alike.
std::vector<std::size_t> design_nodes(const DesignResult& r) {
    std::vector<std::size_t> ids{0};
    for (const auto& p : r.evaluation.pipes) {
        ids.push_back(p.from);
        ids.push_back(p.to);
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

} // namespace

std::string design_to_json(const ProblemGraph& graph, const DesignResult& r) {
    json root;
    root["objective"] = r.objective == Objective::Loss ? "loss" : "length";
    root["true_cost_W"] = r.true_cost();
    root["surface_loss_W"] = r.evaluation.surface_loss;
    root["total_length_m"] = r.total_length();
    root["delta_t_max_K"] = r.delta_t_max();
    root["delta_t_used_K"] = r.delta_t_used;
    root["iterations"] = r.iterations;
    root["trees_evaluated"] = r.trees_evaluated;
    root["partial_trees"] = r.partial_trees;
    root["candidate_count"] = r.candidate_count;
    json edges = json::array();
    for (const auto& [p, c] : r.edges) edges.push_back(json::array({p, c}));
    root["edges"] = edges;
    json nodes = json::array();
    for (std::size_t id : design_nodes(r)) {
        const CandidateNode& n = graph.nodes[id];
        nodes.push_back({{"id", id},
                         {"kind", to_string(n.kind)},
                         {"position", point_to(n.position)},
                         {"children", n.children},
                         {"prizes", prize_list(graph, id)}});
    }
    root["nodes"] = nodes;
    json pipes = json::array();
    for (const auto& p : r.evaluation.pipes)
        pipes.push_back({{"from", p.from},
                         {"to", p.to},
                         {"internal", p.internal},
                         {"length_m", p.length},
                         {"diameter_m", p.diameter},
                         {"flow_kg_s", p.flow},
                         {"T_in_degC", p.inlet},
                         {"T_out_degC", p.outlet},
                         {"loss_W", p.loss}});
    root["pipes"] = pipes;
    root["site"] = json::parse(site_to_json(graph.site));
    return root.dump(2) + "\n";
}

std::string pipes_to_csv(const DesignResult& r) {
    std::string out = "from,to,internal,L[m],D[m],mdot[kg/s],T_in[degC],T_out[degC],loss[W]\n";
    for (const auto& p : r.evaluation.pipes)
        out += std::to_string(p.from) + "," + std::to_string(p.to) + "," + (p.internal ? "1" : "0") + "," +
               format_double(p.length) + "," + format_double(p.diameter) + "," + format_double(p.flow) + "," +
               format_double(p.inlet) + "," + format_double(p.outlet) + "," + format_double(p.loss) + "\n";
    return out;
}

std::string design_to_dot(const ProblemGraph& graph, const DesignResult& r) {
    std::string out = "digraph design {\n  node [shape=circle];\n";
    for (std::size_t id : design_nodes(r)) {
        const CandidateNode& n = graph.nodes[id];
        const std::string label = id == 0 ? "plant" : (n.kind == CandidateKind::User ? "U" : "S") + std::to_string(id);
        const char* shape = id == 0 ? "box" : (n.kind == CandidateKind::User ? "circle" : "point");
        out += "  n" + std::to_string(id) + " [label=\"" + label + "\", shape=" + shape + ", pos=\"" +
               format_double(n.position.x) + "," + format_double(n.position.y) + "!\"];\n";
    }
    for (const auto& p : r.evaluation.pipes)
        out += "  n" + std::to_string(p.from) + " -> n" + std::to_string(p.to) + " [label=\"" +
               format_double(std::round(p.length * 10.0) / 10.0) + " m\"" + (p.internal ? ", style=dashed" : "") +
               "];\n";
    out += "}\n";
    return out;
}

} // namespace dhn
