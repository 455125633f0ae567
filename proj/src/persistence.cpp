#include "safeinfer/persistence.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include "safeinfer/errors.hpp"

namespace safeinfer {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void check_version(const json& j, const std::string& doc) {
    if (!j.is_object()) {
        throw SchemaError(doc, "expected a JSON object");
    }
    if (!j.contains("format_version")) {
        throw SchemaError(doc + ".format_version", "missing");
    }
    const auto& v = j.at("format_version");
    if (!v.is_number_integer()) {
        throw SchemaError(doc + ".format_version", "expected an integer");
    }
    if (v.get<int>() > kFormatVersion) {
        throw SchemaError(doc + ".format_version", "version " + std::to_string(v.get<int>()) +
                                                       " is newer than supported version " +
                                                       std::to_string(kFormatVersion));
    }
}

const json& require(const json& j, const std::string& key, const std::string& path) {
    if (!j.is_object() || !j.contains(key)) {
        throw SchemaError(path + "." + key, "missing");
    }
    return j.at(key);
}

double num(const json& j, const std::string& key, const std::string& path) {
    const auto& v = require(j, key, path);
    if (!v.is_number()) {
        throw SchemaError(path + "." + key, "expected a number");
    }
    return v.get<double>();
}

double num_or(const json& j, const std::string& key, const std::string& path, double fallback) {
    return j.contains(key) ? num(j, key, path) : fallback;
}

std::uint64_t uint_or(const json& j, const std::string& key, const std::string& path, std::uint64_t fallback) {
    if (!j.contains(key)) {
        return fallback;
    }
    const auto& v = j.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
        throw SchemaError(path + "." + key, "expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
}

bool bool_or(const json& j, const std::string& key, const std::string& path, bool fallback) {
    if (!j.contains(key)) {
        return fallback;
    }
    if (!j.at(key).is_boolean()) {
        throw SchemaError(path + "." + key, "expected a boolean");
    }
    return j.at(key).get<bool>();
}

std::string str_or(const json& j, const std::string& key, const std::string& path, const std::string& fallback) {
    if (!j.contains(key)) {
        return fallback;
    }
    if (!j.at(key).is_string()) {
        throw SchemaError(path + "." + key, "expected a string");
    }
    return j.at(key).get<std::string>();
}

std::vector<double> num_array(const json& v, const std::string& path) {
    if (!v.is_array()) {
        throw SchemaError(path, "expected an array");
    }
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number()) {
            throw SchemaError(path + "[" + std::to_string(i) + "]", "expected a number");
        }
        out.push_back(v[i].get<double>());
    }
    return out;
}

Eigen::Vector2d vec2(const json& v, const std::string& path) {
    const auto a = num_array(v, path);
    if (a.size() != 2) {
        throw SchemaError(path, "expected 2 entries");
    }
    return {a[0], a[1]};
}

Eigen::Vector2d vec2_or(const json& j, const std::string& key, const std::string& path,
                        const Eigen::Vector2d& fallback) {
    return j.contains(key) ? vec2(j.at(key), path + "." + key) : fallback;
}

json vec_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        a.push_back(v(i));
    }
    return a;
}

Eigen::MatrixXd matrix_from(const json& v, const std::string& path, Eigen::Index rows, Eigen::Index cols) {
    if (!v.is_array()) {
        throw SchemaError(path, "expected an array of rows");
    }
    if (static_cast<Eigen::Index>(v.size()) != rows) {
        throw SchemaError(path, "expected " + std::to_string(rows) + " rows, found " + std::to_string(v.size()));
    }
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const std::string rp = path + "[" + std::to_string(r) + "]";
        const auto row = num_array(v[static_cast<std::size_t>(r)], rp);
        if (static_cast<Eigen::Index>(row.size()) != cols) {
            throw SchemaError(rp, "expected " + std::to_string(cols) + " columns, found " + std::to_string(row.size()));
        }
        for (Eigen::Index c = 0; c < cols; ++c) {
            m(r, c) = row[static_cast<std::size_t>(c)];
        }
    }
    return m;
}

json matrix_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        rows.push_back(vec_json(m.row(r).transpose()));
    }
    return rows;
}

json box_json(const StartBox& b) { return {{"min", vec_json(b.min)}, {"max", vec_json(b.max)}}; }

StartBox box_from(const json& j, const std::string& path) {
    StartBox b;
    b.min = vec2(require(j, "min", path), path + ".min");
    b.max = vec2(require(j, "max", path), path + ".max");
    return b;
}

json reference_json(const Reference& r) {
    json pts = json::array();
    for (const auto& p : r.points) {
        pts.push_back(vec_json(p));
    }
    return {{"kind", to_string(r.kind)}, {"center", vec_json(r.center)}, {"radius", r.radius},
            {"rate", r.rate},            {"phase", r.phase},             {"speed", r.speed},
            {"heading", r.heading},      {"amplitude", r.amplitude},     {"frequency", r.frequency},
            {"growth", r.growth},        {"points", pts}};
}

template <class F>
auto wrap_input_errors(const std::string& path, F&& f) {
    try {
        return f();
    } catch (const InputError& e) {
        throw SchemaError(path, e.what());
    }
}

Reference reference_from(const json& j, const std::string& path) {
    Reference r;
    r.kind = wrap_input_errors(path + ".kind", [&] {
        return reference_kind_from_string(str_or(j, "kind", path, to_string(r.kind)));
    });
    r.center = vec2_or(j, "center", path, r.center);
    r.radius = num_or(j, "radius", path, r.radius);
    r.rate = num_or(j, "rate", path, r.rate);
    r.phase = num_or(j, "phase", path, r.phase);
    r.speed = num_or(j, "speed", path, r.speed);
    r.heading = num_or(j, "heading", path, r.heading);
    r.amplitude = num_or(j, "amplitude", path, r.amplitude);
    r.frequency = num_or(j, "frequency", path, r.frequency);
    r.growth = num_or(j, "growth", path, r.growth);
    if (j.contains("points")) {
        const auto& pts = j.at("points");
        if (!pts.is_array()) {
            throw SchemaError(path + ".points", "expected an array");
        }
        for (std::size_t i = 0; i < pts.size(); ++i) {
            r.points.push_back(vec2(pts[i], path + ".points[" + std::to_string(i) + "]"));
        }
    }
    return r;
}

// Line number for a byte offset, for parse diagnostics.
std::size_t line_of(const std::string& text, std::size_t byte) {
    const auto end = text.begin() + static_cast<std::ptrdiff_t>(std::min(byte, text.size()));
    return 1 + static_cast<std::size_t>(std::count(text.begin(), end, '\n'));
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s, std::size_t line, const std::string& column) {
    if (s.empty()) {
        throw ParseError("line " + std::to_string(line) + ", column " + column, "empty value");
    }
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size()) {
        throw ParseError("line " + std::to_string(line) + ", column " + column, "not a number: '" + s + "'");
    }
    return v;
}

struct CsvDoc {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> row_lines;
};

CsvDoc parse_csv(const std::string& text, const std::string& magic) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    CsvDoc doc;
    bool seen_magic = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        if (line[0] == '#') {
            const std::string tag = "# " + magic + " format_version=";
            if (line.rfind(tag, 0) == 0) {
                const int version = std::atoi(line.c_str() + tag.size());
                if (version > kFormatVersion) {
                    throw SchemaError("format_version", "version " + std::to_string(version) +
                                                            " is newer than supported version " +
                                                            std::to_string(kFormatVersion));
                }
                seen_magic = true;
            }
            continue;
        }
        if (!seen_magic) {
            throw ParseError("line " + std::to_string(lineno), "missing '# " + magic + " format_version=N' line");
        }
        if (doc.header.empty()) {
            doc.header = split(line, ',');
            continue;
        }
        auto cells = split(line, ',');
        if (cells.size() != doc.header.size()) {
            throw ParseError("line " + std::to_string(lineno),
                             "expected " + std::to_string(doc.header.size()) + " fields, found " +
                                 std::to_string(cells.size()));
        }
        doc.rows.push_back(std::move(cells));
        doc.row_lines.push_back(lineno);
    }
    if (doc.header.empty()) {
        throw ParseError("line " + std::to_string(lineno), "missing header");
    }
    return doc;
}

std::string join_active(const std::vector<int>& active) {
    std::string s;
    for (std::size_t i = 0; i < active.size(); ++i) {
        if (i) {
            s += ';';
        }
        s += std::to_string(active[i]);
    }
    return s;
}

constexpr std::size_t kTraceFixedColumns = 11;
constexpr std::size_t kTraceAgentColumns = 17;

}  // namespace

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------- network

json to_json(const RbfNetwork& net) {
    return {{"format_version", kFormatVersion}, {"kind", "rbf_network"},
            {"input_dim", net.input_dim()},     {"output_dim", net.output_dim()},
            {"centers", matrix_json(net.centers())}, {"widths", vec_json(net.widths())},
            {"weights", matrix_json(net.weights())}};
}

RbfNetwork network_from_json(const json& j) {
    check_version(j, "network");
    const std::string p = "network";
    const auto n = static_cast<Eigen::Index>(uint_or(j, "input_dim", p, 0));
    const auto out = static_cast<Eigen::Index>(uint_or(j, "output_dim", p, 0));
    if (!j.contains("input_dim")) {
        throw SchemaError(p + ".input_dim", "missing");
    }
    if (!j.contains("output_dim")) {
        throw SchemaError(p + ".output_dim", "missing");
    }
    const auto widths = num_array(require(j, "widths", p), p + ".widths");
    const auto m = static_cast<Eigen::Index>(widths.size());
    const Eigen::MatrixXd centers = matrix_from(require(j, "centers", p), p + ".centers", n, m);
    const Eigen::MatrixXd weights = matrix_from(require(j, "weights", p), p + ".weights", m + 1, out);
    Eigen::VectorXd w(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        w(i) = widths[static_cast<std::size_t>(i)];
        if (!(w(i) > 0.0)) {
            throw SchemaError(p + ".widths[" + std::to_string(i) + "]", "must be positive");
        }
    }
    return RbfNetwork(centers, w, weights);
}

// ---------------------------------------------------------------- config

json to_json(const EpisodeConfig& cfg) {
    json agents = json::array();
    for (const auto& a : cfg.agents) {
        agents.push_back({{"initial", vec_json(a.initial)},
                          {"policy",
                           {{"kind", to_string(a.policy.kind)},
                            {"speed_cap", a.policy.speed_cap},
                            {"gain", a.policy.gain},
                            {"repulsion", a.policy.repulsion},
                            {"other", a.policy.other},
                            {"waypoint", vec_json(a.policy.waypoint)},
                            {"drift", vec_json(a.policy.drift)}}},
                          {"r_max", a.r_max},
                          {"c_F", a.c_F},
                          {"start_box", box_json(a.start_box)}});
    }
    json refs = json::array();
    for (const auto& r : cfg.collection.references) {
        refs.push_back(reference_json(r));
    }
    const auto& b = cfg.cbf.u_bounds;
    return {{"format_version", kFormatVersion},
            {"kind", "episode_config"},
            {"dt", cfg.dt},
            {"horizon", cfg.horizon},
            {"seed", cfg.seed},
            {"reference", reference_json(cfg.reference)},
            {"tracker", {{"k_v", cfg.tracker.k_v}, {"k_omega", cfg.tracker.k_omega}}},
            {"ego",
             {{"initial", {cfg.ego_initial.px, cfg.ego_initial.py, cfg.ego_initial.theta}},
              {"start_box", box_json(cfg.ego_start_box)},
              {"theta_spread", cfg.ego_start_theta_spread}}},
            {"agents", agents},
            {"network",
             {{"neurons", cfg.network.neurons},
              {"width", cfg.network.width},
              {"ridge", cfg.network.ridge},
              {"seed", cfg.network.seed}}},
            {"learning", {{"gamma1", cfg.learning.gamma1}, {"gamma2", cfg.learning.gamma2}}},
            {"conformal",
             {{"window", cfg.conformal.window},
              {"alpha", cfg.conformal.alpha},
              {"alpha0", cfg.conformal.alpha0},
              {"gamma", cfg.conformal.gamma}}},
            {"cbf",
             {{"d_safe", cfg.cbf.d_safe},
              {"lookahead", cfg.cbf.lookahead},
              {"kappa", cfg.cbf.kappa},
              {"c_f", cfg.cbf.c_f},
              {"c_g", cfg.cbf.c_g},
              {"c_beta", cfg.cbf.c_beta},
              {"u_bounds", {{"v_min", b.v_min}, {"v_max", b.v_max}, {"omega_max", b.omega_max}}}}},
            {"lipschitz",
             {{"automatic", cfg.lipschitz.automatic},
              {"max_separation", cfg.lipschitz.max_separation},
              {"samples", cfg.lipschitz.samples},
              {"seed", cfg.lipschitz.seed}}},
            {"collision_radius", cfg.collision_radius},
            {"inference", to_string(cfg.inference)},
            {"collection", {{"horizon", cfg.collection.horizon}, {"references", refs}}}};
}

EpisodeConfig config_from_json(const json& j) {
    check_version(j, "config");
    EpisodeConfig cfg;
    const std::string p = "config";
    cfg.dt = num(j, "dt", p);
    cfg.horizon = uint_or(j, "horizon", p, cfg.horizon);
    cfg.seed = uint_or(j, "seed", p, cfg.seed);
    if (j.contains("reference")) {
        cfg.reference = reference_from(j.at("reference"), p + ".reference");
    }
    if (j.contains("tracker")) {
        const auto& t = j.at("tracker");
        cfg.tracker.k_v = num_or(t, "k_v", p + ".tracker", cfg.tracker.k_v);
        cfg.tracker.k_omega = num_or(t, "k_omega", p + ".tracker", cfg.tracker.k_omega);
    }
    if (j.contains("ego")) {
        const auto& e = j.at("ego");
        const std::string ep = p + ".ego";
        if (e.contains("initial")) {
            const auto v = num_array(e.at("initial"), ep + ".initial");
            if (v.size() != 3) {
                throw SchemaError(ep + ".initial", "expected [px, py, theta]");
            }
            cfg.ego_initial = {v[0], v[1], v[2]};
        }
        if (e.contains("start_box")) {
            cfg.ego_start_box = box_from(e.at("start_box"), ep + ".start_box");
        }
        cfg.ego_start_theta_spread = num_or(e, "theta_spread", ep, cfg.ego_start_theta_spread);
    }
    if (j.contains("agents")) {
        const auto& arr = j.at("agents");
        if (!arr.is_array()) {
            throw SchemaError(p + ".agents", "expected an array");
        }
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string ap = p + ".agents[" + std::to_string(i) + "]";
            const auto& aj = arr[i];
            AgentConfig a;
            a.initial = vec2(require(aj, "initial", ap), ap + ".initial");
            if (aj.contains("policy")) {
                const auto& pj = aj.at("policy");
                const std::string pp = ap + ".policy";
                a.policy.kind = wrap_input_errors(pp + ".kind", [&] {
                    return policy_kind_from_string(str_or(pj, "kind", pp, to_string(a.policy.kind)));
                });
                a.policy.speed_cap = num_or(pj, "speed_cap", pp, a.policy.speed_cap);
                a.policy.gain = num_or(pj, "gain", pp, a.policy.gain);
                a.policy.repulsion = num_or(pj, "repulsion", pp, a.policy.repulsion);
                a.policy.other = uint_or(pj, "other", pp, a.policy.other);
                a.policy.waypoint = vec2_or(pj, "waypoint", pp, a.policy.waypoint);
                a.policy.drift = vec2_or(pj, "drift", pp, a.policy.drift);
            }
            a.r_max = num_or(aj, "r_max", ap, a.policy.speed_cap);
            a.c_F = num_or(aj, "c_F", ap, a.c_F);
            a.start_box = aj.contains("start_box") ? box_from(aj.at("start_box"), ap + ".start_box")
                                                   : StartBox{a.initial, a.initial};
            cfg.agents.push_back(a);
        }
    }
    if (j.contains("network")) {
        const auto& n = j.at("network");
        const std::string np = p + ".network";
        cfg.network.neurons = static_cast<Eigen::Index>(uint_or(n, "neurons", np, cfg.network.neurons));
        cfg.network.width = num_or(n, "width", np, cfg.network.width);
        cfg.network.ridge = num_or(n, "ridge", np, cfg.network.ridge);
        cfg.network.seed = uint_or(n, "seed", np, cfg.network.seed);
    }
    if (j.contains("learning")) {
        const auto& l = j.at("learning");
        cfg.learning.gamma1 = num_or(l, "gamma1", p + ".learning", cfg.learning.gamma1);
        cfg.learning.gamma2 = num_or(l, "gamma2", p + ".learning", cfg.learning.gamma2);
    }
    if (j.contains("conformal")) {
        const auto& c = j.at("conformal");
        const std::string cp = p + ".conformal";
        cfg.conformal.window = uint_or(c, "window", cp, cfg.conformal.window);
        cfg.conformal.alpha = num_or(c, "alpha", cp, cfg.conformal.alpha);
        cfg.conformal.alpha0 = num_or(c, "alpha0", cp, cfg.conformal.alpha0);
        cfg.conformal.gamma = num_or(c, "gamma", cp, cfg.conformal.gamma);
    }
    if (j.contains("cbf")) {
        const auto& c = j.at("cbf");
        const std::string cp = p + ".cbf";
        cfg.cbf.d_safe = num_or(c, "d_safe", cp, cfg.cbf.d_safe);
        cfg.cbf.lookahead = num_or(c, "lookahead", cp, cfg.cbf.lookahead);
        cfg.cbf.kappa = num_or(c, "kappa", cp, cfg.cbf.kappa);
        cfg.cbf.c_f = num_or(c, "c_f", cp, cfg.cbf.c_f);
        cfg.cbf.c_g = num_or(c, "c_g", cp, cfg.cbf.c_g);
        cfg.cbf.c_beta = num_or(c, "c_beta", cp, cfg.cbf.c_beta);
        if (c.contains("u_bounds")) {
            const auto& b = c.at("u_bounds");
            const std::string bp = cp + ".u_bounds";
            cfg.cbf.u_bounds.v_min = num_or(b, "v_min", bp, cfg.cbf.u_bounds.v_min);
            cfg.cbf.u_bounds.v_max = num_or(b, "v_max", bp, cfg.cbf.u_bounds.v_max);
            cfg.cbf.u_bounds.omega_max = num_or(b, "omega_max", bp, cfg.cbf.u_bounds.omega_max);
        }
    }
    if (j.contains("lipschitz")) {
        const auto& l = j.at("lipschitz");
        const std::string lp = p + ".lipschitz";
        cfg.lipschitz.automatic = bool_or(l, "automatic", lp, cfg.lipschitz.automatic);
        cfg.lipschitz.max_separation = num_or(l, "max_separation", lp, cfg.lipschitz.max_separation);
        cfg.lipschitz.samples = static_cast<int>(uint_or(l, "samples", lp, static_cast<std::uint64_t>(cfg.lipschitz.samples)));
        cfg.lipschitz.seed = uint_or(l, "seed", lp, cfg.lipschitz.seed);
    }
    cfg.collision_radius = num_or(j, "collision_radius", p, cfg.collision_radius);
    cfg.inference = wrap_input_errors(p + ".inference", [&] {
        return inference_mode_from_string(str_or(j, "inference", p, to_string(cfg.inference)));
    });
    if (j.contains("collection")) {
        const auto& c = j.at("collection");
        const std::string cp = p + ".collection";
        cfg.collection.horizon = uint_or(c, "horizon", cp, cfg.collection.horizon);
        if (c.contains("references")) {
            const auto& refs = c.at("references");
            if (!refs.is_array()) {
                throw SchemaError(cp + ".references", "expected an array");
            }
            for (std::size_t i = 0; i < refs.size(); ++i) {
                cfg.collection.references.push_back(
                    reference_from(refs[i], cp + ".references[" + std::to_string(i) + "]"));
            }
        }
    }
    wrap_input_errors(p, [&] {
        cfg.validate();
        return 0;
    });
    return cfg;
}

// ---------------------------------------------------------------- ACP / summary

json to_json(const AcpState& s) {
    return {{"format_version", kFormatVersion}, {"kind", "acp_state"},  {"alpha_t", s.alpha_t},
            {"alpha_target", s.alpha_target},   {"gamma", s.gamma},     {"r_max", s.r_max},
            {"err_history", s.err_history}};
}

AcpState acp_from_json(const json& j) {
    check_version(j, "acp");
    AcpState s;
    s.alpha_t = num(j, "alpha_t", "acp");
    s.alpha_target = num(j, "alpha_target", "acp");
    s.gamma = num(j, "gamma", "acp");
    s.r_max = num(j, "r_max", "acp");
    const auto& h = require(j, "err_history", "acp");
    if (!h.is_array()) {
        throw SchemaError("acp.err_history", "expected an array");
    }
    for (std::size_t i = 0; i < h.size(); ++i) {
        if (!h[i].is_number_integer() || (h[i].get<int>() != 0 && h[i].get<int>() != 1)) {
            throw SchemaError("acp.err_history[" + std::to_string(i) + "]", "expected 0 or 1");
        }
        s.err_history.push_back(h[i].get<int>());
    }
    wrap_input_errors("acp", [&] {
        s.validate();
        return 0;
    });
    return s;
}

json to_json(const EpisodeSummary& s) {
    json agents = json::array();
    for (const auto& a : s.agents) {
        agents.push_back({{"min_distance", a.min_distance},
                          {"coverage", a.coverage},
                          {"mean_est_err", a.mean_est_err},
                          {"collision_steps", a.collision_steps}});
    }
    json min_d = std::isfinite(s.min_distance) ? json(s.min_distance) : json(nullptr);
    return {{"format_version", kFormatVersion},
            {"kind", "episode_summary"},
            {"steps", s.steps},
            {"infeasible_steps", s.infeasible_steps},
            {"collision", s.collision},
            {"min_distance", min_d},
            {"agents", agents}};
}

EpisodeSummary summary_from_json(const json& j) {
    check_version(j, "summary");
    EpisodeSummary s;
    const std::string p = "summary";
    s.steps = uint_or(j, "steps", p, 0);
    s.infeasible_steps = uint_or(j, "infeasible_steps", p, 0);
    s.collision = bool_or(j, "collision", p, false);
    const auto& md = require(j, "min_distance", p);
    s.min_distance = md.is_null() ? std::numeric_limits<double>::infinity() : num(j, "min_distance", p);
    const auto& arr = require(j, "agents", p);
    if (!arr.is_array()) {
        throw SchemaError(p + ".agents", "expected an array");
    }
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string ap = p + ".agents[" + std::to_string(i) + "]";
        AgentSummary a;
        a.min_distance = num(arr[i], "min_distance", ap);
        a.coverage = num(arr[i], "coverage", ap);
        a.mean_est_err = num(arr[i], "mean_est_err", ap);
        a.collision_steps = uint_or(arr[i], "collision_steps", ap, 0);
        s.agents.push_back(a);
    }
    return s;
}

// ---------------------------------------------------------------- files

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << text;
}

json read_json_file(const fs::path& path) {
    const std::string text = read_text_file(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ":" + std::to_string(line_of(text, e.byte)), e.what());
    }
}

void write_json_file(const fs::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

void save_network(const fs::path& path, const RbfNetwork& net) { write_json_file(path, to_json(net)); }
RbfNetwork load_network(const fs::path& path) { return network_from_json(read_json_file(path)); }
void save_config(const fs::path& path, const EpisodeConfig& cfg) { write_json_file(path, to_json(cfg)); }
EpisodeConfig load_config(const fs::path& path) { return config_from_json(read_json_file(path)); }
void save_acp(const fs::path& path, const AcpState& state) { write_json_file(path, to_json(state)); }
AcpState load_acp(const fs::path& path) { return acp_from_json(read_json_file(path)); }

// ---------------------------------------------------------------- dataset CSV

std::string dataset_to_csv(std::span<const DatasetRow> rows) {
    std::string out = "# safeinfer-dataset format_version=" + std::to_string(kFormatVersion) + "\n";
    const Eigen::Index n = rows.empty() ? 0 : rows.front().state.size();
    const std::size_t agents = rows.empty() ? 0 : rows.front().derivatives.size();
    out += "t";
    for (Eigen::Index i = 0; i < n; ++i) {
        out += ",x" + std::to_string(i);
    }
    for (std::size_t a = 0; a < agents; ++a) {
        out += ",a" + std::to_string(a + 1) + "_dx,a" + std::to_string(a + 1) + "_dy";
    }
    out += '\n';
    for (const auto& r : rows) {
        out += format_double(r.t);
        for (Eigen::Index i = 0; i < r.state.size(); ++i) {
            out += ',' + format_double(r.state(i));
        }
        for (const auto& d : r.derivatives) {
            out += ',' + format_double(d(0)) + ',' + format_double(d(1));
        }
        out += '\n';
    }
    return out;
}

std::vector<DatasetRow> dataset_from_csv(const std::string& text) {
    const CsvDoc doc = parse_csv(text, "safeinfer-dataset");
    if (doc.header.front() != "t") {
        throw SchemaError("t", "first dataset column must be 't'");
    }
    std::size_t n = 0;
    while (n + 1 < doc.header.size() && doc.header[n + 1] == "x" + std::to_string(n)) {
        ++n;
    }
    const std::size_t rest = doc.header.size() - 1 - n;
    if (rest % 2 != 0) {
        throw SchemaError("derivatives", "derivative columns must come in (dx, dy) pairs");
    }
    const std::size_t agents = rest / 2;
    for (std::size_t a = 0; a < agents; ++a) {
        const std::string want = "a" + std::to_string(a + 1) + "_dx";
        if (doc.header[1 + n + 2 * a] != want) {
            throw SchemaError(doc.header[1 + n + 2 * a], "expected column '" + want + "'");
        }
    }
    std::vector<DatasetRow> rows;
    rows.reserve(doc.rows.size());
    for (std::size_t k = 0; k < doc.rows.size(); ++k) {
        const auto& cells = doc.rows[k];
        const std::size_t line = doc.row_lines[k];
        DatasetRow r;
        r.t = parse_double(cells[0], line, "t");
        r.state.resize(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) {
            r.state(static_cast<Eigen::Index>(i)) = parse_double(cells[1 + i], line, doc.header[1 + i]);
        }
        for (std::size_t a = 0; a < agents; ++a) {
            const std::size_t c = 1 + n + 2 * a;
            r.derivatives.emplace_back(parse_double(cells[c], line, doc.header[c]),
                                       parse_double(cells[c + 1], line, doc.header[c + 1]));
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

void save_dataset(const fs::path& path, std::span<const DatasetRow> rows) {
    write_text_file(path, dataset_to_csv(rows));
}

std::vector<DatasetRow> load_dataset(const fs::path& path) {
    try {
        return dataset_from_csv(read_text_file(path));
    } catch (const ParseError& e) {
        throw ParseError(path.string(), e.what());
    }
}

// ---------------------------------------------------------------- trace CSV

std::vector<std::string> trace_columns(std::size_t agents) {
    std::vector<std::string> cols = {"step",  "t",       "ego_px",   "ego_py",       "ego_theta", "u_v",
                                     "u_omega", "u_ref_v", "u_ref_omega", "qp_feasible", "active_set"};
    static const char* per_agent[] = {"x",     "y",   "xhat_dx", "xhat_dy", "xdot_dx", "xdot_dy",
                                      "alpha", "q",   "eta",     "err",     "coverage", "h",
                                      "phi",   "m",   "residual", "distance", "est_err"};
    for (std::size_t a = 0; a < agents; ++a) {
        for (const char* c : per_agent) {
            cols.push_back("a" + std::to_string(a + 1) + "_" + c);
        }
    }
    return cols;
}

std::string trace_to_csv(std::span<const TraceRecord> trace, std::size_t agents) {
    std::string out = "# safeinfer-trace format_version=" + std::to_string(kFormatVersion) + "\n";
    const auto cols = trace_columns(agents);
    for (std::size_t i = 0; i < cols.size(); ++i) {
        out += (i ? "," : "") + cols[i];
    }
    out += '\n';
    for (const auto& r : trace) {
        out += std::to_string(r.step) + ',' + format_double(r.t) + ',' + format_double(r.ego.px) + ',' +
               format_double(r.ego.py) + ',' + format_double(r.ego.theta) + ',' + format_double(r.u(0)) + ',' +
               format_double(r.u(1)) + ',' + format_double(r.u_ref(0)) + ',' + format_double(r.u_ref(1)) + ',' +
               (r.feasible ? "1" : "0") + ',' + join_active(r.active_set);
        for (const auto& a : r.agents) {
            for (double v : {a.position(0), a.position(1), a.xdot_hat(0), a.xdot_hat(1), a.xdot(0), a.xdot(1),
                             a.alpha, a.q, a.eta}) {
                out += ',' + format_double(v);
            }
            out += ',' + std::to_string(a.err);
            for (double v : {a.coverage, a.h, a.phi, a.m_worst, a.residual, a.distance, a.est_err}) {
                out += ',' + format_double(v);
            }
        }
        out += '\n';
    }
    return out;
}

std::vector<TraceRecord> trace_from_csv(const std::string& text) {
    const CsvDoc doc = parse_csv(text, "safeinfer-trace");
    if (doc.header.size() < kTraceFixedColumns || (doc.header.size() - kTraceFixedColumns) % kTraceAgentColumns != 0) {
        throw SchemaError("header", "unexpected number of trace columns: " + std::to_string(doc.header.size()));
    }
    const std::size_t agents = (doc.header.size() - kTraceFixedColumns) / kTraceAgentColumns;
    const auto expected = trace_columns(agents);
    for (std::size_t i = 0; i < expected.size(); ++i) {
        if (doc.header[i] != expected[i]) {
            throw SchemaError(doc.header[i], "expected column '" + expected[i] + "'");
        }
    }
    std::vector<TraceRecord> out;
    out.reserve(doc.rows.size());
    for (std::size_t k = 0; k < doc.rows.size(); ++k) {
        const auto& c = doc.rows[k];
        const std::size_t line = doc.row_lines[k];
        auto d = [&](std::size_t i) { return parse_double(c[i], line, doc.header[i]); };
        TraceRecord r;
        r.step = static_cast<std::size_t>(d(0));
        r.t = d(1);
        r.ego = {d(2), d(3), d(4)};
        r.u = {d(5), d(6)};
        r.u_ref = {d(7), d(8)};
        r.feasible = d(9) != 0.0;
        if (!c[10].empty()) {
            for (const auto& s : split(c[10], ';')) {
                r.active_set.push_back(static_cast<int>(parse_double(s, line, "active_set")));
            }
        }
        for (std::size_t a = 0; a < agents; ++a) {
            const std::size_t b = kTraceFixedColumns + a * kTraceAgentColumns;
            AgentTrace at;
            at.position = {d(b), d(b + 1)};
            at.xdot_hat = {d(b + 2), d(b + 3)};
            at.xdot = {d(b + 4), d(b + 5)};
            at.alpha = d(b + 6);
            at.q = d(b + 7);
            at.eta = d(b + 8);
            at.err = static_cast<int>(d(b + 9));
            at.coverage = d(b + 10);
            at.h = d(b + 11);
            at.phi = d(b + 12);
            at.m_worst = d(b + 13);
            at.residual = d(b + 14);
            at.distance = d(b + 15);
            at.est_err = d(b + 16);
            r.agents.push_back(at);
        }
        out.push_back(std::move(r));
    }
    return out;
}

void save_trace(const fs::path& path, std::span<const TraceRecord> trace, std::size_t agents) {
    write_text_file(path, trace_to_csv(trace, agents));
}

std::vector<TraceRecord> load_trace(const fs::path& path) {
    try {
        return trace_from_csv(read_text_file(path));
    } catch (const ParseError& e) {
        throw ParseError(path.string(), e.what());
    }
}

// ---------------------------------------------------------------- digests / manifest

std::string sha256_hex(const std::string& bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 || EVP_DigestFinal_ex(ctx, md, &len) != 1) {
        EVP_MD_CTX_free(ctx);
        throw std::runtime_error("sha256 failed");
    }
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xF]);
    }
    return out;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_text_file(path)); }

std::string config_digest(const EpisodeConfig& cfg) { return sha256_hex(to_json(cfg).dump()); }

json to_json(const RunManifest& m) {
    json arts = json::array();
    for (const auto& a : m.artifacts) {
        arts.push_back({{"path", a.path}, {"sha256", a.sha256}});
    }
    return {{"format_version", kFormatVersion}, {"kind", m.kind}, {"config_digest", m.config_digest},
            {"seeds", m.seeds},                 {"module_versions", m.module_versions},
            {"artifacts", arts}};
}

RunManifest manifest_from_json(const json& j) {
    check_version(j, "manifest");
    RunManifest m;
    m.kind = str_or(j, "kind", "manifest", "");
    m.config_digest = str_or(j, "config_digest", "manifest", "");
    if (j.contains("seeds")) {
        for (const auto& s : j.at("seeds")) {
            m.seeds.push_back(s.get<std::uint64_t>());
        }
    }
    if (j.contains("module_versions")) {
        m.module_versions = j.at("module_versions").get<std::map<std::string, std::string>>();
    }
    const auto& arts = require(j, "artifacts", "manifest");
    if (!arts.is_array()) {
        throw SchemaError("manifest.artifacts", "expected an array");
    }
    for (std::size_t i = 0; i < arts.size(); ++i) {
        const std::string ap = "manifest.artifacts[" + std::to_string(i) + "]";
        m.artifacts.push_back({str_or(arts[i], "path", ap, ""), str_or(arts[i], "sha256", ap, "")});
    }
    return m;
}

RunManifest write_manifest(const fs::path& dir, RunManifest manifest, const std::vector<std::string>& files) {
    manifest.artifacts.clear();
    for (const auto& f : files) {
        manifest.artifacts.push_back({f, sha256_file(dir / f)});
    }
    if (manifest.module_versions.empty()) {
        manifest.module_versions = {{"rbf_inference", kLibraryVersion}, {"conformal", kLibraryVersion},
                                    {"safety_filter", kLibraryVersion}, {"qp_solver", kLibraryVersion},
                                    {"world_sim", kLibraryVersion},     {"persistence", kLibraryVersion}};
    }
    write_json_file(dir / kManifestName, to_json(manifest));
    return manifest;
}

RunManifest verify_manifest(const fs::path& dir) {
    const fs::path path = dir / kManifestName;
    if (!fs::exists(path)) {
        throw IntegrityError("missing " + path.string());
    }
    RunManifest m = manifest_from_json(read_json_file(path));
    for (const auto& a : m.artifacts) {
        const fs::path f = dir / a.path;
        if (!fs::exists(f)) {
            throw IntegrityError("artifact " + f.string() + " listed in the manifest does not exist");
        }
        if (sha256_file(f) != a.sha256) {
            throw IntegrityError("artifact " + f.string() + " does not match its recorded digest");
        }
    }
    return m;
}

}  // namespace safeinfer
