#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvdse/adaptive_dse.hpp"
#include "pvdse/errors.hpp"
#include "pvdse/library.hpp"
#include "pvdse/observability.hpp"
#include "pvdse/pv_models.hpp"
#include "pvdse/simulator.hpp"
#include "pvdse/sindy.hpp"

namespace pvdse {

using nlohmann::json;

// ---------------------------------------------------------------------------
// parameters

inline json to_json(const PvParams& p) {
    return json{{"r_c", p.r_c},   {"l_c", p.l_c},   {"r_g", p.r_g},
                {"l_g", p.l_g},   {"c_f", p.c_f},   {"c_dc", p.c_dc},
                {"w0", p.w0},     {"l_b", p.l_b},   {"v_grid_nominal", p.v_grid_nominal}};
}

inline PvParams params_from_json(const json& j) {
    PvParams p;
    p.r_c = j.at("r_c").get<double>();
    p.l_c = j.at("l_c").get<double>();
    p.r_g = j.at("r_g").get<double>();
    p.l_g = j.at("l_g").get<double>();
    p.c_f = j.at("c_f").get<double>();
    p.c_dc = j.at("c_dc").get<double>();
    p.w0 = j.at("w0").get<double>();
    p.l_b = j.value("l_b", 0.0);
    p.v_grid_nominal = j.value("v_grid_nominal", 0.0);
    return p;
}

// ---------------------------------------------------------------------------
// vectors / matrices

inline json to_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

inline json to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Eigen::VectorXd vector_from_json(const json& j) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    return v;
}

inline Eigen::MatrixXd matrix_from_json(const json& j) {
    const auto rows = static_cast<Eigen::Index>(j.size());
    if (rows == 0) return {};
    const auto cols = static_cast<Eigen::Index>(j[0].size());
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            m(i, c) = j[static_cast<size_t>(i)][static_cast<size_t>(c)].get<double>();
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// candidate library and sparse model

inline json to_json(const Term& t) {
    switch (t.kind) {
        case TermKind::kConstant:
            return json{{"kind", "constant"}};
        case TermKind::kLinear:
            return json{{"kind", "linear"}, {"var", t.vars[0]}};
        case TermKind::kPoly2:
            return json{{"kind", "poly2"}, {"vars", {t.vars[0], t.vars[1]}}};
        case TermKind::kPoly3:
            return json{{"kind", "poly3"}, {"vars", {t.vars[0], t.vars[1], t.vars[2]}}};
        case TermKind::kSin:
            return json{{"kind", "sin"}, {"var", t.vars[0]}};
        case TermKind::kRational:
            return json{{"kind", "rational"}, {"num", {t.vars[0], t.vars[1]}}, {"den", t.denominator}};
    }
    throw Error("unreachable term kind");
}

inline Term term_from_json(const json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "constant") return Term::constant();
    if (kind == "linear") return Term::linear(j.at("var").get<int>());
    if (kind == "poly2") return Term::poly2(j.at("vars")[0].get<int>(), j.at("vars")[1].get<int>());
    if (kind == "poly3") {
        return Term::poly3(j.at("vars")[0].get<int>(), j.at("vars")[1].get<int>(),
                           j.at("vars")[2].get<int>());
    }
    if (kind == "sin") return Term::sine(j.at("var").get<int>());
    if (kind == "rational") {
        return Term::rational(j.at("num")[0].get<int>(), j.at("num")[1].get<int>(),
                              j.at("den").get<int>());
    }
    throw InvalidInputError("unknown term kind: " + kind);
}

inline json to_json(const LibrarySpec& spec) {
    json terms = json::array();
    for (const Term& t : spec.terms) terms.push_back(to_json(t));
    return json{{"n_states", spec.n_states},
                {"n_inputs", spec.n_inputs},
                {"rational_floor", spec.rational_floor},
                {"terms", std::move(terms)}};
}

inline LibrarySpec library_from_json(const json& j) {
    LibrarySpec spec;
    spec.n_states = j.at("n_states").get<int>();
    spec.n_inputs = j.at("n_inputs").get<int>();
    spec.rational_floor = j.value("rational_floor", kDcVoltageFloor);
    for (const json& t : j.at("terms")) spec.terms.push_back(term_from_json(t));
    spec.validate();
    return spec;
}

/// Sparse model serialization: the library plus the nonzero coefficients only.
inline json to_json(const SparseModel& model) {
    json entries = json::array();
    for (Eigen::Index i = 0; i < model.xi().rows(); ++i) {
        for (Eigen::Index j = 0; j < model.xi().cols(); ++j) {
            if (model.xi()(i, j) != 0.0) {
                entries.push_back(json{{"term", i}, {"state", j}, {"value", model.xi()(i, j)}});
            }
        }
    }
    json diag;
    const FitDiagnostics& d = model.diagnostics();
    if (d.residual_norm.size() > 0) {
        diag["residual_norm"] = to_json(d.residual_norm);
        diag["relative_residual"] = to_json(d.relative_residual);
        diag["nonzero_count"] = d.nonzero_count;
        diag["rank"] = d.rank;
        diag["rank_deficient"] = d.rank_deficient;
        diag["degenerate_columns"] = d.degenerate_columns;
    }
    return json{{"gamma", model.gamma()},
                {"n_states", model.n_states()},
                {"library", to_json(model.library())},
                {"coefficients", std::move(entries)},
                {"diagnostics", std::move(diag)}};
}

inline SparseModel model_from_json(const json& j) {
    LibrarySpec spec = library_from_json(j.at("library"));
    const auto n = j.at("n_states").get<Eigen::Index>();
    Eigen::MatrixXd xi = Eigen::MatrixXd::Zero(spec.size(), n);
    for (const json& e : j.at("coefficients")) {
        xi(e.at("term").get<Eigen::Index>(), e.at("state").get<Eigen::Index>()) =
            e.at("value").get<double>();
    }
    FitDiagnostics diag;
    if (j.contains("diagnostics") && j["diagnostics"].contains("rank")) {
        const json& d = j["diagnostics"];
        diag.residual_norm = vector_from_json(d.at("residual_norm"));
        diag.relative_residual = vector_from_json(d.at("relative_residual"));
        diag.nonzero_count = d.at("nonzero_count").get<std::vector<int>>();
        diag.rank = d.at("rank").get<Eigen::Index>();
        diag.rank_deficient = d.at("rank_deficient").get<bool>();
        diag.degenerate_columns = d.at("degenerate_columns").get<std::vector<int>>();
    }
    return SparseModel(std::move(xi), std::move(spec), j.at("gamma").get<double>(), std::move(diag));
}

// ---------------------------------------------------------------------------
// scenario

inline json to_json(const InputSchedule& s) {
    json j;
    j["base"] = to_json(s.base);
    j["steps"] = json::array();
    for (const StepChange& c : s.steps) {
        j["steps"].push_back(json{{"time", c.time}, {"channel", c.channel}, {"value", c.value}});
    }
    j["prbs"] = json::array();
    for (const PrbsExcitation& e : s.excitations) {
        j["prbs"].push_back(json{{"channel", e.channel},
                                 {"amplitude", e.amplitude},
                                 {"period", e.period},
                                 {"t_start", e.t_start},
                                 {"t_end", e.t_end},
                                 {"seed", e.seed}});
    }
    j["droop"] = json{{"enabled", s.droop.enabled},
                      {"gain", s.droop.gain},
                      {"reference", s.droop.reference}};
    return j;
}

inline InputSchedule schedule_from_json(const json& j) {
    InputSchedule s;
    s.base = vector_from_json(j.at("base"));
    for (const json& c : j.value("steps", json::array())) {
        s.steps.push_back({c.at("time").get<double>(), c.at("channel").get<int>(),
                           c.at("value").get<double>()});
    }
    for (const json& e : j.value("prbs", json::array())) {
        s.excitations.push_back({e.at("channel").get<int>(), e.at("amplitude").get<double>(),
                                 e.at("period").get<double>(), e.at("t_start").get<double>(),
                                 e.at("t_end").get<double>(), e.at("seed").get<uint64_t>()});
    }
    if (j.contains("droop")) {
        s.droop.enabled = j["droop"].value("enabled", false);
        s.droop.gain = j["droop"].value("gain", 0.0);
        s.droop.reference = j["droop"].value("reference", 0.0);
    }
    return s;
}

inline json to_json(const Event& e) {
    switch (e.type) {
        case Event::Type::kParamChange:
            return json{{"time", e.time}, {"type", "param_change"}, {"unit", e.unit + 1},
                        {"field", e.field}, {"value", e.value}};
        case Event::Type::kVoltageSag: {
            json units = json::array();
            for (int u : e.units) units.push_back(u + 1);
            return json{{"time", e.time}, {"type", "voltage_sag"}, {"fraction", e.fraction},
                        {"units", std::move(units)}};
        }
        case Event::Type::kDisconnect:
            return json{{"time", e.time}, {"type", "disconnect"}, {"unit", e.unit + 1}};
    }
    throw Error("unreachable event type");
}

inline Event event_from_json(const json& j) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "param_change") {
        return Event::param_change(j.at("time").get<double>(), j.at("unit").get<int>() - 1,
                                   j.at("field").get<std::string>(), j.at("value").get<double>());
    }
    if (type == "voltage_sag") {
        std::vector<int> units;
        for (const json& u : j.value("units", json::array())) units.push_back(u.get<int>() - 1);
        return Event::voltage_sag(j.at("time").get<double>(), j.at("fraction").get<double>(),
                                  std::move(units));
    }
    if (type == "disconnect") {
        return Event::disconnect(j.at("time").get<double>(), j.at("unit").get<int>() - 1);
    }
    throw InvalidInputError("unknown event type: " + type);
}

inline json to_json(const NoiseSpec& n) {
    return json{{"q", to_json(n.q)}, {"r", to_json(n.r)}, {"seed", n.seed}};
}

inline NoiseSpec noise_from_json(const json& j, int n, int m) {
    NoiseSpec s;
    s.seed = j.value("seed", uint64_t{0});
    if (j.contains("q_sigma")) {
        s.q = j["q_sigma"].get<double>() * Eigen::MatrixXd::Identity(n, n);
    } else if (j.contains("q")) {
        s.q = matrix_from_json(j["q"]);
    } else {
        s.q = Eigen::MatrixXd::Zero(n, n);
    }
    if (j.contains("r_sigma")) {
        s.r = j["r_sigma"].get<double>() * Eigen::MatrixXd::Identity(m, m);
    } else if (j.contains("r")) {
        s.r = matrix_from_json(j["r"]);
    } else {
        s.r = Eigen::MatrixXd::Zero(m, m);
    }
    return s;
}

inline json to_json(const FilterConfig& f) {
    return json{{"q", to_json(f.q)},
                {"r", to_json(f.r)},
                {"initial_mean", to_json(f.initial_mean)},
                {"initial_cov", to_json(f.initial_cov)}};
}

inline FilterConfig filter_from_json(const json& j, int n, int m) {
    FilterConfig f;
    if (j.contains("q_sigma")) {
        f.q = j["q_sigma"].get<double>() * Eigen::MatrixXd::Identity(n, n);
    } else {
        f.q = matrix_from_json(j.at("q"));
    }
    if (j.contains("r_sigma")) {
        f.r = j["r_sigma"].get<double>() * Eigen::MatrixXd::Identity(m, m);
    } else {
        f.r = matrix_from_json(j.at("r"));
    }
    if (j.contains("initial_mean")) f.initial_mean = vector_from_json(j["initial_mean"]);
    if (j.contains("initial_cov")) {
        f.initial_cov = matrix_from_json(j["initial_cov"]);
    } else if (j.contains("initial_cov_diag")) {
        f.initial_cov = vector_from_json(j["initial_cov_diag"]).asDiagonal();
    }
    return f;
}

inline json to_json(const UnitConfig& u) {
    json j;
    j["kind"] = to_string(u.kind);
    j["params"] = to_json(u.params);
    j["x0"] = to_json(u.x0);
    j["schedule"] = to_json(u.schedule);
    j["noise"] = to_json(u.noise);
    j["selector"] = u.selector;
    if (u.filter) j["filter"] = to_json(*u.filter);
    return j;
}

inline UnitConfig unit_from_json(const json& j) {
    UnitConfig u;
    u.kind = system_kind_from_string(j.at("kind").get<std::string>());
    u.params = params_from_json(j.at("params"));
    u.x0 = vector_from_json(j.at("x0"));
    u.schedule = schedule_from_json(j.at("schedule"));
    u.selector = j.value("selector", std::vector<int>{5, 6, 7});
    const int n = state_dim(u.kind);
    const auto m = static_cast<int>(u.selector.size());
    u.noise = noise_from_json(j.value("noise", json::object()), n, m);
    if (j.contains("filter")) u.filter = filter_from_json(j["filter"], n, m);
    return u;
}

inline json to_json(const Scenario& s) {
    json units = json::array();
    for (const UnitConfig& u : s.units) units.push_back(to_json(u));
    json events = json::array();
    for (const Event& e : s.events) events.push_back(to_json(e));
    return json{{"t_end", s.t_end},     {"dt_sim", s.dt_sim}, {"dt_meas", s.dt_meas},
                {"units", std::move(units)}, {"events", std::move(events)}};
}

inline Scenario scenario_from_json(const json& j) {
    Scenario s;
    s.t_end = j.at("t_end").get<double>();
    s.dt_sim = j.value("dt_sim", 1e-4);
    s.dt_meas = j.value("dt_meas", 1e-2);
    for (const json& u : j.at("units")) s.units.push_back(unit_from_json(u));
    for (const json& e : j.value("events", json::array())) s.events.push_back(event_from_json(e));
    s.validate();
    return s;
}

// ---------------------------------------------------------------------------
// reports

inline json to_json(const ObservabilityReport& r) {
    return json{{"rank", r.rank},
                {"full_rank", r.full_rank},
                {"singular_values", to_json(r.singular_values)},
                {"selector", r.selector}};
}

inline json to_json(const RetrainEvent& e) {
    return json{{"t_start", e.t_start},
                {"t_swap", e.t_swap},
                {"success", e.success},
                {"wall_seconds", e.wall_seconds},
                {"message", e.message}};
}

/// Summary block of one estimation run (per-step series live in estimates.csv).
inline json summary_json(const EstimationReport& r) {
    json retrains = json::array();
    for (const RetrainEvent& e : r.retrains) retrains.push_back(to_json(e));
    return json{{"normalized_error", r.error},
                {"steps", r.t.size()},
                {"t_end", r.t.empty() ? 0.0 : r.t.back()},
                {"wall_seconds", r.wall_seconds},
                {"retrains", std::move(retrains)}};
}

// ---------------------------------------------------------------------------
// file helpers

inline void write_json(const std::filesystem::path& path, const json& j) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw Error("cannot open " + path.string() + " for writing");
    os << j.dump(2) << "\n";
}

inline json read_json(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open " + path.string());
    json j;
    is >> j;
    return j;
}

}  // namespace pvdse
