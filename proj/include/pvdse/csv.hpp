#pragma once

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pvdse/adaptive_dse.hpp"
#include "pvdse/errors.hpp"
#include "pvdse/preprocessing.hpp"
#include "pvdse/simulator.hpp"

namespace pvdse {

namespace detail {

/// 17 significant digits: enough for bit-exact double round trips.
inline std::string fmt17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw Error("cannot open " + path.string() + " for writing");
    return os;
}

}  // namespace detail

/// truth.csv: `t,unit,x1..xn` with one row per (time, unit); units with fewer states
/// leave the trailing columns empty. `stride` thins the time axis.
inline void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj,
                                 Eigen::Index stride = 1) {
    Eigen::Index n_max = 0;
    for (const auto& s : traj.states) n_max = std::max(n_max, s.cols());
    std::ofstream os = detail::open_out(path);
    os << "t,unit";
    for (Eigen::Index j = 0; j < n_max; ++j) os << ",x" << (j + 1);
    os << "\n";
    for (size_t k = 0; k < traj.t.size(); k += static_cast<size_t>(stride)) {
        for (size_t u = 0; u < traj.n_units(); ++u) {
            os << detail::fmt17(traj.t[k]) << ',' << (u + 1);
            const auto& s = traj.states[u];
            for (Eigen::Index j = 0; j < n_max; ++j) {
                os << ',';
                if (j < s.cols()) os << detail::fmt17(s(static_cast<Eigen::Index>(k), j));
            }
            os << "\n";
        }
    }
}

/// inputs.csv: `t,unit,u1..ud` (realized inputs, droop and events included).
inline void write_inputs_csv(const std::filesystem::path& path, const Trajectory& traj,
                             Eigen::Index stride = 1) {
    Eigen::Index d_max = 0;
    for (const auto& s : traj.inputs) d_max = std::max(d_max, s.cols());
    std::ofstream os = detail::open_out(path);
    os << "t,unit";
    for (Eigen::Index j = 0; j < d_max; ++j) os << ",u" << (j + 1);
    os << "\n";
    for (size_t k = 0; k < traj.t.size(); k += static_cast<size_t>(stride)) {
        for (size_t u = 0; u < traj.n_units(); ++u) {
            os << detail::fmt17(traj.t[k]) << ',' << (u + 1);
            const auto& s = traj.inputs[u];
            for (Eigen::Index j = 0; j < d_max; ++j) {
                os << ',';
                if (j < s.cols()) os << detail::fmt17(s(static_cast<Eigen::Index>(k), j));
            }
            os << "\n";
        }
    }
}

/// measurements.csv: `t,unit,y1..ym`.
inline void write_measurements_csv(const std::filesystem::path& path,
                                   const MeasurementSeries& meas) {
    Eigen::Index m_max = 0;
    for (const auto& y : meas.y) m_max = std::max(m_max, y.cols());
    std::ofstream os = detail::open_out(path);
    os << "t,unit";
    for (Eigen::Index j = 0; j < m_max; ++j) os << ",y" << (j + 1);
    os << "\n";
    for (size_t k = 0; k < meas.t.size(); ++k) {
        for (size_t u = 0; u < meas.n_units(); ++u) {
            os << detail::fmt17(meas.t[k]) << ',' << (u + 1);
            const auto& y = meas.y[u];
            for (Eigen::Index j = 0; j < m_max; ++j) {
                os << ',';
                if (j < y.cols()) os << detail::fmt17(y(static_cast<Eigen::Index>(k), j));
            }
            os << "\n";
        }
    }
}

/// estimates.csv: `t,unit,xhat1..xhatn,trP`; one block of rows per time step covering
/// the units still operating at that time.
inline void write_estimates_csv(const std::filesystem::path& path,
                                const std::vector<EstimationReport>& reports,
                                Eigen::Index stride = 1) {
    Eigen::Index n_max = 0;
    size_t len_max = 0;
    for (const auto& r : reports) {
        n_max = std::max(n_max, r.estimates.cols());
        len_max = std::max(len_max, r.t.size());
    }
    std::ofstream os = detail::open_out(path);
    os << "t,unit";
    for (Eigen::Index j = 0; j < n_max; ++j) os << ",xhat" << (j + 1);
    os << ",trP\n";
    for (size_t k = 0; k < len_max; k += static_cast<size_t>(stride)) {
        for (size_t u = 0; u < reports.size(); ++u) {
            const auto& r = reports[u];
            if (k >= r.t.size()) continue;
            os << detail::fmt17(r.t[k]) << ',' << (u + 1);
            for (Eigen::Index j = 0; j < n_max; ++j) {
                os << ',';
                if (j < r.estimates.cols()) {
                    os << detail::fmt17(r.estimates(static_cast<Eigen::Index>(k), j));
                }
            }
            os << ',' << detail::fmt17(r.trace_p(static_cast<Eigen::Index>(k))) << "\n";
        }
    }
}

/// Data matrices as three CSV files (X, XDOT, U) for external inspection.
inline void write_data_matrices(const std::filesystem::path& dir, const DataMatrices& data) {
    auto dump = [&](const std::string& name, const Eigen::MatrixXd& m, const char* prefix) {
        std::ofstream os = detail::open_out(dir / name);
        for (Eigen::Index j = 0; j < m.cols(); ++j) os << (j ? "," : "") << prefix << (j + 1);
        os << "\n";
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            for (Eigen::Index j = 0; j < m.cols(); ++j) {
                os << (j ? "," : "") << detail::fmt17(m(i, j));
            }
            os << "\n";
        }
    };
    dump("X.csv", data.x, "x");
    dump("XDOT.csv", data.xdot, "xdot");
    dump("U.csv", data.u, "u");
}

/// Reads a `t,unit,...` series CSV back into per-unit column blocks.
struct SeriesCsv {
    std::vector<double> t;                   ///< distinct timestamps in file order
    std::vector<Eigen::MatrixXd> values;     ///< per unit, rows aligned with t
};

inline SeriesCsv read_series_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open " + path.string());
    std::string line;
    if (!std::getline(is, line)) throw Error(path.string() + ": empty file");
    size_t n_cols = static_cast<size_t>(std::count(line.begin(), line.end(), ',')) + 1;
    if (n_cols < 3) throw Error(path.string() + ": expected t,unit,... header");
    const size_t n_vals = n_cols - 2;

    struct Row {
        double t;
        int unit;
        std::vector<double> v;
    };
    std::vector<Row> rows;
    int max_unit = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        Row row;
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        row.t = std::stod(cell);
        std::getline(ss, cell, ',');
        row.unit = std::stoi(cell);
        while (std::getline(ss, cell, ',')) {
            row.v.push_back(cell.empty() ? std::numeric_limits<double>::quiet_NaN()
                                         : std::stod(cell));
        }
        row.v.resize(n_vals, std::numeric_limits<double>::quiet_NaN());
        max_unit = std::max(max_unit, row.unit);
        rows.push_back(std::move(row));
    }

    SeriesCsv out;
    for (const Row& r : rows) {
        if (r.unit == 1) out.t.push_back(r.t);
    }
    out.values.assign(static_cast<size_t>(max_unit),
                      Eigen::MatrixXd(static_cast<Eigen::Index>(out.t.size()),
                                      static_cast<Eigen::Index>(n_vals)));
    std::vector<Eigen::Index> cursor(static_cast<size_t>(max_unit), 0);
    for (const Row& r : rows) {
        auto u = static_cast<size_t>(r.unit - 1);
        for (size_t j = 0; j < n_vals; ++j) {
            out.values[u](cursor[u], static_cast<Eigen::Index>(j)) = r.v[j];
        }
        ++cursor[u];
    }
    return out;
}

/// Rebuilds one unit's identification records from truth.csv + inputs.csv.
inline SampledRecords read_sampled_records(const std::filesystem::path& truth_csv,
                                           const std::filesystem::path& inputs_csv, int unit,
                                           int n_states, int n_inputs) {
    const SeriesCsv xs = read_series_csv(truth_csv);
    const SeriesCsv us = read_series_csv(inputs_csv);
    if (unit < 1 || unit > static_cast<int>(xs.values.size())) {
        throw InvalidInputError("read_sampled_records: unit out of range");
    }
    SampledRecords rec;
    rec.t = xs.t;
    rec.x = xs.values[static_cast<size_t>(unit - 1)].leftCols(n_states);
    rec.u = us.values[static_cast<size_t>(unit - 1)].leftCols(n_inputs);
    if (rec.u.rows() != rec.x.rows()) {
        throw InvalidInputError("read_sampled_records: truth/input row counts differ");
    }
    return rec;
}

}  // namespace pvdse
