#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "pvdse/errors.hpp"

namespace pvdse {

/// Data matrices consumed by sparse regression: m rows of states, state derivatives
/// and inputs sampled at uniform spacing dt.
struct DataMatrices {
    Eigen::MatrixXd x;     ///< m x n filtered states
    Eigen::MatrixXd xdot;  ///< m x n state time-derivatives
    Eigen::MatrixXd u;     ///< m x d inputs
    double dt = 0.0;

    Eigen::Index rows() const { return x.rows(); }
};

namespace detail {

/// Least-squares polynomial filter weights: row `deriv` of the pseudo-inverse of the
/// local Vandermonde matrix, scaled to evaluate the fit (or its derivative) at the
/// window center.
inline Eigen::VectorXd savgol_weights(int window, int polyorder, int deriv) {
    const int half = window / 2;
    Eigen::MatrixXd v(window, polyorder + 1);
    for (int i = 0; i < window; ++i) {
        double t = static_cast<double>(i - half);
        double pw = 1.0;
        for (int j = 0; j <= polyorder; ++j) {
            v(i, j) = pw;
            pw *= t;
        }
    }
    // (V^T V)^-1 V^T, row `deriv`, times deriv! for the derivative value at t=0.
    Eigen::MatrixXd vtv = v.transpose() * v;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(polyorder + 1);
    double fact = 1.0;
    for (int k = 2; k <= deriv; ++k) fact *= k;
    rhs(deriv) = fact;
    Eigen::VectorXd coeff = vtv.ldlt().solve(rhs);
    return v * coeff;
}

/// Mirror-padded sample access: reflects around the end points so the filter output
/// keeps the input length.
inline double mirrored(const std::vector<double>& s, long i) {
    const long n = static_cast<long>(s.size());
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
    return s[static_cast<size_t>(i)];
}

}  // namespace detail

/// Savitzky-Golay smoothing. Each point is replaced by the value of the local
/// least-squares polynomial fit over `window` samples; mirror padding keeps the
/// output length equal to the input length.
inline std::vector<double> savitzky_golay(const std::vector<double>& series, int window,
                                          int polyorder) {
    if (window <= 0 || window % 2 == 0) {
        throw InvalidInputError("savitzky_golay: window must be a positive odd integer");
    }
    if (polyorder < 0 || polyorder >= window) {
        throw InvalidInputError("savitzky_golay: polyorder must satisfy 0 <= polyorder < window");
    }
    if (series.size() < static_cast<size_t>(window)) {
        throw InvalidInputError("savitzky_golay: series shorter than window");
    }
    const Eigen::VectorXd w = detail::savgol_weights(window, polyorder, 0);
    const int half = window / 2;
    std::vector<double> out(series.size());
    for (long k = 0; k < static_cast<long>(series.size()); ++k) {
        double acc = 0.0;
        for (int j = 0; j < window; ++j) {
            acc += w(j) * detail::mirrored(series, k + j - half);
        }
        out[static_cast<size_t>(k)] = acc;
    }
    return out;
}

/// Savitzky-Golay first derivative (local polynomial fit slope at the window center).
inline std::vector<double> savitzky_golay_derivative(const std::vector<double>& series,
                                                     int window, int polyorder, double dt) {
    if (window <= 0 || window % 2 == 0) {
        throw InvalidInputError("savitzky_golay_derivative: window must be a positive odd integer");
    }
    if (polyorder < 1 || polyorder >= window) {
        throw InvalidInputError("savitzky_golay_derivative: polyorder must satisfy 1 <= polyorder < window");
    }
    if (series.size() < static_cast<size_t>(window)) {
        throw InvalidInputError("savitzky_golay_derivative: series shorter than window");
    }
    if (!(dt > 0.0)) throw InvalidInputError("savitzky_golay_derivative: dt must be positive");
    const Eigen::VectorXd w = detail::savgol_weights(window, polyorder, 1);
    const int half = window / 2;
    std::vector<double> out(series.size());
    for (long k = 0; k < static_cast<long>(series.size()); ++k) {
        double acc = 0.0;
        for (int j = 0; j < window; ++j) {
            acc += w(j) * detail::mirrored(series, k + j - half);
        }
        out[static_cast<size_t>(k)] = acc / dt;
    }
    return out;
}

enum class DiffMethod {
    kCentral,  ///< central differences at interior points, one-sided at the ends
    kForward,  ///< forward differences (exact for explicit-Euler generated data), backward at the last point
    kSavitzkyGolay,
};

/// Numerical differentiation of a uniformly sampled sequence.
inline std::vector<double> differentiate(const std::vector<double>& series, double dt,
                                         DiffMethod method = DiffMethod::kCentral,
                                         int sg_window = 11, int sg_polyorder = 3) {
    if (series.size() < 3) throw InvalidInputError("differentiate: need at least 3 samples");
    if (!(dt > 0.0)) throw InvalidInputError("differentiate: dt must be positive");
    const size_t n = series.size();
    std::vector<double> out(n);
    switch (method) {
        case DiffMethod::kCentral:
            out[0] = (series[1] - series[0]) / dt;
            for (size_t k = 1; k + 1 < n; ++k) out[k] = (series[k + 1] - series[k - 1]) / (2.0 * dt);
            out[n - 1] = (series[n - 1] - series[n - 2]) / dt;
            break;
        case DiffMethod::kForward:
            for (size_t k = 0; k + 1 < n; ++k) out[k] = (series[k + 1] - series[k]) / dt;
            out[n - 1] = (series[n - 1] - series[n - 2]) / dt;
            break;
        case DiffMethod::kSavitzkyGolay:
            return savitzky_golay_derivative(series, sg_window, sg_polyorder, dt);
    }
    return out;
}

/// Smoothing configuration used when assembling data matrices.
struct SmoothingConfig {
    bool enabled = false;
    int window = 11;
    int polyorder = 3;
};

/// Raw time-indexed records of one identification window.
struct SampledRecords {
    std::vector<double> t;
    Eigen::MatrixXd x;  ///< m x n
    Eigen::MatrixXd u;  ///< m x d
};

/// Assembles the regression matrices: states are smoothed per config, derivatives are
/// computed column-wise from the smoothed states.
inline DataMatrices assemble_matrices(const SampledRecords& rec, const SmoothingConfig& smoothing,
                                      DiffMethod diff = DiffMethod::kCentral) {
    const Eigen::Index m = rec.x.rows();
    if (m < 3) throw InvalidInputError("assemble_matrices: need at least 3 rows");
    if (static_cast<Eigen::Index>(rec.t.size()) != m || rec.u.rows() != m) {
        throw InvalidInputError("assemble_matrices: row counts differ");
    }
    const double dt = rec.t[1] - rec.t[0];
    if (!(dt > 0.0)) throw InvalidInputError("assemble_matrices: non-increasing timestamps");
    for (size_t k = 1; k < rec.t.size(); ++k) {
        if (std::abs((rec.t[k] - rec.t[k - 1]) - dt) > 1e-9 * std::max(1.0, std::abs(dt))) {
            throw InvalidInputError("assemble_matrices: non-uniform timestamps");
        }
    }

    DataMatrices out;
    out.dt = dt;
    out.x.resize(m, rec.x.cols());
    out.xdot.resize(m, rec.x.cols());
    out.u = rec.u;

    std::vector<double> col(static_cast<size_t>(m));
    for (Eigen::Index j = 0; j < rec.x.cols(); ++j) {
        for (Eigen::Index k = 0; k < m; ++k) col[static_cast<size_t>(k)] = rec.x(k, j);
        std::vector<double> sm = smoothing.enabled
                                     ? savitzky_golay(col, smoothing.window, smoothing.polyorder)
                                     : col;
        std::vector<double> d = differentiate(sm, dt, diff, smoothing.window, smoothing.polyorder);
        for (Eigen::Index k = 0; k < m; ++k) {
            out.x(k, j) = sm[static_cast<size_t>(k)];
            out.xdot(k, j) = d[static_cast<size_t>(k)];
        }
    }
    return out;
}

}  // namespace pvdse
