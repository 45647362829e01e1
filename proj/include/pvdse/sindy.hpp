#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "pvdse/errors.hpp"
#include "pvdse/library.hpp"
#include "pvdse/preprocessing.hpp"

namespace pvdse {

struct RegressionOptions {
    double rank_tolerance = 1e-10;  ///< relative rank threshold of the least-squares factorization
    bool column_scaling = true;     ///< normalize library columns to unit RMS before solving
    /// Optional least-squares refit on the surviving support after thresholding. Off by
    /// default: plain zeroing leaves the surviving coefficients at their full fit
    /// values, whereas a refit re-biases them whenever the threshold removed genuine
    /// dynamics rather than noise.
    bool refit = false;
    int max_iterations = 20;  ///< STLS iteration cap
};

struct FitDiagnostics {
    Eigen::VectorXd residual_norm;      ///< ||xdot_h - Theta xi_h||_2 per state column
    Eigen::VectorXd relative_residual;  ///< residual_norm / ||xdot_h||_2
    std::vector<int> nonzero_count;     ///< per state column
    std::vector<int> degenerate_columns;  ///< columns left all-zero by thresholding
    Eigen::Index rank = 0;
    bool rank_deficient = false;
};

namespace detail {

inline void require_finite(const Eigen::MatrixXd& m, const char* name) {
    if (!m.allFinite()) throw IdentificationError(std::string(name) + " contains non-finite values");
}

inline Eigen::VectorXd column_scales(const Eigen::MatrixXd& theta) {
    Eigen::VectorXd s(theta.cols());
    const double m = static_cast<double>(theta.rows());
    for (Eigen::Index j = 0; j < theta.cols(); ++j) {
        const double rms = std::sqrt(theta.col(j).squaredNorm() / m);
        s(j) = rms > 0.0 ? rms : 1.0;
    }
    return s;
}

}  // namespace detail

/// Minimum-norm least squares ||A x - b|| via a rank-revealing complete orthogonal
/// decomposition with relative rank threshold. Library columns are optionally
/// normalized to unit RMS first and the coefficients unscaled afterward.
inline Eigen::MatrixXd least_squares(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                     const RegressionOptions& opt = {},
                                     FitDiagnostics* diag = nullptr) {
    detail::require_finite(a, "Theta");
    detail::require_finite(b, "Xdot");
    Eigen::VectorXd scales = opt.column_scaling ? detail::column_scales(a)
                                                : Eigen::VectorXd::Ones(a.cols());
    Eigen::MatrixXd a_scaled = a * scales.cwiseInverse().asDiagonal();
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod;
    cod.setThreshold(opt.rank_tolerance);
    cod.compute(a_scaled);
    Eigen::MatrixXd xi = scales.cwiseInverse().asDiagonal() * cod.solve(b).eval();
    if (diag != nullptr) {
        diag->rank = cod.rank();
        diag->rank_deficient = cod.rank() < a.cols();
    }
    return xi;
}

/// Sequential thresholded least squares: alternate a least-squares fit on the active
/// set with zeroing of entries below the per-column threshold, until the support is a
/// fixed point or the iteration cap is reached.
struct StlsResult {
    Eigen::MatrixXd xi;
    FitDiagnostics diagnostics;
    int iterations = 0;
};

inline StlsResult stls(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& xdot,
                       const Eigen::VectorXd& thresholds, const RegressionOptions& opt = {}) {
    if (theta.rows() != xdot.rows()) throw InvalidInputError("stls: row counts differ");
    if (thresholds.size() != xdot.cols()) {
        throw InvalidInputError("stls: one threshold per state column required");
    }
    StlsResult res;
    res.xi = least_squares(theta, xdot, opt, &res.diagnostics);
    const Eigen::Index L = theta.cols();
    const Eigen::Index n = xdot.cols();

    for (Eigen::Index j = 0; j < n; ++j) {
        std::vector<Eigen::Index> support;
        for (Eigen::Index i = 0; i < L; ++i) {
            if (std::abs(res.xi(i, j)) >= thresholds(j)) support.push_back(i);
        }
        int it = 0;
        for (; it < opt.max_iterations; ++it) {
            // zero everything off-support
            Eigen::VectorXd col = Eigen::VectorXd::Zero(L);
            if (!support.empty()) {
                Eigen::MatrixXd sub(theta.rows(), static_cast<Eigen::Index>(support.size()));
                for (size_t s = 0; s < support.size(); ++s) sub.col(static_cast<Eigen::Index>(s)) = theta.col(support[s]);
                Eigen::MatrixXd coef = least_squares(sub, xdot.col(j), opt, nullptr);
                for (size_t s = 0; s < support.size(); ++s) col(support[s]) = coef(static_cast<Eigen::Index>(s), 0);
            }
            std::vector<Eigen::Index> next;
            for (Eigen::Index i : support) {
                if (std::abs(col(i)) >= thresholds(j)) next.push_back(i);
            }
            res.xi.col(j) = col;
            if (next == support) break;
            support = std::move(next);
        }
        res.iterations = std::max(res.iterations, it + 1);
        // entries that fell below threshold on the last pass are dropped
        for (Eigen::Index i = 0; i < L; ++i) {
            if (std::abs(res.xi(i, j)) < thresholds(j)) res.xi(i, j) = 0.0;
        }
    }

    res.diagnostics.residual_norm.resize(n);
    res.diagnostics.relative_residual.resize(n);
    res.diagnostics.nonzero_count.assign(static_cast<size_t>(n), 0);
    for (Eigen::Index j = 0; j < n; ++j) {
        res.diagnostics.residual_norm(j) = (xdot.col(j) - theta * res.xi.col(j)).norm();
        const double dn = xdot.col(j).norm();
        res.diagnostics.relative_residual(j) = dn > 0.0 ? res.diagnostics.residual_norm(j) / dn : 0.0;
        res.diagnostics.nonzero_count[static_cast<size_t>(j)] =
            static_cast<int>((res.xi.col(j).array() != 0.0).count());
    }
    return res;
}

inline StlsResult stls(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& xdot,
                       double threshold, const RegressionOptions& opt = {}) {
    return stls(theta, xdot, Eigen::VectorXd::Constant(xdot.cols(), threshold), opt);
}

/// Sparse dynamics model: coefficient matrix over a candidate library, evaluable as
/// xdot = theta(x, u) * xi.
class SparseModel {
public:
    SparseModel() = default;
    SparseModel(Eigen::MatrixXd xi, LibrarySpec library, double gamma, FitDiagnostics diag = {})
        : xi_(std::move(xi)), library_(std::move(library)), gamma_(gamma), diagnostics_(std::move(diag)) {
        if (xi_.rows() != library_.size()) {
            throw InvalidInputError("SparseModel: coefficient rows must match library size");
        }
        compile();
    }

    const Eigen::MatrixXd& xi() const { return xi_; }
    const LibrarySpec& library() const { return library_; }
    double gamma() const { return gamma_; }
    const FitDiagnostics& diagnostics() const { return diagnostics_; }
    Eigen::Index n_states() const { return xi_.cols(); }

    int nonzero_count() const { return static_cast<int>((xi_.array() != 0.0).count()); }

    double coefficient(const Term& t, Eigen::Index state) const {
        const Eigen::Index i = library_.index_of(t);
        return i < 0 ? 0.0 : xi_(i, state);
    }

    /// Predicted derivative; only terms with a nonzero coefficient somewhere are evaluated.
    Eigen::VectorXd evaluate(const Eigen::Ref<const Eigen::VectorXd>& x,
                             const Eigen::Ref<const Eigen::VectorXd>& u) const {
        if (x.size() != library_.n_states || u.size() != library_.n_inputs) {
            throw InvalidInputError("SparseModel::evaluate: dimension mismatch");
        }
        Eigen::VectorXd v(library_.n_vars());
        v << x, u;
        for (size_t s = 0; s < active_terms_.size(); ++s) {
            term_values_[s] = detail::eval_term(library_.terms[static_cast<size_t>(active_terms_[s])],
                                                v, library_.rational_floor);
        }
        Eigen::VectorXd dx = Eigen::VectorXd::Zero(xi_.cols());
        for (Eigen::Index j = 0; j < xi_.cols(); ++j) {
            double acc = 0.0;
            for (const auto& [slot, coeff] : per_state_[static_cast<size_t>(j)]) {
                acc += coeff * term_values_[slot];
            }
            dx(j) = acc;
        }
        return dx;
    }

private:
    void compile() {
        active_terms_.clear();
        per_state_.assign(static_cast<size_t>(xi_.cols()), {});
        std::vector<Eigen::Index> slot_of(static_cast<size_t>(xi_.rows()), -1);
        for (Eigen::Index i = 0; i < xi_.rows(); ++i) {
            for (Eigen::Index j = 0; j < xi_.cols(); ++j) {
                if (xi_(i, j) == 0.0) continue;
                if (slot_of[static_cast<size_t>(i)] < 0) {
                    slot_of[static_cast<size_t>(i)] = static_cast<Eigen::Index>(active_terms_.size());
                    active_terms_.push_back(i);
                }
                per_state_[static_cast<size_t>(j)].emplace_back(
                    static_cast<size_t>(slot_of[static_cast<size_t>(i)]), xi_(i, j));
            }
        }
        term_values_.assign(active_terms_.size(), 0.0);
    }

    Eigen::MatrixXd xi_;
    LibrarySpec library_;
    double gamma_ = 0.0;
    FitDiagnostics diagnostics_;

    std::vector<Eigen::Index> active_terms_;
    std::vector<std::vector<std::pair<size_t, double>>> per_state_;
    mutable std::vector<double> term_values_;
};

inline Eigen::VectorXd evaluate_model(const SparseModel& model,
                                      const Eigen::Ref<const Eigen::VectorXd>& x,
                                      const Eigen::Ref<const Eigen::VectorXd>& u) {
    return model.evaluate(x, u);
}

/// Feature-selection sparse regression: a full least-squares solve followed by one
/// pass of per-column dominance thresholding (entries below max|xi(:,j)| / gamma are
/// removed) and, by default, a least-squares refit on the surviving support.
inline SparseModel feature_select_from_initial(const Eigen::MatrixXd& theta,
                                               const Eigen::MatrixXd& xdot,
                                               const Eigen::MatrixXd& xi0, LibrarySpec spec,
                                               double gamma, RegressionOptions opt = {},
                                               FitDiagnostics base_diag = {}) {
    if (!(gamma > 1.0)) throw InvalidInputError("feature_select: gamma must exceed 1");
    const Eigen::Index L = theta.cols();
    const Eigen::Index n = xdot.cols();
    Eigen::MatrixXd xi = xi0;
    FitDiagnostics diag = std::move(base_diag);
    diag.nonzero_count.assign(static_cast<size_t>(n), 0);
    diag.degenerate_columns.clear();

    for (Eigen::Index j = 0; j < n; ++j) {
        const double mu = xi.col(j).cwiseAbs().maxCoeff();
        const double tau = mu / gamma;
        std::vector<Eigen::Index> support;
        for (Eigen::Index i = 0; i < L; ++i) {
            if (std::abs(xi(i, j)) >= tau && xi(i, j) != 0.0) {
                support.push_back(i);
            } else {
                xi(i, j) = 0.0;
            }
        }
        if (support.empty()) {
            diag.degenerate_columns.push_back(static_cast<int>(j));
            continue;
        }
        if (opt.refit) {
            Eigen::MatrixXd sub(theta.rows(), static_cast<Eigen::Index>(support.size()));
            for (size_t s = 0; s < support.size(); ++s) {
                sub.col(static_cast<Eigen::Index>(s)) = theta.col(support[s]);
            }
            Eigen::MatrixXd coef = least_squares(sub, xdot.col(j), opt, nullptr);
            for (size_t s = 0; s < support.size(); ++s) {
                xi(support[s], j) = coef(static_cast<Eigen::Index>(s), 0);
            }
        }
        diag.nonzero_count[static_cast<size_t>(j)] = static_cast<int>(support.size());
    }

    diag.residual_norm.resize(n);
    diag.relative_residual.resize(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        diag.residual_norm(j) = (xdot.col(j) - theta * xi.col(j)).norm();
        const double dn = xdot.col(j).norm();
        diag.relative_residual(j) = dn > 0.0 ? diag.residual_norm(j) / dn : 0.0;
    }
    return SparseModel(std::move(xi), std::move(spec), gamma, std::move(diag));
}

inline SparseModel feature_select_sparse_regression(const DataMatrices& data,
                                                    const LibrarySpec& spec, double gamma,
                                                    const RegressionOptions& opt = {}) {
    if (!(gamma > 1.0)) throw InvalidInputError("feature_select: gamma must exceed 1");
    const Eigen::MatrixXd theta = build_library(data, spec);
    FitDiagnostics diag;
    const Eigen::MatrixXd xi0 = least_squares(theta, data.xdot, opt, &diag);
    return feature_select_from_initial(theta, data.xdot, xi0, spec, gamma, opt, std::move(diag));
}

/// Normalized model residual on a data set: ||Xdot - Theta Xi||_F / ||Xdot||_F.
inline double validation_error(const SparseModel& model, const DataMatrices& data) {
    const Eigen::MatrixXd theta = build_library(data, model.library());
    const double dn = data.xdot.norm();
    if (!(dn > 0.0)) throw InvalidInputError("validation_error: zero-norm derivative matrix");
    return (data.xdot - theta * model.xi()).norm() / dn;
}

/// Coefficient table with one row per retained term and one column per state
/// derivative, in the layout used for reporting identified models.
inline std::string format_xi_table(const SparseModel& model) {
    std::ostringstream os;
    const auto& lib = model.library();
    const Eigen::Index n = model.n_states();
    os << std::left << std::setw(16) << "term";
    for (Eigen::Index j = 0; j < n; ++j) os << std::right << std::setw(12) << ("dx" + std::to_string(j + 1));
    os << "\n";
    for (Eigen::Index i = 0; i < lib.size(); ++i) {
        if ((model.xi().row(i).array() == 0.0).all()) continue;
        os << std::left << std::setw(16) << lib.term_name(lib.terms[static_cast<size_t>(i)]);
        for (Eigen::Index j = 0; j < n; ++j) {
            const double v = model.xi()(i, j);
            os << std::right << std::setw(12);
            if (v == 0.0) {
                os << "0";
            } else {
                std::ostringstream cell;
                cell << std::setprecision(6) << v;
                os << cell.str();
            }
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace pvdse
