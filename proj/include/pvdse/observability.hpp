#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <string>
#include <vector>

#include "pvdse/errors.hpp"
#include "pvdse/pv_models.hpp"

namespace pvdse {

struct ObservabilityReport {
    int rank = 0;
    bool full_rank = false;
    Eigen::VectorXd singular_values;
    std::vector<int> selector;  ///< 1-based, empty when the check was run on raw matrices
};

/// Kalman observability matrix [C; CA; CA^2; ...; CA^(n-1)].
/// A is normalized before taking powers so that ||A||^(n-1) cannot overflow the
/// stacked blocks; scaling rows of a matrix leaves its rank unchanged.
inline Eigen::MatrixXd observability_matrix(const Eigen::Ref<const Eigen::MatrixXd>& a,
                                            const Eigen::Ref<const Eigen::MatrixXd>& c) {
    if (a.rows() != a.cols()) throw InvalidInputError("observability_matrix: A must be square");
    if (c.cols() != a.rows()) throw InvalidInputError("observability_matrix: C column count must match A");
    const Eigen::Index n = a.rows();
    const Eigen::Index p = c.rows();
    const double scale = a.cwiseAbs().maxCoeff();
    const Eigen::MatrixXd a_norm = scale > 0.0 ? Eigen::MatrixXd(a / scale) : Eigen::MatrixXd(a);

    Eigen::MatrixXd obs(n * p, n);
    Eigen::MatrixXd block = c;
    obs.topRows(p) = block;
    for (Eigen::Index k = 1; k < n; ++k) {
        block = block * a_norm;
        obs.middleRows(k * p, p) = block;
    }
    return obs;
}

/// Numerical rank check via singular values with relative threshold tol * sigma_max.
inline ObservabilityReport check_observability(const Eigen::Ref<const Eigen::MatrixXd>& a,
                                               const Eigen::Ref<const Eigen::MatrixXd>& c,
                                               double tol = 1e-8) {
    if (!(tol > 0.0)) throw InvalidInputError("check_observability: tol must be positive");
    ObservabilityReport rep;
    if (c.rows() == 0) {
        rep.rank = 0;
        rep.full_rank = a.rows() == 0;
        return rep;
    }
    const Eigen::MatrixXd obs = observability_matrix(a, c);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(obs);
    rep.singular_values = svd.singularValues();
    const double smax = rep.singular_values.size() > 0 ? rep.singular_values(0) : 0.0;
    rep.rank = smax > 0.0
                   ? static_cast<int>((rep.singular_values.array() > tol * smax).count())
                   : 0;
    rep.full_rank = rep.rank == a.rows();
    return rep;
}

/// Selection matrix over the 6-state AC subsystem built from the 1-based selector
/// entries that fall within the AC block.
inline Eigen::MatrixXd ac_selection_matrix(const std::vector<int>& selector) {
    std::vector<int> ac;
    for (int idx : selector) {
        if (idx >= 1 && idx <= 6) ac.push_back(idx);
    }
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ac.size()), 6);
    for (size_t i = 0; i < ac.size(); ++i) c(static_cast<Eigen::Index>(i), ac[i] - 1) = 1.0;
    return c;
}

struct SelectorVerdict {
    bool valid = false;
    std::string explanation;
    ObservabilityReport ac_report;
};

/// The PV systems split into a linear AC subsystem in cascade with the DC-side
/// dynamics. A selector is accepted when it (a) renders the AC subsystem observable
/// and (b) covers the cascade: the single-stage DC link has one state (x7), which must
/// be measured; the two-stage DC side has two mutually coupled states (x7, x8), of
/// which at least one must be measured.
inline SelectorVerdict validate_selector(SystemKind kind, const std::vector<int>& selector,
                                         const PvParams& params, double tol = 1e-8) {
    const int n = state_dim(kind);
    for (int idx : selector) {
        if (idx < 1 || idx > n) {
            throw InvalidInputError("validate_selector: index " + std::to_string(idx) +
                                    " out of range for " + to_string(kind));
        }
    }
    SelectorVerdict v;
    const AcMatrices m = build_ac_matrices(params);
    v.ac_report = check_observability(m.a, ac_selection_matrix(selector), tol);
    v.ac_report.selector = selector;
    if (!v.ac_report.full_rank) {
        v.explanation = "AC subsystem unobservable: observability matrix rank " +
                        std::to_string(v.ac_report.rank) + " < 6";
        return v;
    }
    auto measured = [&selector](int idx) {
        return std::find(selector.begin(), selector.end(), idx) != selector.end();
    };
    if (kind == SystemKind::kSingleStage) {
        if (!measured(7)) {
            v.explanation = "DC-link state x7 is the single cascaded state and must be measured";
            return v;
        }
    } else {
        if (!measured(7) && !measured(8)) {
            v.explanation = "neither x7 nor x8 measured; one of the coupled DC states is required";
            return v;
        }
    }
    v.valid = true;
    v.explanation = "AC subsystem observable (rank 6) and cascade rule satisfied";
    return v;
}

inline SelectorVerdict validate_selector(SystemKind kind, const std::vector<int>& selector) {
    return validate_selector(kind, selector, default_params(kind));
}

}  // namespace pvdse
