#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "pvdse/errors.hpp"
#include "pvdse/pv_models.hpp"
#include "pvdse/sindy.hpp"

namespace pvdse {

struct GaussianBelief {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

/// Upper-triangular S with S^T S = scale * p. Starts from a plain Cholesky
/// factorization and, when that fails, retries with diagonal jitter growing from
/// 1e-12*trace(p)/n to 1e-6*trace(p)/n.
inline Eigen::MatrixXd matrix_sqrt(const Eigen::Ref<const Eigen::MatrixXd>& p, double scale) {
    if (p.rows() != p.cols()) throw InvalidInputError("matrix_sqrt: matrix must be square");
    const Eigen::Index n = p.rows();
    if (p.isZero(0.0)) return Eigen::MatrixXd::Zero(n, n);
    const double trace_scale = p.trace() / static_cast<double>(n);
    double jitter = 0.0;
    const double jitter_max = 1e-6 * std::abs(trace_scale);
    while (true) {
        Eigen::MatrixXd m = scale * (p + jitter * Eigen::MatrixXd::Identity(n, n));
        Eigen::LLT<Eigen::MatrixXd> llt(m);
        if (llt.info() == Eigen::Success) {
            return llt.matrixU();
        }
        if (jitter == 0.0) {
            jitter = 1e-12 * std::abs(trace_scale);
            if (!(jitter > 0.0)) break;
        } else {
            jitter *= 2.0;
        }
        if (jitter > jitter_max) break;
    }
    throw FactorizationError("matrix_sqrt: covariance not positive semidefinite after maximum jitter");
}

/// The 2n+1 equal-weight sigma points of a Gaussian belief, stored column-wise with
/// the mean in column 0 and symmetric pairs (i, n+i).
struct SigmaSet {
    Eigen::MatrixXd points;  ///< n x (2n+1)

    Eigen::Index dim() const { return points.rows(); }
    Eigen::Index count() const { return points.cols(); }
};

inline SigmaSet sigma_points(const GaussianBelief& belief) {
    const Eigen::Index n = belief.mean.size();
    if (belief.cov.rows() != n || belief.cov.cols() != n) {
        throw InvalidInputError("sigma_points: covariance dimension mismatch");
    }
    const Eigen::MatrixXd s = matrix_sqrt(belief.cov, static_cast<double>(n));
    SigmaSet set;
    set.points.resize(n, 2 * n + 1);
    set.points.col(0) = belief.mean;
    for (Eigen::Index i = 0; i < n; ++i) {
        set.points.col(1 + i) = belief.mean + s.row(i).transpose();
        set.points.col(1 + n + i) = belief.mean - s.row(i).transpose();
    }
    return set;
}

/// Inputs seen by the transition model: the physical inputs plus the vector of
/// announced model parameters subject to change.
struct AugmentedInput {
    Eigen::VectorXd u;
    Eigen::VectorXd d;
};

/// Evaluable state-transition model. Continuous models supply a derivative and are
/// stepped by explicit Euler; a discrete map can be supplied directly.
struct TransitionModel {
    std::function<Eigen::VectorXd(const Eigen::VectorXd&, const AugmentedInput&)> derivative;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&, const AugmentedInput&)> discrete_map;
    double dt = 0.0;

    Eigen::VectorXd step(const Eigen::VectorXd& x, const AugmentedInput& u_a) const {
        if (discrete_map) return discrete_map(x, u_a);
        if (!derivative) throw InvalidInputError("TransitionModel: no map configured");
        if (!(dt > 0.0)) throw InvalidInputError("TransitionModel: dt must be positive");
        return x + derivative(x, u_a) * dt;
    }
};

/// Physics-based transition. When `augmented_fields` is nonempty, the entries of
/// AugmentedInput::d override the named parameters at every evaluation.
inline TransitionModel make_physics_transition(SystemKind kind, PvParams params, double dt,
                                               std::vector<std::string> augmented_fields = {}) {
    TransitionModel m;
    m.dt = dt;
    m.derivative = [kind, params, fields = std::move(augmented_fields)](
                       const Eigen::VectorXd& x, const AugmentedInput& u_a) {
        if (fields.empty()) return derivative(kind, x, u_a.u, params);
        PvParams p = params;
        if (u_a.d.size() != static_cast<Eigen::Index>(fields.size())) {
            throw InvalidInputError("augmented input dimension does not match parameter fields");
        }
        for (size_t i = 0; i < fields.size(); ++i) {
            double* f = p.field(fields[i]);
            if (f == nullptr) throw InvalidInputError("unknown parameter field " + fields[i]);
            *f = u_a.d(static_cast<Eigen::Index>(i));
        }
        return derivative(kind, x, u_a.u, p);
    };
    return m;
}

inline TransitionModel make_sparse_transition(std::shared_ptr<const SparseModel> model, double dt) {
    TransitionModel m;
    m.dt = dt;
    m.derivative = [model = std::move(model)](const Eigen::VectorXd& x, const AugmentedInput& u_a) {
        return model->evaluate(x, u_a.u);
    };
    return m;
}

/// Moment composition of the measurement transform.
/// kConsistent (default) redraws sigma points from the predicted belief and uses the
/// 1/(2n) pair weights for P_y and P_xy, which makes the filter coincide with the
/// standard Kalman filter on linear-Gaussian systems. kPaperVerbatim reuses the
/// propagated points and averages all 2n+1 deviations, a variant that carries a
/// 2n/(2n+1) shrinkage of the output moments.
enum class WeightConvention { kConsistent, kPaperVerbatim };

struct PredictResult {
    GaussianBelief prior;   ///< predicted mean and covariance (Q included)
    Eigen::VectorXd y_hat;  ///< predicted output mean
    Eigen::MatrixXd p_y;    ///< output covariance, R included
    Eigen::MatrixXd p_xy;   ///< state/output cross-covariance
    Eigen::MatrixXd sigma_y;  ///< output sigma points
};

inline PredictResult predict(const GaussianBelief& belief, const AugmentedInput& u_a,
                             const TransitionModel& model, const Eigen::MatrixXd& q,
                             const std::vector<int>& selector, const Eigen::MatrixXd& r,
                             WeightConvention convention = WeightConvention::kConsistent) {
    const Eigen::Index n = belief.mean.size();
    const Eigen::Index n_sigma = 2 * n + 1;
    SigmaSet set = sigma_points(belief);

    Eigen::MatrixXd propagated(n, n_sigma);
    for (Eigen::Index i = 0; i < n_sigma; ++i) {
        try {
            propagated.col(i) = model.step(set.points.col(i), u_a);
        } catch (const SingularityError& e) {
            throw SingularityError("predict: sigma point " + std::to_string(i) + ": " + e.what());
        }
    }

    PredictResult res;
    res.prior.mean = propagated.rowwise().mean();
    Eigen::MatrixXd dev = propagated.rightCols(2 * n).colwise() - res.prior.mean;
    res.prior.cov = (dev * dev.transpose()) / (2.0 * static_cast<double>(n)) + q;
    res.prior.cov = 0.5 * (res.prior.cov + res.prior.cov.transpose()).eval();

    const Eigen::Index m = static_cast<Eigen::Index>(selector.size());
    res.sigma_y.resize(m, n_sigma);
    if (convention == WeightConvention::kConsistent) {
        SigmaSet redraw = sigma_points(res.prior);
        for (Eigen::Index i = 0; i < n_sigma; ++i) {
            res.sigma_y.col(i) = measurement(redraw.points.col(i), selector);
        }
        res.y_hat = res.sigma_y.rowwise().mean();
        Eigen::MatrixXd ydev = res.sigma_y.rightCols(2 * n).colwise() - res.y_hat;
        Eigen::MatrixXd xdev = redraw.points.rightCols(2 * n).colwise() - res.prior.mean;
        res.p_y = (ydev * ydev.transpose()) / (2.0 * static_cast<double>(n)) + r;
        res.p_xy = (xdev * ydev.transpose()) / (2.0 * static_cast<double>(n));
    } else {
        for (Eigen::Index i = 0; i < n_sigma; ++i) {
            res.sigma_y.col(i) = measurement(propagated.col(i), selector);
        }
        res.y_hat = res.sigma_y.rowwise().mean();
        Eigen::MatrixXd ydev = res.sigma_y.colwise() - res.y_hat;
        Eigen::MatrixXd xdev = propagated.colwise() - res.prior.mean;
        res.p_y = (ydev * ydev.transpose()) / static_cast<double>(n_sigma) + r;
        res.p_xy = (xdev * ydev.transpose()) / static_cast<double>(n_sigma);
    }
    res.p_y = 0.5 * (res.p_y + res.p_y.transpose()).eval();
    return res;
}

/// Measurement update. P_y already includes R, so the Kalman gain is
/// K = P_xy P_y^-1 and the posterior covariance P+ = P- - K P_y K^T.
inline GaussianBelief update(const PredictResult& pred, const Eigen::Ref<const Eigen::VectorXd>& y) {
    if (y.size() != pred.y_hat.size()) throw InvalidInputError("update: measurement dimension mismatch");
    Eigen::LDLT<Eigen::MatrixXd> ldlt(pred.p_y);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
        throw FactorizationError("update: singular innovation covariance");
    }
    const Eigen::MatrixXd gain = ldlt.solve(pred.p_xy.transpose()).transpose();
    GaussianBelief post;
    post.mean = pred.prior.mean + gain * (y - pred.y_hat);
    post.cov = pred.prior.cov - gain * pred.p_y * gain.transpose();
    post.cov = 0.5 * (post.cov + post.cov.transpose()).eval();
    return post;
}

inline GaussianBelief ukf_step(const GaussianBelief& belief, const AugmentedInput& u_a,
                               const Eigen::Ref<const Eigen::VectorXd>& y,
                               const TransitionModel& model, const Eigen::MatrixXd& q,
                               const Eigen::MatrixXd& r, const std::vector<int>& selector,
                               WeightConvention convention = WeightConvention::kConsistent) {
    return update(predict(belief, u_a, model, q, selector, r, convention), y);
}

}  // namespace pvdse
