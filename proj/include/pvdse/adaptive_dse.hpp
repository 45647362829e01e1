#pragma once

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pvdse/errors.hpp"
#include "pvdse/library.hpp"
#include "pvdse/observability.hpp"
#include "pvdse/preprocessing.hpp"
#include "pvdse/simulator.hpp"
#include "pvdse/sindy.hpp"
#include "pvdse/ukf.hpp"

namespace pvdse {

/// Identification-phase settings: window length, sparsity factor, smoothing and the
/// regression options. `state_noise_sigma` adds sensor-grade noise to the logged
/// states before smoothing, for studies that identify from imperfect feedback.
struct IdentificationConfig {
    double window = 0.5;
    double gamma = 15.0;
    SmoothingConfig smoothing;
    DiffMethod diff = DiffMethod::kForward;
    RegressionOptions regression;
    std::optional<LibrarySpec> library;  ///< default: default_pv_library(kind)
    double state_noise_sigma = 0.0;
    uint64_t noise_seed = 0;

    void validate(SystemKind kind, double dt) const {
        const LibrarySpec spec = library ? *library : default_pv_library(kind);
        if (window < 10.0 * static_cast<double>(spec.size()) * dt) {
            throw InvalidInputError(
                "IdentificationConfig: window too short for library of size " +
                std::to_string(spec.size()));
        }
    }
};

/// Extracts the rows of one unit's trajectory that fall in [t0, t0 + window).
inline SampledRecords window_records(const Trajectory& traj, size_t unit, double t0,
                                     double window) {
    SampledRecords rec;
    if (unit >= traj.n_units()) throw InvalidInputError("window_records: unit out of range");
    const double dt = traj.t.size() > 1 ? traj.t[1] - traj.t[0] : 0.0;
    std::vector<Eigen::Index> rows;
    for (size_t k = 0; k < traj.t.size(); ++k) {
        if (traj.t[k] >= t0 - 0.5 * dt && traj.t[k] < t0 + window - 0.5 * dt) {
            rows.push_back(static_cast<Eigen::Index>(k));
        }
    }
    if (rows.size() < 3) throw InvalidInputError("window_records: window contains too few samples");
    rec.t.reserve(rows.size());
    rec.x.resize(static_cast<Eigen::Index>(rows.size()), traj.states[unit].cols());
    rec.u.resize(static_cast<Eigen::Index>(rows.size()), traj.inputs[unit].cols());
    for (size_t i = 0; i < rows.size(); ++i) {
        rec.t.push_back(traj.t[static_cast<size_t>(rows[i])]);
        rec.x.row(static_cast<Eigen::Index>(i)) = traj.states[unit].row(rows[i]);
        rec.u.row(static_cast<Eigen::Index>(i)) = traj.inputs[unit].row(rows[i]);
    }
    return rec;
}

/// Drops the rows whose derivatives came from one-sided differences or from the
/// mirror-padded filter edges; those rows are inconsistent with the interior model.
inline DataMatrices trim_edge_rows(const DataMatrices& data, const SmoothingConfig& smoothing,
                                   DiffMethod diff) {
    Eigen::Index lead = diff == DiffMethod::kForward ? 0 : 1;
    Eigen::Index tail = 1;
    if (smoothing.enabled || diff == DiffMethod::kSavitzkyGolay) {
        lead = std::max<Eigen::Index>(lead, smoothing.window / 2);
        tail = std::max<Eigen::Index>(tail, smoothing.window / 2);
    }
    const Eigen::Index m = data.rows() - lead - tail;
    if (m < 3) throw InvalidInputError("trim_edge_rows: window too short");
    DataMatrices out;
    out.dt = data.dt;
    out.x = data.x.middleRows(lead, m);
    out.xdot = data.xdot.middleRows(lead, m);
    out.u = data.u.middleRows(lead, m);
    return out;
}

/// Identification phase: smooth the collected state feedback, assemble the data
/// matrices and run the feature-selection sparse regression.
inline SparseModel run_identification(SampledRecords rec, SystemKind kind,
                                      const IdentificationConfig& cfg) {
    if (cfg.state_noise_sigma > 0.0) {
        std::mt19937_64 rng(detail::splitmix64(cfg.noise_seed ^ 0x5bf0'3517'9af1'77c1ULL));
        std::normal_distribution<double> normal(0.0, cfg.state_noise_sigma);
        for (Eigen::Index i = 0; i < rec.x.rows(); ++i) {
            for (Eigen::Index j = 0; j < rec.x.cols(); ++j) rec.x(i, j) += normal(rng);
        }
    }
    const DataMatrices data =
        trim_edge_rows(assemble_matrices(rec, cfg.smoothing, cfg.diff), cfg.smoothing, cfg.diff);
    const LibrarySpec spec = cfg.library ? *cfg.library : default_pv_library(kind);
    SparseModel model = feature_select_sparse_regression(data, spec, cfg.gamma, cfg.regression);
    if (model.diagnostics().rank < spec.n_vars()) {
        throw IdentificationError("run_identification: candidate matrix rank " +
                                  std::to_string(model.diagnostics().rank) +
                                  " too low; data not sufficiently exciting");
    }
    return model;
}

inline SparseModel run_identification(const Trajectory& traj, size_t unit, SystemKind kind,
                                      const IdentificationConfig& cfg, double t0 = 0.0) {
    return run_identification(window_records(traj, unit, t0, cfg.window), kind, cfg);
}

/// Time-averaged relative deviation of the estimates from the truth:
/// (1/T) sum_k ||xhat_k - x_k|| / max(||x_k||, eps).
inline double normalized_error(const Eigen::MatrixXd& estimates, const Eigen::MatrixXd& truth,
                               double eps = 1e-9) {
    if (estimates.rows() != truth.rows() || estimates.cols() != truth.cols()) {
        throw InvalidInputError("normalized_error: series lengths differ");
    }
    if (estimates.rows() == 0) throw InvalidInputError("normalized_error: empty series");
    double acc = 0.0;
    for (Eigen::Index k = 0; k < estimates.rows(); ++k) {
        acc += (estimates.row(k) - truth.row(k)).norm() / std::max(truth.row(k).norm(), eps);
    }
    return acc / static_cast<double>(estimates.rows());
}

struct RetrainEvent {
    double t_start = 0.0;
    double t_swap = 0.0;
    bool success = false;
    double wall_seconds = 0.0;
    std::string message;
};

struct EstimationReport {
    std::vector<double> t;
    Eigen::MatrixXd estimates;   ///< one row per timestamp
    Eigen::MatrixXd truth;       ///< matching rows of the true trajectory
    Eigen::VectorXd trace_p;
    Eigen::VectorXd step_error;  ///< per-step relative deviation
    double error = std::numeric_limits<double>::quiet_NaN();  ///< normalized error, full horizon
    std::vector<RetrainEvent> retrains;
    double wall_seconds = 0.0;

    /// Mean per-step relative deviation over [t0, t1].
    double error_between(double t0, double t1) const {
        double acc = 0.0;
        long count = 0;
        for (size_t k = 0; k < t.size(); ++k) {
            if (t[k] >= t0 && t[k] <= t1) {
                acc += step_error(static_cast<Eigen::Index>(k));
                ++count;
            }
        }
        if (count == 0) throw InvalidInputError("error_between: empty window");
        return acc / static_cast<double>(count);
    }
};

struct EstimationConfig {
    Eigen::MatrixXd q;  ///< filter process intensity; per-step covariance is q * dt
    Eigen::MatrixXd r;
    Eigen::VectorXd initial_mean;
    Eigen::MatrixXd initial_cov;
    WeightConvention convention = WeightConvention::kConsistent;
    double error_eps = 1e-9;
};

namespace detail {

/// Shared predict/update loop. When `adaptive` is set, each announced parameter-change
/// time opens a fresh identification window; the filter keeps running on the stale
/// model during collection and the new model is swapped in at the window end.
inline EstimationReport estimate_loop(const SimulationResult& sim, const Scenario& scenario,
                                      size_t unit, TransitionModel model,
                                      const EstimationConfig& cfg,
                                      const std::vector<double>& retrain_times,
                                      const IdentificationConfig& id_cfg, bool adaptive) {
    const auto t_begin = std::chrono::steady_clock::now();
    const UnitConfig& ucfg = scenario.units[unit];
    const SelectorVerdict verdict = validate_selector(ucfg.kind, ucfg.selector, ucfg.params);
    if (!verdict.valid) {
        throw InvalidInputError("estimation refused, selector invalid: " + verdict.explanation);
    }

    const double dt = scenario.dt_sim;
    const Trajectory& traj = sim.trajectory;
    const MeasurementSeries interp = interpolate_measurements(sim.measurements, dt);

    // number of steps the unit stays active
    size_t n_active = traj.t.size();
    for (size_t k = 0; k < traj.t.size(); ++k) {
        if (traj.active[unit][k] == 0) {
            n_active = k;
            break;
        }
    }
    if (n_active < 2) throw InvalidInputError("estimate_loop: unit inactive from the start");

    const int n = state_dim(ucfg.kind);
    EstimationReport rep;
    rep.t.assign(traj.t.begin(), traj.t.begin() + static_cast<long>(n_active));
    rep.estimates.resize(static_cast<Eigen::Index>(n_active), n);
    rep.truth = traj.states[unit].topRows(static_cast<Eigen::Index>(n_active));
    rep.trace_p.resize(static_cast<Eigen::Index>(n_active));
    rep.step_error.resize(static_cast<Eigen::Index>(n_active));

    GaussianBelief belief{cfg.initial_mean, cfg.initial_cov};
    const Eigen::MatrixXd q_step = cfg.q * dt;
    rep.estimates.row(0) = belief.mean.transpose();
    rep.trace_p(0) = belief.cov.trace();
    rep.step_error(0) = (belief.mean.transpose() - rep.truth.row(0)).norm() /
                        std::max(rep.truth.row(0).norm(), cfg.error_eps);

    std::vector<double> pending(retrain_times);
    AugmentedInput u_a;
    for (size_t k = 0; k + 1 < n_active; ++k) {
        const double t_next = rep.t[k] + dt;
        if (adaptive && !pending.empty() && t_next >= pending.front() + id_cfg.window - 0.5 * dt) {
            RetrainEvent ev;
            ev.t_start = pending.front();
            ev.t_swap = t_next;
            const auto w_begin = std::chrono::steady_clock::now();
            try {
                auto retrained = std::make_shared<SparseModel>(
                    run_identification(traj, unit, ucfg.kind, id_cfg, ev.t_start));
                model = make_sparse_transition(retrained, dt);
                ev.success = true;
                ev.message = "model swapped";
            } catch (const Error& e) {
                ev.success = false;
                ev.message = e.what();  // keep filtering on the stale model
            }
            ev.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - w_begin).count();
            rep.retrains.push_back(std::move(ev));
            pending.erase(pending.begin());
        }

        u_a.u = traj.inputs[unit].row(static_cast<Eigen::Index>(k)).transpose();
        const Eigen::VectorXd y = interp.y[unit].row(static_cast<Eigen::Index>(k + 1)).transpose();
        belief = ukf_step(belief, u_a, y, model, q_step, cfg.r, ucfg.selector, cfg.convention);

        rep.estimates.row(static_cast<Eigen::Index>(k + 1)) = belief.mean.transpose();
        rep.trace_p(static_cast<Eigen::Index>(k + 1)) = belief.cov.trace();
        rep.step_error(static_cast<Eigen::Index>(k + 1)) =
            (belief.mean.transpose() - rep.truth.row(static_cast<Eigen::Index>(k + 1))).norm() /
            std::max(rep.truth.row(static_cast<Eigen::Index>(k + 1)).norm(), cfg.error_eps);
    }

    rep.error = normalized_error(rep.estimates, rep.truth, cfg.error_eps);
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_begin).count();
    return rep;
}

}  // namespace detail

/// Estimation phase over a simulated record with a fixed transition model.
inline EstimationReport run_estimation(const TransitionModel& model, const SimulationResult& sim,
                                       const Scenario& scenario, size_t unit,
                                       const EstimationConfig& cfg) {
    return detail::estimate_loop(sim, scenario, unit, model, cfg, {}, IdentificationConfig{},
                                 false);
}

/// Adaptive pipeline: on every announced parameter-change event the identification
/// window reopens, the filter continues on the stale model while data is collected,
/// and the freshly identified model is swapped in at the window end. Identification
/// failures are flagged in the report and filtering continues on the stale model.
inline EstimationReport run_adaptive(const TransitionModel& initial_model,
                                     const SimulationResult& sim, const Scenario& scenario,
                                     size_t unit, const EstimationConfig& cfg,
                                     const IdentificationConfig& id_cfg, bool adaptive = true) {
    std::vector<double> retrain_times;
    if (adaptive) {
        for (const Event& e : scenario.events) {
            if (e.type == Event::Type::kParamChange && e.unit == static_cast<int>(unit)) {
                retrain_times.push_back(e.time);
            }
        }
    }
    return detail::estimate_loop(sim, scenario, unit, initial_model, cfg, retrain_times, id_cfg,
                                 adaptive);
}

}  // namespace pvdse
