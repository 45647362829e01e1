#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pvdse/errors.hpp"
#include "pvdse/pv_models.hpp"
#include "pvdse/ukf.hpp"

namespace pvdse {

namespace detail {

inline uint64_t splitmix64(uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Deterministic four-level pseudo-random excitation value for chip k of a stream.
/// Two-level sequences would make squared input columns affine in the raw inputs,
/// which degenerates quadratic candidate libraries.
inline double prbs_level(uint64_t seed, uint64_t chip) {
    constexpr double levels[4] = {-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0};
    return levels[splitmix64(seed ^ splitmix64(chip + 1)) & 3ULL];
}

}  // namespace detail

/// Process/measurement noise description of one unit. q is interpreted as a
/// continuous-time intensity: the per-step disturbance is drawn as N(0, q) * sqrt(dt).
struct NoiseSpec {
    Eigen::MatrixXd q;  ///< n x n process covariance intensity
    Eigen::MatrixXd r;  ///< m x m measurement covariance
    uint64_t seed = 0;

    static NoiseSpec diagonal(int n, double q_sigma, int m, double r_sigma, uint64_t seed) {
        NoiseSpec s;
        s.q = q_sigma * Eigen::MatrixXd::Identity(n, n);
        s.r = r_sigma * Eigen::MatrixXd::Identity(m, m);
        s.seed = seed;
        return s;
    }
};

struct StepChange {
    double time = 0.0;
    int channel = 0;  ///< 0-based input channel
    double value = 0.0;
};

/// Piecewise-constant pseudo-random multilevel excitation around the scheduled value.
struct PrbsExcitation {
    int channel = 0;
    double amplitude = 0.0;
    double period = 5e-3;
    double t_start = 0.0;
    double t_end = 0.0;
    uint64_t seed = 0;
};

/// Linearized PV-source characteristic. The DC link of both converter topologies is
/// open-loop unstable under constant source injection, so long scenarios let the
/// source sag with its operating point the way an array I-V curve does:
/// single-stage Ipv -= gain * (Vdc - reference), two-stage Vpv -= gain * (Ipv - reference).
struct SourceDroop {
    bool enabled = false;
    double gain = 0.0;
    double reference = 0.0;
};

/// Piecewise-constant input schedule with optional excitation segments and source droop.
struct InputSchedule {
    Eigen::VectorXd base;
    std::vector<StepChange> steps;
    std::vector<PrbsExcitation> excitations;
    SourceDroop droop;

    /// Input vector at time t, before droop (droop needs the unit state).
    Eigen::VectorXd at(double t) const {
        Eigen::VectorXd u = base;
        for (const StepChange& s : steps) {
            if (t >= s.time) u(s.channel) = s.value;
        }
        for (const PrbsExcitation& e : excitations) {
            if (t >= e.t_start && t < e.t_end && e.period > 0.0) {
                const auto chip = static_cast<uint64_t>((t - e.t_start) / e.period);
                u(e.channel) += e.amplitude * detail::prbs_level(e.seed, chip);
            }
        }
        return u;
    }

    /// Applies the source droop for the given unit kind in place.
    void apply_droop(SystemKind kind, const Eigen::Ref<const Eigen::VectorXd>& x,
                     Eigen::VectorXd& u) const {
        if (!droop.enabled) return;
        if (kind == SystemKind::kSingleStage) {
            u(5) -= droop.gain * (x(6) - droop.reference);  // Ipv vs Vdc
        } else {
            u(5) -= droop.gain * (x(6) - droop.reference);  // Vpv vs Ipv
        }
    }
};

struct Event {
    enum class Type { kParamChange, kVoltageSag, kDisconnect };

    double time = 0.0;
    Type type = Type::kParamChange;
    int unit = 0;              ///< 0-based; param change / disconnect target
    std::string field;         ///< param change field name
    double value = 0.0;        ///< param change new value
    double fraction = 0.0;     ///< sag depth in (0, 1]
    std::vector<int> units;    ///< sag targets (empty = all units)

    static Event param_change(double t, int unit, std::string field, double value) {
        Event e;
        e.time = t;
        e.type = Type::kParamChange;
        e.unit = unit;
        e.field = std::move(field);
        e.value = value;
        return e;
    }
    static Event voltage_sag(double t, double fraction, std::vector<int> units = {}) {
        Event e;
        e.time = t;
        e.type = Type::kVoltageSag;
        e.fraction = fraction;
        e.units = std::move(units);
        return e;
    }
    static Event disconnect(double t, int unit) {
        Event e;
        e.time = t;
        e.type = Type::kDisconnect;
        e.unit = unit;
        return e;
    }
};

/// Estimation settings carried alongside a unit (Q, R, initial belief).
struct FilterConfig {
    Eigen::MatrixXd q;  ///< continuous intensity; per-step covariance is q * dt
    Eigen::MatrixXd r;
    Eigen::VectorXd initial_mean;
    Eigen::MatrixXd initial_cov;
};

struct UnitConfig {
    SystemKind kind = SystemKind::kSingleStage;
    PvParams params;
    Eigen::VectorXd x0;
    InputSchedule schedule;
    NoiseSpec noise;
    std::vector<int> selector = {5, 6, 7};
    std::optional<FilterConfig> filter;
};

struct Scenario {
    std::vector<UnitConfig> units;
    std::vector<Event> events;
    double t_end = 0.0;
    double dt_sim = 1e-4;
    double dt_meas = 1e-2;

    void validate() const {
        if (units.empty()) throw InvalidInputError("Scenario: no units");
        if (!(t_end > 0.0)) throw InvalidInputError("Scenario: t_end must be positive");
        if (!(dt_sim > 0.0) || dt_sim > dt_meas) {
            throw InvalidInputError("Scenario: require 0 < dt_sim <= dt_meas");
        }
        const double ratio = dt_meas / dt_sim;
        if (std::abs(ratio - std::round(ratio)) > 1e-6) {
            throw InvalidInputError("Scenario: dt_meas must be an integer multiple of dt_sim");
        }
        double prev = -1.0;
        for (const Event& e : events) {
            if (e.time < 0.0 || e.time > t_end) throw InvalidInputError("Scenario: event outside horizon");
            if (e.time < prev) throw InvalidInputError("Scenario: events must be time-ordered");
            prev = e.time;
            if (e.type == Event::Type::kVoltageSag && !(e.fraction > 0.0 && e.fraction <= 1.0)) {
                throw InvalidInputError("Scenario: sag fraction must lie in (0, 1]");
            }
            if (e.type != Event::Type::kVoltageSag &&
                (e.unit < 0 || e.unit >= static_cast<int>(units.size()))) {
                throw InvalidInputError("Scenario: event unit out of range");
            }
        }
        for (const UnitConfig& u : units) {
            u.params.validate(u.kind);
            if (u.x0.size() != state_dim(u.kind)) throw InvalidInputError("Scenario: x0 dimension");
            if (u.schedule.base.size() != input_dim(u.kind)) {
                throw InvalidInputError("Scenario: schedule dimension");
            }
        }
    }
};

/// True states, realized inputs and derivatives of every unit at the simulation rate.
struct Trajectory {
    std::vector<double> t;
    std::vector<Eigen::MatrixXd> states;   ///< per unit, (N+1) x n
    std::vector<Eigen::MatrixXd> inputs;   ///< per unit, (N+1) x d (droop included)
    std::vector<Eigen::MatrixXd> derivs;   ///< per unit, (N+1) x n
    std::vector<std::vector<char>> active; ///< per unit, per step

    size_t n_units() const { return states.size(); }
    Eigen::Index n_steps() const { return static_cast<Eigen::Index>(t.size()); }
};

/// Noisy sampled outputs of every unit at the measurement rate.
struct MeasurementSeries {
    std::vector<double> t;
    std::vector<Eigen::MatrixXd> y;  ///< per unit, M x m

    size_t n_units() const { return y.size(); }
};

struct SimulationResult {
    Trajectory trajectory;
    MeasurementSeries measurements;
};

/// One explicit-Euler step x + f(x, u) dt + w.
inline Eigen::VectorXd euler_step(SystemKind kind, const PvParams& p,
                                  const Eigen::Ref<const Eigen::VectorXd>& x,
                                  const Eigen::Ref<const Eigen::VectorXd>& u, double dt,
                                  const Eigen::Ref<const Eigen::VectorXd>& w) {
    if (!(dt > 0.0)) throw InvalidInputError("euler_step: dt must be positive");
    return x + derivative(kind, x, u, p) * dt + w;
}

/// Classical fourth-order Runge-Kutta step; kept as a verification oracle for the
/// Euler truth integrator (inputs held constant over the step).
inline Eigen::VectorXd rk4_step(SystemKind kind, const PvParams& p,
                                const Eigen::Ref<const Eigen::VectorXd>& x,
                                const Eigen::Ref<const Eigen::VectorXd>& u, double dt) {
    const Eigen::VectorXd k1 = derivative(kind, x, u, p);
    const Eigen::VectorXd k2 = derivative(kind, x + 0.5 * dt * k1, u, p);
    const Eigen::VectorXd k3 = derivative(kind, x + 0.5 * dt * k2, u, p);
    const Eigen::VectorXd k4 = derivative(kind, x + dt * k3, u, p);
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// Time-stepped simulation of all units with process noise, timed events and sampled
/// noisy measurements. Deterministic for a fixed scenario (including seeds).
inline SimulationResult simulate(const Scenario& scenario) {
    scenario.validate();
    const size_t n_units = scenario.units.size();
    const double dt = scenario.dt_sim;
    const auto n_steps = static_cast<Eigen::Index>(std::llround(scenario.t_end / dt));
    const auto meas_every = static_cast<Eigen::Index>(std::llround(scenario.dt_meas / dt));

    SimulationResult res;
    res.trajectory.t.resize(static_cast<size_t>(n_steps + 1));
    for (Eigen::Index k = 0; k <= n_steps; ++k) {
        res.trajectory.t[static_cast<size_t>(k)] = static_cast<double>(k) * dt;
    }
    const Eigen::Index n_meas = n_steps / meas_every + 1;
    res.measurements.t.resize(static_cast<size_t>(n_meas));
    for (Eigen::Index k = 0; k < n_meas; ++k) {
        res.measurements.t[static_cast<size_t>(k)] = static_cast<double>(k * meas_every) * dt;
    }

    struct UnitState {
        PvParams params;
        Eigen::VectorXd x;
        double grid_scale = 1.0;
        bool active = true;
        std::mt19937_64 rng;
        Eigen::MatrixXd q_root;  ///< upper-triangular, root^T root = q
        Eigen::MatrixXd r_root;
    };

    std::vector<UnitState> st(n_units);
    for (size_t i = 0; i < n_units; ++i) {
        const UnitConfig& cfg = scenario.units[i];
        st[i].params = cfg.params;
        st[i].x = cfg.x0;
        st[i].rng.seed(detail::splitmix64(cfg.noise.seed ^ detail::splitmix64(i)));
        const int n = state_dim(cfg.kind);
        const auto m = static_cast<int>(cfg.selector.size());
        Eigen::MatrixXd q = cfg.noise.q.size() > 0 ? cfg.noise.q : Eigen::MatrixXd::Zero(n, n);
        Eigen::MatrixXd r = cfg.noise.r.size() > 0 ? cfg.noise.r : Eigen::MatrixXd::Zero(m, m);
        if (q.rows() != n || q.cols() != n) throw InvalidInputError("simulate: q dimension");
        if (r.rows() != m || r.cols() != m) throw InvalidInputError("simulate: r dimension");
        st[i].q_root = matrix_sqrt(q, 1.0);
        st[i].r_root = matrix_sqrt(r, 1.0);
        res.trajectory.states.emplace_back(n_steps + 1, n);
        res.trajectory.inputs.emplace_back(n_steps + 1, input_dim(cfg.kind));
        res.trajectory.derivs.emplace_back(n_steps + 1, n);
        res.trajectory.active.emplace_back(static_cast<size_t>(n_steps + 1), char{1});
        res.measurements.y.emplace_back(n_meas, m);
    }

    std::normal_distribution<double> normal(0.0, 1.0);
    auto draw = [&normal](std::mt19937_64& rng, Eigen::Index n) {
        Eigen::VectorXd z(n);
        for (Eigen::Index i = 0; i < n; ++i) z(i) = normal(rng);
        return z;
    };

    size_t next_event = 0;
    for (Eigen::Index k = 0; k <= n_steps; ++k) {
        const double t = static_cast<double>(k) * dt;
        // apply due events in list order
        while (next_event < scenario.events.size() &&
               t >= scenario.events[next_event].time - 0.5 * dt) {
            const Event& e = scenario.events[next_event];
            switch (e.type) {
                case Event::Type::kParamChange: {
                    double* f = st[static_cast<size_t>(e.unit)].params.field(e.field);
                    if (f == nullptr) throw InvalidInputError("simulate: unknown field " + e.field);
                    *f = e.value;
                    break;
                }
                case Event::Type::kVoltageSag: {
                    if (e.units.empty()) {
                        for (auto& s : st) s.grid_scale = 1.0 - e.fraction;
                    } else {
                        for (int u : e.units) st[static_cast<size_t>(u)].grid_scale = 1.0 - e.fraction;
                    }
                    break;
                }
                case Event::Type::kDisconnect:
                    st[static_cast<size_t>(e.unit)].active = false;
                    break;
            }
            ++next_event;
        }

        for (size_t i = 0; i < n_units; ++i) {
            const UnitConfig& cfg = scenario.units[i];
            UnitState& s = st[i];
            const int n = state_dim(cfg.kind);
            res.trajectory.active[i][static_cast<size_t>(k)] = s.active ? 1 : 0;
            res.trajectory.states[i].row(k) = s.x.transpose();

            if (!s.active) {
                res.trajectory.inputs[i].row(k).setZero();
                res.trajectory.derivs[i].row(k).setZero();
                if (k % meas_every == 0) res.measurements.y[i].row(k / meas_every).setZero();
                continue;
            }

            Eigen::VectorXd u = cfg.schedule.at(t);
            u(2) *= s.grid_scale;
            u(3) *= s.grid_scale;
            cfg.schedule.apply_droop(cfg.kind, s.x, u);
            res.trajectory.inputs[i].row(k) = u.transpose();

            const Eigen::VectorXd f = derivative(cfg.kind, s.x, u, s.params);
            res.trajectory.derivs[i].row(k) = f.transpose();

            if (k % meas_every == 0) {
                const Eigen::VectorXd v =
                    s.r_root.transpose() * draw(s.rng, s.r_root.cols());
                res.measurements.y[i].row(k / meas_every) =
                    (measurement(s.x, cfg.selector) + v).transpose();
            }

            if (k < n_steps) {
                const Eigen::VectorXd w =
                    std::sqrt(dt) * (s.q_root.transpose() * draw(s.rng, n));
                s.x += f * dt + w;
            }
        }
    }
    return res;
}

/// Seven-unit microgrid wrapper: units are coupled through the shared grid-voltage
/// input (stiff bus), so the generic multi-unit simulation applies directly.
inline SimulationResult simulate_microgrid(const Scenario& scenario) {
    if (scenario.units.size() != 7) {
        throw InvalidInputError("simulate_microgrid: expected 7 configured units");
    }
    return simulate(scenario);
}

/// Piecewise-linear resampling of a measurement series onto a finer grid; endpoints
/// are preserved and times past the last sample hold the final value.
inline MeasurementSeries interpolate_measurements(const MeasurementSeries& series,
                                                  double target_dt) {
    if (series.t.empty()) throw InvalidInputError("interpolate_measurements: empty series");
    const double spacing = series.t.size() > 1 ? series.t[1] - series.t[0] : target_dt;
    if (!(target_dt > 0.0) || target_dt > spacing + 1e-12) {
        throw InvalidInputError("interpolate_measurements: target_dt must not exceed series spacing");
    }
    MeasurementSeries out;
    const double t_end = series.t.back();
    const auto n_out = static_cast<Eigen::Index>(std::llround(t_end / target_dt));
    out.t.resize(static_cast<size_t>(n_out + 1));
    for (Eigen::Index k = 0; k <= n_out; ++k) out.t[static_cast<size_t>(k)] = static_cast<double>(k) * target_dt;

    for (const Eigen::MatrixXd& y : series.y) {
        Eigen::MatrixXd yi(n_out + 1, y.cols());
        for (Eigen::Index k = 0; k <= n_out; ++k) {
            const double t = out.t[static_cast<size_t>(k)];
            const double pos = t / spacing;
            auto lo = static_cast<Eigen::Index>(std::floor(pos));
            if (lo >= y.rows() - 1) {
                yi.row(k) = y.row(y.rows() - 1);
                continue;
            }
            const double frac = pos - static_cast<double>(lo);
            yi.row(k) = (1.0 - frac) * y.row(lo) + frac * y.row(lo + 1);
        }
        out.y.push_back(std::move(yi));
    }
    return out;
}

}  // namespace pvdse
