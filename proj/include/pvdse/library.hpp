#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "pvdse/errors.hpp"
#include "pvdse/pv_models.hpp"
#include "pvdse/preprocessing.hpp"

namespace pvdse {

enum class TermKind { kConstant, kLinear, kPoly2, kPoly3, kSin, kRational };

/// One candidate function over the concatenated variable vector v = [x; u].
/// Variable indices address v; monomial indices are kept sorted so that descriptors
/// are canonical and uniqueness can be enforced.
struct Term {
    TermKind kind = TermKind::kConstant;
    std::array<int, 3> vars = {-1, -1, -1};  ///< poly/sin/linear variables; rational numerator pair
    int denominator = -1;                    ///< rational denominator variable

    static Term constant() { return Term{TermKind::kConstant, {-1, -1, -1}, -1}; }
    static Term linear(int v) { return Term{TermKind::kLinear, {v, -1, -1}, -1}; }
    static Term poly2(int a, int b) {
        if (a > b) std::swap(a, b);
        return Term{TermKind::kPoly2, {a, b, -1}, -1};
    }
    static Term poly3(int a, int b, int c) {
        std::array<int, 3> v{a, b, c};
        std::sort(v.begin(), v.end());
        return Term{TermKind::kPoly3, v, -1};
    }
    static Term sine(int v) { return Term{TermKind::kSin, {v, -1, -1}, -1}; }
    static Term rational(int num_a, int num_b, int den) {
        if (num_a > num_b) std::swap(num_a, num_b);
        return Term{TermKind::kRational, {num_a, num_b, -1}, den};
    }

    auto operator<=>(const Term&) const = default;
};

/// Ordered list of candidate terms over (x, u) together with the dimensions it indexes.
struct LibrarySpec {
    int n_states = 0;
    int n_inputs = 0;
    std::vector<Term> terms;
    double rational_floor = kDcVoltageFloor;  ///< |denominator| floor for rational terms

    int n_vars() const { return n_states + n_inputs; }
    Eigen::Index size() const { return static_cast<Eigen::Index>(terms.size()); }

    std::string var_name(int v) const {
        return v < n_states ? "x" + std::to_string(v + 1)
                            : "u" + std::to_string(v - n_states + 1);
    }

    std::string term_name(const Term& t) const {
        switch (t.kind) {
            case TermKind::kConstant:
                return "1";
            case TermKind::kLinear:
                return var_name(t.vars[0]);
            case TermKind::kPoly2:
                return var_name(t.vars[0]) + "*" + var_name(t.vars[1]);
            case TermKind::kPoly3:
                return var_name(t.vars[0]) + "*" + var_name(t.vars[1]) + "*" + var_name(t.vars[2]);
            case TermKind::kSin:
                return "sin(" + var_name(t.vars[0]) + ")";
            case TermKind::kRational:
                return var_name(t.vars[0]) + "*" + var_name(t.vars[1]) + "/" + var_name(t.denominator);
        }
        return "?";
    }

    void validate() const {
        std::set<Term> seen;
        for (const Term& t : t_range()) {
            for (int v : t.vars) {
                if (v >= n_vars()) throw InvalidInputError("LibrarySpec: variable index out of range");
            }
            if (t.denominator >= n_vars()) {
                throw InvalidInputError("LibrarySpec: denominator index out of range");
            }
            if (!seen.insert(t).second) {
                throw InvalidInputError("LibrarySpec: duplicate term " + term_name(t));
            }
        }
    }

    const std::vector<Term>& t_range() const { return terms; }

    /// Index of a term within the library, or -1 when absent.
    Eigen::Index index_of(const Term& t) const {
        auto it = std::find(terms.begin(), terms.end(), t);
        return it == terms.end() ? -1 : static_cast<Eigen::Index>(it - terms.begin());
    }
};

namespace detail {

inline double eval_term(const Term& t, const Eigen::Ref<const Eigen::VectorXd>& v,
                        double rational_floor) {
    switch (t.kind) {
        case TermKind::kConstant:
            return 1.0;
        case TermKind::kLinear:
            return v(t.vars[0]);
        case TermKind::kPoly2:
            return v(t.vars[0]) * v(t.vars[1]);
        case TermKind::kPoly3:
            return v(t.vars[0]) * v(t.vars[1]) * v(t.vars[2]);
        case TermKind::kSin:
            return std::sin(v(t.vars[0]));
        case TermKind::kRational: {
            const double den = v(t.denominator);
            if (!(std::abs(den) > rational_floor)) {
                throw SingularityError("library term denominator below floor");
            }
            return v(t.vars[0]) * v(t.vars[1]) / den;
        }
    }
    return 0.0;
}

}  // namespace detail

/// Evaluates one library row theta(x, u) in spec order.
inline Eigen::VectorXd library_row(const LibrarySpec& spec,
                                   const Eigen::Ref<const Eigen::VectorXd>& x,
                                   const Eigen::Ref<const Eigen::VectorXd>& u) {
    if (x.size() != spec.n_states || u.size() != spec.n_inputs) {
        throw InvalidInputError("library_row: dimensions do not match spec");
    }
    Eigen::VectorXd v(spec.n_vars());
    v << x, u;
    Eigen::VectorXd row(spec.size());
    for (Eigen::Index i = 0; i < spec.size(); ++i) {
        row(i) = detail::eval_term(spec.terms[static_cast<size_t>(i)], v, spec.rational_floor);
    }
    return row;
}

/// Stacks library rows for every sample of the data matrices: Theta is m x L.
inline Eigen::MatrixXd build_library(const DataMatrices& data, const LibrarySpec& spec) {
    if (data.x.cols() != spec.n_states || data.u.cols() != spec.n_inputs) {
        throw InvalidInputError("build_library: data dimensions do not match spec");
    }
    const Eigen::Index m = data.rows();
    Eigen::MatrixXd theta(m, spec.size());
    Eigen::VectorXd v(spec.n_vars());
    for (Eigen::Index k = 0; k < m; ++k) {
        v << data.x.row(k).transpose(), data.u.row(k).transpose();
        for (Eigen::Index i = 0; i < spec.size(); ++i) {
            theta(k, i) = detail::eval_term(spec.terms[static_cast<size_t>(i)], v,
                                            spec.rational_floor);
        }
    }
    return theta;
}

/// Default candidate library for PV identification: constant, all linear terms,
/// degree-2 monomials over (x, u), degree-3 monomials over the states, and pairwise
/// rational terms over the DC-link voltage.
///
/// Three pruning rules keep the candidate set identifiable (and the 0.5 s window at
/// least ten rows deep per candidate) on data collected at fixed grid frequency:
///  - The constant input w0 is excluded from monomial and rational families (any
///    monomial containing it duplicates a lower-order column exactly).
///  - Cubic monomials range over states only; inputs enter converter physics at most
///    bilinearly.
///  - sin() terms are omitted: every PV variable carries arguments of hundreds of
///    radians, which alias at the 0.1 ms sample time.
inline LibrarySpec default_pv_library(SystemKind kind) {
    LibrarySpec spec;
    spec.n_states = state_dim(kind);
    spec.n_inputs = input_dim(kind);
    spec.rational_floor = kDcVoltageFloor;

    const int w0_var = spec.n_states + 4;  // fifth input channel
    const int dc_var = dc_voltage_index(kind);

    std::vector<int> poly_vars;
    for (int v = 0; v < spec.n_vars(); ++v) {
        if (v != w0_var) poly_vars.push_back(v);
    }

    spec.terms.push_back(Term::constant());
    for (int v = 0; v < spec.n_vars(); ++v) spec.terms.push_back(Term::linear(v));
    for (size_t a = 0; a < poly_vars.size(); ++a) {
        for (size_t b = a; b < poly_vars.size(); ++b) {
            spec.terms.push_back(Term::poly2(poly_vars[a], poly_vars[b]));
        }
    }
    for (int a = 0; a < spec.n_states; ++a) {
        for (int b = a; b < spec.n_states; ++b) {
            for (int c = b; c < spec.n_states; ++c) {
                spec.terms.push_back(Term::poly3(a, b, c));
            }
        }
    }
    // Rational candidates cover the DC-link power balance: current-times-voltage
    // products over the DC-link voltage, i.e. the shape of an instantaneous power
    // divided by Vdc. Current-current or voltage-voltage numerators carry no power
    // interpretation and their columns (tiny numerators against a slowly varying
    // denominator) only shadow the quadratic family and poison the conditioning.
    const std::vector<int> currents = {2, 3};
    const std::vector<int> voltages = {4, 5, spec.n_states + 2, spec.n_states + 3};
    for (int i : currents) {
        for (int v : voltages) {
            spec.terms.push_back(Term::rational(i, v, dc_var));
        }
    }
    spec.validate();
    return spec;
}

}  // namespace pvdse
