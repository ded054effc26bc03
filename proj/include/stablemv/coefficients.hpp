#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "stablemv/errors.hpp"
#include "stablemv/measure.hpp"
#include "stablemv/metrics.hpp"
#include "stablemv/rng.hpp"

namespace stablemv {

// Constants the coefficients declare they satisfy.
struct DeclaredConstants {
    double alpha = 1.5;
    double beta = 0.5;
    double k = 1.2;
    double eta = 0.5;
    double K1 = 2.0;
    double K2 = 2.0;
    double b_sup = 1.0;

    // Violations, each message naming the assumption it breaks.
    std::vector<std::string> violations() const {
        std::vector<std::string> out;
        if (!(alpha > 1.0 && alpha < 2.0)) out.push_back("(A1) requires alpha in (1,2), got " + csv::format(alpha));
        if (!(beta > 0.0 && beta < 1.0)) out.push_back("(A2) requires beta in (0,1), got " + csv::format(beta));
        if (!(2.0 * beta + alpha > 2.0))
            out.push_back("(A2) requires beta in (0,1) satisfying 2beta+alpha>2, got 2beta+alpha=" +
                          csv::format(2.0 * beta + alpha));
        if (!(k >= 1.0 && k < alpha))
            out.push_back("(A2) requires k in [1,alpha), got k=" + csv::format(k) + " with alpha=" + csv::format(alpha));
        if (!(K1 > 0.0)) out.push_back("(A2) requires K1 > 0");
        if (!(b_sup >= 0.0 && std::isfinite(b_sup))) out.push_back("(A2) requires a finite bound on |b|");
        if (!(K2 >= 1.0)) out.push_back("(A3) requires K2 >= 1, got " + csv::format(K2));
        if (!(eta > 0.0 && eta < 1.0)) out.push_back("(A3) requires eta in (0,1), got " + csv::format(eta));
        return out;
    }

    void validate() const {
        const auto v = violations();
        if (!v.empty()) throw AssumptionError(v.front());
    }
};

// x -> b(t, x, mu) for a frozen (t, mu); writes d values into out.
using DriftField = std::function<void(std::span<const double> x, std::span<double> out)>;

struct CoefficientSet {
    std::string name;
    int dim = 1;
    int noise_dim = 1;
    DeclaredConstants constants;
    std::function<DriftField(double t, const EmpiricalMeasure& mu)> drift;
    std::function<Eigen::MatrixXd(double t, const EmpiricalMeasure& nu)> noise;

    // sigma(t, nu) after checking K2^{-1} I <= sigma sigma^* <= K2 I.
    Eigen::MatrixXd checked_noise(double t, const EmpiricalMeasure& nu) const {
        Eigen::MatrixXd s = noise(t, nu);
        if (s.rows() != dim || s.cols() != noise_dim)
            throw DomainError("noise callback returned a " + std::to_string(s.rows()) + "x" +
                              std::to_string(s.cols()) + " matrix, expected " + std::to_string(dim) + "x" +
                              std::to_string(noise_dim));
        const Eigen::MatrixXd a = s * s.transpose();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a, Eigen::EigenvaluesOnly);
        const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
        const double K2 = constants.K2;
        if (!(lo >= 1.0 / K2 * (1.0 - 1e-12) && hi <= K2 * (1.0 + 1e-12)))
            throw AssumptionError("(A3) violated at t=" + csv::format(t) + ": eigenvalues of sigma sigma^* in [" +
                                  csv::format(lo) + ", " + csv::format(hi) + "], declared K2=" + csv::format(K2));
        return s;
    }

    void validate() const {
        if (!drift || !noise) throw DomainError("coefficient set '" + name + "' is missing a callback");
        if (dim < 1 || noise_dim < 1) throw DomainError("coefficient dimensions must be >= 1");
        constants.validate();
    }
};

struct BuiltinParams {
    double c1 = 0.5;
    double c2 = 0.5;
    double c3 = 0.25;
};

namespace detail {

inline double norm(std::span<const double> x) {
    double r2 = 0.0;
    for (double v : x) r2 += v * v;
    return std::sqrt(r2);
}

// mu(tanh |.|)
inline double tanh_norm_mean(const EmpiricalMeasure& mu) {
    double s = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) s += mu.weight(i) * std::tanh(norm(mu.atom(i)));
    return s;
}

}  // namespace detail

// b(t,x,mu) = c1 cos(t) h(x) + c2 mu(tanh|.|) u0, with h(x) = x |x|^{beta-1} on
// the unit ball and x/|x| outside (bounded and beta-Holder), u0 = e_1.
// sigma(t,mu) = (1 + c3 tanh(min(|mean(mu)|, 1))) I.
inline CoefficientSet builtin_coefficients(int dim = 1, DeclaredConstants constants = {}, BuiltinParams p = {}) {
    CoefficientSet cs;
    cs.name = "builtin";
    cs.dim = dim;
    cs.noise_dim = dim;
    constants.b_sup = std::abs(p.c1) + std::abs(p.c2);
    cs.constants = constants;
    const double beta = constants.beta;
    cs.drift = [p, beta, dim](double t, const EmpiricalMeasure& mu) -> DriftField {
        const double a = p.c1 * std::cos(t);
        const double shift = p.c2 * detail::tanh_norm_mean(mu);
        return [a, shift, beta, dim](std::span<const double> x, std::span<double> out) {
            const double r = detail::norm(x);
            const double g = r == 0.0 ? 0.0 : (r <= 1.0 ? std::pow(r, beta - 1.0) : 1.0 / r);
            for (int c = 0; c < dim; ++c) out[static_cast<std::size_t>(c)] = a * g * x[static_cast<std::size_t>(c)];
            out[0] += shift;
        };
    };
    cs.noise = [p, dim](double, const EmpiricalMeasure& nu) -> Eigen::MatrixXd {
        const auto m = nu.mean();
        const double w = std::min(detail::norm(m), 1.0);
        return (1.0 + p.c3 * std::tanh(w)) * Eigen::MatrixXd::Identity(dim, dim);
    };
    return cs;
}

// b = 0, sigma = I.
inline CoefficientSet free_coefficients(int dim = 1, DeclaredConstants constants = {}) {
    CoefficientSet cs;
    cs.name = "free";
    cs.dim = dim;
    cs.noise_dim = dim;
    constants.b_sup = 0.0;
    cs.constants = constants;
    cs.drift = [dim](double, const EmpiricalMeasure&) -> DriftField {
        return [dim](std::span<const double>, std::span<double> out) {
            std::fill(out.begin(), out.begin() + dim, 0.0);
        };
    };
    cs.noise = [dim](double, const EmpiricalMeasure&) -> Eigen::MatrixXd {
        return Eigen::MatrixXd::Identity(dim, dim);
    };
    return cs;
}

// b = c e_1, sigma = I.
inline CoefficientSet constant_drift_coefficients(double c, int dim = 1, DeclaredConstants constants = {}) {
    auto cs = free_coefficients(dim, constants);
    cs.name = "constant_drift";
    cs.constants.b_sup = std::abs(c);
    cs.drift = [c, dim](double, const EmpiricalMeasure&) -> DriftField {
        return [c, dim](std::span<const double>, std::span<double> out) {
            std::fill(out.begin(), out.begin() + dim, 0.0);
            out[0] = c;
        };
    };
    return cs;
}

// Built-in drift with sigma = I (noise ignores its measure argument).
inline CoefficientSet builtin_drift_only(int dim = 1, DeclaredConstants constants = {}, BuiltinParams p = {}) {
    auto cs = builtin_coefficients(dim, constants, p);
    cs.name = "builtin_drift_only";
    cs.noise = [dim](double, const EmpiricalMeasure&) -> Eigen::MatrixXd {
        return Eigen::MatrixXd::Identity(dim, dim);
    };
    return cs;
}

// Built-in noise with the measure-free part of the drift only.
inline CoefficientSet builtin_noise_only(int dim = 1, DeclaredConstants constants = {}, BuiltinParams p = {}) {
    auto cs = builtin_coefficients(dim, constants, BuiltinParams{p.c1, 0.0, p.c3});
    cs.name = "builtin_noise_only";
    return cs;
}

inline std::vector<std::string> coefficient_names() {
    return {"builtin", "builtin_drift_only", "builtin_noise_only", "constant_drift", "free"};
}

inline CoefficientSet make_coefficients(const std::string& name, int dim, const DeclaredConstants& constants,
                                        const BuiltinParams& p = {}, double constant_drift = 1.0) {
    if (name == "builtin") return builtin_coefficients(dim, constants, p);
    if (name == "builtin_drift_only") return builtin_drift_only(dim, constants, p);
    if (name == "builtin_noise_only") return builtin_noise_only(dim, constants, p);
    if (name == "constant_drift") return constant_drift_coefficients(constant_drift, dim, constants);
    if (name == "free") return free_coefficients(dim, constants);
    throw DomainError("unknown coefficient set '" + name + "'");
}

struct ProbePlan {
    std::size_t n_probes = 1000;
    std::size_t atoms_per_measure = 64;
    double horizon = 1.0;
    std::uint64_t seed = 7;
    int bins = 64;
};

struct ProbeReport {
    double holder_ratio = 0.0;          // |b(x)-b(y)| / |x-y|^beta
    double drift_measure_ratio = 0.0;   // |b(mu)-b(mu')| / (||mu-mu'||_{k,var} + W_k)
    double noise_measure_ratio = 0.0;   // ||sigma(mu)-sigma(mu')|| / (W_eta + W_k)
    double drift_sup = 0.0;
    double eig_min = std::numeric_limits<double>::infinity();
    double eig_max = 0.0;
    std::vector<std::string> flags;
    bool pass() const { return flags.empty(); }
};

// Random audit of the declared constants.
inline ProbeReport probe_assumptions(const CoefficientSet& cs, const ProbePlan& plan = {}) {
    cs.validate();
    const auto d = static_cast<std::size_t>(cs.dim);
    const auto& K = cs.constants;
    ProbeReport rep;
    auto random_measure = [&](rng::Stream& s) {
        const double shift = 4.0 * s.uniform() - 2.0;
        const double scale = 0.2 + 2.0 * s.uniform();
        std::vector<double> atoms(plan.atoms_per_measure * d);
        for (auto& a : atoms) a = shift + scale * s.normal();
        return EmpiricalMeasure::uniform(cs.dim, std::move(atoms));
    };
    std::vector<double> bx(d), by(d), x(d), y(d);
    for (std::size_t q = 0; q < plan.n_probes; ++q) {
        rng::Stream s(plan.seed, rng::Purpose::Probe, q);
        const double t = plan.horizon * s.uniform();
        const auto mu = random_measure(s);
        const auto mu2 = random_measure(s);
        try {
            // Holder in x; half the probes are local.
            const double spread = (q % 2 == 0) ? 1e-3 : 3.0;
            for (std::size_t c = 0; c < d; ++c) {
                x[c] = 2.0 * s.normal();
                y[c] = x[c] + spread * s.normal();
            }
            const auto field = cs.drift(t, mu);
            field(x, bx);
            field(y, by);
            double diff = 0.0, dxy = 0.0, nb = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                diff += (bx[c] - by[c]) * (bx[c] - by[c]);
                dxy += (x[c] - y[c]) * (x[c] - y[c]);
                nb += bx[c] * bx[c];
            }
            if (dxy > 0.0) rep.holder_ratio = std::max(rep.holder_ratio, std::sqrt(diff) / std::pow(dxy, K.beta / 2.0));
            rep.drift_sup = std::max(rep.drift_sup, std::sqrt(nb));

            // Lipschitz in the measure, same point.
            const auto field2 = cs.drift(t, mu2);
            field2(x, by);
            diff = 0.0;
            for (std::size_t c = 0; c < d; ++c) diff += (bx[c] - by[c]) * (bx[c] - by[c]);
            const std::vector<EmpiricalMeasure> pair{mu, mu2};
            const auto box = BinningSpec::covering(pair, plan.bins);
            const double wk = wasserstein(mu, mu2, K.k);
            const double dist_b = weighted_variation(mu, mu2, K.k, box) + wk;
            if (dist_b > 0.0) rep.drift_measure_ratio = std::max(rep.drift_measure_ratio, std::sqrt(diff) / dist_b);

            const Eigen::MatrixXd s1 = cs.noise(t, mu), s2 = cs.noise(t, mu2);
            const double dist_s = wasserstein(mu, mu2, K.eta) + wk;
            const double snorm = (s1 - s2).operatorNorm();
            if (dist_s > 0.0) rep.noise_measure_ratio = std::max(rep.noise_measure_ratio, snorm / dist_s);
            for (const auto* sm : {&s1, &s2}) {
                Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(*sm * sm->transpose(), Eigen::EigenvaluesOnly);
                rep.eig_min = std::min(rep.eig_min, es.eigenvalues().minCoeff());
                rep.eig_max = std::max(rep.eig_max, es.eigenvalues().maxCoeff());
            }
        } catch (const std::exception& e) {
            throw Error("coefficient probe " + std::to_string(q) + " failed: " + e.what());
        }
    }
    if (rep.holder_ratio > K.K1) rep.flags.push_back("(A2) drift Holder ratio " + csv::format(rep.holder_ratio) + " exceeds K1");
    if (rep.drift_measure_ratio > K.K1)
        rep.flags.push_back("(A2) drift measure-Lipschitz ratio " + csv::format(rep.drift_measure_ratio) + " exceeds K1");
    if (rep.noise_measure_ratio > K.K2)
        rep.flags.push_back("(A3) noise measure-Lipschitz ratio " + csv::format(rep.noise_measure_ratio) + " exceeds K2");
    if (rep.drift_sup > K.b_sup * (1.0 + 1e-12))
        rep.flags.push_back("(A2) drift magnitude " + csv::format(rep.drift_sup) + " exceeds declared bound");
    if (rep.eig_min < 1.0 / K.K2 || rep.eig_max > K.K2)
        rep.flags.push_back("(A3) eigenvalues of sigma sigma^* outside [1/K2, K2]");
    return rep;
}

}  // namespace stablemv
