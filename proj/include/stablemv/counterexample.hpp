#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "stablemv/errors.hpp"
#include "stablemv/grid.hpp"
#include "stablemv/measure.hpp"
#include "stablemv/parallel.hpp"
#include "stablemv/rng.hpp"
#include "stablemv/stable_paths.hpp"
#include "stablemv/stats.hpp"

namespace stablemv {

// sigma_t(gamma) = a + b gamma([2 M t^{1/alpha}, inf)). p1 = P(M <= Z_1 < 2M),
// p2 = P(Z_1 >= 2M) are the calibration estimates from n_calibration draws.
struct CounterexampleParams {
    double alpha = 1.5;
    double M = 2.0;
    double a = 0.0;
    double b_coef = 1.0;
    double T = 1.0;
    double p1 = 0.0;
    double p2 = 0.0;
    std::size_t n_calibration = 0;
};

inline double tail_ratio_limit(double alpha) { return 1.0 / (std::pow(2.0, alpha) - 1.0); }

namespace detail {

// Z_1 for draw i, sharing keys with sample_stable_marginal (dim 1, t = 1).
inline double stable_draw(double alpha, std::uint64_t seed, std::size_t i) {
    rng::Stream s(seed, rng::Purpose::Subordinator, i);
    const double S = one_sided_stable(alpha / 2.0, s);
    rng::Stream g(seed, rng::Purpose::Brownian, i);
    return std::sqrt(S) * g.normal();
}

// Counts of draws with Z_1 >= thresholds[q], in fixed blocks.
inline std::vector<std::uint64_t> count_at_or_above(double alpha, std::size_t n, std::uint64_t seed,
                                                    const std::vector<double>& thresholds) {
    const std::size_t block = kReduceChunk;
    const std::size_t n_blocks = (n + block - 1) / block;
    std::vector<std::vector<std::uint64_t>> parts(n_blocks, std::vector<std::uint64_t>(thresholds.size(), 0));
    parallel_blocks(n_blocks, [&](std::size_t bk) {
        for (std::size_t i = bk * block; i < std::min(n, (bk + 1) * block); ++i) {
            const double z = stable_draw(alpha, seed, i);
            for (std::size_t q = 0; q < thresholds.size(); ++q)
                if (z >= thresholds[q]) ++parts[bk][q];
        }
    });
    std::vector<std::uint64_t> out(thresholds.size(), 0);
    for (const auto& p : parts)
        for (std::size_t q = 0; q < out.size(); ++q) out[q] += p[q];
    return out;
}

}  // namespace detail

// P(Z_1 >= 2x) / P(x <= Z_1 < 2x); standard error by the delta method on the log ratio.
inline Estimate tail_ratio(double alpha, double x, std::size_t n_samples, std::uint64_t seed) {
    StableParams{alpha, 1}.validate();
    if (!(x > 0.0)) throw DomainError("tail ratio threshold must be > 0");
    if (n_samples < 100000) throw DomainError("tail ratio needs n_samples >= 1e5");
    const auto c = detail::count_at_or_above(alpha, n_samples, seed, {x, 2.0 * x});
    const double upper = static_cast<double>(c[1]);
    const double middle = static_cast<double>(c[0] - c[1]);
    if (middle == 0.0)
        throw EmptyDataError("no samples in [x, 2x) at x=" + csv::format(x) + "; increase n_samples");
    const double r = upper / middle;
    const double se = upper > 0.0 ? r * std::sqrt(1.0 / upper + 1.0 / middle) : 1.0 / middle;
    return {r, se};
}

// Smallest M in {2, 4, ..., 2^14} with P(Z_1 >= 2M) below P(M <= Z_1 < 2M) by
// three joint standard errors and at least 100 hits in each tail event.
inline CounterexampleParams calibrate(double alpha, std::size_t n_samples, std::uint64_t seed, double T = 1.0) {
    StableParams{alpha, 1}.validate();
    if (!(T > 0.0)) throw DomainError("horizon must be > 0");
    std::vector<double> thr;
    for (int e = 1; e <= 15; ++e) thr.push_back(std::ldexp(1.0, e));
    const auto c = detail::count_at_or_above(alpha, n_samples, seed, thr);
    const double n = static_cast<double>(n_samples);
    std::string diag;
    for (int e = 1; e <= 14; ++e) {
        const auto q = static_cast<std::size_t>(e - 1);
        const std::uint64_t hits_mid = c[q] - c[q + 1], hits_up = c[q + 1];
        const double p1 = static_cast<double>(hits_mid) / n;
        const double p2 = static_cast<double>(hits_up) / n;
        const double se = std::sqrt((p1 + p2 - (p1 - p2) * (p1 - p2)) / n);
        diag += " M=" + csv::format(thr[q]) + ": p1=" + csv::format(p1) + " p2=" + csv::format(p2) + ";";
        if (hits_mid < 100 || hits_up < 100) continue;
        if (p2 < p1 - 3.0 * se) {
            CounterexampleParams p;
            p.alpha = alpha;
            p.M = thr[q];
            p.a = (p1 - p2) / p1;
            p.b_coef = 1.0 / p1;
            p.T = T;
            p.p1 = p1;
            p.p2 = p2;
            p.n_calibration = n_samples;
            return p;
        }
    }
    throw CalibrationError("no admissible M on the doubling grid:" + diag);
}

inline double sigma_of_law(const CounterexampleParams& p, double t, const EmpiricalMeasure& law) {
    if (!(t > 0.0 && t <= p.T)) throw DomainError("sigma_t is evaluated for t in (0,T], got t=" + csv::format(t));
    if (law.dim() != 1) throw DomainError("sigma_t acts on laws over the real line");
    const double thr = 2.0 * p.M * std::pow(t, 1.0 / p.alpha);
    double mass = 0.0;
    for (std::size_t i = 0; i < law.size(); ++i)
        if (law.atom(i)[0] >= thr) mass += law.weight(i);
    return p.a + p.b_coef * mass;
}

struct SolutionCheck {
    double t = 0.0;
    double c = 1.0;
    double sigma = 0.0;
    double std_error = 0.0;  // includes calibration noise in a and b
    double residual = 0.0;   // |sigma - c|
    bool within_3se() const { return residual < 3.0 * std_error; }
};

struct TwoSolutionsReport {
    CounterexampleParams params;
    std::size_t n_samples = 0;
    std::vector<SolutionCheck> checks;  // for c in {1,2,3} at every grid time > 0

    bool pass() const {
        for (const auto& r : checks)
            if (r.c != 3.0 && !r.within_3se()) return false;
        return true;
    }
};

// sigma_t(Law(c Z_t)) for c in {1,2,3} along subordinated paths on `grid`.
inline TwoSolutionsReport verify_two_solutions(const CounterexampleParams& p, std::size_t n_samples,
                                               const TimeGrid& grid, std::uint64_t seed) {
    if (n_samples < 2) throw DomainError("need >= 2 samples");
    if (grid.horizon() > p.T * (1.0 + 1e-12)) throw DomainError("verification grid exceeds the horizon T");
    TwoSolutionsReport rep;
    rep.params = p;
    rep.n_samples = n_samples;
    std::vector<double> z(n_samples, 0.0);
    const double nv = static_cast<double>(n_samples), nc = static_cast<double>(p.n_calibration);
    for (std::size_t j = 0; j < grid.steps(); ++j) {
        parallel_for(n_samples, [&](std::size_t i) {
            const double ds = subordinator_increment(p.alpha, grid.dt(j), seed, i, static_cast<std::uint32_t>(j));
            rng::Stream g(seed, rng::Purpose::Brownian, i, static_cast<std::uint32_t>(j));
            z[i] += std::sqrt(ds) * g.normal();
        });
        const double t = grid[j + 1];
        for (double c : {1.0, 2.0, 3.0}) {
            std::vector<double> atoms(z);
            for (double& v : atoms) v *= c;
            const auto law = EmpiricalMeasure::uniform(1, std::move(atoms));
            SolutionCheck ck;
            ck.t = t;
            ck.c = c;
            ck.sigma = sigma_of_law(p, t, law);
            ck.residual = std::abs(ck.sigma - c);
            // sigma = 1 + (g - p2)/p1 with g from these draws, (p1, p2) from calibration.
            const double g = (ck.sigma - p.a) / p.b_coef;
            double var = g * (1.0 - g) / (nv * p.p1 * p.p1);
            if (nc > 0.0) {
                const double d1 = -(g - p.p2) / (p.p1 * p.p1), d2 = -1.0 / p.p1;
                var += (d1 * d1 * p.p1 * (1.0 - p.p1) + d2 * d2 * p.p2 * (1.0 - p.p2) - 2.0 * d1 * d2 * p.p1 * p.p2) / nc;
            }
            ck.std_error = std::sqrt(std::max(var, 0.0));
            rep.checks.push_back(ck);
        }
    }
    return rep;
}

}  // namespace stablemv
