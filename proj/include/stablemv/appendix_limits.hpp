#pragma once

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stablemv/errors.hpp"
#include "stablemv/grid.hpp"
#include "stablemv/parallel.hpp"
#include "stablemv/stable_paths.hpp"
#include "stablemv/stats.hpp"

namespace stablemv {

// int_0^inf r^{-1/alpha} e^{-delta r} dr = Gamma(1 - 1/alpha) delta^{1/alpha - 1}.
inline double damped_expint(double alpha, double delta) {
    if (!(alpha > 1.0 && alpha < 2.0)) throw DomainError("(A1) requires alpha in (1,2)");
    if (!(delta > 0.0)) throw DomainError("damped_expint needs delta > 0");
    return std::tgamma(1.0 - 1.0 / alpha) * std::pow(delta, 1.0 / alpha - 1.0);
}

enum class LimitPart { I, II };

inline std::string to_string(LimitPart p) { return p == LimitPart::I ? "i" : "ii"; }

struct LimitExperiment {
    double alpha = 1.5;
    double kappa = 0.3;
    double T = 1.0;
    std::vector<double> deltas{1.0, 4.0, 16.0, 64.0, 256.0};
    double epsilon = 0.1;
    std::size_t n_paths = 100000;
    std::size_t steps = 200;
    std::uint64_t seed = 1;
    std::optional<double> theta;  // part ii; default midpoint of its window

    // (lower, upper) window for theta in part ii.
    std::pair<double, double> theta_window() const {
        return {1.0 - alpha / 2.0, std::min(1.0, 1.5 - kappa)};
    }
    double theta_value() const {
        if (theta) return *theta;
        const auto [lo, hi] = theta_window();
        return 0.5 * (lo + hi);
    }

    void validate(LimitPart part) const {
        StableParams{alpha, 1}.validate();
        if (!(T > 0.0)) throw DomainError("horizon T must be > 0");
        if (deltas.empty()) throw DomainError("delta ladder is empty");
        for (std::size_t i = 0; i < deltas.size(); ++i) {
            if (!(deltas[i] > 0.0)) throw DomainError("delta values must be > 0");
            if (i > 0 && !(deltas[i] > deltas[i - 1])) throw DomainError("delta ladder must be increasing");
        }
        if (!(epsilon > 0.0 && epsilon < 1.0)) throw DomainError("envelope epsilon must lie in (0,1)");
        if (n_paths < 2 || steps < 1) throw DomainError("need >= 2 paths and >= 1 step");
        if (part == LimitPart::I && !(kappa > 0.0 && kappa < alpha / 2.0))
            throw DomainError("part i requires 0 < kappa < alpha/2, got kappa=" + csv::format(kappa));
        if (part == LimitPart::II) {
            if (!((1.0 - alpha) / 2.0 < kappa && kappa < (1.0 + alpha) / 2.0))
                throw DomainError("part ii requires (1-alpha)/2 < kappa < (1+alpha)/2, got kappa=" + csv::format(kappa));
            const auto [lo, hi] = theta_window();
            const double th = theta_value();
            if (!(lo < th && th < hi))
                throw DomainError("theta=" + csv::format(th) + " outside (" + csv::format(lo) + ", " + csv::format(hi) + ")");
        }
    }
};

// int_0^T e^{-a r} r^q dr, q > -1.
inline double damped_power_integral(double a, double q, double T) {
    if (a == 0.0) return std::pow(T, q + 1.0) / (q + 1.0);
    return boost::math::tgamma_lower(q + 1.0, a * T) / std::pow(a, q + 1.0);
}

// Proof bound for part i at (delta, eps), with m_kappa = E S_1^kappa.
inline double envelope_i(const LimitExperiment& e, double delta, double eps, double m_kappa) {
    const double p = 2.0 * e.kappa / e.alpha;
    return m_kappa * (std::pow(2.0 * e.kappa / (e.alpha * std::numbers::e * eps * delta), p) + std::pow(eps * e.T, p));
}

struct PartIIMoments {
    double m_a = 0.0;  // E S_1^{kappa - 1/2}
    double m_b = 0.0;  // E S_1^{theta + kappa - 3/2}
    double m_c = 0.0;  // E S_1^{1 - theta}
};

inline double envelope_ii(const LimitExperiment& e, double delta, double eps, const PartIIMoments& m) {
    const double q = (2.0 * e.kappa - 1.0) / e.alpha;
    const double th = e.theta_value();
    const double first = m.m_a * damped_power_integral(delta * eps, q, e.T);
    const double second = std::pow(eps, 2.0 * (1.0 - th) / e.alpha) *
                          std::pow(1.0 - eps, (2.0 * th + 2.0 * e.kappa - 3.0) / e.alpha) * m.m_b * m.m_c *
                          std::pow(e.T, q + 1.0) / (q + 1.0);
    return first + second;
}

// Log-spaced epsilon grid in (1e-4, 1 - 1e-4).
inline std::vector<double> epsilon_grid(std::size_t n = 200) {
    std::vector<double> g(n);
    const double lo = std::log(1e-4), hi = std::log(1.0 - 1e-4);
    for (std::size_t i = 0; i < n; ++i) g[i] = std::exp(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1));
    return g;
}

struct LimitRow {
    double delta = 0.0;
    double estimate = 0.0;
    double std_error = 0.0;
    double argmax_t = 0.0;
    double envelope = 0.0;       // minimised over the epsilon grid
    double envelope_eps = 0.0;   // minimiser
    double envelope_user = 0.0;  // at the configured epsilon
};

struct LimitTable {
    LimitPart part = LimitPart::I;
    LimitExperiment experiment;
    std::vector<LimitRow> rows;
    // Closed-form moments entering the envelope, and Monte Carlo checks of them.
    std::vector<std::pair<std::string, double>> moments_exact;
    std::vector<std::pair<std::string, Estimate>> moments_mc;

    bool nonincreasing() const {
        for (std::size_t i = 1; i < rows.size(); ++i) {
            const double slack = 2.0 * std::hypot(rows[i].std_error, rows[i - 1].std_error);
            if (rows[i].estimate > rows[i - 1].estimate + slack) return false;
        }
        return true;
    }
    bool decays() const { return rows.size() >= 2 && rows.back().estimate < 0.5 * rows.front().estimate; }
    bool dominated() const {
        for (const auto& r : rows)
            if (r.estimate > r.envelope + 3.0 * r.std_error) return false;
        return true;
    }
    bool nonnegative() const {
        for (const auto& r : rows)
            if (r.estimate < 0.0) return false;
        return true;
    }
    bool pass() const { return nonnegative() && nonincreasing() && decays() && dominated(); }
};

namespace detail {

inline void fill_path(const LimitExperiment& e, const TimeGrid& grid, std::size_t p, std::vector<double>& s) {
    s[0] = 0.0;
    for (std::size_t j = 0; j < grid.steps(); ++j)
        s[j + 1] = s[j] + subordinator_increment(e.alpha, grid.dt(j), e.seed, p, static_cast<std::uint32_t>(j));
}

// Per-path values v[d][j] accumulated into per-(delta, node) means; blocks are
// merged in order so results do not depend on the thread count.
template <typename PerPath>
std::vector<std::vector<MeanAccumulator>> accumulate(const LimitExperiment& e, const TimeGrid& grid,
                                                     PerPath&& per_path) {
    const std::size_t nd = e.deltas.size(), nn = grid.size();
    const std::size_t block = 512;
    const std::size_t n_blocks = (e.n_paths + block - 1) / block;
    std::vector<std::vector<std::vector<MeanAccumulator>>> parts(n_blocks);
    parallel_blocks(n_blocks, [&](std::size_t b) {
        auto acc = std::vector<std::vector<MeanAccumulator>>(nd, std::vector<MeanAccumulator>(nn));
        std::vector<double> s(nn);
        std::vector<std::vector<double>> v(nd, std::vector<double>(nn));
        for (std::size_t p = b * block; p < std::min(e.n_paths, (b + 1) * block); ++p) {
            fill_path(e, grid, p, s);
            per_path(s, v);
            for (std::size_t d = 0; d < nd; ++d)
                for (std::size_t j = 0; j < nn; ++j) acc[d][j].add(v[d][j]);
        }
        parts[b] = std::move(acc);
    });
    auto total = std::vector<std::vector<MeanAccumulator>>(nd, std::vector<MeanAccumulator>(nn));
    for (const auto& part : parts)
        for (std::size_t d = 0; d < nd; ++d)
            for (std::size_t j = 0; j < nn; ++j) total[d][j].merge(part[d][j]);
    return total;
}

// Grid sup over t in (0,T] of the per-node means; standard error at the argmax.
inline void fill_rows(const TimeGrid& grid, const std::vector<std::vector<MeanAccumulator>>& acc, LimitTable& out) {
    for (std::size_t d = 0; d < acc.size(); ++d) {
        LimitRow row;
        row.delta = out.experiment.deltas[d];
        std::size_t best = 1;
        for (std::size_t j = 1; j < grid.size(); ++j)
            if (acc[d][j].mean() > acc[d][best].mean()) best = j;
        row.estimate = acc[d][best].mean();
        row.std_error = acc[d][best].std_error();
        row.argmax_t = grid[best];
        out.rows.push_back(row);
    }
}

template <typename Env>
void fill_envelopes(LimitTable& out, Env&& env) {
    const auto eps = epsilon_grid();
    for (auto& row : out.rows) {
        row.envelope = std::numeric_limits<double>::infinity();
        for (double e : eps) {
            const double v = env(row.delta, e);
            if (v < row.envelope) {
                row.envelope = v;
                row.envelope_eps = e;
            }
        }
        row.envelope_user = env(row.delta, out.experiment.epsilon);
    }
}

// Monte Carlo E S_1^p from independent unit-time draws.
inline Estimate mc_moment(double alpha, double p, std::size_t n, std::uint64_t seed) {
    const auto s = sample_subordinator_marginal(alpha, 1.0, n, seed);
    return parallel_mean(n, [&](std::size_t i) { return std::pow(s[i], p); }).estimate();
}

}  // namespace detail

// sup_t e^{-delta t} E[ S_t^{kappa-1} int_0^t e^{delta r} dS_r ] per delta.
inline LimitTable limit_i(const LimitExperiment& e) {
    e.validate(LimitPart::I);
    const auto grid = TimeGrid::uniform(e.T, e.steps);
    const std::size_t nd = e.deltas.size();
    // D_{j+1} = e^{-delta dt_j} (D_j + dS_j) equals e^{-delta t_{j+1}} sum_{i<=j} e^{delta t_i} dS_i.
    std::vector<std::vector<double>> decay(nd, std::vector<double>(grid.steps()));
    for (std::size_t d = 0; d < nd; ++d)
        for (std::size_t j = 0; j < grid.steps(); ++j) decay[d][j] = std::exp(-e.deltas[d] * grid.dt(j));
    const auto acc = detail::accumulate(e, grid, [&](const std::vector<double>& s, std::vector<std::vector<double>>& v) {
        for (std::size_t d = 0; d < nd; ++d) {
            double D = 0.0;
            v[d][0] = 0.0;
            for (std::size_t j = 0; j < grid.steps(); ++j) {
                D = decay[d][j] * (D + (s[j + 1] - s[j]));
                v[d][j + 1] = s[j + 1] > 0.0 ? std::pow(s[j + 1], e.kappa - 1.0) * D : 0.0;
            }
        }
    });
    LimitTable out;
    out.part = LimitPart::I;
    out.experiment = e;
    detail::fill_rows(grid, acc, out);
    const double mk = subordinator_moment(e.alpha, e.kappa, 1.0);
    out.moments_exact.emplace_back("E S_1^kappa", mk);
    out.moments_mc.emplace_back("E S_1^kappa", detail::mc_moment(e.alpha, e.kappa, e.n_paths, e.seed ^ 0x9e3779b9u));
    detail::fill_envelopes(out, [&](double delta, double eps) { return envelope_i(e, delta, eps, mk); });
    return out;
}

// sup_t e^{-delta t} int_0^t E[(S_t-S_r)^{kappa-3/2} int_r^t e^{delta tau} dS_tau] dr per delta,
// with the dr integral by the trapezoid rule over grid nodes.
inline LimitTable limit_ii(const LimitExperiment& e) {
    e.validate(LimitPart::II);
    const auto grid = TimeGrid::uniform(e.T, e.steps);
    const std::size_t nd = e.deltas.size(), nn = grid.size();
    // decay[d][J*nn + I] = e^{-delta (t_J - t_I)} for I <= J.
    std::vector<std::vector<double>> decay(nd, std::vector<double>(nn * nn, 0.0));
    for (std::size_t d = 0; d < nd; ++d)
        for (std::size_t J = 0; J < nn; ++J)
            for (std::size_t I = 0; I <= J; ++I) decay[d][J * nn + I] = std::exp(-e.deltas[d] * (grid[J] - grid[I]));
    const double expo = e.kappa - 1.5;
    const auto acc = detail::accumulate(e, grid, [&](const std::vector<double>& s, std::vector<std::vector<double>>& v) {
        std::vector<double> D(nd), integral(nd), prev(nd);
        for (std::size_t d = 0; d < nd; ++d) v[d][0] = 0.0;
        for (std::size_t J = 1; J < nn; ++J) {
            std::fill(D.begin(), D.end(), 0.0);
            std::fill(integral.begin(), integral.end(), 0.0);
            std::fill(prev.begin(), prev.end(), 0.0);  // integrand at r = t is taken as 0
            for (std::size_t I = J; I-- > 0;) {
                const double inc = s[J] - s[I];
                const double w = inc > 0.0 ? std::pow(inc, expo) : 0.0;
                const double ds = s[I + 1] - s[I];
                const double h = grid[I + 1] - grid[I];
                for (std::size_t d = 0; d < nd; ++d) {
                    D[d] += decay[d][J * nn + I] * ds;
                    const double g = w * D[d];
                    integral[d] += 0.5 * h * (g + prev[d]);
                    prev[d] = g;
                }
            }
            for (std::size_t d = 0; d < nd; ++d) v[d][J] = integral[d];
        }
    });
    LimitTable out;
    out.part = LimitPart::II;
    out.experiment = e;
    detail::fill_rows(grid, acc, out);
    const double th = e.theta_value();
    PartIIMoments m;
    m.m_a = subordinator_moment(e.alpha, e.kappa - 0.5, 1.0);
    m.m_b = subordinator_moment(e.alpha, th + e.kappa - 1.5, 1.0);
    m.m_c = subordinator_moment(e.alpha, 1.0 - th, 1.0);
    out.moments_exact = {{"E S_1^(kappa-1/2)", m.m_a}, {"E S_1^(theta+kappa-3/2)", m.m_b}, {"E S_1^(1-theta)", m.m_c}};
    const auto seed = e.seed ^ 0x9e3779b9u;
    out.moments_mc = {{"E S_1^(kappa-1/2)", detail::mc_moment(e.alpha, e.kappa - 0.5, e.n_paths, seed)},
                      {"E S_1^(theta+kappa-3/2)", detail::mc_moment(e.alpha, th + e.kappa - 1.5, e.n_paths, seed)},
                      {"E S_1^(1-theta)", detail::mc_moment(e.alpha, 1.0 - th, e.n_paths, seed)}};
    detail::fill_envelopes(out, [&](double delta, double eps) { return envelope_ii(e, delta, eps, m); });
    return out;
}

inline LimitTable run_limit(LimitPart part, const LimitExperiment& e) {
    return part == LimitPart::I ? limit_i(e) : limit_ii(e);
}

}  // namespace stablemv
