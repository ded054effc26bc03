#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "stablemv/csv.hpp"
#include "stablemv/errors.hpp"
#include "stablemv/grid.hpp"
#include "stablemv/parallel.hpp"
#include "stablemv/rng.hpp"
#include "stablemv/stats.hpp"

namespace stablemv {

struct StableParams {
    double alpha = 1.5;
    int dim = 1;

    void validate() const {
        if (!(alpha > 1.0 && alpha < 2.0))
            throw DomainError("(A1) requires alpha in (1,2), got " + std::to_string(alpha));
        if (dim < 1) throw DomainError("dimension must be >= 1");
    }
    double rho() const { return alpha / 2.0; }
};

// Laplace normalisation used throughout: E exp(-r S_t) = exp(-t (2r)^{alpha/2} / 2).
//
// Kanter's representation gives X with E exp(-rX) = exp(-r^rho):
//   X = sin(rho U) / sin(U)^{1/rho} * (sin((1-rho)U) / E)^{(1-rho)/rho},
// U ~ Unif(0, pi), E ~ Exp(1). For S = c X we need (c r)^rho = (2r)^rho / 2, so
// c^rho = 2^{rho-1} and c = 2^{1 - 1/rho}.
inline double subordinator_scale(double rho) { return std::pow(2.0, 1.0 - 1.0 / rho); }

namespace detail {

inline void check_rho(double rho) {
    if (!(rho > 0.0 && rho < 1.0))
        throw DomainError("one-sided stable index must lie in (0,1), got " + std::to_string(rho));
}

// Kanter variate with E exp(-rX) = exp(-r^rho), evaluated in log space.
inline double kanter(double rho, rng::Stream& s) {
    const double u = std::numbers::pi * s.uniform();
    const double e = s.exponential();
    const double log_x = std::log(std::sin(rho * u)) - std::log(std::sin(u)) / rho +
                         (1.0 - rho) / rho * (std::log(std::sin((1.0 - rho) * u)) - std::log(e));
    return std::exp(log_x);
}

}  // namespace detail

// One draw of S_1 (paper normalisation) with index rho from the given stream.
inline double one_sided_stable(double rho, rng::Stream& s) {
    return subordinator_scale(rho) * detail::kanter(rho, s);
}

// Draw i uses stream (seed, Subordinator, i, node 0).
inline std::vector<double> sample_one_sided_stable(double rho, std::size_t n, std::uint64_t seed) {
    detail::check_rho(rho);
    if (n == 0) throw DomainError("sample count must be >= 1");
    std::vector<double> out(n);
    const double c = subordinator_scale(rho);
    parallel_for(n, [&](std::size_t i) {
        rng::Stream s(seed, rng::Purpose::Subordinator, i);
        out[i] = c * detail::kanter(rho, s);
    });
    return out;
}

// Unit-scale variant, E exp(-rX) = exp(-r^rho).
inline std::vector<double> sample_unit_one_sided_stable(double rho, std::size_t n, std::uint64_t seed) {
    detail::check_rho(rho);
    if (n == 0) throw DomainError("sample count must be >= 1");
    std::vector<double> out(n);
    parallel_for(n, [&](std::size_t i) {
        rng::Stream s(seed, rng::Purpose::Subordinator, i);
        out[i] = detail::kanter(rho, s);
    });
    return out;
}

// Increment of path `path` over grid step `step`: (dt)^{2/alpha} S_1.
inline double subordinator_increment(double alpha, double dt, std::uint64_t seed, std::uint64_t path,
                                     std::uint32_t step) {
    rng::Stream s(seed, rng::Purpose::Subordinator, path, step);
    return std::pow(dt, 2.0 / alpha) * one_sided_stable(alpha / 2.0, s);
}

struct SubordinatorPath {
    TimeGrid grid;
    std::vector<double> values;

    double at(double t) const { return values[grid.index_of(t)]; }
};

struct StablePath {
    TimeGrid grid;
    int dim = 1;
    std::vector<double> values;  // node-major, dim entries per node
    SubordinatorPath subordinator;

    std::span<const double> at_node(std::size_t i) const {
        return {values.data() + i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)};
    }
};

inline SubordinatorPath sample_subordinator_path(const StableParams& params, const TimeGrid& grid,
                                                 std::uint64_t seed, std::uint64_t path_index = 0) {
    params.validate();
    SubordinatorPath p{grid, std::vector<double>(grid.size(), 0.0)};
    for (std::size_t j = 0; j < grid.steps(); ++j)
        p.values[j + 1] = p.values[j] + subordinator_increment(params.alpha, grid.dt(j), seed, path_index,
                                                               static_cast<std::uint32_t>(j));
    return p;
}

inline StablePath sample_stable_path(const StableParams& params, const SubordinatorPath& sub, std::uint64_t seed,
                                     std::uint64_t path_index = 0) {
    params.validate();
    const auto m = static_cast<std::size_t>(params.dim);
    StablePath z{sub.grid, params.dim, std::vector<double>(sub.grid.size() * m, 0.0), sub};
    for (std::size_t j = 0; j < sub.grid.steps(); ++j) {
        const double ds = sub.values[j + 1] - sub.values[j];
        const double sd = std::sqrt(ds);
        rng::Stream s(seed, rng::Purpose::Brownian, path_index, static_cast<std::uint32_t>(j));
        for (std::size_t c = 0; c < m; ++c) z.values[(j + 1) * m + c] = z.values[j * m + c] + sd * s.normal();
    }
    return z;
}

// Subordinator paths for many indices on one grid, path-major storage.
class PathBank {
public:
    PathBank(const StableParams& params, const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed)
        : grid_(grid), n_paths_(n_paths), values_(n_paths * grid.size(), 0.0) {
        params.validate();
        if (n_paths == 0) throw DomainError("path bank needs >= 1 path");
        const std::size_t stride = grid.size();
        parallel_for(n_paths, [&](std::size_t p) {
            double* row = values_.data() + p * stride;
            for (std::size_t j = 0; j < grid.steps(); ++j)
                row[j + 1] = row[j] + subordinator_increment(params.alpha, grid.dt(j), seed, p,
                                                             static_cast<std::uint32_t>(j));
        }, 256);
    }

    const TimeGrid& grid() const { return grid_; }
    std::size_t size() const { return n_paths_; }
    std::span<const double> path(std::size_t p) const {
        return {values_.data() + p * grid_.size(), grid_.size()};
    }

private:
    TimeGrid grid_;
    std::size_t n_paths_;
    std::vector<double> values_;
};

// S_t for n independent paths, path i drawn as a single increment from stream (seed, i, node 0).
inline std::vector<double> sample_subordinator_marginal(double alpha, double t, std::size_t n, std::uint64_t seed) {
    StableParams{alpha, 1}.validate();
    if (!(t > 0.0)) throw DomainError("marginal time must be > 0");
    auto out = sample_one_sided_stable(alpha / 2.0, n, seed);
    const double scale = std::pow(t, 2.0 / alpha);
    for (double& v : out) v *= scale;
    return out;
}

// Z_t = W_{S_t} for n independent paths, flat n x dim.
inline std::vector<double> sample_stable_marginal(const StableParams& params, double t, std::size_t n,
                                                  std::uint64_t seed) {
    params.validate();
    const auto s = sample_subordinator_marginal(params.alpha, t, n, seed);
    const auto m = static_cast<std::size_t>(params.dim);
    std::vector<double> out(n * m);
    parallel_for(n, [&](std::size_t i) {
        rng::Stream g(seed, rng::Purpose::Brownian, i);
        const double sd = std::sqrt(s[i]);
        for (std::size_t c = 0; c < m; ++c) out[i * m + c] = sd * g.normal();
    });
    return out;
}

// Left-point sum  sum_{r <= t_i < t} e^{delta t_i} (S(t_{i+1}) - S(t_i)).
inline double stieltjes_exp_integral(const TimeGrid& grid, std::span<const double> values, double delta, double r,
                                     double t) {
    if (delta < 0.0) throw DomainError("damping must be >= 0");
    const std::size_t i0 = grid.index_of(r);
    const std::size_t i1 = grid.index_of(t);
    if (i0 > i1) throw DomainError("stieltjes integral needs r <= t");
    if (delta == 0.0) return values[i1] - values[i0];
    double acc = 0.0;
    for (std::size_t i = i0; i < i1; ++i) acc += std::exp(delta * grid[i]) * (values[i + 1] - values[i]);
    return acc;
}

inline double stieltjes_exp_integral(const SubordinatorPath& path, double delta, double r, double t) {
    return stieltjes_exp_integral(path.grid, path.values, delta, r, t);
}

// E S_t^p = (c t^{2/alpha})^p Gamma(1 - 2p/alpha) / Gamma(1 - p), finite for p < alpha/2.
inline double subordinator_moment(double alpha, double p, double t) {
    StableParams{alpha, 1}.validate();
    if (!(p < alpha / 2.0)) throw DomainError("subordinator moments exist only for p < alpha/2");
    if (!(t > 0.0)) throw DomainError("moment time must be > 0");
    if (p == 0.0) return 1.0;
    const double rho = alpha / 2.0;
    return std::pow(subordinator_scale(rho) * std::pow(t, 1.0 / rho), p) * std::tgamma(1.0 - p / rho) /
           std::tgamma(1.0 - p);
}

// E S_t^{(-1+eps)/2} for the Laplace normalisation above.
inline double subordinator_negative_moment(double alpha, double epsilon, double t) {
    if (!(epsilon >= 0.0 && epsilon < alpha))
        throw DomainError("epsilon must lie in [0, alpha), got " + std::to_string(epsilon));
    return subordinator_moment(alpha, (-1.0 + epsilon) / 2.0, t);
}

// Same moment for the unit scale E exp(-rS_1) = exp(-r^{alpha/2}):
// Gamma(1 - (-1+eps)/alpha) / Gamma((3-eps)/2) t^{(-1+eps)/alpha}.
inline double unit_scale_negative_moment(double alpha, double epsilon, double t) {
    StableParams{alpha, 1}.validate();
    if (!(epsilon >= 0.0 && epsilon < alpha))
        throw DomainError("epsilon must lie in [0, alpha), got " + std::to_string(epsilon));
    if (!(t > 0.0)) throw DomainError("moment time must be > 0");
    return std::tgamma(1.0 - (-1.0 + epsilon) / alpha) / std::tgamma((3.0 - epsilon) / 2.0) *
           std::pow(t, (-1.0 + epsilon) / alpha);
}

inline double laplace_exact(double alpha, double r, double t) {
    return std::exp(-0.5 * t * std::pow(2.0 * r, alpha / 2.0));
}

inline double charfn_exact(double alpha, double xi_norm, double t) {
    return std::exp(-0.5 * t * std::pow(xi_norm, alpha));
}

inline Estimate empirical_laplace(std::span<const double> samples, double r) {
    if (samples.empty()) throw EmptyDataError("empirical_laplace: no samples");
    if (!(r > 0.0)) throw DomainError("Laplace argument must be > 0");
    return parallel_mean(samples.size(), [&](std::size_t i) { return std::exp(-r * samples[i]); }).estimate();
}

// samples is flat n x xi.size().
inline ComplexEstimate empirical_charfn(std::span<const double> samples, std::span<const double> xi) {
    const std::size_t m = xi.size();
    if (m == 0) throw DomainError("empirical_charfn: xi must be nonempty");
    if (samples.empty()) throw EmptyDataError("empirical_charfn: no samples");
    if (samples.size() % m != 0) throw DomainError("empirical_charfn: sample array not a multiple of dim");
    const std::size_t n = samples.size() / m;
    auto phase = [&](std::size_t i) {
        double a = 0.0;
        for (std::size_t c = 0; c < m; ++c) a += xi[c] * samples[i * m + c];
        return a;
    };
    const auto re = parallel_mean(n, [&](std::size_t i) { return std::cos(phase(i)); });
    const auto im = parallel_mean(n, [&](std::size_t i) { return std::sin(phase(i)); });
    return {{re.mean(), im.mean()}, std::hypot(re.std_error(), im.std_error())};
}

// Columns path_id,t,S,Z_1..Z_m.
inline void write_paths_csv(std::ostream& out, std::span<const StablePath> paths) {
    if (paths.empty()) throw EmptyDataError("no paths to export");
    csv::Writer w(out);
    std::vector<std::string> cols{"path_id", "t", "S"};
    for (int c = 1; c <= paths.front().dim; ++c) cols.push_back("Z_" + std::to_string(c));
    w.header(cols);
    for (std::size_t p = 0; p < paths.size(); ++p) {
        const auto& z = paths[p];
        for (std::size_t j = 0; j < z.grid.size(); ++j) {
            std::vector<double> row{static_cast<double>(p), z.grid[j], z.subordinator.values[j]};
            for (double v : z.at_node(j)) row.push_back(v);
            w.row(row);
        }
    }
}

}  // namespace stablemv
