#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <iostream>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stablemv/appendix_limits.hpp"
#include "stablemv/coefficients.hpp"
#include "stablemv/errors.hpp"
#include "stablemv/grid.hpp"
#include "stablemv/measure.hpp"
#include "stablemv/metrics.hpp"
#include "stablemv/parallel.hpp"
#include "stablemv/rng.hpp"
#include "stablemv/stable_paths.hpp"
#include "stablemv/stats.hpp"

namespace stablemv {

struct SolverConfig {
    std::size_t n_particles = 1000;
    TimeGrid grid = TimeGrid::uniform(1.0, 200);
    double delta = 20.0;
    double tol_inner = 1e-2;
    double tol_outer = 1e-2;
    int max_inner = 50;
    int max_outer = 50;
    std::uint64_t seed = 1;
    int bins = 64;
    std::optional<BinningSpec> binning;  // empty: box covering both compared flows
    std::size_t ot_subsample = 128;
    bool warm_start = false;

    void validate() const {
        if (n_particles < 2) throw DomainError("n_particles must be >= 2");
        if (!(tol_inner > 0.0) || !(tol_outer > 0.0)) throw DomainError("tolerances must be > 0");
        if (max_inner < 1 || max_outer < 1) throw DomainError("iteration caps must be >= 1");
        if (!(delta > 0.0)) throw DomainError("damping delta must be > 0");
        if (bins < 1) throw DomainError("bins per axis must be >= 1");
        if (binning) binning->validate();
    }
};

// The (S, W) increments driving every particle. Particle i on step j uses the
// same counter keys as PathBank / sample_stable_path with path index i, so the
// noise is a pure function of (seed, i, j); it is cached when small enough.
class DrivingNoise {
public:
    static constexpr std::size_t kCacheLimit = std::size_t{1} << 23;  // doubles

    DrivingNoise(double alpha, TimeGrid grid, std::size_t n, int noise_dim, std::uint64_t seed)
        : alpha_(alpha), grid_(std::move(grid)), n_(n), m_(static_cast<std::size_t>(noise_dim)), seed_(seed) {
        StableParams{alpha, noise_dim}.validate();
        const std::size_t steps = grid_.steps();
        if (n_ * steps * (1 + m_) <= kCacheLimit) {
            ds_.resize(n_ * steps);
            xi_.resize(n_ * steps * m_);
            parallel_for(n_, [&](std::size_t i) {
                for (std::size_t j = 0; j < steps; ++j) draw(i, j, ds_[i * steps + j], {xi_.data() + (i * steps + j) * m_, m_});
            }, 64);
        }
    }

    double alpha() const { return alpha_; }
    const TimeGrid& grid() const { return grid_; }
    std::size_t particles() const { return n_; }
    int noise_dim() const { return static_cast<int>(m_); }
    std::uint64_t seed() const { return seed_; }
    bool cached() const { return !ds_.empty(); }

    // Subordinator increment and standard normal vector for (particle, step).
    void get(std::size_t i, std::size_t j, double& ds, std::span<double> xi) const {
        if (cached()) {
            const std::size_t at = i * grid_.steps() + j;
            ds = ds_[at];
            std::copy_n(xi_.data() + at * m_, m_, xi.begin());
        } else {
            draw(i, j, ds, xi);
        }
    }

private:
    void draw(std::size_t i, std::size_t j, double& ds, std::span<double> xi) const {
        const auto step = static_cast<std::uint32_t>(j);
        ds = subordinator_increment(alpha_, grid_.dt(j), seed_, i, step);
        rng::Stream s(seed_, rng::Purpose::Brownian, i, step);
        for (auto& v : xi) v = s.normal();
    }

    double alpha_;
    TimeGrid grid_;
    std::size_t n_;
    std::size_t m_;
    std::uint64_t seed_;
    std::vector<double> ds_, xi_;
};

// Particle states on every node, node-major.
class Ensemble {
public:
    Ensemble(TimeGrid grid, std::size_t n, int dim, std::vector<double> states,
             std::shared_ptr<const DrivingNoise> noise)
        : grid_(std::move(grid)), n_(n), dim_(dim), states_(std::move(states)), noise_(std::move(noise)) {}

    const TimeGrid& grid() const { return grid_; }
    std::size_t particles() const { return n_; }
    int dim() const { return dim_; }
    const std::shared_ptr<const DrivingNoise>& noise() const { return noise_; }

    std::span<const double> node(std::size_t j) const {
        const std::size_t w = n_ * static_cast<std::size_t>(dim_);
        return {states_.data() + j * w, w};
    }
    std::span<const double> state(std::size_t j, std::size_t i) const {
        return node(j).subspan(i * static_cast<std::size_t>(dim_), static_cast<std::size_t>(dim_));
    }

    EmpiricalMeasure law_at(std::size_t j) const {
        const auto v = node(j);
        return EmpiricalMeasure::uniform(dim_, std::vector<double>(v.begin(), v.end()));
    }

    MeasureFlow law_flow() const {
        std::vector<EmpiricalMeasure> ms;
        ms.reserve(grid_.size());
        for (std::size_t j = 0; j < grid_.size(); ++j) ms.push_back(law_at(j));
        return MeasureFlow(grid_, std::move(ms));
    }

    bool operator==(const Ensemble& o) const {
        return grid_ == o.grid_ && n_ == o.n_ && dim_ == o.dim_ && states_ == o.states_;
    }

private:
    TimeGrid grid_;
    std::size_t n_;
    int dim_;
    std::vector<double> states_;
    std::shared_ptr<const DrivingNoise> noise_;
};

// n initial states drawn from gamma (flat n x d). A uniform gamma with exactly
// n atoms is used atom by atom; otherwise inverse-CDF draws keyed by seed.
inline std::vector<double> initial_states(const EmpiricalMeasure& gamma, std::size_t n, std::uint64_t seed) {
    const auto d = static_cast<std::size_t>(gamma.dim());
    std::vector<double> out(n * d);
    bool uniform = gamma.size() == n;
    for (std::size_t i = 0; uniform && i < gamma.size(); ++i) uniform = gamma.weight(i) == gamma.weight(0);
    if (uniform) return gamma.atoms();
    if (gamma.size() == 1) {
        for (std::size_t i = 0; i < n; ++i) std::copy_n(gamma.atom(0).begin(), d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
        return out;
    }
    std::vector<double> cdf(gamma.size());
    double c = 0.0;
    for (std::size_t a = 0; a < gamma.size(); ++a) cdf[a] = (c += gamma.weight(a));
    for (std::size_t i = 0; i < n; ++i) {
        rng::Stream s(seed, rng::Purpose::InitialLaw, i);
        const double u = s.uniform() * c;
        auto a = static_cast<std::size_t>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
        a = std::min(a, gamma.size() - 1);
        std::copy_n(gamma.atom(a).begin(), d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    return out;
}

namespace detail {

struct FrozenCoefficients {
    std::vector<DriftField> drift;
    std::vector<Eigen::MatrixXd> sigma;
};

inline FrozenCoefficients freeze(const CoefficientSet& cs, const MeasureFlow& mu, const MeasureFlow& nu,
                                 const TimeGrid& grid) {
    if (!(mu.grid == grid) || !(nu.grid == grid)) throw GridAlignmentError("input flows are not on the solver grid");
    FrozenCoefficients fc;
    for (std::size_t j = 0; j < grid.steps(); ++j) {
        fc.drift.push_back(cs.drift(grid[j], mu[j]));
        fc.sigma.push_back(cs.checked_noise(grid[j], nu[j]));
    }
    return fc;
}

// Euler steps for every particle; visit(i, j, x) sees the state at node j.
template <typename Visit>
void run_particles(std::span<const double> x0, const FrozenCoefficients& fc, const CoefficientSet& cs,
                   const DrivingNoise& noise, std::size_t last_node, Visit&& visit) {
    const auto d = static_cast<std::size_t>(cs.dim);
    const auto m = static_cast<std::size_t>(cs.noise_dim);
    const auto& grid = noise.grid();
    const std::size_t n = noise.particles();
    if (x0.size() != n * d) throw DomainError("initial states do not match particle count x dim");
    if (noise.noise_dim() != cs.noise_dim) throw DomainError("driving noise dimension does not match coefficients");
    parallel_for(n, [&](std::size_t i) {
        std::vector<double> x(x0.begin() + static_cast<std::ptrdiff_t>(i * d),
                              x0.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
        std::vector<double> b(d), xi(m);
        visit(i, std::size_t{0}, std::span<const double>(x));
        for (std::size_t j = 0; j < last_node; ++j) {
            double ds = 0.0;
            noise.get(i, j, ds, xi);
            fc.drift[j](x, b);
            const double dt = grid.dt(j), sd = std::sqrt(ds);
            const auto& s = fc.sigma[j];
            for (std::size_t r = 0; r < d; ++r) {
                double w = 0.0;
                for (std::size_t c = 0; c < m; ++c) w += s(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) * xi[c];
                x[r] += b[r] * dt + sd * w;
                if (!std::isfinite(x[r]))
                    throw NumericalError("non-finite state for particle " + std::to_string(i) + " at step " +
                                         std::to_string(j) + " (t=" + csv::format(grid[j + 1]) + ")");
            }
            visit(i, j + 1, std::span<const double>(x));
        }
    }, 64);
}

}  // namespace detail

// X(t_{j+1}) = X(t_j) + b(t_j, X(t_j), mu_j) dt + sigma(t_j, nu_j) sqrt(dS) xi.
inline Ensemble propagate(std::span<const double> x0, const MeasureFlow& mu, const MeasureFlow& nu,
                          const CoefficientSet& cs, std::shared_ptr<const DrivingNoise> noise) {
    const auto& grid = noise->grid();
    const auto fc = detail::freeze(cs, mu, nu, grid);
    const std::size_t n = noise->particles(), d = static_cast<std::size_t>(cs.dim);
    std::vector<double> states(grid.size() * n * d);
    detail::run_particles(x0, fc, cs, *noise, grid.steps(), [&](std::size_t i, std::size_t j, std::span<const double> x) {
        std::copy(x.begin(), x.end(), states.begin() + static_cast<std::ptrdiff_t>((j * n + i) * d));
    });
    return Ensemble(grid, n, cs.dim, std::move(states), std::move(noise));
}

// States at a single node only (no full trajectory storage).
inline std::vector<double> propagate_to(std::span<const double> x0, const MeasureFlow& mu, const MeasureFlow& nu,
                                        const CoefficientSet& cs, const DrivingNoise& noise, std::size_t node) {
    const auto fc = detail::freeze(cs, mu, nu, noise.grid());
    const std::size_t n = noise.particles(), d = static_cast<std::size_t>(cs.dim);
    std::vector<double> out(n * d);
    detail::run_particles(x0, fc, cs, noise, node, [&](std::size_t i, std::size_t j, std::span<const double> x) {
        if (j == node) std::copy(x.begin(), x.end(), out.begin() + static_cast<std::ptrdiff_t>(i * d));
    });
    return out;
}

struct FixedPointResult {
    MeasureFlow flow;
    std::optional<Ensemble> ensemble;
    int iterations = 0;        // index of the first iterate within tolerance of its successor
    int map_evaluations = 0;
    std::vector<double> residuals;
    int inner_iterations_total = 0;
    std::vector<std::vector<double>> inner_residuals;
};

// Everything a nested fixed point run shares: initial states, noise, metric options.
class McKeanVlasovProblem {
public:
    McKeanVlasovProblem(EmpiricalMeasure gamma, CoefficientSet coeffs, SolverConfig config)
        : gamma_(std::move(gamma)), coeffs_(std::move(coeffs)), config_(std::move(config)) {
        config_.validate();
        coeffs_.validate();
        if (gamma_.dim() != coeffs_.dim) throw DomainError("initial law dimension does not match coefficients");
        if (config_.n_particles < 32)
            std::clog << "warning: n_particles=" << config_.n_particles
                      << " < 32; empirical transport distances are too noisy for fixed-point stopping\n";
        x0_ = initial_states(gamma_, config_.n_particles, config_.seed);
        noise_ = std::make_shared<const DrivingNoise>(coeffs_.constants.alpha, config_.grid, config_.n_particles,
                                                      coeffs_.noise_dim, config_.seed);
    }

    const EmpiricalMeasure& gamma() const { return gamma_; }
    const CoefficientSet& coefficients() const { return coeffs_; }
    const SolverConfig& config() const { return config_; }
    std::span<const double> initial() const { return x0_; }
    const std::shared_ptr<const DrivingNoise>& noise() const { return noise_; }

    MeasureFlow gamma_flow() const { return MeasureFlow::constant(config_.grid, gamma_); }

    Ensemble propagate(const MeasureFlow& mu, const MeasureFlow& nu) const {
        return stablemv::propagate(x0_, mu, nu, coeffs_, noise_);
    }

    DampedMetricOptions metric_options(const MeasureFlow& f, const MeasureFlow& g) const {
        DampedMetricOptions o;
        o.eta = coeffs_.constants.eta;
        o.k = coeffs_.constants.k;
        o.subsample = config_.ot_subsample;
        o.subsample_seed = config_.seed;
        if (config_.binning) {
            o.binning = config_.binning;
        } else {
            std::vector<std::reference_wrapper<const EmpiricalMeasure>> all;
            for (const auto& m : f.nodes) all.emplace_back(m);
            for (const auto& m : g.nodes) all.emplace_back(m);
            o.binning = BinningSpec::covering(all, config_.bins);
        }
        return o;
    }

    double distance(const MeasureFlow& f, const MeasureFlow& g, MetricCombo combo, double delta) const {
        return damped_sup_distance(f, g, delta, combo, metric_options(f, g));
    }
    double distance(const MeasureFlow& f, const MeasureFlow& g, MetricCombo combo) const {
        return distance(f, g, combo, config_.delta);
    }

    // nu -> Law(X^{gamma, mu, nu}) iterated from nu0.
    FixedPointResult inner_fixed_point(const MeasureFlow& mu, const MeasureFlow& nu0) const {
        MeasureFlow nu = nu0;
        FixedPointResult r;
        for (int j = 0; j < config_.max_inner + 1; ++j) {
            auto ens = propagate(mu, nu);
            auto next = ens.law_flow();
            ++r.map_evaluations;
            const double res = distance(next, nu, MetricCombo::EtaPlusK);
            r.residuals.push_back(res);
            if (res < config_.tol_inner) {
                r.iterations = j;
                r.flow = std::move(next);
                r.ensemble.emplace(std::move(ens));
                return r;
            }
            nu = std::move(next);
        }
        throw ConvergenceError("inner fixed point did not converge in " + std::to_string(config_.max_inner) +
                                   " iterations (last residual " + csv::format(r.residuals.back()) + ")",
                               r.residuals);
    }
    FixedPointResult inner_fixed_point(const MeasureFlow& mu) const { return inner_fixed_point(mu, gamma_flow()); }

    // mu -> Law(X^{gamma, mu}) where the inner problem is solved at each mu.
    FixedPointResult outer_fixed_point(const MeasureFlow& mu0, const MeasureFlow& nu0) const {
        MeasureFlow mu = mu0;
        MeasureFlow nu_start = nu0;
        FixedPointResult r;
        for (int j = 0; j < config_.max_outer + 1; ++j) {
            FixedPointResult inner;
            try {
                inner = inner_fixed_point(mu, nu_start);
            } catch (const ConvergenceError& e) {
                throw ConvergenceError(std::string("outer iteration ") + std::to_string(j + 1) + ": " + e.what(),
                                       e.residuals());
            }
            ++r.map_evaluations;
            r.inner_iterations_total += inner.iterations;
            r.inner_residuals.push_back(inner.residuals);
            const double res = distance(inner.flow, mu, MetricCombo::KvarPlusK);
            r.residuals.push_back(res);
            if (res < config_.tol_outer) {
                r.iterations = j;
                r.flow = std::move(inner.flow);
                r.ensemble = std::move(inner.ensemble);
                return r;
            }
            if (config_.warm_start) nu_start = inner.flow;
            mu = std::move(inner.flow);
        }
        throw ConvergenceError("outer fixed point did not converge in " + std::to_string(config_.max_outer) +
                                   " iterations (last residual " + csv::format(r.residuals.back()) + ")",
                               r.residuals);
    }
    FixedPointResult outer_fixed_point(const MeasureFlow& mu0) const { return outer_fixed_point(mu0, gamma_flow()); }
    FixedPointResult solve() const { return outer_fixed_point(gamma_flow()); }

private:
    EmpiricalMeasure gamma_;
    CoefficientSet coeffs_;
    SolverConfig config_;
    std::vector<double> x0_;
    std::shared_ptr<const DrivingNoise> noise_;
};

inline FixedPointResult inner_fixed_point(const EmpiricalMeasure& gamma, const MeasureFlow& mu,
                                          const CoefficientSet& cs, const SolverConfig& cfg) {
    return McKeanVlasovProblem(gamma, cs, cfg).inner_fixed_point(mu);
}

inline FixedPointResult outer_fixed_point(const EmpiricalMeasure& gamma, const CoefficientSet& cs,
                                          const SolverConfig& cfg) {
    return McKeanVlasovProblem(gamma, cs, cfg).solve();
}

inline FixedPointResult solve(const EmpiricalMeasure& gamma, const CoefficientSet& cs, const SolverConfig& cfg) {
    return McKeanVlasovProblem(gamma, cs, cfg).solve();
}

struct MomentBoundReport {
    double k = 1.0;
    double sup_moment = 0.0;             // E sup_j |X(t_j)|^k
    double sup_moment_stderr = 0.0;
    double sup_moment_winsorized = 0.0;  // 99.99% winsorized
    double initial_moment = 0.0;         // E |X_0|^k
    double ratio = 0.0;                  // sup_moment / (1 + initial_moment)
};

inline MomentBoundReport moment_bound_report(const Ensemble& ens, double k, const EmpiricalMeasure& gamma) {
    if (!(k > 0.0)) throw DomainError("moment order must be > 0");
    const std::size_t n = ens.particles();
    std::vector<double> sups(n, 0.0);
    for (std::size_t j = 0; j < ens.grid().size(); ++j)
        for (std::size_t i = 0; i < n; ++i) {
            double r2 = 0.0;
            for (double v : ens.state(j, i)) r2 += v * v;
            sups[i] = std::max(sups[i], std::pow(r2, k / 2.0));
        }
    MomentBoundReport rep;
    rep.k = k;
    const auto est = mean_estimate(sups);
    rep.sup_moment = est.value;
    rep.sup_moment_stderr = est.std_error;
    rep.sup_moment_winsorized = winsorized_mean(sups, 0.9999);
    rep.initial_moment = moment(gamma, k);
    rep.ratio = rep.sup_moment / (1.0 + rep.initial_moment);
    return rep;
}

struct MomentLadder {
    std::vector<double> radii;
    std::vector<MomentBoundReport> reports;
    LinearFit fit;  // sup_moment against 1 + E|X_0|^k
};

// Solves from gamma = delta_{x e_1} for each radius with common noise.
inline MomentLadder moment_bound_ladder(const CoefficientSet& cs, const SolverConfig& cfg,
                                        const std::vector<double>& radii, double k) {
    MomentLadder out;
    std::vector<double> xs, ys;
    for (double r : radii) {
        std::vector<double> point(static_cast<std::size_t>(cs.dim), 0.0);
        point[0] = r;
        const auto gamma = EmpiricalMeasure::dirac(point);
        const auto sol = solve(gamma, cs, cfg);
        auto rep = moment_bound_report(*sol.ensemble, k, gamma);
        xs.push_back(1.0 + rep.initial_moment);
        ys.push_back(rep.sup_moment);
        out.radii.push_back(r);
        out.reports.push_back(rep);
    }
    out.fit = linear_fit(xs, ys);
    return out;
}

struct ContractionRow {
    double delta = 0.0;
    double input_distance = 0.0;
    double output_distance = 0.0;
    double ratio = 0.0;
    double envelope = 0.0;  // delta^{1/alpha - 1} + 1/delta
};

struct ContractionReport {
    std::vector<ContractionRow> rows;
    double shift = 0.0;
    LinearFit fit;  // log ratio against log delta
    bool nonincreasing = false;
};

// Contraction factor of mu -> Law(X^{gamma,mu}) in the damped kvar+W_k metric.
// mu1 is the free stable flow from gamma, mu2 its translate by `shift` e_1;
// both images share the driving noise.
inline ContractionReport contraction_estimate(const EmpiricalMeasure& gamma, const CoefficientSet& cs,
                                              const SolverConfig& cfg, const std::vector<double>& delta_grid,
                                              double shift = 0.5) {
    if (delta_grid.size() < 3) throw DomainError("contraction estimate needs >= 3 delta values");
    for (double dl : delta_grid)
        if (!(dl > 0.0)) throw DomainError("delta values must be > 0");
    const McKeanVlasovProblem prob(gamma, cs, cfg);
    const auto free_cs = free_coefficients(cs.dim, cs.constants);
    const auto g = prob.gamma_flow();
    const auto mu1 = stablemv::propagate(prob.initial(), g, g, free_cs,
                                         std::make_shared<const DrivingNoise>(cs.constants.alpha, cfg.grid,
                                                                              cfg.n_particles, cs.noise_dim,
                                                                              cfg.seed ^ 0x5bd1e995u))
                         .law_flow();
    std::vector<EmpiricalMeasure> shifted;
    for (const auto& m : mu1.nodes) {
        auto atoms = m.atoms();
        for (std::size_t i = 0; i < m.size(); ++i) atoms[i * static_cast<std::size_t>(m.dim())] += shift;
        shifted.emplace_back(m.dim(), std::move(atoms), m.weights());
    }
    const MeasureFlow mu2(cfg.grid, std::move(shifted));
    const auto out1 = prob.inner_fixed_point(mu1).flow;
    const auto out2 = prob.inner_fixed_point(mu2).flow;

    // One box for all four flows so every delta uses the same estimator.
    std::vector<std::reference_wrapper<const EmpiricalMeasure>> all;
    for (const auto* f : {&mu1, &mu2, &out1, &out2})
        for (const auto& m : f->nodes) all.emplace_back(m);
    auto opt = prob.metric_options(mu1, mu2);
    opt.binning = BinningSpec::covering(all, cfg.bins);

    ContractionReport rep;
    rep.shift = shift;
    std::vector<double> lx, ly;
    for (double dl : delta_grid) {
        ContractionRow row;
        row.delta = dl;
        row.input_distance = damped_sup_distance(mu1, mu2, dl, MetricCombo::KvarPlusK, opt);
        row.output_distance = damped_sup_distance(out1, out2, dl, MetricCombo::KvarPlusK, opt);
        row.ratio = row.input_distance > 0.0 ? row.output_distance / row.input_distance : 0.0;
        row.envelope = damped_expint(cs.constants.alpha, dl) / std::tgamma(1.0 - 1.0 / cs.constants.alpha) + 1.0 / dl;
        rep.rows.push_back(row);
        if (row.ratio > 0.0) {
            lx.push_back(std::log(dl));
            ly.push_back(std::log(row.ratio));
        }
    }
    rep.nonincreasing = true;
    for (std::size_t q = 1; q < rep.rows.size(); ++q)
        rep.nonincreasing = rep.nonincreasing && rep.rows[q].ratio <= rep.rows[q - 1].ratio;
    if (lx.size() >= 2) rep.fit = linear_fit(lx, ly);
    return rep;
}

}  // namespace stablemv
