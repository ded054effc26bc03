#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "stablemv/coefficients.hpp"
#include "stablemv/errors.hpp"
#include "stablemv/grid.hpp"
#include "stablemv/measure.hpp"
#include "stablemv/metrics.hpp"
#include "stablemv/mv_solver.hpp"
#include "stablemv/parallel.hpp"
#include "stablemv/stable_paths.hpp"
#include "stablemv/stats.hpp"

namespace stablemv {

// Noise flow, sigma sigma^* per node and a bank of subordinator paths on the
// flow's grid, for the interval [s, t].
class KernelContext {
public:
    KernelContext(const CoefficientSet& cs, MeasureFlow nu, std::size_t n_paths, std::uint64_t seed, double s,
                  double t)
        : nu_(std::move(nu)),
          bank_(StableParams{cs.constants.alpha, cs.noise_dim}, nu_.grid, n_paths, seed),
          dim_(cs.dim),
          K2_(cs.constants.K2) {
        cs.validate();
        if (nu_.dim() != cs.dim) throw DomainError("noise flow dimension does not match coefficients");
        i0_ = nu_.grid.index_of(s);
        i1_ = nu_.grid.index_of(t);
        if (!(i0_ < i1_)) throw DomainError("kernel context needs s < t");
        for (std::size_t j = 0; j < nu_.grid.size(); ++j) {
            const Eigen::MatrixXd sg = cs.checked_noise(nu_.grid[j], nu_[j]);
            a_.push_back(sg * sg.transpose());
        }
    }

    const TimeGrid& grid() const { return nu_.grid; }
    const MeasureFlow& nu() const { return nu_; }
    const PathBank& bank() const { return bank_; }
    std::size_t size() const { return bank_.size(); }
    int dim() const { return dim_; }
    double K2() const { return K2_; }
    std::size_t s_index() const { return i0_; }
    std::size_t t_index() const { return i1_; }
    const Eigen::MatrixXd& sigma_sq(std::size_t node) const { return a_[node]; }

    // Left-point sum of (sigma sigma^*)(nu_{t_i}) (S(t_{i+1}) - S(t_i)) over [t_{i0}, t_{i1}].
    Eigen::MatrixXd covariance(std::span<const double> path, std::size_t i0, std::size_t i1) const {
        Eigen::MatrixXd a = Eigen::MatrixXd::Zero(dim_, dim_);
        for (std::size_t i = i0; i < i1; ++i) a += a_[i] * (path[i + 1] - path[i]);
        return a;
    }

private:
    MeasureFlow nu_;
    PathBank bank_;
    int dim_;
    double K2_;
    std::size_t i0_ = 0, i1_ = 0;
    std::vector<Eigen::MatrixXd> a_;
};

// a_{s,t}^{nu,S} for one path, checked for symmetry, positivity and the
// eigenvalue sandwich [dS/K2, K2 dS].
inline Eigen::MatrixXd covariance_functional(const KernelContext& ctx, std::span<const double> path, std::size_t i0,
                                             std::size_t i1) {
    if (path.size() != ctx.grid().size()) throw GridAlignmentError("path is not on the context grid");
    if (i0 > i1) throw DomainError("covariance interval needs s <= t");
    Eigen::MatrixXd a = ctx.covariance(path, i0, i1);
    if (i0 == i1) return a;
    const double ds = path[i1] - path[i0];
    if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, a.cwiseAbs().maxCoeff()))
        throw NumericalError("covariance functional is not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
    const double slack = 1e-12;
    if (!(lo > 0.0) || lo < ds / ctx.K2() * (1.0 - slack) || hi > ctx.K2() * ds * (1.0 + slack))
        throw NumericalError("covariance functional eigenvalues [" + csv::format(lo) + ", " + csv::format(hi) +
                             "] outside [dS/K2, K2 dS] with dS=" + csv::format(ds));
    return a;
}

inline Eigen::MatrixXd covariance_functional(const KernelContext& ctx, std::span<const double> path) {
    return covariance_functional(ctx, path, ctx.s_index(), ctx.t_index());
}

inline double gaussian_density(const Eigen::MatrixXd& a, std::span<const double> x, std::span<const double> y) {
    const auto d = a.rows();
    Eigen::VectorXd u(d);
    for (Eigen::Index c = 0; c < d; ++c) u(c) = y[static_cast<std::size_t>(c)] - x[static_cast<std::size_t>(c)];
    const Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success) throw NumericalError("covariance is not positive definite");
    const Eigen::VectorXd z = llt.matrixL().solve(u);
    double logdet = 0.0;
    for (Eigen::Index c = 0; c < d; ++c) logdet += 2.0 * std::log(llt.matrixL()(c, c));
    return std::exp(-0.5 * z.squaredNorm() - 0.5 * logdet - 0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi));
}

// E over the first n_paths bank paths of the Gaussian density N(y; x, a_{s,t}^{nu,S}).
inline Estimate mixed_density(const KernelContext& ctx, std::span<const double> x, std::span<const double> y,
                              std::size_t n_paths) {
    if (n_paths < 1000) throw DomainError("mixed_density needs n_paths >= 1000");
    if (n_paths > ctx.size()) throw DomainError("mixed_density asks for more paths than the bank holds");
    if (x.size() != static_cast<std::size_t>(ctx.dim()) || y.size() != x.size())
        throw DomainError("mixed_density point dimension mismatch");
    return parallel_mean(n_paths, [&](std::size_t p) {
        return gaussian_density(covariance_functional(ctx, ctx.bank().path(p)), x, y);
    }).estimate();
}

namespace detail {

// E |a^{-1} U| |U|^eps for U ~ N(0, a), d = 1 or 2.
inline double gradient_moment(const Eigen::MatrixXd& a, double eps) {
    const auto d = a.rows();
    if (d == 1) {
        const double v = a(0, 0);
        const double m = std::pow(2.0, (1.0 + eps) / 2.0) * std::tgamma((2.0 + eps) / 2.0) / std::sqrt(std::numbers::pi);
        return std::pow(v, (eps - 1.0) / 2.0) * m;
    }
    if (d == 2) {
        // Polar coordinates in the eigenbasis: radial part E R^{1+eps}, R^2 ~ chi^2_2.
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
        const double l1 = es.eigenvalues()(0), l2 = es.eigenvalues()(1);
        const double radial = std::pow(2.0, (1.0 + eps) / 2.0) * std::tgamma((3.0 + eps) / 2.0);
        const int nq = 256;
        double ang = 0.0;
        for (int q = 0; q < nq; ++q) {
            const double th = 2.0 * std::numbers::pi * q / nq;
            const double c2 = std::cos(th) * std::cos(th), s2 = 1.0 - c2;
            ang += std::sqrt(c2 / l1 + s2 / l2) * std::pow(l1 * c2 + l2 * s2, eps / 2.0);
        }
        return radial * ang / nq;
    }
    throw DomainError("kernel checks support d = 1 or 2");
}

}  // namespace detail

struct GradientScalingRow {
    double lag = 0.0;  // t - s
    double estimate = 0.0;
    double std_error = 0.0;
};

struct GradientScalingReport {
    double epsilon = 0.0;
    double alpha = 0.0;
    std::vector<GradientScalingRow> rows;
    LinearFit fit;  // log estimate against log lag
    double theory_slope = 0.0;
    double fitted_constant() const { return std::exp(fit.intercept); }
};

// int |grad_x q_{s,s+L}(x,y)| |y-x|^eps dy over lags L (in grid steps from s),
// closed form per path and Monte Carlo over paths.
inline GradientScalingReport gradient_scaling_check(const KernelContext& ctx, double epsilon,
                                                    const std::vector<std::size_t>& lags, std::size_t n_paths) {
    if (lags.size() < 4) throw NumericalError("gradient scaling regression needs >= 4 lags");
    if (n_paths > ctx.size() || n_paths < 2) throw DomainError("gradient scaling asks for an invalid path count");
    GradientScalingReport rep;
    rep.epsilon = epsilon;
    std::vector<double> lx, ly;
    for (std::size_t L : lags) {
        const std::size_t i0 = ctx.s_index(), i1 = i0 + L;
        if (L == 0 || i1 >= ctx.grid().size()) throw DomainError("lag outside the grid");
        const auto est = parallel_mean(n_paths, [&](std::size_t p) {
            return detail::gradient_moment(covariance_functional(ctx, ctx.bank().path(p), i0, i1), epsilon);
        }).estimate();
        const double lag = ctx.grid()[i1] - ctx.grid()[i0];
        rep.rows.push_back({lag, est.value, est.std_error});
        if (!(est.value > 0.0) || !std::isfinite(est.value))
            throw NumericalError("non-positive gradient integral at lag " + csv::format(lag));
        lx.push_back(std::log(lag));
        ly.push_back(std::log(est.value));
    }
    rep.fit = linear_fit(lx, ly);
    return rep;
}

// Convenience: sigma from cs frozen at nu = delta_0, uniform grid of `steps`
// on [0, T], lags {1, 4, 16, 64, 256} scaled to the grid.
inline GradientScalingReport gradient_scaling_check(const CoefficientSet& cs, double epsilon, std::size_t n_paths,
                                                    std::uint64_t seed, std::size_t steps = 256, double T = 1.0) {
    if (!(epsilon >= 0.0 && epsilon < cs.constants.alpha))
        throw DomainError("epsilon must lie in [0, alpha)");
    const auto grid = TimeGrid::uniform(T, steps);
    const auto nu = MeasureFlow::constant(grid, EmpiricalMeasure::dirac(std::vector<double>(static_cast<std::size_t>(cs.dim), 0.0)));
    const KernelContext ctx(cs, nu, n_paths, seed, 0.0, T);
    std::vector<std::size_t> lags;
    for (std::size_t L = 1; L <= steps; L *= 4) lags.push_back(L);
    auto rep = gradient_scaling_check(ctx, epsilon, lags, n_paths);
    rep.alpha = cs.constants.alpha;
    rep.theory_slope = (-1.0 + epsilon) / cs.constants.alpha;
    return rep;
}

struct PerturbationReport {
    double lhs = 0.0;  // int |q^{nu1} - q^{nu2}|(x,y) |y-x|^eps dy
    double rhs = 0.0;  // E[(S_t-S_s)^{-1+eps/2} int (W_eta + W_k) dS]
    double rhs_std_error = 0.0;
    double ratio = 0.0;
    std::size_t mv_violations = 0;  // paths breaking |a1 - a2| <= 2 K2^{3/2} int (W_k + W_eta) dS
};

// d = 1. The density difference is averaged over common paths at each
// quadrature point u = y - x (log-spaced, symmetric), then weighted by |u|^eps.
inline PerturbationReport kernel_perturbation_check(const CoefficientSet& cs, const MeasureFlow& nu1,
                                                    const MeasureFlow& nu2, double epsilon, std::size_t n_paths,
                                                    std::uint64_t seed, double s, double t) {
    if (cs.dim != 1) throw DomainError("kernel perturbation check is implemented for d = 1");
    if (!(epsilon >= 0.0 && epsilon < cs.constants.alpha)) throw DomainError("epsilon must lie in [0, alpha)");
    if (!(nu1.grid == nu2.grid)) throw GridAlignmentError("perturbed flows are on different grids");
    const KernelContext c1(cs, nu1, n_paths, seed, s, t), c2(cs, nu2, n_paths, seed, s, t);
    const auto& grid = nu1.grid;
    const std::size_t i0 = c1.s_index(), i1 = c1.t_index();
    const double eta = cs.constants.eta, k = cs.constants.k;
    std::vector<double> w(grid.size(), 0.0);
    for (std::size_t i = i0; i < i1; ++i) w[i] = wasserstein(nu1[i], nu2[i], eta) + wasserstein(nu1[i], nu2[i], k);

    std::vector<double> a1(n_paths), a2(n_paths), rhs_terms(n_paths);
    PerturbationReport rep;
    const double K2 = cs.constants.K2;
    for (std::size_t p = 0; p < n_paths; ++p) {
        const auto path = c1.bank().path(p);
        a1[p] = covariance_functional(c1, path)(0, 0);
        a2[p] = covariance_functional(c2, path)(0, 0);
        double integral = 0.0;
        for (std::size_t i = i0; i < i1; ++i) integral += w[i] * (path[i + 1] - path[i]);
        const double ds = path[i1] - path[i0];
        rhs_terms[p] = std::pow(ds, -1.0 + epsilon / 2.0) * integral;
        if (std::abs(a1[p] - a2[p]) > 2.0 * std::pow(K2, 1.5) * integral * (1.0 + 1e-12) + 1e-300) ++rep.mv_violations;
    }
    const auto rhs = mean_estimate(rhs_terms);
    rep.rhs = rhs.value;
    rep.rhs_std_error = rhs.std_error;

    // Quadrature in v = log u over [1e-6, 1e6] times the median variance scale.
    std::vector<double> sorted(a1);
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(n_paths / 2), sorted.end());
    const double scale = std::sqrt(sorted[n_paths / 2]);
    const int nq = 800;
    const double vlo = std::log(1e-6 * scale), vhi = std::log(1e6 * scale);
    const double hv = (vhi - vlo) / (nq - 1);
    std::vector<double> diff(nq, 0.0);
    parallel_for(static_cast<std::size_t>(nq), [&](std::size_t q) {
        const double u = std::exp(vlo + hv * static_cast<double>(q));
        double acc = 0.0;
        for (std::size_t p = 0; p < n_paths; ++p) {
            const double g1 = std::exp(-0.5 * u * u / a1[p]) / std::sqrt(2.0 * std::numbers::pi * a1[p]);
            const double g2 = std::exp(-0.5 * u * u / a2[p]) / std::sqrt(2.0 * std::numbers::pi * a2[p]);
            acc += g1 - g2;
        }
        diff[q] = acc / static_cast<double>(n_paths);
    }, 8);
    double lhs = 0.0;
    for (int q = 0; q < nq; ++q) {
        const double u = std::exp(vlo + hv * q);
        const double f = std::abs(diff[static_cast<std::size_t>(q)]) * std::pow(u, epsilon) * u;
        lhs += (q == 0 || q == nq - 1 ? 0.5 : 1.0) * f * hv;
    }
    rep.lhs = 2.0 * lhs;  // symmetric in u
    rep.ratio = rep.rhs > 0.0 ? rep.lhs / rep.rhs : 0.0;
    return rep;
}

struct PerturbationSweepRow {
    double lambda = 0.0;
    double weight = 0.0;
    PerturbationReport report;
};

struct PerturbationSweep {
    std::vector<PerturbationSweepRow> rows;
    double ratio_spread() const {
        double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
        for (const auto& r : rows) {
            lo = std::min(lo, r.report.ratio);
            hi = std::max(hi, r.report.ratio);
        }
        return rows.empty() || lo <= 0.0 ? std::numeric_limits<double>::infinity() : hi / lo;
    }
};

// nu1 = delta_0 and nu2 = (1-w) delta_0 + w delta_1 on every node, w = lambda * base_weight.
// Both W_eta and W_1 equal w, so with k = 1 the right-hand side is linear in lambda.
inline PerturbationSweep kernel_perturbation_sweep(const CoefficientSet& cs, const std::vector<double>& lambdas,
                                                   double base_weight, double epsilon, std::size_t n_paths,
                                                   std::uint64_t seed, std::size_t steps = 200, double T = 1.0) {
    const auto grid = TimeGrid::uniform(T, steps);
    const auto nu1 = MeasureFlow::constant(grid, EmpiricalMeasure::dirac({0.0}));
    PerturbationSweep out;
    for (double lam : lambdas) {
        const double w = lam * base_weight;
        if (!(w > 0.0 && w < 1.0)) throw DomainError("perturbation weight must lie in (0,1)");
        const auto nu2 = MeasureFlow::constant(grid, EmpiricalMeasure(1, {0.0, 1.0}, {1.0 - w, w}));
        out.rows.push_back({lam, w, kernel_perturbation_check(cs, nu1, nu2, epsilon, n_paths, seed, 0.0, T)});
    }
    return out;
}

// Bounded test function with its gradient.
struct TestFunction {
    std::string name;
    std::function<double(std::span<const double>)> value;
    std::function<void(std::span<const double>, std::span<double>)> gradient;
};

// f(x) = tanh(x_1).
inline TestFunction tanh_test_function() {
    return {"tanh",
            [](std::span<const double> x) { return std::tanh(x[0]); },
            [](std::span<const double> x, std::span<double> g) {
                std::fill(g.begin(), g.end(), 0.0);
                const double th = std::tanh(x[0]);
                g[0] = 1.0 - th * th;
            }};
}

inline TestFunction constant_test_function(double c) {
    return {"constant",
            [c](std::span<const double>) { return c; },
            [](std::span<const double>, std::span<double> g) { std::fill(g.begin(), g.end(), 0.0); }};
}

// Gauss-Hermite rule for E g(N), N ~ N(0,1), by Golub-Welsch.
struct GaussHermite {
    std::vector<double> nodes, weights;

    explicit GaussHermite(int n) {
        if (n < 1) throw DomainError("Gauss-Hermite rule needs >= 1 node");
        Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
        for (int i = 1; i < n; ++i) J(i, i - 1) = J(i - 1, i) = std::sqrt(static_cast<double>(i));
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
        if (es.info() != Eigen::Success) throw NumericalError("Gauss-Hermite eigenproblem failed");
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            nodes.push_back(es.eigenvalues()(i));
            const double v = es.eigenvectors()(0, i);
            weights.push_back(v * v);
            total += v * v;
        }
        for (auto& w : weights) w /= total;
    }
};

struct DuhamelReport {
    double lhs = 0.0;       // E f(X_t)
    double q_term = 0.0;    // Q_{0,t} f(x)
    double integral = 0.0;  // int_0^t P_{0,r} <b_r, grad Q_{r,t} f> dr
    double residual = 0.0;  // lhs - q_term - integral
    double std_error = 0.0;
    std::size_t n_particles = 0;
    double t = 0.0;
};

// P_{0,t} f(x) - Q_{0,t} f(x) - int_0^t P_{0,r} <b_r(., mu_r), grad Q_{r,t} f> dr.
// Each particle pairs its own path X_r with its own future subordinator
// increments on [r, t], which are independent of X_r, so the integrand is
// unbiased per particle; Gaussian expectations use Gauss-Hermite nodes and the
// r integral the trapezoid rule.
inline DuhamelReport duhamel_residual(const TestFunction& f, const CoefficientSet& cs, const MeasureFlow& mu,
                                      const MeasureFlow& nu, std::span<const double> x, double t,
                                      std::size_t n_particles, std::uint64_t seed, int gh_nodes = 24) {
    cs.validate();
    if (cs.dim > 2) throw DomainError("Duhamel check supports d = 1 or 2");
    if (cs.dim != cs.noise_dim) throw DomainError("Duhamel check expects square noise");
    if (x.size() != static_cast<std::size_t>(cs.dim)) throw DomainError("start point dimension mismatch");
    const auto& grid = mu.grid;
    const std::size_t J = grid.index_of(t);
    if (J == 0) throw DomainError("Duhamel check needs t > 0");
    const auto d = static_cast<std::size_t>(cs.dim);
    const auto fc = detail::freeze(cs, mu, nu, grid);
    std::vector<Eigen::MatrixXd> sig2;
    for (const auto& s : fc.sigma) sig2.push_back(s * s.transpose());
    const GaussHermite gh(gh_nodes);
    const DrivingNoise noise(cs.constants.alpha, grid, n_particles, cs.noise_dim, seed);

    // Gaussian expectations E g(z + A^{1/2} N) on a tensor rule.
    auto gauss = [&](const Eigen::MatrixXd& A, std::span<const double> z, auto&& g) {
        std::vector<double> y(d);
        if (d == 1) {
            const double sd = std::sqrt(std::max(A(0, 0), 0.0));
            for (std::size_t q = 0; q < gh.nodes.size(); ++q) {
                y[0] = z[0] + sd * gh.nodes[q];
                g(std::span<const double>(y), gh.weights[q]);
            }
            return;
        }
        Eigen::MatrixXd L = Eigen::MatrixXd::Zero(2, 2);
        if (A.trace() > 0.0) L = Eigen::LLT<Eigen::MatrixXd>(A).matrixL();
        for (std::size_t q1 = 0; q1 < gh.nodes.size(); ++q1)
            for (std::size_t q2 = 0; q2 < gh.nodes.size(); ++q2) {
                const double n1 = gh.nodes[q1], n2 = gh.nodes[q2];
                y[0] = z[0] + L(0, 0) * n1;
                y[1] = z[1] + L(1, 0) * n1 + L(1, 1) * n2;
                g(std::span<const double>(y), gh.weights[q1] * gh.weights[q2]);
            }
    };

    struct Terms {
        double lhs, q, integral;
    };
    std::vector<Terms> terms(n_particles);
    parallel_for(n_particles, [&](std::size_t i) {
        std::vector<double> ds(J), xi(d), xs((J + 1) * d), b(d), grad(d), acc(d);
        std::copy(x.begin(), x.end(), xs.begin());
        for (std::size_t j = 0; j < J; ++j) {
            noise.get(i, j, ds[j], xi);
            std::span<const double> cur(xs.data() + j * d, d);
            fc.drift[j](cur, b);
            const double sd = std::sqrt(ds[j]);
            for (std::size_t r = 0; r < d; ++r) {
                double w = 0.0;
                for (std::size_t c = 0; c < d; ++c)
                    w += fc.sigma[j](static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) * xi[c];
                xs[(j + 1) * d + r] = cur[r] + b[r] * grid.dt(j) + sd * w;
            }
        }
        // A_j = a_{t_j, t} from this particle's own increments.
        std::vector<Eigen::MatrixXd> A(J + 1, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d)));
        for (std::size_t j = J; j-- > 0;) A[j] = A[j + 1] + sig2[j] * ds[j];

        Terms tm{};
        tm.lhs = f.value(std::span<const double>(xs.data() + J * d, d));
        double q = 0.0;
        gauss(A[0], x, [&](std::span<const double> y, double w) { q += w * f.value(y); });
        tm.q = q;
        double integral = 0.0, prev = 0.0;
        for (std::size_t j = 0; j <= J; ++j) {
            std::span<const double> cur(xs.data() + j * d, d);
            std::fill(acc.begin(), acc.end(), 0.0);
            gauss(A[j], cur, [&](std::span<const double> y, double w) {
                f.gradient(y, grad);
                for (std::size_t c = 0; c < d; ++c) acc[c] += w * grad[c];
            });
            // The drift at r = t uses the last frozen field (b is only needed on [0, t)).
            fc.drift[std::min(j, fc.drift.size() - 1)](cur, b);
            double val = 0.0;
            for (std::size_t c = 0; c < d; ++c) val += b[c] * acc[c];
            if (j > 0) integral += 0.5 * grid.dt(j - 1) * (prev + val);
            prev = val;
        }
        tm.integral = integral;
        terms[i] = tm;
    }, 64);

    MeanAccumulator lhs, q, integral, res;
    for (const auto& tm : terms) {
        lhs.add(tm.lhs);
        q.add(tm.q);
        integral.add(tm.integral);
        res.add(tm.lhs - tm.q - tm.integral);
    }
    DuhamelReport rep;
    rep.lhs = lhs.mean();
    rep.q_term = q.mean();
    rep.integral = integral.mean();
    rep.residual = res.mean();
    rep.std_error = res.std_error();
    rep.n_particles = n_particles;
    rep.t = t;
    return rep;
}

}  // namespace stablemv
