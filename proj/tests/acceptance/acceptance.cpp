// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "oracles/transport_bruteforce.hpp"
#include "stablemv/stablemv.hpp"

using namespace stablemv;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

class Detail {
public:
    template <typename... Args>
    Detail& add(const char* fmt, Args... args) {
        char buf[512];
        std::snprintf(buf, sizeof buf, fmt, args...);
        if (!text_.empty()) text_ += "; ";
        text_ += buf;
        return *this;
    }
    const std::string& str() const { return text_; }

private:
    std::string text_;
};

Outcome laplace_transform() {
    Outcome o;
    Detail d;
    double worst = 0.0;
    for (double alpha : {1.2, 1.5, 1.8})
        for (double t : {0.5, 1.0}) {
            const auto s = sample_subordinator_marginal(alpha, t, 1000000, 101);
            for (double r : {0.5, 1.0, 2.0}) {
                const auto e = empirical_laplace(s, r);
                const double z = std::abs(e.value - laplace_exact(alpha, r, t)) / e.std_error;
                worst = std::max(worst, z);
                if (!(z < 3.0)) {
                    o.pass = false;
                    d.add("alpha=%g t=%g r=%g off by %.2f se", alpha, t, r, z);
                }
            }
        }
    d.add("18 cases, n=1e6, worst %.2f se", worst);
    o.detail = d.str();
    return o;
}

Outcome characteristic_function() {
    Outcome o;
    Detail d;
    double worst = 0.0;
    for (double alpha : {1.2, 1.5, 1.8})
        for (double t : {0.5, 1.0}) {
            const auto z = sample_stable_marginal(StableParams{alpha, 1}, t, 1000000, 102);
            for (double xi : {0.5, 1.0, 2.0}) {
                const std::vector<double> v{xi};
                const auto e = empirical_charfn(z, v);
                const double dev = std::abs(e.value - std::complex<double>(charfn_exact(alpha, xi, t), 0.0)) / e.std_error;
                worst = std::max(worst, dev);
                if (!(dev < 3.0)) {
                    o.pass = false;
                    d.add("alpha=%g t=%g xi=%g off by %.2f se", alpha, t, xi, dev);
                }
            }
        }
    d.add("18 cases, n=1e6, worst %.2f se", worst);
    o.detail = d.str();
    return o;
}

Outcome negative_moment() {
    Outcome o;
    Detail d;
    double worst = 0.0;
    for (double alpha : {1.2, 1.5, 1.8}) {
        const auto s = sample_subordinator_marginal(alpha, 1.0, 1000000, 103);
        for (double eps : {0.0, 0.5, 1.0}) {
            const double p = (-1.0 + eps) / 2.0;
            const auto mc = parallel_mean(s.size(), [&](std::size_t i) { return std::pow(s[i], p); }).estimate();
            const double exact = subordinator_negative_moment(alpha, eps, 1.0);
            const double rel = std::abs(mc.value - exact) / exact;
            worst = std::max(worst, rel);
            if (!(rel < 0.02)) {
                o.pass = false;
                d.add("alpha=%g eps=%g relative error %.4f", alpha, eps, rel);
            }
        }
    }
    d.add("9 cases, n=1e6, worst relative error %.4f", worst);
    o.detail = d.str();
    return o;
}

Outcome counterexample() {
    Outcome o;
    Detail d;
    const auto p = calibrate(1.5, 1000000, 104);
    const auto rep = verify_two_solutions(p, 1000000, TimeGrid::uniform(1.0, 10), 105);
    double worst = 0.0;
    int c3_fail = 0;
    for (const auto& c : rep.checks) {
        if (c.c == 3.0) {
            c3_fail += !c.within_3se();
            continue;
        }
        worst = std::max(worst, c.residual / c.std_error);
    }
    o.pass = rep.pass();
    d.add("M=%g, c=1,2 worst %.2f se over 10 times, c=3 rejected at %d/10", p.M, worst, c3_fail);
    const auto tr = tail_ratio(1.5, 50.0, 10000000, 106);
    const double z = std::abs(tr.value - tail_ratio_limit(1.5)) / tr.std_error;
    if (!(z < 3.0)) o.pass = false;
    d.add("tail ratio at x=50: %.4f +- %.4f vs %.4f (%.2f se)", tr.value, tr.std_error, tail_ratio_limit(1.5), z);
    o.detail = d.str();
    return o;
}

Outcome appendix_limits() {
    Outcome o;
    Detail d;
    for (auto part : {LimitPart::I, LimitPart::II}) {
        LimitExperiment e;
        e.alpha = 1.5;
        e.kappa = part == LimitPart::I ? 0.3 : 0.9;
        e.n_paths = 100000;
        e.steps = 200;
        e.seed = 107;
        const auto t0 = std::chrono::steady_clock::now();
        const auto tab = run_limit(part, e);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool ok = tab.pass() && secs <= 600.0;
        o.pass = o.pass && ok;
        d.add("part %s: nonincreasing=%d decays(%.3g -> %.3g)=%d dominated=%d, %.0fs", to_string(part).c_str(),
              tab.nonincreasing(), tab.rows.front().estimate, tab.rows.back().estimate, tab.decays(), tab.dominated(), secs);
    }
    o.detail = d.str();
    return o;
}

Outcome gradient_scaling() {
    Outcome o;
    Detail d;
    for (double eps : {0.0, 1.0}) {
        const auto rep = gradient_scaling_check(free_coefficients(1), eps, 20000, 108);
        const bool ok = std::abs(rep.fit.slope - rep.theory_slope) <= 0.1;
        o.pass = o.pass && ok;
        d.add("eps=%g slope %.4f vs %.4f", eps, rep.fit.slope, rep.theory_slope);
    }
    o.detail = d.str();
    return o;
}

Outcome duhamel() {
    Outcome o;
    Detail d;
    const auto grid = TimeGrid::uniform(1.0, 200);
    const std::vector<double> x{0.2};
    const auto flow = MeasureFlow::constant(grid, EmpiricalMeasure::dirac(x));
    const auto rb = duhamel_residual(tanh_test_function(), builtin_coefficients(1), flow, flow, x, 1.0, 100000, 109);
    const bool ok_b = std::abs(rb.residual) < std::max(3.0 * rb.std_error, 5e-3);
    const auto rf = duhamel_residual(tanh_test_function(), free_coefficients(1), flow, flow, x, 1.0, 100000, 110);
    const bool ok_f = std::abs(rf.residual) < 3.0 * rf.std_error;
    o.pass = ok_b && ok_f;
    d.add("builtin: residual %.2e, se %.2e, integral %.4f", rb.residual, rb.std_error, rb.integral);
    d.add("b=0: residual %.2e, se %.2e", rf.residual, rf.std_error);
    o.detail = d.str();
    return o;
}

SolverConfig solver_config(std::size_t n, std::uint64_t seed) {
    SolverConfig cfg;
    cfg.n_particles = n;
    cfg.grid = TimeGrid::uniform(1.0, 200);
    cfg.tol_outer = 1e-2;
    cfg.tol_inner = 1e-2;
    cfg.seed = seed;
    return cfg;
}

Outcome uniqueness() {
    Outcome o;
    Detail d;
    const auto cfg = solver_config(10000, 111);
    const auto t0 = std::chrono::steady_clock::now();
    const McKeanVlasovProblem prob(EmpiricalMeasure::dirac({0.5}), builtin_coefficients(1), cfg);
    const auto a = prob.solve();
    const auto far = MeasureFlow::constant(cfg.grid, EmpiricalMeasure::uniform(1, {-3.0, 3.0}));
    const auto b = prob.outer_fixed_point(far, far);
    const double dist = prob.distance(a.flow, b.flow, MetricCombo::KvarPlusK);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.pass = dist < 2.0 * cfg.tol_outer && secs <= 900.0;
    d.add("distance %.3e < %.3e, outer iterations %d and %d, far start first residual %.3f, %.0fs", dist,
          2.0 * cfg.tol_outer, a.iterations, b.iterations, b.residuals.front(), secs);
    o.detail = d.str();
    return o;
}

Outcome contraction() {
    Outcome o;
    Detail d;
    const auto cs = builtin_coefficients(1);
    const auto rep = contraction_estimate(EmpiricalMeasure::dirac({0.0}), cs, solver_config(10000, 112), {5.0, 20.0, 80.0});
    const double bound = -(1.0 - 1.0 / cs.constants.alpha) + 0.15;
    o.pass = rep.nonincreasing && rep.fit.slope <= bound;
    for (const auto& r : rep.rows) d.add("delta=%g ratio %.3e", r.delta, r.ratio);
    d.add("slope %.3f <= %.3f", rep.fit.slope, bound);
    o.detail = d.str();
    return o;
}

Outcome moment_bound() {
    Outcome o;
    Detail d;
    const auto ladder = moment_bound_ladder(builtin_coefficients(1), solver_config(10000, 113), {1.0, 10.0, 100.0}, 1.2);
    o.pass = ladder.fit.r_squared > 0.999;
    d.add("R^2 %.6f, slope %.4f, intercept %.4f", ladder.fit.r_squared, ladder.fit.slope, ladder.fit.intercept);
    o.detail = d.str();
    return o;
}

Outcome metric_module() {
    Outcome o;
    Detail d;
    auto random_measure = [](rng::Stream& s) {
        std::vector<double> atoms(10), w(5);
        for (auto& a : atoms) a = 2.0 * s.normal();
        double total = 0.0;
        for (auto& v : w) total += (v = s.exponential());
        for (auto& v : w) v /= total;
        w.back() = 1.0 - (w[0] + w[1] + w[2] + w[3]);
        return EmpiricalMeasure(2, std::move(atoms), std::move(w));
    };
    const std::vector<double> kappas{0.5, 1.0, 1.5};
    double worst_lp = 0.0;
    const int instances = 25;
    for (int q = 0; q < instances; ++q) {
        rng::Stream s(114, rng::Purpose::Generic, static_cast<std::uint64_t>(q));
        const auto g = random_measure(s), h = random_measure(s);
        std::vector<std::vector<double>> costs;
        for (double k : kappas) {
            std::vector<double> c(25);
            for (std::size_t i = 0; i < 5; ++i)
                for (std::size_t j = 0; j < 5; ++j)
                    c[i * 5 + j] = std::pow(std::hypot(g.atom(i)[0] - h.atom(j)[0], g.atom(i)[1] - h.atom(j)[1]), k);
            costs.push_back(std::move(c));
        }
        const oracle::BruteForceTransport bf(g.weights(), h.weights(), costs);
        for (std::size_t k = 0; k < kappas.size(); ++k) {
            const double ref = kappas[k] > 1.0 ? std::pow(bf.optimum()[k], 1.0 / kappas[k]) : bf.optimum()[k];
            worst_lp = std::max(worst_lp, std::abs(wasserstein(g, h, kappas[k]) - ref));
        }
    }
    double worst_dual = -INFINITY;
    for (int q = 0; q < 1000; ++q) {
        rng::Stream s(115, rng::Purpose::Probe, static_cast<std::uint64_t>(q));
        const auto g = random_measure(s), h = random_measure(s);
        const double kappa = 0.1 + 0.9 * s.uniform();
        double cx[4], cy[4], cc[4];
        for (int j = 0; j < 4; ++j) {
            cx[j] = 2.0 * s.normal();
            cy[j] = 2.0 * s.normal();
            cc[j] = s.normal();
        }
        auto f = [&](std::span<const double> x) {
            double best = INFINITY;
            for (int j = 0; j < 4; ++j) best = std::min(best, cc[j] + std::pow(std::hypot(x[0] - cx[j], x[1] - cy[j]), kappa));
            return best;
        };
        double gf = 0.0, hf = 0.0;
        for (std::size_t i = 0; i < 5; ++i) {
            gf += g.weight(i) * f(g.atom(i));
            hf += h.weight(i) * f(h.atom(i));
        }
        worst_dual = std::max(worst_dual, std::abs(gf - hf) - wasserstein(g, h, kappa));
    }
    o.pass = worst_lp <= 1e-8 && worst_dual <= 1e-8;
    d.add("%d instances x 3 kappas vs brute-force LP, max gap %.2e", instances, worst_lp);
    d.add("1000 test functions, max |g(f)-h(f)| - W %.3e", worst_dual);
    o.detail = d.str();
    return o;
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"laplace_transform", laplace_transform},
        {"characteristic_function", characteristic_function},
        {"negative_moment", negative_moment},
        {"counterexample", counterexample},
        {"appendix_limits", appendix_limits},
        {"kernel_gradient_scaling", gradient_scaling},
        {"duhamel_identity", duhamel},
        {"fixed_point_uniqueness", uniqueness},
        {"contraction_rate", contraction},
        {"moment_bound", moment_bound},
        {"metric_module", metric_module},
    };
    int failures = 0;
    for (const auto& [name, check] : criteria) {
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        failures += !o.pass;
        std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
