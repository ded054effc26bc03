#include <gtest/gtest.h>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include <cmath>

#include "stablemv/appendix_limits.hpp"
#include "support.hpp"

using namespace stablemv;

namespace {

LimitExperiment small(double kappa, std::size_t paths = 20000, std::size_t steps = 50) {
    LimitExperiment e;
    e.kappa = kappa;
    e.n_paths = paths;
    e.steps = steps;
    e.seed = 17;
    return e;
}

}  // namespace

TEST(DampedExpint, MatchesQuadrature) {
    boost::math::quadrature::exp_sinh<double> integrator;
    for (double alpha : {1.2, 1.5, 1.8})
        for (double delta : {0.5, 1.0, 7.0, 100.0}) {
            auto f = [=](double r) { return std::pow(r, -1.0 / alpha) * std::exp(-delta * r); };
            const double q = integrator.integrate(f);
            EXPECT_NEAR(damped_expint(alpha, delta), q, 1e-9 * q) << alpha << " " << delta;
        }
}

TEST(DampedExpint, KnownValueAndScaling) {
    EXPECT_NEAR(damped_expint(1.5, 1.0), 2.678938534707747, 1e-12);
    EXPECT_NEAR(damped_expint(1.5, 40.0) / damped_expint(1.5, 10.0), std::pow(4.0, 1.0 / 1.5 - 1.0), 1e-12);
    EXPECT_LT(damped_expint(1.5, 1e8), 1e-2);
    EXPECT_THROW(damped_expint(2.0, 1.0), DomainError);
    EXPECT_THROW(damped_expint(1.5, 0.0), DomainError);
}

TEST(DampedPowerIntegral, MatchesQuadrature) {
    boost::math::quadrature::tanh_sinh<double> integrator;
    for (double q : {-0.6, -0.1, 0.0, 0.53})
        for (double a : {0.0, 0.3, 5.0, 80.0}) {
            auto f = [=](double r) { return std::exp(-a * r) * std::pow(r, q); };
            const double ref = integrator.integrate(f, 0.0, 2.0);
            EXPECT_NEAR(damped_power_integral(a, q, 2.0), ref, 1e-9 * ref) << q << " " << a;
        }
}

TEST(LimitExperiment, Windows) {
    auto e = small(0.3);
    EXPECT_NO_THROW(e.validate(LimitPart::I));
    e.kappa = 0.75;
    EXPECT_THROW(e.validate(LimitPart::I), DomainError);
    e.kappa = 0.9;
    EXPECT_NO_THROW(e.validate(LimitPart::II));
    const auto [lo, hi] = e.theta_window();
    EXPECT_DOUBLE_EQ(lo, 0.25);
    EXPECT_DOUBLE_EQ(hi, 0.6);
    EXPECT_DOUBLE_EQ(e.theta_value(), 0.425);
    e.theta = 0.7;
    EXPECT_THROW(e.validate(LimitPart::II), DomainError);
    e.theta.reset();
    e.kappa = 1.3;
    EXPECT_THROW(e.validate(LimitPart::II), DomainError);
    e.kappa = -0.3;
    EXPECT_THROW(e.validate(LimitPart::II), DomainError);
    e = small(0.3);
    e.deltas = {4.0, 1.0};
    EXPECT_THROW(e.validate(LimitPart::I), DomainError);
    e.deltas = {1.0};
    e.epsilon = 1.0;
    EXPECT_THROW(e.validate(LimitPart::I), DomainError);
}

TEST(Envelopes, DecreaseInDelta) {
    const auto e = small(0.3);
    const double mk = subordinator_moment(1.5, 0.3, 1.0);
    const auto eps = epsilon_grid();
    EXPECT_GT(eps.front(), 0.0);
    EXPECT_LT(eps.back(), 1.0);
    double prev = INFINITY;
    for (double delta : {1.0, 4.0, 16.0, 64.0, 256.0, 1e6}) {
        double best = INFINITY;
        for (double x : eps) best = std::min(best, envelope_i(e, delta, x, mk));
        EXPECT_LT(best, prev);
        prev = best;
    }
}

TEST(LimitI, VanishingDampingRecoversMoment) {
    // With delta -> 0 the quantity is E S_t^kappa, largest at t = T.
    auto e = small(0.3, 100000, 20);
    e.deltas = {1e-12};
    const auto tab = limit_i(e);
    const double exact = subordinator_moment(1.5, 0.3, 1.0);
    EXPECT_NEAR(tab.rows[0].estimate, exact, 3.0 * tab.rows[0].std_error);
    EXPECT_DOUBLE_EQ(tab.rows[0].argmax_t, 1.0);
}

TEST(LimitI, LadderProperties) {
    const auto tab = limit_i(small(0.3));
    ASSERT_EQ(tab.rows.size(), 5u);
    EXPECT_TRUE(tab.nonnegative());
    EXPECT_TRUE(tab.nonincreasing());
    EXPECT_TRUE(tab.decays());
    EXPECT_TRUE(tab.dominated());
    EXPECT_TRUE(tab.pass());
    for (const auto& r : tab.rows) {
        EXPECT_GT(r.envelope_eps, 0.0);
        EXPECT_GE(r.envelope_user, r.envelope);
    }
}

TEST(LimitI, MomentsAgree) {
    const auto tab = limit_i(small(0.3));
    ASSERT_EQ(tab.moments_exact.size(), 1u);
    EXPECT_NEAR(tab.moments_mc[0].second.value, tab.moments_exact[0].second, 3.0 * tab.moments_mc[0].second.std_error);
}

TEST(LimitI, GridRefinementAtModerateDamping) {
    auto coarse = small(0.3, 20000, 100), fine = small(0.3, 20000, 200);
    coarse.deltas = fine.deltas = {1.0, 4.0};
    const auto a = limit_i(coarse), b = limit_i(fine);
    for (std::size_t d = 0; d < 2; ++d)
        EXPECT_NEAR(a.rows[d].estimate, b.rows[d].estimate, 0.05 * b.rows[d].estimate);
}

TEST(LimitI, ThreadIndependent) {
    LimitTable a;
    {
        testing_support::ThreadGuard one(1);
        a = limit_i(small(0.3, 3000, 20));
    }
    testing_support::ThreadGuard three(3);
    const auto b = limit_i(small(0.3, 3000, 20));
    for (std::size_t d = 0; d < a.rows.size(); ++d) EXPECT_EQ(a.rows[d].estimate, b.rows[d].estimate);
}

TEST(LimitII, VanishingDampingMatchesClosedForm) {
    // delta -> 0: int_0^t E (S_t - S_r)^{kappa-1/2} dr = m (t^{q+1}) / (q+1).
    auto e = small(0.9, 50000, 100);
    e.deltas = {1e-12};
    const auto tab = limit_ii(e);
    const double q = (2.0 * 0.9 - 1.0) / 1.5;
    const double exact = subordinator_moment(1.5, 0.4, 1.0) / (q + 1.0);
    EXPECT_NEAR(tab.rows[0].estimate, exact, 0.01 * exact + 3.0 * tab.rows[0].std_error);
}

TEST(LimitII, LadderProperties) {
    const auto tab = limit_ii(small(0.9, 5000, 50));
    EXPECT_TRUE(tab.nonnegative());
    EXPECT_TRUE(tab.nonincreasing());
    EXPECT_TRUE(tab.decays());
    EXPECT_TRUE(tab.dominated());
    ASSERT_EQ(tab.moments_exact.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i)
        EXPECT_NEAR(tab.moments_mc[i].second.value, tab.moments_exact[i].second,
                    4.0 * tab.moments_mc[i].second.std_error + 0.01 * tab.moments_exact[i].second)
            << tab.moments_exact[i].first;
}

TEST(LimitII, NegativeExponentBelowHalf) {
    // kappa < 1/2 makes the inner weight (S_t - S_r)^{kappa - 3/2} steeper; still finite and ordered.
    auto e = small(0.2, 5000, 50);
    const auto tab = limit_ii(e);
    for (const auto& r : tab.rows) EXPECT_TRUE(std::isfinite(r.estimate));
    EXPECT_TRUE(tab.nonincreasing());
}

TEST(RunLimit, Dispatch) {
    auto e = small(0.3, 2000, 10);
    EXPECT_EQ(run_limit(LimitPart::I, e).part, LimitPart::I);
    e.kappa = 0.9;
    EXPECT_EQ(run_limit(LimitPart::II, e).part, LimitPart::II);
    EXPECT_EQ(to_string(LimitPart::II), "ii");
}
