#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "oracles/stable_tail.hpp"
#include "stablemv/counterexample.hpp"
#include "support.hpp"

using namespace stablemv;

TEST(TailOracle, SeriesAgreesWithFourierIntegral) {
    for (double alpha : {1.2, 1.5, 1.8})
        for (double x : {5.0, 10.0, 50.0}) {
            const double s = oracle::stable_tail_series(alpha, x), f = oracle::stable_tail_fourier(alpha, x);
            EXPECT_NEAR(s, f, 1e-4 * s) << alpha << " " << x;
        }
}

TEST(TailRatio, LimitValues) {
    EXPECT_NEAR(tail_ratio_limit(1.5), 0.546918, 1e-6);
    EXPECT_NEAR(tail_ratio_limit(1.2), 0.770774, 1e-6);
    EXPECT_NEAR(oracle::stable_tail_ratio(1.5, 1e4), tail_ratio_limit(1.5), 1e-4);
}

TEST(TailRatio, MatchesLimitAtFifty) {
    const auto est = tail_ratio(1.5, 50.0, 10000000, 2024);
    EXPECT_NEAR(est.value, tail_ratio_limit(1.5), 3.0 * est.std_error);
    EXPECT_NEAR(est.value, oracle::stable_tail_ratio(1.5, 50.0), 3.0 * est.std_error);
    EXPECT_LT(est.std_error, 0.05);
}

TEST(TailRatio, ApproachesLimitForSmallAlpha) {
    const double limit = tail_ratio_limit(1.2);
    double prev_gap = INFINITY;
    for (double x : {10.0, 30.0, 100.0, 1000.0}) {
        const double gap = std::abs(oracle::stable_tail_ratio(1.2, x) - limit);
        EXPECT_LT(gap, prev_gap);
        prev_gap = gap;
    }
    for (double x : {10.0, 30.0}) {
        const auto est = tail_ratio(1.2, x, 2000000, 7);
        EXPECT_NEAR(est.value, oracle::stable_tail_ratio(1.2, x), 3.0 * est.std_error) << x;
    }
}

TEST(TailRatio, Validation) {
    EXPECT_THROW(tail_ratio(1.5, 50.0, 1000, 1), DomainError);
    EXPECT_THROW(tail_ratio(2.5, 50.0, 100000, 1), DomainError);
    EXPECT_THROW(tail_ratio(1.5, -1.0, 100000, 1), DomainError);
    EXPECT_THROW(tail_ratio(1.9, 1e6, 100000, 1), EmptyDataError);
}

TEST(TailRatio, ThreadIndependent) {
    Estimate a;
    {
        testing_support::ThreadGuard one(1);
        a = tail_ratio(1.5, 5.0, 200000, 3);
    }
    testing_support::ThreadGuard three(3);
    const auto b = tail_ratio(1.5, 5.0, 200000, 3);
    EXPECT_EQ(a.value, b.value);
    EXPECT_EQ(a.std_error, b.std_error);
}

TEST(Calibrate, ProducesConsistentConstants) {
    const auto p = calibrate(1.5, 1000000, 99);
    EXPECT_GE(p.M, 2.0);
    EXPECT_LE(p.M, 16384.0);
    EXPECT_LT(p.p2, p.p1);
    EXPECT_NEAR(p.a, (p.p1 - p.p2) / p.p1, 1e-15);
    EXPECT_NEAR(p.b_coef, 1.0 / p.p1, 1e-12);
    EXPECT_NEAR(p.a + p.b_coef * p.p2, 1.0, 1e-12);
    EXPECT_NEAR(p.a + p.b_coef * (p.p1 + p.p2), 2.0, 1e-12);
    // p1 and p2 are the tail probabilities of Z_1 at M and 2M.
    const double up = oracle::stable_tail_fourier(1.5, 2.0 * p.M);
    const double mid = oracle::stable_tail_fourier(1.5, p.M) - up;
    EXPECT_NEAR(p.p1, mid, 4.0 * std::sqrt(mid / 1e6));
    EXPECT_NEAR(p.p2, up, 4.0 * std::sqrt(up / 1e6));
    const auto q = calibrate(1.5, 1000000, 99);
    EXPECT_EQ(p.M, q.M);
    EXPECT_EQ(p.p1, q.p1);
}

TEST(Calibrate, FailsWithTooFewSamples) {
    EXPECT_THROW(calibrate(1.5, 100, 1), CalibrationError);
}

TEST(SigmaOfLaw, Extremes) {
    CounterexampleParams p;
    p.M = 2.0;
    p.a = 0.3;
    p.b_coef = 5.0;
    EXPECT_EQ(sigma_of_law(p, 1.0, EmpiricalMeasure::dirac({0.0})), 0.3);
    EXPECT_EQ(sigma_of_law(p, 1.0, EmpiricalMeasure::dirac({4.0})), 5.3);
    // Threshold scales as t^{1/alpha}.
    EXPECT_EQ(sigma_of_law(p, 0.5, EmpiricalMeasure::dirac({4.0 * std::pow(0.5, 1.0 / 1.5)})), 5.3);
    EXPECT_EQ(sigma_of_law(p, 0.5, EmpiricalMeasure::dirac({3.9 * std::pow(0.5, 1.0 / 1.5)})), 0.3);
    EXPECT_THROW(sigma_of_law(p, 0.0, EmpiricalMeasure::dirac({0.0})), DomainError);
    EXPECT_THROW(sigma_of_law(p, 1.5, EmpiricalMeasure::dirac({0.0})), DomainError);
    EXPECT_THROW(sigma_of_law(p, 1.0, EmpiricalMeasure::dirac({0.0, 0.0})), DomainError);
}

TEST(SigmaOfLaw, TotalVariationLipschitz) {
    CounterexampleParams p;
    p.a = 0.1;
    p.b_coef = 3.0;
    for (std::uint64_t q = 0; q < 200; ++q) {
        rng::Stream s(5, rng::Purpose::Generic, q);
        std::vector<double> atoms(10), w1(10), w2(10);
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t i = 0; i < 10; ++i) {
            atoms[i] = 8.0 * s.normal();
            s1 += (w1[i] = s.exponential());
            s2 += (w2[i] = s.exponential());
        }
        for (auto& v : w1) v /= s1;
        for (auto& v : w2) v /= s2;
        w1.back() += 1.0 - std::accumulate(w1.begin(), w1.end(), 0.0);
        w2.back() += 1.0 - std::accumulate(w2.begin(), w2.end(), 0.0);
        const EmpiricalMeasure g1(1, atoms, w1), g2(1, atoms, w2);
        double tv = 0.0;
        for (std::size_t i = 0; i < 10; ++i) tv += std::abs(w1[i] - w2[i]);
        const double t = 0.05 + 0.95 * s.uniform();
        const double d = std::abs(sigma_of_law(p, t, g1) - sigma_of_law(p, t, g2));
        EXPECT_LE(d, p.b_coef * tv / 2.0 + 1e-12);
        EXPECT_GE(sigma_of_law(p, t, g1), p.a - 1e-12);
        EXPECT_LE(sigma_of_law(p, t, g1), p.a + p.b_coef + 1e-12);
    }
}

TEST(TwoSolutions, ScalingsOneAndTwoSolveThirdDoesNot) {
    const auto p = calibrate(1.5, 1000000, 11);
    const auto rep = verify_two_solutions(p, 300000, TimeGrid::uniform(1.0, 10), 12);
    ASSERT_EQ(rep.checks.size(), 30u);
    EXPECT_TRUE(rep.pass());
    int c3_failures = 0;
    for (const auto& ck : rep.checks) {
        EXPECT_GT(ck.std_error, 0.0);
        if (ck.c == 3.0) c3_failures += !ck.within_3se();
    }
    EXPECT_EQ(c3_failures, 10);
}

TEST(TwoSolutions, GridBeyondHorizonRejected) {
    CounterexampleParams p;
    p.p1 = 0.1;
    p.b_coef = 10.0;
    EXPECT_THROW(verify_two_solutions(p, 100, TimeGrid::uniform(2.0, 4), 1), DomainError);
}
