#include <gtest/gtest.h>

#include <numeric>
#include <vector>

#include "stablemv/rng.hpp"
#include "stablemv/stats.hpp"
#include "support.hpp"

using namespace stablemv;
using testing_support::ThreadGuard;

TEST(MeanAccumulator, MergeMatchesSequential) {
    rng::Stream s(1, rng::Purpose::Generic, 0);
    std::vector<double> xs(1000);
    for (auto& x : xs) x = s.normal() * 3.0 + 1.0;
    MeanAccumulator all, left, right;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        all.add(xs[i]);
        (i < 370 ? left : right).add(xs[i]);
    }
    left.merge(right);
    EXPECT_EQ(left.count(), all.count());
    EXPECT_NEAR(left.mean(), all.mean(), 1e-12);
    EXPECT_NEAR(left.variance(), all.variance(), 1e-10);
}

TEST(ParallelMean, IndependentOfThreadCount) {
    auto fn = [](std::size_t i) {
        rng::Stream s(5, rng::Purpose::Generic, i);
        return s.normal();
    };
    MeanAccumulator one, four;
    {
        ThreadGuard g(1);
        one = parallel_mean(50000, fn);
    }
    {
        ThreadGuard g(4);
        four = parallel_mean(50000, fn);
    }
    EXPECT_EQ(one.mean(), four.mean());
    EXPECT_EQ(one.std_error(), four.std_error());
}

TEST(ParallelBlocks, PropagatesExceptions) {
    ThreadGuard g(3);
    EXPECT_THROW(parallel_blocks(10, [](std::size_t b) {
                     if (b == 7) throw DomainError("boom");
                 }),
                 DomainError);
}

TEST(MeanEstimate, EmptyInputThrows) {
    std::vector<double> none;
    EXPECT_THROW(mean_estimate(none), EmptyDataError);
}

TEST(LinearFit, RecoversExactLine) {
    std::vector<double> x{0.0, 1.0, 2.0, 3.0, 4.0}, y;
    for (double v : x) y.push_back(-0.75 * v + 2.0);
    const auto f = linear_fit(x, y);
    EXPECT_NEAR(f.slope, -0.75, 1e-14);
    EXPECT_NEAR(f.intercept, 2.0, 1e-14);
    EXPECT_NEAR(f.r_squared, 1.0, 1e-14);
}

TEST(LinearFit, DegenerateRegressorThrows) {
    std::vector<double> x{1.0, 1.0, 1.0}, y{1.0, 2.0, 3.0};
    EXPECT_THROW(linear_fit(x, y), NumericalError);
}

TEST(Winsorized, ClipsOnlyTheTail) {
    std::vector<double> xs(10000, 1.0);
    xs.back() = 1e12;
    EXPECT_LT(winsorized_mean(xs, 0.999), 2.0);
    EXPECT_GT(mean_estimate(xs).value, 1e7);
}

TEST(KolmogorovSmirnov, SameLawIsNotRejected) {
    std::vector<double> a(20000), b(20000);
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = rng::Stream(1, rng::Purpose::Generic, i).normal();
        b[i] = rng::Stream(2, rng::Purpose::Generic, i).normal();
    }
    EXPECT_GT(ks_two_sample(a, b).p_value, 0.01);
}

TEST(KolmogorovSmirnov, ShiftedLawIsRejected) {
    std::vector<double> a(20000), b(20000);
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = rng::Stream(1, rng::Purpose::Generic, i).normal();
        b[i] = rng::Stream(2, rng::Purpose::Generic, i).normal() + 0.1;
    }
    EXPECT_LT(ks_two_sample(a, b).p_value, 1e-6);
}
