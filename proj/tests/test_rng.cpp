#include <gtest/gtest.h>

#include <random>
#include <set>

#include "stablemv/rng.hpp"

using stablemv::rng::Philox4x32;
using stablemv::rng::Purpose;
using stablemv::rng::Stream;

// Known-answer vectors published with the Random123 reference implementation.
TEST(Philox, KnownAnswerZero) {
    const auto out = Philox4x32::apply({0, 0, 0, 0}, {0, 0});
    EXPECT_EQ(out[0], 0x6627e8d5u);
    EXPECT_EQ(out[1], 0xe169c58du);
    EXPECT_EQ(out[2], 0xbc57ac4cu);
    EXPECT_EQ(out[3], 0x9b00dbd8u);
}

TEST(Philox, KnownAnswerOnes) {
    const auto out = Philox4x32::apply({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
    EXPECT_EQ(out[0], 0x408f276du);
    EXPECT_EQ(out[1], 0x41c83b0eu);
    EXPECT_EQ(out[2], 0xa20bc7c6u);
    EXPECT_EQ(out[3], 0x6d5451fdu);
}

TEST(Philox, KnownAnswerPi) {
    const auto out = Philox4x32::apply({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
    EXPECT_EQ(out[0], 0xd16cfe09u);
    EXPECT_EQ(out[1], 0x94fdccebu);
    EXPECT_EQ(out[2], 0x5001e420u);
    EXPECT_EQ(out[3], 0x24126ea1u);
}

TEST(Stream, SameKeysGiveSameSequence) {
    Stream a(42, Purpose::Brownian, 7, 3), b(42, Purpose::Brownian, 7, 3);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a(), b());
}

TEST(Stream, KeysSeparateStreams) {
    std::set<std::uint32_t> firsts;
    firsts.insert(Stream(1, Purpose::Brownian, 0, 0)());
    firsts.insert(Stream(2, Purpose::Brownian, 0, 0)());
    firsts.insert(Stream(1, Purpose::Subordinator, 0, 0)());
    firsts.insert(Stream(1, Purpose::Brownian, 1, 0)());
    firsts.insert(Stream(1, Purpose::Brownian, 0, 1)());
    firsts.insert(Stream(1, Purpose::Brownian, std::uint64_t{1} << 32, 0)());
    EXPECT_EQ(firsts.size(), 6u);
}

TEST(Stream, UniformIsOpenInterval) {
    Stream s(9, Purpose::Generic, 0);
    double lo = 1.0, hi = 0.0, sum = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double u = s.uniform();
        lo = std::min(lo, u);
        hi = std::max(hi, u);
        sum += u;
    }
    EXPECT_GT(lo, 0.0);
    EXPECT_LT(hi, 1.0);
    EXPECT_NEAR(sum / n, 0.5, 5.0 * std::sqrt(1.0 / 12.0 / n));
}

TEST(Stream, NormalMoments) {
    Stream s(11, Purpose::Generic, 0);
    const int n = 400000;
    double m1 = 0.0, m2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = s.normal();
        m1 += z;
        m2 += z * z;
    }
    EXPECT_NEAR(m1 / n, 0.0, 5.0 / std::sqrt(n));
    EXPECT_NEAR(m2 / n, 1.0, 5.0 * std::sqrt(2.0 / n));
}

TEST(Stream, ExponentialMean) {
    Stream s(12, Purpose::Generic, 0);
    const int n = 400000;
    double m = 0.0;
    for (int i = 0; i < n; ++i) m += s.exponential();
    EXPECT_NEAR(m / n, 1.0, 5.0 / std::sqrt(n));
}

TEST(Stream, WorksWithStandardDistributions) {
    static_assert(std::uniform_random_bit_generator<Stream>);
    Stream s(3, Purpose::Generic, 0);
    std::uniform_int_distribution<int> die(1, 6);
    for (int i = 0; i < 1000; ++i) {
        const int v = die(s);
        EXPECT_GE(v, 1);
        EXPECT_LE(v, 6);
    }
}
