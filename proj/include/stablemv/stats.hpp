#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "stablemv/errors.hpp"
#include "stablemv/parallel.hpp"

namespace stablemv {

// A Monte Carlo estimate and its standard error.
struct Estimate {
    double value = 0.0;
    double std_error = 0.0;
};

struct ComplexEstimate {
    std::complex<double> value;
    double std_error = 0.0;  // sqrt(E|X - mean|^2 / n)
};

// Welford accumulator with a deterministic pairwise merge.
class MeanAccumulator {
public:
    void add(double x) {
        ++n_;
        const double d = x - mean_;
        mean_ += d / static_cast<double>(n_);
        m2_ += d * (x - mean_);
    }

    void merge(const MeanAccumulator& o) {
        if (o.n_ == 0) return;
        if (n_ == 0) {
            *this = o;
            return;
        }
        const double n = static_cast<double>(n_ + o.n_);
        const double d = o.mean_ - mean_;
        mean_ += d * static_cast<double>(o.n_) / n;
        m2_ += o.m2_ + d * d * static_cast<double>(n_) * static_cast<double>(o.n_) / n;
        n_ += o.n_;
    }

    std::size_t count() const { return n_; }
    double mean() const { return mean_; }
    double variance() const { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }
    double std_error() const { return n_ > 1 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0; }
    Estimate estimate() const { return {mean(), std_error()}; }

private:
    std::size_t n_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

inline constexpr std::size_t kReduceChunk = 4096;

// Mean of fn(i) over i in [0,n). Chunk partials are merged in index order, so
// the result is bit-identical for any thread count.
template <typename Fn>
MeanAccumulator parallel_mean(std::size_t n, Fn&& fn) {
    const std::size_t n_blocks = (n + kReduceChunk - 1) / kReduceChunk;
    std::vector<MeanAccumulator> parts(n_blocks);
    parallel_blocks(n_blocks, [&](std::size_t b) {
        const std::size_t lo = b * kReduceChunk;
        const std::size_t hi = std::min(n, lo + kReduceChunk);
        MeanAccumulator acc;
        for (std::size_t i = lo; i < hi; ++i) acc.add(fn(i));
        parts[b] = acc;
    });
    MeanAccumulator total;
    for (const auto& p : parts) total.merge(p);
    return total;
}

inline Estimate mean_estimate(std::span<const double> xs) {
    if (xs.empty()) throw EmptyDataError("mean of an empty sample");
    MeanAccumulator acc;
    for (double x : xs) acc.add(x);
    return acc.estimate();
}

// Mean after clamping to the [q, 1-q] empirical quantiles.
inline double winsorized_mean(std::span<const double> xs, double upper_quantile) {
    if (xs.empty()) throw EmptyDataError("winsorized mean of an empty sample");
    std::vector<double> v(xs.begin(), xs.end());
    std::sort(v.begin(), v.end());
    const auto idx = static_cast<std::size_t>(std::floor(upper_quantile * static_cast<double>(v.size() - 1)));
    const double hi = v[idx];
    const double lo = v[v.size() - 1 - idx];
    double s = 0.0;
    for (double x : v) s += std::clamp(x, std::min(lo, hi), hi);
    return s / static_cast<double>(v.size());
}

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    double slope_stderr = 0.0;
};

// Ordinary least squares y ~ intercept + slope * x.
inline LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw DomainError("linear_fit needs >= 2 paired points");
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (!(sxx > 0.0)) throw NumericalError("linear_fit: regressor has zero variance");
    LinearFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    fit.r_squared = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
    if (x.size() > 2) {
        const double sse = std::max(0.0, syy - fit.slope * sxy);
        fit.slope_stderr = std::sqrt(sse / (n - 2.0) / sxx);
    }
    return fit;
}

// Kolmogorov distribution tail Q(lambda) = 2 sum (-1)^{j-1} exp(-2 j^2 lambda^2).
inline double kolmogorov_q(double lambda) {
    if (lambda < 0.2) return 1.0;
    double sum = 0.0;
    for (int j = 1; j <= 100; ++j) {
        const double term = std::exp(-2.0 * j * j * lambda * lambda);
        sum += (j % 2 == 1 ? term : -term);
        if (term < 1e-16) break;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

struct KsResult {
    double statistic = 0.0;
    double p_value = 1.0;
};

// Two-sample Kolmogorov-Smirnov test (asymptotic p-value with the usual
// small-sample correction of the effective size).
inline KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw EmptyDataError("ks_two_sample: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    const double ne = std::sqrt(na * nb / (na + nb));
    return {d, kolmogorov_q((ne + 0.12 + 0.11 / ne) * d)};
}

}  // namespace stablemv
