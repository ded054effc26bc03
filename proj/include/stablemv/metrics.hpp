#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "stablemv/errors.hpp"
#include "stablemv/measure.hpp"
#include "stablemv/rng.hpp"
#include "stablemv/transport.hpp"

namespace stablemv {

inline constexpr std::size_t kDefaultAtomCap = 4096;

namespace detail {

inline double dist_pow(std::span<const double> x, std::span<const double> y, double kappa) {
    double r2 = 0.0;
    for (std::size_t c = 0; c < x.size(); ++c) r2 += (x[c] - y[c]) * (x[c] - y[c]);
    if (r2 == 0.0) return 0.0;
    return kappa == 2.0 ? r2 : std::pow(r2, kappa / 2.0);
}

// Integral of |F^{-1}(u) - G^{-1}(u)|^kappa du for measures on the line.
inline double quantile_cost(const EmpiricalMeasure& g, const EmpiricalMeasure& h, double kappa) {
    auto sorted = [](const EmpiricalMeasure& m) {
        std::vector<std::pair<double, double>> v(m.size());
        for (std::size_t i = 0; i < m.size(); ++i) v[i] = {m.atom(i)[0], m.weight(i)};
        std::sort(v.begin(), v.end());
        return v;
    };
    const auto a = sorted(g), b = sorted(h);
    std::size_t i = 0, j = 0;
    double ra = a[0].second, rb = b[0].second, total = 0.0;
    while (i < a.size() && j < b.size()) {
        const double f = std::min(ra, rb);
        if (f > 0.0) total += f * std::pow(std::abs(a[i].first - b[j].first), kappa);
        ra -= f;
        rb -= f;
        if (ra <= 0.0 && ++i < a.size()) ra = a[i].second;
        if (rb <= 0.0 && ++j < b.size()) rb = b[j].second;
    }
    return total;
}

}  // namespace detail

struct WassersteinOptions {
    std::size_t atom_cap = kDefaultAtomCap;
};

// W_kappa with cost |x-y|^kappa; the outer power 1/kappa is applied only for kappa > 1.
inline double wasserstein(const EmpiricalMeasure& g, const EmpiricalMeasure& h, double kappa,
                          const WassersteinOptions& opt = {}) {
    if (!(kappa > 0.0)) throw DomainError("Wasserstein exponent must be > 0");
    if (g.dim() != h.dim()) throw DomainError("Wasserstein between measures of different dimension");
    double cost = 0.0;
    if (g.dim() == 1 && kappa >= 1.0) {
        cost = detail::quantile_cost(g, h, kappa);
    } else {
        if (g.size() + h.size() > opt.atom_cap)
            throw CapacityError("exact transport limited to " + std::to_string(opt.atom_cap) + " atoms (got " +
                                std::to_string(g.size() + h.size()) + "); subsample the measures first");
        // Fixed argument order so that the result is exactly symmetric.
        const bool flip = std::tie(h.weights(), h.atoms()) < std::tie(g.weights(), g.atoms());
        const auto& a = flip ? h : g;
        const auto& b = flip ? g : h;
        std::vector<double> c(a.size() * b.size());
        for (std::size_t i = 0; i < a.size(); ++i)
            for (std::size_t j = 0; j < b.size(); ++j) c[i * b.size() + j] = detail::dist_pow(a.atom(i), b.atom(j), kappa);
        cost = ot::solve(a.weights(), b.weights(), c).cost;
    }
    cost = std::max(cost, 0.0);
    return kappa > 1.0 ? std::pow(cost, 1.0 / kappa) : cost;
}

// Histogram box shared by every measure that is compared.
struct BinningSpec {
    std::vector<double> lower, upper;
    int bins = 64;

    int dim() const { return static_cast<int>(lower.size()); }

    void validate() const {
        if (lower.empty() || lower.size() != upper.size()) throw DomainError("binning box needs matching corners");
        if (lower.size() > 3) throw DomainError("binning supports d <= 3");
        if (bins < 1) throw DomainError("bins per axis must be >= 1");
        for (std::size_t c = 0; c < lower.size(); ++c)
            if (!(lower[c] < upper[c])) throw DomainError("binning box needs lower < upper on every axis");
    }

    // Smallest box containing every atom of the given measures, padded slightly.
    template <typename Range>
    static BinningSpec covering(const Range& measures, int bins = 64) {
        BinningSpec b;
        b.bins = bins;
        bool first = true;
        for (const EmpiricalMeasure& m : measures) {
            if (first) {
                b.lower.assign(static_cast<std::size_t>(m.dim()), std::numeric_limits<double>::infinity());
                b.upper.assign(static_cast<std::size_t>(m.dim()), -std::numeric_limits<double>::infinity());
                first = false;
            }
            for (std::size_t i = 0; i < m.size(); ++i)
                for (std::size_t c = 0; c < b.lower.size(); ++c) {
                    b.lower[c] = std::min(b.lower[c], m.atom(i)[c]);
                    b.upper[c] = std::max(b.upper[c], m.atom(i)[c]);
                }
        }
        if (first) throw EmptyDataError("covering box of no measures");
        for (std::size_t c = 0; c < b.lower.size(); ++c) {
            const double span = b.upper[c] - b.lower[c];
            const double pad = span > 0.0 ? 1e-9 * span : 0.5;
            b.lower[c] -= pad;
            b.upper[c] += pad;
        }
        return b;
    }
};

namespace detail {

inline std::size_t bin_index(const BinningSpec& b, std::span<const double> x, std::size_t atom) {
    std::size_t idx = 0;
    for (std::size_t c = 0; c < x.size(); ++c) {
        if (!(x[c] >= b.lower[c] && x[c] <= b.upper[c])) {
            std::string pt;
            for (std::size_t q = 0; q < x.size(); ++q) pt += (q ? "," : "") + csv::format(x[q]);
            throw DomainError("atom " + std::to_string(atom) + " at (" + pt + ") lies outside the binning box");
        }
        const double u = (x[c] - b.lower[c]) / (b.upper[c] - b.lower[c]);
        const auto k = std::min(static_cast<std::size_t>(u * b.bins), static_cast<std::size_t>(b.bins - 1));
        idx = idx * static_cast<std::size_t>(b.bins) + k;
    }
    return idx;
}

inline double bin_center_norm_pow(const BinningSpec& b, std::size_t idx, double k) {
    double r2 = 0.0;
    const auto nb = static_cast<std::size_t>(b.bins);
    for (std::size_t c = b.lower.size(); c-- > 0;) {
        const std::size_t q = idx % nb;
        idx /= nb;
        const double w = (b.upper[c] - b.lower[c]) / b.bins;
        const double x = b.lower[c] + (static_cast<double>(q) + 0.5) * w;
        r2 += x * x;
    }
    return std::pow(r2, k / 2.0);
}

// Sum over bins of weight(bin) |g(bin) - h(bin)|, summed in sorted order so the
// result does not depend on atom order.
inline double binned_variation(const EmpiricalMeasure& g, const EmpiricalMeasure& h, const BinningSpec& b,
                               std::optional<double> k) {
    b.validate();
    if (g.dim() != b.dim() || h.dim() != b.dim()) throw DomainError("binning box dimension mismatch");
    std::vector<std::pair<std::size_t, double>> entries;
    entries.reserve(g.size() + h.size());
    for (std::size_t i = 0; i < g.size(); ++i) entries.emplace_back(bin_index(b, g.atom(i), i), g.weight(i));
    for (std::size_t i = 0; i < h.size(); ++i) entries.emplace_back(bin_index(b, h.atom(i), i), -h.weight(i));
    std::sort(entries.begin(), entries.end());
    double total = 0.0;
    for (std::size_t s = 0; s < entries.size();) {
        std::size_t e = s;
        double diff = 0.0;
        while (e < entries.size() && entries[e].first == entries[s].first) diff += entries[e++].second;
        const double weight = k ? 1.0 + bin_center_norm_pow(b, entries[s].first, *k) : 1.0;
        total += weight * std::abs(diff);
        s = e;
    }
    return total;
}

}  // namespace detail

// Binned estimate of sup_{|f| <= 1 + |x|^k} |g(f) - h(f)|, weight taken at bin centres.
inline double weighted_variation(const EmpiricalMeasure& g, const EmpiricalMeasure& h, double k,
                                 const BinningSpec& bins) {
    if (!(k >= 1.0)) throw DomainError("weighted variation exponent must be >= 1");
    return detail::binned_variation(g, h, bins, k);
}

inline double total_variation(const EmpiricalMeasure& g, const EmpiricalMeasure& h, const BinningSpec& bins) {
    return detail::binned_variation(g, h, bins, std::nullopt);
}

// Deterministic stratified subsample of `target` atoms at weighted quantiles
// (i + u)/target of the first coordinate; u is drawn from `seed`, so two
// measures subsampled with the same seed share rank offsets.
inline EmpiricalMeasure stratified_subsample(const EmpiricalMeasure& g, std::size_t target, std::uint64_t seed) {
    if (target == 0) throw DomainError("subsample size must be >= 1");
    if (g.size() <= target) return g;
    std::vector<std::size_t> order(g.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return g.atom(a)[0] < g.atom(b)[0]; });
    rng::Stream s(seed, rng::Purpose::Subsample, 0);
    const double u = s.uniform();
    std::vector<double> atoms;
    atoms.reserve(target * static_cast<std::size_t>(g.dim()));
    double cum = 0.0;
    std::size_t pos = 0;
    for (std::size_t q = 0; q < target; ++q) {
        const double level = (static_cast<double>(q) + u) / static_cast<double>(target);
        while (pos + 1 < order.size() && cum + g.weight(order[pos]) <= level) cum += g.weight(order[pos++]);
        const auto a = g.atom(order[pos]);
        atoms.insert(atoms.end(), a.begin(), a.end());
    }
    return EmpiricalMeasure::uniform(g.dim(), std::move(atoms));
}

enum class MetricCombo { EtaPlusK, KvarPlusK };

struct DampedMetricOptions {
    double eta = 0.5;
    double k = 1.2;
    std::optional<BinningSpec> binning;  // required for KvarPlusK
    std::size_t subsample = 128;         // 0 disables; applies to the general OT solver only
    std::uint64_t subsample_seed = 0;
    WassersteinOptions ot{};
};

// Distance used inside the damped metrics: exact when the sorted fast path
// applies, otherwise computed on stratified subsamples.
inline double solver_wasserstein(const EmpiricalMeasure& g, const EmpiricalMeasure& h, double kappa,
                                 const DampedMetricOptions& opt) {
    if (g.dim() == 1 && kappa >= 1.0) return wasserstein(g, h, kappa, opt.ot);
    if (opt.subsample == 0) return wasserstein(g, h, kappa, opt.ot);
    return wasserstein(stratified_subsample(g, opt.subsample, opt.subsample_seed),
                       stratified_subsample(h, opt.subsample, opt.subsample_seed), kappa, opt.ot);
}

inline double node_distance(const EmpiricalMeasure& g, const EmpiricalMeasure& h, MetricCombo combo,
                            const DampedMetricOptions& opt) {
    const double wk = solver_wasserstein(g, h, opt.k, opt);
    if (combo == MetricCombo::EtaPlusK) return solver_wasserstein(g, h, opt.eta, opt) + wk;
    if (!opt.binning) throw DomainError("kvar_plus_k metric needs a binning box");
    return weighted_variation(g, h, opt.k, *opt.binning) + wk;
}

// max over grid nodes of e^{-delta t} (d_1 + d_2)(F_t, G_t).
inline double damped_sup_distance(const MeasureFlow& f, const MeasureFlow& g, double delta, MetricCombo combo,
                                  const DampedMetricOptions& opt = {}) {
    if (!(delta >= 0.0)) throw DomainError("damping must be >= 0");
    if (!(f.grid == g.grid)) throw GridAlignmentError("damped distance between flows on different grids");
    double best = 0.0;
    for (std::size_t j = 0; j < f.size(); ++j) {
        if (f[j] == g[j]) continue;
        best = std::max(best, std::exp(-delta * f.grid[j]) * node_distance(f[j], g[j], combo, opt));
    }
    return best;
}

inline std::string to_string(MetricCombo c) { return c == MetricCombo::EtaPlusK ? "eta_plus_k" : "kvar_plus_k"; }

}  // namespace stablemv
