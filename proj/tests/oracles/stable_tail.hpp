#pragma once

// Tail probability of the symmetric stable law with E e^{i xi Z} = e^{-|xi|^alpha / 2}.

#include <boost/math/quadrature/ooura_fourier_integrals.hpp>

#include <cmath>
#include <numbers>

namespace oracle {

// P(Z > x) from the large-x expansion
//   (1/pi) sum_k (-1)^{k+1} Gamma(alpha k) sin(pi alpha k / 2) (1/2)^k / k! x^{-alpha k},
// summed until the terms stop shrinking.
inline double stable_tail_series(double alpha, double x) {
    double sum = 0.0, prev = INFINITY;
    for (int k = 1; k <= 60; ++k) {
        const double term = std::pow(-1.0, k + 1) * std::tgamma(alpha * k) * std::sin(std::numbers::pi * alpha * k / 2.0) *
                            std::pow(0.5, k) / std::tgamma(k + 1.0) * std::pow(x, -alpha * k);
        if (std::abs(term) > prev) break;
        sum += term;
        prev = std::abs(term);
        if (prev < 1e-18 * std::abs(sum)) break;
    }
    return sum / std::numbers::pi;
}

// P(Z > x) = 1/2 - (1/pi) int_0^inf e^{-u^alpha/2} sin(u x) / u du.
inline double stable_tail_fourier(double alpha, double x) {
    boost::math::quadrature::ooura_fourier_sin<double> sin_integrator;
    auto f = [alpha](double u) { return std::exp(-std::pow(u, alpha) / 2.0) / u; };
    return 0.5 - sin_integrator.integrate(f, x).first / std::numbers::pi;
}

// P(Z >= 2x) / P(x <= Z < 2x)
inline double stable_tail_ratio(double alpha, double x) {
    const double up = stable_tail_series(alpha, 2.0 * x);
    return up / (stable_tail_series(alpha, x) - up);
}

}  // namespace oracle
