#pragma once

#include <cstddef>

namespace mib {

// log(2*pi)
inline constexpr double kLog2Pi = 1.8378770664093454836;

// Log-density of a diagonal Gaussian N(mu, diag(exp(lv))) at y, with the
// inverse variances precomputed as ivar = exp(-lv). Shared by the closed-form
// (known-conditional) evaluation paths; the graph-based estimators build the
// same density from tape primitives instead.
inline double diag_gauss_ll(const double* mu, const double* lv, const double* ivar,
                            const double* y, std::size_t d) {
    double acc = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        const double diff = y[k] - mu[k];
        acc += -0.5 * (kLog2Pi + lv[k]) - 0.5 * diff * diff * ivar[k];
    }
    return acc;
}

}  // namespace mib
