#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>

#include "stap/rng.hpp"
#include "stap/tensor.hpp"

namespace stap::test {

inline double rel_err(double got, double want) {
    const double scale = std::max({1.0, std::fabs(got), std::fabs(want)});
    return std::fabs(got - want) / scale;
}

/// Central difference of a scalar closure with respect to one storage slot.
/// The closure must re-run the full forward pass it measures.
inline double central_diff(const std::function<double()>& f, double& slot,
                           double h = 1e-5) {
    const double keep = slot;
    slot = keep + h;
    const double up = f();
    slot = keep - h;
    const double dn = f();
    slot = keep;
    return (up - dn) / (2.0 * h);
}

/// Worst relative error between `analytic` and central differences of `f`
/// over up to `max_probes` coordinates of `x`. Small tensors are swept
/// exhaustively; larger ones are probed at random coordinates.
inline double fd_worst_err(const std::function<double()>& f, Tensor& x,
                           const Tensor& analytic, Rng& rng,
                           std::size_t max_probes = 10, double h = 1e-5) {
    double worst = 0.0;
    const std::size_t n = x.numel();
    const std::size_t probes = std::min(n, max_probes);
    for (std::size_t p = 0; p < probes; ++p) {
        const std::size_t i = n <= max_probes ? p : rng.index(n);
        const double fd = central_diff(f, x.v[i], h);
        worst = std::max(worst, rel_err(analytic.v[i], fd));
    }
    return worst;
}

}  // namespace stap::test
