#pragma once

// Direct solvers for symmetric tridiagonal and cyclic tridiagonal systems.
// Row i reads  lo[i] x[i-1] + diag[i] x[i] + up[i] x[i+1] = rhs[i]; for the cyclic
// case indices wrap, so lo[0] couples to x[n-1] and up[n-1] to x[0].

#include <cmath>
#include <vector>

#include "dynflow/core.hpp"

namespace dynflow {

/// Thomas algorithm.  lo[0] and up[n-1] are ignored.
inline Vec solve_tridiagonal(const Vec& lo, const Vec& diag, const Vec& up, Vec rhs) {
    std::size_t n = diag.size();
    if (n == 0) return rhs;
    Vec c(n);
    double beta = diag[0];
    if (beta == 0.0) throw Error("tridiagonal solve: zero pivot");
    rhs[0] /= beta;
    for (std::size_t i = 1; i < n; ++i) {
        c[i - 1] = up[i - 1] / beta;
        beta = diag[i] - lo[i] * c[i - 1];
        if (beta == 0.0) throw Error("tridiagonal solve: zero pivot");
        rhs[i] = (rhs[i] - lo[i] * rhs[i - 1]) / beta;
    }
    for (std::size_t i = n - 1; i-- > 0;) rhs[i] -= c[i] * rhs[i + 1];
    return rhs;
}

/// Cyclic system via Sherman-Morrison on top of two Thomas solves.
inline Vec solve_cyclic_tridiagonal(const Vec& lo, const Vec& diag, const Vec& up, const Vec& rhs) {
    std::size_t n = diag.size();
    if (n < 3) throw Error("cyclic tridiagonal solve needs n >= 3");
    double alpha = up[n - 1];  // A(n-1, 0)
    double beta = lo[0];       // A(0, n-1)
    double gam = -diag[0];
    Vec d = diag;
    d[0] -= gam;
    d[n - 1] -= alpha * beta / gam;
    Vec x = solve_tridiagonal(lo, d, up, rhs);
    Vec u(n, 0.0);
    u[0] = gam;
    u[n - 1] = alpha;
    Vec z = solve_tridiagonal(lo, d, up, u);
    double fact = (x[0] + beta * x[n - 1] / gam) / (1.0 + z[0] + beta * z[n - 1] / gam);
    for (std::size_t i = 0; i < n; ++i) x[i] -= fact * z[i];
    return x;
}

} // namespace dynflow
