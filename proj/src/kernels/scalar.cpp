#include "gexpect/kernels.hpp"

namespace gexpect::kernels::scalar {

namespace {

// max(a, 0) with the x86 maxpd convention (returns the second operand on ties
// such as -0.0 vs 0.0) so the vector variants can match bit for bit.
inline double pos_part(double a) noexcept { return a > 0.0 ? a : 0.0; }

inline double g_of(double a, double var_lo, double var_hi) noexcept {
    return 0.5 * (var_hi * pos_part(a) - var_lo * pos_part(-a));
}

}  // namespace

void gheat_step(std::span<const double> u, std::span<const double> source, std::span<double> out,
                const GHeatCoeffs& c) noexcept {
    const std::size_t n = u.size();
    out[0] = u[0];
    out[n - 1] = u[n - 1];
    const bool with_source = !source.empty();
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const double d2 = ((u[i - 1] - 2.0 * u[i]) + u[i + 1]) * c.inv_dx2;
        double rate = g_of(d2, c.var_lo, c.var_hi);
        if (with_source) rate = rate + source[i];
        out[i] = u[i] + c.dt * rate;
    }
}

void second_difference(std::span<const double> u, std::span<double> out, double inv_dx2) noexcept {
    const std::size_t n = u.size();
    for (std::size_t i = 1; i + 1 < n; ++i) out[i] = ((u[i - 1] - 2.0 * u[i]) + u[i + 1]) * inv_dx2;
    out[0] = out[1];
    out[n - 1] = out[n - 2];
}

void advance_paths(std::span<double> b, std::span<double> qv, std::span<const double> h,
                   std::span<const double> z, double dt, double sqrt_dt) noexcept {
    for (std::size_t p = 0; p < b.size(); ++p) {
        b[p] = b[p] + (h[p] * sqrt_dt) * z[p];
        qv[p] = qv[p] + (h[p] * h[p]) * dt;
    }
}

void k_increments(std::span<const double> s, std::span<const double> h, std::span<double> inc, double dt,
                  double var_lo, double var_hi) noexcept {
    for (std::size_t j = 0; j < s.size(); ++j) {
        const double two_g = 2.0 * g_of(s[j], var_lo, var_hi);
        inc[j] = (s[j] * (h[j] * h[j])) * dt - two_g * dt;
    }
}

}  // namespace gexpect::kernels::scalar
