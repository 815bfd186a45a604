#pragma once

// Data-parallel inner loops. Each kernel has a scalar reference in
// kernels/scalar.cpp and, where the build and CPU allow, an AVX2 variant.
// The variants perform the same floating-point operations in the same
// order and must agree bitwise with the scalar reference.

#include <span>
#include <string_view>

namespace gexpect::kernels {

enum class Isa { Scalar, Avx2 };

std::string_view to_string(Isa isa) noexcept;

/// Best instruction set supported by both this build and the running CPU.
Isa detected_isa() noexcept;
/// Instruction set currently used by the dispatching entry points.
Isa active_isa() noexcept;
/// Overrides dispatch (e.g. to force the scalar path). Requesting an ISA that
/// is not available falls back to Scalar. Returns the ISA actually selected.
Isa set_active_isa(Isa isa) noexcept;

class ScopedIsa {
public:
    explicit ScopedIsa(Isa isa) noexcept : previous_(active_isa()) { set_active_isa(isa); }
    ~ScopedIsa() { set_active_isa(previous_); }
    ScopedIsa(const ScopedIsa&) = delete;
    ScopedIsa& operator=(const ScopedIsa&) = delete;

private:
    Isa previous_;
};

/// Coefficients of one explicit step u <- u + dt (G(D2 u) + source).
struct GHeatCoeffs {
    double dt;
    double inv_dx2;
    double var_lo;
    double var_hi;
};

// Dispatching entry points -------------------------------------------------

/// out[i] = u[i] + dt * G((u[i-1] - 2 u[i] + u[i+1]) / dx^2) on interior nodes;
/// out[0] and out[n-1] are copied from u. `source`, when non-empty, is added
/// inside the dt bracket: out[i] = u[i] + dt * (G(...) + source[i]).
void gheat_step(std::span<const double> u, std::span<const double> source, std::span<double> out,
                const GHeatCoeffs& c) noexcept;

/// out[i] = (u[i-1] - 2 u[i] + u[i+1]) * inv_dx2 on interior nodes, copies the
/// neighbouring interior value at the two boundary nodes.
void second_difference(std::span<const double> u, std::span<double> out, double inv_dx2) noexcept;

/// b[p] += (h[p] * sqrt_dt) * z[p];  qv[p] += (h[p] * h[p]) * dt
void advance_paths(std::span<double> b, std::span<double> qv, std::span<const double> h,
                   std::span<const double> z, double dt, double sqrt_dt) noexcept;

/// inc[j] = (s[j] * (h[j] * h[j])) * dt - (2 G(s[j])) * dt
void k_increments(std::span<const double> s, std::span<const double> h, std::span<double> inc, double dt,
                  double var_lo, double var_hi) noexcept;

// Explicit variants, exposed for equivalence tests -------------------------

namespace scalar {
void gheat_step(std::span<const double> u, std::span<const double> source, std::span<double> out,
                const GHeatCoeffs& c) noexcept;
void second_difference(std::span<const double> u, std::span<double> out, double inv_dx2) noexcept;
void advance_paths(std::span<double> b, std::span<double> qv, std::span<const double> h,
                   std::span<const double> z, double dt, double sqrt_dt) noexcept;
void k_increments(std::span<const double> s, std::span<const double> h, std::span<double> inc, double dt,
                  double var_lo, double var_hi) noexcept;
}  // namespace scalar

namespace avx2 {
bool available() noexcept;
void gheat_step(std::span<const double> u, std::span<const double> source, std::span<double> out,
                const GHeatCoeffs& c) noexcept;
void second_difference(std::span<const double> u, std::span<double> out, double inv_dx2) noexcept;
void advance_paths(std::span<double> b, std::span<double> qv, std::span<const double> h,
                   std::span<const double> z, double dt, double sqrt_dt) noexcept;
void k_increments(std::span<const double> s, std::span<const double> h, std::span<double> inc, double dt,
                  double var_lo, double var_hi) noexcept;
}  // namespace avx2

}  // namespace gexpect::kernels
