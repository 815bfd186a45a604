#include <atomic>

#include "gexpect/kernels.hpp"

namespace gexpect::kernels {

#ifndef GEXPECT_HAVE_AVX2
namespace avx2 {
bool available() noexcept { return false; }
void gheat_step(std::span<const double> u, std::span<const double> source, std::span<double> out,
                const GHeatCoeffs& c) noexcept {
    scalar::gheat_step(u, source, out, c);
}
void second_difference(std::span<const double> u, std::span<double> out, double inv_dx2) noexcept {
    scalar::second_difference(u, out, inv_dx2);
}
void advance_paths(std::span<double> b, std::span<double> qv, std::span<const double> h,
                   std::span<const double> z, double dt, double sqrt_dt) noexcept {
    scalar::advance_paths(b, qv, h, z, dt, sqrt_dt);
}
void k_increments(std::span<const double> s, std::span<const double> h, std::span<double> inc, double dt,
                  double var_lo, double var_hi) noexcept {
    scalar::k_increments(s, h, inc, dt, var_lo, var_hi);
}
}  // namespace avx2
#endif

namespace {

std::atomic<Isa>& active() noexcept {
    static std::atomic<Isa> isa{detected_isa()};
    return isa;
}

}  // namespace

std::string_view to_string(Isa isa) noexcept {
    switch (isa) {
    case Isa::Scalar: return "scalar";
    case Isa::Avx2: return "avx2";
    }
    return "unknown";
}

Isa detected_isa() noexcept { return avx2::available() ? Isa::Avx2 : Isa::Scalar; }

Isa active_isa() noexcept { return active().load(std::memory_order_relaxed); }

Isa set_active_isa(Isa isa) noexcept {
    if (isa == Isa::Avx2 && !avx2::available()) isa = Isa::Scalar;
    active().store(isa, std::memory_order_relaxed);
    return isa;
}

void gheat_step(std::span<const double> u, std::span<const double> source, std::span<double> out,
                const GHeatCoeffs& c) noexcept {
    if (active_isa() == Isa::Avx2) return avx2::gheat_step(u, source, out, c);
    scalar::gheat_step(u, source, out, c);
}

void second_difference(std::span<const double> u, std::span<double> out, double inv_dx2) noexcept {
    if (active_isa() == Isa::Avx2) return avx2::second_difference(u, out, inv_dx2);
    scalar::second_difference(u, out, inv_dx2);
}

void advance_paths(std::span<double> b, std::span<double> qv, std::span<const double> h,
                   std::span<const double> z, double dt, double sqrt_dt) noexcept {
    if (active_isa() == Isa::Avx2) return avx2::advance_paths(b, qv, h, z, dt, sqrt_dt);
    scalar::advance_paths(b, qv, h, z, dt, sqrt_dt);
}

void k_increments(std::span<const double> s, std::span<const double> h, std::span<double> inc, double dt,
                  double var_lo, double var_hi) noexcept {
    if (active_isa() == Isa::Avx2) return avx2::k_increments(s, h, inc, dt, var_lo, var_hi);
    scalar::k_increments(s, h, inc, dt, var_lo, var_hi);
}

}  // namespace gexpect::kernels
