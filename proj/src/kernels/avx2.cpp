#include <immintrin.h>

#include "gexpect/kernels.hpp"

namespace gexpect::kernels::avx2 {

namespace {

inline __m256d g_of(__m256d a, __m256d half, __m256d var_lo, __m256d var_hi, __m256d zero,
                    __m256d sign_mask) noexcept {
    const __m256d pos = _mm256_max_pd(a, zero);
    const __m256d neg = _mm256_max_pd(_mm256_xor_pd(a, sign_mask), zero);
    return _mm256_mul_pd(half, _mm256_sub_pd(_mm256_mul_pd(var_hi, pos), _mm256_mul_pd(var_lo, neg)));
}

}  // namespace

bool available() noexcept { return __builtin_cpu_supports("avx2"); }

void gheat_step(std::span<const double> u, std::span<const double> source, std::span<double> out,
                const GHeatCoeffs& c) noexcept {
    const std::size_t n = u.size();
    out[0] = u[0];
    out[n - 1] = u[n - 1];
    const bool with_source = !source.empty();

    const __m256d two = _mm256_set1_pd(2.0);
    const __m256d half = _mm256_set1_pd(0.5);
    const __m256d inv_dx2 = _mm256_set1_pd(c.inv_dx2);
    const __m256d dt = _mm256_set1_pd(c.dt);
    const __m256d var_lo = _mm256_set1_pd(c.var_lo);
    const __m256d var_hi = _mm256_set1_pd(c.var_hi);
    const __m256d zero = _mm256_setzero_pd();
    const __m256d sign_mask = _mm256_set1_pd(-0.0);

    const double* up = u.data();
    std::size_t i = 1;
    for (; i + 4 < n; i += 4) {
        const __m256d left = _mm256_loadu_pd(up + i - 1);
        const __m256d mid = _mm256_loadu_pd(up + i);
        const __m256d right = _mm256_loadu_pd(up + i + 1);
        const __m256d d2 =
            _mm256_mul_pd(_mm256_add_pd(_mm256_sub_pd(left, _mm256_mul_pd(two, mid)), right), inv_dx2);
        __m256d rate = g_of(d2, half, var_lo, var_hi, zero, sign_mask);
        if (with_source) rate = _mm256_add_pd(rate, _mm256_loadu_pd(source.data() + i));
        _mm256_storeu_pd(out.data() + i, _mm256_add_pd(mid, _mm256_mul_pd(dt, rate)));
    }
    for (; i + 1 < n; ++i) {
        const double d2 = ((u[i - 1] - 2.0 * u[i]) + u[i + 1]) * c.inv_dx2;
        const double pos = d2 > 0.0 ? d2 : 0.0;
        const double neg = -d2 > 0.0 ? -d2 : 0.0;
        double rate = 0.5 * (c.var_hi * pos - c.var_lo * neg);
        if (with_source) rate = rate + source[i];
        out[i] = u[i] + c.dt * rate;
    }
}

void second_difference(std::span<const double> u, std::span<double> out, double inv_dx2) noexcept {
    const std::size_t n = u.size();
    const __m256d two = _mm256_set1_pd(2.0);
    const __m256d scale = _mm256_set1_pd(inv_dx2);
    const double* up = u.data();
    std::size_t i = 1;
    for (; i + 4 < n; i += 4) {
        const __m256d left = _mm256_loadu_pd(up + i - 1);
        const __m256d mid = _mm256_loadu_pd(up + i);
        const __m256d right = _mm256_loadu_pd(up + i + 1);
        _mm256_storeu_pd(out.data() + i,
                         _mm256_mul_pd(_mm256_add_pd(_mm256_sub_pd(left, _mm256_mul_pd(two, mid)), right), scale));
    }
    for (; i + 1 < n; ++i) out[i] = ((u[i - 1] - 2.0 * u[i]) + u[i + 1]) * inv_dx2;
    out[0] = out[1];
    out[n - 1] = out[n - 2];
}

void advance_paths(std::span<double> b, std::span<double> qv, std::span<const double> h,
                   std::span<const double> z, double dt, double sqrt_dt) noexcept {
    const std::size_t n = b.size();
    const __m256d vdt = _mm256_set1_pd(dt);
    const __m256d vsq = _mm256_set1_pd(sqrt_dt);
    std::size_t p = 0;
    for (; p + 4 <= n; p += 4) {
        const __m256d hv = _mm256_loadu_pd(h.data() + p);
        const __m256d zv = _mm256_loadu_pd(z.data() + p);
        const __m256d bv = _mm256_loadu_pd(b.data() + p);
        const __m256d qvv = _mm256_loadu_pd(qv.data() + p);
        _mm256_storeu_pd(b.data() + p, _mm256_add_pd(bv, _mm256_mul_pd(_mm256_mul_pd(hv, vsq), zv)));
        _mm256_storeu_pd(qv.data() + p, _mm256_add_pd(qvv, _mm256_mul_pd(_mm256_mul_pd(hv, hv), vdt)));
    }
    if (p < n) scalar::advance_paths(b.subspan(p), qv.subspan(p), h.subspan(p), z.subspan(p), dt, sqrt_dt);
}

void k_increments(std::span<const double> s, std::span<const double> h, std::span<double> inc, double dt,
                  double var_lo, double var_hi) noexcept {
    const std::size_t n = s.size();
    const __m256d half = _mm256_set1_pd(0.5);
    const __m256d two = _mm256_set1_pd(2.0);
    const __m256d vdt = _mm256_set1_pd(dt);
    const __m256d vlo = _mm256_set1_pd(var_lo);
    const __m256d vhi = _mm256_set1_pd(var_hi);
    const __m256d zero = _mm256_setzero_pd();
    const __m256d sign_mask = _mm256_set1_pd(-0.0);
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
        const __m256d sv = _mm256_loadu_pd(s.data() + j);
        const __m256d hv = _mm256_loadu_pd(h.data() + j);
        const __m256d two_g = _mm256_mul_pd(two, g_of(sv, half, vlo, vhi, zero, sign_mask));
        const __m256d drift = _mm256_mul_pd(_mm256_mul_pd(sv, _mm256_mul_pd(hv, hv)), vdt);
        _mm256_storeu_pd(inc.data() + j, _mm256_sub_pd(drift, _mm256_mul_pd(two_g, vdt)));
    }
    if (j < n) scalar::k_increments(s.subspan(j), h.subspan(j), inc.subspan(j), dt, var_lo, var_hi);
}

}  // namespace gexpect::kernels::avx2
