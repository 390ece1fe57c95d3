#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>

#include "mm2ct/fast_math.hpp"

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#define MM2CT_AVX2 1
#endif

// Hand-vectorized kernels for the reductions the compiler will not
// reassociate on its own. Accumulation order is fixed by the build, which is
// what the bit-exact determinism contract needs.
namespace mm2ct {

inline float vdot(const float* a, const float* b, int n) {
#ifdef MM2CT_AVX2
    __m256 acc0 = _mm256_setzero_ps();
    __m256 acc1 = _mm256_setzero_ps();
    int i = 0;
    for (; i + 16 <= n; i += 16) {
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
        acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), acc1);
    }
    for (; i + 8 <= n; i += 8)
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    acc0 = _mm256_add_ps(acc0, acc1);
    __m128 lo = _mm256_castps256_ps128(acc0);
    __m128 hi = _mm256_extractf128_ps(acc0, 1);
    lo = _mm_add_ps(lo, hi);
    lo = _mm_hadd_ps(lo, lo);
    lo = _mm_hadd_ps(lo, lo);
    float acc = _mm_cvtss_f32(lo);
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
#else
    float acc = 0.0f;
    for (int i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
#endif
}

// y += s * x
inline void vaxpy(float* y, float s, const float* x, int n) {
#ifdef MM2CT_AVX2
    const __m256 vs = _mm256_set1_ps(s);
    int i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(vs, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    for (; i < n; ++i) y[i] += s * x[i];
#else
    for (int i = 0; i < n; ++i) y[i] += s * x[i];
#endif
}

// dst = exp(src) elementwise, same polynomial as fast_expf
inline void vexp(float* dst, const float* src, int n) {
#ifdef MM2CT_AVX2
    const __m256 log2e = _mm256_set1_ps(1.44269504088896341f);
    const __m256 c1 = _mm256_set1_ps(0.693359375f);
    const __m256 c2 = _mm256_set1_ps(-2.12194440e-4f);
    const __m256 hi = _mm256_set1_ps(88.0f);
    const __m256 lo = _mm256_set1_ps(-87.0f);
    int i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 x = _mm256_loadu_ps(src + i);
        x = _mm256_min_ps(hi, _mm256_max_ps(lo, x));
        __m256 z = _mm256_mul_ps(x, log2e);
        __m256 nf = _mm256_round_ps(z, _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
        x = _mm256_fnmadd_ps(nf, c1, x);
        x = _mm256_fnmadd_ps(nf, c2, x);
        __m256 p = _mm256_set1_ps(1.9875691500e-4f);
        p = _mm256_fmadd_ps(p, x, _mm256_set1_ps(1.3981999507e-3f));
        p = _mm256_fmadd_ps(p, x, _mm256_set1_ps(8.3334519073e-3f));
        p = _mm256_fmadd_ps(p, x, _mm256_set1_ps(4.1665795894e-2f));
        p = _mm256_fmadd_ps(p, x, _mm256_set1_ps(1.6666665459e-1f));
        p = _mm256_fmadd_ps(p, x, _mm256_set1_ps(5.0000001201e-1f));
        p = _mm256_fmadd_ps(p, _mm256_mul_ps(x, x), _mm256_add_ps(x, _mm256_set1_ps(1.0f)));
        __m256i bits = _mm256_slli_epi32(
            _mm256_add_epi32(_mm256_cvtps_epi32(nf), _mm256_set1_epi32(127)), 23);
        _mm256_storeu_ps(dst + i, _mm256_mul_ps(p, _mm256_castsi256_ps(bits)));
    }
    for (; i < n; ++i) dst[i] = fast_expf(src[i]);
#else
    for (int i = 0; i < n; ++i) dst[i] = fast_expf(src[i]);
#endif
}

}  // namespace mm2ct
