#include "mm2ct/sscan.hpp"

#include <chrono>
#include <cmath>

#include "mm2ct/fast_math.hpp"
#include "mm2ct/simd.hpp"

namespace mm2ct {

namespace {

// expm1(z)/z, series below |z| = 0.02 where the direct form cancels.
inline float expm1_over_z(float z) {
    if (std::fabs(z) < 0.02f)
        return 1.0f + z * (0.5f + z * (1.0f / 6.0f + z * (1.0f / 24.0f)));
    return (fast_expf(z) - 1.0f) / z;
}

// d/dz [expm1(z)/z] = (e^z (z-1) + 1) / z^2.
inline float dexpm1_over_z(float z) {
    if (std::fabs(z) < 0.5f)
        return 0.5f + z * (1.0f / 3.0f +
                           z * (0.125f + z * (1.0f / 30.0f + z * (1.0f / 144.0f + z * (1.0f / 840.0f)))));
    const float e = fast_expf(z);
    return (e * (z - 1.0f) + 1.0f) / (z * z);
}

// same functions with exp(z) already at hand; written branch-free so the
// inner scan loops stay vectorizable
inline float ratio_from_exp(float z, float a) {
    const float series = 1.0f + z * (0.5f + z * (1.0f / 6.0f + z * (1.0f / 24.0f)));
    const float direct = (a - 1.0f) / z;
    return std::fabs(z) < 0.02f ? series : direct;
}

inline float dratio_from_exp(float z, float a) {
    const float series =
        0.5f + z * (1.0f / 3.0f +
                    z * (0.125f + z * (1.0f / 30.0f + z * (1.0f / 144.0f + z * (1.0f / 840.0f)))));
    const float direct = (a * (z - 1.0f) + 1.0f) / (z * z);
    return std::fabs(z) < 0.5f ? series : direct;
}

#ifdef MM2CT_AVX2

inline __m256 exp8(__m256 x) {
    const __m256 hi = _mm256_set1_ps(88.0f), lo = _mm256_set1_ps(-87.0f);
    x = _mm256_min_ps(hi, _mm256_max_ps(lo, x));
    const __m256 z = _mm256_mul_ps(x, _mm256_set1_ps(1.44269504088896341f));
    const __m256 nf = _mm256_round_ps(z, _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
    x = _mm256_fnmadd_ps(nf, _mm256_set1_ps(0.693359375f), x);
    x = _mm256_fnmadd_ps(nf, _mm256_set1_ps(-2.12194440e-4f), x);
    __m256 p = _mm256_set1_ps(1.9875691500e-4f);
    p = _mm256_fmadd_ps(p, x, _mm256_set1_ps(1.3981999507e-3f));
    p = _mm256_fmadd_ps(p, x, _mm256_set1_ps(8.3334519073e-3f));
    p = _mm256_fmadd_ps(p, x, _mm256_set1_ps(4.1665795894e-2f));
    p = _mm256_fmadd_ps(p, x, _mm256_set1_ps(1.6666665459e-1f));
    p = _mm256_fmadd_ps(p, x, _mm256_set1_ps(5.0000001201e-1f));
    p = _mm256_fmadd_ps(p, _mm256_mul_ps(x, x), _mm256_add_ps(x, _mm256_set1_ps(1.0f)));
    const __m256i bits = _mm256_slli_epi32(
        _mm256_add_epi32(_mm256_cvtps_epi32(nf), _mm256_set1_epi32(127)), 23);
    return _mm256_mul_ps(p, _mm256_castsi256_ps(bits));
}

inline __m256 ratio8(__m256 z, __m256 a) {
    __m256 s = _mm256_fmadd_ps(z, _mm256_set1_ps(1.0f / 24.0f), _mm256_set1_ps(1.0f / 6.0f));
    s = _mm256_fmadd_ps(z, s, _mm256_set1_ps(0.5f));
    s = _mm256_fmadd_ps(z, s, _mm256_set1_ps(1.0f));
    const __m256 d = _mm256_div_ps(_mm256_sub_ps(a, _mm256_set1_ps(1.0f)), z);
    const __m256 absz = _mm256_andnot_ps(_mm256_set1_ps(-0.0f), z);
    return _mm256_blendv_ps(d, s, _mm256_cmp_ps(absz, _mm256_set1_ps(0.02f), _CMP_LT_OQ));
}

inline __m256 dratio8(__m256 z, __m256 a) {
    __m256 s = _mm256_fmadd_ps(z, _mm256_set1_ps(1.0f / 840.0f), _mm256_set1_ps(1.0f / 144.0f));
    s = _mm256_fmadd_ps(z, s, _mm256_set1_ps(1.0f / 30.0f));
    s = _mm256_fmadd_ps(z, s, _mm256_set1_ps(0.125f));
    s = _mm256_fmadd_ps(z, s, _mm256_set1_ps(1.0f / 3.0f));
    s = _mm256_fmadd_ps(z, s, _mm256_set1_ps(0.5f));
    const __m256 d = _mm256_div_ps(
        _mm256_fmadd_ps(a, _mm256_sub_ps(z, _mm256_set1_ps(1.0f)), _mm256_set1_ps(1.0f)),
        _mm256_mul_ps(z, z));
    const __m256 absz = _mm256_andnot_ps(_mm256_set1_ps(-0.0f), z);
    return _mm256_blendv_ps(d, s, _mm256_cmp_ps(absz, _mm256_set1_ps(0.5f), _CMP_LT_OQ));
}

inline float hsum8(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    lo = _mm_hadd_ps(lo, lo);
    lo = _mm_hadd_ps(lo, lo);
    return _mm_cvtss_f32(lo);
}

#endif  // MM2CT_AVX2

void check_scan_shapes(const Tensor& x, const Tensor& cseq, const Tensor& d_skip, int L, int C,
                       int N, const char* op) {
    check(x.rank() == 2, std::string(op) + ": x must be [L,C]");
    check(L >= 1, std::string(op) + ": empty sequence");
    check(cseq.rank() == 2 && cseq.dim(0) == L && cseq.dim(1) == N,
          std::string(op) + ": cseq must be [L,N]");
    check(d_skip.rank() == 1 && d_skip.dim(0) == C, std::string(op) + ": d_skip must be [C]");
}

}  // namespace

SsmCoeffs discretize_zoh(const Tensor& A, const Tensor& B, const Tensor& delta) {
    check(A.defined() && B.defined() && delta.defined(), "discretize_zoh: undefined tensor");
    check(A.rank() == 2 && B.rank() == 2 && delta.rank() == 2,
          "discretize_zoh: A [C,N], B [L,N], delta [L,C]");
    const int C = A.dim(0), N = A.dim(1);
    const int L = B.dim(0);
    check(B.dim(1) == N, "discretize_zoh: B state size mismatch");
    check(delta.dim(0) == L && delta.dim(1) == C, "discretize_zoh: delta shape mismatch");

    Tensor abar({L, C, N}, 0.0f);
    Tensor bbar({L, C, N}, 0.0f);
    const float* pa = A.data();
    const float* pb = B.data();
    const float* pd = delta.data();
    float* pab = abar.data();
    float* pbb = bbar.data();
#pragma omp parallel for schedule(static)
    for (int l = 0; l < L; ++l) {
        std::vector<float> zbuf(size_t(N), 0.0f);
        float* zv = zbuf.data();
        for (int c = 0; c < C; ++c) {
            const float dv = pd[int64_t(l) * C + c];
            const int64_t base = (int64_t(l) * C + c) * N;
            for (int n = 0; n < N; ++n) zv[n] = dv * pa[int64_t(c) * N + n];
            vexp(pab + base, zv, N);
            for (int n = 0; n < N; ++n)
                pbb[base + n] = dv * ratio_from_exp(zv[n], pab[base + n]) * pb[int64_t(l) * N + n];
        }
    }

    if (track_grad({&A, &B, &delta})) {
        abar.set_requires_grad(true);
        bbar.set_requires_grad(true);
        Tensor tA = A, tB = B, td = delta, tab = abar, tbb = bbar;
        Tape::active().record({abar, bbar}, [tA, tB, td, tab, tbb, L, C, N]() mutable {
            const float* ga = tab.grad();
            const float* gb = tbb.grad();
            if (!ga && !gb) return;
            const float* pa2 = tA.data();
            const float* pb2 = tB.data();
            const float* pd2 = td.data();
            const float* pab2 = tab.data();
            if (td.requires_grad()) {
                float* gd = td.grad_acc();
#pragma omp parallel for schedule(static)
                for (int l = 0; l < L; ++l)
                    for (int c = 0; c < C; ++c) {
                        const int64_t base = (int64_t(l) * C + c) * N;
                        float acc = 0.0f;
                        for (int n = 0; n < N; ++n) {
                            const float a = pab2[base + n];
                            if (ga) acc += ga[base + n] * pa2[int64_t(c) * N + n] * a;
                            if (gb) acc += gb[base + n] * a * pb2[int64_t(l) * N + n];
                        }
                        gd[int64_t(l) * C + c] += acc;
                    }
            }
            if (tA.requires_grad()) {
                float* gA = tA.grad_acc();
#pragma omp parallel for schedule(static)
                for (int c = 0; c < C; ++c)
                    for (int n = 0; n < N; ++n) {
                        const float av = pa2[int64_t(c) * N + n];
                        float acc = 0.0f;
                        for (int l = 0; l < L; ++l) {
                            const int64_t i = (int64_t(l) * C + c) * N + n;
                            const float dv = pd2[int64_t(l) * C + c];
                            if (ga) acc += ga[i] * dv * pab2[i];
                            if (gb)
                                acc += gb[i] * pb2[int64_t(l) * N + n] * dv * dv *
                                       dratio_from_exp(dv * av, pab2[i]);
                        }
                        gA[int64_t(c) * N + n] += acc;
                    }
            }
            if (tB.requires_grad() && gb) {
                float* gB = tB.grad_acc();
#pragma omp parallel for schedule(static)
                for (int l = 0; l < L; ++l)
                    for (int n = 0; n < N; ++n) {
                        float acc = 0.0f;
                        for (int c = 0; c < C; ++c) {
                            const float dv = pd2[int64_t(l) * C + c];
                            const float z = dv * pa2[int64_t(c) * N + n];
                            const int64_t i = (int64_t(l) * C + c) * N + n;
                            acc += gb[i] * dv * ratio_from_exp(z, pab2[i]);
                        }
                        gB[int64_t(l) * N + n] += acc;
                    }
            }
        });
    }
    return {abar, bbar};
}

namespace {

// Shared backward for the materialized-coefficient scans. h_store is
// channel-major [C,L,N].
void scan_backward(Tensor& tx, Tensor& tab, Tensor& tbb, Tensor& tc, Tensor& td, Tensor& ty,
                   const std::vector<float>& h_store, int L, int C, int N) {
    const float* g = ty.grad();
    if (!g) return;
    const float* px = tx.data();
    const float* pab = tab.data();
    const float* pbb = tbb.data();
    const float* pc = tc.data();
    const float* pd = td.data();

    float* gx = tx.requires_grad() ? tx.grad_acc() : nullptr;
    float* gab = tab.requires_grad() ? tab.grad_acc() : nullptr;
    float* gbb = tbb.requires_grad() ? tbb.grad_acc() : nullptr;
    float* gd = td.requires_grad() ? td.grad_acc() : nullptr;

#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        std::vector<float> lam(size_t(N), 0.0f);
        float d_acc = 0.0f;
        for (int t = L - 1; t >= 0; --t) {
            const float gv = g[int64_t(t) * C + c];
            const float xv = px[int64_t(t) * C + c];
            const int64_t base = (int64_t(t) * C + c) * N;
            const int64_t hbase = (int64_t(c) * L + t) * N;
            for (int n = 0; n < N; ++n) lam[size_t(n)] += gv * pc[int64_t(t) * N + n];
            float dxv = gv * pd[c];
            for (int n = 0; n < N; ++n) {
                const float hprev = t > 0 ? h_store[size_t(hbase - N + n)] : 0.0f;
                if (gab) gab[base + n] += lam[size_t(n)] * hprev;
                if (gbb) gbb[base + n] += lam[size_t(n)] * xv;
                dxv += lam[size_t(n)] * pbb[base + n];
            }
            if (gx) gx[int64_t(t) * C + c] += dxv;
            d_acc += gv * xv;
            for (int n = 0; n < N; ++n) lam[size_t(n)] *= pab[base + n];
        }
        if (gd) gd[c] += d_acc;
    }
    if (tc.requires_grad()) {
        float* gc = tc.grad_acc();
#pragma omp parallel for schedule(static)
        for (int t = 0; t < L; ++t)
            for (int n = 0; n < N; ++n) {
                float acc = 0.0f;
                for (int c = 0; c < C; ++c)
                    acc += g[int64_t(t) * C + c] * h_store[(int64_t(c) * L + t) * N + n];
                gc[int64_t(t) * N + n] += acc;
            }
    }
}

Tensor scan_with_coeffs(const Tensor& x, const Tensor& abar, const Tensor& bbar,
                        const Tensor& cseq, const Tensor& d_skip, int chunk, const char* op) {
    check(x.defined() && abar.defined() && bbar.defined() && cseq.defined() && d_skip.defined(),
          std::string(op) + ": undefined tensor");
    const int L = x.dim(0), C = x.dim(1);
    check(abar.rank() == 3 && abar.dim(0) == L && abar.dim(1) == C,
          std::string(op) + ": abar must be [L,C,N]");
    const int N = abar.dim(2);
    check(bbar.same_shape(abar), std::string(op) + ": bbar must match abar");
    check_scan_shapes(x, cseq, d_skip, L, C, N, op);
    check(chunk >= 1, std::string(op) + ": chunk must be >= 1");

    Tensor y({L, C}, 0.0f);
    const float* px = x.data();
    const float* pab = abar.data();
    const float* pbb = bbar.data();
    const float* pc = cseq.data();
    const float* pd = d_skip.data();
    float* py = y.data();

    const bool track = track_grad({&x, &abar, &bbar, &cseq, &d_skip});
    std::vector<float> h_store;
    // Backward needs the state history regardless of how forward was chunked.
    std::vector<float> h_keep;
    if (track) h_keep.resize(size_t(C) * L * N);

    const int n_chunks = (L + chunk - 1) / chunk;

    if (n_chunks <= 1) {
#pragma omp parallel for schedule(static)
        for (int c = 0; c < C; ++c) {
            std::vector<float> h(size_t(N), 0.0f);
            for (int t = 0; t < L; ++t) {
                const float xv = px[int64_t(t) * C + c];
                const int64_t base = (int64_t(t) * C + c) * N;
                float acc = 0.0f;
                for (int n = 0; n < N; ++n) {
                    h[size_t(n)] = pab[base + n] * h[size_t(n)] + pbb[base + n] * xv;
                    acc += pc[int64_t(t) * N + n] * h[size_t(n)];
                }
                if (track) {
                    float* hs = h_keep.data() + (int64_t(c) * L + t) * N;
                    for (int n = 0; n < N; ++n) hs[n] = h[size_t(n)];
                }
                py[int64_t(t) * C + c] = acc + pd[c] * xv;
            }
        }
    } else {
        // Pass 1: per-chunk decay product P and zero-state partial Q.
        std::vector<float> P(size_t(C) * n_chunks * N), Q(size_t(C) * n_chunks * N);
        std::vector<float> S(size_t(C) * n_chunks * N);  // folded chunk-start states
#pragma omp parallel for schedule(static)
        for (int64_t ck = 0; ck < int64_t(C) * n_chunks; ++ck) {
            const int c = int(ck / n_chunks);
            const int k = int(ck % n_chunks);
            const int t0 = k * chunk;
            const int t1 = std::min(L, t0 + chunk);
            float* p = P.data() + ck * N;
            float* q = Q.data() + ck * N;
            for (int n = 0; n < N; ++n) {
                p[n] = 1.0f;
                q[n] = 0.0f;
            }
            for (int t = t0; t < t1; ++t) {
                const float xv = px[int64_t(t) * C + c];
                const int64_t base = (int64_t(t) * C + c) * N;
                for (int n = 0; n < N; ++n) {
                    p[n] *= pab[base + n];
                    q[n] = pab[base + n] * q[n] + pbb[base + n] * xv;
                }
            }
        }
        // Pass 2: fold boundary states sequentially.
#pragma omp parallel for schedule(static)
        for (int c = 0; c < C; ++c) {
            std::vector<float> s(size_t(N), 0.0f);
            for (int k = 0; k < n_chunks; ++k) {
                float* sk = S.data() + (int64_t(c) * n_chunks + k) * N;
                const float* p = P.data() + (int64_t(c) * n_chunks + k) * N;
                const float* q = Q.data() + (int64_t(c) * n_chunks + k) * N;
                for (int n = 0; n < N; ++n) {
                    sk[n] = s[size_t(n)];
                    s[size_t(n)] = p[n] * s[size_t(n)] + q[n];
                }
            }
        }
        // Pass 3: finish each chunk from its folded start state.
#pragma omp parallel for schedule(static)
        for (int64_t ck = 0; ck < int64_t(C) * n_chunks; ++ck) {
            const int c = int(ck / n_chunks);
            const int k = int(ck % n_chunks);
            const int t0 = k * chunk;
            const int t1 = std::min(L, t0 + chunk);
            std::vector<float> h(size_t(N), 0.0f);
            const float* sk = S.data() + ck * N;
            for (int n = 0; n < N; ++n) h[size_t(n)] = sk[n];
            for (int t = t0; t < t1; ++t) {
                const float xv = px[int64_t(t) * C + c];
                const int64_t base = (int64_t(t) * C + c) * N;
                float acc = 0.0f;
                for (int n = 0; n < N; ++n) {
                    h[size_t(n)] = pab[base + n] * h[size_t(n)] + pbb[base + n] * xv;
                    acc += pc[int64_t(t) * N + n] * h[size_t(n)];
                }
                if (track) {
                    float* hs = h_keep.data() + (int64_t(c) * L + t) * N;
                    for (int n = 0; n < N; ++n) hs[n] = h[size_t(n)];
                }
                py[int64_t(t) * C + c] = acc + pd[c] * xv;
            }
        }
    }

    if (track) {
        y.set_requires_grad(true);
        Tensor tx = x, tab = abar, tbb = bbar, tc = cseq, td = d_skip, ty = y;
        Tape::active().record({y}, [tx, tab, tbb, tc, td, ty, hs = std::move(h_keep), L, C,
                               N]() mutable { scan_backward(tx, tab, tbb, tc, td, ty, hs, L, C, N); });
    }
    return y;
}

}  // namespace

Tensor selective_scan_seq(const Tensor& x, const Tensor& abar, const Tensor& bbar,
                          const Tensor& cseq, const Tensor& d_skip) {
    return scan_with_coeffs(x, abar, bbar, cseq, d_skip, x.dim(0), "selective_scan_seq");
}

Tensor selective_scan_chunked(const Tensor& x, const Tensor& abar, const Tensor& bbar,
                              const Tensor& cseq, const Tensor& d_skip, int chunk) {
    return scan_with_coeffs(x, abar, bbar, cseq, d_skip, chunk, "selective_scan_chunked");
}

Tensor ssm_scan(const Tensor& x, const Tensor& delta, const Tensor& A, const Tensor& B,
                const Tensor& cseq, const Tensor& d_skip) {
    check(x.defined() && delta.defined() && A.defined() && B.defined(), "ssm_scan: undefined tensor");
    const int L = x.dim(0), C = x.dim(1);
    check(delta.rank() == 2 && delta.dim(0) == L && delta.dim(1) == C,
          "ssm_scan: delta must be [L,C]");
    check(A.rank() == 2 && A.dim(0) == C, "ssm_scan: A must be [C,N]");
    const int N = A.dim(1);
    check(B.rank() == 2 && B.dim(0) == L && B.dim(1) == N, "ssm_scan: B must be [L,N]");
    check_scan_shapes(x, cseq, d_skip, L, C, N, "ssm_scan");

    Tensor y({L, C}, 0.0f);
    const float* px = x.data();
    const float* pdl = delta.data();
    const float* pa = A.data();
    const float* pb = B.data();
    const float* pc = cseq.data();
    const float* pd = d_skip.data();
    float* py = y.data();

    const bool track = track_grad({&x, &delta, &A, &B, &cseq, &d_skip});
    std::vector<float> a_store, h_store;
    if (track) {
        a_store.resize(size_t(C) * L * N);
        h_store.resize(size_t(C) * L * N);
    }

#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
#ifdef MM2CT_AVX2
        if (N == 8) {
            __m256 h = _mm256_setzero_ps();
            const __m256 arow = _mm256_loadu_ps(pa + int64_t(c) * 8);
            for (int t = 0; t < L; ++t) {
                const float dv = pdl[int64_t(t) * C + c];
                const float xv = px[int64_t(t) * C + c];
                const __m256 z = _mm256_mul_ps(_mm256_set1_ps(dv), arow);
                const __m256 a = exp8(z);
                const __m256 u = _mm256_mul_ps(
                    _mm256_mul_ps(ratio8(z, a), _mm256_loadu_ps(pb + int64_t(t) * 8)),
                    _mm256_set1_ps(dv * xv));
                h = _mm256_fmadd_ps(a, h, u);
                if (track) {
                    _mm256_storeu_ps(a_store.data() + (int64_t(c) * L + t) * 8, a);
                    _mm256_storeu_ps(h_store.data() + (int64_t(c) * L + t) * 8, h);
                }
                py[int64_t(t) * C + c] =
                    hsum8(_mm256_mul_ps(_mm256_loadu_ps(pc + int64_t(t) * 8), h)) + pd[c] * xv;
            }
            continue;
        }
#endif
        std::vector<float> h(size_t(N), 0.0f);
        std::vector<float> zbuf(size_t(N), 0.0f), abuf(size_t(N), 0.0f);
        float* hv = h.data();
        float* zv = zbuf.data();
        float* av = abuf.data();
        const float* arow = pa + int64_t(c) * N;
        for (int t = 0; t < L; ++t) {
            const float dv = pdl[int64_t(t) * C + c];
            const float xv = px[int64_t(t) * C + c];
            const float* brow = pb + int64_t(t) * N;
            const float* crow = pc + int64_t(t) * N;
            for (int n = 0; n < N; ++n) zv[n] = dv * arow[n];
            vexp(av, zv, N);
            const float dx = dv * xv;
            for (int n = 0; n < N; ++n)
                hv[n] = av[n] * hv[n] + ratio_from_exp(zv[n], av[n]) * brow[n] * dx;
            if (track) {
                float* as = a_store.data() + (int64_t(c) * L + t) * N;
                float* hsr = h_store.data() + (int64_t(c) * L + t) * N;
                for (int n = 0; n < N; ++n) {
                    as[n] = av[n];
                    hsr[n] = hv[n];
                }
            }
            py[int64_t(t) * C + c] = vdot(crow, hv, N) + pd[c] * xv;
        }
    }

    if (track) {
        y.set_requires_grad(true);
        Tensor tx = x, tdl = delta, tA = A, tB = B, tc = cseq, td = d_skip, ty = y;
        Tape::active().record(
            {y}, [tx, tdl, tA, tB, tc, td, ty, as = std::move(a_store), hs = std::move(h_store), L,
                  C, N]() mutable {
                const float* g = ty.grad();
                if (!g) return;
                const float* px2 = tx.data();
                const float* pdl2 = tdl.data();
                const float* pa2 = tA.data();
                const float* pb2 = tB.data();
                const float* pc2 = tc.data();
                const float* pd2 = td.data();

                float* gx = tx.requires_grad() ? tx.grad_acc() : nullptr;
                float* gdl = tdl.requires_grad() ? tdl.grad_acc() : nullptr;
                float* gA = tA.requires_grad() ? tA.grad_acc() : nullptr;
                float* gD = td.requires_grad() ? td.grad_acc() : nullptr;
                const float* pas = as.data();
                const float* phs = hs.data();

                // lam history is kept so dB and dC (reductions over channels)
                // can run as race-free per-position passes afterwards.
                std::vector<float> lam_store(size_t(C) * L * N);
                float* plam = lam_store.data();

#pragma omp parallel for schedule(static)
                for (int c = 0; c < C; ++c) {
#ifdef MM2CT_AVX2
                    if (N == 8) {
                        __m256 lam = _mm256_setzero_ps();
                        __m256 gA_acc = _mm256_setzero_ps();
                        const __m256 arow = _mm256_loadu_ps(pa2 + int64_t(c) * 8);
                        float d_acc = 0.0f;
                        for (int t = L - 1; t >= 0; --t) {
                            const float gv = g[int64_t(t) * C + c];
                            const float xv = px2[int64_t(t) * C + c];
                            const float dv = pdl2[int64_t(t) * C + c];
                            const int64_t sbase = (int64_t(c) * L + t) * 8;
                            const __m256 brow = _mm256_loadu_ps(pb2 + int64_t(t) * 8);
                            const __m256 crow = _mm256_loadu_ps(pc2 + int64_t(t) * 8);
                            lam = _mm256_fmadd_ps(_mm256_set1_ps(gv), crow, lam);
                            _mm256_storeu_ps(plam + sbase, lam);
                            const __m256 a = _mm256_loadu_ps(pas + sbase);
                            const __m256 hprev = t > 0 ? _mm256_loadu_ps(phs + sbase - 8)
                                                       : _mm256_setzero_ps();
                            const __m256 z = _mm256_mul_ps(_mm256_set1_ps(dv), arow);
                            const __m256 la = _mm256_mul_ps(lam, a);
                            const __m256 lbx =
                                _mm256_mul_ps(_mm256_mul_ps(lam, brow), _mm256_set1_ps(xv));
                            if (gA) {
                                // d(abar)/dA = dv*abar*h_prev; d(bbar)/dA via the ratio derivative
                                gA_acc = _mm256_fmadd_ps(
                                    _mm256_mul_ps(la, hprev), _mm256_set1_ps(dv), gA_acc);
                                gA_acc = _mm256_fmadd_ps(
                                    _mm256_mul_ps(lbx, dratio8(z, a)),
                                    _mm256_set1_ps(dv * dv), gA_acc);
                            }
                            const __m256 ddv_vec = _mm256_fmadd_ps(
                                _mm256_mul_ps(la, arow), hprev, _mm256_mul_ps(lbx, a));
                            const __m256 dxv_vec = _mm256_mul_ps(
                                _mm256_mul_ps(lam, _mm256_mul_ps(ratio8(z, a), brow)),
                                _mm256_set1_ps(dv));
                            if (gdl) gdl[int64_t(t) * C + c] += hsum8(ddv_vec);
                            if (gx) gx[int64_t(t) * C + c] += gv * pd2[c] + hsum8(dxv_vec);
                            d_acc += gv * xv;
                            lam = la;
                        }
                        if (gA) {
                            float tmp[8];
                            _mm256_storeu_ps(tmp, gA_acc);
                            for (int n = 0; n < 8; ++n) gA[int64_t(c) * 8 + n] += tmp[n];
                        }
                        if (gD) gD[c] += d_acc;
                        continue;
                    }
#endif
                    std::vector<float> lam(size_t(N), 0.0f);
                    const float* arow = pa2 + int64_t(c) * N;
                    float d_acc = 0.0f;
                    for (int t = L - 1; t >= 0; --t) {
                        const float gv = g[int64_t(t) * C + c];
                        const float xv = px2[int64_t(t) * C + c];
                        const float dv = pdl2[int64_t(t) * C + c];
                        const int64_t sbase = (int64_t(c) * L + t) * N;
                        const float* brow = pb2 + int64_t(t) * N;
                        const float* crow = pc2 + int64_t(t) * N;
                        float dxv = gv * pd2[c];
                        float ddv = 0.0f;
                        for (int n = 0; n < N; ++n) {
                            lam[size_t(n)] += gv * crow[n];
                            const float lv = lam[size_t(n)];
                            plam[sbase + n] = lv;
                            const float a = pas[sbase + n];
                            const float hprev = t > 0 ? phs[sbase - N + n] : 0.0f;
                            const float z = dv * arow[n];
                            const float F = dv * ratio_from_exp(z, a);
                            if (gA) {
                                // through abar and through bbar; slot owned by this c
                                gA[int64_t(c) * N + n] +=
                                    lv * hprev * dv * a +
                                    lv * brow[n] * xv * dv * dv * dratio_from_exp(z, a);
                            }
                            ddv += lv * hprev * arow[n] * a + lv * brow[n] * xv * a;
                            dxv += lv * F * brow[n];
                            lam[size_t(n)] = lv * a;
                        }
                        if (gdl) gdl[int64_t(t) * C + c] += ddv;
                        if (gx) gx[int64_t(t) * C + c] += dxv;
                        d_acc += gv * xv;
                    }
                    if (gD) gD[c] += d_acc;
                }

                if (tB.requires_grad() || tc.requires_grad()) {
                    float* gB = tB.requires_grad() ? tB.grad_acc() : nullptr;
                    float* gC = tc.requires_grad() ? tc.grad_acc() : nullptr;
                    // c is the outer loop within each tile so the [C,L,N]
                    // stores stream contiguously
                    constexpr int kTile = 64;
#pragma omp parallel for schedule(static)
                    for (int tb = 0; tb < L; tb += kTile) {
                        const int te = std::min(L, tb + kTile);
                        const int span = (te - tb) * N;
                        std::vector<float> accB(size_t(span), 0.0f);
                        std::vector<float> accC(size_t(span), 0.0f);
                        for (int c = 0; c < C; ++c) {
#ifdef MM2CT_AVX2
                            if (N == 8) {
                                const __m256 arow = _mm256_loadu_ps(pa2 + int64_t(c) * 8);
                                for (int t = tb; t < te; ++t) {
                                    const int64_t sbase = (int64_t(c) * L + t) * 8;
                                    const int o = (t - tb) * 8;
                                    if (gB) {
                                        const float dv = pdl2[int64_t(t) * C + c];
                                        const __m256 z = _mm256_mul_ps(_mm256_set1_ps(dv), arow);
                                        const __m256 term = _mm256_mul_ps(
                                            _mm256_mul_ps(_mm256_loadu_ps(plam + sbase),
                                                          ratio8(z, _mm256_loadu_ps(pas + sbase))),
                                            _mm256_set1_ps(dv * px2[int64_t(t) * C + c]));
                                        _mm256_storeu_ps(
                                            accB.data() + o,
                                            _mm256_add_ps(_mm256_loadu_ps(accB.data() + o), term));
                                    }
                                    if (gC) {
                                        const __m256 term = _mm256_mul_ps(
                                            _mm256_set1_ps(g[int64_t(t) * C + c]),
                                            _mm256_loadu_ps(phs + sbase));
                                        _mm256_storeu_ps(
                                            accC.data() + o,
                                            _mm256_add_ps(_mm256_loadu_ps(accC.data() + o), term));
                                    }
                                }
                                continue;
                            }
#endif
                            for (int t = tb; t < te; ++t) {
                                const int64_t sbase = (int64_t(c) * L + t) * N;
                                const int o = (t - tb) * N;
                                if (gB) {
                                    const float dv = pdl2[int64_t(t) * C + c];
                                    const float dx = dv * px2[int64_t(t) * C + c];
                                    for (int n = 0; n < N; ++n) {
                                        const float z = dv * pa2[int64_t(c) * N + n];
                                        accB[o + n] +=
                                            plam[sbase + n] * ratio_from_exp(z, pas[sbase + n]) * dx;
                                    }
                                }
                                if (gC) {
                                    const float gv = g[int64_t(t) * C + c];
                                    for (int n = 0; n < N; ++n)
                                        accC[o + n] += gv * phs[sbase + n];
                                }
                            }
                        }
                        if (gB) vaxpy(gB + int64_t(tb) * N, 1.0f, accB.data(), span);
                        if (gC) vaxpy(gC + int64_t(tb) * N, 1.0f, accC.data(), span);
                    }
                }
            });
    }
    return y;
}

void SSMParams::init(int channels, int n_state, RngStream& rng) {
    d_state = n_state;
    std::vector<float> al(size_t(channels) * n_state);
    for (int c = 0; c < channels; ++c)
        for (int n = 0; n < n_state; ++n) al[size_t(c) * n_state + n] = std::log(float(n + 1));
    a_log = Tensor::from_vec({channels, n_state}, std::move(al), true);
    d_skip = full({channels}, 1.0f, true);
    wb = trunc_normal({n_state, channels}, rng, 0.02f);
    wb.set_requires_grad(true);
    bb = zeros({n_state}, true);
    wc = trunc_normal({n_state, channels}, rng, 0.02f);
    wc.set_requires_grad(true);
    bc = zeros({n_state}, true);
    wdelta = trunc_normal({channels, channels}, rng, 0.02f);
    wdelta.set_requires_grad(true);
    bdelta = full({channels}, -2.0f, true);
}

void SSMParams::collect(const std::string& prefix, std::vector<Parameter>& out) {
    out.push_back({a_log, prefix + ".a_log"});
    out.push_back({d_skip, prefix + ".d_skip"});
    out.push_back({wb, prefix + ".proj_b.weight"});
    out.push_back({bb, prefix + ".proj_b.bias"});
    out.push_back({wc, prefix + ".proj_c.weight"});
    out.push_back({bc, prefix + ".proj_c.bias"});
    out.push_back({wdelta, prefix + ".proj_delta.weight"});
    out.push_back({bdelta, prefix + ".proj_delta.bias"});
}

Tensor SSMParams::apply(const Tensor& feat) const {
    Tensor a = neg_exp(a_log);
    Tensor dl = softplus_t(linear(feat, wdelta, bdelta));
    Tensor bproj = linear(feat, wb, bb);
    Tensor cproj = linear(feat, wc, bc);
    return ssm_scan(feat, dl, a, bproj, cproj, d_skip);
}

std::vector<ScanBenchRow> bench_scan(uint64_t seed) {
    NoGradGuard ng;
    std::vector<ScanBenchRow> rows;
    const int N = 8;
    for (int L : {64, 256, 1024}) {
        for (int C : {4, 16}) {
            RngStream rng = derive_stream(seed, "bench", uint64_t(L) * 1000 + C);
            Tensor A = rand_uniform({C, N}, rng, -1.5f, -0.1f);
            Tensor B = randn({L, N}, rng, 0.5f);
            Tensor delta = rand_uniform({L, C}, rng, 0.05f, 0.8f);
            Tensor cseq = randn({L, N}, rng, 0.5f);
            Tensor d_skip = full({C}, 1.0f);
            Tensor x = randn({L, C}, rng, 0.5f);
            SsmCoeffs co = discretize_zoh(A, B, delta);

            auto time_variant = [&](const std::string& name, auto&& fn) {
                // Warm up once, then take the best of 5.
                Tensor ref = selective_scan_seq(x, co.abar, co.bbar, cseq, d_skip);
                Tensor out = fn();
                long long best = -1;
                for (int rep = 0; rep < 5; ++rep) {
                    const auto t0 = std::chrono::steady_clock::now();
                    out = fn();
                    const auto t1 = std::chrono::steady_clock::now();
                    const long long ns =
                        std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count();
                    if (best < 0 || ns < best) best = ns;
                }
                float dev = 0.0f;
                for (int64_t i = 0; i < out.numel(); ++i)
                    dev = std::max(dev, std::fabs(out.data()[i] - ref.data()[i]));
                rows.push_back({L, C, N, name, best, dev});
            };

            time_variant("seq", [&] { return selective_scan_seq(x, co.abar, co.bbar, cseq, d_skip); });
            time_variant("chunk16", [&] {
                return selective_scan_chunked(x, co.abar, co.bbar, cseq, d_skip, 16);
            });
            time_variant("chunk64", [&] {
                return selective_scan_chunked(x, co.abar, co.bbar, cseq, d_skip, 64);
            });
            time_variant("fused", [&] { return ssm_scan(x, delta, A, B, cseq, d_skip); });
        }
    }
    return rows;
}

}  // namespace mm2ct
