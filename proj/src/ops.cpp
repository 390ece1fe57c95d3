#include "mm2ct/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "mm2ct/fast_math.hpp"
#include "mm2ct/simd.hpp"

namespace mm2ct {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    check(a.defined() && b.defined(), std::string(op) + ": undefined tensor");
    check(a.same_shape(b), std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                               shape_str(b.shape()));
}

inline float sigmoid_val(float x) { return 1.0f / (1.0f + fast_expf(-x)); }

}  // namespace

// ---- creation ----

Tensor zeros(Shape s, bool requires_grad) { return Tensor(std::move(s), 0.0f, requires_grad); }

Tensor full(Shape s, float v, bool requires_grad) { return Tensor(std::move(s), v, requires_grad); }

Tensor randn(Shape s, RngStream& rng, float stddev, float mean) {
    Tensor t(std::move(s), 0.0f);
    float* p = t.data();
    const int64_t n = t.numel();
    for (int64_t i = 0; i < n; ++i) p[i] = mean + stddev * rng.gaussian();
    return t;
}

Tensor rand_uniform(Shape s, RngStream& rng, float lo, float hi) {
    Tensor t(std::move(s), 0.0f);
    float* p = t.data();
    const int64_t n = t.numel();
    for (int64_t i = 0; i < n; ++i) p[i] = rng.uniform(lo, hi);
    return t;
}

Tensor trunc_normal(Shape s, RngStream& rng, float stddev) {
    Tensor t(std::move(s), 0.0f);
    float* p = t.data();
    const int64_t n = t.numel();
    for (int64_t i = 0; i < n; ++i) {
        float v = rng.gaussian();
        while (std::fabs(v) > 2.0f) v = rng.gaussian();
        p[i] = stddev * v;
    }
    return t;
}

// ---- elementwise binary ----

namespace {

template <class Fwd, class Bwd>
Tensor binary_ew(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
    check_same_shape(a, b, name);
    const int64_t n = a.numel();
    Tensor out(a.shape(), 0.0f);
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);
    if (track_grad({&a, &b})) {
        out.set_requires_grad(true);
        Tensor ta = a, tb = b, to = out;
        Tape::active().record({out}, [ta, tb, to, bwd]() mutable {
            const float* g = to.grad();
            if (!g) return;
            bwd(ta, tb, g);
        });
    }
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_ew(
        a, b, "add", [](float x, float y) { return x + y; },
        [](Tensor& ta, Tensor& tb, const float* g) {
            const int64_t n = ta.numel();
            if (ta.requires_grad()) {
                float* ga = ta.grad_acc();
                for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (tb.requires_grad()) {
                float* gb = tb.grad_acc();
                for (int64_t i = 0; i < n; ++i) gb[i] += g[i];
            }
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_ew(
        a, b, "sub", [](float x, float y) { return x - y; },
        [](Tensor& ta, Tensor& tb, const float* g) {
            const int64_t n = ta.numel();
            if (ta.requires_grad()) {
                float* ga = ta.grad_acc();
                for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (tb.requires_grad()) {
                float* gb = tb.grad_acc();
                for (int64_t i = 0; i < n; ++i) gb[i] -= g[i];
            }
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_ew(
        a, b, "mul", [](float x, float y) { return x * y; },
        [](Tensor& ta, Tensor& tb, const float* g) {
            const int64_t n = ta.numel();
            const float* pa = ta.data();
            const float* pb = tb.data();
            if (ta.requires_grad()) {
                float* ga = ta.grad_acc();
                for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * pb[i];
            }
            if (tb.requires_grad()) {
                float* gb = tb.grad_acc();
                for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * pa[i];
            }
        });
}

Tensor emax(const Tensor& a, const Tensor& b) {
    return binary_ew(
        a, b, "emax", [](float x, float y) { return x >= y ? x : y; },
        [](Tensor& ta, Tensor& tb, const float* g) {
            const int64_t n = ta.numel();
            const float* pa = ta.data();
            const float* pb = tb.data();
            if (ta.requires_grad()) {
                float* ga = ta.grad_acc();
                for (int64_t i = 0; i < n; ++i)
                    if (pa[i] >= pb[i]) ga[i] += g[i];
            }
            if (tb.requires_grad()) {
                float* gb = tb.grad_acc();
                for (int64_t i = 0; i < n; ++i)
                    if (pa[i] < pb[i]) gb[i] += g[i];
            }
        });
}

// ---- elementwise unary ----

namespace {

// Forward computes the value and (when tracked) the pointwise derivative.
template <class Fwd>
Tensor unary_ew(const Tensor& a, const char* name, Fwd fwd) {
    check(a.defined(), std::string(name) + ": undefined tensor");
    const int64_t n = a.numel();
    Tensor out(a.shape(), 0.0f);
    const float* pa = a.data();
    float* po = out.data();
    const bool track = track_grad({&a});
    std::vector<float> dbuf;
    if (track) {
        dbuf.resize(size_t(n));
        for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i], &dbuf[size_t(i)]);
    } else {
        float scratch;
        for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i], &scratch);
    }
    if (track) {
        out.set_requires_grad(true);
        Tensor ta = a, to = out;
        Tape::active().record({out}, [ta, to, d = std::move(dbuf)]() mutable {
            const float* g = to.grad();
            if (!g) return;
            float* ga = ta.grad_acc();
            const int64_t n2 = ta.numel();
            for (int64_t i = 0; i < n2; ++i) ga[i] += g[i] * d[size_t(i)];
        });
    }
    return out;
}

}  // namespace

Tensor scale(const Tensor& a, float s) {
    return unary_ew(a, "scale", [s](float x, float* d) {
        *d = s;
        return x * s;
    });
}

Tensor add_scalar(const Tensor& a, float s) {
    return unary_ew(a, "add_scalar", [s](float x, float* d) {
        *d = 1.0f;
        return x + s;
    });
}

Tensor neg(const Tensor& a) {
    return unary_ew(a, "neg", [](float x, float* d) {
        *d = -1.0f;
        return -x;
    });
}

Tensor exp_t(const Tensor& a) {
    return unary_ew(a, "exp", [](float x, float* d) {
        float e = fast_expf(x);
        *d = e;
        return e;
    });
}

Tensor neg_exp(const Tensor& a) {
    return unary_ew(a, "neg_exp", [](float x, float* d) {
        float e = -fast_expf(x);
        *d = e;
        return e;
    });
}

Tensor log_t(const Tensor& a) {
    return unary_ew(a, "log", [](float x, float* d) {
        *d = 1.0f / x;
        return std::log(x);
    });
}

Tensor abs_t(const Tensor& a) {
    return unary_ew(a, "abs", [](float x, float* d) {
        *d = x > 0.0f ? 1.0f : (x < 0.0f ? -1.0f : 0.0f);
        return std::fabs(x);
    });
}

namespace {

// Vectorized family for the exp-based activations: computes sigmoid(x) in
// blocks, then finishes value/derivative with plain (auto-vectorizable)
// loops.
template <class Fin>
Tensor sigmoid_family(const Tensor& a, const char* name, Fin&& finish) {
    check(a.defined(), std::string(name) + ": undefined tensor");
    const int64_t n = a.numel();
    Tensor out(a.shape(), 0.0f);
    const float* pa = a.data();
    float* po = out.data();
    const bool track = track_grad({&a});
    std::vector<float> dbuf;
    if (track) dbuf.resize(size_t(n));
    constexpr int kBlock = 256;
#pragma omp parallel for schedule(static) if (n > 65536)
    for (int64_t start = 0; start < n; start += kBlock) {
        const int m = int(std::min<int64_t>(kBlock, n - start));
        float neg[kBlock], e[kBlock];
        for (int i = 0; i < m; ++i) neg[i] = -pa[start + i];
        vexp(e, neg, m);
        finish(pa + start, e, po + start, track ? dbuf.data() + start : nullptr, m);
    }
    if (track) {
        out.set_requires_grad(true);
        Tensor ta = a, to = out;
        Tape::active().record({out}, [ta, to, d = std::move(dbuf)]() mutable {
            const float* g = to.grad();
            if (!g) return;
            float* ga = ta.grad_acc();
            const float* pd = d.data();
            const int64_t n2 = ta.numel();
#pragma omp parallel for schedule(static) if (n2 > 65536)
            for (int64_t i = 0; i < n2; ++i) ga[i] += g[i] * pd[i];
        });
    }
    return out;
}

}  // namespace

Tensor sigmoid(const Tensor& a) {
    return sigmoid_family(a, "sigmoid", [](const float* x, const float* e, float* o, float* d,
                                           int m) {
        for (int i = 0; i < m; ++i) {
            const float s = 1.0f / (1.0f + e[i]);
            o[i] = s;
            if (d) d[i] = s * (1.0f - s);
        }
        (void)x;
    });
}

Tensor tanh_t(const Tensor& a) {
    // tanh(x) = 2*sigmoid(2x) - 1; reuse exp(-x) twice
    check(a.defined(), "tanh: undefined tensor");
    const int64_t n = a.numel();
    Tensor out(a.shape(), 0.0f);
    const float* pa = a.data();
    float* po = out.data();
    const bool track = track_grad({&a});
    std::vector<float> dbuf;
    if (track) dbuf.resize(size_t(n));
    float* pd = track ? dbuf.data() : nullptr;
    constexpr int kBlock = 256;
#pragma omp parallel for schedule(static) if (n > 65536)
    for (int64_t start = 0; start < n; start += kBlock) {
        const int m = int(std::min<int64_t>(kBlock, n - start));
        float neg[kBlock], e[kBlock];
        for (int i = 0; i < m; ++i) neg[i] = -2.0f * pa[start + i];
        vexp(e, neg, m);
        for (int i = 0; i < m; ++i) {
            const float t = 2.0f / (1.0f + e[i]) - 1.0f;
            po[start + i] = t;
            if (pd) pd[start + i] = 1.0f - t * t;
        }
    }
    if (track) {
        out.set_requires_grad(true);
        Tensor ta = a, to = out;
        Tape::active().record({out}, [ta, to, d = std::move(dbuf)]() mutable {
            const float* g = to.grad();
            if (!g) return;
            float* ga = ta.grad_acc();
            const float* pdd = d.data();
            const int64_t n2 = ta.numel();
#pragma omp parallel for schedule(static) if (n2 > 65536)
            for (int64_t i = 0; i < n2; ++i) ga[i] += g[i] * pdd[i];
        });
    }
    return out;
}

Tensor silu(const Tensor& a) {
    return sigmoid_family(a, "silu", [](const float* x, const float* e, float* o, float* d,
                                        int m) {
        for (int i = 0; i < m; ++i) {
            const float s = 1.0f / (1.0f + e[i]);
            o[i] = x[i] * s;
            if (d) d[i] = s * (1.0f + x[i] * (1.0f - s));
        }
    });
}

Tensor softplus_t(const Tensor& a) {
    return sigmoid_family(a, "softplus", [](const float* x, const float* e, float* o, float* d,
                                            int m) {
        for (int i = 0; i < m; ++i) {
            const float s = 1.0f / (1.0f + e[i]);
            if (d) d[i] = s;
            if (x[i] > 20.0f)
                o[i] = x[i];
            else if (x[i] < -20.0f)
                o[i] = 1.0f / e[i];
            else
                o[i] = std::log1p(1.0f / e[i]);
        }
    });
}

Tensor leaky_relu(const Tensor& a, float negative_slope) {
    return unary_ew(a, "leaky_relu", [negative_slope](float x, float* d) {
        *d = x > 0.0f ? 1.0f : negative_slope;
        return x > 0.0f ? x : negative_slope * x;
    });
}

Tensor softmax(const Tensor& a, int axis) {
    check(a.defined(), "softmax: undefined tensor");
    if (axis < 0) axis += a.rank();
    check(axis >= 0 && axis < a.rank(), "softmax: axis out of range");
    const int D = a.dim(axis);
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= a.dim(i);
    for (int i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);

    Tensor out(a.shape(), 0.0f);
    const float* pa = a.data();
    float* po = out.data();
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * D * inner + in;
            float mx = pa[base];
            for (int j = 1; j < D; ++j) mx = std::max(mx, pa[base + j * inner]);
            float sum = 0.0f;
            for (int j = 0; j < D; ++j) {
                float e = fast_expf(pa[base + j * inner] - mx);
                po[base + j * inner] = e;
                sum += e;
            }
            const float inv = 1.0f / sum;
            for (int j = 0; j < D; ++j) po[base + j * inner] *= inv;
        }
    }
    if (track_grad({&a})) {
        out.set_requires_grad(true);
        Tensor ta = a, to = out;
        Tape::active().record({out}, [ta, to, D, outer, inner]() mutable {
            const float* g = to.grad();
            if (!g) return;
            const float* y = to.data();
            float* ga = ta.grad_acc();
            for (int64_t o = 0; o < outer; ++o) {
                for (int64_t in = 0; in < inner; ++in) {
                    const int64_t base = o * D * inner + in;
                    float dot = 0.0f;
                    for (int j = 0; j < D; ++j) dot += g[base + j * inner] * y[base + j * inner];
                    for (int j = 0; j < D; ++j) {
                        const int64_t k = base + j * inner;
                        ga[k] += y[k] * (g[k] - dot);
                    }
                }
            }
        });
    }
    return out;
}

// ---- reductions ----

Tensor sum_all(const Tensor& a) {
    check(a.defined(), "sum_all: undefined tensor");
    const int64_t n = a.numel();
    const float* pa = a.data();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += pa[i];
    Tensor out({1}, float(acc));
    if (track_grad({&a})) {
        out.set_requires_grad(true);
        Tensor ta = a, to = out;
        Tape::active().record({out}, [ta, to]() mutable {
            const float* g = to.grad();
            if (!g) return;
            float* ga = ta.grad_acc();
            const int64_t n2 = ta.numel();
            for (int64_t i = 0; i < n2; ++i) ga[i] += g[0];
        });
    }
    return out;
}

Tensor mean_all(const Tensor& a) {
    check(a.defined(), "mean_all: undefined tensor");
    const int64_t n = a.numel();
    const float* pa = a.data();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += pa[i];
    Tensor out({1}, float(acc / double(n)));
    if (track_grad({&a})) {
        out.set_requires_grad(true);
        Tensor ta = a, to = out;
        Tape::active().record({out}, [ta, to]() mutable {
            const float* g = to.grad();
            if (!g) return;
            float* ga = ta.grad_acc();
            const int64_t n2 = ta.numel();
            const float s = g[0] / float(n2);
            for (int64_t i = 0; i < n2; ++i) ga[i] += s;
        });
    }
    return out;
}

// ---- structure ----

Tensor reshape(const Tensor& a, Shape s) {
    check(a.defined(), "reshape: undefined tensor");
    check(shape_numel(s) == a.numel(),
          "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(s));
    Tensor out = Tensor::from_vec(std::move(s), a.vec());
    if (track_grad({&a})) {
        out.set_requires_grad(true);
        Tensor ta = a, to = out;
        Tape::active().record({out}, [ta, to]() mutable {
            const float* g = to.grad();
            if (!g) return;
            float* ga = ta.grad_acc();
            const int64_t n = ta.numel();
            for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
        });
    }
    return out;
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
    check(a.defined() && b.defined(), "concat: undefined tensor");
    check(a.rank() == b.rank(), "concat: rank mismatch");
    if (axis < 0) axis += a.rank();
    check(axis >= 0 && axis < a.rank(), "concat: axis out of range");
    for (int i = 0; i < a.rank(); ++i)
        if (i != axis)
            check(a.dim(i) == b.dim(i), "concat: shapes " + shape_str(a.shape()) + " and " +
                                            shape_str(b.shape()) + " differ off-axis");
    Shape s = a.shape();
    s[size_t(axis)] += b.dim(axis);
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= a.dim(i);
    for (int i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
    const int64_t arow = int64_t(a.dim(axis)) * inner;
    const int64_t brow = int64_t(b.dim(axis)) * inner;

    Tensor out(s, 0.0f);
    float* po = out.data();
    const float* pa = a.data();
    const float* pb = b.data();
    for (int64_t o = 0; o < outer; ++o) {
        std::memcpy(po + o * (arow + brow), pa + o * arow, size_t(arow) * sizeof(float));
        std::memcpy(po + o * (arow + brow) + arow, pb + o * brow, size_t(brow) * sizeof(float));
    }
    if (track_grad({&a, &b})) {
        out.set_requires_grad(true);
        Tensor ta = a, tb = b, to = out;
        Tape::active().record({out}, [ta, tb, to, outer, arow, brow]() mutable {
            const float* g = to.grad();
            if (!g) return;
            if (ta.requires_grad()) {
                float* ga = ta.grad_acc();
                for (int64_t o = 0; o < outer; ++o)
                    for (int64_t i = 0; i < arow; ++i) ga[o * arow + i] += g[o * (arow + brow) + i];
            }
            if (tb.requires_grad()) {
                float* gb = tb.grad_acc();
                for (int64_t o = 0; o < outer; ++o)
                    for (int64_t i = 0; i < brow; ++i)
                        gb[o * brow + i] += g[o * (arow + brow) + arow + i];
            }
        });
    }
    return out;
}

Tensor slice_axis0(const Tensor& a, int begin, int end) {
    check(a.defined(), "slice_axis0: undefined tensor");
    check(begin >= 0 && end > begin && end <= a.dim(0), "slice_axis0: bad range");
    Shape s = a.shape();
    s[0] = end - begin;
    int64_t inner = 1;
    for (int i = 1; i < a.rank(); ++i) inner *= a.dim(i);
    Tensor out(s, 0.0f);
    std::memcpy(out.data(), a.data() + int64_t(begin) * inner,
                size_t((end - begin) * inner) * sizeof(float));
    if (track_grad({&a})) {
        out.set_requires_grad(true);
        Tensor ta = a, to = out;
        Tape::active().record({out}, [ta, to, begin, inner]() mutable {
            const float* g = to.grad();
            if (!g) return;
            float* ga = ta.grad_acc();
            const int64_t n = to.numel();
            for (int64_t i = 0; i < n; ++i) ga[int64_t(begin) * inner + i] += g[i];
        });
    }
    return out;
}

Tensor flip0(const Tensor& a) {
    check(a.defined() && a.rank() >= 1, "flip0: need rank >= 1");
    const int L = a.dim(0);
    int64_t inner = 1;
    for (int i = 1; i < a.rank(); ++i) inner *= a.dim(i);
    Tensor out(a.shape(), 0.0f);
    const float* pa = a.data();
    float* po = out.data();
    for (int l = 0; l < L; ++l)
        std::memcpy(po + int64_t(L - 1 - l) * inner, pa + int64_t(l) * inner,
                    size_t(inner) * sizeof(float));
    if (track_grad({&a})) {
        out.set_requires_grad(true);
        Tensor ta = a, to = out;
        Tape::active().record({out}, [ta, to, L, inner]() mutable {
            const float* g = to.grad();
            if (!g) return;
            float* ga = ta.grad_acc();
            for (int l = 0; l < L; ++l) {
                const float* gr = g + int64_t(L - 1 - l) * inner;
                float* gw = ga + int64_t(l) * inner;
                for (int64_t i = 0; i < inner; ++i) gw[i] += gr[i];
            }
        });
    }
    return out;
}

Tensor detach(const Tensor& a) {
    check(a.defined(), "detach: undefined tensor");
    return Tensor::from_vec(a.shape(), a.vec());
}

Tensor chw_to_lc(const Tensor& a) {
    check(a.defined() && a.rank() == 3, "chw_to_lc: need [C,H,W]");
    const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
    const int64_t L = int64_t(H) * W;
    Tensor out({int(L), C}, 0.0f);
    const float* pa = a.data();
    float* po = out.data();
    for (int c = 0; c < C; ++c)
        for (int64_t l = 0; l < L; ++l) po[l * C + c] = pa[c * L + l];
    if (track_grad({&a})) {
        out.set_requires_grad(true);
        Tensor ta = a, to = out;
        Tape::active().record({out}, [ta, to, C, L]() mutable {
            const float* g = to.grad();
            if (!g) return;
            float* ga = ta.grad_acc();
            for (int c = 0; c < C; ++c)
                for (int64_t l = 0; l < L; ++l) ga[c * L + l] += g[l * C + c];
        });
    }
    return out;
}

Tensor lc_to_chw(const Tensor& a, int H, int W) {
    check(a.defined() && a.rank() == 2, "lc_to_chw: need [L,C]");
    const int64_t L = a.dim(0);
    const int C = a.dim(1);
    check(L == int64_t(H) * W, "lc_to_chw: L != H*W");
    Tensor out({C, H, W}, 0.0f);
    const float* pa = a.data();
    float* po = out.data();
    for (int c = 0; c < C; ++c)
        for (int64_t l = 0; l < L; ++l) po[c * L + l] = pa[l * C + c];
    if (track_grad({&a})) {
        out.set_requires_grad(true);
        Tensor ta = a, to = out;
        Tape::active().record({out}, [ta, to, C, L]() mutable {
            const float* g = to.grad();
            if (!g) return;
            float* ga = ta.grad_acc();
            for (int c = 0; c < C; ++c)
                for (int64_t l = 0; l < L; ++l) ga[l * C + c] += g[c * L + l];
        });
    }
    return out;
}

Tensor upsample_nearest2x(const Tensor& a) {
    check(a.defined() && a.rank() == 3, "upsample_nearest2x: need [C,H,W]");
    const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
    Tensor out({C, 2 * H, 2 * W}, 0.0f);
    const float* pa = a.data();
    float* po = out.data();
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < 2 * H; ++y) {
            const float* row = pa + (int64_t(c) * H + y / 2) * W;
            float* orow = po + (int64_t(c) * 2 * H + y) * 2 * W;
            for (int x = 0; x < 2 * W; ++x) orow[x] = row[x / 2];
        }
    if (track_grad({&a})) {
        out.set_requires_grad(true);
        Tensor ta = a, to = out;
        Tape::active().record({out}, [ta, to, C, H, W]() mutable {
            const float* g = to.grad();
            if (!g) return;
            float* ga = ta.grad_acc();
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < 2 * H; ++y) {
                    const float* grow = g + (int64_t(c) * 2 * H + y) * 2 * W;
                    float* arow = ga + (int64_t(c) * H + y / 2) * W;
                    for (int x = 0; x < 2 * W; ++x) arow[x / 2] += grow[x];
                }
        });
    }
    return out;
}

Tensor replicate_pad1(const Tensor& a) {
    check(a.defined() && a.rank() == 3, "replicate_pad1: need [C,H,W]");
    const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
    const int Hp = H + 2, Wp = W + 2;
    Tensor out({C, Hp, Wp}, 0.0f);
    const float* pa = a.data();
    float* po = out.data();
    auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < Hp; ++y) {
            const float* row = pa + (int64_t(c) * H + clampi(y - 1, H - 1)) * W;
            float* orow = po + (int64_t(c) * Hp + y) * Wp;
            for (int x = 0; x < Wp; ++x) orow[x] = row[clampi(x - 1, W - 1)];
        }
    if (track_grad({&a})) {
        out.set_requires_grad(true);
        Tensor ta = a, to = out;
        Tape::active().record({out}, [ta, to, C, H, W, Hp, Wp, clampi]() mutable {
            const float* g = to.grad();
            if (!g) return;
            float* ga = ta.grad_acc();
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < Hp; ++y) {
                    const float* grow = g + (int64_t(c) * Hp + y) * Wp;
                    float* arow = ga + (int64_t(c) * H + clampi(y - 1, H - 1)) * W;
                    for (int x = 0; x < Wp; ++x) arow[clampi(x - 1, W - 1)] += grow[x];
                }
        });
    }
    return out;
}

}  // namespace mm2ct
