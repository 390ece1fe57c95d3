#include <algorithm>
#include <cmath>
#include <cstring>

#include "mm2ct/ops.hpp"
#include "mm2ct/simd.hpp"

namespace mm2ct {

// ---- linear ----

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    check(x.defined() && w.defined(), "linear: undefined tensor");
    check(w.rank() == 2, "linear: weight must be [O,I]");
    const int I = w.dim(1);
    const int O = w.dim(0);
    check(x.rank() >= 1 && x.dim(x.rank() - 1) == I,
          "linear: input extent " + shape_str(x.shape()) + " does not match weight " +
              shape_str(w.shape()));
    if (b.defined()) check(b.rank() == 1 && b.dim(0) == O, "linear: bias must be [O]");
    const int64_t M = x.numel() / I;

    Shape os = x.shape();
    os.back() = O;
    Tensor out(os, 0.0f);
    const float* px = x.data();
    const float* pw = w.data();
    const float* pb = b.defined() ? b.data() : nullptr;
    float* po = out.data();

#pragma omp parallel for schedule(static)
    for (int64_t m = 0; m < M; ++m) {
        const float* xr = px + m * I;
        float* orow = po + m * O;
        for (int o = 0; o < O; ++o)
            orow[o] = (pb ? pb[o] : 0.0f) + vdot(xr, pw + int64_t(o) * I, I);
    }

    if (track_grad({&x, &w, &b})) {
        out.set_requires_grad(true);
        Tensor tx = x, tw = w, tb = b, to = out;
        Tape::active().record({out}, [tx, tw, tb, to, M, I, O]() mutable {
            const float* g = to.grad();
            if (!g) return;
            const float* px2 = tx.data();
            const float* pw2 = tw.data();
            if (tx.requires_grad()) {
                float* gx = tx.grad_acc();
#pragma omp parallel for schedule(static)
                for (int64_t m = 0; m < M; ++m) {
                    const float* gr = g + m * O;
                    float* gxr = gx + m * I;
                    for (int o = 0; o < O; ++o) vaxpy(gxr, gr[o], pw2 + int64_t(o) * I, I);
                }
            }
            if (tw.requires_grad()) {
                float* gw = tw.grad_acc();
#pragma omp parallel for schedule(static)
                for (int o = 0; o < O; ++o) {
                    float* gwr = gw + int64_t(o) * I;
                    for (int64_t m = 0; m < M; ++m) vaxpy(gwr, g[m * O + o], px2 + m * I, I);
                }
            }
            if (tb.defined() && tb.requires_grad()) {
                float* gb = tb.grad_acc();
                for (int64_t m = 0; m < M; ++m)
                    for (int o = 0; o < O; ++o) gb[o] += g[m * O + o];
            }
        });
    }
    return out;
}

// ---- conv2d ----

namespace {

struct ConvDims {
    int B, C, H, W, O, K, Ho, Wo;
    bool batched;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
    check(x.defined() && w.defined(), "conv2d: undefined tensor");
    check(w.rank() == 4, "conv2d: weight must be [O,C,k,k]");
    check(x.rank() == 3 || x.rank() == 4, "conv2d: input must be [C,H,W] or [B,C,H,W]");
    check(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
    ConvDims d;
    d.batched = x.rank() == 4;
    d.B = d.batched ? x.dim(0) : 1;
    d.C = x.dim(d.batched ? 1 : 0);
    d.H = x.dim(d.batched ? 2 : 1);
    d.W = x.dim(d.batched ? 3 : 2);
    d.O = w.dim(0);
    d.K = w.dim(2);
    check(w.dim(2) == w.dim(3), "conv2d: kernel must be square");
    check(w.dim(1) == d.C, "conv2d: channel mismatch (input " + std::to_string(d.C) +
                               ", weight expects " + std::to_string(w.dim(1)) + ")");
    d.Ho = (d.H + 2 * pad - d.K) / stride + 1;
    d.Wo = (d.W + 2 * pad - d.K) / stride + 1;
    check(d.Ho > 0 && d.Wo > 0, "conv2d: non-positive output extent");
    return d;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    const ConvDims d = conv_dims(x, w, stride, pad);
    if (b.defined()) check(b.rank() == 1 && b.dim(0) == d.O, "conv2d: bias must be [O]");

    Shape os = d.batched ? Shape{d.B, d.O, d.Ho, d.Wo} : Shape{d.O, d.Ho, d.Wo};
    Tensor out(os, 0.0f);
    const float* px = x.data();
    const float* pw = w.data();
    const float* pb = b.defined() ? b.data() : nullptr;
    float* po = out.data();
    const int64_t in_plane = int64_t(d.H) * d.W;
    const int64_t out_plane = int64_t(d.Ho) * d.Wo;

#pragma omp parallel for schedule(static)
    for (int64_t bo = 0; bo < int64_t(d.B) * d.O; ++bo) {
        const int bb = int(bo / d.O);
        const int o = int(bo % d.O);
        float* op = po + (int64_t(bb) * d.O + o) * out_plane;
        const float bias = pb ? pb[o] : 0.0f;
        for (int64_t i = 0; i < out_plane; ++i) op[i] = bias;
        for (int c = 0; c < d.C; ++c) {
            const float* ip = px + (int64_t(bb) * d.C + c) * in_plane;
            for (int ky = 0; ky < d.K; ++ky)
                for (int kx = 0; kx < d.K; ++kx) {
                    const float wv = pw[((int64_t(o) * d.C + c) * d.K + ky) * d.K + kx];
                    if (wv == 0.0f) continue;
                    for (int oy = 0; oy < d.Ho; ++oy) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= d.H) continue;
                        // ox range with ix = ox*stride - pad + kx inside [0, W)
                        int lo = 0, hi = d.Wo;
                        if (pad - kx > 0) lo = (pad - kx + stride - 1) / stride;
                        {
                            const int mx = d.W - 1 + pad - kx;
                            if (mx < 0)
                                hi = 0;
                            else
                                hi = std::min(d.Wo, mx / stride + 1);
                        }
                        const float* ir = ip + int64_t(iy) * d.W - pad + kx;
                        float* orow = op + int64_t(oy) * d.Wo;
                        if (stride == 1) {
                            vaxpy(orow + lo, wv, ir + lo, hi - lo);
                        } else {
                            for (int ox = lo; ox < hi; ++ox) orow[ox] += wv * ir[ox * stride];
                        }
                    }
                }
        }
    }

    if (track_grad({&x, &w, &b})) {
        out.set_requires_grad(true);
        Tensor tx = x, tw = w, tb = b, to = out;
        Tape::active().record({out}, [tx, tw, tb, to, d, stride, pad, in_plane,
                                      out_plane]() mutable {
            const float* g = to.grad();
            if (!g) return;
            const float* px2 = tx.data();
            const float* pw2 = tw.data();
            if (tb.defined() && tb.requires_grad()) {
                float* gb = tb.grad_acc();
                for (int bb = 0; bb < d.B; ++bb)
                    for (int o = 0; o < d.O; ++o) {
                        const float* gp = g + (int64_t(bb) * d.O + o) * out_plane;
                        double acc = 0.0;
                        for (int64_t i = 0; i < out_plane; ++i) acc += gp[i];
                        gb[o] += float(acc);
                    }
            }
            if (tw.requires_grad()) {
                float* gw = tw.grad_acc();
#pragma omp parallel for schedule(static)
                for (int o = 0; o < d.O; ++o) {
                    for (int c = 0; c < d.C; ++c)
                        for (int ky = 0; ky < d.K; ++ky)
                            for (int kx = 0; kx < d.K; ++kx) {
                                float acc = 0.0f;
                                for (int bb = 0; bb < d.B; ++bb) {
                                    const float* gp = g + (int64_t(bb) * d.O + o) * out_plane;
                                    const float* ip = px2 + (int64_t(bb) * d.C + c) * in_plane;
                                    for (int oy = 0; oy < d.Ho; ++oy) {
                                        const int iy = oy * stride - pad + ky;
                                        if (iy < 0 || iy >= d.H) continue;
                                        int lo = 0, hi = d.Wo;
                                        if (pad - kx > 0) lo = (pad - kx + stride - 1) / stride;
                                        const int mx = d.W - 1 + pad - kx;
                                        hi = mx < 0 ? 0 : std::min(d.Wo, mx / stride + 1);
                                        const float* ir = ip + int64_t(iy) * d.W - pad + kx;
                                        const float* gr = gp + int64_t(oy) * d.Wo;
                                        if (stride == 1) {
                                            acc += vdot(gr + lo, ir + lo, hi - lo);
                                        } else {
                                            for (int ox = lo; ox < hi; ++ox)
                                                acc += gr[ox] * ir[ox * stride];
                                        }
                                    }
                                }
                                gw[((int64_t(o) * d.C + c) * d.K + ky) * d.K + kx] += acc;
                            }
                }
            }
            if (tx.requires_grad()) {
                float* gx = tx.grad_acc();
#pragma omp parallel for schedule(static)
                for (int64_t bc = 0; bc < int64_t(d.B) * d.C; ++bc) {
                    const int bb = int(bc / d.C);
                    const int c = int(bc % d.C);
                    float* gxp = gx + (int64_t(bb) * d.C + c) * in_plane;
                    for (int o = 0; o < d.O; ++o) {
                        const float* gp = g + (int64_t(bb) * d.O + o) * out_plane;
                        for (int ky = 0; ky < d.K; ++ky)
                            for (int kx = 0; kx < d.K; ++kx) {
                                const float wv =
                                    pw2[((int64_t(o) * d.C + c) * d.K + ky) * d.K + kx];
                                if (wv == 0.0f) continue;
                                for (int oy = 0; oy < d.Ho; ++oy) {
                                    const int iy = oy * stride - pad + ky;
                                    if (iy < 0 || iy >= d.H) continue;
                                    int lo = 0, hi = d.Wo;
                                    if (pad - kx > 0) lo = (pad - kx + stride - 1) / stride;
                                    const int mx = d.W - 1 + pad - kx;
                                    hi = mx < 0 ? 0 : std::min(d.Wo, mx / stride + 1);
                                    float* xr = gxp + int64_t(iy) * d.W - pad + kx;
                                    const float* gr = gp + int64_t(oy) * d.Wo;
                                    if (stride == 1) {
                                        vaxpy(xr + lo, wv, gr + lo, hi - lo);
                                    } else {
                                        for (int ox = lo; ox < hi; ++ox)
                                            xr[ox * stride] += wv * gr[ox];
                                    }
                                }
                            }
                    }
                }
            }
        });
    }
    return out;
}

// ---- depthwise causal 1D conv ----

Tensor dwconv1d_causal(const Tensor& x, const Tensor& w, const Tensor& b) {
    check(x.defined() && w.defined(), "dwconv1d: undefined tensor");
    check(x.rank() == 2 && w.rank() == 2, "dwconv1d: expects x [L,C], w [C,k]");
    const int L = x.dim(0), C = x.dim(1), K = w.dim(1);
    check(w.dim(0) == C, "dwconv1d: channel mismatch");
    if (b.defined()) check(b.rank() == 1 && b.dim(0) == C, "dwconv1d: bias must be [C]");

    Tensor out({L, C}, 0.0f);
    const float* px = x.data();
    const float* pw = w.data();
    const float* pb = b.defined() ? b.data() : nullptr;
    float* po = out.data();
    for (int l = 0; l < L; ++l) {
        float* orow = po + int64_t(l) * C;
        for (int c = 0; c < C; ++c) {
            float acc = pb ? pb[c] : 0.0f;
            for (int j = 0; j < K; ++j) {
                const int src = l - (K - 1) + j;
                if (src >= 0) acc += pw[int64_t(c) * K + j] * px[int64_t(src) * C + c];
            }
            orow[c] = acc;
        }
    }

    if (track_grad({&x, &w, &b})) {
        out.set_requires_grad(true);
        Tensor tx = x, tw = w, tb = b, to = out;
        Tape::active().record({out}, [tx, tw, tb, to, L, C, K]() mutable {
            const float* g = to.grad();
            if (!g) return;
            const float* px2 = tx.data();
            const float* pw2 = tw.data();
            if (tx.requires_grad()) {
                float* gx = tx.grad_acc();
                for (int l = 0; l < L; ++l)
                    for (int j = 0; j < K; ++j) {
                        const int src = l - (K - 1) + j;
                        if (src < 0) continue;
                        for (int c = 0; c < C; ++c)
                            gx[int64_t(src) * C + c] += pw2[int64_t(c) * K + j] * g[int64_t(l) * C + c];
                    }
            }
            if (tw.requires_grad()) {
                float* gw = tw.grad_acc();
                for (int l = 0; l < L; ++l)
                    for (int j = 0; j < K; ++j) {
                        const int src = l - (K - 1) + j;
                        if (src < 0) continue;
                        for (int c = 0; c < C; ++c)
                            gw[int64_t(c) * K + j] += g[int64_t(l) * C + c] * px2[int64_t(src) * C + c];
                    }
            }
            if (tb.defined() && tb.requires_grad()) {
                float* gb = tb.grad_acc();
                for (int l = 0; l < L; ++l)
                    for (int c = 0; c < C; ++c) gb[c] += g[int64_t(l) * C + c];
            }
        });
    }
    return out;
}

// ---- layer norm ----

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
    check(x.defined() && gamma.defined() && beta.defined(), "layer_norm: undefined tensor");
    check(eps > 0.0f, "layer_norm: eps must be positive");
    const int C = x.dim(x.rank() - 1);
    check(gamma.rank() == 1 && gamma.dim(0) == C && beta.rank() == 1 && beta.dim(0) == C,
          "layer_norm: gamma/beta must be [C]");
    const int64_t M = x.numel() / C;

    Tensor out(x.shape(), 0.0f);
    const float* px = x.data();
    const float* pg = gamma.data();
    const float* pbeta = beta.data();
    float* po = out.data();
    std::vector<float> mean(size_t(M), 0.0f), inv_std(size_t(M), 0.0f);
#pragma omp parallel for schedule(static)
    for (int64_t m = 0; m < M; ++m) {
        const float* xr = px + m * C;
        float mu = 0.0f;
        for (int i = 0; i < C; ++i) mu += xr[i];
        mu /= float(C);
        float var = 0.0f;
        for (int i = 0; i < C; ++i) {
            const float dv = xr[i] - mu;
            var += dv * dv;
        }
        var /= float(C);
        const float inv = 1.0f / std::sqrt(var + eps);
        mean[size_t(m)] = mu;
        inv_std[size_t(m)] = inv;
        float* orow = po + m * C;
        for (int i = 0; i < C; ++i) orow[i] = pg[i] * (xr[i] - mu) * inv + pbeta[i];
    }

    if (track_grad({&x, &gamma, &beta})) {
        out.set_requires_grad(true);
        Tensor tx = x, tg = gamma, tb = beta, to = out;
        Tape::active().record(
            {out}, [tx, tg, tb, to, M, C, mu = std::move(mean), inv = std::move(inv_std)]() mutable {
                const float* g = to.grad();
                if (!g) return;
                const float* px2 = tx.data();
                const float* pg2 = tg.data();
                const float* pmu = mu.data();
                const float* pinv = inv.data();
                if (tx.requires_grad()) {
                    float* gx = tx.grad_acc();
#pragma omp parallel for schedule(static)
                    for (int64_t m = 0; m < M; ++m) {
                        const float* xr = px2 + m * C;
                        const float* gr = g + m * C;
                        float* gxr = gx + m * C;
                        const float im = pinv[m];
                        float m1 = 0.0f, m2 = 0.0f;
                        for (int i = 0; i < C; ++i) {
                            const float xh = (xr[i] - pmu[m]) * im;
                            const float dxh = gr[i] * pg2[i];
                            m1 += dxh;
                            m2 += dxh * xh;
                        }
                        m1 /= float(C);
                        m2 /= float(C);
                        for (int i = 0; i < C; ++i) {
                            const float xh = (xr[i] - pmu[m]) * im;
                            gxr[i] += im * (gr[i] * pg2[i] - m1 - xh * m2);
                        }
                    }
                }
                if (tg.requires_grad() || tb.requires_grad()) {
                    float* gg = tg.requires_grad() ? tg.grad_acc() : nullptr;
                    float* gb = tb.requires_grad() ? tb.grad_acc() : nullptr;
                    for (int64_t m = 0; m < M; ++m) {
                        const float* xr = px2 + m * C;
                        const float* gr = g + m * C;
                        const float im = pinv[m];
                        for (int i = 0; i < C; ++i) {
                            if (gg) gg[i] += gr[i] * (xr[i] - pmu[m]) * im;
                            if (gb) gb[i] += gr[i];
                        }
                    }
                }
            });
    }
    return out;
}

// ---- kernel-window sum ----

Tensor sum_hw(const Tensor& w) {
    check(w.defined() && w.rank() == 4, "sum_hw: need [O,C,k,k]");
    const int O = w.dim(0), C = w.dim(1), K = w.dim(2);
    const int KK = K * w.dim(3);
    Tensor out({O, C, 1, 1}, 0.0f);
    const float* pw = w.data();
    float* po = out.data();
    for (int64_t oc = 0; oc < int64_t(O) * C; ++oc) {
        float acc = 0.0f;
        for (int i = 0; i < KK; ++i) acc += pw[oc * KK + i];
        po[oc] = acc;
    }
    if (track_grad({&w})) {
        out.set_requires_grad(true);
        Tensor tw = w, to = out;
        Tape::active().record({out}, [tw, to, O, C, KK]() mutable {
            const float* g = to.grad();
            if (!g) return;
            float* gw = tw.grad_acc();
            for (int64_t oc = 0; oc < int64_t(O) * C; ++oc)
                for (int i = 0; i < KK; ++i) gw[oc * KK + i] += g[oc];
        });
    }
    return out;
}

}  // namespace mm2ct
