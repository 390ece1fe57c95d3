#include "mm2ct/fusion.hpp"

#include <cstring>

namespace mm2ct {

void StemParams::init(int width, RngStream& rng) {
    w1 = trunc_normal({width, 1, 3, 3}, rng, 0.02f);
    w1.set_requires_grad(true);
    b1 = zeros({width}, true);
    w2 = trunc_normal({width, width, 3, 3}, rng, 0.02f);
    w2.set_requires_grad(true);
    b2 = zeros({width}, true);
}

void StemParams::collect(const std::string& prefix, std::vector<Parameter>& out) {
    out.push_back({w1, prefix + ".conv1.weight"});
    out.push_back({b1, prefix + ".conv1.bias"});
    out.push_back({w2, prefix + ".conv2.weight"});
    out.push_back({b2, prefix + ".conv2.bias"});
}

Tensor stem(const StemParams& p, const Tensor& img) {
    check(img.defined() && img.rank() == 3 && img.dim(0) == 1, "stem: expects [1,H,W]");
    check(img.dim(1) >= 3 && img.dim(2) >= 3, "stem: image smaller than the kernel");
    return conv2d(silu(conv2d(img, p.w1, p.b1, 1, 1)), p.w2, p.b2, 1, 1);
}

namespace {

std::pair<Tensor, Tensor> swap_core(const Tensor& a, const Tensor& b, int C, int64_t outer,
                                    int64_t inner, bool channel_first) {
    Tensor ao(a.shape(), 0.0f), bo(b.shape(), 0.0f);
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = ao.data();
    float* qo = bo.data();
    // channel_first: layout [C, inner]; otherwise [outer, C]
    if (channel_first) {
        for (int c = 0; c < C; ++c) {
            const bool odd = c & 1;
            std::memcpy(po + int64_t(c) * inner, (odd ? pb : pa) + int64_t(c) * inner,
                        size_t(inner) * sizeof(float));
            std::memcpy(qo + int64_t(c) * inner, (odd ? pa : pb) + int64_t(c) * inner,
                        size_t(inner) * sizeof(float));
        }
    } else {
        for (int64_t o = 0; o < outer; ++o)
            for (int c = 0; c < C; ++c) {
                const bool odd = c & 1;
                po[o * C + c] = odd ? pb[o * C + c] : pa[o * C + c];
                qo[o * C + c] = odd ? pa[o * C + c] : pb[o * C + c];
            }
    }
    if (track_grad({&a, &b})) {
        ao.set_requires_grad(true);
        bo.set_requires_grad(true);
        Tensor ta = a, tb = b, tao = ao, tbo = bo;
        Tape::active().record({ao, bo}, [ta, tb, tao, tbo, C, outer, inner,
                                         channel_first]() mutable {
            const float* ga = tao.grad();
            const float* gb = tbo.grad();
            if (!ga && !gb) return;
            float* da = ta.requires_grad() ? ta.grad_acc() : nullptr;
            float* db = tb.requires_grad() ? tb.grad_acc() : nullptr;
            auto route = [&](int64_t idx, bool odd) {
                // output a got (odd ? b : a); push grads back the same way
                if (ga) {
                    float* dst = odd ? db : da;
                    if (dst) dst[idx] += ga[idx];
                }
                if (gb) {
                    float* dst = odd ? da : db;
                    if (dst) dst[idx] += gb[idx];
                }
            };
            if (channel_first) {
                for (int c = 0; c < C; ++c)
                    for (int64_t i = 0; i < inner; ++i) route(int64_t(c) * inner + i, c & 1);
            } else {
                for (int64_t o = 0; o < outer; ++o)
                    for (int c = 0; c < C; ++c) route(o * C + c, c & 1);
            }
        });
    }
    return {ao, bo};
}

}  // namespace

std::pair<Tensor, Tensor> channel_swap(const Tensor& a, const Tensor& b) {
    check(a.defined() && b.defined(), "channel_swap: undefined tensor");
    check(a.same_shape(b), "channel_swap: shape mismatch " + shape_str(a.shape()) + " vs " +
                               shape_str(b.shape()));
    if (a.rank() == 3) {
        const int C = a.dim(0);
        check(C % 2 == 0, "channel_swap: channel count must be even");
        return swap_core(a, b, C, 1, int64_t(a.dim(1)) * a.dim(2), true);
    }
    check(a.rank() == 2, "channel_swap: expects [C,H,W] or [L,C]");
    const int C = a.dim(1);
    check(C % 2 == 0, "channel_swap: channel count must be even");
    return swap_core(a, b, C, a.dim(0), 1, false);
}

void DynLocalConvParams::init(int width, float theta_cdc, RngStream& rng) {
    theta = theta_cdc;
    w = trunc_normal({width, width, 3, 3}, rng, 0.02f);
    w.set_requires_grad(true);
    b = zeros({width}, true);
}

void DynLocalConvParams::collect(const std::string& prefix, std::vector<Parameter>& out) {
    out.push_back({w, prefix + ".weight"});
    out.push_back({b, prefix + ".bias"});
}

Tensor dynamic_local_conv(const DynLocalConvParams& p, const Tensor& x) {
    check(p.theta >= 0.0f && p.theta <= 1.0f, "dynamic_local_conv: theta outside [0,1]");
    Tensor base = conv2d(replicate_pad1(x), p.w, p.b, 1, 0);
    if (p.theta == 0.0f) return base;
    Tensor center = conv2d(x, sum_hw(p.w), Tensor(), 1, 0);
    return sub(base, scale(center, p.theta));
}

void DiffAttnParams::init(int width, RngStream& rng) {
    w_attn = trunc_normal({width, width, 1, 1}, rng, 0.02f);
    w_attn.set_requires_grad(true);
    b_attn = zeros({width}, true);
    w_val = trunc_normal({width, width, 1, 1}, rng, 0.02f);
    w_val.set_requires_grad(true);
    b_val = zeros({width}, true);
}

void DiffAttnParams::collect(const std::string& prefix, std::vector<Parameter>& out) {
    out.push_back({w_attn, prefix + ".attn.weight"});
    out.push_back({b_attn, prefix + ".attn.bias"});
    out.push_back({w_val, prefix + ".val.weight"});
    out.push_back({b_val, prefix + ".val.bias"});
}

Tensor diff_aware_attention(const DiffAttnParams& p, const Tensor& f1, const Tensor& f2,
                            const Tensor& fused) {
    check(f1.same_shape(f2) && f1.same_shape(fused), "diff_aware_attention: shape mismatch");
    Tensor d = abs_t(sub(f1, f2));
    Tensor attn = sigmoid(conv2d(d, p.w_attn, p.b_attn, 1, 0));
    Tensor val = conv2d(d, p.w_val, p.b_val, 1, 0);
    return add(fused, mul(attn, val));
}

void FusionParams::init(const FusionConfig& config, RngStream& rng) {
    cfg = config;
    check(cfg.width % 2 == 0, "fusion: width must be even");
    check(cfg.theta_cdc >= 0.0f && cfg.theta_cdc <= 1.0f, "fusion: theta_cdc outside [0,1]");
    stem1.init(cfg.width, rng);
    stem2.init(cfg.width, rng);
    if (cfg.enable_mamba) {
        pre1.resize(size_t(cfg.n_pre_blocks));
        pre2.resize(size_t(cfg.n_pre_blocks));
        for (auto& blk : pre1) blk.init(cfg.width, cfg.d_state, cfg.bidirectional, rng);
        for (auto& blk : pre2) blk.init(cfg.width, cfg.d_state, cfg.bidirectional, rng);
        branch1.init(cfg.width, cfg.d_state, cfg.bidirectional, rng);
        branch2.init(cfg.width, cfg.d_state, cfg.bidirectional, rng);
        cross12.init(cfg.width, cfg.d_state, cfg.bidirectional, rng);
        cross21.init(cfg.width, cfg.d_state, cfg.bidirectional, rng);
        post.resize(size_t(cfg.n_post_blocks));
        for (auto& blk : post) blk.init(cfg.width, cfg.d_state, cfg.bidirectional, rng);
    } else {
        w_cat = trunc_normal({cfg.width, 2 * cfg.width, 1, 1}, rng, 0.02f);
        w_cat.set_requires_grad(true);
        b_cat = zeros({cfg.width}, true);
    }
    if (cfg.enable_de) {
        dlc.init(cfg.width, cfg.theta_cdc, rng);
        daa.init(cfg.width, rng);
    }
    w_final = trunc_normal({cfg.width, cfg.width, 3, 3}, rng, 0.02f);
    w_final.set_requires_grad(true);
    b_final = zeros({cfg.width}, true);
}

void FusionParams::collect(const std::string& prefix, std::vector<Parameter>& out) {
    stem1.collect(prefix + ".stem1", out);
    stem2.collect(prefix + ".stem2", out);
    if (cfg.enable_mamba) {
        for (size_t i = 0; i < pre1.size(); ++i)
            pre1[i].collect(prefix + ".pre1." + std::to_string(i), out);
        for (size_t i = 0; i < pre2.size(); ++i)
            pre2[i].collect(prefix + ".pre2." + std::to_string(i), out);
        branch1.collect(prefix + ".branch1", out);
        branch2.collect(prefix + ".branch2", out);
        cross12.collect(prefix + ".cross12", out);
        cross21.collect(prefix + ".cross21", out);
        for (size_t i = 0; i < post.size(); ++i)
            post[i].collect(prefix + ".post." + std::to_string(i), out);
    } else {
        out.push_back({w_cat, prefix + ".cat.weight"});
        out.push_back({b_cat, prefix + ".cat.bias"});
    }
    if (cfg.enable_de) {
        dlc.collect(prefix + ".dlc", out);
        daa.collect(prefix + ".daa", out);
    }
    out.push_back({w_final, prefix + ".final.weight"});
    out.push_back({b_final, prefix + ".final.bias"});
}

Tensor fuse(const FusionParams& p, const Tensor& t1, const Tensor& t2) {
    check(t1.defined() && t2.defined(), "fuse: undefined input");
    check(t1.same_shape(t2), "fuse: modality size mismatch " + shape_str(t1.shape()) + " vs " +
                                 shape_str(t2.shape()));
    const int H = t1.dim(1), W = t1.dim(2);

    Tensor f1 = stem(p.stem1, t1);
    Tensor f2 = stem(p.stem2, t2);

    Tensor fused;
    Tensor d1 = f1, d2 = f2;  // per-branch features the attention compares
    if (p.cfg.enable_mamba) {
        Tensor s1 = chw_to_lc(f1);
        Tensor s2 = chw_to_lc(f2);
        for (const auto& blk : p.pre1) s1 = mamba_forward(blk, s1);
        for (const auto& blk : p.pre2) s2 = mamba_forward(blk, s2);
        auto swapped = channel_swap(s1, s2);
        s1 = mamba_forward(p.branch1, swapped.first);
        s2 = mamba_forward(p.branch2, swapped.second);
        Tensor c12 = cross_modal_mamba(p.cross12, s1, s2);
        Tensor c21 = cross_modal_mamba(p.cross21, s2, s1);
        fused = lc_to_chw(add(c12, c21), H, W);
        d1 = lc_to_chw(s1, H, W);
        d2 = lc_to_chw(s2, H, W);
    } else {
        fused = conv2d(concat(f1, f2, 0), p.w_cat, p.b_cat, 1, 0);
    }

    if (p.cfg.enable_de) {
        fused = dynamic_local_conv(p.dlc, fused);
        fused = diff_aware_attention(p.daa, d1, d2, fused);
    }

    if (p.cfg.enable_mamba && !p.post.empty()) {
        Tensor s = chw_to_lc(fused);
        for (const auto& blk : p.post) s = mamba_forward(blk, s);
        fused = lc_to_chw(s, H, W);
    }
    return conv2d(fused, p.w_final, p.b_final, 1, 1);
}

}  // namespace mm2ct
