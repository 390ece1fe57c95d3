#include "mm2ct/translate.hpp"

#include <cmath>

namespace mm2ct {

DiffusionSchedule DiffusionSchedule::linear(int T, double beta_min, double beta_max) {
    check(T >= 1, "schedule: T must be >= 1");
    check(beta_min > 0.0 && beta_max < 1.0 && beta_min <= beta_max,
          "schedule: betas must satisfy 0 < beta_min <= beta_max < 1");
    DiffusionSchedule s;
    s.T = T;
    s.betas.resize(size_t(T));
    s.alphas.resize(size_t(T));
    s.alpha_bars.assign(size_t(T) + 1, 1.0);
    for (int t = 1; t <= T; ++t) {
        const double frac = T == 1 ? 0.0 : double(t - 1) / double(T - 1);
        const double beta = beta_min + frac * (beta_max - beta_min);
        s.betas[size_t(t - 1)] = beta;
        s.alphas[size_t(t - 1)] = 1.0 - beta;
        s.alpha_bars[size_t(t)] = s.alpha_bars[size_t(t - 1)] * (1.0 - beta);
    }
    for (int t = 1; t < T; ++t)
        check(s.betas[size_t(t)] > s.betas[size_t(t - 1)] || T == 1,
              "schedule: betas must increase");
    return s;
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& noise, const DiffusionSchedule& sched) {
    check(t >= 0 && t <= sched.T, "q_sample: t out of range");
    if (t == 0) return detach(x0);
    check(noise.defined() && noise.same_shape(x0), "q_sample: noise must match x0");
    const float c0 = float(std::sqrt(sched.alpha_bars[size_t(t)]));
    const float c1 = float(std::sqrt(1.0 - sched.alpha_bars[size_t(t)]));
    return add(scale(x0, c0), scale(noise, c1));
}

Tensor p_step_from_x0(const Tensor& x_t, int t, const Tensor& x0_hat,
                      const DiffusionSchedule& sched, const Tensor& noise) {
    check(t >= 1 && t <= sched.T, "p_step: t must be in [1, T]");
    const double ab_t = sched.alpha_bars[size_t(t)];
    const double ab_prev = sched.alpha_bars[size_t(t - 1)];
    const double beta = sched.betas[size_t(t - 1)];
    const double alpha = sched.alphas[size_t(t - 1)];
    const float c0 = float(std::sqrt(ab_prev) * beta / (1.0 - ab_t));
    const float c1 = float(std::sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab_t));
    Tensor mean = add(scale(x0_hat, c0), scale(x_t, c1));
    if (t == 1) return mean;  // sigma_1 = 0: deterministic terminal step
    const double var = (1.0 - ab_prev) / (1.0 - ab_t) * beta;
    check(noise.defined() && noise.same_shape(x_t), "p_step: noise must match x_t");
    return add(mean, scale(noise, float(std::sqrt(var))));
}

void GeneratorParams::init(int g, int resblocks, int out_channels, RngStream& rng) {
    width = g;
    out_ch = out_channels;
    auto conv_w = [&](int o, int c, int k) {
        Tensor w = trunc_normal({o, c, k, k}, rng, 0.02f);
        w.set_requires_grad(true);
        return w;
    };
    w_in = conv_w(g, 1, 3);
    b_in = zeros({g}, true);
    w_d1 = conv_w(2 * g, g, 3);
    b_d1 = zeros({2 * g}, true);
    w_d2 = conv_w(4 * g, 2 * g, 3);
    b_d2 = zeros({4 * g}, true);
    res.resize(size_t(resblocks));
    for (auto& r : res) {
        r.w1 = conv_w(4 * g, 4 * g, 3);
        r.b1 = zeros({4 * g}, true);
        r.w2 = conv_w(4 * g, 4 * g, 3);
        r.b2 = zeros({4 * g}, true);
    }
    w_u1 = conv_w(2 * g, 4 * g, 3);
    b_u1 = zeros({2 * g}, true);
    w_u2 = conv_w(g, 2 * g, 3);
    b_u2 = zeros({g}, true);
    w_out = conv_w(out_ch, g, 3);
    b_out = zeros({out_ch}, true);
}

void GeneratorParams::collect(const std::string& prefix, std::vector<Parameter>& out) {
    auto push = [&](Tensor& t, const std::string& n) { out.push_back({t, prefix + "." + n}); };
    push(w_in, "in.weight");
    push(b_in, "in.bias");
    push(w_d1, "down1.weight");
    push(b_d1, "down1.bias");
    push(w_d2, "down2.weight");
    push(b_d2, "down2.bias");
    for (size_t i = 0; i < res.size(); ++i) {
        push(res[i].w1, "res." + std::to_string(i) + ".conv1.weight");
        push(res[i].b1, "res." + std::to_string(i) + ".conv1.bias");
        push(res[i].w2, "res." + std::to_string(i) + ".conv2.weight");
        push(res[i].b2, "res." + std::to_string(i) + ".conv2.bias");
    }
    push(w_u1, "up1.weight");
    push(b_u1, "up1.bias");
    push(w_u2, "up2.weight");
    push(b_u2, "up2.bias");
    push(w_out, "out.weight");
    push(b_out, "out.bias");
}

Tensor generator_forward(const GeneratorParams& p, const Tensor& src) {
    check(src.defined() && src.rank() == 3 && src.dim(0) == 1, "generator: expects [1,H,W]");
    check(src.dim(1) % 4 == 0 && src.dim(2) % 4 == 0,
          "generator: H and W must be divisible by 4, got " + shape_str(src.shape()));
    Tensor h = silu(conv2d(src, p.w_in, p.b_in, 1, 1));
    h = silu(conv2d(h, p.w_d1, p.b_d1, 2, 1));
    h = silu(conv2d(h, p.w_d2, p.b_d2, 2, 1));
    for (const auto& r : p.res)
        h = add(h, conv2d(silu(conv2d(h, r.w1, r.b1, 1, 1)), r.w2, r.b2, 1, 1));
    h = silu(conv2d(upsample_nearest2x(h), p.w_u1, p.b_u1, 1, 1));
    h = silu(conv2d(upsample_nearest2x(h), p.w_u2, p.b_u2, 1, 1));
    return tanh_t(conv2d(h, p.w_out, p.b_out, 1, 1));
}

void DenoiserParams::init(int w, int cond_channels, int temb_channels, RngStream& rng) {
    width = w;
    cond_ch = cond_channels;
    temb_ch = temb_channels;
    auto conv_w = [&](int o, int c) {
        Tensor t = trunc_normal({o, c, 3, 3}, rng, 0.02f);
        t.set_requires_grad(true);
        return t;
    };
    w_in = conv_w(w, 1 + cond_ch + temb_ch);
    b_in = zeros({w}, true);
    w_d1 = conv_w(2 * w, w);
    b_d1 = zeros({2 * w}, true);
    w_d2 = conv_w(2 * w, 2 * w);
    b_d2 = zeros({2 * w}, true);
    w_m = conv_w(2 * w, 2 * w);
    b_m = zeros({2 * w}, true);
    w_u1 = conv_w(2 * w, 2 * w);
    b_u1 = zeros({2 * w}, true);
    w_u1b = conv_w(w, 2 * w);
    b_u1b = zeros({w}, true);
    w_u0 = conv_w(w, w);
    b_u0 = zeros({w}, true);
    w_out = conv_w(1, w);
    b_out = zeros({1}, true);
}

void DenoiserParams::collect(const std::string& prefix, std::vector<Parameter>& out) {
    auto push = [&](Tensor& t, const std::string& n) { out.push_back({t, prefix + "." + n}); };
    push(w_in, "in.weight");
    push(b_in, "in.bias");
    push(w_d1, "down1.weight");
    push(b_d1, "down1.bias");
    push(w_d2, "down2.weight");
    push(b_d2, "down2.bias");
    push(w_m, "mid.weight");
    push(b_m, "mid.bias");
    push(w_u1, "up1.weight");
    push(b_u1, "up1.bias");
    push(w_u1b, "up1b.weight");
    push(b_u1b, "up1b.bias");
    push(w_u0, "up0.weight");
    push(b_u0, "up0.bias");
    push(w_out, "out.weight");
    push(b_out, "out.bias");
}

Tensor timestep_embedding(int t, int channels, int H, int W) {
    Tensor emb({channels, H, W}, 0.0f);
    float* p = emb.data();
    const int64_t plane = int64_t(H) * W;
    const int half = std::max(1, channels / 2);
    for (int i = 0; i < channels; ++i) {
        const double freq = std::pow(100.0, -double(i / 2) / double(half));
        const double v = (i % 2 == 0) ? std::sin(double(t) * freq) : std::cos(double(t) * freq);
        for (int64_t j = 0; j < plane; ++j) p[int64_t(i) * plane + j] = float(v);
    }
    return emb;
}

Tensor denoiser_forward(const DenoiserParams& p, const Tensor& x_t, int t, const Tensor& cond) {
    check(x_t.defined() && x_t.rank() == 3 && x_t.dim(0) == 1, "denoiser: x_t must be [1,H,W]");
    check(cond.defined() && cond.rank() == 3 && cond.dim(0) == p.cond_ch,
          "denoiser: condition width mismatch");
    check(cond.dim(1) == x_t.dim(1) && cond.dim(2) == x_t.dim(2),
          "denoiser: condition spatial size mismatch");
    const int H = x_t.dim(1), W = x_t.dim(2);
    check(H % 4 == 0 && W % 4 == 0, "denoiser: H and W must be divisible by 4");

    Tensor in = concat(concat(x_t, cond, 0), timestep_embedding(t, p.temb_ch, H, W), 0);
    Tensor e0 = silu(conv2d(in, p.w_in, p.b_in, 1, 1));
    Tensor e1 = silu(conv2d(e0, p.w_d1, p.b_d1, 2, 1));
    Tensor m = silu(conv2d(e1, p.w_d2, p.b_d2, 2, 1));
    m = silu(conv2d(m, p.w_m, p.b_m, 1, 1));
    Tensor u1 = silu(conv2d(upsample_nearest2x(m), p.w_u1, p.b_u1, 1, 1));
    u1 = silu(conv2d(add(u1, e1), p.w_u1b, p.b_u1b, 1, 1));
    Tensor u0 = silu(conv2d(upsample_nearest2x(u1), p.w_u0, p.b_u0, 1, 1));
    return tanh_t(conv2d(add(u0, e0), p.w_out, p.b_out, 1, 1));
}

Tensor p_step(const Tensor& x_t, int t, const Tensor& cond, const DenoiserParams& p,
              const DiffusionSchedule& sched, const Tensor& noise) {
    Tensor x0_hat = denoiser_forward(p, x_t, t, cond);
    return p_step_from_x0(x_t, t, x0_hat, sched, noise);
}

Tensor translate_sample(const FusionParams& fusion, const DenoiserParams& den,
                        const DiffusionSchedule& sched, const Tensor& t1, const Tensor& t2,
                        uint64_t seed) {
    NoGradGuard ng;
    Tensor cond = fuse(fusion, t1, t2);
    RngStream init_rng = derive_stream(seed, "translate/x_T");
    Tensor x = randn(t1.shape(), init_rng);
    for (int t = sched.T; t >= 1; --t) {
        Tensor noise;
        if (t > 1) {
            RngStream step_rng = derive_stream(seed, "translate/step", uint64_t(t));
            noise = randn(t1.shape(), step_rng);
        }
        x = p_step(x, t, cond, den, sched, noise);
    }
    return x;
}

}  // namespace mm2ct
