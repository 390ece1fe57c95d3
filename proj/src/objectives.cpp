#include "mm2ct/objectives.hpp"

#include <cmath>

#include "mm2ct/fast_math.hpp"

namespace mm2ct {

void DiscriminatorParams::init(int c, int in_channels, RngStream& rng) {
    width = c;
    in_ch = in_channels;
    auto conv_w = [&](int o, int i, int k) {
        Tensor w = trunc_normal({o, i, k, k}, rng, 0.02f);
        w.set_requires_grad(true);
        return w;
    };
    w1 = conv_w(c, in_channels, 4);
    b1 = zeros({c}, true);
    w2 = conv_w(2 * c, c, 4);
    b2 = zeros({2 * c}, true);
    w3 = conv_w(4 * c, 2 * c, 4);
    b3 = zeros({4 * c}, true);
    w_head = conv_w(1, 4 * c, 3);
    b_head = zeros({1}, true);
}

void DiscriminatorParams::collect(const std::string& prefix, std::vector<Parameter>& out) {
    out.push_back({w1, prefix + ".conv1.weight"});
    out.push_back({b1, prefix + ".conv1.bias"});
    out.push_back({w2, prefix + ".conv2.weight"});
    out.push_back({b2, prefix + ".conv2.bias"});
    out.push_back({w3, prefix + ".conv3.weight"});
    out.push_back({b3, prefix + ".conv3.bias"});
    out.push_back({w_head, prefix + ".head.weight"});
    out.push_back({b_head, prefix + ".head.bias"});
}

Tensor patchgan_forward(const DiscriminatorParams& p, const Tensor& img) {
    check(img.defined() && img.rank() == 3 && img.dim(0) == p.in_ch,
          "patchgan: expects [" + std::to_string(p.in_ch) + ",H,W]");
    check(img.dim(1) >= 16 && img.dim(2) >= 16, "patchgan: input smaller than 16x16");
    Tensor h = leaky_relu(conv2d(img, p.w1, p.b1, 2, 1), 0.2f);
    h = leaky_relu(conv2d(h, p.w2, p.b2, 2, 1), 0.2f);
    h = leaky_relu(conv2d(h, p.w3, p.b3, 2, 1), 0.2f);
    return conv2d(h, p.w_head, p.b_head, 1, 1);
}

Tensor bce_with_logits_mean(const Tensor& logits, float target) {
    check(logits.defined(), "bce: undefined logits");
    const int64_t n = logits.numel();
    const float* px = logits.data();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double x = px[i];
        acc += std::max(x, 0.0) - x * double(target) + std::log1p(std::exp(-std::fabs(x)));
    }
    Tensor out({1}, float(acc / double(n)));
    if (track_grad({&logits})) {
        out.set_requires_grad(true);
        Tensor tl = logits, to = out;
        Tape::active().record({out}, [tl, to, target]() mutable {
            const float* g = to.grad();
            if (!g) return;
            const float* px2 = tl.data();
            float* gl = tl.grad_acc();
            const int64_t n2 = tl.numel();
            const float s = g[0] / float(n2);
            for (int64_t i = 0; i < n2; ++i) {
                const float sig = 1.0f / (1.0f + fast_expf(-px2[i]));
                gl[i] += s * (sig - target);
            }
        });
    }
    return out;
}

namespace {

Tensor lsgan_mean_sq(const Tensor& logits, float target) {
    Tensor d = add_scalar(logits, -target);
    return mean_all(mul(d, d));
}

}  // namespace

Tensor loss_gan(const Tensor& logits_fake, const Tensor& logits_real, GanSide side,
                const std::string& mode) {
    check(mode == "bce" || mode == "lsgan", "loss_gan: unknown mode '" + mode + "'");
    if (side == GanSide::generator) {
        check(logits_fake.defined(), "loss_gan: generator side needs fake logits");
        return mode == "bce" ? bce_with_logits_mean(logits_fake, 1.0f)
                             : lsgan_mean_sq(logits_fake, 1.0f);
    }
    check(logits_fake.defined() && logits_real.defined(),
          "loss_gan: discriminator side needs both logit maps");
    if (mode == "bce")
        return add(bce_with_logits_mean(logits_real, 1.0f), bce_with_logits_mean(logits_fake, 0.0f));
    return add(lsgan_mean_sq(logits_real, 1.0f), lsgan_mean_sq(logits_fake, 0.0f));
}

Tensor loss_l1(const Tensor& a, const Tensor& b) {
    check(a.defined() && b.defined() && a.same_shape(b), "loss_l1: shape mismatch");
    return mean_all(abs_t(sub(a, b)));
}

Tensor loss_cycle(const Tensor& t1, const Tensor& t2, const Tensor& t1_rec, const Tensor& t2_rec) {
    return scale(add(loss_l1(t1_rec, t1), loss_l1(t2_rec, t2)), 0.5f);
}

Tensor loss_total(const LossParts& parts, const LossWeights& w) {
    check(w.lambda_l1 >= 0.0f && w.lambda_gan >= 0.0f && w.lambda_cycle >= 0.0f,
          "loss_total: weights must be non-negative");
    Tensor total = zeros({1});
    auto accumulate = [&](const Tensor& part, float weight, const char* name) {
        if (!part.defined()) return;
        check(std::isfinite(part.item()), std::string("loss_total: non-finite ") + name + " part");
        total = add(total, scale(part, weight));
    };
    accumulate(parts.l1, w.lambda_l1, "l1");
    accumulate(parts.gan_g, w.lambda_gan, "gan");
    accumulate(parts.cycle, w.lambda_cycle, "cycle");
    return total;
}

Adam::Adam(std::vector<Parameter> params, float lr, float beta1, float beta2, float eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(size_t(params_[i].tensor.numel()), 0.0f);
        v_[i].assign(size_t(params_[i].tensor.numel()), 0.0f);
    }
}

void Adam::step() {
    ++t_;
    const float bc1 = 1.0f - float(std::pow(double(beta1_), double(t_)));
    const float bc2 = 1.0f - float(std::pow(double(beta2_), double(t_)));
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i].tensor;
        const float* g = p.grad();  // missing grad acts as zero
        float* pd = p.data();
        float* m = m_[i].data();
        float* v = v_[i].data();
        const int64_t n = p.numel();
        for (int64_t j = 0; j < n; ++j) {
            const float gj = g ? g[j] : 0.0f;
            m[j] = beta1_ * m[j] + (1.0f - beta1_) * gj;
            v[j] = beta2_ * v[j] + (1.0f - beta2_) * gj * gj;
            const float mhat = m[j] / bc1;
            const float vhat = v[j] / bc2;
            pd[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.tensor.clear_grad();
}

}  // namespace mm2ct
