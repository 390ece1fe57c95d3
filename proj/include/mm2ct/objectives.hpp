#pragma once

#include <string>

#include "mm2ct/ops.hpp"

namespace mm2ct {

struct LossWeights {
    float lambda_l1 = 100.0f;
    float lambda_gan = 1.0f;
    float lambda_cycle = 100.0f;
    std::string gan_mode = "bce";  // "bce" (non-saturating) or "lsgan"
};

// Three stride-2 k=4 convs (widths c, 2c, 4c) with LeakyReLU(0.2), then a
// 3x3 single-channel head: a grid of per-patch real/fake logits.
struct DiscriminatorParams {
    int width = 8;
    int in_ch = 1;
    Tensor w1, b1, w2, b2, w3, b3, w_head, b_head;
    void init(int c, int in_channels, RngStream& rng);
    void collect(const std::string& prefix, std::vector<Parameter>& out);
};
Tensor patchgan_forward(const DiscriminatorParams& p, const Tensor& img);

// mean of max(x,0) - x*t + log(1 + exp(-|x|)) over the logit map
Tensor bce_with_logits_mean(const Tensor& logits, float target);

enum class GanSide { generator, discriminator };
// generator: push fake logits toward real; discriminator: real to 1, fake to
// 0 (bce) or the least-squares equivalents (lsgan).
Tensor loss_gan(const Tensor& logits_fake, const Tensor& logits_real, GanSide side,
                const std::string& mode);

Tensor loss_l1(const Tensor& a, const Tensor& b);
// mean of the two per-modality reconstruction errors of an MR -> CT -> MR
// round trip
Tensor loss_cycle(const Tensor& t1, const Tensor& t2, const Tensor& t1_rec, const Tensor& t2_rec);

struct LossParts {
    Tensor l1;
    Tensor gan_g;
    Tensor cycle;
};
// lambda_l1 * l1 + lambda_gan * gan + lambda_cycle * cycle (generator side;
// the discriminator term is optimized by its own step). Rejects non-finite
// parts.
Tensor loss_total(const LossParts& parts, const LossWeights& w);

class Adam {
  public:
    Adam(std::vector<Parameter> params, float lr, float beta1 = 0.5f, float beta2 = 0.999f,
         float eps = 1e-8f);
    void step();
    void zero_grad();
    float lr() const { return lr_; }
    void set_lr(float lr) { lr_ = lr; }
    const std::vector<Parameter>& params() const { return params_; }

  private:
    std::vector<Parameter> params_;
    std::vector<std::vector<float>> m_, v_;
    float lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

}  // namespace mm2ct
