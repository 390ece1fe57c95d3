#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "mm2ct/gradcheck.hpp"
#include "mm2ct/objectives.hpp"

using namespace mm2ct;

TEST_CASE("patchgan: 64x64 input gives an 8x8 logit map") {
    Tape::active().reset();
    NoGradGuard ng;
    RngStream rng(3);
    DiscriminatorParams d;
    d.init(4, 1, rng);
    Tensor img = randn({1, 64, 64}, rng, 0.5f);
    Tensor logits = patchgan_forward(d, img);
    REQUIRE(logits.shape() == Shape{1, 8, 8});
    CHECK_THROWS(patchgan_forward(d, randn({1, 8, 8}, rng)));
    DiscriminatorParams d2;
    d2.init(4, 2, rng);
    Tensor pair = randn({2, 64, 64}, rng, 0.5f);
    CHECK(patchgan_forward(d2, pair).shape() == Shape{1, 8, 8});
}

TEST_CASE("patchgan at zero-init on zero input scores ln 2 against label 1") {
    Tape::active().reset();
    RngStream rng(5);
    DiscriminatorParams d;
    d.init(4, 1, rng);
    Tensor img = zeros({1, 32, 32});
    Tensor logits = patchgan_forward(d, img);
    for (int64_t i = 0; i < logits.numel(); ++i) CHECK(logits.data()[i] == 0.0f);
    Tensor bce = bce_with_logits_mean(logits, 1.0f);
    CHECK(bce.item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("patchgan gradient passes finite differences") {
    Tape::active().reset();
    RngStream rng(7);
    DiscriminatorParams d;
    d.init(2, 1, rng);
    // visible weights
    for (Tensor* w : {&d.w1, &d.w2, &d.w3, &d.w_head})
        for (int64_t i = 0; i < w->numel(); ++i) w->data()[i] = 0.2f * rng.gaussian();
    Tensor img = randn({1, 16, 16}, rng, 0.5f);
    CHECK(grad_check(
              [&](const Tensor& t) {
                  Tensor logits = patchgan_forward(d, t);
                  return sum_all(mul(logits, logits));
              },
              img.clone()) <= 1e-3f);
}

TEST_CASE("loss_l1 closed forms and loop oracle") {
    Tape::active().reset();
    RngStream rng(11);
    Tensor a = randn({4, 5}, rng, 0.7f);
    CHECK(loss_l1(a, a).item() == 0.0f);

    Tensor z = zeros({3, 3});
    Tensor h = full({3, 3}, 0.5f);
    CHECK(loss_l1(z, h).item() == doctest::Approx(0.5f));

    Tensor b = randn({4, 5}, rng, 0.7f);
    double ref = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        ref += std::fabs(double(a.data()[i]) - double(b.data()[i]));
    ref /= double(a.numel());
    CHECK(std::fabs(double(loss_l1(a, b).item()) - ref) <= 1e-7);
    CHECK_THROWS(loss_l1(a, zeros({4, 4})));
}

TEST_CASE("loss_gan closed forms at zero logits") {
    Tape::active().reset();
    Tensor zf = zeros({1, 3, 3});
    Tensor zr = zeros({1, 3, 3});
    CHECK(loss_gan(zf, zr, GanSide::discriminator, "bce").item() ==
          doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-6));
    CHECK(loss_gan(zf, Tensor(), GanSide::generator, "bce").item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-6));
    CHECK_THROWS(loss_gan(zf, zr, GanSide::discriminator, "hinge"));
}

TEST_CASE("generator loss grows monotonically as fake logits fall") {
    Tape::active().reset();
    double prev = -1.0;
    for (float v : {2.0f, 0.5f, -0.5f, -2.0f, -5.0f}) {
        const double cur = double(loss_gan(full({2, 2}, v), Tensor(), GanSide::generator, "bce").item());
        CHECK(cur > prev);
        prev = cur;
    }
}

TEST_CASE("loss_gan matches the scalar formula on random logits") {
    Tape::active().reset();
    RngStream rng(13);
    Tensor fake = randn({1, 4, 4}, rng, 1.5f);
    Tensor real = randn({1, 4, 4}, rng, 1.5f);
    auto bce_ref = [](const Tensor& t, double target) {
        double acc = 0.0;
        for (int64_t i = 0; i < t.numel(); ++i) {
            const double x = t.data()[i];
            acc += std::max(x, 0.0) - x * target + std::log1p(std::exp(-std::fabs(x)));
        }
        return acc / double(t.numel());
    };
    const double dref = bce_ref(real, 1.0) + bce_ref(fake, 0.0);
    CHECK(std::fabs(double(loss_gan(fake, real, GanSide::discriminator, "bce").item()) - dref) <=
          1e-6);
    const double gref = bce_ref(fake, 1.0);
    CHECK(std::fabs(double(loss_gan(fake, Tensor(), GanSide::generator, "bce").item()) - gref) <=
          1e-6);
    // lsgan variant
    double ls = 0.0;
    for (int64_t i = 0; i < fake.numel(); ++i) {
        const double d = double(fake.data()[i]) - 1.0;
        ls += d * d;
    }
    ls /= double(fake.numel());
    CHECK(std::fabs(double(loss_gan(fake, Tensor(), GanSide::generator, "lsgan").item()) - ls) <=
          1e-6);
}

TEST_CASE("bce gradient passes finite differences") {
    Tape::active().reset();
    RngStream rng(17);
    Tensor logits = randn({3, 3}, rng, 1.2f);
    CHECK(grad_check([](const Tensor& t) { return bce_with_logits_mean(t, 1.0f); },
                     logits.clone()) <= 1e-3f);
    CHECK(grad_check([](const Tensor& t) { return bce_with_logits_mean(t, 0.0f); },
                     logits.clone()) <= 1e-3f);
}

TEST_CASE("loss_total arithmetic and zero-weight behaviour") {
    Tape::active().reset();
    LossParts parts;
    parts.l1 = full({1}, 0.2f);
    parts.gan_g = full({1}, 0.7f);
    LossWeights w;
    w.lambda_l1 = 100.0f;
    w.lambda_gan = 1.0f;
    w.lambda_cycle = 0.0f;
    CHECK(loss_total(parts, w).item() == doctest::Approx(20.7f).epsilon(1e-6));

    LossWeights wz;
    wz.lambda_l1 = 0.0f;
    wz.lambda_gan = 0.0f;
    wz.lambda_cycle = 0.0f;
    CHECK(loss_total(parts, wz).item() == 0.0f);

    parts.l1 = full({1}, std::numeric_limits<float>::quiet_NaN());
    CHECK_THROWS(loss_total(parts, w));
}

TEST_CASE("Eq-style linearity: doubling lambda_l1 exactly doubles its gradient share") {
    Tape::active().reset();
    RngStream rng(19);
    Tensor w = randn({3, 3}, rng, 0.5f);
    Tensor x = randn({5, 3}, rng, 0.5f);
    Tensor target = randn({5, 3}, rng, 0.5f);
    Tensor gate_target = randn({5, 3}, rng, 0.5f);

    auto grads_with = [&](float ll1) {
        Tensor wc = w.clone();
        wc.set_requires_grad(true);
        Tensor pred = linear(x, wc, Tensor());
        LossParts parts;
        parts.l1 = loss_l1(pred, target);
        parts.gan_g = bce_with_logits_mean(sub(pred, gate_target), 1.0f);
        LossWeights lw;
        lw.lambda_l1 = ll1;
        lw.lambda_gan = 1.0f;
        Tape::active().backward(loss_total(parts, lw));
        std::vector<float> g(wc.grad(), wc.grad() + wc.numel());
        Tape::active().reset();
        return g;
    };
    auto l1_grad_alone = [&]() {
        Tensor wc = w.clone();
        wc.set_requires_grad(true);
        Tensor pred = linear(x, wc, Tensor());
        Tape::active().backward(loss_l1(pred, target));
        std::vector<float> g(wc.grad(), wc.grad() + wc.numel());
        Tape::active().reset();
        return g;
    };
    auto g1 = grads_with(1.0f);
    auto g2 = grads_with(2.0f);
    auto gl = l1_grad_alone();
    for (size_t i = 0; i < g1.size(); ++i)
        CHECK(std::fabs((g2[i] - g1[i]) - gl[i]) <= 1e-5f);
}

TEST_CASE("Adam: zero learning rate leaves parameters bit-unchanged") {
    Tape::active().reset();
    RngStream rng(23);
    Tensor p = randn({4, 4}, rng, 0.5f, 0.0f);
    p.set_requires_grad(true);
    std::vector<float> before(p.data(), p.data() + p.numel());
    Adam opt({{p, "p"}}, 0.0f);
    Tensor loss = sum_all(mul(p, p));
    Tape::active().backward(loss);
    opt.step();
    CHECK(std::memcmp(before.data(), p.data(), before.size() * sizeof(float)) == 0);
    Tape::active().reset();
}

TEST_CASE("Adam minimizes a quadratic") {
    Tape::active().reset();
    Tensor p = full({3}, 2.0f, true);
    Adam opt({{p, "p"}}, 0.05f);
    float first = 0.0f;
    for (int it = 0; it < 150; ++it) {
        opt.zero_grad();
        Tensor loss = sum_all(mul(p, p));
        if (it == 0) first = loss.item();
        Tape::active().backward(loss);
        opt.step();
        Tape::active().reset();
    }
    Tensor final_loss = sum_all(mul(p, p));
    CHECK(final_loss.item() < 0.05f * first);
    Tape::active().reset();
}
