#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "mm2ct/fusion.hpp"
#include "mm2ct/gradcheck.hpp"

using namespace mm2ct;

namespace {

FusionConfig small_cfg(bool mamba = true, bool de = true) {
    FusionConfig cfg;
    cfg.width = 4;
    cfg.d_state = 4;
    cfg.theta_cdc = 0.7f;
    cfg.enable_mamba = mamba;
    cfg.enable_de = de;
    return cfg;
}

// replicate-padded read
float rp(const Tensor& x, int c, int y, int xx) {
    const int H = x.dim(1), W = x.dim(2);
    y = std::min(std::max(y, 0), H - 1);
    xx = std::min(std::max(xx, 0), W - 1);
    return x.data()[(c * H + y) * W + xx];
}

}  // namespace

TEST_CASE("stem: zero image with zero biases gives zero features, shape lifts 1->C") {
    Tape::active().reset();
    RngStream rng(41);
    StemParams s;
    s.init(6, rng);
    Tensor img = zeros({1, 16, 16});
    Tensor f = stem(s, img);
    REQUIRE(f.shape() == Shape{6, 16, 16});
    for (int64_t i = 0; i < f.numel(); ++i) CHECK(f.data()[i] == 0.0f);
}

TEST_CASE("stem matches composed conv oracle") {
    Tape::active().reset();
    RngStream rng(43);
    StemParams s;
    s.init(3, rng);
    // visible weights rather than the 0.02-scale init
    for (int64_t i = 0; i < s.w1.numel(); ++i) s.w1.data()[i] = 0.3f * rng.gaussian();
    for (int64_t i = 0; i < s.w2.numel(); ++i) s.w2.data()[i] = 0.3f * rng.gaussian();
    Tensor img = randn({1, 7, 7}, rng, 0.8f);
    Tensor f = stem(s, img);

    // independent double-precision composition
    auto conv_loop = [](const std::vector<double>& x, int C, int H, int W,
                        const Tensor& w, const Tensor& b) {
        const int O = w.dim(0), K = w.dim(2);
        std::vector<double> out(size_t(O) * H * W, 0.0);
        for (int o = 0; o < O; ++o)
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) {
                    double acc = b.data()[o];
                    for (int c = 0; c < C; ++c)
                        for (int ky = 0; ky < K; ++ky)
                            for (int kx = 0; kx < K; ++kx) {
                                const int iy = y - 1 + ky, ix = xx - 1 + kx;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += double(w.data()[((o * C + c) * K + ky) * K + kx]) *
                                       x[(size_t(c) * H + iy) * W + ix];
                            }
                    out[(size_t(o) * H + y) * W + xx] = acc;
                }
        return out;
    };
    std::vector<double> xin(img.data(), img.data() + img.numel());
    auto h1 = conv_loop(xin, 1, 7, 7, s.w1, s.b1);
    for (auto& v : h1) v = v / (1.0 + std::exp(-v));
    auto ref = conv_loop(h1, 3, 7, 7, s.w2, s.b2);
    for (int64_t i = 0; i < f.numel(); ++i)
        CHECK(std::fabs(double(f.data()[i]) - ref[size_t(i)]) <= 1e-5);
}

TEST_CASE("channel_swap pins the odd-index convention") {
    Tape::active().reset();
    Tensor a = zeros({4, 2, 2});
    Tensor b = zeros({4, 2, 2});
    for (int c = 0; c < 4; ++c)
        for (int i = 0; i < 4; ++i) {
            a.data()[c * 4 + i] = float(10 + c);
            b.data()[c * 4 + i] = float(20 + c);
        }
    auto [ao, bo] = channel_swap(a, b);
    // a' = [a0, b1, a2, b3]
    CHECK(ao.data()[0 * 4] == 10.0f);
    CHECK(ao.data()[1 * 4] == 21.0f);
    CHECK(ao.data()[2 * 4] == 12.0f);
    CHECK(ao.data()[3 * 4] == 23.0f);
    CHECK(bo.data()[0 * 4] == 20.0f);
    CHECK(bo.data()[1 * 4] == 11.0f);
    CHECK(bo.data()[2 * 4] == 22.0f);
    CHECK(bo.data()[3 * 4] == 13.0f);
}

TEST_CASE("channel_swap is an involution and preserves channel multiset") {
    Tape::active().reset();
    RngStream rng(47);
    for (int trial = 0; trial < 4; ++trial) {
        Tensor a = randn({6, 3, 5}, rng);
        Tensor b = randn({6, 3, 5}, rng);
        auto [a1, b1] = channel_swap(a, b);
        auto [a2, b2] = channel_swap(a1, b1);
        CHECK(std::memcmp(a.data(), a2.data(), size_t(a.numel()) * sizeof(float)) == 0);
        CHECK(std::memcmp(b.data(), b2.data(), size_t(b.numel()) * sizeof(float)) == 0);
        // multiset of channel slices is preserved across the pair
        double sum_before = 0.0, sum_after = 0.0;
        for (int64_t i = 0; i < a.numel(); ++i)
            sum_before += double(a.data()[i]) + double(b.data()[i]);
        for (int64_t i = 0; i < a.numel(); ++i)
            sum_after += double(a1.data()[i]) + double(b1.data()[i]);
        CHECK(sum_before == doctest::Approx(sum_after).epsilon(1e-12));
    }
    // a == b: swap changes nothing
    Tensor x = randn({4, 2, 2}, rng);
    auto [xa, xb] = channel_swap(x, x);
    CHECK(std::memcmp(x.data(), xa.data(), size_t(x.numel()) * sizeof(float)) == 0);
    CHECK(std::memcmp(x.data(), xb.data(), size_t(x.numel()) * sizeof(float)) == 0);
    // sequence-layout variant agrees with the image-layout one
    Tensor sa = randn({5, 4}, rng);
    Tensor sb = randn({5, 4}, rng);
    auto [la, lb] = channel_swap(sa, sb);
    for (int l = 0; l < 5; ++l)
        for (int c = 0; c < 4; ++c) {
            const float ea = (c & 1) ? sb.data()[l * 4 + c] : sa.data()[l * 4 + c];
            CHECK(la.data()[l * 4 + c] == ea);
        }
    CHECK(lb.data()[1] == sa.data()[1]);
    CHECK_THROWS(channel_swap(randn({3, 2, 2}, rng), randn({3, 2, 2}, rng)));  // odd C
    CHECK_THROWS(channel_swap(randn({6, 3, 5}, rng), randn({6, 3, 4}, rng)));
}

TEST_CASE("dynamic_local_conv: theta 0 degenerates to the plain conv") {
    Tape::active().reset();
    RngStream rng(53);
    DynLocalConvParams p;
    p.init(3, 0.0f, rng);
    Tensor x = randn({3, 6, 6}, rng, 0.5f);
    Tensor y = dynamic_local_conv(p, x);
    Tensor ref = conv2d(replicate_pad1(x), p.w, p.b, 1, 0);
    CHECK(std::memcmp(y.data(), ref.data(), size_t(y.numel()) * sizeof(float)) == 0);
}

TEST_CASE("dynamic_local_conv: constant input kills the central-difference term") {
    Tape::active().reset();
    RngStream rng(59);
    DynLocalConvParams p;
    p.init(2, 0.6f, rng);
    for (int64_t i = 0; i < p.w.numel(); ++i) p.w.data()[i] = 0.4f * rng.gaussian();
    p.b.data()[0] = 0.3f;
    p.b.data()[1] = -0.2f;
    Tensor x = full({2, 5, 5}, 1.7f);
    Tensor y = dynamic_local_conv(p, x);
    // out = (1-theta) * (c * sum(w) + b) + theta * b
    for (int o = 0; o < 2; ++o) {
        double sw = 0.0;
        for (int c = 0; c < 2; ++c)
            for (int k = 0; k < 9; ++k) sw += p.w.data()[(o * 2 + c) * 9 + k];
        const double expect = (1.0 - 0.6) * 1.7 * sw + p.b.data()[o];
        for (int i = 0; i < 25; ++i)
            CHECK(std::fabs(double(y.data()[o * 25 + i]) - expect) <= 1e-5);
    }
}

TEST_CASE("dynamic_local_conv matches the patch-loop oracle at theta 0.7") {
    Tape::active().reset();
    RngStream rng(61);
    DynLocalConvParams p;
    p.init(2, 0.7f, rng);
    for (int64_t i = 0; i < p.w.numel(); ++i) p.w.data()[i] = 0.4f * rng.gaussian();
    for (int64_t i = 0; i < p.b.numel(); ++i) p.b.data()[i] = 0.2f * rng.gaussian();
    Tensor x = randn({2, 6, 6}, rng, 0.8f);
    Tensor y = dynamic_local_conv(p, x);
    for (int o = 0; o < 2; ++o)
        for (int yy = 0; yy < 6; ++yy)
            for (int xx = 0; xx < 6; ++xx) {
                double vanilla = p.b.data()[o], cd = p.b.data()[o];
                for (int c = 0; c < 2; ++c)
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            const double wv = p.w.data()[(o * 2 + c) * 9 + ky * 3 + kx];
                            const double xv = rp(x, c, yy - 1 + ky, xx - 1 + kx);
                            const double xc = x.data()[(c * 6 + yy) * 6 + xx];
                            vanilla += wv * xv;
                            cd += wv * (xv - xc);
                        }
                const double expect = 0.3 * vanilla + 0.7 * cd;
                CHECK(std::fabs(double(y.data()[(o * 6 + yy) * 6 + xx]) - expect) <= 1e-5);
            }
}

TEST_CASE("diff_aware_attention: identical inputs pass fused through untouched") {
    Tape::active().reset();
    RngStream rng(67);
    DiffAttnParams p;
    p.init(3, rng);
    Tensor f = randn({3, 4, 4}, rng, 0.5f);
    Tensor fused = randn({3, 4, 4}, rng, 0.5f);
    Tensor out = diff_aware_attention(p, f, f, fused);
    CHECK(std::memcmp(out.data(), fused.data(), size_t(out.numel()) * sizeof(float)) == 0);
}

TEST_CASE("diff_aware_attention: attention map lies strictly inside (0,1)") {
    Tape::active().reset();
    RngStream rng(71);
    DiffAttnParams p;
    p.init(2, rng);
    for (int64_t i = 0; i < p.w_attn.numel(); ++i) p.w_attn.data()[i] = 0.6f * rng.gaussian();
    Tensor f1 = randn({2, 5, 5}, rng, 0.9f);
    Tensor f2 = randn({2, 5, 5}, rng, 0.9f);
    Tensor d = abs_t(sub(f1, f2));
    Tensor attn = sigmoid(conv2d(d, p.w_attn, p.b_attn, 1, 0));
    for (int64_t i = 0; i < attn.numel(); ++i) {
        CHECK(attn.data()[i] > 0.0f);
        CHECK(attn.data()[i] < 1.0f);
    }
}

TEST_CASE("diff_aware_attention matches step-by-step recomputation") {
    Tape::active().reset();
    RngStream rng(73);
    DiffAttnParams p;
    p.init(2, rng);
    for (int64_t i = 0; i < p.w_attn.numel(); ++i) p.w_attn.data()[i] = 0.7f * rng.gaussian();
    for (int64_t i = 0; i < p.w_val.numel(); ++i) p.w_val.data()[i] = 0.7f * rng.gaussian();
    Tensor f1 = randn({2, 4, 4}, rng, 0.8f);
    Tensor f2 = randn({2, 4, 4}, rng, 0.8f);
    Tensor fused = randn({2, 4, 4}, rng, 0.8f);
    Tensor out = diff_aware_attention(p, f1, f2, fused);
    for (int o = 0; o < 2; ++o)
        for (int i = 0; i < 16; ++i) {
            double logit = p.b_attn.data()[o], val = p.b_val.data()[o];
            for (int c = 0; c < 2; ++c) {
                const double dv =
                    std::fabs(double(f1.data()[c * 16 + i]) - double(f2.data()[c * 16 + i]));
                logit += double(p.w_attn.data()[o * 2 + c]) * dv;
                val += double(p.w_val.data()[o * 2 + c]) * dv;
            }
            const double expect =
                double(fused.data()[o * 16 + i]) + val / (1.0 + std::exp(-logit));
            CHECK(std::fabs(double(out.data()[o * 16 + i]) - expect) <= 1e-5);
        }
}

TEST_CASE("fuse: shape contract across sizes and flag settings") {
    Tape::active().reset();
    NoGradGuard ng;
    RngStream rng(79);
    for (bool mamba : {true, false})
        for (bool de : {true, false}) {
            FusionParams p;
            RngStream r2(101);
            p.init(small_cfg(mamba, de), r2);
            Tensor t1 = randn({1, 8, 12}, rng, 0.4f);
            Tensor t2 = randn({1, 8, 12}, rng, 0.4f);
            Tensor out = fuse(p, t1, t2);
            CHECK(out.shape() == Shape{4, 8, 12});
        }
    FusionParams p;
    RngStream r3(101);
    p.init(small_cfg(), r3);
    CHECK_THROWS(fuse(p, zeros({1, 8, 8}), zeros({1, 8, 10})));
}

TEST_CASE("fuse: gradient reaches both modalities") {
    Tape::active().reset();
    FusionParams p;
    RngStream rng(83);
    p.init(small_cfg(), rng);
    RngStream rx(5);
    Tensor t1 = randn({1, 6, 6}, rng, 0.4f);
    Tensor t2 = randn({1, 6, 6}, rng, 0.4f);
    CHECK(grad_check([&](const Tensor& t) { return mean_all(mul(fuse(p, t, t2), fuse(p, t, t2))); },
                     t1.clone()) <= 1e-3f);
    CHECK(grad_check([&](const Tensor& t) { return mean_all(mul(fuse(p, t1, t), fuse(p, t1, t))); },
                     t2.clone()) <= 1e-3f);
    Tensor a = t1.clone(), b = t2.clone();
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    Tape::active().backward(mean_all(mul(fuse(p, a, b), fuse(p, a, b))));
    float ga = 0.0f, gb = 0.0f;
    for (int64_t i = 0; i < a.numel(); ++i) ga += std::fabs(a.grad()[i]);
    for (int64_t i = 0; i < b.numel(); ++i) gb += std::fabs(b.grad()[i]);
    CHECK(ga > 0.0f);
    CHECK(gb > 0.0f);
    Tape::active().reset();
}

TEST_CASE("fuse: DE-stage gradients pass finite differences") {
    Tape::active().reset();
    RngStream rng(89);
    DynLocalConvParams dlc;
    dlc.init(2, 0.7f, rng);
    Tensor x = randn({2, 4, 4}, rng, 0.5f);
    CHECK(grad_check([&](const Tensor& t) { return sum_all(dynamic_local_conv(dlc, t)); },
                     x.clone()) <= 1e-3f);
    CHECK(grad_check(
              [&](const Tensor& t) {
                  DynLocalConvParams q = dlc;
                  q.w = reshape(t, {2, 2, 3, 3});
                  return sum_all(dynamic_local_conv(q, x));
              },
              Tensor::from_vec({36}, dlc.w.vec())) <= 1e-3f);

    DiffAttnParams daa;
    daa.init(2, rng);
    Tensor f2 = randn({2, 4, 4}, rng, 0.5f);
    Tensor fused = randn({2, 4, 4}, rng, 0.5f);
    CHECK(grad_check(
              [&](const Tensor& t) {
                  Tensor o = diff_aware_attention(daa, t, f2, fused);
                  return sum_all(mul(o, o));
              },
              x.clone()) <= 1e-3f);
}

TEST_CASE("fuse: the plain-fusion configuration has fewer parameters and DE params go dead") {
    Tape::active().reset();
    RngStream r1(7), r2(7), r3(7);
    FusionParams full, plain, no_de;
    full.init(small_cfg(true, true), r1);
    plain.init(small_cfg(false, false), r2);
    no_de.init(small_cfg(true, false), r3);
    std::vector<Parameter> pf, pp, pn;
    full.collect("fusion", pf);
    plain.collect("fusion", pp);
    no_de.collect("fusion", pn);
    int64_t nf = 0, np = 0, nn = 0;
    for (auto& q : pf) nf += q.tensor.numel();
    for (auto& q : pp) np += q.tensor.numel();
    for (auto& q : pn) nn += q.tensor.numel();
    CHECK(np < nn);
    CHECK(nn < nf);

    // flag off => DE parameters are unused: fuse result is independent of them
    NoGradGuard ng;
    RngStream rng(97);
    Tensor t1 = randn({1, 6, 6}, rng, 0.4f);
    Tensor t2 = randn({1, 6, 6}, rng, 0.4f);
    FusionParams off = full;
    off.cfg.enable_de = false;
    Tensor y1 = fuse(off, t1, t2);
    for (int64_t i = 0; i < off.dlc.w.numel(); ++i) off.dlc.w.data()[i] += 3.0f;
    for (int64_t i = 0; i < off.daa.w_val.numel(); ++i) off.daa.w_val.data()[i] -= 2.0f;
    Tensor y2 = fuse(off, t1, t2);
    CHECK(std::memcmp(y1.data(), y2.data(), size_t(y1.numel()) * sizeof(float)) == 0);
}
