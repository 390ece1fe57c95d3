#pragma once

#include "mm2ct/fusion.hpp"

namespace mm2ct {

// Few-step schedule: betas rise linearly in (0,1); alpha_bar[0] = 1 so t = 0
// is the identity and the final reverse step is deterministic.
struct DiffusionSchedule {
    int T = 8;
    std::vector<double> betas;       // betas[t-1] belongs to step t
    std::vector<double> alphas;      // 1 - beta
    std::vector<double> alpha_bars;  // [T+1], cumulative, alpha_bars[0] = 1

    static DiffusionSchedule linear(int T, double beta_min, double beta_max);
};

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps; t = 0 returns x0 unchanged.
// Noise is supplied by the caller so sampling stays deterministic.
Tensor q_sample(const Tensor& x0, int t, const Tensor& noise, const DiffusionSchedule& sched);

// One reverse step from a direct x0 estimate: posterior q(x_{t-1} | x_t, x0)
// mean plus sigma_t * noise; sigma_1 = 0 by construction, so the terminal
// step ignores the noise argument entirely.
Tensor p_step_from_x0(const Tensor& x_t, int t, const Tensor& x0_hat,
                      const DiffusionSchedule& sched, const Tensor& noise);

// ResNet-style generator: 2 stride-2 downs, R residual blocks, 2 nearest
// upsamples, tanh head. Shape-preserving; H, W must be divisible by 4.
struct GeneratorParams {
    int width = 8;
    int out_ch = 1;
    Tensor w_in, b_in;
    Tensor w_d1, b_d1, w_d2, b_d2;
    struct ResBlock {
        Tensor w1, b1, w2, b2;
    };
    std::vector<ResBlock> res;
    Tensor w_u1, b_u1, w_u2, b_u2;
    Tensor w_out, b_out;

    void init(int g, int resblocks, int out_channels, RngStream& rng);
    void collect(const std::string& prefix, std::vector<Parameter>& out);
};
Tensor generator_forward(const GeneratorParams& p, const Tensor& src);

// Small UNet over the noisy target concatenated with the fused condition and
// a sinusoidal timestep embedding broadcast as constant channels.
struct DenoiserParams {
    int width = 16;
    int cond_ch = 16;
    int temb_ch = 4;
    Tensor w_in, b_in;    // (1 + cond + temb) -> W
    Tensor w_d1, b_d1;    // W -> 2W, stride 2
    Tensor w_d2, b_d2;    // 2W -> 2W, stride 2
    Tensor w_m, b_m;      // 2W -> 2W
    Tensor w_u1, b_u1;    // 2W -> 2W (after upsample), then skip-add
    Tensor w_u1b, b_u1b;  // 2W -> W
    Tensor w_u0, b_u0;    // W -> W (after upsample), then skip-add
    Tensor w_out, b_out;  // W -> 1

    void init(int w, int cond_channels, int temb_channels, RngStream& rng);
    void collect(const std::string& prefix, std::vector<Parameter>& out);
};
Tensor timestep_embedding(int t, int channels, int H, int W);
Tensor denoiser_forward(const DenoiserParams& p, const Tensor& x_t, int t, const Tensor& cond);

Tensor p_step(const Tensor& x_t, int t, const Tensor& cond, const DenoiserParams& p,
              const DiffusionSchedule& sched, const Tensor& noise);

// Full conditional reverse sampling from seeded Gaussian noise. Pure function
// of (inputs, parameters, seed).
Tensor translate_sample(const FusionParams& fusion, const DenoiserParams& den,
                        const DiffusionSchedule& sched, const Tensor& t1, const Tensor& t2,
                        uint64_t seed);

}  // namespace mm2ct
