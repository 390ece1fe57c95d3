#pragma once

#include <vector>

#include "mm2ct/mamba.hpp"

namespace mm2ct {

struct FusionConfig {
    int width = 16;  // C, even (channel swap pairs channels)
    int n_pre_blocks = 1;
    int n_post_blocks = 1;
    int d_state = 8;
    bool bidirectional = true;
    float theta_cdc = 0.7f;
    bool enable_mamba = true;
    bool enable_de = true;
};

struct StemParams {
    Tensor w1, b1, w2, b2;  // two 3x3 stride-1 convs, SiLU between
    void init(int width, RngStream& rng);
    void collect(const std::string& prefix, std::vector<Parameter>& out);
};
Tensor stem(const StemParams& p, const Tensor& img);  // [1,H,W] -> [C,H,W]

// Exchanges odd-indexed channels between the two feature maps; even indices
// stay. Accepts [C,H,W] (swap along axis 0) or [L,C] (swap along axis 1).
// Applying it twice is the identity.
std::pair<Tensor, Tensor> channel_swap(const Tensor& a, const Tensor& b);

// Shared-kernel mix of a plain 3x3 conv and its central-difference variant:
//   out = conv3x3(x) + b - theta * conv1x1(x, sum_kk(w))
// Borders are replicate-padded so flat neighborhoods stay flat.
struct DynLocalConvParams {
    Tensor w, b;
    float theta = 0.7f;
    void init(int width, float theta_cdc, RngStream& rng);
    void collect(const std::string& prefix, std::vector<Parameter>& out);
};
Tensor dynamic_local_conv(const DynLocalConvParams& p, const Tensor& x);

// D = |f1 - f2|; out = fused + sigmoid(conv1x1_a(D)) * conv1x1_v(D)
struct DiffAttnParams {
    Tensor w_attn, b_attn, w_val, b_val;
    void init(int width, RngStream& rng);
    void collect(const std::string& prefix, std::vector<Parameter>& out);
};
Tensor diff_aware_attention(const DiffAttnParams& p, const Tensor& f1, const Tensor& f2,
                            const Tensor& fused);

struct FusionParams {
    FusionConfig cfg;
    StemParams stem1, stem2;
    // Mamba route
    std::vector<MambaBlockParams> pre1, pre2;
    MambaBlockParams branch1, branch2;
    MambaBlockParams cross12, cross21;
    std::vector<MambaBlockParams> post;
    // concat route (enable_mamba = false): 1x1 conv 2C -> C
    Tensor w_cat, b_cat;
    // dynamic enhancement
    DynLocalConvParams dlc;
    DiffAttnParams daa;
    Tensor w_final, b_final;  // closing 3x3 conv C -> C

    void init(const FusionConfig& config, RngStream& rng);
    void collect(const std::string& prefix, std::vector<Parameter>& out);
};

// stem each modality -> shallow swap -> deep cross-modal fusion -> dynamic
// enhancement -> post blocks -> conv. Returns the fused condition map [C,H,W].
Tensor fuse(const FusionParams& p, const Tensor& t1, const Tensor& t2);

}  // namespace mm2ct
