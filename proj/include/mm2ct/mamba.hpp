#pragma once

#include "mm2ct/sscan.hpp"

namespace mm2ct {

// Dual-path residual block: norm -> {linear -> depthwise conv -> SSM} *
// SiLU(linear) -> linear -> + input. The scan runs forward and reversed over
// the flattened sequence (both directions share parameters) unless
// bidirectional is off.
struct MambaBlockParams {
    int width = 0;   // C
    int expand = 0;  // E = 2C
    bool bidirectional = true;
    Tensor norm_gamma, norm_beta;
    Tensor w_in_x, b_in_x;  // C -> E, scan path
    Tensor w_in_z, b_in_z;  // C -> E, gate path
    Tensor w_dw, b_dw;      // depthwise conv over the sequence, kernel 3
    SSMParams ssm;          // over E channels
    Tensor w_out, b_out;    // E -> C

    void init(int channels, int d_state, bool bidi, RngStream& rng);
    void collect(const std::string& prefix, std::vector<Parameter>& out);
};

Tensor mamba_forward(const MambaBlockParams& p, const Tensor& x);

// Same block with the multiplicative gate computed from the other modality;
// both inputs pass through the same norm and projections (shared space), the
// residual adds x_q.
Tensor cross_modal_mamba(const MambaBlockParams& p, const Tensor& x_q, const Tensor& x_k);

}  // namespace mm2ct
