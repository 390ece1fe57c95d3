#include "mm2ct/mamba.hpp"

namespace mm2ct {

void MambaBlockParams::init(int channels, int d_state, bool bidi, RngStream& rng) {
    width = channels;
    expand = 2 * channels;
    bidirectional = bidi;
    norm_gamma = full({channels}, 1.0f, true);
    norm_beta = zeros({channels}, true);
    w_in_x = trunc_normal({expand, channels}, rng, 0.02f);
    w_in_x.set_requires_grad(true);
    b_in_x = zeros({expand}, true);
    w_in_z = trunc_normal({expand, channels}, rng, 0.02f);
    w_in_z.set_requires_grad(true);
    b_in_z = zeros({expand}, true);
    w_dw = trunc_normal({expand, 3}, rng, 0.02f);
    w_dw.set_requires_grad(true);
    b_dw = zeros({expand}, true);
    ssm.init(expand, d_state, rng);
    w_out = trunc_normal({channels, expand}, rng, 0.02f);
    w_out.set_requires_grad(true);
    b_out = zeros({channels}, true);
}

void MambaBlockParams::collect(const std::string& prefix, std::vector<Parameter>& out) {
    out.push_back({norm_gamma, prefix + ".norm.gamma"});
    out.push_back({norm_beta, prefix + ".norm.beta"});
    out.push_back({w_in_x, prefix + ".in_x.weight"});
    out.push_back({b_in_x, prefix + ".in_x.bias"});
    out.push_back({w_in_z, prefix + ".in_z.weight"});
    out.push_back({b_in_z, prefix + ".in_z.bias"});
    out.push_back({w_dw, prefix + ".dw.weight"});
    out.push_back({b_dw, prefix + ".dw.bias"});
    ssm.collect(prefix + ".ssm", out);
    out.push_back({w_out, prefix + ".out.weight"});
    out.push_back({b_out, prefix + ".out.bias"});
}

Tensor cross_modal_mamba(const MambaBlockParams& p, const Tensor& x_q, const Tensor& x_k) {
    check(x_q.defined() && x_k.defined(), "mamba: undefined input");
    check(x_q.rank() == 2 && x_q.dim(1) == p.width,
          "mamba: input must be [L," + std::to_string(p.width) + "], got " +
              shape_str(x_q.shape()));
    check(x_q.same_shape(x_k), "mamba: query/key shape mismatch");

    Tensor qn = layer_norm(x_q, p.norm_gamma, p.norm_beta);
    Tensor u = dwconv1d_causal(linear(qn, p.w_in_x, p.b_in_x), p.w_dw, p.b_dw);
    Tensor y = p.ssm.apply(u);
    if (p.bidirectional) y = add(y, flip0(p.ssm.apply(flip0(u))));

    const bool tied = x_k.id() == x_q.id();
    Tensor kn = tied ? qn : layer_norm(x_k, p.norm_gamma, p.norm_beta);
    Tensor gate = silu(linear(kn, p.w_in_z, p.b_in_z));

    return add(x_q, linear(mul(y, gate), p.w_out, p.b_out));
}

Tensor mamba_forward(const MambaBlockParams& p, const Tensor& x) {
    return cross_modal_mamba(p, x, x);
}

}  // namespace mm2ct
