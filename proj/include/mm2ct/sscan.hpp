#pragma once

#include <string>
#include <vector>

#include "mm2ct/ops.hpp"

namespace mm2ct {

// Zero-order-hold discretization of a diagonal state-space model.
//   A: [C,N] (strictly negative), B: [L,N], delta: [L,C] (positive)
//   abar[l,c,n] = exp(delta[l,c] * A[c,n])
//   bbar[l,c,n] = ((abar - 1) / A) * B[l,n], with the A -> 0 limit delta * B
struct SsmCoeffs {
    Tensor abar;  // [L,C,N]
    Tensor bbar;  // [L,C,N]
};
SsmCoeffs discretize_zoh(const Tensor& A, const Tensor& B, const Tensor& delta);

// Reference recurrence, sequential in t:
//   h_t = abar_t * h_{t-1} + bbar_t * x_t   (per channel, state dim N)
//   y_t = <cseq_t, h_t> + d_skip * x_t
// x: [L,C], abar/bbar: [L,C,N], cseq: [L,N], d_skip: [C] -> y: [L,C]
Tensor selective_scan_seq(const Tensor& x, const Tensor& abar, const Tensor& bbar,
                          const Tensor& cseq, const Tensor& d_skip);

// Chunked evaluation of the same recurrence: each chunk computes its local
// prefix (decay product, partial state) independently, boundary states are
// folded sequentially, then chunks finish in parallel. chunk >= L falls back
// to the exact sequential order (bit-equal).
Tensor selective_scan_chunked(const Tensor& x, const Tensor& abar, const Tensor& bbar,
                              const Tensor& cseq, const Tensor& d_skip, int chunk);

// Fused discretize + scan fast path used by the Mamba blocks; one pass over
// [L,C,N] without materializing abar/bbar on the tape. Agrees with the
// composed route to float reassociation.
Tensor ssm_scan(const Tensor& x, const Tensor& delta, const Tensor& A, const Tensor& B,
                const Tensor& cseq, const Tensor& d_skip);

// Per-block selective-scan parameters: the state matrix lives as A_log with
// A = -exp(A_log) so the recurrence stays decay-stable, and the step size
// comes from softplus(linear(feat) + bias) with the bias started at -2 so
// initial steps are small.
struct SSMParams {
    int d_state = 8;
    Tensor a_log;   // [C,N]
    Tensor d_skip;  // [C]
    Tensor wb, bb;  // proj_B: C -> N
    Tensor wc, bc;  // proj_C: C -> N
    Tensor wdelta, bdelta;  // proj_delta: C -> C

    void init(int channels, int n_state, RngStream& rng);
    void collect(const std::string& prefix, std::vector<Parameter>& out);
    // Projections from feat ([L,C]) plus the fused scan, one direction.
    Tensor apply(const Tensor& feat) const;
};

struct ScanBenchRow {
    int L, C, N;
    std::string variant;
    long long nanoseconds;
    float max_abs_dev_vs_seq;
};
std::vector<ScanBenchRow> bench_scan(uint64_t seed);

}  // namespace mm2ct
