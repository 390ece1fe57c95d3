#pragma once

#include <cstdint>
#include <cstring>

namespace mm2ct {

// Branch-light expf (Cephes-style range reduction + degree-6 polynomial,
// ~2e-7 relative error). The scan kernels evaluate exp over [L,C,N]-sized
// arrays every step; libm expf does not vectorize without fast-math, this
// does.
inline float fast_expf(float x) {
    if (x > 88.0f) x = 88.0f;
    if (x < -87.0f) x = -87.0f;
    float z = x * 1.44269504088896341f;  // log2(e)
    float n = float(int(z + (z >= 0.0f ? 0.5f : -0.5f)));
    x -= n * 0.693359375f;
    x -= n * -2.12194440e-4f;
    float p = 1.9875691500e-4f;
    p = p * x + 1.3981999507e-3f;
    p = p * x + 8.3334519073e-3f;
    p = p * x + 4.1665795894e-2f;
    p = p * x + 1.6666665459e-1f;
    p = p * x + 5.0000001201e-1f;
    p = p * x * x + x + 1.0f;
    int32_t bits;
    float pow2n;
    bits = (int32_t(n) + 127) << 23;
    std::memcpy(&pow2n, &bits, sizeof(float));
    return p * pow2n;
}

}  // namespace mm2ct
