#pragma once

#include <functional>

#include "mm2ct/tensor.hpp"

namespace mm2ct {

// Compares reverse-mode gradients of a scalar-valued function against central
// finite differences at every coordinate of x. Returns the max of
// |analytic - numeric| / max(1, |analytic|). The function is re-evaluated
// 2*numel(x) times, so keep probes small (<= 64 elements).
float grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, float h = 1e-3f);

}  // namespace mm2ct
