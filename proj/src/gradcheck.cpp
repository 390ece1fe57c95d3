#include "mm2ct/gradcheck.hpp"

#include <cmath>

namespace mm2ct {

float grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, float h) {
    Tape& tape = Tape::active();
    // Analytic pass on a private graph.
    const size_t mark = tape.node_count();
    check(mark == 0, "grad_check: tape must be empty (reset between steps)");
    x.set_requires_grad(true);
    x.clear_grad();
    Tensor y = f(x);
    check(y.defined() && y.numel() == 1, "grad_check: f must return a scalar");
    tape.backward(y);
    std::vector<float> analytic(size_t(x.numel()), 0.0f);
    if (x.has_grad()) {
        const float* g = x.grad();
        for (int64_t i = 0; i < x.numel(); ++i) analytic[size_t(i)] = g[i];
    }
    tape.reset();
    x.clear_grad();

    // Central differences, double-accumulated.
    float max_err = 0.0f;
    {
        NoGradGuard ng;
        float* px = x.data();
        for (int64_t i = 0; i < x.numel(); ++i) {
            const float orig = px[i];
            px[i] = orig + h;
            const double fp = double(f(x).item());
            px[i] = orig - h;
            const double fm = double(f(x).item());
            px[i] = orig;
            const float numeric = float((fp - fm) / (2.0 * double(h)));
            const float a = analytic[size_t(i)];
            const float err = std::fabs(a - numeric) / std::max(1.0f, std::fabs(a));
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

}  // namespace mm2ct
