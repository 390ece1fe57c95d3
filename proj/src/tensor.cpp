#include "mm2ct/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace mm2ct {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

void fail(const std::string& msg) { throw std::runtime_error(msg); }

void check(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

Tensor::Tensor(Shape shape, float fill, bool requires_grad) {
    for (int d : shape) check(d > 0, "tensor extent must be positive, got " + shape_str(shape));
    impl_ = std::make_shared<Impl>();
    impl_->shape = std::move(shape);
    impl_->data.assign(size_t(shape_numel(impl_->shape)), fill);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::from_vec(Shape shape, std::vector<float> values, bool requires_grad) {
    check(shape_numel(shape) == int64_t(values.size()),
          "from_vec: " + shape_str(shape) + " does not hold " + std::to_string(values.size()) +
              " values");
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(values);
    t.impl_->requires_grad = requires_grad;
    return t;
}

float Tensor::item() const {
    check(defined() && numel() == 1, "item(): tensor is not a scalar");
    return impl_->data[0];
}

float* Tensor::grad_acc() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
    return impl_->grad.data();
}

Tensor Tensor::clone() const {
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    t.impl_->requires_grad = impl_->requires_grad;
    return t;
}

Tape& Tape::active() {
    thread_local Tape tape;
    return tape;
}

void Tape::record(std::vector<Tensor> outputs, std::function<void()> backward) {
    nodes_.push_back(Node{std::move(outputs), std::move(backward)});
}

void Tape::backward(const Tensor& root) {
    check(root.defined() && root.numel() == 1, "backward: root must be a scalar");
    check(root.requires_grad(), "backward: root is not connected to the tape");
    for (auto& node : nodes_)
        for (auto& out : node.outputs) out.clear_grad();
    Tensor r = root;
    r.grad_acc()[0] = 1.0f;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        bool any = false;
        for (auto& out : it->outputs)
            if (out.has_grad()) {
                any = true;
                break;
            }
        if (any) it->backward();
    }
}

void Tape::reset() { nodes_.clear(); }

bool track_grad(std::initializer_list<const Tensor*> inputs) {
    if (!Tape::active().enabled()) return false;
    for (const Tensor* t : inputs)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

}  // namespace mm2ct
