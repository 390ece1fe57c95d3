#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace mm2ct {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major float tensor. Copies are shallow (shared buffer); use
// clone() for a deep copy. Gradient storage is allocated lazily on first
// accumulation, so "has no grad yet" is observable and cheap to test.
class Tensor {
  public:
    Tensor() = default;
    Tensor(Shape shape, float fill, bool requires_grad = false);
    static Tensor from_vec(Shape shape, std::vector<float> values, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int rank() const { return int(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape[size_t(i)]; }
    int64_t numel() const { return int64_t(impl_->data.size()); }
    bool same_shape(const Tensor& other) const { return impl_->shape == other.impl_->shape; }

    float* data() { return impl_->data.data(); }
    const float* data() const { return impl_->data.data(); }
    std::vector<float>& vec() { return impl_->data; }
    const std::vector<float>& vec() const { return impl_->data; }
    float item() const;

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }

    bool has_grad() const { return defined() && !impl_->grad.empty(); }
    const float* grad() const { return impl_->grad.empty() ? nullptr : impl_->grad.data(); }
    // Allocates a zeroed gradient buffer on first use.
    float* grad_acc();
    std::vector<float>& grad_vec() { return impl_->grad; }
    void clear_grad() { impl_->grad.clear(); }

    Tensor clone() const;

    // Identity of the underlying buffer; used by the tape and optimizers.
    const void* id() const { return impl_.get(); }

  private:
    struct Impl {
        Shape shape;
        std::vector<float> data;
        std::vector<float> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Impl> impl_;
};

struct Parameter {
    Tensor tensor;
    std::string name;
};

// Wengert-list reverse-mode tape. Ops append a node holding their output
// handles plus a backward closure; replaying nodes in reverse creation
// order is a valid topological order. backward() first clears the grads of
// every recorded output so stale seeds from a previous backward on the same
// tape cannot leak into the new pass; leaf tensors (parameters) keep
// accumulating.
class Tape {
  public:
    static Tape& active();

    bool enabled() const { return enabled_; }
    void set_enabled(bool e) { enabled_ = e; }

    void record(std::vector<Tensor> outputs, std::function<void()> backward);
    void backward(const Tensor& root);
    void reset();
    size_t node_count() const { return nodes_.size(); }

  private:
    struct Node {
        std::vector<Tensor> outputs;
        std::function<void()> backward;
    };
    std::vector<Node> nodes_;
    bool enabled_ = true;
};

struct NoGradGuard {
    NoGradGuard() : prev_(Tape::active().enabled()) { Tape::active().set_enabled(false); }
    ~NoGradGuard() { Tape::active().set_enabled(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
    bool prev_;
};

// True when recording is on and at least one input participates in autodiff.
bool track_grad(std::initializer_list<const Tensor*> inputs);

[[noreturn]] void fail(const std::string& msg);
void check(bool cond, const std::string& msg);

}  // namespace mm2ct
