#include "prosma/tensor.hpp"

#include <numeric>
#include <string>

namespace prosma {

namespace {

int64_t checked_size(const std::vector<int64_t>& dims) {
    if (dims.empty()) {
        throw ShapeError("tensor dims must be non-empty");
    }
    int64_t n = 1;
    for (int64_t d : dims) {
        if (d < 1) {
            throw ShapeError("tensor extents must be >= 1, got " + std::to_string(d));
        }
        n *= d;
    }
    return n;
}

}  // namespace

Tensor Tensor::zeros(std::vector<int64_t> dims, bool requires_grad) {
    int64_t n = checked_size(dims);
    auto s = std::make_shared<detail::Storage>();
    s->value.assign(static_cast<size_t>(n), 0.0);
    Tensor t(std::move(dims), std::move(s));
    if (requires_grad) {
        t.set_requires_grad(true);
    }
    return t;
}

Tensor Tensor::full(std::vector<int64_t> dims, double value) {
    int64_t n = checked_size(dims);
    auto s = std::make_shared<detail::Storage>();
    s->value.assign(static_cast<size_t>(n), value);
    return Tensor(std::move(dims), std::move(s));
}

Tensor Tensor::from_values(std::vector<int64_t> dims, std::vector<double> values) {
    int64_t n = checked_size(dims);
    if (n != static_cast<int64_t>(values.size())) {
        throw ShapeError("from_values: got " + std::to_string(values.size()) +
                         " values for a tensor of " + std::to_string(n) + " elements");
    }
    auto s = std::make_shared<detail::Storage>();
    s->value = std::move(values);
    return Tensor(std::move(dims), std::move(s));
}

int64_t Tensor::size() const {
    return storage_ ? static_cast<int64_t>(storage_->value.size()) : 0;
}

double Tensor::item() const {
    if (!storage_ || storage_->value.size() != 1) {
        throw ContractError("item(): tensor is not a single element");
    }
    return storage_->value[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
    if (!storage_) {
        throw ContractError("set_requires_grad on an undefined tensor");
    }
    storage_->requires_grad = on;
    if (on) {
        detail::ensure_grad(*storage_);
    }
    return *this;
}

double* Tensor::grad() {
    return storage_ && !storage_->grad.empty() ? storage_->grad.data() : nullptr;
}

const double* Tensor::grad() const {
    return storage_ && !storage_->grad.empty() ? storage_->grad.data() : nullptr;
}

void Tensor::zero_grad() {
    if (storage_ && !storage_->grad.empty()) {
        std::fill(storage_->grad.begin(), storage_->grad.end(), 0.0);
    }
}

Tensor Tensor::grad_tensor() const {
    if (!storage_ || storage_->grad.empty()) {
        throw ContractError("grad_tensor(): no gradient buffer present");
    }
    return Tensor::from_values(dims_, storage_->grad);
}

Tensor Tensor::clone() const {
    if (!storage_) {
        return Tensor();
    }
    return Tensor::from_values(dims_, storage_->value);
}

Tape& Tape::active() {
    thread_local Tape tape;
    return tape;
}

void Tape::record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
}

void Tape::backward(const Tensor& loss) {
    if (loss.size() != 1) {
        throw ContractError("backward: loss must be a single element, got " +
                            std::to_string(loss.size()));
    }
    if (!loss.requires_grad()) {
        throw ContractError("backward: loss is not attached to the tape");
    }
    if (consumed_) {
        throw ContractError("backward already ran on this tape; reset() first");
    }
    loss.storage()->grad[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        (*it)();
    }
    consumed_ = true;
}

void Tape::reset() {
    nodes_.clear();
    consumed_ = false;
}

NoGradGuard::NoGradGuard() { ++Tape::active().no_grad_depth_; }
NoGradGuard::~NoGradGuard() { --Tape::active().no_grad_depth_; }

void backward(const Tensor& loss) { Tape::active().backward(loss); }

namespace detail {

void ensure_grad(Storage& s) {
    if (s.grad.size() != s.value.size()) {
        s.grad.assign(s.value.size(), 0.0);
    }
}

bool grad_enabled(std::initializer_list<const Tensor*> inputs) {
    if (!Tape::active().recording()) {
        return false;
    }
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) {
            return true;
        }
    }
    return false;
}

void mark_output(Tensor& out) {
    out.set_requires_grad(true);
}

}  // namespace detail

}  // namespace prosma
