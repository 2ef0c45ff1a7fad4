#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "prosma/errors.hpp"

namespace prosma {

namespace detail {
struct Storage {
    std::vector<double> value;
    std::vector<double> grad;  // allocated (zero-filled) once requires_grad is set
    bool requires_grad = false;
};
}  // namespace detail

/// Dense row-major double tensor. Copies are shallow (shared storage);
/// use clone() for a deep copy. Rank is 1..4; the 4-D layout is [N,C,H,W].
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int64_t> dims, bool requires_grad = false);
    static Tensor full(std::vector<int64_t> dims, double value);
    static Tensor from_values(std::vector<int64_t> dims, std::vector<double> values);

    bool defined() const { return storage_ != nullptr; }
    const std::vector<int64_t>& dims() const { return dims_; }
    int rank() const { return static_cast<int>(dims_.size()); }
    int64_t dim(int i) const { return dims_[static_cast<size_t>(i)]; }
    int64_t size() const;

    double* data() { return storage_->value.data(); }
    const double* data() const { return storage_->value.data(); }

    /// Value of a one-element tensor.
    double item() const;

    bool requires_grad() const { return storage_ && storage_->requires_grad; }
    Tensor& set_requires_grad(bool on);

    /// Gradient buffer; null until requires_grad is set.
    double* grad();
    const double* grad() const;
    void zero_grad();
    Tensor grad_tensor() const;  // detached copy of the gradient

    /// Deep copy of values; detached from any tape.
    Tensor clone() const;

    std::shared_ptr<detail::Storage> storage() const { return storage_; }

private:
    Tensor(std::vector<int64_t> dims, std::shared_ptr<detail::Storage> s)
        : dims_(std::move(dims)), storage_(std::move(s)) {}

    std::vector<int64_t> dims_;
    std::shared_ptr<detail::Storage> storage_;
};

/// Reverse-mode tape. Forward ops append nodes in execution order; backward()
/// replays them once in reverse, which is a reverse topological order for any
/// single-threaded forward pass. Gradient contributions accumulate by sum.
class Tape {
public:
    /// The thread's active tape (one graph per thread at a time).
    static Tape& active();

    bool recording() const { return no_grad_depth_ == 0; }
    void record(std::function<void()> backward_fn);

    /// Seeds d(loss)/d(loss)=1 and replays the tape in reverse.
    /// loss must be a one-element tensor attached to this tape; calling
    /// backward a second time without reset() is rejected.
    void backward(const Tensor& loss);

    void reset();
    size_t node_count() const { return nodes_.size(); }

private:
    std::vector<std::function<void()>> nodes_;
    bool consumed_ = false;
    int no_grad_depth_ = 0;
    friend class NoGradGuard;
};

/// Scope guard that suspends tape recording (evaluation mode).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

void backward(const Tensor& loss);

namespace detail {
/// Allocates the zero-filled grad buffer if missing.
void ensure_grad(Storage& s);
/// True when any input requires grad and the tape is recording.
bool grad_enabled(std::initializer_list<const Tensor*> inputs);
/// Marks the op output as gradient-carrying and readies its buffer.
void mark_output(Tensor& out);
}  // namespace detail

}  // namespace prosma
