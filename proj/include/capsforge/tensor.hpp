#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "capsforge/common.hpp"

namespace capsforge {

bool grad_enabled();

/// Disables graph recording for the enclosing scope (evaluation, exports).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// One record of the computation graph. Op results keep handles to their
/// parents plus a closure that pushes this node's gradient into them; backward
/// walks the records in exact reverse topological order and then drops the
/// edges, so a graph is consumed by the pass that uses it.
template <class T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // sized lazily during backward
    bool requires_grad = false;
    bool leaf = true;
    const char* op = "leaf";
    std::string name;  // set for parameters, used in diagnostics
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
};

/// Dense row-major tensor handle. Cheap to copy (shared storage); ops never
/// mutate their inputs. float is the training precision, double the
/// verification precision.
template <class T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T fill, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t ndim() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape[axis]; }
    std::size_t size() const { return node_->value.size(); }

    std::span<const T> values() const { return node_->value; }
    const T* data() const { return node_->value.data(); }
    /// Direct write access for the single writer between passes (optimizer,
    /// finite-difference probes). Leaves only.
    T* mutable_data() const;

    T item() const;
    T at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool v);
    Tensor& set_name(std::string name) {
        node_->name = std::move(name);
        return *this;
    }
    const std::string& name() const { return node_->name; }

    bool has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }
    std::span<const T> grad() const;
    void zero_grad() const {
        if (node_) node_->grad.assign(node_->value.size(), T(0));
    }

    /// Value copy detached from any graph.
    Tensor detach() const { return from_data(node_->shape, node_->value, false); }

    std::shared_ptr<Node<T>> node() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

/// Reverse-mode sweep from a scalar loss. Every requires_grad leaf reachable
/// from `loss` receives d loss / d leaf (accumulated); interior records are
/// released afterwards.
template <class T>
void backward(const Tensor<T>& loss);

/// Throws NumericError naming `op` on the first NaN/Inf.
template <class T>
void check_finite(std::span<const T> values, const char* op, const std::string& name = {});

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace capsforge
