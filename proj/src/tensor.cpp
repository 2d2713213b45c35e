#include "capsforge/tensor.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "capsforge/rng.hpp"

namespace capsforge {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

namespace work {
namespace {
std::uint64_t g_macs = 0;
}
void add_macs(std::uint64_t n) { g_macs += n; }
std::uint64_t macs() { return g_macs; }
void reset() { g_macs = 0; }
}  // namespace work

namespace {
int g_no_grad_depth = 0;
}

bool grad_enabled() { return g_no_grad_depth == 0; }
NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

template <class T>
void check_finite(std::span<const T> values, const char* op, const std::string& name) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            std::ostringstream msg;
            msg << "non-finite value (" << values[i] << ") at element " << i << " produced by '" << op << "'";
            if (!name.empty()) msg << " [" << name << "]";
            throw NumericError(msg.str());
        }
    }
}

template <class T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    return from_data(shape, std::vector<T>(shape_size(shape), T(0)), requires_grad);
}

template <class T>
Tensor<T> Tensor<T>::full(Shape shape, T fill, bool requires_grad) {
    return from_data(shape, std::vector<T>(shape_size(shape), fill), requires_grad);
}

template <class T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data, bool requires_grad) {
    if (shape_size(shape) != data.size())
        throw DimensionError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                             shape_str(shape));
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    node->leaf = true;
    return Tensor<T>(node);
}

template <class T>
T* Tensor<T>::mutable_data() const {
    if (!node_->leaf) throw ContractError("mutable_data is restricted to leaf tensors");
    return node_->value.data();
}

template <class T>
T Tensor<T>::item() const {
    if (size() != 1) throw ContractError("item() requires a scalar tensor, got shape " + shape_str(shape()));
    return node_->value[0];
}

template <class T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
    const Shape& s = shape();
    if (index.size() != s.size()) throw DimensionError("index rank mismatch for shape " + shape_str(s));
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
        if (i >= s[axis]) throw DimensionError("index out of range on axis " + std::to_string(axis));
        flat = flat * s[axis] + i;
        ++axis;
    }
    return node_->value[flat];
}

template <class T>
Tensor<T>& Tensor<T>::set_requires_grad(bool v) {
    if (!node_->leaf) throw ContractError("requires_grad can only be toggled on leaf tensors");
    node_->requires_grad = v;
    return *this;
}

template <class T>
std::span<const T> Tensor<T>::grad() const {
    if (!has_grad())
        throw ContractError("no gradient present on tensor" + (node_->name.empty() ? "" : " '" + node_->name + "'"));
    return node_->grad;
}

template <class T>
void backward(const Tensor<T>& loss) {
    if (!loss.defined()) throw ContractError("backward on undefined tensor");
    if (loss.size() != 1)
        throw ContractError("backward requires a scalar root, got shape " + shape_str(loss.shape()));
    auto root = loss.node();
    if (!root->requires_grad) return;  // nothing reachable wants a gradient

    // Iterative post-order DFS: reverse of the resulting list is a valid
    // topological order for the gradient sweep.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* parent = node->parents[next++].get();
            if (parent->requires_grad && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backward_fn) {
            node->ensure_grad();
            node->backward_fn(*node);
        }
    }
    // Consume the graph: drop edges and interior gradients, keep leaf grads.
    for (Node<T>* node : order) {
        if (!node->leaf) {
            node->parents.clear();
            node->backward_fn = nullptr;
            node->grad.clear();
            node->grad.shrink_to_fit();
        } else if (node->requires_grad) {
            check_finite<T>(node->grad, "backward", node->name);
        }
    }
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(splitmix64(seed) ^ splitmix64(stream * 0x9e3779b97f4a7c15ull + 0x632be59bd9b4e019ull));
}

std::uint64_t Rng::uniform_index(std::uint64_t n) {
    if (n == 0) throw ContractError("uniform_index(0)");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
}

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * 3.14159265358979323846 * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
}

std::string Rng::state_string() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
}

void Rng::set_state_string(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
    have_spare_ = false;
    spare_ = 0.0;
}

template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);
template void check_finite<float>(std::span<const float>, const char*, const std::string&);
template void check_finite<double>(std::span<const double>, const char*, const std::string&);

}  // namespace capsforge
