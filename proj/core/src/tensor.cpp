#include "iadccn/tensor.hpp"

#include <atomic>
#include <cassert>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "iadccn/error.hpp"

namespace iadccn {

namespace {

std::atomic<DType> g_default_dtype{DType::f32};
thread_local bool t_grad_enabled = true;

}  // namespace

DType default_dtype() noexcept { return g_default_dtype.load(std::memory_order_relaxed); }

void set_default_dtype(DType dtype) noexcept {
    g_default_dtype.store(dtype, std::memory_order_relaxed);
}

const char* to_string(DType dtype) noexcept { return dtype == DType::f32 ? "f32" : "f64"; }

std::size_t shape_numel(const Shape& shape) noexcept {
    std::size_t n = 1;
    for (const auto extent : shape) {
        n *= extent;
    }
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "x" : "") << shape[i];
    }
    os << ']';
    return os.str();
}

// ---------------------------------------------------------------------------
// Storage

Storage::Storage(DType dtype, std::size_t size, double fill) {
    if (dtype == DType::f32) {
        buffer_ = std::vector<float>(size, static_cast<float>(fill));
    } else {
        buffer_ = std::vector<double>(size, fill);
    }
}

std::size_t Storage::size() const noexcept {
    return std::visit([](const auto& v) { return v.size(); }, buffer_);
}

double Storage::get(std::size_t i) const {
    return std::visit([i](const auto& v) { return static_cast<double>(v[i]); }, buffer_);
}

void Storage::set(std::size_t i, double value) {
    std::visit(
        [i, value](auto& v) { v[i] = static_cast<typename std::decay_t<decltype(v)>::value_type>(value); },
        buffer_);
}

void Storage::fill(double value) {
    std::visit(
        [value](auto& v) {
            using T = typename std::decay_t<decltype(v)>::value_type;
            std::fill(v.begin(), v.end(), static_cast<T>(value));
        },
        buffer_);
}

void Storage::accumulate(const Storage& other) {
    if (other.dtype() != dtype() || other.size() != size()) {
        throw DimensionError("gradient accumulation between mismatched buffers");
    }
    dispatch(dtype(), [&]<typename T>(std::type_identity<T>) {
        auto dst = view<T>();
        auto src = other.view<T>();
        for (std::size_t i = 0; i < dst.size(); ++i) {
            dst[i] += src[i];
        }
    });
}

std::vector<double> Storage::to_vector() const {
    return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); },
                      buffer_);
}

// ---------------------------------------------------------------------------
// Graph

namespace detail {

struct Node {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    BackwardFn backward_fn;
};

struct TensorImpl {
    Shape shape;
    Storage data;
    bool requires_grad = false;
    bool backward_done = false;
    std::unique_ptr<Storage> grad;
    std::shared_ptr<Node> node;  // null for leaves
};

}  // namespace detail

struct TensorAccess {
    static const std::shared_ptr<detail::TensorImpl>& impl(const Tensor& t) { return t.impl_; }
    static Tensor wrap(std::shared_ptr<detail::TensorImpl> impl) { return Tensor(std::move(impl)); }
};

namespace {

std::shared_ptr<detail::TensorImpl> new_impl(const Shape& shape, Storage data, bool requires_grad) {
    for (const auto extent : shape) {
        if (extent == 0) {
            throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
        }
    }
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("buffer of " + std::to_string(data.size()) +
                             " elements cannot have shape " + shape_string(shape));
    }
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = shape;
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return impl;
}

const detail::TensorImpl& checked(const std::shared_ptr<detail::TensorImpl>& impl) {
    if (!impl) {
        throw ContractError("use of an undefined tensor");
    }
    return *impl;
}

}  // namespace

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    return full(shape, 0.0, requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
    return Tensor(new_impl(shape, Storage(default_dtype(), shape_numel(shape), value), requires_grad));
}

Tensor Tensor::from_vector(const Shape& shape, std::span<const double> values, bool requires_grad) {
    Storage s(default_dtype(), values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        s.set(i, values[i]);
    }
    return Tensor(new_impl(shape, std::move(s), requires_grad));
}

Tensor Tensor::from_storage(const Shape& shape, Storage values, bool requires_grad) {
    return Tensor(new_impl(shape, std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return full({1}, value, requires_grad); }

const Shape& Tensor::shape() const { return checked(impl_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_string(s));
    }
    return s[axis];
}

std::size_t Tensor::ndim() const { return shape().size(); }
std::size_t Tensor::numel() const { return checked(impl_).data.size(); }
DType Tensor::dtype() const { return checked(impl_).data.dtype(); }
const Storage& Tensor::storage() const { return checked(impl_).data; }

Storage& Tensor::mutable_storage() {
    checked(impl_);
    return impl_->data;
}

double Tensor::item() const {
    if (numel() != 1) {
        throw DimensionError("item() on tensor of shape " + shape_string(shape()));
    }
    return storage().get(0);
}

double Tensor::at(std::size_t flat_index) const { return storage().get(flat_index); }
std::vector<double> Tensor::to_vector() const { return storage().to_vector(); }
bool Tensor::requires_grad() const { return checked(impl_).requires_grad; }

void Tensor::set_requires_grad(bool value) {
    checked(impl_);
    impl_->requires_grad = value;
}

bool Tensor::is_leaf() const { return checked(impl_).node == nullptr; }
bool Tensor::has_grad() const { return checked(impl_).grad != nullptr; }

const Storage& Tensor::grad_storage() const {
    const auto& impl = checked(impl_);
    if (!impl.grad) {
        throw GraphError("tensor has no gradient");
    }
    return *impl.grad;
}

std::vector<double> Tensor::grad_vector() const {
    if (!has_grad()) {
        return std::vector<double>(numel(), 0.0);
    }
    return grad_storage().to_vector();
}

void Tensor::zero_grad() {
    checked(impl_);
    impl_->grad.reset();
    impl_->backward_done = false;
}

Tensor Tensor::detach() const {
    const auto& impl = checked(impl_);
    auto out = std::make_shared<detail::TensorImpl>();
    out->shape = impl.shape;
    out->data = impl.data;
    return Tensor(std::move(out));
}

Tensor Tensor::clone() const { return detach(); }

bool grad_enabled() noexcept { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Tensor make_result(const Shape& shape, Storage value, const std::vector<Tensor>& inputs,
                   BackwardFn backward_fn) {
#ifndef NDEBUG
    bool inputs_finite = true;
    for (const auto& in : inputs) {
        for (const double v : in.to_vector()) {
            inputs_finite = inputs_finite && std::isfinite(v);
        }
    }
    if (inputs_finite) {
        for (std::size_t i = 0; i < value.size(); ++i) {
            assert(std::isfinite(value.get(i)) && "non-finite op output from finite inputs");
        }
    }
#endif
    bool needs_grad = false;
    if (grad_enabled()) {
        for (const auto& in : inputs) {
            needs_grad = needs_grad || in.requires_grad();
        }
    }
    auto impl = new_impl(shape, std::move(value), needs_grad);
    if (needs_grad) {
        auto node = std::make_shared<detail::Node>();
        node->inputs.reserve(inputs.size());
        for (const auto& in : inputs) {
            node->inputs.push_back(TensorAccess::impl(in));
        }
        node->backward_fn = std::move(backward_fn);
        impl->node = std::move(node);
    }
    return TensorAccess::wrap(std::move(impl));
}

void Tensor::backward() const {
    const auto& root = checked(impl_);
    if (root.data.size() != 1) {
        throw GraphError("backward() needs a scalar loss, got shape " + shape_string(root.shape));
    }
    if (root.backward_done) {
        throw GraphError("backward() already ran on this loss; its graph has been released");
    }
    if (!root.node) {
        throw GraphError("backward() on a tensor that is not connected to any parameter");
    }

    // Iterative post-order DFS; reversing it gives a topological order in
    // which every tensor is processed after all of its consumers.
    // Owning pointers: releasing a node can drop the last other reference
    // to an interior tensor that is still waiting in `order`.
    std::vector<std::shared_ptr<detail::TensorImpl>> order;
    std::unordered_set<const detail::TensorImpl*> visited;
    std::vector<std::pair<std::shared_ptr<detail::TensorImpl>, std::size_t>> stack;
    stack.emplace_back(impl_, 0);
    visited.insert(impl_.get());
    while (!stack.empty()) {
        auto& [current, next_child] = stack.back();
        if (current->node && next_child < current->node->inputs.size()) {
            std::shared_ptr<detail::TensorImpl> child = current->node->inputs[next_child++];
            if (child->requires_grad && visited.insert(child.get()).second) {
                stack.emplace_back(std::move(child), 0);
            }
            continue;
        }
        order.push_back(current);
        stack.pop_back();
    }

    impl_->grad = std::make_unique<Storage>(root.data.dtype(), 1, 1.0);
    std::vector<Storage*> input_grads;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorImpl* t = it->get();
        if (!t->node) {
            continue;
        }
        if (!t->grad) {
            t->grad = std::make_unique<Storage>(t->data.dtype(), t->data.size(), 0.0);
        }
        input_grads.clear();
        for (const auto& in : t->node->inputs) {
            if (in->requires_grad) {
                if (!in->grad) {
                    in->grad = std::make_unique<Storage>(in->data.dtype(), in->data.size(), 0.0);
                }
                input_grads.push_back(in->grad.get());
            } else {
                input_grads.push_back(nullptr);
            }
        }
        t->node->backward_fn(*t->grad, input_grads);
        // Interior gradients and the recorded history are no longer needed.
        t->node.reset();
        if (t != impl_.get()) {
            t->grad.reset();
        }
    }
    impl_->backward_done = true;
}

}  // namespace iadccn
