#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

namespace iadccn {

/// Element type of every tensor created while it is the default.
/// f64 is the verification mode (gradient checks); f32 is the run mode.
enum class DType : std::uint8_t { f32, f64 };

DType default_dtype() noexcept;
void set_default_dtype(DType dtype) noexcept;
const char* to_string(DType dtype) noexcept;

class DTypeScope {
public:
    explicit DTypeScope(DType dtype) : previous_(default_dtype()) { set_default_dtype(dtype); }
    ~DTypeScope() { set_default_dtype(previous_); }
    DTypeScope(const DTypeScope&) = delete;
    DTypeScope& operator=(const DTypeScope&) = delete;

private:
    DType previous_;
};

template <typename F>
decltype(auto) dispatch(DType dtype, F&& f) {
    if (dtype == DType::f32) {
        return std::forward<F>(f)(std::type_identity<float>{});
    }
    return std::forward<F>(f)(std::type_identity<double>{});
}

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

/// Dense typed buffer. Copying copies the elements.
class Storage {
public:
    Storage() = default;
    Storage(DType dtype, std::size_t size, double fill = 0.0);

    DType dtype() const noexcept { return buffer_.index() == 0 ? DType::f32 : DType::f64; }
    std::size_t size() const noexcept;

    template <typename T>
    std::span<T> view() {
        return std::span<T>(std::get<std::vector<T>>(buffer_));
    }
    template <typename T>
    std::span<const T> view() const {
        return std::span<const T>(std::get<std::vector<T>>(buffer_));
    }

    double get(std::size_t i) const;
    void set(std::size_t i, double value);
    void fill(double value);
    /// this += other, elementwise; dtypes and sizes must agree.
    void accumulate(const Storage& other);
    std::vector<double> to_vector() const;

private:
    std::variant<std::vector<float>, std::vector<double>> buffer_;
};

namespace detail {
struct TensorImpl;
}

/// Shared handle to an N-d array with an optional gradient slot.
///
/// Copies of a Tensor alias the same buffer. Values are not mutated by ops;
/// the only in-place writes are gradient accumulation and optimizer updates
/// through mutable_data().
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, double value, bool requires_grad = false);
    static Tensor from_vector(const Shape& shape, std::span<const double> values,
                              bool requires_grad = false);
    static Tensor from_storage(const Shape& shape, Storage values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const noexcept { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t ndim() const;
    std::size_t numel() const;
    DType dtype() const;

    const Storage& storage() const;
    Storage& mutable_storage();

    template <typename T>
    std::span<const T> data() const {
        return storage().view<T>();
    }
    template <typename T>
    std::span<T> mutable_data() {
        return mutable_storage().view<T>();
    }

    double item() const;
    double at(std::size_t flat_index) const;
    std::vector<double> to_vector() const;

    bool requires_grad() const;
    void set_requires_grad(bool value);
    bool is_leaf() const;

    bool has_grad() const;
    const Storage& grad_storage() const;
    std::vector<double> grad_vector() const;
    void zero_grad();

    /// Same buffer, no history.
    Tensor detach() const;
    /// Fresh buffer, no history.
    Tensor clone() const;

    void backward() const;

    const void* identity() const noexcept { return impl_.get(); }

private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    friend struct TensorAccess;

    std::shared_ptr<detail::TensorImpl> impl_;
};

/// Thread-local switch; while disabled no graph is recorded.
bool grad_enabled() noexcept;

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Receives d(loss)/d(output) and adds d(loss)/d(input_k) into input_grads[k].
/// Entries are null for inputs that do not need a gradient.
using BackwardFn =
    std::function<void(const Storage& grad_output, std::span<Storage* const> input_grads)>;

/// Wraps an op result and, when any input requires grad, records the node
/// that backward() will replay. This is how every op in the library and the
/// training losses are defined.
Tensor make_result(const Shape& shape, Storage value, const std::vector<Tensor>& inputs,
                   BackwardFn backward_fn);

}  // namespace iadccn
