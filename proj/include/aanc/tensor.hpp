#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace aanc {

// Error taxonomy. The CLI maps these onto exit codes:
// ShapeError/ConfigError -> 2 (usage), DataError -> 3, NumericError -> 4.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tape;

namespace detail {
struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    // True when this tensor participates in gradient flow: either a
    // requires_grad leaf or the output of an op recorded on a tape.
    bool tracked = false;
    const Tape* tape = nullptr;  // producing tape, identity comparison only
    std::unique_ptr<std::vector<double>> grad;  // lazily materialized
};
}  // namespace detail

/// Dense N-dimensional array of 64-bit floats, row-major. Copying a Tensor
/// copies the handle, not the buffer; ops never mutate their inputs.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);  // zero-filled

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor from_data(Shape shape, std::vector<double> data);
    static Tensor scalar(double value);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

    double* data() { return impl_->data.data(); }
    const double* data() const { return impl_->data.data(); }
    std::span<double> values() { return impl_->data; }
    std::span<const double> values() const { return impl_->data; }

    /// Value of a rank-0/size-1 tensor.
    double item() const;

    double& at(std::initializer_list<int> idx);
    double at(std::initializer_list<int> idx) const;
    std::int64_t offset_of(std::initializer_list<int> idx) const;

    Tensor& set_requires_grad(bool v);
    bool requires_grad() const { return impl_->requires_grad; }
    bool tracked() const { return impl_ && impl_->tracked; }

    bool has_grad() const { return impl_ && impl_->grad != nullptr; }
    std::span<const double> grad_span() const;
    Tensor grad_tensor() const;  // copy of the gradient, same shape
    void zero_grad();

    /// Deep copy; the copy is an untracked leaf.
    Tensor clone() const;

    bool all_finite() const;

    detail::TensorImpl* impl() { return impl_.get(); }
    const detail::TensorImpl* impl() const { return impl_.get(); }

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

// --- On-disk tensor dump (header "tensor v1 <rank> <d0> ...", then
// --- little-endian float32, row-major). Used by checkpoints, dataset
// --- frames and map dumps.
void save_tensor(const Tensor& t, const std::string& path);
Tensor load_tensor(const std::string& path);

// 8-bit PGM render with linear min/max scaling; writes "<path>.minmax.txt"
// sidecar with the scaling range. Expects a rank-2 tensor.
void save_pgm(const Tensor& frame, const std::string& path);

}  // namespace aanc
