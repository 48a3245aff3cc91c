#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "msdial/rng.hpp"

namespace msdial {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // empty until a gradient is accumulated

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

}  // namespace detail

/// Dense row-major tensor of 64-bit reals. Copying a Tensor copies the
/// handle, not the storage; use clone() for an independent tensor.
/// A rank-0 tensor holds exactly one element and broadcasts everywhere.
class Tensor {
public:
    Tensor() : Tensor(scalar(0.0)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);
    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor from(Shape shape, std::initializer_list<double> data, bool requires_grad = false);

    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t numel() const { return impl_->data.size(); }
    std::size_t extent(std::size_t axis) const { return impl_->shape.at(axis); }

    std::span<const double> values() const { return impl_->data; }
    std::span<double> mutable_values() { return impl_->data; }
    double at(std::initializer_list<std::size_t> index) const;
    double item() const;

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool value) {
        impl_->requires_grad = value;
        return *this;
    }

    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const double> grad() const { return impl_->grad; }
    void zero_grad() { std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0); }

    /// Deep copy of shape/data; the clone starts with no gradient.
    Tensor clone() const;

    const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<detail::TensorImpl> impl_;
};

/// Standard-normal samples, deterministic for a given generator state.
Tensor randn(const Shape& shape, Rng& rng);
/// Uniform samples on [lo, hi).
Tensor rand_uniform(const Shape& shape, double lo, double hi, Rng& rng);

}  // namespace msdial
