#include "msdial/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace msdial {

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << 'x';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->data.assign(shape_numel(shape), 0.0);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value) {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->data.assign(shape_numel(shape), value);
    impl->shape = std::move(shape);
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) {
    return full({}, value);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw std::invalid_argument("tensor shape " + shape_str(shape) + " expects " +
                                    std::to_string(shape_numel(shape)) + " values, got " +
                                    std::to_string(data.size()));
    }
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> data, bool requires_grad) {
    return from(std::move(shape), std::vector<double>(data), requires_grad);
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    const Shape& shape = impl_->shape;
    if (index.size() != shape.size()) {
        throw std::invalid_argument("index of rank " + std::to_string(index.size()) +
                                    " into tensor of shape " + shape_str(shape));
    }
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
        if (i >= shape[axis]) {
            throw std::out_of_range("index " + std::to_string(i) + " out of bounds for axis " +
                                    std::to_string(axis) + " of shape " + shape_str(shape));
        }
        flat = flat * shape[axis] + i;
        ++axis;
    }
    return impl_->data[flat];
}

double Tensor::item() const {
    if (numel() != 1) {
        throw std::invalid_argument("item() requires a one-element tensor, got shape " +
                                    shape_str(shape()));
    }
    return impl_->data[0];
}

Tensor Tensor::clone() const {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    impl->requires_grad = impl_->requires_grad;
    return Tensor(std::move(impl));
}

Tensor randn(const Shape& shape, Rng& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = dist(rng);
    return Tensor::from(shape, std::move(data));
}

Tensor rand_uniform(const Shape& shape, double lo, double hi, Rng& rng) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = dist(rng);
    return Tensor::from(shape, std::move(data));
}

}  // namespace msdial
