#include "msdial/adadelta.hpp"

#include <cmath>
#include <stdexcept>

namespace msdial {

Adadelta::Adadelta(std::vector<Tensor> params, AdadeltaConfig config)
    : params_(std::move(params)), config_(config) {
    if (config_.rho <= 0.0 || config_.rho >= 1.0) {
        throw std::invalid_argument("adadelta rho must be in (0, 1), got " +
                                    std::to_string(config_.rho));
    }
    if (config_.eps <= 0.0) {
        throw std::invalid_argument("adadelta eps must be positive, got " +
                                    std::to_string(config_.eps));
    }
    grad_sq_.reserve(params_.size());
    delta_sq_.reserve(params_.size());
    for (const Tensor& p : params_) {
        grad_sq_.emplace_back(p.numel(), 0.0);
        delta_sq_.emplace_back(p.numel(), 0.0);
    }
}

void Adadelta::step() {
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        Tensor& param = params_[pi];
        if (!param.has_grad()) {
            throw std::invalid_argument("adadelta: parameter " + std::to_string(pi) +
                                        " has no gradient; run backward before step");
        }
        auto& impl = *param.impl();
        auto& eg2 = grad_sq_[pi];
        auto& ed2 = delta_sq_[pi];
        for (std::size_t i = 0; i < impl.data.size(); ++i) {
            const double g = impl.grad[i];
            eg2[i] = config_.rho * eg2[i] + (1.0 - config_.rho) * g * g;
            const double delta =
                -(std::sqrt(ed2[i] + config_.eps) / std::sqrt(eg2[i] + config_.eps)) * g;
            ed2[i] = config_.rho * ed2[i] + (1.0 - config_.rho) * delta * delta;
            impl.data[i] += config_.lr * delta;
        }
    }
    zero_grad();
}

void Adadelta::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

std::span<const double> Adadelta::accum_grad_sq(std::size_t param_index) const {
    return grad_sq_.at(param_index);
}

std::span<const double> Adadelta::accum_delta_sq(std::size_t param_index) const {
    return delta_sq_.at(param_index);
}

}  // namespace msdial
