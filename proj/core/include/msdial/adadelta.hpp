#pragma once

#include <span>
#include <vector>

#include "msdial/tensor.hpp"

namespace msdial {

struct AdadeltaConfig {
    double rho = 0.9;
    double eps = 1e-6;
    double lr = 1.0;
};

/// Adadelta updates:
///   E[g^2]  <- rho E[g^2] + (1-rho) g^2
///   delta    = -(sqrt(E[d^2]+eps) / sqrt(E[g^2]+eps)) g
///   E[d^2]  <- rho E[d^2] + (1-rho) delta^2
///   param  += lr * delta
/// Gradients are zeroed after each step.
class Adadelta {
public:
    explicit Adadelta(std::vector<Tensor> params, AdadeltaConfig config = {});

    void step();
    void zero_grad();

    const AdadeltaConfig& config() const { return config_; }
    std::span<const double> accum_grad_sq(std::size_t param_index) const;
    std::span<const double> accum_delta_sq(std::size_t param_index) const;

private:
    std::vector<Tensor> params_;
    AdadeltaConfig config_;
    std::vector<std::vector<double>> grad_sq_;
    std::vector<std::vector<double>> delta_sq_;
};

}  // namespace msdial
