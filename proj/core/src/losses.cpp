#include "msdial/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace msdial {

namespace {

void check_log_probs(const Tensor& log_probs, const char* op) {
    if (log_probs.rank() != 2) {
        throw std::invalid_argument(std::string(op) + " expects [N x C] log-probabilities, got " +
                                    shape_str(log_probs.shape()));
    }
}

Tensor reduce_rows(const Tensor& total, std::size_t rows, Reduction reduction) {
    if (reduction == Reduction::kSum || rows == 0) return total;
    return mul(total, Tensor::scalar(1.0 / static_cast<double>(rows)));
}

}  // namespace

Tensor source_ce(const Tensor& log_probs, std::span<const int> labels, Reduction reduction) {
    check_log_probs(log_probs, "source_ce");
    const std::size_t n = log_probs.extent(0);
    const std::size_t c = log_probs.extent(1);
    if (labels.size() != n) {
        throw std::invalid_argument("source_ce got " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(n) + " rows");
    }
    std::vector<double> onehot(n * c, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const int label = labels[i];
        if (label < 0 || static_cast<std::size_t>(label) >= c) {
            throw std::invalid_argument("source_ce label " + std::to_string(label) + " at row " +
                                        std::to_string(i) + " outside [0, " + std::to_string(c) +
                                        ")");
        }
        onehot[i * c + static_cast<std::size_t>(label)] = 1.0;
    }
    Tensor picked = mul(log_probs, Tensor::from({n, c}, std::move(onehot)));
    return reduce_rows(neg(sum_all(picked)), n, reduction);
}

Tensor target_entropy(const Tensor& log_probs, Reduction reduction) {
    check_log_probs(log_probs, "target_entropy");
    const std::size_t n = log_probs.extent(0);
    // clamp(p, 1e-12) in log space: max(lp, log 1e-12) = floor + relu(lp - floor)
    static const double kFloor = std::log(1e-12);
    const Tensor floor = Tensor::scalar(kFloor);
    Tensor clamped = add(floor, relu(sub(log_probs, floor)));
    Tensor plogp = mul(exp(log_probs), clamped);
    return reduce_rows(neg(sum_all(plogp)), n, reduction);
}

Tensor total_loss(const Tensor& source_loss, const Tensor& target_loss, const Tensor& lambda) {
    if (lambda.numel() != 1) {
        throw std::invalid_argument("total_loss lambda must be scalar, got shape " +
                                    shape_str(lambda.shape()));
    }
    if (lambda.values()[0] < 0.0) {
        throw std::invalid_argument("total_loss lambda must be non-negative, got " +
                                    std::to_string(lambda.values()[0]));
    }
    return add(source_loss, mul(lambda, target_loss));
}

Tensor total_loss(const Tensor& source_loss, const Tensor& target_loss, const LossConfig& config) {
    return total_loss(source_loss, target_loss, Tensor::scalar(config.lambda));
}

}  // namespace msdial
