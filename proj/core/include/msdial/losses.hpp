#pragma once

#include <span>

#include "msdial/ops.hpp"
#include "msdial/tensor.hpp"

namespace msdial {

enum class Reduction { kSum, kMean };

struct LossConfig {
    double lambda = 0.001;  // weight of the target-entropy term
    Reduction source_reduction = Reduction::kMean;
    Reduction target_reduction = Reduction::kMean;
};

/// Cross-entropy over labeled source rows: -sum of log p[row, label],
/// divided by the row count under mean reduction.
Tensor source_ce(const Tensor& log_probs, std::span<const int> labels, Reduction reduction);

/// Shannon entropy of the predictions, summed (or averaged) over rows.
/// 0*log 0 is defined as 0 by clamping probabilities at 1e-12 inside this
/// op only; gradients flow to log_probs.
Tensor target_entropy(const Tensor& log_probs, Reduction reduction);

/// source_loss + lambda * target_loss.
Tensor total_loss(const Tensor& source_loss, const Tensor& target_loss, const Tensor& lambda);
Tensor total_loss(const Tensor& source_loss, const Tensor& target_loss, const LossConfig& config);

}  // namespace msdial
