#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "msdial/ops.hpp"
#include "msdial/rng.hpp"
#include "msdial/tensor.hpp"

namespace msdial {

enum class Mode { kTrain, kEval };

/// Per-channel normalization statistics plus affine parameters. The channel
/// axis is axis 1; inputs are [N x C] or [N x C x H x W]. Normalization uses
/// biased batch variance; the running-variance update uses the unbiased
/// estimate.
struct BatchNormState {
    Tensor gamma;  // [C], learnable
    Tensor beta;   // [C], learnable
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;
    double eps = 1e-5;
    long num_batches_seen = 0;

    static BatchNormState init(std::size_t channels);
    std::size_t channels() const { return running_mean.size(); }
};

Tensor bn_forward(const Tensor& x, BatchNormState& state, Mode mode);

/// One statistic set per domain (sources 0..M-1, target M) without their own
/// affine, plus the single shared (gamma, beta) pair applied after any
/// domain's normalization.
struct DialLayer {
    std::vector<BatchNormState> per_domain;  // gamma/beta of entries unused
    Tensor shared_gamma;  // [C], learnable
    Tensor shared_beta;   // [C], learnable

    static DialLayer init(std::size_t channels, std::size_t domain_count);
    std::size_t domain_count() const { return per_domain.size(); }
    std::size_t channels() const { return shared_gamma.numel(); }
};

struct DomainSegment {
    std::size_t domain_id;
    std::size_t start;
    std::size_t count;
};

/// A partition of a batch's leading axis into contiguous, non-overlapping
/// per-domain blocks covering every row, listed in row order.
class DomainSegments {
public:
    explicit DomainSegments(std::vector<DomainSegment> segments);

    /// Blocks of the given sizes in domain order 0, 1, ...
    static DomainSegments contiguous(std::span<const std::size_t> counts);

    const std::vector<DomainSegment>& segments() const { return segments_; }
    std::size_t total_rows() const { return total_rows_; }
    /// True when domain ids appear in increasing order (sources by index,
    /// target last) as batch composition emits them.
    bool canonical_order() const;

private:
    std::vector<DomainSegment> segments_;
    std::size_t total_rows_ = 0;
};

/// Normalizes each domain segment with its own batch statistics (no affine),
/// updates that domain's running stats, then applies the shared affine to
/// the whole batch. Output rows stay in input order.
Tensor dial_forward_train(const Tensor& x, const DomainSegments& segments, DialLayer& layer);

/// Plain BN eval using the requested domain's running stats and the shared
/// affine. The domain must have seen at least one training batch.
Tensor dial_forward_eval(const Tensor& x, std::size_t domain_id, const DialLayer& layer);

/// Inverted dropout: train zeroes each element with probability p and scales
/// survivors by 1/(1-p); eval is the identity.
Tensor dropout_forward(const Tensor& x, double p, Mode mode, Rng& rng);

}  // namespace msdial
