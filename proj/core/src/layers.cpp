#include "msdial/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace msdial {

namespace {

void check_channel_input(const Tensor& x, std::size_t channels, const char* op) {
    if (x.rank() < 2) {
        throw std::invalid_argument(std::string(op) + " expects [N x C ...] input, got " +
                                    shape_str(x.shape()));
    }
    if (x.extent(1) != channels) {
        throw std::invalid_argument(std::string(op) + " input " + shape_str(x.shape()) +
                                    " does not match " + std::to_string(channels) + " channels");
    }
}

Shape stat_shape_for(const Tensor& x) {
    Shape s(x.rank(), 1);
    s[1] = x.extent(1);
    return s;
}

struct TrainNormalization {
    Tensor normalized;         // (x - mean) / sqrt(var + eps), differentiable
    std::vector<double> mean;  // per channel, detached
    std::vector<double> var;   // per channel, biased, detached
    std::size_t per_channel;   // elements reduced per channel
};

// Batch-statistics normalization; gradients flow through mean and variance.
// 1/sqrt is composed as exp(-0.5 * log(var + eps)), valid since eps > 0.
TrainNormalization normalize_train(const Tensor& x, double eps) {
    const Shape stat_shape = stat_shape_for(x);
    const std::size_t channels = x.extent(1);
    const double m = static_cast<double>(x.numel() / channels);
    const Tensor inv_m = Tensor::scalar(1.0 / m);

    Tensor mean = mul(sum_to(x, stat_shape), inv_m);
    Tensor centered = sub(x, mean);
    Tensor var = mul(sum_to(mul(centered, centered), stat_shape), inv_m);
    Tensor inv_std = exp(mul(log(add(var, Tensor::scalar(eps))), Tensor::scalar(-0.5)));

    TrainNormalization result;
    result.normalized = mul(centered, inv_std);
    result.mean.assign(mean.values().begin(), mean.values().end());
    result.var.assign(var.values().begin(), var.values().end());
    result.per_channel = static_cast<std::size_t>(m);
    return result;
}

void update_running_stats(BatchNormState& state, const TrainNormalization& norm) {
    const double m = static_cast<double>(norm.per_channel);
    const double unbias = m > 1.0 ? m / (m - 1.0) : 1.0;
    for (std::size_t c = 0; c < state.running_mean.size(); ++c) {
        state.running_mean[c] += state.momentum * (norm.mean[c] - state.running_mean[c]);
        state.running_var[c] += state.momentum * (norm.var[c] * unbias - state.running_var[c]);
    }
    ++state.num_batches_seen;
}

Tensor apply_affine(const Tensor& normalized, const Tensor& gamma, const Tensor& beta) {
    const Shape stat_shape = stat_shape_for(normalized);
    return add(mul(normalized, reshape(gamma, stat_shape)), reshape(beta, stat_shape));
}

Tensor normalize_eval(const Tensor& x, const std::vector<double>& mean,
                      const std::vector<double>& var, const Tensor& gamma, const Tensor& beta,
                      double eps) {
    const Shape stat_shape = stat_shape_for(x);
    std::vector<double> scale(mean.size());
    for (std::size_t c = 0; c < mean.size(); ++c) scale[c] = 1.0 / std::sqrt(var[c] + eps);
    Tensor mean_t = Tensor::from(stat_shape, std::vector<double>(mean));
    Tensor scale_t = Tensor::from(stat_shape, std::move(scale));
    return apply_affine(mul(sub(x, mean_t), scale_t), gamma, beta);
}

}  // namespace

BatchNormState BatchNormState::init(std::size_t channels) {
    BatchNormState state;
    state.gamma = Tensor::full({channels}, 1.0);
    state.gamma.set_requires_grad(true);
    state.beta = Tensor::zeros({channels}, /*requires_grad=*/true);
    state.running_mean.assign(channels, 0.0);
    state.running_var.assign(channels, 1.0);
    return state;
}

Tensor bn_forward(const Tensor& x, BatchNormState& state, Mode mode) {
    check_channel_input(x, state.channels(), "bn_forward");
    if (mode == Mode::kTrain) {
        if (x.extent(0) < 2) {
            throw std::invalid_argument("bn_forward train mode requires at least 2 rows, got " +
                                        std::to_string(x.extent(0)));
        }
        TrainNormalization norm = normalize_train(x, state.eps);
        update_running_stats(state, norm);
        return apply_affine(norm.normalized, state.gamma, state.beta);
    }
    return normalize_eval(x, state.running_mean, state.running_var, state.gamma, state.beta,
                          state.eps);
}

DialLayer DialLayer::init(std::size_t channels, std::size_t domain_count) {
    if (domain_count == 0) throw std::invalid_argument("DialLayer needs at least one domain");
    DialLayer layer;
    layer.per_domain.reserve(domain_count);
    for (std::size_t d = 0; d < domain_count; ++d) {
        BatchNormState stats = BatchNormState::init(channels);
        // Per-domain entries carry statistics only; the affine lives in the
        // shared pair below.
        stats.gamma.set_requires_grad(false);
        stats.beta.set_requires_grad(false);
        layer.per_domain.push_back(std::move(stats));
    }
    layer.shared_gamma = Tensor::full({channels}, 1.0);
    layer.shared_gamma.set_requires_grad(true);
    layer.shared_beta = Tensor::zeros({channels}, /*requires_grad=*/true);
    return layer;
}

DomainSegments::DomainSegments(std::vector<DomainSegment> segments)
    : segments_(std::move(segments)) {
    if (segments_.empty()) throw std::invalid_argument("DomainSegments: empty segment list");
    std::size_t expected_start = 0;
    std::vector<std::size_t> seen;
    for (const DomainSegment& seg : segments_) {
        if (seg.count == 0) {
            throw std::invalid_argument("DomainSegments: domain " + std::to_string(seg.domain_id) +
                                        " has an empty segment");
        }
        if (seg.start != expected_start) {
            throw std::invalid_argument(
                "DomainSegments: segment for domain " + std::to_string(seg.domain_id) +
                " starts at row " + std::to_string(seg.start) + ", expected " +
                std::to_string(expected_start) + " (segments must tile the batch)");
        }
        if (std::find(seen.begin(), seen.end(), seg.domain_id) != seen.end()) {
            throw std::invalid_argument("DomainSegments: domain " + std::to_string(seg.domain_id) +
                                        " appears twice");
        }
        seen.push_back(seg.domain_id);
        expected_start += seg.count;
    }
    total_rows_ = expected_start;
}

DomainSegments DomainSegments::contiguous(std::span<const std::size_t> counts) {
    std::vector<DomainSegment> segments;
    segments.reserve(counts.size());
    std::size_t start = 0;
    for (std::size_t d = 0; d < counts.size(); ++d) {
        segments.push_back({d, start, counts[d]});
        start += counts[d];
    }
    return DomainSegments(std::move(segments));
}

bool DomainSegments::canonical_order() const {
    for (std::size_t i = 1; i < segments_.size(); ++i) {
        if (segments_[i].domain_id <= segments_[i - 1].domain_id) return false;
    }
    return true;
}

Tensor dial_forward_train(const Tensor& x, const DomainSegments& segments, DialLayer& layer) {
    check_channel_input(x, layer.channels(), "dial_forward_train");
    if (segments.total_rows() != x.extent(0)) {
        throw std::invalid_argument("dial_forward_train segments cover " +
                                    std::to_string(segments.total_rows()) + " rows but input has " +
                                    std::to_string(x.extent(0)));
    }
    const std::size_t domains = layer.domain_count();
    if (segments.segments().size() != domains) {
        throw std::invalid_argument("dial_forward_train expected " + std::to_string(domains) +
                                    " domain segments, got " +
                                    std::to_string(segments.segments().size()));
    }
    std::vector<bool> present(domains, false);
    for (const DomainSegment& seg : segments.segments()) {
        if (seg.domain_id >= domains) {
            throw std::invalid_argument("dial_forward_train segment references domain " +
                                        std::to_string(seg.domain_id) + " outside [0, " +
                                        std::to_string(domains) + ")");
        }
        if (seg.count < 2) {
            throw std::invalid_argument("dial_forward_train segment for domain " +
                                        std::to_string(seg.domain_id) + " has " +
                                        std::to_string(seg.count) + " rows; needs at least 2");
        }
        present[seg.domain_id] = true;
    }
    for (std::size_t d = 0; d < domains; ++d) {
        if (!present[d]) {
            throw std::invalid_argument("dial_forward_train missing segment for domain " +
                                        std::to_string(d));
        }
    }

    std::vector<Tensor> parts;
    parts.reserve(segments.segments().size());
    for (const DomainSegment& seg : segments.segments()) {
        Tensor rows = slice_rows(x, seg.start, seg.count);
        TrainNormalization norm = normalize_train(rows, layer.per_domain[seg.domain_id].eps);
        update_running_stats(layer.per_domain[seg.domain_id], norm);
        parts.push_back(norm.normalized);
    }
    Tensor canonical = parts.size() == 1 ? parts.front() : concat_rows(parts);
    return apply_affine(canonical, layer.shared_gamma, layer.shared_beta);
}

Tensor dial_forward_eval(const Tensor& x, std::size_t domain_id, const DialLayer& layer) {
    check_channel_input(x, layer.channels(), "dial_forward_eval");
    if (domain_id >= layer.domain_count()) {
        throw std::invalid_argument("dial_forward_eval domain " + std::to_string(domain_id) +
                                    " outside [0, " + std::to_string(layer.domain_count()) + ")");
    }
    const BatchNormState& stats = layer.per_domain[domain_id];
    if (stats.num_batches_seen == 0) {
        throw std::invalid_argument("dial_forward_eval domain " + std::to_string(domain_id) +
                                    " has no accumulated statistics; train on it first");
    }
    return normalize_eval(x, stats.running_mean, stats.running_var, layer.shared_gamma,
                          layer.shared_beta, stats.eps);
}

Tensor dropout_forward(const Tensor& x, double p, Mode mode, Rng& rng) {
    if (p < 0.0 || p >= 1.0) {
        throw std::invalid_argument("dropout probability must be in [0, 1), got " +
                                    std::to_string(p));
    }
    if (mode == Mode::kEval || p == 0.0) return x;
    const double scale = 1.0 / (1.0 - p);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> mask(x.numel());
    for (double& v : mask) v = unit(rng) < p ? 0.0 : scale;
    return mul(x, Tensor::from(x.shape(), std::move(mask)));
}

}  // namespace msdial
