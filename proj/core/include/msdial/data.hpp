#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "msdial/layers.hpp"
#include "msdial/rng.hpp"
#include "msdial/tensor.hpp"

namespace msdial {

enum class Split { kTrain, kTest };

/// Samples of one domain. Labels are present iff the domain is a labeled
/// source; the target's ground truth never travels inside its dataset.
struct DomainDataset {
    std::size_t domain_id = 0;
    std::string name;
    Tensor samples;           // [N x ...]
    std::vector<int> labels;  // empty => unlabeled
    Split split = Split::kTrain;

    std::size_t size() const { return samples.rank() == 0 ? 0 : samples.extent(0); }
    bool labeled() const { return !labels.empty(); }
};

/// A training batch: source segments in domain order then the target
/// segment, with labels aligned to the source rows.
struct DomainBatch {
    Tensor data;
    DomainSegments segments;
    std::vector<int> source_labels;
};

/// Draws per_domain rows from every source (domain order) and the target
/// (last). Deterministic for a given generator state.
DomainBatch compose_batch(const std::vector<DomainDataset>& sources, const DomainDataset& target,
                          std::size_t per_domain, Rng& rng);

/// Epoch-aware batch stream: each domain keeps its own shuffle and reshuffles
/// when fewer than per_domain rows remain. One epoch is one pass over the
/// smallest domain's training set.
class BatchStream {
public:
    BatchStream(const std::vector<DomainDataset>& sources, const DomainDataset& target,
                std::size_t per_domain, std::uint64_t seed);

    DomainBatch next();
    std::size_t steps_per_epoch() const { return steps_per_epoch_; }
    std::size_t per_domain() const { return per_domain_; }

private:
    std::vector<const DomainDataset*> domains_;  // sources then target
    std::size_t per_domain_;
    std::size_t steps_per_epoch_;
    Rng rng_;
    std::vector<std::vector<std::size_t>> order_;
    std::vector<std::size_t> cursor_;
};

/// Invertible affine map x -> A z + b on the latent space.
struct AffineMap {
    std::vector<double> matrix;  // [dim x dim] row-major
    std::vector<double> offset;  // [dim]

    static AffineMap identity(std::size_t dim);
    static AffineMap diagonal(std::vector<double> scales, std::vector<double> offset);
    static AffineMap uniform_scale(std::size_t dim, double scale, double offset);
};

/// Generator for verifiable domain shift: class-conditional unit-variance
/// Gaussians in a shared latent space, pushed through one affine map per
/// domain. The last map belongs to the target.
struct SyntheticShiftSpec {
    std::size_t latent_dim = 8;
    std::size_t class_count = 2;
    double class_separation = 2.0;  // latent class means at +/- separation * e_k
    std::vector<AffineMap> domain_maps;
    std::size_t train_per_domain = 2000;
    std::size_t test_per_domain = 4000;
    std::uint64_t seed = 1;
};

struct SynthDomains {
    std::vector<DomainDataset> train;  // sources labeled, target (last) unlabeled
    std::vector<DomainDataset> test;   // target test unlabeled
    std::vector<int> target_train_truth;  // out-of-band, evaluation/TAR only
    std::vector<int> target_test_truth;
};

SynthDomains synth_affine_domains(const SyntheticShiftSpec& spec);

/// 2-norm condition number (throws on singular input).
double condition_number(const std::vector<double>& matrix, std::size_t dim);

/// IDX-format image/label pair (big-endian, magics 0x803/0x801). Pixels are
/// scaled to [0, 1]; shape [N x 1 x H x W].
DomainDataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Tab-separated feature table: label (or -1 when unlabeled) then the
/// feature values, one record per line; '#' lines are comments. The arity
/// comes from the first record unless expected_dim pins it. A dataset whose
/// labels are all -1 comes back unlabeled.
DomainDataset load_feature_table(const std::string& path, std::size_t expected_dim = 0);

/// Writes the same format (samples must be [N x d]; empty labels emit -1).
void save_feature_table(const std::string& path, const Tensor& samples,
                        std::span<const int> labels);

/// Disjoint train/test subsets drawn uniformly without replacement.
std::pair<DomainDataset, DomainDataset> subsample(const DomainDataset& dataset,
                                                  std::size_t n_train, std::size_t n_test,
                                                  std::uint64_t seed);

/// First k of a seeded Fisher-Yates permutation of [0, n).
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, Rng& rng);

/// Gathers rows by index into a new tensor.
Tensor gather_rows(const Tensor& samples, std::span<const std::size_t> indices);

}  // namespace msdial
