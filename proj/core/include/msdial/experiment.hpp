#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "msdial/data.hpp"
#include "msdial/losses.hpp"
#include "msdial/model.hpp"

namespace msdial {

enum class Method { kSrc, kTar, kMsdial };

std::string method_name(Method method);
Method parse_method(const std::string& name);

struct NamedAffine {
    std::string name;
    AffineMap map;
};

/// File-backed domain. Paths are feature tables, or "idx:<images>:<labels>"
/// pairs for digit data. Target ground truth may arrive as labels inside the
/// table (they are stripped into the out-of-band truth) or as a separate
/// label file, one integer per line.
struct FileDomain {
    std::string name;
    std::string train_path;
    std::string test_path;
    std::string train_labels_path;
    std::string test_labels_path;
};

struct ExperimentConfig {
    Task task = Task::kFeatures;
    Method method = Method::kMsdial;
    std::string target_name;
    double lambda = 0.001;
    std::size_t epochs = 50;
    std::size_t batch_size = 32;
    std::size_t replications = 20;
    std::uint64_t seed = 1;
    Reduction source_reduction = Reduction::kMean;
    Reduction target_reduction = Reduction::kMean;
    std::vector<std::size_t> hidden_sizes = {1000, 500, 100};
    std::string output_dir = ".";
    std::size_t class_count = 0;      // 0 = infer from data
    std::size_t subsample_train = 0;  // 0 = use every row (file domains)
    std::size_t subsample_test = 0;

    // Synthetic data (used when synth_domains is non-empty).
    std::size_t synth_latent_dim = 8;
    std::size_t synth_classes = 2;
    double synth_separation = 2.0;
    std::size_t synth_train_per_domain = 2000;
    std::size_t synth_test_per_domain = 4000;
    std::vector<NamedAffine> synth_domains;

    std::vector<FileDomain> file_domains;

    bool synthetic() const { return !synth_domains.empty(); }
    std::vector<std::string> domain_names() const;
};

struct ResultRecord {
    Method method = Method::kMsdial;
    std::string target_name;
    double lambda = 0.0;
    std::uint64_t seed = 0;
    std::size_t replications = 0;

    std::vector<double> accuracies;  // completed replications only
    double mean = 0.0;
    double standard_error = 0.0;  // sample std / sqrt(count)

    std::vector<std::size_t> aborted;  // replication indices that hit NaN
    std::vector<std::string> abort_reasons;

    /// Per completed replication, mean target-batch entropy per epoch
    /// (msdial only; empty otherwise).
    std::vector<std::vector<double>> target_entropy_per_epoch;
};

/// Leave-one-domain-out run: the named target is unlabeled, every other
/// domain is a labeled source. Each replication draws an independent seed,
/// builds a fresh model, trains and evaluates top-1 accuracy on the target
/// test split. NaN losses abort the replication and are reported in the
/// record, never silently dropped.
ResultRecord run_experiment(const ExperimentConfig& config);

/// One run_experiment per lambda, returned in ascending lambda order.
std::vector<ResultRecord> lambda_sweep(const ExperimentConfig& config,
                                       const std::vector<double>& lambdas);

/// One fully trained replication, for feature export and inspection. The
/// returned target test split carries its ground-truth labels so exports can
/// be colored by class.
struct TrainedModel {
    ModelGraph model;
    DomainDataset target_test;
    std::size_t eval_domain = 0;
    double accuracy = 0.0;
};
TrainedModel train_single_replication(const ExperimentConfig& config, std::size_t replication = 0);

/// Writes the activations entering node `boundary` (default: the final
/// classifier) for every row of the dataset, in feature-table format with
/// the dataset's labels (-1 when unlabeled).
void export_features(const ModelGraph& model, const DomainDataset& dataset, std::size_t boundary,
                     const std::string& path);
void export_features(const ModelGraph& model, const DomainDataset& dataset,
                     const std::string& path);

/// Projects a feature table onto its top-2 principal components and writes
/// an (x, y, label) CSV.
void pca_project(const std::string& table_path, const std::string& out_path);

/// (adapted - baseline) / baseline, in percent.
double relative_gain_percent(double adapted, double baseline);
std::string format_gain(double percent);

/// CSV: method, target, mean, stderr, replications, lambda, seed, plus a
/// relative-gain column on msdial rows paired with a src row for the same
/// target.
void emit_results(const std::vector<ResultRecord>& records, const std::string& path);

/// Flat key-value config file (keys mirror ExperimentConfig fields).
ExperimentConfig parse_config_file(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin = "config");

// Exposed for tests and the CLI.
Tensor model_forward_eval_batched(const ModelGraph& model, const Tensor& samples,
                                  std::size_t domain_id, std::size_t chunk = 512);
double evaluate_accuracy(const ModelGraph& model, const Tensor& samples,
                         std::span<const int> truth, std::size_t domain_id);

}  // namespace msdial
