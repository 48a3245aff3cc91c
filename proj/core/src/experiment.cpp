#include "msdial/experiment.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "msdial/adadelta.hpp"
#include "msdial/tape.hpp"

namespace msdial {

namespace {

// Seed stream tags, mixed with the replication seed.
constexpr std::uint64_t kDataStream = 1;
constexpr std::uint64_t kInitStream = 2;
constexpr std::uint64_t kDropoutStream = 3;
constexpr std::uint64_t kBatchStreamTag = 4;

struct ReplicationData {
    std::vector<DomainDataset> sources;  // train splits, labeled, ids 0..M-1
    DomainDataset target_train;          // unlabeled, id M
    DomainDataset target_test;
    std::vector<int> target_train_truth;
    std::vector<int> target_test_truth;
    std::size_t class_count = 0;
};

struct ReplicationOutcome {
    bool aborted = false;
    std::string abort_reason;
    double accuracy = 0.0;
    std::vector<double> entropy_per_epoch;
};

std::size_t infer_class_count(const ExperimentConfig& cfg, const ReplicationData& data) {
    if (cfg.class_count != 0) return cfg.class_count;
    int max_label = -1;
    for (const DomainDataset& ds : data.sources) {
        for (int label : ds.labels) max_label = std::max(max_label, label);
    }
    for (int label : data.target_test_truth) max_label = std::max(max_label, label);
    if (max_label < 1) {
        throw std::invalid_argument("cannot infer class count from labels; set class_count");
    }
    return static_cast<std::size_t>(max_label) + 1;
}

std::vector<int> load_label_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(path + ": cannot open");
    std::vector<int> labels;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        try {
            labels.push_back(std::stoi(line));
        } catch (const std::exception&) {
            throw std::runtime_error(path + " line " + std::to_string(line_no) +
                                     ": malformed label");
        }
    }
    return labels;
}

DomainDataset load_domain_file(const std::string& path) {
    if (path.rfind("idx:", 0) == 0) {
        const std::size_t sep = path.find(':', 4);
        if (sep == std::string::npos) {
            throw std::invalid_argument("idx path '" + path +
                                        "' must look like idx:<images>:<labels>");
        }
        return load_idx(path.substr(4, sep - 4), path.substr(sep + 1));
    }
    return load_feature_table(path);
}

const NamedAffine& find_synth_domain(const ExperimentConfig& cfg, const std::string& name) {
    for (const NamedAffine& d : cfg.synth_domains) {
        if (d.name == name) return d;
    }
    throw std::invalid_argument("domain '" + name + "' not found in config");
}

ReplicationData assemble_synthetic(const ExperimentConfig& cfg, std::uint64_t rep_seed) {
    SyntheticShiftSpec spec;
    spec.latent_dim = cfg.synth_latent_dim;
    spec.class_count = cfg.synth_classes;
    spec.class_separation = cfg.synth_separation;
    spec.train_per_domain = cfg.synth_train_per_domain;
    spec.test_per_domain = cfg.synth_test_per_domain;
    spec.seed = derive_seed(rep_seed, kDataStream);

    std::vector<std::string> names;
    for (const NamedAffine& d : cfg.synth_domains) {
        if (d.name != cfg.target_name) names.push_back(d.name);
    }
    if (names.size() == cfg.synth_domains.size()) {
        throw std::invalid_argument("target '" + cfg.target_name + "' is not a configured domain");
    }
    names.push_back(cfg.target_name);
    for (const std::string& name : names) spec.domain_maps.push_back(find_synth_domain(cfg, name).map);

    SynthDomains generated = synth_affine_domains(spec);
    ReplicationData data;
    const std::size_t m = names.size() - 1;
    for (std::size_t d = 0; d < m; ++d) {
        generated.train[d].name = names[d];
        data.sources.push_back(std::move(generated.train[d]));
    }
    data.target_train = std::move(generated.train[m]);
    data.target_train.name = cfg.target_name;
    data.target_test = std::move(generated.test[m]);
    data.target_test.name = cfg.target_name;
    data.target_train_truth = std::move(generated.target_train_truth);
    data.target_test_truth = std::move(generated.target_test_truth);
    data.class_count = cfg.synth_classes;
    return data;
}

ReplicationData assemble_files(const ExperimentConfig& cfg, std::uint64_t rep_seed) {
    ReplicationData data;
    std::size_t source_id = 0;
    bool target_found = false;
    for (const FileDomain& fd : cfg.file_domains) {
        const bool is_target = fd.name == cfg.target_name;
        DomainDataset train = load_domain_file(fd.train_path);
        DomainDataset test = load_domain_file(fd.test_path);
        train.name = fd.name;
        test.name = fd.name;
        train.split = Split::kTrain;
        test.split = Split::kTest;
        if (!fd.train_labels_path.empty()) train.labels = load_label_file(fd.train_labels_path);
        if (!fd.test_labels_path.empty()) test.labels = load_label_file(fd.test_labels_path);
        if (cfg.subsample_train != 0 || cfg.subsample_test != 0) {
            const std::size_t want_train =
                cfg.subsample_train == 0 ? train.size() : cfg.subsample_train;
            train = subsample(train, want_train, 0, derive_seed(rep_seed, kDataStream + source_id))
                        .first;
            if (cfg.subsample_test != 0) {
                test = subsample(test, cfg.subsample_test, 0,
                                 derive_seed(rep_seed, kDataStream + 100 + source_id))
                           .first;
                test.split = Split::kTest;
            }
        }
        if (is_target) {
            target_found = true;
            // Ground truth never rides inside the target dataset.
            data.target_train_truth = std::move(train.labels);
            train.labels.clear();
            data.target_test_truth = std::move(test.labels);
            test.labels.clear();
            data.target_train = std::move(train);
            data.target_test = std::move(test);
        } else {
            if (!train.labeled()) {
                throw std::invalid_argument("source domain '" + fd.name + "' is unlabeled");
            }
            train.domain_id = source_id++;
            data.sources.push_back(std::move(train));
        }
    }
    if (!target_found) {
        throw std::invalid_argument("target '" + cfg.target_name + "' is not a configured domain");
    }
    data.target_train.domain_id = source_id;
    data.target_test.domain_id = source_id;
    data.class_count = infer_class_count(cfg, data);
    return data;
}

ReplicationData assemble(const ExperimentConfig& cfg, std::uint64_t rep_seed) {
    if (cfg.synthetic()) return assemble_synthetic(cfg, rep_seed);
    if (!cfg.file_domains.empty()) return assemble_files(cfg, rep_seed);
    throw std::invalid_argument("experiment config has no domains");
}

ModelGraph build_model(const ExperimentConfig& cfg, const ReplicationData& data,
                       std::size_t domain_count, std::uint64_t rep_seed) {
    ArchitectureSpec arch;
    arch.task = cfg.task;
    arch.class_count = data.class_count;
    arch.source_domains = domain_count - 1;
    arch.hidden_sizes = cfg.hidden_sizes;
    Rng rng(derive_seed(rep_seed, kInitStream));
    if (cfg.task == Task::kDigits) {
        const Shape& s = data.target_train.samples.shape();
        if (s.size() != 4) {
            throw std::invalid_argument("digit task expects [N x C x H x W] data, got " +
                                        shape_str(s));
        }
        arch.in_channels = s[1];
        arch.image_size = s[2];
        return build_digit_model(arch, rng);
    }
    const Shape& s = data.target_train.samples.shape();
    if (s.size() != 2) {
        throw std::invalid_argument("feature task expects [N x d] data, got " + shape_str(s));
    }
    arch.input_dim = s[1];
    return build_feature_mlp(arch, rng);
}

struct Pool {
    Tensor samples;
    std::vector<int> labels;
};

Pool merged_source_pool(const ReplicationData& data) {
    std::vector<Tensor> parts;
    std::vector<int> labels;
    for (const DomainDataset& ds : data.sources) {
        parts.push_back(ds.samples);
        labels.insert(labels.end(), ds.labels.begin(), ds.labels.end());
    }
    return Pool{concat_rows(parts), std::move(labels)};
}

bool train_plain(const ExperimentConfig& cfg, ModelGraph& model, const Pool& pool,
                 std::uint64_t rep_seed, std::string& abort_reason) {
    Adadelta optimizer(model.parameters());
    Rng dropout_rng(derive_seed(rep_seed, kDropoutStream));
    Rng batch_rng(derive_seed(rep_seed, kBatchStreamTag));
    const std::size_t n = pool.samples.extent(0);
    const std::size_t steps = std::max<std::size_t>(1, n / cfg.batch_size);
    Tape tape;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = sample_indices(n, n, batch_rng);
        for (std::size_t step = 0; step < steps; ++step) {
            const std::size_t take = std::min(cfg.batch_size, n - step * cfg.batch_size);
            std::span<const std::size_t> idx(order.data() + step * cfg.batch_size, take);
            Tensor batch = gather_rows(pool.samples, idx);
            std::vector<int> labels;
            labels.reserve(take);
            for (std::size_t i : idx) labels.push_back(pool.labels[i]);
            double loss_value = 0.0;
            {
                TapeScope scope(tape);
                Tensor logits = model.forward_train(batch, nullptr, &dropout_rng);
                Tensor loss = source_ce(log_softmax(logits), labels, cfg.source_reduction);
                loss_value = loss.item();
                if (std::isfinite(loss_value)) tape.backward(loss);
            }
            tape.clear();
            if (!std::isfinite(loss_value)) {
                abort_reason = "non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                               std::to_string(step);
                return false;
            }
            optimizer.step();
        }
    }
    return true;
}

bool train_msdial(const ExperimentConfig& cfg, ModelGraph& model, const ReplicationData& data,
                  std::uint64_t rep_seed, std::vector<double>& entropy_per_epoch,
                  std::string& abort_reason) {
    const std::size_t domain_count = data.sources.size() + 1;
    const std::size_t per_domain = cfg.batch_size / domain_count;
    if (per_domain < 2) {
        throw std::invalid_argument("batch size " + std::to_string(cfg.batch_size) +
                                    " leaves fewer than 2 rows per segment across " +
                                    std::to_string(domain_count) + " domains");
    }
    BatchStream stream(data.sources, data.target_train, per_domain,
                       derive_seed(rep_seed, kBatchStreamTag));
    Adadelta optimizer(model.parameters());
    Rng dropout_rng(derive_seed(rep_seed, kDropoutStream));
    const std::size_t n_source_rows = per_domain * data.sources.size();
    LossConfig loss_cfg{cfg.lambda, cfg.source_reduction, cfg.target_reduction};
    Tape tape;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double entropy_sum = 0.0;
        for (std::size_t step = 0; step < stream.steps_per_epoch(); ++step) {
            DomainBatch batch = stream.next();
            double loss_value = 0.0;
            double entropy_mean = 0.0;
            {
                TapeScope scope(tape);
                Tensor logits = model.forward_train(batch.data, &batch.segments, &dropout_rng);
                Tensor log_probs = log_softmax(logits);
                Tensor ls = source_ce(slice_rows(log_probs, 0, n_source_rows),
                                      batch.source_labels, cfg.source_reduction);
                Tensor lt =
                    target_entropy(slice_rows(log_probs, n_source_rows, per_domain),
                                   cfg.target_reduction);
                Tensor loss = total_loss(ls, lt, loss_cfg);
                loss_value = loss.item();
                entropy_mean = cfg.target_reduction == Reduction::kSum
                                   ? lt.item() / static_cast<double>(per_domain)
                                   : lt.item();
                if (std::isfinite(loss_value)) tape.backward(loss);
            }
            tape.clear();
            if (!std::isfinite(loss_value)) {
                abort_reason = "non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                               std::to_string(step);
                return false;
            }
            optimizer.step();
            entropy_sum += entropy_mean;
        }
        entropy_per_epoch.push_back(entropy_sum / static_cast<double>(stream.steps_per_epoch()));
    }
    return true;
}

struct TrainedReplication {
    ModelGraph model;
    ReplicationData data;
    ReplicationOutcome outcome;
    std::size_t eval_domain = 0;
};

TrainedReplication train_replication(const ExperimentConfig& cfg, std::uint64_t rep_seed) {
    TrainedReplication result;
    result.data = assemble(cfg, rep_seed);
    const std::size_t domain_count = result.data.sources.size() + 1;

    result.model = build_model(cfg, result.data, domain_count, rep_seed);
    bool ok = true;
    switch (cfg.method) {
        case Method::kMsdial: {
            result.model = insert_ms_dial(result.model, domain_count);
            ok = train_msdial(cfg, result.model, result.data, rep_seed,
                              result.outcome.entropy_per_epoch, result.outcome.abort_reason);
            result.eval_domain = domain_count - 1;  // target statistics
            break;
        }
        case Method::kSrc: {
            ok = train_plain(cfg, result.model, merged_source_pool(result.data), rep_seed,
                             result.outcome.abort_reason);
            break;
        }
        case Method::kTar: {
            if (result.data.target_train_truth.size() != result.data.target_train.size()) {
                throw std::invalid_argument(
                    "method=tar needs ground-truth labels for the target training split");
            }
            Pool pool{result.data.target_train.samples, result.data.target_train_truth};
            ok = train_plain(cfg, result.model, pool, rep_seed, result.outcome.abort_reason);
            break;
        }
    }
    if (!ok) {
        result.outcome.aborted = true;
        return result;
    }
    result.outcome.accuracy =
        evaluate_accuracy(result.model, result.data.target_test.samples,
                          result.data.target_test_truth, result.eval_domain);
    return result;
}

ReplicationOutcome run_replication(const ExperimentConfig& cfg, std::uint64_t rep_seed) {
    return train_replication(cfg, rep_seed).outcome;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

std::string format_lambda(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

}  // namespace

std::string method_name(Method method) {
    switch (method) {
        case Method::kSrc:
            return "src";
        case Method::kTar:
            return "tar";
        case Method::kMsdial:
            return "msdial";
    }
    return "unknown";
}

Method parse_method(const std::string& name) {
    if (name == "src") return Method::kSrc;
    if (name == "tar") return Method::kTar;
    if (name == "msdial") return Method::kMsdial;
    throw std::invalid_argument("unknown method '" + name + "' (expected src, tar or msdial)");
}

std::vector<std::string> ExperimentConfig::domain_names() const {
    std::vector<std::string> names;
    for (const NamedAffine& d : synth_domains) names.push_back(d.name);
    for (const FileDomain& d : file_domains) names.push_back(d.name);
    return names;
}

Tensor model_forward_eval_batched(const ModelGraph& model, const Tensor& samples,
                                  std::size_t domain_id, std::size_t chunk) {
    const std::size_t n = samples.extent(0);
    std::vector<Tensor> outputs;
    for (std::size_t start = 0; start < n; start += chunk) {
        const std::size_t take = std::min(chunk, n - start);
        outputs.push_back(model.forward_eval(slice_rows(samples, start, take), domain_id));
    }
    if (outputs.empty()) {
        return model.forward_eval(samples, domain_id);
    }
    return outputs.size() == 1 ? outputs.front() : concat_rows(outputs);
}

double evaluate_accuracy(const ModelGraph& model, const Tensor& samples,
                         std::span<const int> truth, std::size_t domain_id) {
    const std::size_t n = samples.extent(0);
    if (truth.size() != n) {
        throw std::invalid_argument("evaluate_accuracy got " + std::to_string(truth.size()) +
                                    " labels for " + std::to_string(n) + " rows");
    }
    if (n == 0) return 0.0;
    Tensor logits = model_forward_eval_batched(model, samples, domain_id);
    const std::size_t c = logits.extent(1);
    const auto v = logits.values();
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;  // ties break to the lowest class index
        for (std::size_t j = 1; j < c; ++j) {
            if (v[i * c + j] > v[i * c + best]) best = j;
        }
        if (static_cast<int>(best) == truth[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

ResultRecord run_experiment(const ExperimentConfig& cfg) {
    if (cfg.replications < 1) {
        throw std::invalid_argument("replications must be at least 1");
    }
    if (cfg.lambda < 0.0) {
        throw std::invalid_argument("lambda must be non-negative, got " +
                                    std::to_string(cfg.lambda));
    }
    const auto names = cfg.domain_names();
    if (std::find(names.begin(), names.end(), cfg.target_name) == names.end()) {
        throw std::invalid_argument("target '" + cfg.target_name + "' is not a configured domain");
    }

    ResultRecord record;
    record.method = cfg.method;
    record.target_name = cfg.target_name;
    record.lambda = cfg.lambda;
    record.seed = cfg.seed;
    record.replications = cfg.replications;

    for (std::size_t rep = 0; rep < cfg.replications; ++rep) {
        const std::uint64_t rep_seed = derive_seed(cfg.seed, rep);
        ReplicationOutcome outcome = run_replication(cfg, rep_seed);
        if (outcome.aborted) {
            record.aborted.push_back(rep);
            record.abort_reasons.push_back("replication " + std::to_string(rep) + ": " +
                                           outcome.abort_reason);
            continue;
        }
        record.accuracies.push_back(outcome.accuracy);
        if (!outcome.entropy_per_epoch.empty()) {
            record.target_entropy_per_epoch.push_back(std::move(outcome.entropy_per_epoch));
        }
    }

    const std::size_t n = record.accuracies.size();
    if (n > 0) {
        double sum = 0.0;
        for (double a : record.accuracies) sum += a;
        record.mean = sum / static_cast<double>(n);
        if (n > 1) {
            double ss = 0.0;
            for (double a : record.accuracies) ss += (a - record.mean) * (a - record.mean);
            const double sample_std = std::sqrt(ss / static_cast<double>(n - 1));
            record.standard_error = sample_std / std::sqrt(static_cast<double>(n));
        }
    }
    return record;
}

TrainedModel train_single_replication(const ExperimentConfig& cfg, std::size_t replication) {
    const std::uint64_t rep_seed = derive_seed(cfg.seed, replication);
    TrainedReplication trained = train_replication(cfg, rep_seed);
    if (trained.outcome.aborted) {
        throw std::runtime_error("training aborted: " + trained.outcome.abort_reason);
    }
    TrainedModel out;
    out.model = std::move(trained.model);
    out.target_test = std::move(trained.data.target_test);
    out.target_test.labels = std::move(trained.data.target_test_truth);
    out.eval_domain = trained.eval_domain;
    out.accuracy = trained.outcome.accuracy;
    return out;
}

std::vector<ResultRecord> lambda_sweep(const ExperimentConfig& cfg,
                                       const std::vector<double>& lambdas) {
    if (lambdas.empty()) throw std::invalid_argument("lambda_sweep needs at least one value");
    std::vector<double> sorted = lambdas;
    std::sort(sorted.begin(), sorted.end());
    std::vector<ResultRecord> records;
    records.reserve(sorted.size());
    for (double lambda : sorted) {
        ExperimentConfig with_lambda = cfg;
        with_lambda.lambda = lambda;
        records.push_back(run_experiment(with_lambda));
    }
    return records;
}

void export_features(const ModelGraph& model, const DomainDataset& dataset, std::size_t boundary,
                     const std::string& path) {
    if (boundary == 0 || boundary > model.nodes().size()) {
        throw std::invalid_argument("export_features boundary " + std::to_string(boundary) +
                                    " outside [1, " + std::to_string(model.nodes().size()) + "]");
    }
    Tensor features;
    if (dataset.size() == 0) {
        features = Tensor::zeros({0, 0});
    } else {
        const std::size_t n = dataset.size();
        std::vector<Tensor> chunks;
        constexpr std::size_t kChunk = 512;
        for (std::size_t start = 0; start < n; start += kChunk) {
            const std::size_t take = std::min(kChunk, n - start);
            Tensor h = model.forward_eval(slice_rows(dataset.samples, start, take),
                                          dataset.domain_id, boundary);
            if (h.rank() != 2) h = reshape(h, {take, h.numel() / take});
            chunks.push_back(h);
        }
        features = chunks.size() == 1 ? chunks.front() : concat_rows(chunks);
    }
    save_feature_table(path, features, dataset.labels);
}

void export_features(const ModelGraph& model, const DomainDataset& dataset,
                     const std::string& path) {
    export_features(model, dataset, model.final_classifier_index(), path);
}

double relative_gain_percent(double adapted, double baseline) {
    if (baseline == 0.0) {
        throw std::invalid_argument("relative gain undefined for a zero baseline");
    }
    return 100.0 * (adapted - baseline) / baseline;
}

std::string format_gain(double percent) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%+.2f%%", percent);
    return buf;
}

void emit_results(const std::vector<ResultRecord>& records, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out << "method,target,mean,stderr,replications,lambda,seed,relative_gain\n";
    for (const ResultRecord& record : records) {
        std::string gain;
        if (record.method == Method::kMsdial) {
            for (const ResultRecord& other : records) {
                if (other.method == Method::kSrc && other.target_name == record.target_name &&
                    other.mean != 0.0) {
                    gain = format_gain(relative_gain_percent(record.mean, other.mean));
                    break;
                }
            }
        }
        out << method_name(record.method) << ',' << record.target_name << ','
            << format_double(record.mean) << ',' << format_double(record.standard_error) << ','
            << record.replications << ',' << format_lambda(record.lambda) << ',' << record.seed
            << ',' << gain << '\n';
        for (const std::string& reason : record.abort_reasons) {
            out << "# aborted: " << reason << '\n';
        }
    }
    if (!out) throw std::runtime_error(path + ": write failed");
}

void pca_project(const std::string& table_path, const std::string& out_path) {
    DomainDataset ds = load_feature_table(table_path);
    const std::size_t n = ds.size();
    if (n < 3) {
        throw std::invalid_argument("pca_project needs at least 3 rows, got " +
                                    std::to_string(n));
    }
    const std::size_t dim = ds.samples.extent(1);
    if (dim < 2) {
        throw std::invalid_argument("pca_project needs at least 2 feature dimensions, got " +
                                    std::to_string(dim));
    }
    const auto v = ds.samples.values();
    Eigen::MatrixXd x(n, dim);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < dim; ++j) x(i, j) = v[i * dim + j];
    }
    const Eigen::RowVectorXd mean = x.colwise().mean();
    x.rowwise() -= mean;
    const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eigen(cov);
    if (eigen.info() != Eigen::Success) {
        throw std::runtime_error("pca_project: eigendecomposition failed");
    }
    const auto& values = eigen.eigenvalues();  // ascending
    const double top = values(dim - 1);
    if (top <= 1e-12) {
        throw std::invalid_argument("pca_project: degenerate rank-0 data (all rows identical)");
    }
    Eigen::MatrixXd components(dim, 2);
    components.col(0) = eigen.eigenvectors().col(dim - 1);
    components.col(1) = eigen.eigenvectors().col(dim - 2);
    for (int c = 0; c < 2; ++c) {
        Eigen::Index max_row;
        components.col(c).cwiseAbs().maxCoeff(&max_row);
        if (components(max_row, c) < 0.0) components.col(c) = -components.col(c);
    }
    const Eigen::MatrixXd projected = x * components;

    std::ofstream out(out_path);
    if (!out) throw std::runtime_error(out_path + ": cannot open for writing");
    out << "x,y,label\n";
    out.precision(17);
    for (std::size_t i = 0; i < n; ++i) {
        const int label = ds.labeled() ? ds.labels[i] : -1;
        out << projected(i, 0) << ',' << projected(i, 1) << ',' << label << '\n';
    }
    if (!out) throw std::runtime_error(out_path + ": write failed");
}

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        const std::size_t next = s.find(sep, pos);
        if (next == std::string::npos) {
            parts.push_back(s.substr(pos));
            break;
        }
        parts.push_back(s.substr(pos, next - pos));
        pos = next + 1;
    }
    return parts;
}

std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> parts;
    std::istringstream in(s);
    std::string token;
    while (in >> token) parts.push_back(token);
    return parts;
}

std::vector<double> parse_double_list(const std::string& s, const std::string& what) {
    std::vector<double> out;
    for (const std::string& part : split(s, ',')) {
        try {
            out.push_back(std::stod(trim(part)));
        } catch (const std::exception&) {
            throw std::invalid_argument("malformed " + what + " value '" + part + "'");
        }
    }
    return out;
}

Reduction parse_reduction(const std::string& s) {
    if (s == "mean") return Reduction::kMean;
    if (s == "sum") return Reduction::kSum;
    throw std::invalid_argument("unknown reduction '" + s + "' (expected mean or sum)");
}

NamedAffine parse_synth_domain(const std::string& value, std::size_t latent_dim,
                               const std::string& origin, std::size_t line_no) {
    const auto tokens = split_ws(value);
    if (tokens.empty()) {
        throw std::invalid_argument(origin + " line " + std::to_string(line_no) +
                                    ": synth_domain needs a name");
    }
    NamedAffine domain;
    domain.name = tokens[0];
    double scale = 1.0;
    double offset = 0.0;
    std::vector<double> scales;
    std::vector<double> offsets;
    for (std::size_t i = 1; i < tokens.size(); ++i) {
        const auto kv = split(tokens[i], '=');
        if (kv.size() != 2) {
            throw std::invalid_argument(origin + " line " + std::to_string(line_no) +
                                        ": malformed token '" + tokens[i] + "'");
        }
        if (kv[0] == "scale") {
            scale = std::stod(kv[1]);
        } else if (kv[0] == "offset") {
            offset = std::stod(kv[1]);
        } else if (kv[0] == "scales") {
            scales = parse_double_list(kv[1], "scales");
        } else if (kv[0] == "offsets") {
            offsets = parse_double_list(kv[1], "offsets");
        } else {
            throw std::invalid_argument(origin + " line " + std::to_string(line_no) +
                                        ": unknown synth_domain key '" + kv[0] + "'");
        }
    }
    if (!scales.empty() || !offsets.empty()) {
        if (scales.empty()) scales.assign(latent_dim, scale);
        if (offsets.empty()) offsets.assign(latent_dim, offset);
        domain.map = AffineMap::diagonal(std::move(scales), std::move(offsets));
    } else {
        domain.map = AffineMap::uniform_scale(latent_dim, scale, offset);
    }
    return domain;
}

FileDomain parse_file_domain(const std::string& value, const std::string& origin,
                             std::size_t line_no) {
    const auto tokens = split_ws(value);
    if (tokens.empty()) {
        throw std::invalid_argument(origin + " line " + std::to_string(line_no) +
                                    ": domain needs a name");
    }
    FileDomain domain;
    domain.name = tokens[0];
    for (std::size_t i = 1; i < tokens.size(); ++i) {
        const std::size_t eq = tokens[i].find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument(origin + " line " + std::to_string(line_no) +
                                        ": malformed token '" + tokens[i] + "'");
        }
        const std::string key = tokens[i].substr(0, eq);
        const std::string val = tokens[i].substr(eq + 1);
        if (key == "train") {
            domain.train_path = val;
        } else if (key == "test") {
            domain.test_path = val;
        } else if (key == "train_labels") {
            domain.train_labels_path = val;
        } else if (key == "test_labels") {
            domain.test_labels_path = val;
        } else {
            throw std::invalid_argument(origin + " line " + std::to_string(line_no) +
                                        ": unknown domain key '" + key + "'");
        }
    }
    if (domain.train_path.empty() || domain.test_path.empty()) {
        throw std::invalid_argument(origin + " line " + std::to_string(line_no) + ": domain '" +
                                    domain.name + "' needs train= and test= paths");
    }
    return domain;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    // synth_domain lines may precede synth_latent_dim; resolve maps last.
    std::vector<std::pair<std::size_t, std::string>> synth_domain_lines;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const std::size_t eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument(origin + " line " + std::to_string(line_no) +
                                        ": expected 'key = value'");
        }
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        try {
            if (key == "task") {
                if (value == "digits") {
                    cfg.task = Task::kDigits;
                } else if (value == "features") {
                    cfg.task = Task::kFeatures;
                } else {
                    throw std::invalid_argument("unknown task '" + value + "'");
                }
            } else if (key == "method") {
                cfg.method = parse_method(value);
            } else if (key == "target") {
                cfg.target_name = value;
            } else if (key == "lambda") {
                cfg.lambda = std::stod(value);
            } else if (key == "epochs") {
                cfg.epochs = std::stoul(value);
            } else if (key == "batch_size") {
                cfg.batch_size = std::stoul(value);
            } else if (key == "replications") {
                cfg.replications = std::stoul(value);
            } else if (key == "seed") {
                cfg.seed = std::stoull(value);
            } else if (key == "source_reduction") {
                cfg.source_reduction = parse_reduction(value);
            } else if (key == "target_reduction") {
                cfg.target_reduction = parse_reduction(value);
            } else if (key == "hidden_sizes") {
                cfg.hidden_sizes.clear();
                for (double v : parse_double_list(value, "hidden_sizes")) {
                    cfg.hidden_sizes.push_back(static_cast<std::size_t>(v));
                }
            } else if (key == "output_dir") {
                cfg.output_dir = value;
            } else if (key == "class_count") {
                cfg.class_count = std::stoul(value);
            } else if (key == "subsample_train") {
                cfg.subsample_train = std::stoul(value);
            } else if (key == "subsample_test") {
                cfg.subsample_test = std::stoul(value);
            } else if (key == "synth_latent_dim") {
                cfg.synth_latent_dim = std::stoul(value);
            } else if (key == "synth_classes") {
                cfg.synth_classes = std::stoul(value);
            } else if (key == "synth_separation") {
                cfg.synth_separation = std::stod(value);
            } else if (key == "synth_train_per_domain") {
                cfg.synth_train_per_domain = std::stoul(value);
            } else if (key == "synth_test_per_domain") {
                cfg.synth_test_per_domain = std::stoul(value);
            } else if (key == "synth_domain") {
                synth_domain_lines.emplace_back(line_no, value);
            } else if (key == "domain") {
                cfg.file_domains.push_back(parse_file_domain(value, origin, line_no));
            } else {
                throw std::invalid_argument("unknown key '" + key + "'");
            }
        } catch (const std::invalid_argument&) {
            throw;
        } catch (const std::exception&) {
            throw std::invalid_argument(origin + " line " + std::to_string(line_no) +
                                        ": malformed value '" + value + "' for key '" + key + "'");
        }
    }
    for (const auto& [no, value] : synth_domain_lines) {
        cfg.synth_domains.push_back(parse_synth_domain(value, cfg.synth_latent_dim, origin, no));
    }
    return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(path + ": cannot open");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_config_text(buffer.str(), path);
}

}  // namespace msdial
