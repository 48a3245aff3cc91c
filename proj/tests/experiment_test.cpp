#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "msdial/experiment.hpp"
#include "test_support.hpp"

namespace msdial {
namespace {

std::string temp_path(const std::string& name) {
    return testing::TempDir() + "msdial_exp_" + name;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

// Small synthetic setup: two scaled/shifted sources plus a strongly shifted
// target, sized for fast unit runs.
ExperimentConfig small_synth_config() {
    ExperimentConfig cfg;
    cfg.task = Task::kFeatures;
    cfg.target_name = "t";
    cfg.method = Method::kMsdial;
    cfg.lambda = 0.001;
    cfg.epochs = 8;
    cfg.batch_size = 24;
    cfg.replications = 1;
    cfg.seed = 3;
    cfg.hidden_sizes = {16, 8};
    cfg.synth_latent_dim = 4;
    cfg.synth_classes = 2;
    cfg.synth_train_per_domain = 400;
    cfg.synth_test_per_domain = 800;
    cfg.synth_domains = {
        {"s0", AffineMap::uniform_scale(4, 1.0, 0.0)},
        {"s1", AffineMap::uniform_scale(4, 1.4, 1.0)},
        {"t", AffineMap::uniform_scale(4, 3.0, 10.0)},
    };
    return cfg;
}

TEST(RunExperimentTest, ValidatesConfig) {
    ExperimentConfig cfg = small_synth_config();
    cfg.replications = 0;
    EXPECT_THROW(run_experiment(cfg), std::invalid_argument);

    cfg = small_synth_config();
    cfg.target_name = "nope";
    EXPECT_THROW(run_experiment(cfg), std::invalid_argument);

    cfg = small_synth_config();
    cfg.lambda = -1.0;
    EXPECT_THROW(run_experiment(cfg), std::invalid_argument);

    cfg = small_synth_config();
    cfg.synth_domains.clear();
    EXPECT_THROW(run_experiment(cfg), std::invalid_argument);
}

TEST(RunExperimentTest, RecordsOneAccuracyPerReplication) {
    ExperimentConfig cfg = small_synth_config();
    cfg.epochs = 1;
    cfg.synth_train_per_domain = 120;
    cfg.synth_test_per_domain = 120;
    cfg.replications = 20;
    ResultRecord record = run_experiment(cfg);
    EXPECT_EQ(record.accuracies.size(), 20u);
    EXPECT_EQ(record.replications, 20u);
    EXPECT_TRUE(record.aborted.empty());
    for (double a : record.accuracies) {
        EXPECT_GE(a, 0.0);
        EXPECT_LE(a, 1.0);
    }
    // standard error = sample std / sqrt(n)
    double mean = 0.0;
    for (double a : record.accuracies) mean += a;
    mean /= 20.0;
    double ss = 0.0;
    for (double a : record.accuracies) ss += (a - mean) * (a - mean);
    const double expected_se = std::sqrt(ss / 19.0) / std::sqrt(20.0);
    EXPECT_DOUBLE_EQ(record.mean, mean);
    EXPECT_DOUBLE_EQ(record.standard_error, expected_se);
}

TEST(RunExperimentTest, TarLearnsTheTargetQuickly) {
    ExperimentConfig cfg = small_synth_config();
    cfg.method = Method::kTar;
    cfg.epochs = 15;
    ResultRecord record = run_experiment(cfg);
    ASSERT_EQ(record.accuracies.size(), 1u);
    EXPECT_GT(record.mean, 0.90);  // reduced-size smoke; the full check is in acceptance
}

TEST(RunExperimentTest, NoShiftControlKeepsSrcCloseToTar) {
    ExperimentConfig cfg = small_synth_config();
    cfg.synth_domains = {
        {"s0", AffineMap::identity(4)},
        {"s1", AffineMap::identity(4)},
        {"t", AffineMap::identity(4)},
    };
    cfg.epochs = 15;
    cfg.method = Method::kSrc;
    ResultRecord src = run_experiment(cfg);
    cfg.method = Method::kTar;
    ResultRecord tar = run_experiment(cfg);
    EXPECT_NEAR(src.mean, tar.mean, 0.05);  // identical domains, no adaptation gap
}

TEST(RunExperimentTest, EqualSeedsGiveBitwiseIdenticalRecords) {
    ExperimentConfig cfg = small_synth_config();
    cfg.epochs = 3;
    cfg.replications = 2;
    ResultRecord a = run_experiment(cfg);
    ResultRecord b = run_experiment(cfg);
    ASSERT_EQ(a.accuracies.size(), b.accuracies.size());
    for (std::size_t i = 0; i < a.accuracies.size(); ++i) {
        EXPECT_EQ(a.accuracies[i], b.accuracies[i]);
    }
    ASSERT_EQ(a.target_entropy_per_epoch.size(), b.target_entropy_per_epoch.size());
    EXPECT_EQ(a.target_entropy_per_epoch, b.target_entropy_per_epoch);

    cfg.seed = 99;
    ResultRecord c = run_experiment(cfg);
    EXPECT_NE(a.accuracies, c.accuracies);  // a different seed must change the draw
}

// Writes the generated synthetic domains to feature tables so the file
// pipeline (and its label handling) gets exercised end to end.
ExperimentConfig file_backed_config(const std::string& tag, bool poison_target_train_truth,
                                    bool inject_inf_into_source = false) {
    SyntheticShiftSpec spec;
    spec.latent_dim = 4;
    spec.class_count = 2;
    spec.train_per_domain = 120;
    spec.test_per_domain = 120;
    spec.seed = 17;
    spec.domain_maps = {AffineMap::identity(4), AffineMap::uniform_scale(4, 1.5, 2.0),
                        AffineMap::uniform_scale(4, 2.0, 6.0)};
    SynthDomains domains = synth_affine_domains(spec);

    ExperimentConfig cfg;
    cfg.task = Task::kFeatures;
    cfg.target_name = "t";
    cfg.method = Method::kMsdial;
    cfg.epochs = 2;
    cfg.batch_size = 12;
    cfg.replications = 1;
    cfg.seed = 5;
    cfg.hidden_sizes = {8};

    const std::vector<std::string> names = {"s0", "s1", "t"};
    for (std::size_t d = 0; d < 3; ++d) {
        FileDomain fd;
        fd.name = names[d];
        fd.train_path = temp_path(tag + "_" + names[d] + "_train.tsv");
        fd.test_path = temp_path(tag + "_" + names[d] + "_test.tsv");
        std::vector<int> train_labels = d == 2 ? domains.target_train_truth : domains.train[d].labels;
        std::vector<int> test_labels = d == 2 ? domains.target_test_truth : domains.test[d].labels;
        if (d == 2 && poison_target_train_truth) {
            for (int& label : train_labels) label = 1 - label;  // garbage ground truth
        }
        Tensor train_samples = domains.train[d].samples;
        if (d == 0 && inject_inf_into_source) {
            train_samples = train_samples.clone();
            auto v = train_samples.mutable_values();
            for (std::size_t i = 0; i < 8; ++i) {
                v[i] = (i % 2 == 0 ? 1.0 : -1.0) * std::numeric_limits<double>::infinity();
            }
        }
        save_feature_table(fd.train_path, train_samples, train_labels);
        save_feature_table(fd.test_path, domains.test[d].samples, test_labels);
        cfg.file_domains.push_back(fd);
    }
    return cfg;
}

TEST(RunExperimentTest, TargetTrainTruthNeverInfluencesMsdialOrSrc) {
    ExperimentConfig clean = file_backed_config("clean", false);
    ExperimentConfig poisoned = file_backed_config("poison", true);

    for (Method method : {Method::kMsdial, Method::kSrc}) {
        clean.method = method;
        poisoned.method = method;
        ResultRecord a = run_experiment(clean);
        ResultRecord b = run_experiment(poisoned);
        ASSERT_EQ(a.accuracies.size(), 1u);
        EXPECT_EQ(a.accuracies[0], b.accuracies[0])
            << "poisoned target training labels leaked into " << method_name(method);
    }

    // tar reads the ground truth, so poisoning must change it.
    clean.method = Method::kTar;
    poisoned.method = Method::kTar;
    clean.epochs = 5;
    poisoned.epochs = 5;
    ResultRecord a = run_experiment(clean);
    ResultRecord b = run_experiment(poisoned);
    EXPECT_NE(a.accuracies[0], b.accuracies[0]);
}

TEST(RunExperimentTest, NaNLossAbortsAndReportsTheReplication) {
    ExperimentConfig cfg = file_backed_config("inf", false, /*inject_inf_into_source=*/true);
    ResultRecord record = run_experiment(cfg);
    EXPECT_TRUE(record.accuracies.empty());
    ASSERT_EQ(record.aborted.size(), 1u);
    EXPECT_EQ(record.aborted[0], 0u);
    ASSERT_EQ(record.abort_reasons.size(), 1u);
    EXPECT_NE(record.abort_reasons[0].find("non-finite loss"), std::string::npos);
}

TEST(LambdaSweepTest, RunsGridInAscendingOrder) {
    ExperimentConfig cfg = small_synth_config();
    cfg.epochs = 1;
    cfg.synth_train_per_domain = 96;
    cfg.synth_test_per_domain = 96;
    const std::vector<double> grid = {0.01, 0.001, 0.1};  // deliberately unsorted
    auto records = lambda_sweep(cfg, grid);
    ASSERT_EQ(records.size(), 3u);
    EXPECT_DOUBLE_EQ(records[0].lambda, 0.001);
    EXPECT_DOUBLE_EQ(records[1].lambda, 0.01);
    EXPECT_DOUBLE_EQ(records[2].lambda, 0.1);

    EXPECT_THROW(lambda_sweep(cfg, {}), std::invalid_argument);

    // lambda = 0 degenerates to supervised training with per-domain
    // normalization only; it must run cleanly.
    cfg.lambda = 0.0;
    ResultRecord record = run_experiment(cfg);
    EXPECT_EQ(record.accuracies.size(), 1u);
}

TEST(ExportFeaturesTest, FeatureMlpExportsPenultimateWidth) {
    Rng rng(271);
    ArchitectureSpec spec;
    spec.task = Task::kFeatures;
    spec.class_count = 31;
    ModelGraph model = build_feature_mlp(spec, rng);  // ... -> 100 -> classifier

    DomainDataset ds;
    ds.name = "probe";
    ds.samples = randn({5, 2048}, rng);
    ds.labels = {0, 1, 2, 3, 4};
    const std::string path = temp_path("export100.tsv");
    export_features(model, ds, path);

    DomainDataset reloaded = load_feature_table(path);
    EXPECT_EQ(reloaded.samples.shape(), (Shape{5, 100}));
    EXPECT_EQ(reloaded.labels, ds.labels);
}

TEST(ExportFeaturesTest, EmptyDatasetWritesHeaderOnly) {
    Rng rng(277);
    ArchitectureSpec spec;
    spec.task = Task::kFeatures;
    spec.class_count = 3;
    spec.input_dim = 6;
    spec.hidden_sizes = {4};
    ModelGraph model = build_feature_mlp(spec, rng);

    DomainDataset ds;
    ds.samples = Tensor::zeros({0, 6});
    const std::string path = temp_path("export_empty.tsv");
    export_features(model, ds, path);
    const std::string text = read_file(path);
    EXPECT_EQ(text.rfind("#", 0), 0u);                    // starts with the header
    EXPECT_EQ(text.find('\n'), text.size() - 1);          // and has no data lines
    EXPECT_EQ(load_feature_table(path).size(), 0u);
}

TEST(ExportFeaturesTest, InvalidBoundaryIsAnError) {
    Rng rng(281);
    ArchitectureSpec spec;
    spec.task = Task::kFeatures;
    spec.class_count = 3;
    spec.input_dim = 6;
    spec.hidden_sizes = {4};
    ModelGraph model = build_feature_mlp(spec, rng);
    DomainDataset ds;
    ds.samples = Tensor::zeros({2, 6});
    EXPECT_THROW(export_features(model, ds, 0, temp_path("bad.tsv")), std::invalid_argument);
    EXPECT_THROW(export_features(model, ds, model.nodes().size() + 1, temp_path("bad.tsv")),
                 std::invalid_argument);
}

// Test-side eigensolver: power iteration with deflation, independent of the
// library's decomposition route.
double power_iteration_top_eigenvalue(std::vector<double>& cov, std::size_t d) {
    std::vector<double> v(d, 0.0);
    v[0] = 1.0;
    v[d > 1 ? 1 : 0] += 0.5;
    for (int iter = 0; iter < 1000; ++iter) {
        std::vector<double> next(d, 0.0);
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < d; ++j) next[i] += cov[i * d + j] * v[j];
        }
        double norm = 0.0;
        for (double x : next) norm += x * x;
        norm = std::sqrt(norm);
        for (std::size_t i = 0; i < d; ++i) v[i] = next[i] / norm;
    }
    double lambda = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < d; ++j) row += cov[i * d + j] * v[j];
        lambda += v[i] * row;
    }
    // deflate in place
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) cov[i * d + j] -= lambda * v[i] * v[j];
    }
    return lambda;
}

TEST(PcaTest, CenteredTwoDimensionalDataIsRotated) {
    Rng rng(283);
    const std::size_t n = 64;
    Tensor raw = randn({n, 2}, rng);
    // center columns
    auto v = raw.mutable_values();
    for (std::size_t j = 0; j < 2; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += v[i * 2 + j];
        mean /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) v[i * 2 + j] -= mean;
    }
    const std::string table = temp_path("pca2d.tsv");
    const std::string out = temp_path("pca2d.csv");
    save_feature_table(table, raw, {});
    pca_project(table, out);

    // Parse the projection and compare pairwise distances.
    std::ifstream in(out);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "x,y,label");
    std::vector<std::pair<double, double>> points;
    while (std::getline(in, line)) {
        const auto first = line.find(',');
        const auto second = line.find(',', first + 1);
        points.emplace_back(std::stod(line.substr(0, first)),
                            std::stod(line.substr(first + 1, second - first - 1)));
    }
    ASSERT_EQ(points.size(), n);
    for (std::size_t i = 0; i < 10; ++i) {
        for (std::size_t j = i + 1; j < 10; ++j) {
            const double orig = std::hypot(v[i * 2] - v[j * 2], v[i * 2 + 1] - v[j * 2 + 1]);
            const double proj = std::hypot(points[i].first - points[j].first,
                                           points[i].second - points[j].second);
            EXPECT_NEAR(orig, proj, 1e-9);
        }
    }
}

TEST(PcaTest, RankOneDataHasVanishingSecondCoordinate) {
    Rng rng(293);
    const std::size_t n = 32;
    std::vector<double> data(n * 3);
    for (std::size_t i = 0; i < n; ++i) {
        std::normal_distribution<double> dist;
        const double t = dist(rng);
        data[i * 3] = 2.0 * t;
        data[i * 3 + 1] = -t;
        data[i * 3 + 2] = 0.5 * t;
    }
    const std::string table = temp_path("pca_rank1.tsv");
    const std::string out = temp_path("pca_rank1.csv");
    save_feature_table(table, Tensor::from({n, 3}, std::move(data)), {});
    pca_project(table, out);

    std::ifstream in(out);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        const auto first = line.find(',');
        const auto second = line.find(',', first + 1);
        const double y = std::stod(line.substr(first + 1, second - first - 1));
        EXPECT_NEAR(y, 0.0, 1e-9);
    }
}

TEST(PcaTest, CapturedVarianceMatchesTopTwoEigenvalues) {
    Rng rng(307);
    const std::size_t n = 200;
    const std::size_t d = 100;
    Tensor data = randn({n, d}, rng);
    // stretch a few directions so the spectrum has clear leaders
    auto v = data.mutable_values();
    for (std::size_t i = 0; i < n; ++i) {
        v[i * d] *= 5.0;
        v[i * d + 1] *= 3.0;
    }
    const std::string table = temp_path("pca100.tsv");
    const std::string out = temp_path("pca100.csv");
    save_feature_table(table, data, {});
    pca_project(table, out);

    // sample covariance for the oracle
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) mean[j] += v[i * d + j];
    }
    for (double& m : mean) m /= static_cast<double>(n);
    std::vector<double> cov(d * d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t a = 0; a < d; ++a) {
            const double da = v[i * d + a] - mean[a];
            for (std::size_t b = 0; b < d; ++b) {
                cov[a * d + b] += da * (v[i * d + b] - mean[b]);
            }
        }
    }
    for (double& c : cov) c /= static_cast<double>(n - 1);
    const double top1 = power_iteration_top_eigenvalue(cov, d);
    const double top2 = power_iteration_top_eigenvalue(cov, d);

    // captured variance of the projection
    std::ifstream in(out);
    std::string line;
    std::getline(in, line);
    std::vector<double> xs;
    std::vector<double> ys;
    while (std::getline(in, line)) {
        const auto first = line.find(',');
        const auto second = line.find(',', first + 1);
        xs.push_back(std::stod(line.substr(0, first)));
        ys.push_back(std::stod(line.substr(first + 1, second - first - 1)));
    }
    auto sample_var = [&](const std::vector<double>& col) {
        double m = 0.0;
        for (double x : col) m += x;
        m /= static_cast<double>(col.size());
        double ss = 0.0;
        for (double x : col) ss += (x - m) * (x - m);
        return ss / static_cast<double>(col.size() - 1);
    };
    const double captured = sample_var(xs) + sample_var(ys);
    EXPECT_NEAR(captured, top1 + top2, 1e-6 * (top1 + top2));
}

TEST(PcaTest, DegenerateInputsAreRejected) {
    const std::string table = temp_path("pca_degenerate.tsv");
    save_feature_table(table, Tensor::full({5, 3}, 2.5), {});
    EXPECT_THROW(pca_project(table, temp_path("pca_degenerate.csv")), std::invalid_argument);

    const std::string tiny = temp_path("pca_tiny.tsv");
    save_feature_table(tiny, Tensor::zeros({2, 3}), {});
    EXPECT_THROW(pca_project(tiny, temp_path("pca_tiny.csv")), std::invalid_argument);
}

TEST(EmitResultsTest, GainColumnPairsSrcAndMsdial) {
    ResultRecord src;
    src.method = Method::kSrc;
    src.target_name = "t";
    src.mean = 0.70;
    src.standard_error = 0.01;
    src.replications = 5;
    src.lambda = 0.001;
    src.seed = 1;
    ResultRecord dial = src;
    dial.method = Method::kMsdial;
    dial.mean = 0.84;

    const std::string path = temp_path("results.csv");
    emit_results({src, dial}, path);
    const std::string text = read_file(path);
    EXPECT_NE(text.find("method,target,mean,stderr,replications,lambda,seed,relative_gain"),
              std::string::npos);
    EXPECT_NE(text.find("src,t,0.700000,0.010000,5,0.001,1,\n"), std::string::npos);
    EXPECT_NE(text.find("msdial,t,0.840000,0.010000,5,0.001,1,+20.00%\n"), std::string::npos);

    // A lone record has no gain value.
    emit_results({dial}, path);
    EXPECT_NE(read_file(path).find("msdial,t,0.840000,0.010000,5,0.001,1,\n"), std::string::npos);
}

TEST(EmitResultsTest, GainConventionMatchesReportedTable) {
    const double gain = relative_gain_percent(62.63, 47.94);
    EXPECT_NEAR(gain, 30.64, 0.005);
    EXPECT_EQ(format_gain(gain), "+30.64%");
    EXPECT_EQ(format_gain(relative_gain_percent(0.84, 0.70)), "+20.00%");
    EXPECT_EQ(format_gain(relative_gain_percent(0.63, 0.70)), "-10.00%");
    EXPECT_THROW(relative_gain_percent(1.0, 0.0), std::invalid_argument);
}

TEST(EmitResultsTest, UnwritablePathIsAnError) {
    EXPECT_THROW(emit_results({}, "/nonexistent_dir_zzz/results.csv"), std::runtime_error);
}

TEST(ConfigParseTest, FullKeyCoverage) {
    const std::string text = R"(
# experiment
task = features
method = src
target = t
lambda = 0.005
epochs = 12
batch_size = 48
replications = 7
seed = 42
source_reduction = sum
target_reduction = mean
hidden_sizes = 32,16
output_dir = out
synth_latent_dim = 6
synth_classes = 3
synth_separation = 1.5
synth_train_per_domain = 256
synth_test_per_domain = 512
synth_domain = s0 scale=1.0 offset=0.0
synth_domain = s1 scales=1,2,1,1,1,1 offsets=0,1,0,0,0,0
synth_domain = t scale=2.5 offset=4.0
)";
    ExperimentConfig cfg = parse_config_text(text);
    EXPECT_EQ(cfg.task, Task::kFeatures);
    EXPECT_EQ(cfg.method, Method::kSrc);
    EXPECT_EQ(cfg.target_name, "t");
    EXPECT_DOUBLE_EQ(cfg.lambda, 0.005);
    EXPECT_EQ(cfg.epochs, 12u);
    EXPECT_EQ(cfg.batch_size, 48u);
    EXPECT_EQ(cfg.replications, 7u);
    EXPECT_EQ(cfg.seed, 42u);
    EXPECT_EQ(cfg.source_reduction, Reduction::kSum);
    EXPECT_EQ(cfg.target_reduction, Reduction::kMean);
    EXPECT_EQ(cfg.hidden_sizes, (std::vector<std::size_t>{32, 16}));
    EXPECT_EQ(cfg.output_dir, "out");
    EXPECT_EQ(cfg.synth_latent_dim, 6u);
    ASSERT_EQ(cfg.synth_domains.size(), 3u);
    EXPECT_EQ(cfg.synth_domains[1].map.matrix[1 * 6 + 1], 2.0);
    EXPECT_EQ(cfg.synth_domains[1].map.offset[1], 1.0);
    EXPECT_EQ(cfg.synth_domains[2].map.matrix[0], 2.5);

    EXPECT_THROW(parse_config_text("bogus_key = 1"), std::invalid_argument);
    EXPECT_THROW(parse_config_text("task features"), std::invalid_argument);
    EXPECT_THROW(parse_config_text("method = adversarial"), std::invalid_argument);
}

TEST(ConfigParseTest, FileDomainsAndRunnableEndToEnd) {
    ExperimentConfig base = file_backed_config("cfg", false);
    std::ostringstream text;
    text << "task = features\nmethod = msdial\ntarget = t\nepochs = 1\nbatch_size = 12\n"
         << "replications = 1\nseed = 5\nhidden_sizes = 8\n";
    for (const FileDomain& fd : base.file_domains) {
        text << "domain = " << fd.name << " train=" << fd.train_path << " test=" << fd.test_path
             << "\n";
    }
    ExperimentConfig cfg = parse_config_text(text.str());
    ASSERT_EQ(cfg.file_domains.size(), 3u);
    ResultRecord record = run_experiment(cfg);
    EXPECT_EQ(record.accuracies.size(), 1u);
}

}  // namespace
}  // namespace msdial
