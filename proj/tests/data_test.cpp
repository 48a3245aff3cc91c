#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "msdial/data.hpp"
#include "test_support.hpp"

namespace msdial {
namespace {

using test::expect_bitwise_equal;

std::string temp_path(const std::string& name) {
    return testing::TempDir() + "msdial_" + name;
}

DomainDataset labeled_domain(std::size_t n, std::size_t dim, double offset, Rng& rng,
                             const std::string& name) {
    DomainDataset ds;
    ds.name = name;
    ds.samples = add(randn({n, dim}, rng), Tensor::scalar(offset));
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) ds.labels[i] = static_cast<int>(i % 2);
    return ds;
}

SyntheticShiftSpec two_class_spec(std::size_t domains, std::size_t latent_dim = 4) {
    SyntheticShiftSpec spec;
    spec.latent_dim = latent_dim;
    spec.class_count = 2;
    spec.train_per_domain = 400;
    spec.test_per_domain = 400;
    spec.seed = 7;
    for (std::size_t d = 0; d < domains; ++d) {
        spec.domain_maps.push_back(AffineMap::identity(latent_dim));
    }
    return spec;
}

TEST(ComposeBatchTest, DigitProtocolBatchOf128) {
    Rng data_rng(221);
    std::vector<DomainDataset> sources;
    for (int d = 0; d < 3; ++d) {
        sources.push_back(labeled_domain(200, 4, d, data_rng, "s" + std::to_string(d)));
        sources.back().domain_id = d;
    }
    DomainDataset target;
    target.name = "target";
    target.domain_id = 3;
    target.samples = randn({200, 4}, data_rng);

    Rng rng(1);
    DomainBatch batch = compose_batch(sources, target, 32, rng);
    EXPECT_EQ(batch.data.shape(), (Shape{128, 4}));
    ASSERT_EQ(batch.segments.segments().size(), 4u);
    for (const DomainSegment& seg : batch.segments.segments()) EXPECT_EQ(seg.count, 32u);
    EXPECT_TRUE(batch.segments.canonical_order());
    EXPECT_EQ(batch.source_labels.size(), 96u);

    Rng rng_small(1);
    DomainBatch small = compose_batch(sources, target, 8, rng_small);
    EXPECT_EQ(small.data.shape(), (Shape{32, 4}));
}

TEST(ComposeBatchTest, SameSeedSameBatchBitwise) {
    Rng data_rng(223);
    std::vector<DomainDataset> sources = {labeled_domain(50, 3, 0.0, data_rng, "s0")};
    DomainDataset target;
    target.name = "t";
    target.samples = randn({50, 3}, data_rng);

    Rng rng_a(42);
    Rng rng_b(42);
    DomainBatch a = compose_batch(sources, target, 8, rng_a);
    DomainBatch b = compose_batch(sources, target, 8, rng_b);
    expect_bitwise_equal(a.data, b.data);
    EXPECT_EQ(a.source_labels, b.source_labels);
}

TEST(ComposeBatchTest, RejectsTinySegmentsAndShortDomains) {
    Rng data_rng(227);
    std::vector<DomainDataset> sources = {labeled_domain(50, 3, 0.0, data_rng, "s0")};
    DomainDataset target;
    target.name = "t";
    target.samples = randn({4, 3}, data_rng);

    Rng rng(1);
    EXPECT_THROW(compose_batch(sources, target, 1, rng), std::invalid_argument);
    EXPECT_THROW(compose_batch(sources, target, 8, rng), std::invalid_argument);
}

TEST(BatchStreamTest, EpochFollowsSmallestDomain) {
    Rng data_rng(229);
    std::vector<DomainDataset> sources = {labeled_domain(100, 3, 0.0, data_rng, "s0"),
                                          labeled_domain(64, 3, 1.0, data_rng, "s1")};
    sources[1].domain_id = 1;
    DomainDataset target;
    target.name = "t";
    target.domain_id = 2;
    target.samples = randn({256, 3}, data_rng);

    BatchStream stream(sources, target, 8, 5);
    EXPECT_EQ(stream.steps_per_epoch(), 64u / 8u);
    for (int i = 0; i < 20; ++i) {
        DomainBatch batch = stream.next();
        EXPECT_EQ(batch.data.extent(0), 24u);
        EXPECT_EQ(batch.source_labels.size(), 16u);
    }

    BatchStream stream_a(sources, target, 8, 9);
    BatchStream stream_b(sources, target, 8, 9);
    for (int i = 0; i < 5; ++i) {
        expect_bitwise_equal(stream_a.next().data, stream_b.next().data);
    }
}

TEST(SynthTest, IdentityMapsGiveMatchingClassMeans) {
    SyntheticShiftSpec spec = two_class_spec(3);
    spec.train_per_domain = 2000;
    SynthDomains domains = synth_affine_domains(spec);
    ASSERT_EQ(domains.train.size(), 3u);

    // Per-class means in each domain must agree within 4 sigma of the mean
    // difference (unit variance, so sigma_diff = sqrt(1/n_a + 1/n_b)).
    std::vector<std::vector<double>> class0_means;
    std::vector<std::size_t> class0_counts;
    for (std::size_t d = 0; d < 3; ++d) {
        const DomainDataset& ds = domains.train[d];
        std::span<const int> labels = d == 2 ? domains.target_train_truth : ds.labels;
        std::vector<double> mean(spec.latent_dim, 0.0);
        std::size_t count = 0;
        const auto v = ds.samples.values();
        for (std::size_t i = 0; i < ds.size(); ++i) {
            if (labels[i] != 0) continue;
            ++count;
            for (std::size_t j = 0; j < spec.latent_dim; ++j) mean[j] += v[i * spec.latent_dim + j];
        }
        for (double& m : mean) m /= static_cast<double>(count);
        class0_means.push_back(std::move(mean));
        class0_counts.push_back(count);
    }
    for (std::size_t d = 1; d < 3; ++d) {
        const double bound = 4.0 * std::sqrt(1.0 / static_cast<double>(class0_counts[0]) +
                                             1.0 / static_cast<double>(class0_counts[d]));
        for (std::size_t j = 0; j < spec.latent_dim; ++j) {
            EXPECT_LT(std::abs(class0_means[d][j] - class0_means[0][j]), bound);
        }
    }
}

TEST(SynthTest, SourcesLabeledTargetTruthOutOfBand) {
    SynthDomains domains = synth_affine_domains(two_class_spec(3));
    EXPECT_TRUE(domains.train[0].labeled());
    EXPECT_TRUE(domains.train[1].labeled());
    EXPECT_FALSE(domains.train[2].labeled());  // target
    EXPECT_FALSE(domains.test[2].labeled());
    EXPECT_EQ(domains.target_train_truth.size(), 400u);
    EXPECT_EQ(domains.target_test_truth.size(), 400u);
}

TEST(SynthTest, DiagonalShiftIsRemovedByStandardization) {
    SyntheticShiftSpec spec = two_class_spec(2);
    spec.train_per_domain = 4000;
    spec.domain_maps[1] = AffineMap::uniform_scale(spec.latent_dim, 3.0, 10.0);
    SynthDomains domains = synth_affine_domains(spec);

    // Raw target channel 0 sits far from the source distribution...
    auto channel_mean = [&](const DomainDataset& ds, std::span<const int> labels, int cls) {
        double sum = 0.0;
        std::size_t count = 0;
        const auto v = ds.samples.values();
        for (std::size_t i = 0; i < ds.size(); ++i) {
            if (cls >= 0 && labels[i] != cls) continue;
            sum += v[i * spec.latent_dim];
            ++count;
        }
        return sum / static_cast<double>(count);
    };
    const double target_raw = channel_mean(domains.train[1], domains.target_train_truth, -1);
    EXPECT_NEAR(target_raw, 10.0, 0.5);

    // ...but per-channel standardization superposes the class structure.
    auto standardized_class_mean = [&](const DomainDataset& ds, std::span<const int> labels) {
        const auto v = ds.samples.values();
        const std::size_t n = ds.size();
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += v[i * spec.latent_dim];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = v[i * spec.latent_dim] - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        double class0 = 0.0;
        std::size_t count = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (labels[i] != 0) continue;
            class0 += (v[i * spec.latent_dim] - mean) / std::sqrt(var);
            ++count;
        }
        return class0 / static_cast<double>(count);
    };
    const double source_class0 = standardized_class_mean(domains.train[0], domains.train[0].labels);
    const double target_class0 =
        standardized_class_mean(domains.train[1], domains.target_train_truth);
    EXPECT_NEAR(source_class0, target_class0, 0.1);
}

TEST(SynthTest, BayesAccuracyOfTheLatentMixture) {
    // Closed form: accuracy of the optimal rule for two unit-variance
    // Gaussians at +/- 2 e1 is Phi(2).
    const double bayes = 0.5 * std::erfc(-2.0 / std::sqrt(2.0));
    EXPECT_NEAR(bayes, 0.9772498680518208, 1e-15);

    SyntheticShiftSpec spec = two_class_spec(2);
    spec.test_per_domain = 4000;
    spec.domain_maps[1] = AffineMap::uniform_scale(spec.latent_dim, 3.0, 10.0);
    SynthDomains domains = synth_affine_domains(spec);

    // Apply the oracle rule in target space by inverting the affine map.
    const DomainDataset& target_test = domains.test[1];
    const auto v = target_test.samples.values();
    std::size_t correct = 0;
    for (std::size_t i = 0; i < target_test.size(); ++i) {
        const double z0 = (v[i * spec.latent_dim] - 10.0) / 3.0;
        const int predicted = z0 >= 0.0 ? 0 : 1;  // class 0 mean +2 e1, class 1 mean -2 e1
        correct += predicted == domains.target_test_truth[i] ? 1 : 0;
    }
    const double accuracy = static_cast<double>(correct) / static_cast<double>(target_test.size());
    EXPECT_NEAR(accuracy, bayes, 0.01);
}

TEST(SynthTest, RejectsIllConditionedAndSingularMaps) {
    SyntheticShiftSpec spec = two_class_spec(2);
    spec.domain_maps[1] = AffineMap::diagonal({1.0, 1.0, 1.0, 1e-4}, {0, 0, 0, 0});
    EXPECT_THROW(synth_affine_domains(spec), std::invalid_argument);
    spec.domain_maps[1] = AffineMap::diagonal({1.0, 1.0, 1.0, 0.0}, {0, 0, 0, 0});
    EXPECT_THROW(synth_affine_domains(spec), std::invalid_argument);

    SyntheticShiftSpec one_class = two_class_spec(2);
    one_class.class_count = 1;
    EXPECT_THROW(synth_affine_domains(one_class), std::invalid_argument);
}

TEST(ConditionNumberTest, KnownValues) {
    EXPECT_NEAR(condition_number({1, 0, 0, 1}, 2), 1.0, 1e-12);
    EXPECT_NEAR(condition_number({2, 0, 0, 1}, 2), 2.0, 1e-12);
    EXPECT_THROW(condition_number({1, 1, 1, 1}, 2), std::invalid_argument);
}

void write_idx_fixture(const std::string& images_path, const std::string& labels_path,
                       bool truncate_images = false) {
    // Two 2x3 images with known pixel values.
    const unsigned char image_header[] = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3};
    const unsigned char pixels[] = {0, 51, 102, 153, 204, 255, 10, 20, 30, 40, 50, 60};
    std::ofstream images(images_path, std::ios::binary);
    images.write(reinterpret_cast<const char*>(image_header), sizeof(image_header));
    images.write(reinterpret_cast<const char*>(pixels),
                 truncate_images ? 5 : static_cast<std::streamsize>(sizeof(pixels)));
    images.close();

    const unsigned char label_header[] = {0, 0, 8, 1, 0, 0, 0, 2};
    const unsigned char labels[] = {7, 1};
    std::ofstream label_file(labels_path, std::ios::binary);
    label_file.write(reinterpret_cast<const char*>(label_header), sizeof(label_header));
    label_file.write(reinterpret_cast<const char*>(labels), sizeof(labels));
}

TEST(IdxLoaderTest, FixtureRoundTrip) {
    const std::string images_path = temp_path("images.idx");
    const std::string labels_path = temp_path("labels.idx");
    write_idx_fixture(images_path, labels_path);

    DomainDataset ds = load_idx(images_path, labels_path);
    EXPECT_EQ(ds.samples.shape(), (Shape{2, 1, 2, 3}));
    ASSERT_EQ(ds.labels, (std::vector<int>{7, 1}));
    EXPECT_DOUBLE_EQ(ds.samples.values()[0], 0.0);
    EXPECT_DOUBLE_EQ(ds.samples.values()[1], 51.0 / 255.0);
    EXPECT_DOUBLE_EQ(ds.samples.values()[5], 1.0);
    EXPECT_DOUBLE_EQ(ds.samples.values()[6], 10.0 / 255.0);
}

TEST(IdxLoaderTest, TruncatedFileNamesOffset) {
    const std::string images_path = temp_path("trunc_images.idx");
    const std::string labels_path = temp_path("trunc_labels.idx");
    write_idx_fixture(images_path, labels_path, /*truncate_images=*/true);
    try {
        load_idx(images_path, labels_path);
        FAIL() << "expected truncation error";
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("offset 21"), std::string::npos) << msg;  // 16-byte header + 5 pixels
    }
}

TEST(IdxLoaderTest, BadMagicAndCountMismatch) {
    const std::string images_path = temp_path("magic_images.idx");
    const std::string labels_path = temp_path("magic_labels.idx");
    write_idx_fixture(images_path, labels_path);

    {
        std::fstream f(images_path, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(3);
        const char wrong = 9;
        f.write(&wrong, 1);
    }
    EXPECT_THROW(load_idx(images_path, labels_path), std::runtime_error);

    write_idx_fixture(images_path, labels_path);
    {
        std::fstream f(labels_path, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(7);
        const char wrong = 3;
        f.write(&wrong, 1);
    }
    EXPECT_THROW(load_idx(images_path, labels_path), std::runtime_error);
}

TEST(FeatureTableTest, ThreeLineFixture) {
    const std::string path = temp_path("features.tsv");
    {
        std::ofstream out(path);
        for (int row = 0; row < 3; ++row) {
            out << row;
            for (int j = 0; j < 2048; ++j) out << '\t' << row * 0.5 + j * 1e-3;
            out << '\n';
        }
    }
    DomainDataset ds = load_feature_table(path);
    EXPECT_EQ(ds.samples.shape(), (Shape{3, 2048}));
    EXPECT_EQ(ds.labels, (std::vector<int>{0, 1, 2}));
    EXPECT_DOUBLE_EQ(ds.samples.at({2, 3}), 1.0 + 3e-3);
}

TEST(FeatureTableTest, AllMinusOneLabelsMeansUnlabeled) {
    const std::string path = temp_path("unlabeled.tsv");
    {
        std::ofstream out(path);
        out << "-1\t1.0\t2.0\n-1\t3.0\t4.0\n";
    }
    DomainDataset ds = load_feature_table(path);
    EXPECT_FALSE(ds.labeled());
    EXPECT_EQ(ds.samples.shape(), (Shape{2, 2}));
}

TEST(FeatureTableTest, ArityEnforcedWithLineNumber) {
    const std::string path = temp_path("ragged.tsv");
    {
        std::ofstream out(path);
        out << "0";
        for (int j = 0; j < 2048; ++j) out << '\t' << 0.5;
        out << "\n1";
        for (int j = 0; j < 2047; ++j) out << '\t' << 0.5;
        out << '\n';
    }
    try {
        load_feature_table(path);
        FAIL() << "expected arity error";
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
        EXPECT_NE(msg.find("2049"), std::string::npos) << msg;
    }
    // The pinned-width form rejects the first line of a 3-wide table too.
    const std::string narrow = temp_path("narrow.tsv");
    {
        std::ofstream out(narrow);
        out << "0\t1.0\t2.0\t3.0\n";
    }
    EXPECT_THROW(load_feature_table(narrow, 2048), std::runtime_error);
}

TEST(FeatureTableTest, SaveLoadRoundTrip) {
    Rng rng(233);
    const std::string path = temp_path("roundtrip.tsv");
    Tensor samples = randn({5, 7}, rng);
    const std::vector<int> labels = {4, 2, 0, 1, 3};
    save_feature_table(path, samples, labels);
    DomainDataset ds = load_feature_table(path);
    EXPECT_EQ(ds.labels, labels);
    ASSERT_EQ(ds.samples.shape(), samples.shape());
    for (std::size_t i = 0; i < samples.numel(); ++i) {
        EXPECT_DOUBLE_EQ(ds.samples.values()[i], samples.values()[i]);
    }
}

TEST(SubsampleTest, DigitsProtocolSplit) {
    Rng rng(239);
    DomainDataset ds = labeled_domain(30000, 2, 0.0, rng, "digits");
    auto [train, test] = subsample(ds, 20000, 9000, 11);
    EXPECT_EQ(train.size(), 20000u);
    EXPECT_EQ(test.size(), 9000u);
    EXPECT_EQ(train.labels.size(), 20000u);
    EXPECT_EQ(test.split, Split::kTest);
}

TEST(SubsampleTest, FullDatasetIsIdentityUpToPermutation) {
    Rng rng(241);
    DomainDataset ds = labeled_domain(64, 1, 0.0, rng, "all");
    auto [train, test] = subsample(ds, 64, 0, 5);
    EXPECT_EQ(test.size(), 0u);
    std::vector<double> original(ds.samples.values().begin(), ds.samples.values().end());
    std::vector<double> drawn(train.samples.values().begin(), train.samples.values().end());
    std::sort(original.begin(), original.end());
    std::sort(drawn.begin(), drawn.end());
    EXPECT_EQ(original, drawn);
}

TEST(SubsampleTest, SeedControlsTheDraw) {
    Rng rng(251);
    DomainDataset ds = labeled_domain(500, 1, 0.0, rng, "pool");
    auto [a, a_rest] = subsample(ds, 100, 0, 1);
    auto [b, b_rest] = subsample(ds, 100, 0, 1);
    auto [c, c_rest] = subsample(ds, 100, 0, 2);
    expect_bitwise_equal(a.samples, b.samples);
    double diff = 0.0;
    for (std::size_t i = 0; i < a.samples.numel(); ++i) {
        diff += std::abs(a.samples.values()[i] - c.samples.values()[i]);
    }
    EXPECT_GT(diff, 0.0);  // different seeds, different draw

    EXPECT_THROW(subsample(ds, 400, 200, 1), std::invalid_argument);
}

}  // namespace
}  // namespace msdial
