#include "msdial/data.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace msdial {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
constexpr double kMaxCondition = 1e3;

std::uint32_t read_be_u32(std::istream& in, const std::string& path, std::size_t& offset) {
    unsigned char bytes[4];
    in.read(reinterpret_cast<char*>(bytes), 4);
    if (in.gcount() != 4) {
        throw std::runtime_error(path + ": unexpected end of file at offset " +
                                 std::to_string(offset));
    }
    offset += 4;
    return (std::uint32_t(bytes[0]) << 24) | (std::uint32_t(bytes[1]) << 16) |
           (std::uint32_t(bytes[2]) << 8) | std::uint32_t(bytes[3]);
}

void read_bytes(std::istream& in, unsigned char* dst, std::size_t count, const std::string& path,
                std::size_t& offset) {
    in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(count));
    if (static_cast<std::size_t>(in.gcount()) != count) {
        throw std::runtime_error(path + ": unexpected end of file at offset " +
                                 std::to_string(offset + static_cast<std::size_t>(in.gcount())));
    }
    offset += count;
}

std::vector<int> gather_labels(std::span<const int> labels, std::span<const std::size_t> indices) {
    std::vector<int> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(labels[i]);
    return out;
}

}  // namespace

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, Rng& rng) {
    if (k > n) {
        throw std::invalid_argument("cannot sample " + std::to_string(k) + " of " +
                                    std::to_string(n) + " rows without replacement");
    }
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(k);
    return pool;
}

Tensor gather_rows(const Tensor& samples, std::span<const std::size_t> indices) {
    if (samples.rank() == 0) throw std::invalid_argument("gather_rows on a rank-0 tensor");
    const std::size_t rows = samples.extent(0);
    const std::size_t row_elems = rows == 0 ? 0 : samples.numel() / rows;
    Shape out_shape = samples.shape();
    out_shape[0] = indices.size();
    std::vector<double> data(indices.size() * row_elems);
    const auto src = samples.values();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= rows) {
            throw std::out_of_range("gather_rows index " + std::to_string(indices[i]) +
                                    " out of range for " + std::to_string(rows) + " rows");
        }
        std::copy_n(src.data() + indices[i] * row_elems, row_elems, data.data() + i * row_elems);
    }
    return Tensor::from(std::move(out_shape), std::move(data));
}

DomainBatch compose_batch(const std::vector<DomainDataset>& sources, const DomainDataset& target,
                          std::size_t per_domain, Rng& rng) {
    if (per_domain < 2) {
        throw std::invalid_argument("compose_batch needs at least 2 rows per domain segment, got " +
                                    std::to_string(per_domain));
    }
    std::vector<const DomainDataset*> domains;
    for (const DomainDataset& s : sources) domains.push_back(&s);
    domains.push_back(&target);

    std::vector<Tensor> parts;
    std::vector<int> labels;
    std::vector<std::size_t> counts;
    parts.reserve(domains.size());
    for (const DomainDataset* ds : domains) {
        if (ds->size() < per_domain) {
            throw std::invalid_argument("domain '" + ds->name + "' has " +
                                        std::to_string(ds->size()) + " rows, fewer than the " +
                                        std::to_string(per_domain) + " requested per batch");
        }
        const auto idx = sample_indices(ds->size(), per_domain, rng);
        parts.push_back(gather_rows(ds->samples, idx));
        if (ds != &target) {
            if (!ds->labeled()) {
                throw std::invalid_argument("source domain '" + ds->name + "' is unlabeled");
            }
            const auto picked = gather_labels(ds->labels, idx);
            labels.insert(labels.end(), picked.begin(), picked.end());
        }
        counts.push_back(per_domain);
    }
    return DomainBatch{concat_rows(parts), DomainSegments::contiguous(counts), std::move(labels)};
}

BatchStream::BatchStream(const std::vector<DomainDataset>& sources, const DomainDataset& target,
                         std::size_t per_domain, std::uint64_t seed)
    : per_domain_(per_domain), rng_(seed) {
    if (per_domain < 2) {
        throw std::invalid_argument("BatchStream needs at least 2 rows per domain segment, got " +
                                    std::to_string(per_domain));
    }
    for (const DomainDataset& s : sources) domains_.push_back(&s);
    domains_.push_back(&target);
    std::size_t smallest = target.size();
    for (const DomainDataset* ds : domains_) {
        if (ds->size() < per_domain) {
            throw std::invalid_argument("domain '" + ds->name + "' has " +
                                        std::to_string(ds->size()) +
                                        " rows, fewer than one batch segment");
        }
        smallest = std::min(smallest, ds->size());
        order_.emplace_back();
        cursor_.push_back(0);
    }
    steps_per_epoch_ = std::max<std::size_t>(1, smallest / per_domain_);
}

DomainBatch BatchStream::next() {
    std::vector<Tensor> parts;
    std::vector<int> labels;
    std::vector<std::size_t> counts;
    for (std::size_t d = 0; d < domains_.size(); ++d) {
        const DomainDataset* ds = domains_[d];
        auto& order = order_[d];
        auto& cursor = cursor_[d];
        if (cursor + per_domain_ > order.size()) {
            order = sample_indices(ds->size(), ds->size(), rng_);  // fresh shuffle
            cursor = 0;
        }
        std::span<const std::size_t> idx(order.data() + cursor, per_domain_);
        cursor += per_domain_;
        parts.push_back(gather_rows(ds->samples, idx));
        if (d + 1 < domains_.size()) {
            const auto picked = gather_labels(ds->labels, idx);
            labels.insert(labels.end(), picked.begin(), picked.end());
        }
        counts.push_back(per_domain_);
    }
    return DomainBatch{concat_rows(parts), DomainSegments::contiguous(counts), std::move(labels)};
}

AffineMap AffineMap::identity(std::size_t dim) {
    AffineMap map;
    map.matrix.assign(dim * dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i) map.matrix[i * dim + i] = 1.0;
    map.offset.assign(dim, 0.0);
    return map;
}

AffineMap AffineMap::diagonal(std::vector<double> scales, std::vector<double> offset) {
    if (scales.size() != offset.size()) {
        throw std::invalid_argument("diagonal affine map: " + std::to_string(scales.size()) +
                                    " scales vs " + std::to_string(offset.size()) + " offsets");
    }
    const std::size_t dim = scales.size();
    AffineMap map;
    map.matrix.assign(dim * dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i) map.matrix[i * dim + i] = scales[i];
    map.offset = std::move(offset);
    return map;
}

AffineMap AffineMap::uniform_scale(std::size_t dim, double scale, double offset) {
    return diagonal(std::vector<double>(dim, scale), std::vector<double>(dim, offset));
}

double condition_number(const std::vector<double>& matrix, std::size_t dim) {
    if (matrix.size() != dim * dim) {
        throw std::invalid_argument("condition_number: expected " + std::to_string(dim * dim) +
                                    " entries, got " + std::to_string(matrix.size()));
    }
    Eigen::MatrixXd a(dim, dim);
    for (std::size_t i = 0; i < dim; ++i) {
        for (std::size_t j = 0; j < dim; ++j) a(i, j) = matrix[i * dim + j];
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
    const double smax = svd.singularValues()(0);
    const double smin = svd.singularValues()(dim - 1);
    if (smin <= 0.0) throw std::invalid_argument("condition_number: singular matrix");
    return smax / smin;
}

SynthDomains synth_affine_domains(const SyntheticShiftSpec& spec) {
    if (spec.class_count < 2) {
        throw std::invalid_argument("synth_affine_domains needs at least 2 classes, got " +
                                    std::to_string(spec.class_count));
    }
    if (spec.domain_maps.size() < 2) {
        throw std::invalid_argument("synth_affine_domains needs at least 2 domains (got " +
                                    std::to_string(spec.domain_maps.size()) + ")");
    }
    if (spec.latent_dim == 0) throw std::invalid_argument("synth_affine_domains latent_dim = 0");
    const std::size_t dim = spec.latent_dim;
    for (std::size_t d = 0; d < spec.domain_maps.size(); ++d) {
        const AffineMap& map = spec.domain_maps[d];
        if (map.matrix.size() != dim * dim || map.offset.size() != dim) {
            throw std::invalid_argument("domain " + std::to_string(d) +
                                        " affine map does not match latent_dim " +
                                        std::to_string(dim));
        }
        double cond = 0.0;
        try {
            cond = condition_number(map.matrix, dim);
        } catch (const std::invalid_argument&) {
            throw std::invalid_argument("domain " + std::to_string(d) + " affine map is singular");
        }
        if (cond >= kMaxCondition) {
            throw std::invalid_argument("domain " + std::to_string(d) +
                                        " affine map is ill-conditioned (condition number " +
                                        std::to_string(cond) + " >= 1e3)");
        }
    }

    // Distinct latent class means: +/- separation along cycling unit axes.
    std::vector<std::vector<double>> means(spec.class_count, std::vector<double>(dim, 0.0));
    for (std::size_t c = 0; c < spec.class_count; ++c) {
        const std::size_t axis = (c / 2) % dim;
        means[c][axis] = (c % 2 == 0 ? 1.0 : -1.0) * spec.class_separation;
    }

    const std::size_t target = spec.domain_maps.size() - 1;
    SynthDomains out;
    for (std::size_t d = 0; d < spec.domain_maps.size(); ++d) {
        for (Split split : {Split::kTrain, Split::kTest}) {
            const std::size_t n =
                split == Split::kTrain ? spec.train_per_domain : spec.test_per_domain;
            Rng rng(derive_seed(spec.seed, d * 2 + (split == Split::kTest ? 1 : 0)));
            std::uniform_int_distribution<std::size_t> pick_class(0, spec.class_count - 1);
            std::normal_distribution<double> noise(0.0, 1.0);
            std::vector<int> labels(n);
            std::vector<double> data(n * dim);
            const AffineMap& map = spec.domain_maps[d];
            std::vector<double> z(dim);
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t cls = pick_class(rng);
                labels[i] = static_cast<int>(cls);
                for (std::size_t j = 0; j < dim; ++j) z[j] = means[cls][j] + noise(rng);
                for (std::size_t r = 0; r < dim; ++r) {
                    double acc = map.offset[r];
                    const double* row = map.matrix.data() + r * dim;
                    for (std::size_t j = 0; j < dim; ++j) acc += row[j] * z[j];
                    data[i * dim + r] = acc;
                }
            }
            DomainDataset ds;
            ds.domain_id = d;
            ds.name = d == target ? "target" : "s" + std::to_string(d);
            ds.samples = Tensor::from({n, dim}, std::move(data));
            ds.split = split;
            if (d == target) {
                if (split == Split::kTrain) {
                    out.target_train_truth = std::move(labels);
                } else {
                    out.target_test_truth = std::move(labels);
                }
            } else {
                ds.labels = std::move(labels);
            }
            (split == Split::kTrain ? out.train : out.test).push_back(std::move(ds));
        }
    }
    return out;
}

DomainDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream images(images_path, std::ios::binary);
    if (!images) throw std::runtime_error(images_path + ": cannot open");
    std::size_t img_offset = 0;
    const std::uint32_t img_magic = read_be_u32(images, images_path, img_offset);
    if (img_magic != kIdxImagesMagic) {
        std::ostringstream msg;
        msg << images_path << ": bad magic 0x" << std::hex << img_magic
            << " at offset 0 (expected 0x803)";
        throw std::runtime_error(msg.str());
    }
    const std::uint32_t count = read_be_u32(images, images_path, img_offset);
    const std::uint32_t height = read_be_u32(images, images_path, img_offset);
    const std::uint32_t width = read_be_u32(images, images_path, img_offset);

    std::ifstream labels(labels_path, std::ios::binary);
    if (!labels) throw std::runtime_error(labels_path + ": cannot open");
    std::size_t lbl_offset = 0;
    const std::uint32_t lbl_magic = read_be_u32(labels, labels_path, lbl_offset);
    if (lbl_magic != kIdxLabelsMagic) {
        std::ostringstream msg;
        msg << labels_path << ": bad magic 0x" << std::hex << lbl_magic
            << " at offset 0 (expected 0x801)";
        throw std::runtime_error(msg.str());
    }
    const std::uint32_t lbl_count = read_be_u32(labels, labels_path, lbl_offset);
    if (lbl_count != count) {
        throw std::runtime_error("count mismatch: " + std::to_string(count) + " images in " +
                                 images_path + " vs " + std::to_string(lbl_count) + " labels in " +
                                 labels_path);
    }

    const std::size_t pixels = static_cast<std::size_t>(count) * height * width;
    std::vector<unsigned char> raw(pixels);
    read_bytes(images, raw.data(), pixels, images_path, img_offset);
    std::vector<unsigned char> raw_labels(count);
    read_bytes(labels, raw_labels.data(), count, labels_path, lbl_offset);

    std::vector<double> data(pixels);
    for (std::size_t i = 0; i < pixels; ++i) data[i] = raw[i] / 255.0;

    DomainDataset ds;
    ds.samples = Tensor::from({count, 1, height, width}, std::move(data));
    ds.labels.assign(raw_labels.begin(), raw_labels.end());
    return ds;
}

DomainDataset load_feature_table(const std::string& path, std::size_t expected_dim) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(path + ": cannot open");
    std::vector<double> data;
    std::vector<int> labels;
    std::size_t dim = expected_dim;
    std::string line;
    std::size_t line_no = 0;
    bool any_label = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> fields;
        std::size_t pos = 0;
        while (pos <= line.size()) {
            const std::size_t tab = line.find('\t', pos);
            if (tab == std::string::npos) {
                fields.push_back(line.substr(pos));
                break;
            }
            fields.push_back(line.substr(pos, tab - pos));
            pos = tab + 1;
        }
        if (fields.size() < 2) {
            throw std::runtime_error(path + " line " + std::to_string(line_no) +
                                     ": expected a label and at least one feature");
        }
        const std::size_t row_dim = fields.size() - 1;
        if (dim == 0) dim = row_dim;
        if (row_dim != dim) {
            throw std::runtime_error(path + " line " + std::to_string(line_no) + ": expected " +
                                     std::to_string(dim + 1) + " fields, got " +
                                     std::to_string(fields.size()));
        }
        try {
            const int label = std::stoi(fields[0]);
            labels.push_back(label);
            any_label = any_label || label >= 0;
            for (std::size_t i = 1; i < fields.size(); ++i) data.push_back(std::stod(fields[i]));
        } catch (const std::exception&) {
            throw std::runtime_error(path + " line " + std::to_string(line_no) +
                                     ": malformed numeric field");
        }
    }
    DomainDataset ds;
    const std::size_t rows = labels.size();
    ds.samples = Tensor::from({rows, dim == 0 ? 0 : dim}, std::move(data));
    if (any_label) {
        ds.labels = std::move(labels);
    }
    return ds;
}

void save_feature_table(const std::string& path, const Tensor& samples,
                        std::span<const int> labels) {
    if (samples.rank() != 2) {
        throw std::invalid_argument("save_feature_table expects [N x d] samples, got " +
                                    shape_str(samples.shape()));
    }
    const std::size_t rows = samples.extent(0);
    const std::size_t dim = samples.extent(1);
    if (!labels.empty() && labels.size() != rows) {
        throw std::invalid_argument("save_feature_table got " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(rows) + " rows");
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out << "# label";
    for (std::size_t j = 0; j < dim; ++j) out << "\tf" << j;
    out << '\n';
    out.precision(17);
    const auto v = samples.values();
    for (std::size_t i = 0; i < rows; ++i) {
        out << (labels.empty() ? -1 : labels[i]);
        for (std::size_t j = 0; j < dim; ++j) out << '\t' << v[i * dim + j];
        out << '\n';
    }
    if (!out) throw std::runtime_error(path + ": write failed");
}

std::pair<DomainDataset, DomainDataset> subsample(const DomainDataset& dataset,
                                                  std::size_t n_train, std::size_t n_test,
                                                  std::uint64_t seed) {
    const std::size_t n = dataset.size();
    if (n_train + n_test > n) {
        throw std::invalid_argument("subsample of " + std::to_string(n_train) + "+" +
                                    std::to_string(n_test) + " rows exceeds dataset size " +
                                    std::to_string(n));
    }
    Rng rng(seed);
    const auto idx = sample_indices(n, n_train + n_test, rng);
    std::span<const std::size_t> train_idx(idx.data(), n_train);
    std::span<const std::size_t> test_idx(idx.data() + n_train, n_test);

    DomainDataset train = dataset;
    train.samples = gather_rows(dataset.samples, train_idx);
    train.split = Split::kTrain;
    DomainDataset test = dataset;
    test.samples = gather_rows(dataset.samples, test_idx);
    test.split = Split::kTest;
    if (dataset.labeled()) {
        train.labels = gather_labels(dataset.labels, train_idx);
        test.labels = gather_labels(dataset.labels, test_idx);
    }
    return {std::move(train), std::move(test)};
}

}  // namespace msdial
