#include "msdial/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace msdial {

namespace {

Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t = rand_uniform(shape, -bound, bound, rng);
    t.set_requires_grad(true);
    return t;
}

LayerNode make_conv(std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride,
                    std::size_t padding, Rng& rng) {
    LayerNode node{NodeKind::kConv, false, 0.0, nullptr, nullptr, nullptr, nullptr};
    node.conv = std::make_shared<ConvParams>();
    node.conv->weight = xavier_uniform({cout, cin, k, k}, cin * k * k, cout * k * k, rng);
    node.conv->bias = Tensor::zeros({cout}, /*requires_grad=*/true);
    node.conv->stride = stride;
    node.conv->padding = padding;
    return node;
}

LayerNode make_fc(std::size_t in, std::size_t out, Rng& rng, bool final_classifier = false) {
    LayerNode node{NodeKind::kFc, final_classifier, 0.0, nullptr, nullptr, nullptr, nullptr};
    node.fc = std::make_shared<FcParams>();
    node.fc->weight = xavier_uniform({in, out}, in, out, rng);
    node.fc->bias = Tensor::zeros({out}, /*requires_grad=*/true);
    return node;
}

LayerNode make_simple(NodeKind kind) {
    return LayerNode{kind, false, 0.0, nullptr, nullptr, nullptr, nullptr};
}

LayerNode make_dropout(double p) {
    LayerNode node = make_simple(NodeKind::kDropout);
    node.dropout_p = p;
    return node;
}

LayerNode make_dial(std::size_t channels, std::size_t domain_count) {
    LayerNode node = make_simple(NodeKind::kDial);
    node.dial = std::make_shared<DialLayer>(DialLayer::init(channels, domain_count));
    return node;
}

std::size_t conv_output_extent(std::size_t in, std::size_t k, std::size_t stride,
                               std::size_t padding) {
    return (in + 2 * padding - k) / stride + 1;
}

constexpr double kConvDropout = 0.2;
constexpr double kFcDropout = 0.5;

}  // namespace

std::size_t LayerNode::out_channels() const {
    switch (kind) {
        case NodeKind::kConv:
            return conv->weight.extent(0);
        case NodeKind::kFc:
            return fc->weight.extent(1);
        case NodeKind::kBatchNorm:
            return bn->channels();
        case NodeKind::kDial:
            return dial->channels();
        default:
            return 0;
    }
}

void ArchitectureSpec::validate() const {
    if (class_count < 2) {
        throw std::invalid_argument("architecture needs at least 2 classes, got " +
                                    std::to_string(class_count));
    }
    if (source_domains < 1) {
        throw std::invalid_argument("architecture needs at least 1 source domain");
    }
}

ModelGraph::ModelGraph(std::vector<LayerNode> nodes, ArchitectureSpec arch)
    : nodes_(std::move(nodes)), arch_(std::move(arch)) {
    std::size_t finals = 0;
    for (const LayerNode& node : nodes_) finals += node.is_final_classifier ? 1 : 0;
    if (finals != 1) {
        throw std::invalid_argument("model graph must have exactly one final classifier, found " +
                                    std::to_string(finals));
    }
}

Tensor ModelGraph::forward_train(const Tensor& batch, const DomainSegments* segments,
                                 Rng* dropout_rng) {
    Tensor h = batch;
    for (LayerNode& node : nodes_) {
        switch (node.kind) {
            case NodeKind::kConv:
                h = conv2d(h, node.conv->weight, node.conv->bias, node.conv->stride,
                           node.conv->padding);
                break;
            case NodeKind::kFc:
                h = add(matmul(h, node.fc->weight),
                        reshape(node.fc->bias, {1, node.fc->bias.numel()}));
                break;
            case NodeKind::kRelu:
                h = relu(h);
                break;
            case NodeKind::kDropout:
                if (dropout_rng != nullptr) {
                    h = dropout_forward(h, node.dropout_p, Mode::kTrain, *dropout_rng);
                }
                break;
            case NodeKind::kBatchNorm:
                h = bn_forward(h, *node.bn, Mode::kTrain);
                break;
            case NodeKind::kDial:
                if (segments == nullptr) {
                    throw std::invalid_argument(
                        "forward_train: dial node requires domain segments");
                }
                h = dial_forward_train(h, *segments, *node.dial);
                break;
            case NodeKind::kFlatten:
                h = reshape(h, {h.extent(0), h.numel() / h.extent(0)});
                break;
        }
    }
    return h;
}

Tensor ModelGraph::forward_eval(const Tensor& batch, std::size_t domain_id,
                                std::size_t node_limit) const {
    Tensor h = batch;
    std::size_t visited = 0;
    for (const LayerNode& node : nodes_) {
        if (visited++ == node_limit) break;
        switch (node.kind) {
            case NodeKind::kConv:
                h = conv2d(h, node.conv->weight, node.conv->bias, node.conv->stride,
                           node.conv->padding);
                break;
            case NodeKind::kFc:
                h = add(matmul(h, node.fc->weight),
                        reshape(node.fc->bias, {1, node.fc->bias.numel()}));
                break;
            case NodeKind::kRelu:
                h = relu(h);
                break;
            case NodeKind::kDropout:
                break;  // identity at eval
            case NodeKind::kBatchNorm:
                h = bn_forward(h, *node.bn, Mode::kEval);
                break;
            case NodeKind::kDial:
                h = dial_forward_eval(h, domain_id, *node.dial);
                break;
            case NodeKind::kFlatten:
                h = reshape(h, {h.extent(0), h.numel() / h.extent(0)});
                break;
        }
    }
    return h;
}

std::vector<Tensor> ModelGraph::parameters() const {
    std::vector<Tensor> params;
    for (const LayerNode& node : nodes_) {
        switch (node.kind) {
            case NodeKind::kConv:
                params.push_back(node.conv->weight);
                params.push_back(node.conv->bias);
                break;
            case NodeKind::kFc:
                params.push_back(node.fc->weight);
                params.push_back(node.fc->bias);
                break;
            case NodeKind::kBatchNorm:
                params.push_back(node.bn->gamma);
                params.push_back(node.bn->beta);
                break;
            case NodeKind::kDial:
                params.push_back(node.dial->shared_gamma);
                params.push_back(node.dial->shared_beta);
                break;
            default:
                break;
        }
    }
    return params;
}

std::size_t ModelGraph::parameter_count() const {
    std::size_t total = 0;
    for (const Tensor& p : parameters()) total += p.numel();
    return total;
}

std::size_t ModelGraph::final_classifier_index() const {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].is_final_classifier) return i;
    }
    throw std::logic_error("model graph has no final classifier");
}

std::size_t ModelGraph::count(NodeKind kind) const {
    std::size_t n = 0;
    for (const LayerNode& node : nodes_) n += node.kind == kind ? 1 : 0;
    return n;
}

ModelGraph ModelGraph::clone() const {
    std::vector<LayerNode> nodes;
    nodes.reserve(nodes_.size());
    for (const LayerNode& node : nodes_) {
        LayerNode copy = make_simple(node.kind);
        copy.is_final_classifier = node.is_final_classifier;
        copy.dropout_p = node.dropout_p;
        if (node.conv) {
            copy.conv = std::make_shared<ConvParams>();
            copy.conv->weight = node.conv->weight.clone().set_requires_grad(true);
            copy.conv->bias = node.conv->bias.clone().set_requires_grad(true);
            copy.conv->stride = node.conv->stride;
            copy.conv->padding = node.conv->padding;
        }
        if (node.fc) {
            copy.fc = std::make_shared<FcParams>();
            copy.fc->weight = node.fc->weight.clone().set_requires_grad(true);
            copy.fc->bias = node.fc->bias.clone().set_requires_grad(true);
        }
        if (node.bn) {
            copy.bn = std::make_shared<BatchNormState>(*node.bn);
            copy.bn->gamma = node.bn->gamma.clone().set_requires_grad(true);
            copy.bn->beta = node.bn->beta.clone().set_requires_grad(true);
        }
        if (node.dial) {
            copy.dial = std::make_shared<DialLayer>(*node.dial);
            for (BatchNormState& stats : copy.dial->per_domain) {
                stats.gamma = stats.gamma.clone();
                stats.beta = stats.beta.clone();
            }
            copy.dial->shared_gamma = node.dial->shared_gamma.clone().set_requires_grad(true);
            copy.dial->shared_beta = node.dial->shared_beta.clone().set_requires_grad(true);
        }
        nodes.push_back(std::move(copy));
    }
    ModelGraph out;
    out.nodes_ = std::move(nodes);
    out.arch_ = arch_;
    return out;
}

std::string describe(const ModelGraph& model) {
    std::ostringstream out;
    for (const LayerNode& node : model.nodes()) {
        switch (node.kind) {
            case NodeKind::kConv:
                out << "conv in=" << node.conv->weight.extent(1)
                    << " out=" << node.conv->weight.extent(0)
                    << " k=" << node.conv->weight.extent(2) << " stride=" << node.conv->stride
                    << " pad=" << node.conv->padding;
                break;
            case NodeKind::kFc:
                out << "fc in=" << node.fc->weight.extent(0)
                    << " out=" << node.fc->weight.extent(1);
                break;
            case NodeKind::kRelu:
                out << "relu";
                break;
            case NodeKind::kDropout:
                out << "dropout p=" << node.dropout_p;
                break;
            case NodeKind::kBatchNorm:
                out << "batchnorm channels=" << node.bn->channels();
                break;
            case NodeKind::kDial:
                out << "dial channels=" << node.dial->channels()
                    << " domains=" << node.dial->domain_count();
                break;
            case NodeKind::kFlatten:
                out << "flatten";
                break;
        }
        if (node.is_final_classifier) out << " final";
        out << '\n';
    }
    return out.str();
}

ModelGraph build_digit_model(const ArchitectureSpec& spec, Rng& rng) {
    spec.validate();
    if (spec.task != Task::kDigits) {
        throw std::invalid_argument("build_digit_model requires task = digits");
    }
    const std::size_t conv_channels[3] = {64, 64, 128};
    const std::size_t k = 5, stride = 2, padding = 2;

    std::size_t spatial = spec.image_size;
    std::vector<LayerNode> nodes;
    std::size_t cin = spec.in_channels;
    bool first_layer = true;
    for (std::size_t c : conv_channels) {
        if (spatial + 2 * padding < k) {
            throw std::invalid_argument("image size " + std::to_string(spec.image_size) +
                                        " too small for the digit convolution stack");
        }
        // Dropout regularizes the internal representations: between layers,
        // not on the raw network input.
        if (!first_layer) nodes.push_back(make_dropout(kConvDropout));
        first_layer = false;
        nodes.push_back(make_conv(cin, c, k, stride, padding, rng));
        nodes.push_back(make_simple(NodeKind::kRelu));
        spatial = conv_output_extent(spatial, k, stride, padding);
        cin = c;
    }
    nodes.push_back(make_simple(NodeKind::kFlatten));

    const std::size_t flat = conv_channels[2] * spatial * spatial;
    const std::size_t fc_hidden[2] = {2048, 1024};
    std::size_t in = flat;
    for (std::size_t width : fc_hidden) {
        nodes.push_back(make_dropout(kFcDropout));
        nodes.push_back(make_fc(in, width, rng));
        nodes.push_back(make_simple(NodeKind::kRelu));
        in = width;
    }
    nodes.push_back(make_fc(in, spec.class_count, rng, /*final_classifier=*/true));
    return ModelGraph(std::move(nodes), spec);
}

ModelGraph build_feature_mlp(const ArchitectureSpec& spec, Rng& rng) {
    spec.validate();
    if (spec.task != Task::kFeatures) {
        throw std::invalid_argument("build_feature_mlp requires task = features");
    }
    if (spec.hidden_sizes.empty()) {
        throw std::invalid_argument("feature MLP needs at least one hidden layer");
    }
    std::vector<LayerNode> nodes;
    std::size_t in = spec.input_dim;
    bool first_layer = true;
    for (std::size_t width : spec.hidden_sizes) {
        if (!first_layer) nodes.push_back(make_dropout(kFcDropout));
        first_layer = false;
        nodes.push_back(make_fc(in, width, rng));
        nodes.push_back(make_simple(NodeKind::kRelu));
        in = width;
    }
    nodes.push_back(make_fc(in, spec.class_count, rng, /*final_classifier=*/true));
    return ModelGraph(std::move(nodes), spec);
}

ModelGraph insert_ms_dial(const ModelGraph& model, std::size_t domain_count) {
    if (domain_count < 2) {
        throw std::invalid_argument(
            "insert_ms_dial needs at least 2 domains (sources plus target), got " +
            std::to_string(domain_count) + "; use plain batchnorm for a single domain");
    }
    ModelGraph copy = model.clone();
    if (copy.count(NodeKind::kDial) > 0) {
        return copy;  // already rewritten; dial nodes are not re-wrapped
    }

    const bool has_bn = copy.count(NodeKind::kBatchNorm) > 0;
    std::vector<LayerNode> nodes;
    nodes.reserve(copy.nodes().size() * 2);
    for (const LayerNode& node : copy.nodes()) {
        if (has_bn) {
            if (node.kind == NodeKind::kBatchNorm) {
                LayerNode dial = make_dial(node.bn->channels(), domain_count);
                dial.dial->shared_gamma = node.bn->gamma.clone().set_requires_grad(true);
                dial.dial->shared_beta = node.bn->beta.clone().set_requires_grad(true);
                for (BatchNormState& stats : dial.dial->per_domain) {
                    stats.running_mean = node.bn->running_mean;
                    stats.running_var = node.bn->running_var;
                    stats.momentum = node.bn->momentum;
                    stats.eps = node.bn->eps;
                    stats.num_batches_seen = node.bn->num_batches_seen;
                }
                nodes.push_back(std::move(dial));
            } else {
                nodes.push_back(node);
            }
            continue;
        }
        nodes.push_back(node);
        const bool alignable = node.kind == NodeKind::kConv || node.kind == NodeKind::kFc;
        if (alignable && !node.is_final_classifier) {
            nodes.push_back(make_dial(node.out_channels(), domain_count));
        }
    }
    return ModelGraph(std::move(nodes), model.arch());
}

}  // namespace msdial
