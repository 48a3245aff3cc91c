#pragma once

#include <memory>
#include <string>
#include <vector>

#include "msdial/layers.hpp"
#include "msdial/tensor.hpp"

namespace msdial {

enum class NodeKind { kConv, kFc, kRelu, kDropout, kBatchNorm, kDial, kFlatten };

struct ConvParams {
    Tensor weight;  // [Cout x Cin x kh x kw]
    Tensor bias;    // [Cout]
    std::size_t stride = 1;
    std::size_t padding = 0;
};

struct FcParams {
    Tensor weight;  // [in x out]
    Tensor bias;    // [out]
};

struct LayerNode {
    NodeKind kind;
    bool is_final_classifier = false;
    double dropout_p = 0.0;
    std::shared_ptr<ConvParams> conv;
    std::shared_ptr<FcParams> fc;
    std::shared_ptr<BatchNormState> bn;
    std::shared_ptr<DialLayer> dial;

    /// Output width (channels for conv/bn/dial, columns for fc).
    std::size_t out_channels() const;
};

enum class Task { kDigits, kFeatures };

struct ArchitectureSpec {
    Task task = Task::kFeatures;
    std::size_t class_count = 10;
    std::vector<std::size_t> hidden_sizes = {1000, 500, 100};  // feature MLP
    std::size_t source_domains = 3;                            // M
    std::size_t input_dim = 2048;  // feature MLP input width
    std::size_t in_channels = 3;   // digit CNN input channels
    std::size_t image_size = 32;   // digit CNN input resolution

    void validate() const;
};

/// Ordered layer sequence with a single final-classifier node. Forward in
/// train mode routes dial nodes through per-domain batch statistics; eval
/// mode routes them through one domain's running statistics.
class ModelGraph {
public:
    ModelGraph() = default;
    ModelGraph(std::vector<LayerNode> nodes, ArchitectureSpec arch);

    const std::vector<LayerNode>& nodes() const { return nodes_; }
    const ArchitectureSpec& arch() const { return arch_; }

    /// segments may be null for graphs without dial nodes; dropout_rng may
    /// be null to disable dropout (deterministic forward).
    Tensor forward_train(const Tensor& batch, const DomainSegments* segments, Rng* dropout_rng);
    /// node_limit restricts the pass to nodes [0, node_limit), so activation
    /// boundaries can be read out.
    Tensor forward_eval(const Tensor& batch, std::size_t domain_id = 0,
                        std::size_t node_limit = static_cast<std::size_t>(-1)) const;

    /// Learnable tensors in node order (shared handles, not copies).
    std::vector<Tensor> parameters() const;
    std::size_t parameter_count() const;

    std::size_t final_classifier_index() const;
    std::size_t count(NodeKind kind) const;

    /// Independent deep copy: parameters, statistics and layout.
    ModelGraph clone() const;

private:
    std::vector<LayerNode> nodes_;
    ArchitectureSpec arch_;
};

/// One node per line: kind, dims, flags. Stable format for golden tests.
std::string describe(const ModelGraph& model);

/// Digit CNN: three stride-2 5x5 convolutions (64, 64, 128 channels) and
/// three FC layers ending in class_count logits. Dropout precedes every
/// internal conv (0.2) and FC (0.5) — not the raw input and not the final
/// classifier; ReLU follows every layer except the final classifier.
ModelGraph build_digit_model(const ArchitectureSpec& spec, Rng& rng);

/// Feature MLP: input_dim -> hidden_sizes... -> class_count, same dropout
/// and ReLU placement as the digit model.
ModelGraph build_feature_mlp(const ArchitectureSpec& spec, Rng& rng);

/// Rewrites a model for multi-domain training: replaces every batchnorm
/// node with a dial node (copying its affine parameters into the shared
/// pair and its running statistics into every per-domain set), or, when no
/// batchnorm is present, appends a dial node after every conv and fc node
/// except the final classifier. A model that already contains dial nodes is
/// returned unchanged. The input model is never modified.
ModelGraph insert_ms_dial(const ModelGraph& model, std::size_t domain_count);

}  // namespace msdial
