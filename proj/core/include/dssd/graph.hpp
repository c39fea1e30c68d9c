#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dssd/kernels.hpp"
#include "dssd/tensor.hpp"

namespace dssd {

enum class OpKind { kInput, kConv, kDeconv, kBatchNorm, kRelu, kMaxPool, kEltwise };

std::string_view to_string(OpKind kind);

/// One layer instance. Parameterized nodes own their parameters; parameter
/// names are "<node name>.<slot>" (weight, bias, scale, shift, running_mean,
/// running_var).
struct Node {
  std::string name;
  OpKind kind = OpKind::kInput;
  std::vector<int> inputs;
  ConvParams conv;  // kConv, kDeconv
  BnParams bn;      // kBatchNorm
  int pool_kernel = 2;
  int pool_stride = 2;
  Combine combine = Combine::kSum;
};

/// Class and box head outputs for one pyramid level.
struct PredictionHead {
  int level = 0;
  int size = 0;          // spatial size of the feature map
  int feature_node = -1;
  int class_node = -1;
  int box_node = -1;
};

struct ParamView {
  const std::string& name;
  Tensor& value;
  bool trainable;  // false for running statistics
};

/// Directed acyclic layer graph. Nodes are stored in topological order: every
/// node only consumes earlier nodes.
class NetworkGraph {
 public:
  int add_input(std::string name, int channels);
  int add_conv(std::string name, int input, ConvParams params);
  int add_deconv(std::string name, int input, ConvParams params);
  int add_batchnorm(std::string name, int input, BnParams params);
  int add_relu(std::string name, int input);
  int add_maxpool(std::string name, int input, int kernel, int stride);
  int add_eltwise(std::string name, int a, int b, Combine mode);
  void add_head(PredictionHead head);

  const std::vector<Node>& nodes() const { return nodes_; }
  Node& node(int index) { return nodes_.at(index); }
  const Node& node(int index) const { return nodes_.at(index); }
  int find_node(std::string_view name) const;  // -1 when absent
  /// Input nodes in creation order; forward() binds its tensors in this order.
  const std::vector<int>& input_nodes() const { return inputs_; }

  const std::vector<PredictionHead>& heads() const { return heads_; }
  std::vector<PredictionHead>& heads() { return heads_; }

  /// Visits parameters in node order, slots in declaration order.
  void for_each_param(const std::function<void(ParamView)>& fn);
  void for_each_param(const std::function<void(const std::string&, const Tensor&, bool)>& fn) const;
  std::vector<std::string> param_names(bool trainable_only = false) const;
  bool has_param(std::string_view name) const;
  Tensor& param(std::string_view name);
  const Tensor& param(std::string_view name) const;
  std::size_t param_count(bool trainable_only = true) const;

  void freeze(const std::string& name);
  void clear_freeze() { freeze_mask_.clear(); }
  bool is_frozen(const std::string& name) const { return freeze_mask_.count(name) > 0; }
  const std::set<std::string>& freeze_mask() const { return freeze_mask_; }

  /// Replaces the node list (used by graph rewrites such as BN folding).
  /// Heads are remapped through `index_map` (old index -> new index).
  void rebuild(std::vector<Node> nodes, const std::vector<int>& index_map);

  /// Output shapes of every node for an input of the given shape.
  std::vector<Shape> infer_shapes(Shape input) const;

 private:
  int push(Node node);
  Tensor* lookup(std::string_view name) const;

  std::vector<Node> nodes_;
  std::vector<PredictionHead> heads_;
  std::set<std::string> freeze_mask_;
  std::unordered_map<std::string, int> index_;
  std::vector<int> inputs_;
};

enum class Mode { kTrain, kInfer };

/// Activations and caches of one forward pass.
struct ForwardResult {
  Mode mode = Mode::kInfer;
  std::vector<Tensor> outputs;  // one per node
  std::vector<BnCache> bn_caches;
  std::vector<PoolResult> pools;
  std::uint64_t pattern = 0;  // fingerprint of relu signs and pool argmaxes

  const Tensor& class_map(const NetworkGraph& g, int head) const {
    return outputs[g.heads()[head].class_node];
  }
  const Tensor& box_map(const NetworkGraph& g, int head) const {
    return outputs[g.heads()[head].box_node];
  }
};

/// Train mode runs batch norm on batch statistics and updates running
/// statistics, except for batch-norm nodes whose scale is frozen: those
/// always behave as in infer mode.
ForwardResult forward(NetworkGraph& graph, std::span<const Tensor> inputs, Mode mode);
ForwardResult forward(NetworkGraph& graph, const Tensor& batch, Mode mode);
/// Inference-only forward on an immutable graph.
ForwardResult forward(const NetworkGraph& graph, std::span<const Tensor> inputs);
ForwardResult forward(const NetworkGraph& graph, const Tensor& batch);

struct Gradients {
  std::vector<std::pair<std::string, Tensor>> params;  // non-frozen trainable only
  std::vector<Tensor> inputs;  // per input node, filled when requested

  const Tensor* find(std::string_view name) const;
};

struct GradSeed {
  int node = -1;
  Tensor grad;  // dLoss/d(output of node)
};

/// Reverse-mode pass from arbitrary node-output gradients. Only nodes
/// downstream of a non-frozen parameter (or of an input, when input
/// gradients are requested) are visited.
Gradients backward(const NetworkGraph& graph, const ForwardResult& fwd,
                   std::span<const GradSeed> seeds, bool want_input_grads = false);

/// Convenience form: `class_grads[i]` / `box_grads[i]` are the loss
/// gradients with respect to head i's outputs.
Gradients backward(const NetworkGraph& graph, const ForwardResult& fwd,
                   std::span<const Tensor> class_grads, std::span<const Tensor> box_grads,
                   bool want_input_grads = false);

}  // namespace dssd
