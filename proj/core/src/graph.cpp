#include "dssd/graph.hpp"

#include <algorithm>

#include "dssd/errors.hpp"

namespace dssd {

std::string_view to_string(OpKind kind) {
  switch (kind) {
    case OpKind::kInput: return "input";
    case OpKind::kConv: return "conv";
    case OpKind::kDeconv: return "deconv";
    case OpKind::kBatchNorm: return "batchnorm";
    case OpKind::kRelu: return "relu";
    case OpKind::kMaxPool: return "maxpool";
    case OpKind::kEltwise: return "eltwise";
  }
  return "?";
}

int NetworkGraph::push(Node node) {
  if (node.name.empty()) throw SpecError("graph: node name must not be empty");
  if (index_.count(node.name) > 0) throw SpecError("graph: duplicate node name " + node.name);
  const int id = static_cast<int>(nodes_.size());
  for (int in : node.inputs) {
    if (in < 0 || in >= id) throw SpecError("graph: node " + node.name + " has a forward edge");
  }
  index_.emplace(node.name, id);
  if (node.kind == OpKind::kInput) inputs_.push_back(id);
  nodes_.push_back(std::move(node));
  return id;
}

int NetworkGraph::add_input(std::string name, int channels) {
  Node n;
  n.name = std::move(name);
  n.kind = OpKind::kInput;
  n.pool_kernel = channels;  // channel count for shape inference
  return push(std::move(n));
}

int NetworkGraph::add_conv(std::string name, int input, ConvParams params) {
  Node n;
  n.name = std::move(name);
  n.kind = OpKind::kConv;
  n.inputs = {input};
  n.conv = std::move(params);
  return push(std::move(n));
}

int NetworkGraph::add_deconv(std::string name, int input, ConvParams params) {
  Node n;
  n.name = std::move(name);
  n.kind = OpKind::kDeconv;
  n.inputs = {input};
  n.conv = std::move(params);
  return push(std::move(n));
}

int NetworkGraph::add_batchnorm(std::string name, int input, BnParams params) {
  Node n;
  n.name = std::move(name);
  n.kind = OpKind::kBatchNorm;
  n.inputs = {input};
  n.bn = std::move(params);
  return push(std::move(n));
}

int NetworkGraph::add_relu(std::string name, int input) {
  Node n;
  n.name = std::move(name);
  n.kind = OpKind::kRelu;
  n.inputs = {input};
  return push(std::move(n));
}

int NetworkGraph::add_maxpool(std::string name, int input, int kernel, int stride) {
  Node n;
  n.name = std::move(name);
  n.kind = OpKind::kMaxPool;
  n.inputs = {input};
  n.pool_kernel = kernel;
  n.pool_stride = stride;
  return push(std::move(n));
}

int NetworkGraph::add_eltwise(std::string name, int a, int b, Combine mode) {
  Node n;
  n.name = std::move(name);
  n.kind = OpKind::kEltwise;
  n.inputs = {a, b};
  n.combine = mode;
  return push(std::move(n));
}

void NetworkGraph::add_head(PredictionHead head) {
  const int count = static_cast<int>(nodes_.size());
  for (int id : {head.feature_node, head.class_node, head.box_node}) {
    if (id < 0 || id >= count) throw SpecError("graph: prediction head references no node");
  }
  heads_.push_back(head);
}

int NetworkGraph::find_node(std::string_view name) const {
  const auto it = index_.find(std::string(name));
  return it == index_.end() ? -1 : it->second;
}

void NetworkGraph::for_each_param(const std::function<void(ParamView)>& fn) {
  std::string name;
  for (Node& n : nodes_) {
    if (n.kind == OpKind::kConv || n.kind == OpKind::kDeconv) {
      name = n.name + ".weight";
      fn(ParamView{name, n.conv.weights, true});
      if (n.conv.has_bias()) {
        name = n.name + ".bias";
        fn(ParamView{name, n.conv.bias, true});
      }
    } else if (n.kind == OpKind::kBatchNorm) {
      name = n.name + ".scale";
      fn(ParamView{name, n.bn.scale, true});
      name = n.name + ".shift";
      fn(ParamView{name, n.bn.shift, true});
      name = n.name + ".running_mean";
      fn(ParamView{name, n.bn.running_mean, false});
      name = n.name + ".running_var";
      fn(ParamView{name, n.bn.running_var, false});
    }
  }
}

void NetworkGraph::for_each_param(
    const std::function<void(const std::string&, const Tensor&, bool)>& fn) const {
  const_cast<NetworkGraph*>(this)->for_each_param(
      [&](ParamView p) { fn(p.name, p.value, p.trainable); });
}

std::vector<std::string> NetworkGraph::param_names(bool trainable_only) const {
  std::vector<std::string> names;
  for_each_param([&](const std::string& name, const Tensor&, bool trainable) {
    if (trainable || !trainable_only) names.push_back(name);
  });
  return names;
}

std::size_t NetworkGraph::param_count(bool trainable_only) const {
  std::size_t total = 0;
  for_each_param([&](const std::string&, const Tensor& t, bool trainable) {
    if (trainable || !trainable_only) total += t.size();
  });
  return total;
}

Tensor* NetworkGraph::lookup(std::string_view name) const {
  const auto dot = name.rfind('.');
  if (dot == std::string_view::npos) return nullptr;
  const int id = find_node(name.substr(0, dot));
  if (id < 0) return nullptr;
  auto& n = const_cast<Node&>(nodes_[id]);
  const std::string_view slot = name.substr(dot + 1);
  if (n.kind == OpKind::kConv || n.kind == OpKind::kDeconv) {
    if (slot == "weight") return &n.conv.weights;
    if (slot == "bias" && n.conv.has_bias()) return &n.conv.bias;
  } else if (n.kind == OpKind::kBatchNorm) {
    if (slot == "scale") return &n.bn.scale;
    if (slot == "shift") return &n.bn.shift;
    if (slot == "running_mean") return &n.bn.running_mean;
    if (slot == "running_var") return &n.bn.running_var;
  }
  return nullptr;
}

bool NetworkGraph::has_param(std::string_view name) const { return lookup(name) != nullptr; }

Tensor& NetworkGraph::param(std::string_view name) {
  Tensor* t = lookup(name);
  if (t == nullptr) throw SpecError("graph: no parameter named " + std::string(name));
  return *t;
}

const Tensor& NetworkGraph::param(std::string_view name) const {
  return const_cast<NetworkGraph*>(this)->param(name);
}

void NetworkGraph::freeze(const std::string& name) {
  if (!has_param(name)) throw SpecError("graph: cannot freeze unknown parameter " + name);
  freeze_mask_.insert(name);
}

void NetworkGraph::rebuild(std::vector<Node> nodes, const std::vector<int>& index_map) {
  for (PredictionHead& h : heads_) {
    h.feature_node = index_map.at(h.feature_node);
    h.class_node = index_map.at(h.class_node);
    h.box_node = index_map.at(h.box_node);
  }
  nodes_.clear();
  index_.clear();
  inputs_.clear();
  for (Node& n : nodes) push(std::move(n));
  std::set<std::string> kept;
  for (const std::string& name : freeze_mask_) {
    if (has_param(name)) kept.insert(name);
  }
  freeze_mask_ = std::move(kept);
}

std::vector<Shape> NetworkGraph::infer_shapes(Shape input) const {
  std::vector<Shape> shapes(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    switch (n.kind) {
      case OpKind::kInput:
        shapes[i] = Shape{input.n, n.pool_kernel, input.h, input.w};
        break;
      case OpKind::kConv: {
        const Shape& in = shapes[n.inputs[0]];
        const ConvParams& p = n.conv;
        shapes[i] = Shape{in.n, p.weights.n(),
                          conv_output_size(in.h, p.kernel(), p.stride, p.pad, p.dilation),
                          conv_output_size(in.w, p.kernel(), p.stride, p.pad, p.dilation)};
        break;
      }
      case OpKind::kDeconv: {
        const Shape& in = shapes[n.inputs[0]];
        const ConvParams& p = n.conv;
        shapes[i] = Shape{in.n, p.weights.c(),
                          deconv_output_size(in.h, p.kernel(), p.stride, p.pad, p.dilation),
                          deconv_output_size(in.w, p.kernel(), p.stride, p.pad, p.dilation)};
        break;
      }
      case OpKind::kMaxPool: {
        const Shape& in = shapes[n.inputs[0]];
        shapes[i] = Shape{in.n, in.c, (in.h - n.pool_kernel) / n.pool_stride + 1,
                          (in.w - n.pool_kernel) / n.pool_stride + 1};
        break;
      }
      default:
        shapes[i] = shapes[n.inputs[0]];
    }
  }
  return shapes;
}

const Tensor* Gradients::find(std::string_view name) const {
  for (const auto& [n, t] : params) {
    if (n == name) return &t;
  }
  return nullptr;
}

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ull;
constexpr std::uint64_t kFnvPrime = 1099511628211ull;

std::uint64_t mix(std::uint64_t h, std::uint64_t v) { return (h ^ v) * kFnvPrime; }

ForwardResult run_forward(const NetworkGraph& graph, std::vector<Node>* mutable_nodes,
                          std::span<const Tensor> inputs, Mode mode) {
  const auto& nodes = graph.nodes();
  if (inputs.size() != graph.input_nodes().size()) {
    throw ShapeError("forward: graph has " + std::to_string(graph.input_nodes().size()) +
                     " inputs, got " + std::to_string(inputs.size()));
  }
  ForwardResult r;
  r.mode = mode;
  r.outputs.resize(nodes.size());
  r.bn_caches.resize(nodes.size());
  r.pools.resize(nodes.size());
  std::uint64_t pattern = kFnvOffset;
  std::size_t next_input = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const Node& n = nodes[i];
    switch (n.kind) {
      case OpKind::kInput: {
        const Tensor& x = inputs[next_input++];
        if (x.c() != n.pool_kernel) {
          throw ShapeError("forward: input " + n.name + " expects " +
                           std::to_string(n.pool_kernel) + " channels, got " + x.shape().str());
        }
        x.check_finite("network input");
        r.outputs[i] = x;
        break;
      }
      case OpKind::kConv:
        r.outputs[i] = conv2d(r.outputs[n.inputs[0]], n.conv);
        break;
      case OpKind::kDeconv:
        r.outputs[i] = deconv2d(r.outputs[n.inputs[0]], n.conv);
        break;
      case OpKind::kBatchNorm: {
        const bool frozen = graph.is_frozen(n.name + ".scale");
        if (mode == Mode::kTrain && !frozen && mutable_nodes != nullptr) {
          r.outputs[i] = batchnorm(r.outputs[n.inputs[0]], (*mutable_nodes)[i].bn, BnMode::kTrain,
                                   &r.bn_caches[i]);
        } else {
          BnParams copy = n.bn;
          r.outputs[i] = batchnorm(r.outputs[n.inputs[0]], copy, BnMode::kInfer, &r.bn_caches[i]);
        }
        break;
      }
      case OpKind::kRelu: {
        const Tensor& x = r.outputs[n.inputs[0]];
        r.outputs[i] = relu(x);
        std::uint64_t bits = 0;
        for (std::size_t k = 0; k < x.size(); ++k) {
          bits = (bits << 1) | (x[k] > 0.0f ? 1u : 0u);
          if ((k & 63) == 63) pattern = mix(pattern, bits), bits = 0;
        }
        pattern = mix(pattern, bits);
        break;
      }
      case OpKind::kMaxPool:
        r.pools[i] = maxpool2d(r.outputs[n.inputs[0]], n.pool_kernel, n.pool_stride);
        r.outputs[i] = r.pools[i].output;
        for (std::uint32_t a : r.pools[i].argmax) pattern = mix(pattern, a);
        break;
      case OpKind::kEltwise:
        r.outputs[i] = eltwise(r.outputs[n.inputs[0]], r.outputs[n.inputs[1]], n.combine);
        break;
    }
  }
  r.pattern = pattern;
  return r;
}

void accumulate(Tensor& into, Tensor&& value) {
  if (into.empty()) {
    into = std::move(value);
    return;
  }
  for (std::size_t k = 0; k < into.size(); ++k) into[k] += value[k];
}

}  // namespace

ForwardResult forward(NetworkGraph& graph, std::span<const Tensor> inputs, Mode mode) {
  // Nodes are mutated in place (running statistics) only for train mode.
  auto& nodes = const_cast<std::vector<Node>&>(graph.nodes());
  return run_forward(graph, &nodes, inputs, mode);
}

ForwardResult forward(NetworkGraph& graph, const Tensor& batch, Mode mode) {
  return forward(graph, std::span<const Tensor>(&batch, 1), mode);
}

ForwardResult forward(const NetworkGraph& graph, std::span<const Tensor> inputs) {
  return run_forward(graph, nullptr, inputs, Mode::kInfer);
}

ForwardResult forward(const NetworkGraph& graph, const Tensor& batch) {
  return forward(graph, std::span<const Tensor>(&batch, 1));
}

Gradients backward(const NetworkGraph& graph, const ForwardResult& fwd,
                   std::span<const GradSeed> seeds, bool want_input_grads) {
  const auto& nodes = graph.nodes();
  const std::size_t count = nodes.size();
  if (fwd.outputs.size() != count) throw ShapeError("backward: forward result does not match graph");

  auto live = [&](const std::string& name) {
    return graph.has_param(name) && !graph.is_frozen(name);
  };
  std::vector<char> owns(count, 0);
  std::vector<char> requires_grad(count, 0);
  for (std::size_t i = 0; i < count; ++i) {
    const Node& n = nodes[i];
    if (n.kind == OpKind::kConv || n.kind == OpKind::kDeconv) {
      owns[i] = live(n.name + ".weight") || live(n.name + ".bias");
    } else if (n.kind == OpKind::kBatchNorm) {
      owns[i] = live(n.name + ".scale") || live(n.name + ".shift");
    } else if (n.kind == OpKind::kInput) {
      owns[i] = want_input_grads;
    }
    requires_grad[i] = owns[i];
    for (int in : n.inputs) requires_grad[i] |= requires_grad[in];
  }

  std::vector<Tensor> grad(count);
  for (const GradSeed& s : seeds) {
    if (s.node < 0 || static_cast<std::size_t>(s.node) >= count) {
      throw ShapeError("backward: seed references no node");
    }
    if (s.grad.shape() != fwd.outputs[s.node].shape()) {
      throw ShapeError("backward: seed gradient for " + nodes[s.node].name + " has shape " +
                       s.grad.shape().str() + ", expected " + fwd.outputs[s.node].shape().str());
    }
    if (requires_grad[s.node]) accumulate(grad[s.node], Tensor(s.grad));
  }

  Gradients out;
  std::vector<std::pair<std::string, Tensor>> reversed;
  std::vector<Tensor> input_grads(graph.input_nodes().size());
  for (std::size_t ii = count; ii-- > 0;) {
    if (!requires_grad[ii] || grad[ii].empty()) continue;
    const Node& n = nodes[ii];
    Tensor& dy = grad[ii];
    dy.check_finite("gradient of " + n.name);
    const int in0 = n.inputs.empty() ? -1 : n.inputs[0];
    switch (n.kind) {
      case OpKind::kInput: {
        const auto pos = std::find(graph.input_nodes().begin(), graph.input_nodes().end(),
                                   static_cast<int>(ii));
        input_grads[pos - graph.input_nodes().begin()] = dy;
        break;
      }
      case OpKind::kConv:
      case OpKind::kDeconv: {
        const bool want_in = requires_grad[in0];
        const Tensor& x = fwd.outputs[in0];
        ConvGrads g = n.kind == OpKind::kConv
                          ? conv2d_backward(x, n.conv, dy, want_in, owns[ii])
                          : deconv2d_backward(x, n.conv, dy, want_in, owns[ii]);
        if (owns[ii]) {
          if (n.conv.has_bias() && live(n.name + ".bias")) {
            reversed.emplace_back(n.name + ".bias", std::move(g.bias));
          }
          if (live(n.name + ".weight")) reversed.emplace_back(n.name + ".weight", std::move(g.weights));
        }
        if (want_in) accumulate(grad[in0], std::move(g.input));
        break;
      }
      case OpKind::kBatchNorm: {
        BnGrads g = batchnorm_backward(fwd.outputs[in0], n.bn, fwd.bn_caches[ii], dy);
        if (live(n.name + ".shift")) reversed.emplace_back(n.name + ".shift", std::move(g.shift));
        if (live(n.name + ".scale")) reversed.emplace_back(n.name + ".scale", std::move(g.scale));
        if (requires_grad[in0]) accumulate(grad[in0], std::move(g.input));
        break;
      }
      case OpKind::kRelu:
        if (requires_grad[in0]) accumulate(grad[in0], relu_backward(fwd.outputs[in0], dy));
        break;
      case OpKind::kMaxPool:
        if (requires_grad[in0]) {
          accumulate(grad[in0],
                     maxpool2d_backward(fwd.outputs[in0].shape(), fwd.pools[ii], dy));
        }
        break;
      case OpKind::kEltwise: {
        const int in1 = n.inputs[1];
        EltwiseGrads g = eltwise_backward(fwd.outputs[in0], fwd.outputs[in1], n.combine, dy);
        if (requires_grad[in0]) accumulate(grad[in0], std::move(g.a));
        if (requires_grad[in1]) accumulate(grad[in1], std::move(g.b));
        break;
      }
    }
    dy = Tensor();  // release activations' gradient early
  }
  out.params.assign(std::make_move_iterator(reversed.rbegin()),
                    std::make_move_iterator(reversed.rend()));
  if (want_input_grads) {
    for (std::size_t k = 0; k < input_grads.size(); ++k) {
      if (input_grads[k].empty()) input_grads[k] = Tensor(fwd.outputs[graph.input_nodes()[k]].shape());
    }
    out.inputs = std::move(input_grads);
  }
  return out;
}

Gradients backward(const NetworkGraph& graph, const ForwardResult& fwd,
                   std::span<const Tensor> class_grads, std::span<const Tensor> box_grads,
                   bool want_input_grads) {
  const auto& heads = graph.heads();
  if (class_grads.size() != heads.size() || box_grads.size() != heads.size()) {
    throw ShapeError("backward: expected one class and one box gradient per head");
  }
  std::vector<GradSeed> seeds;
  seeds.reserve(2 * heads.size());
  for (std::size_t i = 0; i < heads.size(); ++i) {
    seeds.push_back({heads[i].class_node, class_grads[i]});
    seeds.push_back({heads[i].box_node, box_grads[i]});
  }
  return backward(graph, fwd, seeds, want_input_grads);
}

}  // namespace dssd
