#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "xdistill/tensor.hpp"

namespace xdistill {

enum class LayerKind { Conv, Linear };
enum class Activation { ReLU, None };
enum class Role { Teacher, Student };

const char* to_string(LayerKind kind) noexcept;
const char* to_string(Activation act) noexcept;
const char* to_string(Role role) noexcept;

struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  std::size_t in = 0;   // input channels (conv) or features (linear)
  std::size_t out = 0;  // output channels or features
  std::size_t k = 1, stride = 1, pad = 0;
  Activation act = Activation::ReLU;

  static LayerSpec conv(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t stride,
                        std::size_t pad);
  static LayerSpec linear(std::size_t d_in, std::size_t d_out);

  Shape weight_shape() const;
  bool operator==(const LayerSpec&) const = default;
};

struct InputShape {
  std::size_t c = 1, h = 1, w = 1;
  std::size_t size() const noexcept { return c * h * w; }
  bool operator==(const InputShape&) const = default;
};

struct Layer {
  LayerSpec spec;
  Tensor weight;
  std::vector<double> bias;  // only the final linear layer carries a bias
  bool operator==(const Layer&) const = default;
};

// A plain stack: Conv+ReLU layers followed by exactly one Linear classifier
// (no activation). Conv layers carry no bias; the classifier does.
class Network {
 public:
  Network() = default;
  // Zero-initialized weights.
  Network(InputShape input, std::vector<LayerSpec> specs, Role role = Role::Teacher);
  Network(InputShape input, std::vector<Layer> layers, Role role);

  const InputShape& input() const noexcept { return input_; }
  Role role() const noexcept { return role_; }
  void set_role(Role role) noexcept { role_ = role; }

  std::size_t num_layers() const noexcept { return layers_.size(); }
  // Number of convolutional (distillable) layers: all but the classifier.
  std::size_t num_conv() const noexcept { return layers_.empty() ? 0 : layers_.size() - 1; }
  std::size_t num_classes() const { return layers_.back().spec.out; }

  const Layer& layer(std::size_t l) const { return layers_.at(l); }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  const Layer& classifier() const { return layers_.back(); }

  void set_weight(std::size_t l, Tensor weight);
  void set_bias(std::vector<double> bias);

  // Feature-map extents produced by layer l for a batch of n samples.
  Shape output_shape(std::size_t l, std::size_t n = 1) const;
  Shape input_shape_of(std::size_t l, std::size_t n = 1) const;

  std::size_t total_weights() const;

  bool operator==(const Network&) const = default;

 private:
  void validate() const;

  InputShape input_{};
  std::vector<Layer> layers_;
  Role role_ = Role::Teacher;
};

// Builds the desk architecture: conv layers with the given channel counts and
// strides (kernel k, pad k/2, ReLU), then flatten and a linear classifier.
Network make_convnet(InputShape input, const std::vector<std::size_t>& channels,
                     const std::vector<std::size_t>& strides, std::size_t k, std::size_t num_classes);

// Kaiming fan-in initialization: N(0, 2/fan_in) for ReLU layers, N(0, 1/fan_in)
// for the classifier, zero bias.
void init_kaiming(Network& net, std::uint64_t seed);

// relu(conv(x)) for one conv layer (im2col path).
Tensor conv_layer_forward(const Layer& layer, const Tensor& x);
// Flatten + W x + b; returns (n, d_out, 1, 1).
Tensor linear_forward(const Layer& layer, const Tensor& x);

struct ForwardResult {
  std::vector<Tensor> features;  // h_1 .. h_L, one per conv layer (post-ReLU)
  Tensor logits;                 // (n, classes, 1, 1)
};

ForwardResult forward_collect(const Network& net, const Tensor& x);
Tensor forward_logits(const Network& net, const Tensor& x);

// Per-layer binary tensors congruent to the weights: 1 = kept, 0 = pruned.
struct WeightMask {
  std::vector<Tensor> layers;

  static WeightMask ones(const Network& net);
  static WeightMask from_nonzero(const Network& net);

  bool congruent(const Network& net) const;
  // Zeroes every masked weight.
  void apply(Network& net) const;
  std::size_t kept() const;
  std::size_t total() const;
};

struct PruneScheme {
  enum class Kind { Structured, Unstructured };
  Kind kind = Kind::Unstructured;
  // Structured: one channel-keep fraction per conv layer, or a single value
  // applied to every conv layer except the last (whose outputs feed the
  // shared classifier and are always kept).
  std::vector<double> keep;
  // Unstructured: target sparsity r, imposed during distillation.
  double sparsity = 0.0;
  // Layer indices left untouched; the classifier is always included.
  std::set<std::size_t> skip_layers;

  static PruneScheme unstructured(double r);
  static PruneScheme structured(std::vector<double> keep);
};

// For each layer, the teacher output-channel index of every student output channel.
struct ChannelMap {
  std::vector<std::vector<std::size_t>> kept;
  bool identity(std::size_t l) const;
};

struct StudentBuild {
  Network student;
  WeightMask mask;
  ChannelMap channels;
};

// Normalizes the scheme against a network (skip set, keep vector) and validates it.
PruneScheme resolve_scheme(const Network& teacher, PruneScheme scheme);

StudentBuild build_student(const Network& teacher, const PruneScheme& scheme);

// Indices of the `keep` output channels with the largest kernel L1 norms,
// returned in ascending index order. Equal norms favour the lower index.
std::vector<std::size_t> select_channels_l1(const Tensor& kernel, std::size_t keep);

// Kept-channel count for a keep fraction: floor(fraction * channels), at least 1.
std::size_t kept_channel_count(std::size_t channels, double fraction);

// Parameter and FLOP accounting per sample. Params count weight elements
// (classifier bias excluded); FLOPs are 2 x multiply-accumulates of every
// conv/linear output element. The *_nonzero variants skip zero weights.
struct Complexity {
  std::uint64_t params = 0;
  std::uint64_t params_nonzero = 0;
  std::uint64_t flops = 0;
  std::uint64_t flops_nonzero = 0;
};

Complexity count_params_flops(const Network& net);

}  // namespace xdistill
