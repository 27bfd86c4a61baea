#include "xdistill/network.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "xdistill/error.hpp"
#include "xdistill/kernels.hpp"

namespace xdistill {

const char* to_string(LayerKind kind) noexcept {
  return kind == LayerKind::Conv ? "conv" : "linear";
}
const char* to_string(Activation act) noexcept {
  return act == Activation::ReLU ? "relu" : "none";
}
const char* to_string(Role role) noexcept {
  return role == Role::Teacher ? "teacher" : "student";
}

LayerSpec LayerSpec::conv(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t stride,
                          std::size_t pad) {
  return LayerSpec{LayerKind::Conv, c_in, c_out, k, stride, pad, Activation::ReLU};
}

LayerSpec LayerSpec::linear(std::size_t d_in, std::size_t d_out) {
  return LayerSpec{LayerKind::Linear, d_in, d_out, 1, 1, 0, Activation::None};
}

Shape LayerSpec::weight_shape() const {
  if (kind == LayerKind::Conv) return {out, in, k, k};
  return {out, in, 1, 1};
}

Network::Network(InputShape input, std::vector<LayerSpec> specs, Role role)
    : input_(input), role_(role) {
  layers_.reserve(specs.size());
  for (const auto& s : specs) {
    Layer layer{s, Tensor(s.weight_shape()), {}};
    if (s.kind == LayerKind::Linear) layer.bias.assign(s.out, 0.0);
    layers_.push_back(std::move(layer));
  }
  validate();
}

Network::Network(InputShape input, std::vector<Layer> layers, Role role)
    : input_(input), layers_(std::move(layers)), role_(role) {
  validate();
}

void Network::validate() const {
  if (layers_.empty()) throw ShapeError("network has no layers");
  if (input_.size() == 0) throw ShapeError("network input has zero extent");
  std::size_t c = input_.c, h = input_.h, w = input_.w;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    const LayerSpec& s = layer.spec;
    const std::string where = "layer " + std::to_string(l) + ": ";
    const bool last = l + 1 == layers_.size();
    if (s.in == 0 || s.out == 0) throw ShapeError(where + "zero channel count");
    if (last) {
      if (s.kind != LayerKind::Linear || s.act != Activation::None) {
        throw ShapeError(where + "the final layer must be a linear classifier without activation");
      }
      if (s.in != c * h * w) {
        throw ShapeError(where + "classifier expects " + std::to_string(s.in) +
                         " features, previous layer produces " + std::to_string(c * h * w));
      }
      if (layer.bias.size() != s.out) throw ShapeError(where + "classifier bias has wrong length");
    } else {
      if (s.kind != LayerKind::Conv || s.act != Activation::ReLU) {
        throw ShapeError(where + "hidden layers must be convolutions with ReLU");
      }
      if (s.in != c) {
        throw ShapeError(where + "expects " + std::to_string(s.in) + " input channels, got " +
                         std::to_string(c));
      }
      if (!layer.bias.empty()) throw ShapeError(where + "convolution layers carry no bias");
      h = conv_out_extent(h, s.k, s.stride, s.pad);
      w = conv_out_extent(w, s.k, s.stride, s.pad);
      c = s.out;
    }
    if (layer.weight.shape() != s.weight_shape()) {
      throw ShapeError(where + "weight shape " + layer.weight.shape().str() + " does not match spec " +
                       s.weight_shape().str());
    }
  }
}

void Network::set_weight(std::size_t l, Tensor weight) {
  Layer& layer = layers_.at(l);
  if (weight.shape() != layer.spec.weight_shape()) {
    throw ShapeError("layer " + std::to_string(l) + ": weight shape " + weight.shape().str() +
                     " does not match " + layer.spec.weight_shape().str());
  }
  layer.weight = std::move(weight);
}

void Network::set_bias(std::vector<double> bias) {
  if (bias.size() != layers_.back().spec.out) throw ShapeError("classifier bias has wrong length");
  layers_.back().bias = std::move(bias);
}

Shape Network::output_shape(std::size_t l, std::size_t n) const {
  std::size_t c = input_.c, h = input_.h, w = input_.w;
  for (std::size_t i = 0; i <= l && i < layers_.size(); ++i) {
    const LayerSpec& s = layers_[i].spec;
    if (s.kind == LayerKind::Linear) return {n, s.out, 1, 1};
    h = conv_out_extent(h, s.k, s.stride, s.pad);
    w = conv_out_extent(w, s.k, s.stride, s.pad);
    c = s.out;
  }
  return {n, c, h, w};
}

Shape Network::input_shape_of(std::size_t l, std::size_t n) const {
  if (l == 0) return {n, input_.c, input_.h, input_.w};
  return output_shape(l - 1, n);
}

std::size_t Network::total_weights() const {
  std::size_t total = 0;
  for (const auto& layer : layers_) total += layer.weight.size();
  return total;
}

Network make_convnet(InputShape input, const std::vector<std::size_t>& channels,
                     const std::vector<std::size_t>& strides, std::size_t k, std::size_t num_classes) {
  if (channels.size() != strides.size()) {
    throw InvalidArgument("make_convnet: channel and stride lists differ in length");
  }
  std::vector<LayerSpec> specs;
  std::size_t c = input.c, h = input.h, w = input.w;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    specs.push_back(LayerSpec::conv(c, channels[i], k, strides[i], k / 2));
    h = conv_out_extent(h, k, strides[i], k / 2);
    w = conv_out_extent(w, k, strides[i], k / 2);
    c = channels[i];
  }
  specs.push_back(LayerSpec::linear(c * h * w, num_classes));
  return Network(input, std::move(specs));
}

void init_kaiming(Network& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const LayerSpec& s = net.layer(l).spec;
    const double fan_in = static_cast<double>(s.in * s.k * s.k);
    const double gain = s.act == Activation::ReLU ? 2.0 : 1.0;
    std::normal_distribution<double> dist(0.0, std::sqrt(gain / fan_in));
    Tensor w(s.weight_shape());
    for (double& v : w.data()) v = dist(rng);
    net.set_weight(l, std::move(w));
  }
  net.set_bias(std::vector<double>(net.num_classes(), 0.0));
}

Tensor conv_layer_forward(const Layer& layer, const Tensor& x) {
  const LayerSpec& s = layer.spec;
  return relu(conv2d_gemm(im2col(x, s.k, s.stride, s.pad), layer.weight));
}

Tensor linear_forward(const Layer& layer, const Tensor& x) {
  const LayerSpec& s = layer.spec;
  const std::size_t n = x.shape().n;
  if (x.shape().sample_size() != s.in) {
    throw ShapeError("linear layer expects " + std::to_string(s.in) + " features per sample, got " +
                     std::to_string(x.shape().sample_size()));
  }
  Tensor out({n, s.out, 1, 1});
  linalg::gemm_nt(x.data(), layer.weight.data(), out.data(), n, s.in, s.out);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < s.out; ++j) out[i * s.out + j] += layer.bias[j];
  }
  return out;
}

ForwardResult forward_collect(const Network& net, const Tensor& x) {
  const InputShape& in = net.input();
  const Shape& xs = x.shape();
  if (xs.c != in.c || xs.h != in.h || xs.w != in.w) {
    throw ShapeError("input " + xs.str() + " does not match network input (" + std::to_string(in.c) +
                     ", " + std::to_string(in.h) + ", " + std::to_string(in.w) + ")");
  }
  ForwardResult r;
  r.features.reserve(net.num_conv());
  const Tensor* h = &x;
  for (std::size_t l = 0; l < net.num_conv(); ++l) {
    r.features.push_back(conv_layer_forward(net.layer(l), *h));
    h = &r.features.back();
  }
  r.logits = linear_forward(net.classifier(), *h);
  return r;
}

Tensor forward_logits(const Network& net, const Tensor& x) { return forward_collect(net, x).logits; }

WeightMask WeightMask::ones(const Network& net) {
  WeightMask m;
  for (const auto& layer : net.layers()) m.layers.emplace_back(layer.weight.shape(), 1.0);
  return m;
}

WeightMask WeightMask::from_nonzero(const Network& net) {
  WeightMask m;
  for (const auto& layer : net.layers()) {
    Tensor t(layer.weight.shape());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = layer.weight[i] != 0.0 ? 1.0 : 0.0;
    m.layers.push_back(std::move(t));
  }
  return m;
}

bool WeightMask::congruent(const Network& net) const {
  if (layers.size() != net.num_layers()) return false;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].shape() != net.layer(l).weight.shape()) return false;
  }
  return true;
}

void WeightMask::apply(Network& net) const {
  if (!congruent(net)) throw ShapeError("weight mask is not congruent with the network");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Tensor w = net.layer(l).weight;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (layers[l][i] == 0.0) w[i] = 0.0;
    }
    net.set_weight(l, std::move(w));
  }
}

std::size_t WeightMask::kept() const {
  std::size_t k = 0;
  for (const auto& t : layers) k += count_nonzero(t.data());
  return k;
}

std::size_t WeightMask::total() const {
  std::size_t k = 0;
  for (const auto& t : layers) k += t.size();
  return k;
}

PruneScheme PruneScheme::unstructured(double r) {
  PruneScheme s;
  s.kind = Kind::Unstructured;
  s.sparsity = r;
  return s;
}

PruneScheme PruneScheme::structured(std::vector<double> keep) {
  PruneScheme s;
  s.kind = Kind::Structured;
  s.keep = std::move(keep);
  return s;
}

bool ChannelMap::identity(std::size_t l) const {
  const auto& k = kept.at(l);
  for (std::size_t i = 0; i < k.size(); ++i) {
    if (k[i] != i) return false;
  }
  return true;
}

std::size_t kept_channel_count(std::size_t channels, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw InvalidArgument("channel keep fraction must lie in (0, 1], got " + std::to_string(fraction));
  }
  const auto kept = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(channels) + 1e-9));
  return std::max<std::size_t>(1, std::min(kept, channels));
}

std::vector<std::size_t> select_channels_l1(const Tensor& kernel, std::size_t keep) {
  const std::size_t c_out = kernel.shape().n;
  const std::size_t slice = kernel.shape().sample_size();
  if (keep == 0 || keep > c_out) throw InvalidArgument("select_channels_l1: invalid keep count");
  std::vector<double> norms(c_out, 0.0);
  for (std::size_t o = 0; o < c_out; ++o) {
    for (double v : kernel.sample(o)) norms[o] += std::abs(v);
  }
  std::vector<std::size_t> order(c_out);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });
  order.resize(keep);
  std::sort(order.begin(), order.end());
  (void)slice;
  return order;
}

PruneScheme resolve_scheme(const Network& teacher, PruneScheme scheme) {
  const std::size_t L = teacher.num_conv();
  scheme.skip_layers.insert(teacher.num_layers() - 1);
  for (std::size_t l : scheme.skip_layers) {
    if (l >= teacher.num_layers()) {
      throw InvalidArgument("skip layer " + std::to_string(l) + " exceeds network depth");
    }
  }
  if (scheme.kind == PruneScheme::Kind::Unstructured) {
    if (!(scheme.sparsity >= 0.0 && scheme.sparsity < 1.0)) {
      throw InvalidArgument("unstructured sparsity must lie in [0, 1)");
    }
    return scheme;
  }
  if (scheme.keep.empty()) throw InvalidArgument("structured scheme needs keep fractions");
  if (scheme.keep.size() == 1 && L > 1) {
    const double f = scheme.keep.front();
    scheme.keep.assign(L, f);
    scheme.keep.back() = 1.0;
  } else if (scheme.keep.size() == 1) {
    scheme.keep.assign(1, 1.0);
  }
  if (scheme.keep.size() != L) {
    throw InvalidArgument("structured scheme lists " + std::to_string(scheme.keep.size()) +
                          " keep fractions for " + std::to_string(L) + " conv layers");
  }
  for (std::size_t l = 0; l < L; ++l) {
    const double f = scheme.keep[l];
    if (!(f > 0.0 && f <= 1.0)) {
      throw InvalidArgument("keep fraction for layer " + std::to_string(l) +
                            " would leave no channels (must lie in (0, 1])");
    }
  }
  if (L > 0 && scheme.keep[L - 1] < 1.0 && !scheme.skip_layers.count(L - 1)) {
    throw InvalidArgument("the last convolution feeds the shared classifier; its keep fraction must be 1");
  }
  return scheme;
}

StudentBuild build_student(const Network& teacher, const PruneScheme& raw) {
  const PruneScheme scheme = resolve_scheme(teacher, raw);
  const std::size_t L = teacher.num_conv();
  StudentBuild out;
  out.channels.kept.resize(teacher.num_layers());
  for (std::size_t l = 0; l < teacher.num_layers(); ++l) {
    std::vector<std::size_t> all(teacher.layer(l).spec.out);
    std::iota(all.begin(), all.end(), 0);
    out.channels.kept[l] = std::move(all);
  }

  if (scheme.kind == PruneScheme::Kind::Unstructured) {
    out.student = teacher;
    out.student.set_role(Role::Student);
    out.mask = WeightMask::ones(out.student);
    return out;
  }

  for (std::size_t l = 0; l < L; ++l) {
    if (scheme.skip_layers.count(l) || scheme.keep[l] >= 1.0) continue;
    const Tensor& w = teacher.layer(l).weight;
    out.channels.kept[l] = select_channels_l1(w, kept_channel_count(w.shape().n, scheme.keep[l]));
  }

  std::vector<Layer> layers;
  std::vector<std::size_t> in_keep(teacher.input().c);
  std::iota(in_keep.begin(), in_keep.end(), 0);
  for (std::size_t l = 0; l < L; ++l) {
    const Layer& t = teacher.layer(l);
    const auto& out_keep = out.channels.kept[l];
    LayerSpec spec = t.spec;
    spec.in = in_keep.size();
    spec.out = out_keep.size();
    Tensor w(spec.weight_shape());
    const std::size_t kk = spec.k * spec.k;
    for (std::size_t o = 0; o < out_keep.size(); ++o) {
      for (std::size_t i = 0; i < in_keep.size(); ++i) {
        for (std::size_t p = 0; p < kk; ++p) {
          w[(o * in_keep.size() + i) * kk + p] = t.weight[(out_keep[o] * t.spec.in + in_keep[i]) * kk + p];
        }
      }
    }
    layers.push_back(Layer{spec, std::move(w), {}});
    in_keep = out_keep;
  }
  // The last conv keeps every channel, so the classifier is shared verbatim.
  layers.push_back(teacher.classifier());
  out.student = Network(teacher.input(), std::move(layers), Role::Student);
  out.mask = WeightMask::ones(out.student);
  return out;
}

Complexity count_params_flops(const Network& net) {
  Complexity c;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const Layer& layer = net.layer(l);
    const std::uint64_t total = layer.weight.size();
    const std::uint64_t nz = count_nonzero(layer.weight.data());
    const Shape out = net.output_shape(l, 1);
    const std::uint64_t positions = layer.spec.kind == LayerKind::Conv ? out.plane() : 1;
    c.params += total;
    c.params_nonzero += nz;
    c.flops += 2 * total * positions;
    c.flops_nonzero += 2 * nz * positions;
  }
  return c;
}

}  // namespace xdistill
