#pragma once
// Shared builders for randomized test inputs.

#include <filesystem>
#include <random>
#include <string>

#include "oracles.hpp"
#include "xdistill/distill.hpp"
#include "xdistill/network.hpp"

namespace fixture {

using namespace xdistill;

inline Network random_convnet(InputShape in, const std::vector<std::size_t>& channels,
                              const std::vector<std::size_t>& strides, std::size_t k, std::size_t classes,
                              std::uint64_t seed) {
  Network net = make_convnet(in, channels, strides, k, classes);
  init_kaiming(net, seed);
  std::mt19937_64 rng(seed ^ 0x5bd1e995u);
  std::normal_distribution<double> nd(0.0, 0.1);
  std::vector<double> b(classes);
  for (double& v : b) v = nd(rng);
  net.set_bias(b);
  return net;
}

// Copy of `net` with every conv weight perturbed by N(0, scale^2) times its entry scale.
inline Network perturbed(const Network& net, double scale, std::uint64_t seed, bool classifier = false) {
  Network out = net;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  const std::size_t last = classifier ? net.num_layers() : net.num_conv();
  for (std::size_t l = 0; l < last; ++l) {
    Tensor w = net.layer(l).weight;
    for (double& v : w.data()) v += scale * std::abs(v) * nd(rng) + 0.01 * scale * nd(rng);
    out.set_weight(l, w);
  }
  out.set_role(Role::Student);
  return out;
}

// A random single-layer context with congruent teacher/student shapes.
inline LayerContext random_context(std::mt19937_64& rng, std::size_t n = 3, std::size_t c_in = 2, std::size_t c_out = 3,
                                   std::size_t hw = 5, std::size_t k = 3, std::size_t stride = 1, std::size_t pad = 1) {
  LayerContext ctx;
  ctx.h_prev_T = oracle::random_uniform({n, c_in, hw, hw}, rng, 0.0, 1.0);
  ctx.h_prev_S = ctx.h_prev_T;
  std::normal_distribution<double> nd(0.0, 0.2);
  for (double& v : ctx.h_prev_S.data()) v = std::max(0.0, v + nd(rng));
  ctx.w_T = oracle::random_tensor({c_out, c_in, k, k}, rng, 0.5);
  ctx.w_S = ctx.w_T;
  for (double& v : ctx.w_S.data()) v += nd(rng);
  ctx.stride = stride;
  ctx.pad = pad;
  return ctx;
}

// Fresh scratch directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("xdistill-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace fixture
