#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "xdistill/data.hpp"
#include "xdistill/distill.hpp"
#include "xdistill/network.hpp"
#include "xdistill/prox.hpp"
#include "xdistill/trainer.hpp"

namespace xdistill::cli {

struct DataSection {
  std::string source = "synth";  // synth | idx
  std::size_t num_classes = 10;
  std::size_t per_class = 500;
  std::size_t test_per_class = 100;
  std::size_t channels = 1, height = 16, width = 16;
  double noise = 0.45;
  std::uint64_t seed = 1;
  std::filesystem::path train_images, train_labels, test_images, test_labels;
  std::size_t k = 5;
};

struct TeacherSection {
  std::filesystem::path path;  // empty: <out>/teacher.xdnc
  std::vector<std::size_t> channels{16, 32, 64, 64};
  std::vector<std::size_t> strides{2, 2, 2, 1};
  std::size_t kernel = 3;
};

struct PruneSection {
  std::string scheme = "none";  // none | unstructured | structured
  double sparsity = 0.0;
  std::vector<double> keep;
  std::set<std::size_t> skip_layers;
  std::string regularizer = "auto";  // auto | l1 | group21
};

struct QuantSection {
  std::string mode = "none";  // none | project | penalty
  int bits = 2;
  double lambda = 0.1;
};

struct BoundsSection {
  double mu = 0.6;
  std::filesystem::path student;  // empty: the first seed's student
  std::size_t samples = 0;        // 0: the whole held-out set
};

struct SweepSection {
  std::string param = "mu";  // mu | alpha-beta
  std::size_t steps = 11;
};

struct AblateSection {
  std::vector<std::size_t> layers;  // empty: every conv layer
  std::vector<std::size_t> sizes{1, 2, 3};
};

struct EvaluateSection {
  std::vector<std::filesystem::path> models;  // empty: the teacher
};

struct RunConfig {
  DataSection data;
  TeacherSection teacher;
  TrainConfig train{1e-3, 20, 128, 1};
  DistillConfig distill;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  PruneSection prune;
  QuantSection quant;
  BoundsSection bounds;
  SweepSection sweep;
  AblateSection ablate;
  EvaluateSection evaluate;
  std::filesystem::path out_dir = "out";

  // Throws ConfigError on any inconsistency.
  void validate() const;
  std::filesystem::path teacher_path() const;
  PruneScheme scheme() const;
  Regularizer regularizer() const;
};

// INI text with [section] headers and `key = value` lines; ';' or '#' start a
// comment line. Relative paths resolve against base_dir. Unknown sections or
// keys, duplicate keys and malformed values raise ConfigError.
RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir);
RunConfig load_config(const std::filesystem::path& path);

// Every key with its effective value; parse_config of the result reproduces
// the same configuration.
std::string resolved_config_text(const RunConfig& cfg);

// train-teacher | compress | evaluate | verify-bounds | ablate-cross-layers | sweep
int run_command(const std::string& command, const RunConfig& cfg);

// Entry point behind the xdistill executable. Failures print
//   xdistill: error: kind=<kind> message="<text>"
// to stderr and return nonzero.
int run_cli(int argc, char** argv);

}  // namespace xdistill::cli
