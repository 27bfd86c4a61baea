#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "xdistill/cli.hpp"
#include "xdistill/csv.hpp"
#include "xdistill/error.hpp"

namespace xdistill::cli {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

// One section's keys; every lookup is recorded so leftovers can be rejected.
class Section {
 public:
  Section(std::string name, const pt::ptree* tree) : name_(std::move(name)), tree_(tree) {}

  template <class F>
  void get(const std::string& key, F&& apply) {
    seen_.insert(key);
    if (!tree_) return;
    const auto child = tree_->get_child_optional(pt::ptree::path_type(key, '\0'));
    if (!child) return;
    const std::string value = trim(child->data());
    try {
      apply(value);
    } catch (const ConfigError& e) {
      throw ConfigError("[" + name_ + "] " + key + ": " + e.what());
    }
  }

  void reject_unknown() const {
    if (!tree_) return;
    for (const auto& [key, child] : *tree_) {
      if (!child.empty()) throw ConfigError("[" + name_ + "] " + key + ": nested keys are not supported");
      if (!seen_.count(key)) throw ConfigError("unknown key '" + key + "' in section [" + name_ + "]");
    }
  }

 private:
  std::string name_;
  const pt::ptree* tree_;
  std::set<std::string> seen_;
};

std::size_t to_size(const std::string& v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    throw ConfigError("expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty() || !std::isfinite(out)) {
    throw ConfigError("expected a finite number, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "no" || v == "0") return false;
  throw ConfigError("expected true or false, got '" + v + "'");
}

std::vector<std::size_t> to_sizes(const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& s : split_list(v)) out.push_back(to_size(s));
  return out;
}

std::vector<double> to_doubles(const std::string& v) {
  std::vector<double> out;
  for (const auto& s : split_list(v)) out.push_back(to_double(s));
  return out;
}

fs::path to_path(const std::string& v, const fs::path& base) {
  if (v.empty()) return {};
  const fs::path p(v);
  return (p.is_absolute() ? p : base / p).lexically_normal();
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? ", " : "") + items[i];
  return out;
}

template <class Range>
std::string join_sizes(const Range& r) {
  std::vector<std::string> s;
  for (auto v : r) s.push_back(std::to_string(v));
  return join(s);
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

RunConfig parse_config(const std::string& text, const fs::path& base_dir) {
  // Boost's reader only knows ';' comments.
  std::string cleaned;
  {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      const std::string t = trim(line);
      cleaned += (!t.empty() && t[0] == '#') ? std::string() : line;
      cleaned += '\n';
    }
  }
  pt::ptree tree;
  try {
    std::istringstream in(cleaned);
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("line " + std::to_string(e.line()) + ": " + e.message());
  }

  static const std::vector<std::string> kSections = {"data",  "teacher", "train",  "distill",  "prune", "quant",
                                                     "bounds", "sweep",  "ablate", "evaluate", "output"};
  for (const auto& [name, child] : tree) {
    if (child.empty() && !child.data().empty()) throw ConfigError("key '" + name + "' appears outside any section");
    if (std::find(kSections.begin(), kSections.end(), name) == kSections.end()) {
      throw ConfigError("unknown section [" + name + "]");
    }
  }
  auto section = [&](const std::string& name) {
    const auto child = tree.get_child_optional(pt::ptree::path_type(name, '\0'));
    return Section(name, child ? &*child : nullptr);
  };

  RunConfig c;
  {
    Section s = section("data");
    auto& d = c.data;
    s.get("source", [&](const std::string& v) { d.source = v; });
    s.get("num_classes", [&](const std::string& v) { d.num_classes = to_size(v); });
    s.get("per_class", [&](const std::string& v) { d.per_class = to_size(v); });
    s.get("test_per_class", [&](const std::string& v) { d.test_per_class = to_size(v); });
    s.get("channels", [&](const std::string& v) { d.channels = to_size(v); });
    s.get("height", [&](const std::string& v) { d.height = to_size(v); });
    s.get("width", [&](const std::string& v) { d.width = to_size(v); });
    s.get("noise", [&](const std::string& v) { d.noise = to_double(v); });
    s.get("seed", [&](const std::string& v) { d.seed = to_size(v); });
    s.get("train_images", [&](const std::string& v) { d.train_images = to_path(v, base_dir); });
    s.get("train_labels", [&](const std::string& v) { d.train_labels = to_path(v, base_dir); });
    s.get("test_images", [&](const std::string& v) { d.test_images = to_path(v, base_dir); });
    s.get("test_labels", [&](const std::string& v) { d.test_labels = to_path(v, base_dir); });
    s.get("k", [&](const std::string& v) { d.k = to_size(v); });
    s.reject_unknown();
  }
  {
    Section s = section("teacher");
    s.get("path", [&](const std::string& v) { c.teacher.path = to_path(v, base_dir); });
    s.get("channels", [&](const std::string& v) { c.teacher.channels = to_sizes(v); });
    s.get("strides", [&](const std::string& v) { c.teacher.strides = to_sizes(v); });
    s.get("kernel", [&](const std::string& v) { c.teacher.kernel = to_size(v); });
    s.reject_unknown();
  }
  {
    Section s = section("train");
    s.get("lr", [&](const std::string& v) { c.train.lr = to_double(v); });
    s.get("epochs", [&](const std::string& v) { c.train.epochs = to_size(v); });
    s.get("batch_size", [&](const std::string& v) { c.train.batch_size = to_size(v); });
    s.get("seed", [&](const std::string& v) { c.train.seed = to_size(v); });
    s.reject_unknown();
  }
  {
    Section s = section("distill");
    auto& d = c.distill;
    s.get("mode", [&](const std::string& v) {
      try {
        d.mode = distill_mode_from_string(v);
      } catch (const Error& e) {
        throw ConfigError(e.what());
      }
    });
    s.get("mu", [&](const std::string& v) { d.mu = to_double(v); });
    s.get("alpha", [&](const std::string& v) { d.alpha = to_double(v); });
    s.get("beta", [&](const std::string& v) { d.beta = to_double(v); });
    s.get("cross_layers", [&](const std::string& v) {
      if (v == "all") {
        d.cross_layers.reset();
      } else {
        const auto l = to_sizes(v);
        d.cross_layers = std::set<std::size_t>(l.begin(), l.end());
      }
    });
    s.get("iters", [&](const std::string& v) { d.iters = to_size(v); });
    s.get("ramp_iters", [&](const std::string& v) { d.ramp_iters = to_size(v); });
    s.get("lr", [&](const std::string& v) { d.lr = to_double(v); });
    s.get("trace_every", [&](const std::string& v) { d.trace_every = to_size(v); });
    s.get("seeds", [&](const std::string& v) {
      c.seeds.clear();
      for (std::size_t x : to_sizes(v)) c.seeds.push_back(x);
    });
    s.get("mixup", [&](const std::string& v) { d.mixup = to_bool(v); });
    s.get("crop_pad", [&](const std::string& v) { d.crop_pad = to_size(v); });
    s.get("feature_noise", [&](const std::string& v) { d.feature_noise = to_double(v); });
    s.get("finetune", [&](const std::string& v) { d.finetune = to_bool(v); });
    s.get("finetune_epochs", [&](const std::string& v) { d.finetune_epochs = to_size(v); });
    s.get("finetune_lr", [&](const std::string& v) { d.finetune_lr = to_double(v); });
    s.reject_unknown();
  }
  {
    Section s = section("prune");
    auto& p = c.prune;
    s.get("scheme", [&](const std::string& v) { p.scheme = v; });
    s.get("sparsity", [&](const std::string& v) { p.sparsity = to_double(v); });
    s.get("keep", [&](const std::string& v) { p.keep = to_doubles(v); });
    s.get("skip_layers", [&](const std::string& v) {
      const auto l = to_sizes(v);
      p.skip_layers = std::set<std::size_t>(l.begin(), l.end());
    });
    s.get("regularizer", [&](const std::string& v) { p.regularizer = v; });
    s.reject_unknown();
  }
  {
    Section s = section("quant");
    s.get("mode", [&](const std::string& v) { c.quant.mode = v; });
    s.get("bits", [&](const std::string& v) { c.quant.bits = static_cast<int>(to_size(v)); });
    s.get("lambda", [&](const std::string& v) { c.quant.lambda = to_double(v); });
    s.reject_unknown();
  }
  {
    Section s = section("bounds");
    s.get("mu", [&](const std::string& v) { c.bounds.mu = to_double(v); });
    s.get("student", [&](const std::string& v) { c.bounds.student = to_path(v, base_dir); });
    s.get("samples", [&](const std::string& v) { c.bounds.samples = to_size(v); });
    s.reject_unknown();
  }
  {
    Section s = section("sweep");
    s.get("param", [&](const std::string& v) { c.sweep.param = v; });
    s.get("steps", [&](const std::string& v) { c.sweep.steps = to_size(v); });
    s.reject_unknown();
  }
  {
    Section s = section("ablate");
    s.get("layers", [&](const std::string& v) { c.ablate.layers = to_sizes(v); });
    s.get("sizes", [&](const std::string& v) { c.ablate.sizes = to_sizes(v); });
    s.reject_unknown();
  }
  {
    Section s = section("evaluate");
    s.get("models", [&](const std::string& v) {
      c.evaluate.models.clear();
      for (const auto& p : split_list(v)) c.evaluate.models.push_back(to_path(p, base_dir));
    });
    s.reject_unknown();
  }
  {
    Section s = section("output");
    c.out_dir = to_path("out", base_dir);
    s.get("dir", [&](const std::string& v) {
      require(!v.empty(), "output directory must not be empty");
      c.out_dir = to_path(v, base_dir);
    });
    s.reject_unknown();
  }
  c.validate();
  return c;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const fs::path base = fs::absolute(path).parent_path();
  return parse_config(ss.str(), base);
}

void RunConfig::validate() const {
  const auto& d = data;
  require(d.source == "synth" || d.source == "idx", "[data] source must be synth or idx");
  if (d.source == "idx") {
    require(!d.train_images.empty() && !d.train_labels.empty() && !d.test_images.empty() && !d.test_labels.empty(),
            "[data] source = idx needs train_images, train_labels, test_images and test_labels");
  }
  require(d.num_classes >= 2, "[data] num_classes must be at least 2");
  require(d.per_class >= 1 && d.test_per_class >= 1, "[data] per_class and test_per_class must be positive");
  require(d.channels >= 1 && d.height >= 1 && d.width >= 1, "[data] image extents must be positive");
  require(d.noise >= 0.0, "[data] noise must be non-negative");
  require(d.k >= 1, "[data] k must be positive");
  if (d.source == "synth") require(d.k <= d.per_class, "[data] k exceeds per_class");

  require(!teacher.channels.empty(), "[teacher] channels must list at least one conv layer");
  require(teacher.channels.size() == teacher.strides.size(), "[teacher] channels and strides differ in length");
  for (std::size_t v : teacher.channels) require(v >= 1, "[teacher] channel counts must be positive");
  for (std::size_t v : teacher.strides) require(v >= 1, "[teacher] strides must be positive");
  require(teacher.kernel >= 1 && teacher.kernel % 2 == 1, "[teacher] kernel must be odd");

  require(train.lr > 0.0, "[train] lr must be positive");
  require(train.epochs >= 1, "[train] epochs must be positive");
  require(train.batch_size >= 1, "[train] batch_size must be positive");

  try {
    distill.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("[distill] ") + e.what());
  }
  require(!seeds.empty(), "[distill] seeds must not be empty");
  if (distill.cross_layers) {
    for (std::size_t l : *distill.cross_layers) {
      require(l < teacher.channels.size(), "[distill] cross_layers names a layer beyond the conv stack");
    }
  }

  const auto& p = prune;
  require(p.scheme == "none" || p.scheme == "unstructured" || p.scheme == "structured",
          "[prune] scheme must be none, unstructured or structured");
  require(p.regularizer == "auto" || p.regularizer == "l1" || p.regularizer == "group21",
          "[prune] regularizer must be auto, l1 or group21");
  require(p.sparsity >= 0.0 && p.sparsity < 1.0, "[prune] sparsity must lie in [0, 1)");
  if (p.scheme == "structured") {
    require(!p.keep.empty(), "[prune] structured scheme needs keep fractions");
    require(p.keep.size() == 1 || p.keep.size() == teacher.channels.size(),
            "[prune] keep lists one fraction or one per conv layer");
    for (double f : p.keep) require(f > 0.0 && f <= 1.0, "[prune] keep fractions must lie in (0, 1]");
  }
  for (std::size_t l : p.skip_layers) {
    require(l < teacher.channels.size(), "[prune] skip_layers names a layer beyond the conv stack");
  }

  require(quant.mode == "none" || quant.mode == "project" || quant.mode == "penalty",
          "[quant] mode must be none, project or penalty");
  require(quant.bits >= 2 && quant.bits <= 16, "[quant] bits must lie in [2, 16]");
  require(quant.lambda >= 0.0, "[quant] lambda must be non-negative");
  if (quant.mode != "none") {
    require(p.scheme == "none", "[quant] quantization cannot be combined with a pruning scheme in one run");
    require(!distill.finetune, "[quant] finetuning would undo the quantization");
  }

  require(bounds.mu >= 0.0 && bounds.mu <= 1.0, "[bounds] mu must lie in [0, 1]");
  require(sweep.param == "mu" || sweep.param == "alpha-beta", "[sweep] param must be mu or alpha-beta");
  require(sweep.steps >= 2, "[sweep] steps must be at least 2");
  for (std::size_t l : ablate.layers) {
    require(l < teacher.channels.size(), "[ablate] layers names a layer beyond the conv stack");
  }
  for (std::size_t s : ablate.sizes) require(s >= 1, "[ablate] sizes must be positive");
}

fs::path RunConfig::teacher_path() const { return teacher.path.empty() ? out_dir / "teacher.xdnc" : teacher.path; }

PruneScheme RunConfig::scheme() const {
  PruneScheme s = prune.scheme == "structured" ? PruneScheme::structured(prune.keep)
                                                : PruneScheme::unstructured(prune.scheme == "unstructured" ? prune.sparsity : 0.0);
  s.skip_layers = prune.skip_layers;
  return s;
}

Regularizer RunConfig::regularizer() const {
  Regularizer r;
  if (quant.mode != "none") {
    r.kind = quant.mode == "project" ? RegKind::QuantProject : RegKind::QuantPenalty;
    r.bits = quant.bits;
    r.quant_lambda = quant.lambda;
    return r;
  }
  if (prune.scheme == "none") return r;
  if (prune.regularizer == "auto") {
    // Structured schemes remove channels up front; nothing is left to threshold.
    if (prune.scheme == "structured") return r;
    r.kind = RegKind::L1;
  } else {
    r.kind = reg_kind_from_string(prune.regularizer);
  }
  r.target_sparsity = prune.sparsity;
  return r;
}

std::string resolved_config_text(const RunConfig& c) {
  std::ostringstream o;
  auto num = [](double v) { return csv_number(v); };
  auto path = [](const fs::path& p) { return p.string(); };
  const auto& d = c.data;
  o << "[data]\n"
    << "source = " << d.source << "\n"
    << "num_classes = " << d.num_classes << "\n"
    << "per_class = " << d.per_class << "\n"
    << "test_per_class = " << d.test_per_class << "\n"
    << "channels = " << d.channels << "\n"
    << "height = " << d.height << "\n"
    << "width = " << d.width << "\n"
    << "noise = " << num(d.noise) << "\n"
    << "seed = " << d.seed << "\n"
    << "train_images = " << path(d.train_images) << "\n"
    << "train_labels = " << path(d.train_labels) << "\n"
    << "test_images = " << path(d.test_images) << "\n"
    << "test_labels = " << path(d.test_labels) << "\n"
    << "k = " << d.k << "\n\n";
  o << "[teacher]\n"
    << "path = " << path(c.teacher_path()) << "\n"
    << "channels = " << join_sizes(c.teacher.channels) << "\n"
    << "strides = " << join_sizes(c.teacher.strides) << "\n"
    << "kernel = " << c.teacher.kernel << "\n\n";
  o << "[train]\n"
    << "lr = " << num(c.train.lr) << "\n"
    << "epochs = " << c.train.epochs << "\n"
    << "batch_size = " << c.train.batch_size << "\n"
    << "seed = " << c.train.seed << "\n\n";
  const auto& x = c.distill;
  o << "[distill]\n"
    << "mode = " << to_string(x.mode) << "\n"
    << "mu = " << num(x.mu) << "\n"
    << "alpha = " << num(x.alpha) << "\n"
    << "beta = " << num(x.beta) << "\n"
    << "cross_layers = " << (x.cross_layers ? join_sizes(*x.cross_layers) : std::string("all")) << "\n"
    << "iters = " << x.iters << "\n"
    << "ramp_iters = " << x.ramp_iters << "\n"
    << "lr = " << num(x.lr) << "\n"
    << "trace_every = " << x.trace_every << "\n"
    << "seeds = " << join_sizes(c.seeds) << "\n"
    << "mixup = " << (x.mixup ? "true" : "false") << "\n"
    << "crop_pad = " << x.crop_pad << "\n"
    << "feature_noise = " << num(x.feature_noise) << "\n"
    << "finetune = " << (x.finetune ? "true" : "false") << "\n"
    << "finetune_epochs = " << x.finetune_epochs << "\n"
    << "finetune_lr = " << num(x.finetune_lr) << "\n\n";
  std::vector<std::string> keep;
  for (double f : c.prune.keep) keep.push_back(num(f));
  o << "[prune]\n"
    << "scheme = " << c.prune.scheme << "\n"
    << "sparsity = " << num(c.prune.sparsity) << "\n"
    << "keep = " << join(keep) << "\n"
    << "skip_layers = " << join_sizes(c.prune.skip_layers) << "\n"
    << "regularizer = " << c.prune.regularizer << "\n\n";
  o << "[quant]\n"
    << "mode = " << c.quant.mode << "\n"
    << "bits = " << c.quant.bits << "\n"
    << "lambda = " << num(c.quant.lambda) << "\n\n";
  o << "[bounds]\n"
    << "mu = " << num(c.bounds.mu) << "\n"
    << "student = " << path(c.bounds.student) << "\n"
    << "samples = " << c.bounds.samples << "\n\n";
  o << "[sweep]\n"
    << "param = " << c.sweep.param << "\n"
    << "steps = " << c.sweep.steps << "\n\n";
  o << "[ablate]\n"
    << "layers = " << join_sizes(c.ablate.layers) << "\n"
    << "sizes = " << join_sizes(c.ablate.sizes) << "\n\n";
  std::vector<std::string> models;
  for (const auto& m : c.evaluate.models) models.push_back(path(m));
  o << "[evaluate]\n"
    << "models = " << join(models) << "\n\n";
  o << "[output]\n"
    << "dir = " << path(c.out_dir) << "\n";
  return o.str();
}

}  // namespace xdistill::cli
