// Acceptance checks. Each criterion prints exactly one PASS/FAIL line.
//
//   xdistill_acceptance [--work DIR] [desk | 1..10 | all]...
//
// "desk" trains the desk teacher and compresses it with NC, Cross and Soft;
// criteria 6, 7 and 8 read its artifacts from DIR/desk and run it first if
// they are missing.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "support/fixtures.hpp"
#include "support/oracles.hpp"
#include "xdistill/cli.hpp"
#include "xdistill/csv.hpp"
#include "xdistill/data.hpp"
#include "xdistill/distill.hpp"
#include "xdistill/error.hpp"
#include "xdistill/kernels.hpp"
#include "xdistill/model_io.hpp"
#include "xdistill/prox.hpp"
#include "xdistill/quant.hpp"
#include "xdistill/runtime.hpp"
#include "xdistill/theory.hpp"
#include "xdistill/trainer.hpp"

using namespace xdistill;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

class Clock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double rel_err(double a, double f, double floor = 1e-4) {
  return std::abs(a - f) / std::max({std::abs(a), std::abs(f), floor});
}

double dist(const Tensor& a, const Tensor& b) { return std::sqrt(linalg::squared_distance(a.data(), b.data())); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Rows of an xdistill CSV keyed by their first cell.
std::map<std::string, std::vector<std::string>> read_csv(const fs::path& p) {
  std::map<std::string, std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string c;
    while (std::getline(ls, c, ',')) cells.push_back(c);
    if (!cells.empty()) rows.emplace(cells[0], cells);
  }
  return rows;
}

double csv_value(const fs::path& p, const std::string& key, std::size_t col) {
  const auto rows = read_csv(p);
  const auto it = rows.find(key);
  if (it == rows.end() || col >= it->second.size()) {
    throw std::runtime_error("missing cell " + key + "/" + std::to_string(col) + " in " + p.string());
  }
  return std::stod(it->second[col]);
}

// teacher_eval.csv holds a single data row under its header.
double teacher_top1(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    return std::stod(line.substr(0, line.find(',')));
  }
  throw std::runtime_error("no data row in " + p.string());
}

// ---------------------------------------------------------------- desk run

struct DeskPaths {
  fs::path root;
  fs::path teacher() const { return root / "teacher.xdnc"; }
  fs::path mode(const std::string& m) const { return root / m; }
  fs::path timing() const { return root / "timing.csv"; }
};

cli::RunConfig desk_config(const DeskPaths& d) {
  cli::RunConfig c = cli::load_config(fs::path(XDISTILL_SOURCE_DIR) / "configs" / "desk.ini");
  c.out_dir = d.root;
  c.teacher.path = d.teacher();
  return c;
}

const std::vector<std::pair<std::string, DistillMode>> kDeskModes{
    {"nc", DistillMode::NC}, {"cross", DistillMode::Cross}, {"soft", DistillMode::Soft}};

void run_desk(const DeskPaths& d) {
  fs::create_directories(d.root);
  fs::remove(d.timing());
  cli::RunConfig c = desk_config(d);
  CsvTable timing("desk-timing", {"stage", "seconds"});
  Clock t;
  if (cli::run_command("train-teacher", c) != 0) throw std::runtime_error("desk teacher training failed");
  timing.add_row({"teacher", csv_number(t.seconds())});
  for (const auto& [name, mode] : kDeskModes) {
    cli::RunConfig m = c;
    m.out_dir = d.mode(name);
    m.distill.mode = mode;
    Clock tm;
    if (cli::run_command("compress", m) != 0) throw std::runtime_error("desk compression failed for " + name);
    timing.add_row({name, csv_number(tm.seconds())});
  }
  timing.write(d.timing());
}

void ensure_desk(const DeskPaths& d) {
  if (!fs::exists(d.timing())) run_desk(d);
}

// ---------------------------------------------------------------- criteria

Verdict c1_kernels() {
  Clock t;
  std::mt19937_64 rng(101);
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t k = std::vector<std::size_t>{1, 2, 3, 5}[pick(0, 3)];
    const std::size_t h = pick(k, 14), w = pick(k, 14);
    const std::size_t stride = pick(1, 3), pad = pick(0, std::min<std::size_t>(2, k - 1));
    const Tensor x = oracle::random_tensor({pick(1, 3), pick(1, 5), h, w}, rng);
    const Tensor kern = oracle::random_tensor({pick(1, 6), x.shape().c, k, k}, rng);
    const Tensor a = conv2d_direct(x, kern, stride, pad);
    const Tensor b = conv2d_gemm(im2col(x, k, stride, pad), kern);
    if (a.shape() != b.shape()) return {false, "shape mismatch at case " + std::to_string(i)};
    for (std::size_t j = 0; j < a.size(); ++j) worst = std::max(worst, std::abs(a[j] - b[j]));
  }
  const double s = t.seconds();
  return {worst <= 1e-9 && s < 10.0, fmt("200 cases, max |direct - gemm| %.3g (tol 1e-9), %.2f s (limit 10 s)", worst, s)};
}

// Contexts at every conv layer of a random 3-conv teacher and a perturbed student.
std::vector<LayerContext> network_contexts(std::uint64_t seed) {
  const Network t = fixture::random_convnet({2, 7, 7}, {3, 4, 3}, {1, 2, 1}, 3, 3, seed);
  const Network s = fixture::perturbed(t, 0.3, seed + 1);
  std::mt19937_64 rng(seed + 2);
  const Tensor x = oracle::random_uniform({3, 2, 7, 7}, rng, 0.0, 1.0);
  const oracle::Forward fT = oracle::forward(t, x), fS = oracle::forward(s, x);
  std::vector<LayerContext> out;
  for (std::size_t l = 0; l < t.num_conv(); ++l) {
    LayerContext c;
    c.h_prev_T = l == 0 ? x : fT.features[l - 1];
    c.h_prev_S = l == 0 ? x : fS.features[l - 1];
    c.w_T = t.layer(l).weight;
    c.w_S = s.layer(l).weight;
    c.stride = t.layer(l).spec.stride;
    c.pad = t.layer(l).spec.pad;
    out.push_back(c);
  }
  return out;
}

Verdict c2_gradients() {
  Clock t;
  const std::vector<LossSpec> specs{LossSpec::nc(), LossSpec::correction(), LossSpec::imitation(),
                                    LossSpec::cross(0.6), LossSpec::soft(0.9, 0.3), LossSpec::soft(0.35, 0.8)};
  double worst_loss = 0.0, worst_bp = 0.0;
  std::size_t checked = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (const LayerContext& c : network_contexts(seed * 17)) {
      for (const LossSpec& spec : specs) {
        const LayerObjective obj(c, spec);
        const Tensor g = obj.value_and_grad(c.w_S).grad;
        const auto fd = oracle::finite_diff(c.w_S.vec(), [&](const std::vector<double>& p) {
          return obj.value(Tensor(c.w_S.shape(), p));
        });
        for (std::size_t i = 0; i < fd.size(); ++i) worst_loss = std::max(worst_loss, rel_err(g[i], fd[i]));
        checked += fd.size();
      }
    }
    const Network net = fixture::random_convnet({2, 6, 6}, {3, 4}, {1, 2}, 3, 4, seed + 50);
    std::mt19937_64 rng(seed + 60);
    const Tensor x = oracle::random_uniform({3, 2, 6, 6}, rng, 0.0, 1.0);
    const std::vector<std::size_t> labels{0, 3, 1};
    const Tensor y = one_hot(labels, 4);
    const BackpropResult br = backprop_grads(net, x, y);
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
      const auto fd = oracle::finite_diff(net.layer(l).weight.vec(), [&](const std::vector<double>& p) {
        Network probe = net;
        probe.set_weight(l, Tensor(net.layer(l).weight.shape(), p));
        return mean_cross_entropy(probe, x, y);
      });
      for (std::size_t i = 0; i < fd.size(); ++i) worst_bp = std::max(worst_bp, rel_err(br.grads.weights[l][i], fd[i]));
      checked += fd.size();
    }
    const auto fdb = oracle::finite_diff(net.classifier().bias, [&](const std::vector<double>& b) {
      Network probe = net;
      probe.set_bias(b);
      return mean_cross_entropy(probe, x, y);
    });
    for (std::size_t i = 0; i < fdb.size(); ++i) worst_bp = std::max(worst_bp, rel_err(br.grads.bias[i], fdb[i]));
  }
  const double s = t.seconds();
  return {worst_loss <= 1e-5 && worst_bp <= 1e-5 && s < 30.0,
          fmt("%zu partials; worst rel err: layer losses %.3g, backprop %.3g (tol 1e-5), %.2f s (limit 30 s)", checked,
              worst_loss, worst_bp, s)};
}

Verdict c3_identities() {
  std::mt19937_64 rng(303);
  std::size_t mismatches = 0;
  auto same = [&](const LayerContext& c, const LossSpec& a, const LossSpec& b) {
    const auto ea = LayerObjective(c, a).value_and_grad(c.w_S);
    const auto eb = LayerObjective(c, b).value_and_grad(c.w_S);
    if (ea.value != eb.value || !(ea.grad == eb.grad)) ++mismatches;
  };
  for (int i = 0; i < 50; ++i) {
    const std::size_t stride = 1 + static_cast<std::size_t>(i % 2);
    const LayerContext c = fixture::random_context(rng, 2 + i % 3, 1 + i % 4, 2 + i % 3, 5 + i % 3, 3, stride, 1);
    same(c, LossSpec::soft(1.0, 1.0), LossSpec::nc());
    same(c, LossSpec::soft(1.0, 0.0), LossSpec::correction());
    same(c, LossSpec::soft(0.0, 1.0), LossSpec::imitation());
    same(c, LossSpec::cross(1.0), LossSpec::correction());
    same(c, LossSpec::cross(0.0), LossSpec::imitation());
    if (soft_cross_loss(c, 1.0, 1.0) != estimation_loss(c) || soft_cross_loss(c, 1.0, 0.0) != correction_loss(c) ||
        soft_cross_loss(c, 0.0, 1.0) != imitation_loss(c) || combined_loss(c, 1.0) != correction_loss(c) ||
        combined_loss(c, 0.0) != imitation_loss(c)) {
      ++mismatches;
    }
  }
  return {mismatches == 0, fmt("50 contexts x 5 endpoint identities (values and gradients), %zu bitwise mismatches",
                               mismatches)};
}

Verdict c4_prox() {
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> lam(0.0, 2.0), lev(0.0, 0.99);
  double worst_l1 = 0.0, worst_group = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = oracle::random_tensor({4, 2, 3, 3}, rng);
    const double l = lam(rng);
    const Tensor p = prox_l1(x, l), q = prox_group(x, l);
    for (std::size_t i = 0; i < x.size(); ++i) worst_l1 = std::max(worst_l1, std::abs(p[i] - oracle::prox_l1_grid(x[i], l)));
    for (std::size_t g = 0; g < 4; ++g) {
      const double scale = oracle::prox_group_scale_grid(linalg::norm2(x.sample(g)), l);
      for (std::size_t i = 0; i < 18; ++i)
        worst_group = std::max(worst_group, std::abs(q.sample(g)[i] - scale * x.sample(g)[i]));
    }
  }
  std::size_t expansive = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const Tensor a = oracle::random_tensor({3, 2, 2, 2}, rng), b = oracle::random_tensor({3, 2, 2, 2}, rng);
    const double l = lam(rng);
    if (dist(prox_l1(a, l), prox_l1(b, l)) > dist(a, b) + 1e-12) ++expansive;
    if (dist(prox_group(a, l), prox_group(b, l)) > dist(a, b) + 1e-12) ++expansive;
  }
  std::size_t wrong_count = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor w = oracle::random_tensor({8, 4, 3, 3}, rng);
    const double s = lev(rng);
    const std::size_t want = zero_count(w.size(), s);
    const Tensor p = prox_at_level(w, s);
    const Tensor viaLambda = prox_l1(w, level_to_lambda(w, s));
    if (w.size() - count_nonzero(p.data()) != want || w.size() - count_nonzero(viaLambda.data()) != want) ++wrong_count;
  }
  const bool ok = worst_l1 <= 1e-6 && worst_group <= 1e-6 && expansive == 0 && wrong_count == 0;
  return {ok, fmt("grid oracle max err l1 %.2g group %.2g (tol 1e-6); %zu expansive of 2x10^4 pairs; "
                  "%zu/100 layers off the requested zero count",
                  worst_l1, worst_group, expansive, wrong_count)};
}

Verdict c5_lipschitz() {
  std::mt19937_64 rng(505);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  std::size_t violations = 0;
  double tightest = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    if (trial % 100 == 0) rng.discard(1);
    const std::size_t classes = 2 + static_cast<std::size_t>(trial % 9), d = 3 + static_cast<std::size_t>(trial % 13);
    const Tensor W = oracle::random_tensor({classes, d, 1, 1}, rng, 0.3 + ud(rng));
    const double C = lipschitz_C(W);
    std::vector<double> a(d), b(d), y(classes), oa(classes, 0.0), ob(classes, 0.0);
    const double spread = trial % 4 == 0 ? 1e-3 : 2.0;
    for (std::size_t i = 0; i < d; ++i) {
      a[i] = 2.0 * nd(rng);
      b[i] = a[i] + spread * nd(rng);
    }
    if (trial % 2 == 0) {
      y[static_cast<std::size_t>(trial) % classes] = 1.0;
    } else {
      double s = 0.0;
      for (double& v : y) s += (v = ud(rng));
      for (double& v : y) v /= s;
    }
    for (std::size_t o = 0; o < classes; ++o)
      for (std::size_t i = 0; i < d; ++i) {
        oa[o] += W[o * d + i] * a[i];
        ob[o] += W[o * d + i] * b[i];
      }
    const double lhs = std::abs(soft_cross_entropy(oa, y) - soft_cross_entropy(ob, y));
    const double rhs = C * std::sqrt(linalg::squared_distance(a, b));
    if (lhs > rhs + 1e-9) ++violations;
    if (rhs > 0.0) tightest = std::max(tightest, lhs / rhs);
  }
  return {violations == 0, fmt("10^4 triples, %zu violations at 1e-9 slack, tightest lhs/rhs %.3f", violations, tightest)};
}

Verdict c6_bounds(const DeskPaths& d) {
  std::size_t random_viol = 0, random_samples = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    std::mt19937_64 rng(seed * 7919);
    std::uniform_int_distribution<std::size_t> depth(1, 4), ch(1, 6), stride(1, 2);
    std::vector<std::size_t> channels, strides;
    const std::size_t n = depth(rng);
    for (std::size_t i = 0; i < n; ++i) {
      channels.push_back(ch(rng));
      strides.push_back(i == 0 ? 1 : stride(rng));
    }
    const Network t = fixture::random_convnet({ch(rng), 8, 8}, channels, strides, 3, 4, seed);
    const Network s = fixture::perturbed(t, 0.1 + 0.05 * static_cast<double>(seed % 10), seed + 1000, seed % 3 == 0);
    const Tensor x = oracle::random_uniform({8, t.input().c, 8, 8}, rng, 0.0, 1.0);
    std::vector<std::size_t> y(8);
    for (std::size_t i = 0; i < 8; ++i) y[i] = (i + seed) % 4;
    const BoundReport r = theorem_bound(t, s, static_cast<double>(seed % 11) / 10.0, x, y);
    random_viol += r.violations;
    random_samples += r.lhs.size();
  }

  ensure_desk(d);
  const cli::RunConfig c = desk_config(d);
  SynthSpec spec{c.data.num_classes, c.data.test_per_class, c.data.channels, c.data.height, c.data.width,
                 c.data.noise, c.data.seed, 1};
  const Dataset test = synth_blobs(spec);
  const Network teacher = load_model(d.teacher());
  std::size_t desk_viol = 0, students = 0;
  double min_slack = 1e300;
  for (const auto& [name, mode] : kDeskModes) {
    for (std::uint64_t seed : c.seeds) {
      const Network s = load_model(d.mode(name) / ("student_s" + std::to_string(seed) + ".xdnc"));
      const BoundReport r = theorem_bound(teacher, s, c.bounds.mu, test.images, test.labels);
      desk_viol += r.violations;
      min_slack = std::min(min_slack, r.min_slack);
      ++students;
    }
  }
  return {random_viol == 0 && desk_viol == 0 && students == 15,
          fmt("random pairs: %zu violations over %zu samples; desk students: %zu, %zu violations over %zu samples "
              "each, min slack %.4g",
              random_viol, random_samples, students, desk_viol, test.size(), min_slack)};
}

Verdict c7_desk(const DeskPaths& d) {
  ensure_desk(d);
  const double teacher_acc = teacher_top1(d.root / "teacher_eval.csv");
  std::map<std::string, double> acc, lr;
  for (const auto& [name, mode] : kDeskModes) {
    acc[name] = csv_value(d.mode(name) / "compress.csv", "mean", 1);
    lr[name] = csv_value(d.mode(name) / "compress.csv", "mean", 5);
  }
  double secs = 0.0;
  for (const auto& [stage, row] : read_csv(d.timing()))
    if (stage != "stage") secs += std::stod(row[1]);

  const double slack = 0.005;  // half a point
  const bool teacher_ok = teacher_acc >= 0.95;
  const bool a = acc["cross"] >= acc["nc"] - slack && acc["soft"] >= acc["nc"] - slack &&
                 (acc["cross"] > acc["nc"] || acc["soft"] > acc["nc"]);
  const bool b = lr["soft"] < lr["nc"];
  const bool fast = secs < 600.0;
  return {teacher_ok && a && b && fast,
          fmt("teacher %.4f (>= 0.95 %s); mean top1 nc %.4f cross %.4f soft %.4f (a %s); final-layer L^r nc %.4g "
              "soft %.4g (b %s); %.0f s (limit 600 s)",
              teacher_acc, teacher_ok ? "ok" : "no", acc["nc"], acc["cross"], acc["soft"], a ? "ok" : "no", lr["nc"],
              lr["soft"], b ? "ok" : "no", secs)};
}

Verdict c8_quant(const DeskPaths& d) {
  std::size_t moved = 0;
  for (int bits : {2, 3, 4}) {
    const auto q = quant_points(bits);
    for (double v : q)
      if (project_q(v, q) != v) ++moved;
  }
  ensure_desk(d);
  cli::RunConfig c = desk_config(d);
  c.out_dir = d.root / "w2";
  c.distill.mode = DistillMode::NC;
  c.prune.scheme = "none";
  c.prune.sparsity = 0.0;
  c.quant.mode = "project";
  c.quant.bits = 2;
  Clock t;
  if (cli::run_command("compress", c) != 0) return {false, "W2 compression failed"};
  const double secs = t.seconds();
  const double teacher_acc = teacher_top1(d.root / "teacher_eval.csv");
  const double student_acc = csv_value(c.out_dir / "compress.csv", "mean", 1);
  const double ratio = student_acc / teacher_acc;

  // Every conv weight of the saved students must sit on a scaled copy of Q.
  std::size_t off_grid = 0;
  const auto q2 = quant_points(2);
  for (std::uint64_t seed : c.seeds) {
    const Network s = load_model(c.out_dir / ("student_s" + std::to_string(seed) + ".xdnc"));
    for (std::size_t l = 0; l < s.num_conv(); ++l) {
      std::vector<double> levels;
      for (double v : s.layer(l).weight.data())
        if (std::find(levels.begin(), levels.end(), v) == levels.end()) levels.push_back(v);
      if (levels.size() > q2.size()) ++off_grid;
    }
  }
  return {moved == 0 && ratio >= 0.8 && off_grid == 0 && secs < 300.0,
          fmt("project_q moved %zu points of Q(2..4); W2 NC lazy projection top1 %.4f vs teacher %.4f = %.3f "
              "(>= 0.8), %zu layers with more than %zu levels, %.1f s (limit 300 s)",
              moved, student_acc, teacher_acc, ratio, off_grid, q2.size(), secs)};
}

Verdict c9_determinism() {
  const char* base = R"([data]
per_class = 20
test_per_class = 10
num_classes = 5
height = 10
width = 10
k = 3
[teacher]
channels = 4, 6, 6
strides = 2, 1, 2
[train]
epochs = 60
lr = 0.005
batch_size = 32
[distill]
iters = 40
ramp_iters = 20
seeds = 3, 8
)";
  const std::vector<std::pair<std::string, std::string>> variants{
      {"soft-unstructured", "mode = soft\nmixup = true\ncrop_pad = 1\nfeature_noise = 0.05\n[prune]\nscheme = unstructured\nsparsity = 0.7\n"},
      {"cross-structured", "mode = cross\n[prune]\nscheme = structured\nkeep = 0.5\n"},
      {"nc-quant-penalty", "mode = nc\n[quant]\nmode = penalty\nbits = 3\nlambda = 0.2\n"},
      {"nc-finetune", "mode = nc\nfinetune = true\nfinetune_epochs = 5\n[prune]\nscheme = unstructured\nsparsity = 0.5\n"},
  };
  std::size_t compared = 0, differing = 0;
  std::string first_diff;
  for (const auto& [tag, extra] : variants) {
    fixture::TempDir a("accept-det-" + tag), b("accept-det-" + tag);
    for (const fs::path& out : {a.path, b.path}) {
      cli::RunConfig c = cli::parse_config(std::string(base) + extra, out);
      c.out_dir = out;
      std::vector<std::string> cmds{"train-teacher", "compress", "evaluate"};
      // The bound is defined only for students congruent with the teacher.
      if (c.scheme().kind != PruneScheme::Kind::Structured) cmds.push_back("verify-bounds");
      for (const std::string& cmd : cmds) {
        if (cli::run_command(cmd, c) != 0) return {false, tag + ": " + cmd + " failed"};
      }
    }
    for (const auto& e : fs::directory_iterator(a.path)) {
      const auto name = e.path().filename();
      if (name == "resolved.ini") continue;  // records the output directory itself
      ++compared;
      if (!fs::exists(b.path / name) || slurp(e.path()) != slurp(b.path / name)) {
        ++differing;
        if (first_diff.empty()) first_diff = tag + "/" + name.string();
      }
    }
  }
  return {differing == 0 && compared > 0,
          fmt("%zu model/CSV files over 4 configs x 2 seeds, %zu differ%s%s", compared, differing,
              first_diff.empty() ? "" : ", first: ", first_diff.c_str())};
}

FormatErrc model_code(const std::vector<std::uint8_t>& bytes) {
  try {
    parse_model(bytes);
  } catch (const FormatError& e) {
    return e.code();
  }
  return FormatErrc::Io;
}

FormatErrc idx_code(const std::vector<std::uint8_t>& im, const std::vector<std::uint8_t>& lb) {
  try {
    parse_idx(im, lb);
  } catch (const FormatError& e) {
    return e.code();
  }
  return FormatErrc::Io;
}

void be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

Verdict c10_formats() {
  const Network net = fixture::random_convnet({1, 6, 6}, {3, 4}, {1, 2}, 3, 5, 9);
  const auto good = serialize_model(net);
  auto magic = good;
  magic[0] ^= 0xff;
  auto version = good;
  version[4] = 0x63;
  const std::vector<std::uint8_t> truncated(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(good.size() / 2));
  auto extra = good;
  extra.insert(extra.end() - 8, 8, 0);
  const std::vector<FormatErrc> model{model_code(magic), model_code(version), model_code(truncated), model_code(extra)};
  const std::vector<FormatErrc> model_want{FormatErrc::BadMagic, FormatErrc::VersionMismatch, FormatErrc::Truncated,
                                           FormatErrc::LengthMismatch};

  std::vector<std::uint8_t> im, lb;
  be32(im, 0x803);
  be32(im, 2);
  be32(im, 2);
  be32(im, 2);
  for (std::uint8_t v = 0; v < 8; ++v) im.push_back(v);
  be32(lb, 0x801);
  be32(lb, 2);
  lb.push_back(0);
  lb.push_back(1);
  auto bad_magic = im;
  bad_magic[3] = 0x05;
  std::vector<std::uint8_t> overflow;
  be32(overflow, 0x803);
  for (int i = 0; i < 3; ++i) be32(overflow, 0xffffffffu);
  auto more_labels = lb;
  more_labels[7] = 3;
  more_labels.push_back(1);
  const std::vector<FormatErrc> idx{idx_code(bad_magic, lb), idx_code(overflow, lb), idx_code(im, more_labels)};
  const std::vector<FormatErrc> idx_want{FormatErrc::BadMagic, FormatErrc::DimensionOverflow, FormatErrc::CountMismatch};

  bool clean = true;
  try {
    parse_model(good);
    parse_idx(im, lb);
  } catch (const std::exception&) {
    clean = false;
  }
  std::string got;
  for (FormatErrc e : model) got += std::string(got.empty() ? "" : " ") + to_string(e);
  got += " |";
  for (FormatErrc e : idx) got += std::string(" ") + to_string(e);
  return {clean && model == model_want && idx == idx_want, "model, idx codes: " + got};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"xdistill acceptance checks"};
  fs::path work = fs::temp_directory_path() / "xdistill-acceptance";
  std::vector<std::string> which;
  app.add_option("--work", work, "directory for the desk run artifacts");
  app.add_option("criteria", which, "desk, 1..10 or all (default all)");
  CLI11_PARSE(app, argc, argv);
  if (which.empty() || std::find(which.begin(), which.end(), "all") != which.end()) {
    which = {"1", "2", "3", "4", "5", "6", "7", "8", "9", "10"};
  }
  tune_allocator();
  set_warnings_enabled(false);
  const DeskPaths desk{work / "desk"};

  const std::map<std::string, std::pair<const char*, std::function<Verdict()>>> criteria{
      {"1", {"kernel-equivalence", c1_kernels}},
      {"2", {"gradients", c2_gradients}},
      {"3", {"loss-identities", c3_identities}},
      {"4", {"proximal-operators", c4_prox}},
      {"5", {"classifier-lipschitz", c5_lipschitz}},
      {"6", {"error-bound", [&] { return c6_bounds(desk); }}},
      {"7", {"desk-experiment", [&] { return c7_desk(desk); }}},
      {"8", {"quantization", [&] { return c8_quant(desk); }}},
      {"9", {"determinism", c9_determinism}},
      {"10", {"format-robustness", c10_formats}},
  };

  int failed = 0;
  for (const std::string& w : which) {
    if (w == "desk") {
      Clock t;
      try {
        run_desk(desk);
        std::printf("desk run finished in %.1f s (%s)\n", t.seconds(), desk.root.string().c_str());
      } catch (const std::exception& e) {
        std::printf("desk run failed: %s\n", e.what());
        ++failed;
      }
      continue;
    }
    const auto it = criteria.find(w);
    if (it == criteria.end()) {
      std::fprintf(stderr, "unknown criterion '%s'\n", w.c_str());
      return 2;
    }
    Verdict v;
    try {
      v = it->second.second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s criterion %s (%s): %s\n", v.pass ? "PASS" : "FAIL", w.c_str(), it->second.first, v.detail.c_str());
    std::fflush(stdout);
    failed += v.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
