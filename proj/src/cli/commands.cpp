#include <cmath>
#include <cstdio>
#include <iostream>
#include <numeric>

#include <CLI11.hpp>

#include "xdistill/cli.hpp"
#include "xdistill/csv.hpp"
#include "xdistill/error.hpp"
#include "xdistill/model_io.hpp"
#include "xdistill/theory.hpp"

namespace xdistill::cli {

namespace fs = std::filesystem;

namespace {

struct Splits {
  Dataset train, test;
};

Splits load_data(const RunConfig& c) {
  const auto& d = c.data;
  if (d.source == "idx") {
    return {load_idx(d.train_images, d.train_labels, d.num_classes),
            load_idx(d.test_images, d.test_labels, d.num_classes)};
  }
  SynthSpec s;
  s.num_classes = d.num_classes;
  s.per_class = d.per_class;
  s.c = d.channels;
  s.h = d.height;
  s.w = d.width;
  s.noise = d.noise;
  s.seed = d.seed;
  s.draw = 0;
  SynthSpec t = s;
  t.per_class = d.test_per_class;
  t.draw = 1;
  return {synth_blobs(s), synth_blobs(t)};
}

struct MeanStd {
  double mean = 0.0, std = 0.0;
};

// Sample standard deviation; a single value has std 0.
MeanStd mean_std(const std::vector<double>& v) {
  MeanStd out;
  if (v.empty()) return out;
  out.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() < 2) return out;
  double ss = 0.0;
  for (double x : v) ss += (x - out.mean) * (x - out.mean);
  out.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  return out;
}

std::string num(double v) { return csv_number(v); }
std::string num(std::uint64_t v) { return csv_number(v); }

void prepare_out(const RunConfig& c) {
  fs::create_directories(c.out_dir);
  write_text_file(c.out_dir / "resolved.ini", resolved_config_text(c));
}

std::string seed_tag(std::uint64_t seed) { return "s" + std::to_string(seed); }

struct SeedOutcome {
  CompressResult result;
  Accuracy acc;
  double lr_last = 0.0;  // held-out L^r at the last conv layer
};

SeedOutcome compress_seed(const RunConfig& c, const Network& teacher, const Splits& data, std::uint64_t seed,
                          DistillConfig dc) {
  dc.seed = seed;
  const Dataset kshot = kshot_sample(data.train, c.data.k, seed);
  SeedOutcome out;
  out.result = compress_network(teacher, kshot, dc, c.scheme(), c.regularizer());
  out.acc = evaluate_accuracy(out.result.student, data.test);
  // Inconsistency metrics need congruent networks; structured students report 0.
  bool congruent = true;
  for (std::size_t l = 0; l < teacher.num_layers(); ++l) {
    congruent = congruent && teacher.layer(l).spec == out.result.student.layer(l).spec;
  }
  if (congruent) out.lr_last = inconsistency_metrics(teacher, out.result.student, data.test.images).back().estimation;
  return out;
}

void write_seed_files(const RunConfig& c, const Network& teacher, const Splits& data, std::uint64_t seed,
                      const SeedOutcome& o) {
  const std::string tag = seed_tag(seed);
  save_model(o.result.student, c.out_dir / ("student_" + tag + ".xdnc"));

  CsvTable trace("trace", {"layer", "iter", "loss", "sparsity", "lr"});
  for (const auto& r : o.result.trace) {
    trace.add_row({num(std::uint64_t{r.layer}), num(std::uint64_t{r.iter}), num(r.loss), num(r.sparsity), num(r.lr)});
  }
  trace.write(c.out_dir / ("trace_" + tag + ".csv"));

  CsvTable layers("layers", {"layer", "skipped", "mode", "final_loss", "sparsity"});
  for (const auto& r : o.result.layers) {
    layers.add_row({num(std::uint64_t{r.layer}), r.skipped ? "1" : "0", to_string(r.mode), num(r.final_loss),
                    num(r.sparsity)});
  }
  layers.write(c.out_dir / ("layers_" + tag + ".csv"));

  if (!o.result.finetune_log.empty()) {
    CsvTable ft("finetune", {"iteration", "loss", "train_acc"});
    for (const auto& r : o.result.finetune_log) {
      ft.add_row({num(std::uint64_t{r.iteration}), num(r.loss), num(r.train_acc)});
    }
    ft.write(c.out_dir / ("finetune_" + tag + ".csv"));
  }

  bool congruent = true;
  for (std::size_t l = 0; l < teacher.num_layers(); ++l) {
    congruent = congruent && teacher.layer(l).spec == o.result.student.layer(l).spec;
  }
  if (congruent) {
    CsvTable inc("inconsistency", {"layer", "eps_T", "eps_S", "estimation"});
    for (const auto& r : inconsistency_metrics(teacher, o.result.student, data.test.images)) {
      inc.add_row({num(std::uint64_t{r.layer}), num(r.eps_T), num(r.eps_S), num(r.estimation)});
    }
    inc.write(c.out_dir / ("inconsistency_" + tag + ".csv"));
  }
}

Network load_teacher(const RunConfig& c) { return load_model(c.teacher_path()); }

int cmd_train_teacher(const RunConfig& c) {
  const Splits data = load_data(c);
  const Network arch = make_convnet(InputShape{data.train.images.shape().c, data.train.images.shape().h,
                                               data.train.images.shape().w},
                                    c.teacher.channels, c.teacher.strides, c.teacher.kernel, data.train.num_classes);
  check_learning_rate(c.train.lr);
  const TrainResult tr = train_teacher(arch, data.train, c.train);
  const fs::path path = c.teacher_path();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_model(tr.net, path);

  CsvTable log("teacher-log", {"iteration", "loss", "train_acc"});
  for (const auto& r : tr.log) log.add_row({num(std::uint64_t{r.iteration}), num(r.loss), num(r.train_acc)});
  log.write(c.out_dir / "teacher_log.csv");

  const Accuracy acc = evaluate_accuracy(tr.net, data.test);
  CsvTable ev("teacher-eval", {"top1", "top5", "mean_loss"});
  ev.add_row({num(acc.top1), num(acc.top5), num(acc.mean_loss)});
  ev.write(c.out_dir / "teacher_eval.csv");
  std::printf("teacher saved to %s: held-out top1 %.4f top5 %.4f\n", path.string().c_str(), acc.top1, acc.top5);
  return 0;
}

int cmd_compress(const RunConfig& c) {
  const Splits data = load_data(c);
  const Network teacher = load_teacher(c);
  check_learning_rate(c.distill.lr);
  CsvTable summary("compress", {"seed", "top1", "top5", "params_nonzero", "flops_nonzero", "lr_last"});
  std::vector<double> top1, top5, lr_last;
  for (std::uint64_t seed : c.seeds) {
    const SeedOutcome o = compress_seed(c, teacher, data, seed, c.distill);
    write_seed_files(c, teacher, data, seed, o);
    const Complexity cx = count_params_flops(o.result.student);
    summary.add_row({std::to_string(seed), num(o.acc.top1), num(o.acc.top5), num(cx.params_nonzero),
                     num(cx.flops_nonzero), num(o.lr_last)});
    top1.push_back(o.acc.top1);
    top5.push_back(o.acc.top5);
    lr_last.push_back(o.lr_last);
    std::printf("seed %llu: %s top1 %.4f top5 %.4f final-layer L^r %.6g\n", static_cast<unsigned long long>(seed),
                to_string(c.distill.mode), o.acc.top1, o.acc.top5, o.lr_last);
  }
  const MeanStd a = mean_std(top1), b = mean_std(top5), e = mean_std(lr_last);
  summary.add_row({"mean", num(a.mean), num(b.mean), "", "", num(e.mean)});
  summary.add_row({"std", num(a.std), num(b.std), "", "", num(e.std)});
  summary.write(c.out_dir / "compress.csv");
  std::printf("%s over %zu seeds: top1 %.4f +- %.4f\n", to_string(c.distill.mode), c.seeds.size(), a.mean, a.std);
  return 0;
}

int cmd_evaluate(const RunConfig& c) {
  const Splits data = load_data(c);
  std::vector<fs::path> models = c.evaluate.models;
  if (models.empty()) models.push_back(c.teacher_path());
  CsvTable table("evaluate", {"model", "top1", "top5", "params", "params_nonzero", "flops", "flops_nonzero"});
  for (const auto& m : models) {
    const Network net = load_model(m);
    const Accuracy acc = evaluate_accuracy(net, data.test);
    const Complexity cx = count_params_flops(net);
    table.add_row({m.filename().string(), num(acc.top1), num(acc.top5), num(cx.params), num(cx.params_nonzero),
                   num(cx.flops), num(cx.flops_nonzero)});
    std::printf("%s: top1 %.4f top5 %.4f params %llu (%llu nonzero)\n", m.string().c_str(), acc.top1, acc.top5,
                static_cast<unsigned long long>(cx.params), static_cast<unsigned long long>(cx.params_nonzero));
  }
  table.write(c.out_dir / "evaluate.csv");
  return 0;
}

int cmd_verify_bounds(const RunConfig& c) {
  const Splits data = load_data(c);
  const Network teacher = load_teacher(c);
  const fs::path sp = c.bounds.student.empty() ? c.out_dir / ("student_" + seed_tag(c.seeds.front()) + ".xdnc")
                                               : c.bounds.student;
  const Network student = load_model(sp);
  Dataset eval = data.test;
  if (c.bounds.samples > 0 && c.bounds.samples < eval.size()) {
    std::vector<std::size_t> idx(c.bounds.samples);
    std::iota(idx.begin(), idx.end(), 0);
    eval = subset(eval, idx);
  }
  const BoundReport rep = theorem_bound(teacher, student, c.bounds.mu, eval.images, eval.labels);
  rep.write_csv(c.out_dir / "bounds.csv");
  std::printf("bound %s: mean lhs %.6g, mean rhs %.6g, min slack %.6g, %zu violations over %zu samples\n",
              rep.satisfied ? "holds" : "VIOLATED", rep.lhs_mean, rep.rhs_mean, rep.min_slack, rep.violations,
              rep.lhs.size());
  return 0;
}

// Singles, then runs of consecutive designated layers of each requested size.
std::vector<std::vector<std::size_t>> ablation_subsets(const std::vector<std::size_t>& layers,
                                                       const std::vector<std::size_t>& sizes) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s : sizes) {
    if (s > layers.size()) continue;
    for (std::size_t i = 0; i + s <= layers.size(); ++i) {
      out.emplace_back(layers.begin() + static_cast<std::ptrdiff_t>(i),
                       layers.begin() + static_cast<std::ptrdiff_t>(i + s));
    }
  }
  return out;
}

int cmd_ablate(const RunConfig& c) {
  if (c.distill.mode == DistillMode::NC) {
    throw ConfigError("[distill] ablate-cross-layers needs a cross mode (correction, imitation, cross or soft)");
  }
  const Splits data = load_data(c);
  const Network teacher = load_teacher(c);
  std::vector<std::size_t> layers = c.ablate.layers;
  if (layers.empty()) {
    layers.resize(teacher.num_conv());
    std::iota(layers.begin(), layers.end(), 0);
  }
  auto subsets = ablation_subsets(layers, c.ablate.sizes);
  CsvTable table("ablate", {"cross_layers", "size", "top1_mean", "top1_std", "lr_last_mean"});
  auto run = [&](const std::string& label, std::size_t size, std::optional<std::set<std::size_t>> cross) {
    DistillConfig dc = c.distill;
    dc.cross_layers = std::move(cross);
    std::vector<double> acc, lr;
    for (std::uint64_t seed : c.seeds) {
      const SeedOutcome o = compress_seed(c, teacher, data, seed, dc);
      acc.push_back(o.acc.top1);
      lr.push_back(o.lr_last);
    }
    const MeanStd a = mean_std(acc);
    table.add_row({label, std::to_string(size), num(a.mean), num(a.std), num(mean_std(lr).mean)});
    std::printf("cross at {%s}: top1 %.4f +- %.4f\n", label.c_str(), a.mean, a.std);
  };
  run("none", 0, std::set<std::size_t>{});
  for (const auto& s : subsets) {
    std::string label;
    for (std::size_t i = 0; i < s.size(); ++i) label += (i ? "+" : "") + std::to_string(s[i]);
    run(label, s.size(), std::set<std::size_t>(s.begin(), s.end()));
  }
  run("all", layers.size(), std::nullopt);
  table.write(c.out_dir / "ablate.csv");
  return 0;
}

int cmd_sweep(const RunConfig& c) {
  const Splits data = load_data(c);
  const Network teacher = load_teacher(c);
  const std::size_t n = c.sweep.steps;
  auto grid = [n](std::size_t i) { return static_cast<double>(i) / static_cast<double>(n - 1); };
  CsvTable table("sweep", {"mode", "mu", "alpha", "beta", "top1_mean", "top1_std", "lr_last_mean"});
  auto run = [&](DistillConfig dc) {
    std::vector<double> acc, lr;
    for (std::uint64_t seed : c.seeds) {
      const SeedOutcome o = compress_seed(c, teacher, data, seed, dc);
      acc.push_back(o.acc.top1);
      lr.push_back(o.lr_last);
    }
    const MeanStd a = mean_std(acc);
    table.add_row({to_string(dc.mode), num(dc.mu), num(dc.alpha), num(dc.beta), num(a.mean), num(a.std),
                   num(mean_std(lr).mean)});
    std::printf("%s mu %.3g alpha %.3g beta %.3g: top1 %.4f +- %.4f\n", to_string(dc.mode), dc.mu, dc.alpha, dc.beta,
                a.mean, a.std);
  };
  if (c.sweep.param == "mu") {
    for (std::size_t i = 0; i < n; ++i) {
      DistillConfig dc = c.distill;
      dc.mode = DistillMode::Cross;
      dc.mu = grid(i);
      run(dc);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        DistillConfig dc = c.distill;
        dc.mode = DistillMode::Soft;
        dc.alpha = grid(i);
        dc.beta = grid(j);
        run(dc);
      }
    }
  }
  table.write(c.out_dir / "sweep.csv");
  return 0;
}

std::string quoted(const std::string& s) {
  std::string out;
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out += '\\';
    out += ch == '\n' ? ' ' : ch;
  }
  return out;
}

int report(const std::string& kind, const std::string& message, int code) {
  std::cerr << "xdistill: error: kind=" << kind << " message=\"" << quoted(message) << "\"\n";
  return code;
}

}  // namespace

int run_command(const std::string& command, const RunConfig& c) {
  prepare_out(c);
  if (command == "train-teacher") return cmd_train_teacher(c);
  if (command == "compress") return cmd_compress(c);
  if (command == "evaluate") return cmd_evaluate(c);
  if (command == "verify-bounds") return cmd_verify_bounds(c);
  if (command == "ablate-cross-layers") return cmd_ablate(c);
  if (command == "sweep") return cmd_sweep(c);
  throw ConfigError("unknown command '" + command + "'");
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Layer-wise cross distillation for few-shot pruning and quantization"};
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  app.add_option("command", command, "Command to run")
      ->required()
      ->check(CLI::IsMember({"train-teacher", "compress", "evaluate", "verify-bounds", "ablate-cross-layers", "sweep"}));
  app.add_option("--config", config_path, "Run configuration (INI)")->required();
  app.add_option("--seed", seed, "Override the seed list (and the teacher training seed) with one seed");
  app.add_option("--out", out_dir, "Override the output directory");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report("usage", e.what(), 2);
  }

  try {
    RunConfig cfg = load_config(config_path);
    if (seed) {
      cfg.seeds = {*seed};
      cfg.train.seed = *seed;
    }
    if (!out_dir.empty()) cfg.out_dir = fs::absolute(out_dir).lexically_normal();
    cfg.validate();
    return run_command(command, cfg);
  } catch (const ConfigError& e) {
    return report(e.kind(), e.what(), 2);
  } catch (const Error& e) {
    return report(e.kind(), e.what(), 1);
  } catch (const fs::filesystem_error& e) {
    return report("io", e.what(), 1);
  } catch (const std::exception& e) {
    return report("internal", e.what(), 1);
  }
}

}  // namespace xdistill::cli
