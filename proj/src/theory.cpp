#include "xdistill/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "xdistill/csv.hpp"
#include "xdistill/error.hpp"
#include "xdistill/kernels.hpp"

namespace xdistill {

Matrix weight_matrix(const Tensor& kernel) {
  const Shape& s = kernel.shape();
  return Matrix(s.n, s.c * s.h * s.w, kernel.vec());
}

double lipschitz_C(const Tensor& classifier_weight) { return 2.0 * operator_norm(weight_matrix(classifier_weight)); }

double c_k_mu(const Matrix& w_S, const Matrix& w_T, double mu) {
  if (!(mu >= 0.0 && mu <= 1.0)) throw InvalidArgument("mu must lie in [0, 1]");
  return mu * operator_norm(w_S) + (1.0 - mu) * operator_norm(w_T);
}

namespace {

void require_congruent(const Network& teacher, const Network& student) {
  if (teacher.num_layers() != student.num_layers()) {
    throw ShapeError("teacher has " + std::to_string(teacher.num_layers()) + " layers, student " +
                     std::to_string(student.num_layers()));
  }
  if (!(teacher.input() == student.input())) throw ShapeError("teacher and student inputs differ");
  for (std::size_t l = 0; l < teacher.num_layers(); ++l) {
    if (!(teacher.layer(l).spec == student.layer(l).spec)) {
      throw ShapeError("layer " + std::to_string(l) +
                       " differs in shape between teacher and student; the bound needs congruent networks");
    }
  }
}

// Layer-l outputs of both weights applied to both inputs.
struct LayerMaps {
  Tensor tt, ss;  // each network on its own input (the forward features)
  Tensor st;      // student weights on the teacher input
  Tensor ts;      // teacher weights on the student input
};

LayerMaps layer_maps(const Network& teacher, const Network& student, std::size_t l, const Tensor& in_T,
                     const Tensor& in_S, const ForwardResult& fT, const ForwardResult& fS) {
  LayerMaps m;
  m.tt = fT.features[l];
  m.ss = fS.features[l];
  m.st = conv_layer_forward(student.layer(l), in_T);
  m.ts = conv_layer_forward(teacher.layer(l), in_S);
  return m;
}

double sample_dist(const Tensor& a, const Tensor& b, std::size_t n) {
  return std::sqrt(linalg::squared_distance(a.sample(n), b.sample(n)));
}

double mean_sq(const Tensor& a, const Tensor& b) {
  return linalg::squared_distance(a.data(), b.data()) / static_cast<double>(a.shape().n);
}

}  // namespace

BoundReport theorem_bound(const Network& teacher, const Network& student, double mu, const Tensor& x,
                          std::span<const std::size_t> labels) {
  if (!(mu >= 0.0 && mu <= 1.0)) throw InvalidArgument("mu must lie in [0, 1]");
  require_congruent(teacher, student);
  const std::size_t N = x.shape().n;
  if (labels.size() != N) throw ShapeError("theorem_bound: label count differs from sample count");
  const std::size_t L = teacher.num_conv();
  const ForwardResult fT = forward_collect(teacher, x);
  const ForwardResult fS = forward_collect(student, x);

  BoundReport rep;
  rep.mu = mu;
  std::vector<std::vector<double>> objective(L, std::vector<double>(N, 0.0));
  for (std::size_t l = 0; l < L; ++l) {
    const Tensor& in_T = l == 0 ? x : fT.features[l - 1];
    const Tensor& in_S = l == 0 ? x : fS.features[l - 1];
    const LayerMaps m = layer_maps(teacher, student, l, in_T, in_S, fT, fS);
    LayerBound lb;
    lb.layer = l;
    const Layer& lt = teacher.layer(l);
    lb.norm_T = operator_norm(weight_matrix(lt.weight));
    lb.norm_S = operator_norm(weight_matrix(student.layer(l).weight));
    const Shape in = teacher.input_shape_of(l);
    lb.multiplicity = im2col_multiplicity(in.h, in.w, lt.spec.k, lt.spec.stride, lt.spec.pad);
    lb.c_mu = std::sqrt(static_cast<double>(lb.multiplicity)) * (mu * lb.norm_S + (1.0 - mu) * lb.norm_T);
    double obj_sum = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const double o = mu * sample_dist(m.tt, m.st, n) + (1.0 - mu) * sample_dist(m.ts, m.ss, n);
      objective[l][n] = o;
      obj_sum += o;
    }
    lb.objective = N ? obj_sum / static_cast<double>(N) : 0.0;
    lb.estimation = mean_sq(m.tt, m.ss);
    lb.eps_T = mean_sq(m.ts, m.tt);
    lb.eps_S = mean_sq(m.st, m.ss);
    rep.layers.push_back(lb);
  }

  const Layer& fcT = teacher.classifier();
  const Layer& fcS = student.classifier();
  rep.C = lipschitz_C(fcS.weight);

  std::vector<double> gap(N, 0.0);
  if (!(fcT.weight == fcS.weight) || fcT.bias != fcS.bias) {
    Layer diff = fcT;
    for (std::size_t i = 0; i < diff.weight.size(); ++i) diff.weight[i] = fcT.weight[i] - fcS.weight[i];
    for (std::size_t j = 0; j < diff.bias.size(); ++j) diff.bias[j] = fcT.bias[j] - fcS.bias[j];
    const Tensor& hL = L ? fT.features[L - 1] : x;
    const Tensor g = linear_forward(diff, hL);
    for (std::size_t n = 0; n < N; ++n) gap[n] = 2.0 * linalg::norm2(g.sample(n));
  }

  // suffix[l] = prod_{k=l+1}^{L-1} C_k, the amplification of layer l's error by later layers.
  std::vector<double> suffix(L, 1.0);
  for (std::size_t l = L; l-- > 1;) suffix[l - 1] = suffix[l] * rep.layers[l].c_mu;

  rep.lhs.resize(N);
  rep.rhs.resize(N);
  rep.min_slack = N ? std::numeric_limits<double>::infinity() : 0.0;
  double slack_sum = 0.0, gap_sum = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    double acc = 0.0;
    for (std::size_t l = 0; l < L; ++l) acc += suffix[l] * objective[l][n];
    rep.rhs[n] = rep.C * acc + gap[n];
    rep.lhs[n] = std::abs(softmax_cross_entropy(fT.logits.sample(n), labels[n]) -
                          softmax_cross_entropy(fS.logits.sample(n), labels[n]));
    const double slack = rep.rhs[n] - rep.lhs[n];
    rep.min_slack = std::min(rep.min_slack, slack);
    slack_sum += slack;
    gap_sum += gap[n];
    rep.lhs_mean += rep.lhs[n];
    rep.rhs_mean += rep.rhs[n];
    if (rep.lhs[n] > rep.rhs[n] + 1e-9) ++rep.violations;
  }
  if (N) {
    const double dn = static_cast<double>(N);
    rep.lhs_mean /= dn;
    rep.rhs_mean /= dn;
    rep.mean_slack = slack_sum / dn;
    rep.head_gap = gap_sum / dn;
  }
  rep.satisfied = rep.violations == 0;
  return rep;
}

std::string BoundReport::csv() const {
  CsvTable t("bound-report", {"row", "layer", "norm_T", "norm_S", "multiplicity", "c_mu", "objective",
                              "estimation", "eps_T", "eps_S", "C", "head_gap", "lhs_mean", "rhs_mean", "min_slack",
                              "mean_slack", "violations", "satisfied", "mu"});
  for (const LayerBound& lb : layers) {
    t.add_row({"layer", std::to_string(lb.layer), csv_number(lb.norm_T), csv_number(lb.norm_S),
               std::to_string(lb.multiplicity), csv_number(lb.c_mu), csv_number(lb.objective),
               csv_number(lb.estimation), csv_number(lb.eps_T), csv_number(lb.eps_S), "", "", "", "", "", "", "", "",
               csv_number(mu)});
  }
  t.add_row({"global", "", "", "", "", "", "", "", "", "", csv_number(C), csv_number(head_gap), csv_number(lhs_mean),
             csv_number(rhs_mean), csv_number(min_slack), csv_number(mean_slack), std::to_string(violations),
             satisfied ? "1" : "0", csv_number(mu)});
  return t.str();
}

void BoundReport::write_csv(const std::filesystem::path& path) const { write_text_file(path, csv()); }

std::vector<InconsistencyRow> inconsistency_metrics(const Network& teacher, const Network& student,
                                                    const Tensor& x) {
  require_congruent(teacher, student);
  const ForwardResult fT = forward_collect(teacher, x);
  const ForwardResult fS = forward_collect(student, x);
  std::vector<InconsistencyRow> rows;
  for (std::size_t l = 0; l < teacher.num_conv(); ++l) {
    const Tensor& in_T = l == 0 ? x : fT.features[l - 1];
    const Tensor& in_S = l == 0 ? x : fS.features[l - 1];
    const LayerMaps m = layer_maps(teacher, student, l, in_T, in_S, fT, fS);
    rows.push_back(InconsistencyRow{l, mean_sq(m.ts, m.tt), mean_sq(m.st, m.ss), mean_sq(m.tt, m.ss)});
  }
  return rows;
}

std::vector<InconsistencyRow> normalize_inconsistency(const std::vector<InconsistencyRow>& rows,
                                                      const std::vector<InconsistencyRow>& reference) {
  if (rows.size() != reference.size()) throw ShapeError("normalize_inconsistency: row counts differ");
  auto ratio = [](double a, double b) { return b == 0.0 ? (a == 0.0 ? 0.0 : std::numeric_limits<double>::infinity()) : a / b; };
  std::vector<InconsistencyRow> out = rows;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out[i].eps_T = ratio(rows[i].eps_T, reference[i].eps_T);
    out[i].eps_S = ratio(rows[i].eps_S, reference[i].eps_S);
    out[i].estimation = ratio(rows[i].estimation, reference[i].estimation);
  }
  return out;
}

}  // namespace xdistill
