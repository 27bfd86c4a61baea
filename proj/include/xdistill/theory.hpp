#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "xdistill/network.hpp"
#include "xdistill/tensor.hpp"

namespace xdistill {

// (c_out, c_in, k, k) kernel as the (c_out, c_in*k*k) matrix acting on im2col columns.
Matrix weight_matrix(const Tensor& kernel);

// 2 * ||W||_2: Lipschitz constant of o -> CE(W o + b; y) for any probability y.
double lipschitz_C(const Tensor& classifier_weight);

// mu * ||W_S|| + (1 - mu) * ||W_T|| with spectral norms.
double c_k_mu(const Matrix& w_S, const Matrix& w_T, double mu);

struct LayerBound {
  std::size_t layer = 0;
  double norm_T = 0.0, norm_S = 0.0;  // spectral norms of the im2col weight matrices
  std::size_t multiplicity = 1;       // max copies of one input pixel among the im2col columns
  double c_mu = 0.0;                  // sqrt(multiplicity) * c_k_mu
  double objective = 0.0;             // mean over samples of mu*||corr|| + (1-mu)*||imit|| (un-squared)
  double estimation = 0.0;            // L^r on the batch, squared / N
  double eps_T = 0.0, eps_S = 0.0;    // squared / N
};

struct BoundReport {
  double mu = 0.0;
  std::vector<LayerBound> layers;
  double C = 0.0;            // 2 * ||W_fc^S||
  double head_gap = 0.0;     // mean of 2 * ||(W^T - W^S) h^T_L + (b^T - b^S)||; 0 for a shared classifier
  std::vector<double> lhs;   // per sample |CE(o^T; y) - CE(o^S; y)|
  std::vector<double> rhs;   // per sample bound
  double lhs_mean = 0.0, rhs_mean = 0.0;
  double min_slack = 0.0, mean_slack = 0.0;
  std::size_t violations = 0;  // samples with lhs > rhs + 1e-9
  bool satisfied = true;

  void write_csv(const std::filesystem::path& path) const;
  std::string csv() const;
};

// Per-sample evaluation of
//   |CE(o^T) - CE(o^S)| <= C * (O_L + sum_{l<L} prod_{k=l+1..L} C_k(mu) * O_l) + head gap
// where O_l = mu ||s(W^T h^T) - s(W^S h^T)|| + (1-mu) ||s(W^T h^S) - s(W^S h^S)||
// with h = the layer-l inputs of each network on that sample. Teacher and
// student must have identical layer shapes.
BoundReport theorem_bound(const Network& teacher, const Network& student, double mu, const Tensor& x,
                          std::span<const std::size_t> labels);

struct InconsistencyRow {
  std::size_t layer = 0;
  double eps_T = 0.0;       // ||s(W^T h^S) - s(W^T h^T)||^2 / N
  double eps_S = 0.0;       // ||s(W^S h^T) - s(W^S h^S)||^2 / N
  double estimation = 0.0;  // ||h^T_l - h^S_l||^2 / N
};

std::vector<InconsistencyRow> inconsistency_metrics(const Network& teacher, const Network& student,
                                                    const Tensor& x);

// Divides every quantity by the matching entry of a reference run (0/0 -> 0).
std::vector<InconsistencyRow> normalize_inconsistency(const std::vector<InconsistencyRow>& rows,
                                                      const std::vector<InconsistencyRow>& reference);

}  // namespace xdistill
