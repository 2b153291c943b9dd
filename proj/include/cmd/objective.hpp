#pragma once

// Local cost of one AP: covariance ML fidelity f, the joint-sparsity log
// penalty g over the neighbor panel, and the weighted l1 similarity term.
// Also the closed-form steps used by the solver: forward/sparsity step,
// similarity prox, subgradient bookkeeping, and the adaptive combiner.

#include "cmd/errors.hpp"
#include "cmd/linalg.hpp"

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

namespace cmd {

/// gamma_b: nonnegative per-device powers seen by one AP.
using GammaVector = RVector;

/// How the component-wise similarity prox is evaluated.
enum class ProxRule {
  exact,    ///< argmin_{u>=0} |u - anchor| + (u - v)^2 / (2 step)
  literal,  ///< v - min(step * sign(v - anchor), v), and 0 when v == 0
};

inline const char* to_string(ProxRule r) { return r == ProxRule::exact ? "exact" : "literal"; }

inline ProxRule parse_prox_rule(const std::string& s) {
  if (s == "exact") return ProxRule::exact;
  if (s == "literal") return ProxRule::literal;
  throw InvalidConfig("prox_rule: expected 'exact' or 'literal', got '" + s + "'");
}

struct Hyperparams {
  double beta = 0.038;         // sparsity weight
  double tau = 0.0075;         // similarity weight
  double theta = 1.0 / 0.039;  // log-penalty curvature
  double eta = 0.003;          // step size
  double rho = 500.0;          // combiner sharpness
  double iota = 1.0;           // detection threshold, in units of sigma^2
  int iterations = 40;
  ProxRule prox_rule = ProxRule::exact;
};

inline void validate(const Hyperparams& h) {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw InvalidConfig(std::string(name) + " must be > 0");
  };
  auto nonneg = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidConfig(std::string(name) + " must be >= 0");
  };
  // beta = 0 and tau = 0 are legal: they switch a regularizer off.
  nonneg(h.beta, "beta");
  nonneg(h.tau, "tau");
  positive(h.theta, "theta");
  positive(h.eta, "eta");
  positive(h.rho, "rho");
  positive(h.iota, "iota");
  if (h.iterations < 1) throw InvalidConfig("iterations must be >= 1");
}

/// Sigma_b = S diag(gamma) S^H + sigma^2 I.
inline HermitianMatrix assemble_covariance(const GammaVector& gamma, const CMatrix& pilots,
                                           double noise_power) {
  require_dim(gamma.size(), pilots.cols(), "assemble_covariance");
  CMatrix scaled = pilots * gamma.cast<Complex>().asDiagonal();
  HermitianMatrix sigma = scaled * pilots.adjoint();
  sigma.diagonal().array() += noise_power;
  return hermitian_part(sigma);
}

/// ln det(Sigma_b) + tr(Sigma_b^{-1} sample_cov).
inline double f_value(const GammaVector& gamma, const CMatrix& pilots, double noise_power,
                      const HermitianMatrix& sample_cov) {
  const Cholesky chol(assemble_covariance(gamma, pilots, noise_power));
  return chol.logdet() + chol.solve(CMatrix(sample_cov)).trace().real();
}

/// Gradient of f given a factorization of the current Sigma_b. Every entry
/// reuses the one factorization: u_n = Sigma^{-1} s_n and the downdated
/// forms q1, q2 follow from Sherman-Morrison.
inline RVector f_gradient(const Cholesky& sigma_chol, const GammaVector& gamma,
                          const CMatrix& pilots, const HermitianMatrix& sample_cov) {
  require_dim(gamma.size(), pilots.cols(), "f_gradient");
  require_dim(sample_cov.rows(), sigma_chol.dim(), "f_gradient");
  const CMatrix u = sigma_chol.solve(pilots);
  const CMatrix bu = sample_cov * u;
  RVector grad(gamma.size());
  for (Eigen::Index n = 0; n < gamma.size(); ++n) {
    const auto q = downdate_quadforms_from(pilots.col(n), u.col(n), bu.col(n), gamma(n));
    const double d = 1.0 + gamma(n) * q.q1;
    grad(n) = q.q1 / d - q.q2 / (d * d);
  }
  return grad;
}

inline RVector f_gradient(const GammaVector& gamma, const CMatrix& pilots, double noise_power,
                          const HermitianMatrix& sample_cov) {
  return f_gradient(Cholesky(assemble_covariance(gamma, pilots, noise_power)), gamma, pilots,
                    sample_cov);
}

/// Neighbor panel R_b: one column per member of N_b, own estimate last.
using NeighborPanel = Eigen::MatrixXd;

inline NeighborPanel make_panel(const std::vector<const GammaVector*>& neighbors,
                                const GammaVector& own) {
  NeighborPanel panel(own.size(), static_cast<Eigen::Index>(neighbors.size()) + 1);
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    require_dim(neighbors[i]->size(), own.size(), "make_panel");
    panel.col(static_cast<Eigen::Index>(i)) = *neighbors[i];
  }
  panel.col(panel.cols() - 1) = own;
  return panel;
}

inline RVector panel_row_norms(const NeighborPanel& panel) { return panel.rowwise().norm(); }

/// sum_n ( r_n - ln(1 + theta r_n) / theta ), r_n the n-th row norm.
inline double g_value(const NeighborPanel& panel, double theta) {
  const RVector r = panel_row_norms(panel);
  double acc = 0.0;
  for (Eigen::Index n = 0; n < r.size(); ++n) acc += r(n) - std::log1p(theta * r(n)) / theta;
  return acc;
}

inline constexpr double kRowNormFloor = 1e-12;

struct ZStep {
  RVector forward;  ///< gamma - eta grad - tau eta x
  RVector z;        ///< forward step after the sparsity shrinkage
};

/// Forward step followed by the closed-form sparsity shrinkage
/// z_n = s_n - eta beta s_n / ||R(n,:)||, with no shrinkage on rows whose
/// norm is below kRowNormFloor. z may be negative.
inline ZStep z_step(const GammaVector& gamma, const RVector& grad, const RVector& x,
                    const RVector& row_norms, const Hyperparams& h) {
  const Eigen::Index n_count = gamma.size();
  require_dim(grad.size(), n_count, "z_step");
  require_dim(x.size(), n_count, "z_step");
  require_dim(row_norms.size(), n_count, "z_step");
  ZStep out;
  out.forward = gamma - h.eta * grad - (h.tau * h.eta) * x;
  out.z = out.forward;
  const double shrink = h.eta * h.beta;
  for (Eigen::Index n = 0; n < n_count; ++n) {
    if (row_norms(n) >= kRowNormFloor) out.z(n) -= shrink * out.forward(n) / row_norms(n);
  }
  return out;
}

inline double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// One coordinate of the similarity prox at v = z + step * x.
inline double prox_scalar(double v, double anchor, double step, ProxRule rule) {
  if (rule == ProxRule::literal) {
    if (v == 0.0) return 0.0;
    return v - std::min(step * sign0(v - anchor), v);
  }
  double u;
  if (v > anchor + step) {
    u = v - step;
  } else if (v < anchor - step) {
    u = v + step;
  } else {
    u = anchor;
  }
  return u > 0.0 ? u : 0.0;
}

struct ProxResult {
  GammaVector gamma;
  int clamped = 0;  ///< entries that came out negative and were set to 0
};

/// Clamps negatives to +0 and counts them. Also folds -0.0 into +0.0.
inline int clamp_nonnegative(GammaVector& g) {
  int count = 0;
  for (Eigen::Index n = 0; n < g.size(); ++n) {
    if (g(n) < 0.0) ++count;
    if (!(g(n) > 0.0)) g(n) = 0.0;
  }
  return count;
}

/// Component-wise prox of step * |. - anchor|_1 at v = z + step * x_l.
/// A zero step is the identity on z.
inline ProxResult prox_similarity(const RVector& z, const RVector& x_l, const GammaVector& anchor,
                                  double step, ProxRule rule = ProxRule::exact) {
  require_dim(x_l.size(), z.size(), "prox_similarity");
  require_dim(anchor.size(), z.size(), "prox_similarity");
  ProxResult out;
  out.gamma.resize(z.size());
  if (step == 0.0) {
    out.gamma = z;
  } else {
    for (Eigen::Index n = 0; n < z.size(); ++n) {
      out.gamma(n) = prox_scalar(z(n) + step * x_l(n), anchor(n), step, rule);
    }
  }
  out.clamped = clamp_nonnegative(out.gamma);
  return out;
}

/// x_l <- x_l + (z - gamma_new) / step.
inline RVector subgrad_local_update(const RVector& x_l, const RVector& z,
                                    const GammaVector& gamma_new, double step) {
  if (!(step > 0.0)) throw InvalidConfig("subgrad_local_update: step must be > 0");
  return x_l + (z - gamma_new) / step;
}

/// x <- x + c (x_l_new - x_l_old).
inline RVector subgrad_aggregate_update(const RVector& x, double combiner, const RVector& x_l_new,
                                        const RVector& x_l_old) {
  return x + combiner * (x_l_new - x_l_old);
}

struct CombinerWeights {
  std::vector<double> neighbor;  ///< c_lb for l in N_b^-, same order as the neighbor list
  double self = 1.0;             ///< c_bb
};

/// Sigmoid combiner: c_lb = (2/|N_b^-|) / (1 + exp(rho ||gamma_b - gamma_l||)).
inline CombinerWeights combiner_weights(const GammaVector& own,
                                        const std::vector<const GammaVector*>& neighbors,
                                        double rho) {
  CombinerWeights w;
  const std::size_t k = neighbors.size();
  w.neighbor.resize(k);
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double dist = (own - *neighbors[i]).norm();
    const double c = (2.0 / static_cast<double>(k)) / (1.0 + std::exp(rho * dist));
    w.neighbor[i] = c;
    sum += c;
  }
  w.self = 1.0 - sum;
  if (w.self < 0.0) w.self = 0.0;  // rounding only; each term is <= 1/k
  return w;
}

/// eta_b^l = c_lb eta_b / p_l.
inline double stochastic_step_size(double combiner, double eta, double prob) {
  if (!(prob > 0.0)) throw InvalidConfig("selection probability must be > 0");
  return combiner * eta / prob;
}

/// Psi(gamma_b) = sum_l c_lb ||gamma_b - gamma_l||_1 (the self term is 0).
inline double similarity_value(const GammaVector& own,
                               const std::vector<const GammaVector*>& neighbors,
                               const CombinerWeights& w) {
  double acc = 0.0;
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    acc += w.neighbor[i] * (own - *neighbors[i]).lpNorm<1>();
  }
  return acc;
}

}  // namespace cmd
