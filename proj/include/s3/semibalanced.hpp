#ifndef S3_SEMIBALANCED_HPP
#define S3_SEMIBALANCED_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "s3/balanced.hpp"
#include "s3/entropy.hpp"
#include "s3/error.hpp"
#include "s3/measures.hpp"
#include "s3/softmin.hpp"

namespace s3 {

/// Semi-balanced scaling iterations: the target marginal (beta) is a hard
/// constraint, the source marginal is relaxed by a KL penalty with unit weight.
///
///   f <- -(eps / (1 + eps)) log sum_j exp((g_j - c_ij) / eps) beta_j
///   g <- -eps log sum_i exp((f_i - c_ij) / eps) alpha_i
///
/// No mass equality is required.
template <CostOperator Cost>
DualPotentials solve_semibalanced(std::span<const double> alpha, std::span<const double> beta,
                                  const Cost& cost, const SolverConfig& config,
                                  const DualPotentials* init = nullptr,
                                  const SweepObserver& on_sweep = {}) {
  config.validate();
  detail::require_shape(cost, alpha.size(), beta.size());
  const double ma = mass(alpha), mb = mass(beta);
  detail::require_positive_mass(ma, "source measure");
  detail::require_positive_mass(mb, "target measure");

  const double eps = config.epsilon;
  const double damp = 1.0 / (1.0 + eps);
  const double log_mb = std::log(mb);
  const auto la = log_weights(alpha), lb = log_weights(beta);
  DualPotentials out;
  out.f.assign(alpha.size(), 0.0);
  out.g.assign(beta.size(), 0.0);
  if (init && init->f.size() == alpha.size() && init->g.size() == beta.size()) {
    out.f = init->f;
    out.g = init->g;
  }
  std::vector<double> f_prev, g_prev, buf(alpha.size());
  for (int it = 1; it <= config.max_iterations; ++it) {
    f_prev = out.f;
    g_prev = out.g;
    cost.softmin_to_source(eps, out.g, lb, out.f);
    for (double& v : out.f) v *= damp;
    cost.softmin_to_target(eps, out.f, la, out.g);
    if (config.translation_step) {
      // argmax_t of the dual along (f + t, g - t): e^{-t} sum e^{-f} alpha = m(beta).
      for (std::size_t i = 0; i < buf.size(); ++i) {
        buf[i] = la[i] == kNegInf ? kNegInf : la[i] - out.f[i];
      }
      const double t = log_sum_exp(buf) - log_mb;
      for (double& v : out.f) v += t;
      for (double& v : out.g) v -= t;
    }
    out.iterations_used = it;
    out.final_residual =
        std::max(detail::sup_change(out.f, f_prev), detail::sup_change(out.g, g_prev));
    if (on_sweep) on_sweep(out.f, out.g);
    if (out.final_residual < config.tolerance) {
      out.converged = true;
      break;
    }
  }
  return out;
}

inline DualPotentials solve_semibalanced(const DiscreteMeasure& alpha, const PointMeasure& beta,
                                         const CostMatrix& cost, const SolverConfig& config) {
  return solve_semibalanced(std::span<const double>(alpha.weights),
                            std::span<const double>(beta.weights()), DenseCost(cost), config);
}

/// Semi-balanced dual objective at any (f, g):
///   -sum phi*(-f_i) alpha_i + sum g_j beta_j - eps sum_ij phi*((f_i + g_j - c_ij) / eps) alpha_i beta_j
template <CostOperator Cost>
double semibalanced_dual_objective(std::span<const double> f, std::span<const double> g,
                                   std::span<const double> alpha, std::span<const double> beta,
                                   const Cost& cost, double eps) {
  std::vector<double> s(alpha.size());
  cost.softmin_to_source(eps, g, log_weights(beta), s);
  std::vector<double> plan_terms(alpha.size()), f_terms(alpha.size());
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    if (!(alpha[i] > 0.0)) continue;
    plan_terms[i] = alpha[i] * std::exp((f[i] - s[i]) / eps);
    f_terms[i] = -phi_star(-f[i]) * alpha[i];
  }
  const double plan_mass = compensated_sum(plan_terms);
  return compensated_sum(f_terms) + detail::dot(g, beta) -
         eps * (plan_mass - mass(alpha) * mass(beta));
}

/// Counting loss from converged cross potentials (f, g) and self-potential p:
///   sum (-phi*(-f_i) - p_i) alpha_i + sum g_j beta_j + (eps^2 / 2) (m(alpha) - m(beta))^2
inline double semibalanced_value(const DualPotentials& cross, std::span<const double> alpha,
                                 std::span<const double> beta, const DualPotentials& self,
                                 const SolverConfig& config) {
  if (!cross.converged || !self.converged) throw ConvergenceError("evaluate-before-convergence");
  const double eps = config.epsilon;
  std::vector<double> terms(alpha.size(), 0.0);
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    if (alpha[i] > 0.0) terms[i] = (-phi_star(-cross.f[i]) - self.p[i]) * alpha[i];
  }
  const double dm = mass(alpha) - mass(beta);
  return compensated_sum(terms) + detail::dot(cross.g, beta) + 0.5 * eps * eps * dm * dm;
}

/// Gradient of the counting loss with respect to the source weights.
///
/// Holding the potentials at their optima, the cross term equals the full
/// dual plus eps (m(beta) - m(alpha) m(beta)), and the self term equals half
/// the full symmetric dual plus (eps / 2)(m - m^2). Differentiating those
/// (envelope theorem) gives
///
///   1 - (1 + eps) e^{-f_i} - p_i + eps / 2 + eps^2 (m(alpha) - m(beta)).
///
/// Cells with zero weight get the one-sided derivative from the extended
/// potentials.
inline std::vector<double> semibalanced_grad_alpha(const DualPotentials& cross,
                                                   std::span<const double> alpha,
                                                   std::span<const double> beta,
                                                   const DualPotentials& self,
                                                   const SolverConfig& config) {
  if (!cross.converged || !self.converged) throw ConvergenceError("evaluate-before-convergence");
  const double eps = config.epsilon;
  const double mass_term = eps * eps * (mass(alpha) - mass(beta));
  std::vector<double> grad(alpha.size());
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    grad[i] = 1.0 - (1.0 + eps) * std::exp(-cross.f[i]) - self.p[i] + 0.5 * eps + mass_term;
  }
  return grad;
}

/// Options shared by the grid-vs-points losses.
struct GridLossOptions {
  CostKind cost_kind = CostKind::squared_euclidean;
  std::optional<double> normalization;  // default: longer grid side in pixels
  double prune_below = 0.0;             // cells at or below this enter with zero weight
};

/// Potentials carried between calls to warm-start the next solve.
struct LossWorkspace {
  DualPotentials cross;
  DualPotentials self;
  DivergenceResult scale;
};

struct LossResult {
  double value = 0.0;
  std::vector<double> gradient;  // one entry per grid cell
  int iterations = 0;
  bool converged = true;
  bool zero_target = false;  // annotations empty: regressed to the zero vector
};

namespace detail {

inline std::vector<double> effective_weights(const GridMeasure& grid, double prune_below) {
  std::vector<double> w = grid.values();
  for (double& v : w) {
    if (!(v > prune_below)) v = 0.0;
  }
  return w;
}

inline LossResult zero_vector_loss(const GridMeasure& alpha) {
  LossResult r;
  r.zero_target = true;
  r.gradient = alpha.values();
  std::vector<double> sq(alpha.size());
  for (std::size_t k = 0; k < sq.size(); ++k) sq[k] = 0.5 * alpha.values()[k] * alpha.values()[k];
  r.value = compensated_sum(sq);
  return r;
}

// Dense cost between every cell centre and every annotation.
inline CostMatrix grid_point_cost(const GridMeasure& alpha, const PointMeasure& beta,
                                  const GridLossOptions& opt) {
  const auto centers = alpha.centers();
  return build_cost(centers, beta.points(), opt.cost_kind,
                    opt.normalization.value_or(default_normalization(alpha)));
}

template <class Fn>
auto with_self_cost(const GridMeasure& alpha, const GridLossOptions& opt, Fn&& fn) {
  const double norm = opt.normalization.value_or(default_normalization(alpha));
  if (opt.cost_kind == CostKind::squared_euclidean) {
    const GridCost self(GridGeometry::of(alpha), GridGeometry::of(alpha), norm);
    return fn(self);
  }
  const auto centers = alpha.centers();
  const CostMatrix dense = build_cost(centers, centers, opt.cost_kind, norm);
  return fn(DenseCost(dense));
}

inline void require_prediction_mass(std::span<const double> w) {
  if (!(mass(w) > 0.0)) {
    throw PreconditionError("prediction has zero mass but annotations are not empty");
  }
}

}  // namespace detail

/// The semi-balanced counting loss between a density grid and annotations.
/// Empty annotations regress the grid to the zero vector (value sum v^2 / 2,
/// gradient v). Non-convergence is reported, not thrown; the last iterate is used.
inline LossResult semibalanced_loss(const GridMeasure& alpha, const PointMeasure& beta,
                                    const SolverConfig& config,
                                    const GridLossOptions& options = {},
                                    LossWorkspace* workspace = nullptr) {
  if (beta.empty() || !(mass(beta) > 0.0)) return detail::zero_vector_loss(alpha);
  const auto w = detail::effective_weights(alpha, options.prune_below);
  detail::require_prediction_mass(w);
  const CostMatrix cross_cost = detail::grid_point_cost(alpha, beta, options);

  DualPotentials cross = solve_semibalanced(std::span<const double>(w),
                                            std::span<const double>(beta.weights()),
                                            DenseCost(cross_cost), config,
                                            workspace ? &workspace->cross : nullptr);
  DualPotentials self = detail::with_self_cost(alpha, options, [&](const auto& cost) {
    return symmetric_potential(std::span<const double>(w), cost, config,
                               workspace ? &workspace->self : nullptr);
  });

  LossResult r;
  r.iterations = cross.iterations_used + self.iterations_used;
  r.converged = cross.converged && self.converged;
  // Evaluate at the last iterate; the flag carries the convergence state.
  DualPotentials c_eval = cross, s_eval = self;
  c_eval.converged = s_eval.converged = true;
  r.value = semibalanced_value(c_eval, w, beta.weights(), s_eval, config);
  r.gradient = semibalanced_grad_alpha(c_eval, w, beta.weights(), s_eval, config);
  if (workspace) {
    workspace->cross = std::move(cross);
    workspace->self = std::move(self);
  }
  return r;
}

/// Entropic Wasserstein loss without the self-correcting term, under the same
/// semi-balanced relaxation (the only construction defined for unequal masses):
///   sum (1 - e^{-f_i}) alpha_i + sum g_j beta_j,
/// gradient 1 - (1 + eps) e^{-f_i}. Empty annotations use the zero-vector rule.
inline LossResult entropic_wasserstein_loss(const GridMeasure& alpha, const PointMeasure& beta,
                                            const SolverConfig& config,
                                            const GridLossOptions& options = {},
                                            LossWorkspace* workspace = nullptr) {
  if (beta.empty() || !(mass(beta) > 0.0)) return detail::zero_vector_loss(alpha);
  const auto w = detail::effective_weights(alpha, options.prune_below);
  detail::require_prediction_mass(w);
  const CostMatrix cross_cost = detail::grid_point_cost(alpha, beta, options);
  DualPotentials cross = solve_semibalanced(std::span<const double>(w),
                                            std::span<const double>(beta.weights()),
                                            DenseCost(cross_cost), config,
                                            workspace ? &workspace->cross : nullptr);
  const double eps = config.epsilon;
  LossResult r;
  r.iterations = cross.iterations_used;
  r.converged = cross.converged;
  std::vector<double> terms(w.size(), 0.0);
  r.gradient.resize(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] > 0.0) terms[i] = -phi_star(-cross.f[i]) * w[i];
    r.gradient[i] = 1.0 - (1.0 + eps) * std::exp(-cross.f[i]);
  }
  r.value = compensated_sum(terms) + detail::dot(cross.g, beta.weights());
  if (workspace) workspace->cross = std::move(cross);
  return r;
}

}  // namespace s3

#endif  // S3_SEMIBALANCED_HPP
