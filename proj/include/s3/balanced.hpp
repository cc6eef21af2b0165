#ifndef S3_BALANCED_HPP
#define S3_BALANCED_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "s3/error.hpp"
#include "s3/measures.hpp"
#include "s3/softmin.hpp"

namespace s3 {

struct SolverConfig {
  double epsilon = 0.01;
  double tolerance = 1e-9;  // sup-norm change of the potentials between sweeps
  int max_iterations = 500;
  bool symmetric_averaging = true;
  // Semi-balanced solves only: after each (f, g) sweep, take the exact dual
  // maximisation along the (f + t, g - t) direction. Same fixed point, but
  // removes the 1 / (1 + eps) contraction of the plain iteration.
  bool translation_step = true;

  void validate() const {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
      throw PreconditionError("solver config: epsilon must be positive");
    }
    if (!(tolerance > 0.0)) throw PreconditionError("solver config: tolerance must be positive");
    if (max_iterations < 1) throw PreconditionError("solver config: max_iterations must be >= 1");
  }
};

struct DualPotentials {
  std::vector<double> f;  // on the source support
  std::vector<double> g;  // on the target support
  std::vector<double> p;  // symmetric self-potential on the source support
  int iterations_used = 0;
  double final_residual = std::numeric_limits<double>::infinity();
  bool converged = false;
};

/// Called after every full sweep with the current (f, g).
using SweepObserver = std::function<void(std::span<const double>, std::span<const double>)>;

struct TransportPlan {
  std::size_t n_source = 0;
  std::size_t n_target = 0;
  std::vector<double> entries;  // row-major

  double operator()(std::size_t i, std::size_t j) const { return entries[i * n_target + j]; }

  std::vector<double> row_sums() const {
    std::vector<double> r(n_source, 0.0);
    for (std::size_t i = 0; i < n_source; ++i)
      r[i] = compensated_sum({entries.data() + i * n_target, n_target});
    return r;
  }
  std::vector<double> col_sums() const {
    std::vector<double> c(n_target, 0.0);
    for (std::size_t i = 0; i < n_source; ++i)
      for (std::size_t j = 0; j < n_target; ++j) c[j] += entries[i * n_target + j];
    return c;
  }
};

namespace detail {

inline double sup_change(std::span<const double> a, std::span<const double> b) {
  double r = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (std::isinf(a[k]) && a[k] == b[k]) continue;
    r = std::max(r, std::abs(a[k] - b[k]));
  }
  return r;
}

inline void require_positive_mass(double m, const char* what) {
  if (!(m > 0.0)) {
    throw PreconditionError(std::string(what) + " must have positive mass");
  }
}

inline void require_equal_mass(double ma, double mb) {
  if (std::abs(ma - mb) > 1e-9 * std::max(ma, mb)) {
    std::ostringstream os;
    os.precision(17);
    os << "mass mismatch: source mass " << ma << " vs target mass " << mb;
    throw PreconditionError(os.str());
  }
}

template <CostOperator Cost>
void require_shape(const Cost& cost, std::size_t n, std::size_t m) {
  if (cost.n_source() != n || cost.n_target() != m) {
    throw PreconditionError("cost shape " + std::to_string(cost.n_source()) + "x" +
                            std::to_string(cost.n_target()) + " does not match measures " +
                            std::to_string(n) + "x" + std::to_string(m));
  }
}

inline double dot(std::span<const double> a, std::span<const double> w) {
  std::vector<double> terms(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) terms[k] = w[k] > 0.0 ? a[k] * w[k] : 0.0;
  return compensated_sum(terms);
}

}  // namespace detail

/// Balanced entropic OT by alternating log-domain scaling updates from f = g = 0
/// (or from `init` when given).
template <CostOperator Cost>
DualPotentials solve_balanced(std::span<const double> alpha, std::span<const double> beta,
                              const Cost& cost, const SolverConfig& config,
                              const DualPotentials* init = nullptr,
                              const SweepObserver& on_sweep = {}) {
  config.validate();
  detail::require_shape(cost, alpha.size(), beta.size());
  const double ma = mass(alpha), mb = mass(beta);
  detail::require_positive_mass(ma, "source measure");
  detail::require_positive_mass(mb, "target measure");
  detail::require_equal_mass(ma, mb);

  const double eps = config.epsilon;
  const auto la = log_weights(alpha), lb = log_weights(beta);
  DualPotentials out;
  out.f.assign(alpha.size(), 0.0);
  out.g.assign(beta.size(), 0.0);
  if (init && init->f.size() == alpha.size() && init->g.size() == beta.size()) {
    out.f = init->f;
    out.g = init->g;
  }
  std::vector<double> f_prev, g_prev;
  for (int it = 1; it <= config.max_iterations; ++it) {
    f_prev = out.f;
    g_prev = out.g;
    cost.softmin_to_source(eps, out.g, lb, out.f);
    cost.softmin_to_target(eps, out.f, la, out.g);
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

inline DualPotentials solve_balanced(const DiscreteMeasure& alpha, const DiscreteMeasure& beta,
                                     const CostMatrix& cost, const SolverConfig& config) {
  return solve_balanced(std::span<const double>(alpha.weights),
                        std::span<const double>(beta.weights), DenseCost(cost), config);
}

/// Simplified at-optimality dual value sum f alpha + sum g beta.
inline double balanced_value(const DualPotentials& pot, std::span<const double> alpha,
                             std::span<const double> beta) {
  if (!pot.converged) throw ConvergenceError("evaluate-before-convergence");
  return detail::dot(pot.f, alpha) + detail::dot(pot.g, beta);
}

/// Full entropic dual
///   sum f alpha + sum g beta - eps sum_ij (exp((f_i + g_j - c_ij) / eps) - 1) alpha_i beta_j,
/// valid at any iterate. Block updates maximise it exactly.
template <CostOperator Cost>
double balanced_dual_objective(std::span<const double> f, std::span<const double> g,
                               std::span<const double> alpha, std::span<const double> beta,
                               const Cost& cost, double eps) {
  // sum_j exp((g_j - c_ij)/eps) beta_j = exp(-s_i / eps) with s the c-transform of g.
  std::vector<double> s(alpha.size());
  cost.softmin_to_source(eps, g, log_weights(beta), s);
  std::vector<double> terms(alpha.size());
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    terms[i] = alpha[i] > 0.0 ? alpha[i] * std::exp((f[i] - s[i]) / eps) : 0.0;
  }
  const double plan_mass = compensated_sum(terms);
  return detail::dot(f, alpha) + detail::dot(g, beta) -
         eps * (plan_mass - mass(alpha) * mass(beta));
}

/// Symmetric self-potential: fixed point of p = T(p), where
/// T(p)_i = -eps log sum_k exp((p_k - c_ik) / eps) alpha_k.
template <CostOperator Cost>
DualPotentials symmetric_potential(std::span<const double> alpha, const Cost& cost_self,
                                   const SolverConfig& config,
                                   const DualPotentials* init = nullptr) {
  config.validate();
  if (cost_self.n_source() != cost_self.n_target()) {
    throw PreconditionError("symmetric_potential: self cost must be square");
  }
  detail::require_shape(cost_self, alpha.size(), alpha.size());
  detail::require_positive_mass(mass(alpha), "measure");

  const double eps = config.epsilon;
  const auto la = log_weights(alpha);
  DualPotentials out;
  out.p.assign(alpha.size(), 0.0);
  if (init && init->p.size() == alpha.size()) out.p = init->p;
  std::vector<double> next(alpha.size()), prev;
  for (int it = 1; it <= config.max_iterations; ++it) {
    prev = out.p;
    cost_self.softmin_to_target(eps, out.p, la, next);
    if (config.symmetric_averaging) {
      for (std::size_t k = 0; k < next.size(); ++k) out.p[k] = 0.5 * (out.p[k] + next[k]);
    } else {
      out.p = next;
    }
    out.iterations_used = it;
    out.final_residual = detail::sup_change(out.p, prev);
    if (out.final_residual < config.tolerance) {
      out.converged = true;
      break;
    }
  }
  return out;
}

inline DualPotentials symmetric_potential(const DiscreteMeasure& alpha, const CostMatrix& cost_self,
                                          const SolverConfig& config) {
  return symmetric_potential(std::span<const double>(alpha.weights), DenseCost(cost_self), config);
}

/// Result of a debiased divergence: the value plus the three solves behind it.
struct DivergenceResult {
  double value = 0.0;
  DualPotentials cross;
  DualPotentials self_source;
  DualPotentials self_target;

  bool converged() const {
    return cross.converged && self_source.converged && self_target.converged;
  }
  int iterations() const {
    return cross.iterations_used + self_source.iterations_used + self_target.iterations_used;
  }
};

/// S_eps(alpha, beta) = W_eps(alpha, beta) - W_eps(alpha, alpha) / 2 - W_eps(beta, beta) / 2,
/// with the self terms evaluated as sum p mu.
template <CostOperator CrossCost, CostOperator SelfA, CostOperator SelfB>
DivergenceResult sinkhorn_divergence(std::span<const double> alpha, std::span<const double> beta,
                                     const CrossCost& cost_cross, const SelfA& cost_aa,
                                     const SelfB& cost_bb, const SolverConfig& config,
                                     const DivergenceResult* init = nullptr) {
  DivergenceResult r;
  r.self_source = symmetric_potential(alpha, cost_aa, config, init ? &init->self_source : nullptr);
  r.self_target = symmetric_potential(beta, cost_bb, config, init ? &init->self_target : nullptr);
  // (p_alpha, p_beta) is the cross fixed point when alpha == beta.
  DualPotentials seed;
  seed.f = r.self_source.p;
  seed.g = r.self_target.p;
  const bool reuse = init && init->cross.f.size() == alpha.size() && init->cross.g.size() == beta.size();
  r.cross = solve_balanced(alpha, beta, cost_cross, config, reuse ? &init->cross : &seed);
  // Evaluated at the last iterate even without convergence; callers check converged().
  r.value = detail::dot(r.cross.f, alpha) + detail::dot(r.cross.g, beta) -
            detail::dot(r.self_source.p, alpha) - detail::dot(r.self_target.p, beta);
  return r;
}

inline DivergenceResult sinkhorn_divergence(const DiscreteMeasure& alpha,
                                            const DiscreteMeasure& beta,
                                            const CostMatrix& cost_cross,
                                            const CostMatrix& cost_aa,
                                            const CostMatrix& cost_bb,
                                            const SolverConfig& config) {
  return sinkhorn_divergence(std::span<const double>(alpha.weights),
                             std::span<const double>(beta.weights), DenseCost(cost_cross),
                             DenseCost(cost_aa), DenseCost(cost_bb), config);
}

/// pi_ij = exp((f_i + g_j - c_ij) / eps) alpha_i beta_j.
template <CostOperator Cost>
TransportPlan plan_from_potentials(const DualPotentials& pot, std::span<const double> alpha,
                                   std::span<const double> beta, const Cost& cost,
                                   const SolverConfig& config) {
  if (!pot.converged) throw ConvergenceError("evaluate-before-convergence");
  const double eps = config.epsilon;
  TransportPlan plan;
  plan.n_source = alpha.size();
  plan.n_target = beta.size();
  plan.entries.assign(plan.n_source * plan.n_target, 0.0);
  // exp overflows past ~709.78.
  constexpr double kMaxExponent = 709.0;
  for (std::size_t i = 0; i < plan.n_source; ++i) {
    if (!(alpha[i] > 0.0)) continue;
    for (std::size_t j = 0; j < plan.n_target; ++j) {
      if (!(beta[j] > 0.0)) continue;
      const double e = (pot.f[i] + pot.g[j] - cost.cost(i, j)) / eps;
      if (e > kMaxExponent) {
        throw NumericError("plan_from_potentials: exponent overflow, max exponent " +
                           std::to_string(e));
      }
      plan.entries[i * plan.n_target + j] = std::exp(e) * alpha[i] * beta[j];
    }
  }
  return plan;
}

inline TransportPlan plan_from_potentials(const DualPotentials& pot, const DiscreteMeasure& alpha,
                                          const DiscreteMeasure& beta, const CostMatrix& cost,
                                          const SolverConfig& config) {
  return plan_from_potentials(pot, std::span<const double>(alpha.weights),
                              std::span<const double>(beta.weights), DenseCost(cost), config);
}

/// Largest absolute deviation of the plan's marginals from the given weights.
struct MarginalResiduals {
  double rows = 0.0;
  double cols = 0.0;
};

inline MarginalResiduals marginal_residuals(const TransportPlan& plan, std::span<const double> alpha,
                                            std::span<const double> beta) {
  MarginalResiduals r;
  const auto rs = plan.row_sums();
  const auto cs = plan.col_sums();
  for (std::size_t i = 0; i < rs.size(); ++i) r.rows = std::max(r.rows, std::abs(rs[i] - alpha[i]));
  for (std::size_t j = 0; j < cs.size(); ++j) r.cols = std::max(r.cols, std::abs(cs[j] - beta[j]));
  return r;
}

}  // namespace s3

#endif  // S3_BALANCED_HPP
