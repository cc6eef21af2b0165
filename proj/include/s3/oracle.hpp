#ifndef S3_ORACLE_HPP
#define S3_ORACLE_HPP

// Brute-force references for tiny problems. Slow on purpose; used to mint
// expected values and to gate the solvers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "s3/error.hpp"
#include "s3/measures.hpp"

namespace s3::oracle {

inline constexpr std::size_t kMaxEntries = 64;
inline constexpr double kFrozen = 1e-200;

struct LpResult {
  double value = 0.0;
  std::vector<double> plan;  // n_source x n_target, row-major
  int pivots = 0;
};

namespace detail {

inline void check_size(std::size_t n, std::size_t m, const CostMatrix& cost) {
  if (n == 0 || m == 0) throw PreconditionError("oracle: empty support");
  if (n * m > kMaxEntries) {
    throw PreconditionError("oracle: n_source*n_target = " + std::to_string(n * m) +
                            " exceeds the cap of " + std::to_string(kMaxEntries));
  }
  if (cost.n_source != n || cost.n_target != m) {
    throw PreconditionError("oracle: cost matrix shape does not match the weights");
  }
}

// Dense tableau; column `cols` holds the right-hand side.
class Tableau {
 public:
  Tableau(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), t_(rows * (cols + 1)) {}

  double& at(std::size_t r, std::size_t c) { return t_[r * (cols_ + 1) + c]; }
  double& rhs(std::size_t r) { return at(r, cols_); }

  void pivot(std::size_t pr, std::size_t pc, std::vector<double>& obj, double& obj_rhs) {
    const double inv = 1.0 / at(pr, pc);
    for (std::size_t c = 0; c <= cols_; ++c) at(pr, c) *= inv;
    at(pr, pc) = 1.0;
    auto eliminate = [&](auto&& row_at) {
      const double f = row_at(pc);
      if (f == 0.0) return;
      for (std::size_t c = 0; c <= cols_; ++c) row_at(c) -= f * at(pr, c);
      row_at(pc) = 0.0;
    };
    for (std::size_t r = 0; r < rows_; ++r) {
      if (r == pr) continue;
      eliminate([&](std::size_t c) -> double& { return at(r, c); });
    }
    eliminate([&](std::size_t c) -> double& { return c == cols_ ? obj_rhs : obj[c]; });
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

 private:
  std::size_t rows_, cols_;
  std::vector<double> t_;
};

}  // namespace detail

/// Exact transportation LP by two-phase dense simplex with Bland's rule.
inline LpResult exact_ot_lp(std::span<const double> alpha, std::span<const double> beta,
                            const CostMatrix& cost) {
  const std::size_t n = alpha.size(), m = beta.size();
  detail::check_size(n, m, cost);
  for (double v : alpha)
    if (!(v >= 0.0)) throw PreconditionError("oracle: negative source weight");
  for (double v : beta)
    if (!(v >= 0.0)) throw PreconditionError("oracle: negative target weight");
  const double ma = mass(alpha), mb = mass(beta);
  if (std::abs(ma - mb) > 1e-9 * std::max({ma, mb, 1e-300})) {
    throw PreconditionError("mass mismatch: source mass " + std::to_string(ma) +
                            " vs target mass " + std::to_string(mb));
  }

  // Rows: n source constraints, m-1 target constraints (the last is implied).
  // Columns: n*m plan entries then one artificial per row.
  const std::size_t rows = n + m - 1, nx = n * m, cols = nx + rows;
  const double pivot_tol = 1e-12;
  detail::Tableau tab(rows, cols);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) tab.at(i, i * m + j) = 1.0;
    tab.rhs(i) = alpha[i];
  }
  for (std::size_t j = 0; j + 1 < m; ++j) {
    for (std::size_t i = 0; i < n; ++i) tab.at(n + j, i * m + j) = 1.0;
    tab.rhs(n + j) = beta[j];
  }
  std::vector<std::size_t> basis(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    tab.at(r, nx + r) = 1.0;
    basis[r] = nx + r;
  }

  LpResult res;
  auto run = [&](std::vector<double>& obj, double& obj_rhs, std::size_t usable) {
    while (true) {
      std::size_t enter = usable;
      for (std::size_t c = 0; c < usable; ++c) {
        if (obj[c] < -pivot_tol) {
          enter = c;
          break;
        }
      }
      if (enter == usable) return;
      std::size_t leave = rows;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t r = 0; r < rows; ++r) {
        const double a = tab.at(r, enter);
        if (a <= pivot_tol) continue;
        const double ratio = tab.rhs(r) / a;
        if (ratio < best - 1e-15 ||
            (ratio <= best + 1e-15 && leave < rows && basis[r] < basis[leave])) {
          best = std::min(best, ratio);
          leave = r;
        }
      }
      if (leave == rows) throw NumericError("oracle: transportation LP reported unbounded");
      tab.pivot(leave, enter, obj, obj_rhs);
      basis[leave] = enter;
      ++res.pivots;
    }
  };

  // Phase 1: minimise the sum of artificials. Reduced costs start at minus
  // the column sums over all rows.
  std::vector<double> obj(cols, 0.0);
  double obj_rhs = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < nx; ++c) obj[c] -= tab.at(r, c);
    obj_rhs -= tab.rhs(r);
  }
  run(obj, obj_rhs, nx);
  if (-obj_rhs > 1e-9 * std::max(ma, 1.0)) {
    throw NumericError("oracle: transportation LP infeasible");
  }
  // Drive any artificial still basic at zero out of the basis.
  for (std::size_t r = 0; r < rows; ++r) {
    if (basis[r] < nx) continue;
    for (std::size_t c = 0; c < nx; ++c) {
      if (std::abs(tab.at(r, c)) > pivot_tol) {
        tab.pivot(r, c, obj, obj_rhs);
        basis[r] = c;
        break;
      }
    }
  }

  // Phase 2 over the plan columns only.
  std::fill(obj.begin(), obj.end(), 0.0);
  obj_rhs = 0.0;
  for (std::size_t c = 0; c < nx; ++c) obj[c] = cost.costs[c];
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t b = basis[r];
    if (b >= nx || obj[b] == 0.0) continue;
    const double f = obj[b];
    for (std::size_t c = 0; c < cols; ++c) obj[c] -= f * tab.at(r, c);
    obj_rhs -= f * tab.rhs(r);
  }
  run(obj, obj_rhs, nx);

  res.plan.assign(nx, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    if (basis[r] < nx) res.plan[basis[r]] = std::max(tab.rhs(r), 0.0);
  }
  std::vector<double> terms(nx);
  for (std::size_t k = 0; k < nx; ++k) terms[k] = res.plan[k] * cost.costs[k];
  res.value = compensated_sum(terms);
  return res;
}

struct EntropicResult {
  double simplified = 0.0;  // cost + eps * sum pi ln(pi / (alpha beta)) [+ D_phi]
  double full_kl = 0.0;     // cost + eps * KL(pi | alpha x beta) [+ D_phi]
  std::vector<double> plan;
  int iterations = 0;
  double gradient_norm = 0.0;
};

/// Minimises the entropic primal over the plan by feasible-start Newton on the
/// equality-constrained problem. Balanced: both marginals fixed. Semibalanced:
/// column sums fixed to beta, row sums charged by the KL penalty against alpha.
/// Both conventions share a minimiser (total plan mass is fixed either way);
/// the two values differ by a constant.
inline EntropicResult entropic_primal_bruteforce(std::span<const double> alpha,
                                                 std::span<const double> beta,
                                                 const CostMatrix& cost, double eps,
                                                 bool semibalanced,
                                                 double gradient_tolerance = 1e-10,
                                                 int max_iterations = 1000000) {
  const std::size_t n = alpha.size(), m = beta.size();
  detail::check_size(n, m, cost);
  if (!(eps > 0.0)) throw PreconditionError("oracle: epsilon must be positive");
  for (double v : alpha)
    if (!(v > 0.0)) throw PreconditionError("oracle: source weights must be positive");
  for (double v : beta)
    if (!(v > 0.0)) throw PreconditionError("oracle: target weights must be positive");
  const double ma = mass(alpha), mb = mass(beta);
  if (!semibalanced && std::abs(ma - mb) > 1e-9 * std::max(ma, mb)) {
    throw PreconditionError("mass mismatch: source mass " + std::to_string(ma) +
                            " vs target mass " + std::to_string(mb));
  }

  const std::size_t nx = n * m;
  // Constraints: columns 0..m-1, then (balanced) rows 0..n-2.
  const std::size_t nc = semibalanced ? m : m + n - 1;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nc),
                                            static_cast<Eigen::Index>(nx));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const auto k = static_cast<Eigen::Index>(i * m + j);
      A(static_cast<Eigen::Index>(j), k) = 1.0;
      if (!semibalanced && i + 1 < n) A(static_cast<Eigen::Index>(m + i), k) = 1.0;
    }
  }

  std::vector<double> log_ab(nx);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) log_ab[i * m + j] = std::log(alpha[i] * beta[j]);

  auto row_sums = [&](const Eigen::VectorXd& p) {
    std::vector<double> r(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) r[i] += p(static_cast<Eigen::Index>(i * m + j));
    return r;
  };
  // Simplified objective. Returns +inf outside the open positive orthant.
  auto objective = [&](const Eigen::VectorXd& p) {
    std::vector<double> terms;
    terms.reserve(nx + n);
    for (std::size_t k = 0; k < nx; ++k) {
      const double v = p(static_cast<Eigen::Index>(k));
      if (!(v > 0.0)) return std::numeric_limits<double>::infinity();
      terms.push_back(v * cost.costs[k] + eps * v * (std::log(v) - log_ab[k]));
    }
    if (semibalanced) {
      const auto r = row_sums(p);
      for (std::size_t i = 0; i < n; ++i)
        terms.push_back(r[i] * std::log(r[i] / alpha[i]) - r[i] + alpha[i]);
    }
    return compensated_sum(terms);
  };

  Eigen::VectorXd pi(static_cast<Eigen::Index>(nx));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      pi(static_cast<Eigen::Index>(i * m + j)) = alpha[i] * beta[j] / ma;

  const auto dim = static_cast<Eigen::Index>(nx + nc);
  const auto nxi = static_cast<Eigen::Index>(nx);
  const auto nci = static_cast<Eigen::Index>(nc);
  EntropicResult res;
  double value = objective(pi);
  for (int it = 0;; ++it) {
    // The KKT system is solved in the variables y = d / sqrt(pi), which keeps
    // it well conditioned when entries of the plan are tiny.
    Eigen::VectorXd grad(nxi);
    // Entries whose optimum underflows are frozen once they drop below kFrozen;
    // they carry less than kFrozen * |log kFrozen| of the value.
    Eigen::VectorXd sq = pi.cwiseSqrt();
    for (Eigen::Index k = 0; k < nxi; ++k)
      if (pi(k) < kFrozen) sq(k) = 0.0;
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(dim, dim);
    const auto r = row_sums(pi);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        const auto k = static_cast<Eigen::Index>(i * m + j);
        grad(k) = cost.costs[i * m + j] + eps * (std::log(pi(k)) + 1.0 - log_ab[i * m + j]);
        K(k, k) = eps;
        if (semibalanced) {
          grad(k) += std::log(r[i] / alpha[i]);
          for (std::size_t jj = 0; jj < m; ++jj) {
            const auto l = static_cast<Eigen::Index>(i * m + jj);
            K(k, l) += sq(k) * sq(l) / r[i];
          }
        }
      }
    }
    const Eigen::MatrixXd As = A * sq.asDiagonal();
    K.block(0, nxi, nxi, nci) = As.transpose();
    K.block(nxi, 0, nci, nxi) = As;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim);
    rhs.head(nxi) = -sq.cwiseProduct(grad);
    const Eigen::VectorXd sol = K.fullPivLu().solve(rhs);
    const Eigen::VectorXd d = sq.cwiseProduct(sol.head(nxi));
    // Projected gradient: grad + A^T lambda, which equals -H d.
    const Eigen::VectorXd proj = grad + A.transpose() * sol.tail(nci);
    res.gradient_norm = 0.0;
    for (Eigen::Index k = 0; k < nxi; ++k)
      if (sq(k) > 0.0) res.gradient_norm = std::max(res.gradient_norm, std::abs(proj(k)));
    res.iterations = it;
    if (res.gradient_norm <= gradient_tolerance) break;
    if (it >= max_iterations) {
      throw ConvergenceError("oracle: entropic primal did not reach gradient norm " +
                             std::to_string(gradient_tolerance) + " (last " +
                             std::to_string(res.gradient_norm) + ")");
    }
    double step = 1.0;
    for (Eigen::Index k = 0; k < nxi; ++k)
      if (d(k) < 0.0) step = std::min(step, -0.99 * pi(k) / d(k));
    const double slope = grad.dot(d);
    Eigen::VectorXd next = pi + step * d;
    double next_value = objective(next);
    // Armijo backtracking; once the predicted decrease is below rounding the
    // full feasible step is taken as is.
    if (slope < -1e-13 * std::max(1.0, std::abs(value))) {
      const double slack = 64.0 * std::numeric_limits<double>::epsilon() * std::abs(value);
      while (!(next_value <= value + 1e-4 * step * slope + slack) && step > 1e-20) {
        step *= 0.5;
        next = pi + step * d;
        next_value = objective(next);
      }
    }
    if (!std::isfinite(next_value)) throw NumericError("oracle: entropic primal left the domain");
    pi = next;
    value = next_value;
  }

  res.plan.assign(pi.data(), pi.data() + nx);
  res.simplified = value;
  // full KL adds eps * (sum alpha beta - sum pi) = eps * (m(alpha) m(beta) - m(beta)).
  res.full_kl = value + eps * (ma * mb - mb);
  return res;
}

}  // namespace s3::oracle

#endif  // S3_ORACLE_HPP
