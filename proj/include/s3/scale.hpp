#ifndef S3_SCALE_HPP
#define S3_SCALE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "s3/balanced.hpp"
#include "s3/error.hpp"
#include "s3/measures.hpp"
#include "s3/semibalanced.hpp"
#include "s3/softmin.hpp"

namespace s3 {

/// Downscale by factor 1/k with sum pooling.
struct ScaleTransform {
  int k = 2;

  static ScaleTransform from_factor(double factor) {
    if (!(factor > 0.0)) throw PreconditionError("scale factor must be positive");
    const double inv = 1.0 / factor;
    const double k = std::round(inv);
    if (k < 1.0 || std::abs(inv - k) > 1e-9 * inv) {
      throw PreconditionError("scale factor must be 1/k for an integer k >= 1, got " +
                              std::to_string(factor));
    }
    return {static_cast<int>(k)};
  }

  double factor() const { return 1.0 / k; }
};

struct Downscaled {
  GridMeasure grid;
  bool padded = false;  // input dims not divisible by k; zeros were appended
};

/// Each output cell is the sum of its k x k input block; the output cell size
/// is k times the input's, so physical positions are unchanged.
inline Downscaled downscale(const GridMeasure& grid, ScaleTransform t) {
  if (t.k < 1) throw PreconditionError("scale factor must be positive");
  const std::size_t k = static_cast<std::size_t>(t.k);
  const std::size_t rows = (grid.rows() + k - 1) / k;
  const std::size_t cols = (grid.cols() + k - 1) / k;
  std::vector<double> out(rows * cols, 0.0);
  std::vector<double> block;
  block.reserve(k * k);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      block.clear();
      for (std::size_t i = r * k; i < std::min((r + 1) * k, grid.rows()); ++i)
        for (std::size_t j = c * k; j < std::min((c + 1) * k, grid.cols()); ++j)
          block.push_back(grid.at(i, j));
      out[r * cols + c] = compensated_sum(block);
    }
  }
  return {GridMeasure(rows, cols, grid.cell_size() * static_cast<double>(k), std::move(out)),
          grid.rows() % k != 0 || grid.cols() % k != 0};
}

/// Spreads a gradient on the pooled grid back to the input grid: every input
/// cell receives the gradient of the block it was summed into.
inline std::vector<double> downscale_backward(std::span<const double> pooled_grad,
                                              std::size_t rows, std::size_t cols,
                                              ScaleTransform t) {
  const std::size_t k = static_cast<std::size_t>(t.k);
  const std::size_t pcols = (cols + k - 1) / k;
  std::vector<double> g(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) g[i * cols + j] = pooled_grad[(i / k) * pcols + j / k];
  return g;
}

struct ScaleLossResult {
  double value = 0.0;
  std::vector<double> grad_alpha_hat;
  std::vector<double> grad_alpha;
  int iterations = 0;
  bool converged = true;
  bool zero_mass_fallback = false;
  bool padded = false;
};

/// Scale-consistency loss between the prediction on a rescaled input (alpha_hat)
/// and the sum-pooled prediction Sc(alpha). Both sides are normalised to unit
/// mass inside the balanced Sinkhorn divergence and the mass gap is charged
/// separately:
///
///   L = S_eps(alpha_hat / m_hat, Sc(alpha) / m') + (m_hat - m')^2 / 2
///
/// If either side has zero mass only the mass term remains.
inline ScaleLossResult scale_consistency_loss(const GridMeasure& alpha_hat,
                                              const GridMeasure& alpha, ScaleTransform t,
                                              const SolverConfig& config,
                                              const GridLossOptions& options = {},
                                              LossWorkspace* workspace = nullptr) {
  const Downscaled pooled = downscale(alpha, t);
  const GridMeasure& nu = pooled.grid;
  if (alpha_hat.rows() != nu.rows() || alpha_hat.cols() != nu.cols() ||
      std::abs(alpha_hat.cell_size() - nu.cell_size()) > 1e-12 * nu.cell_size()) {
    throw PreconditionError("scale_consistency_loss: alpha_hat is " +
                            std::to_string(alpha_hat.rows()) + "x" +
                            std::to_string(alpha_hat.cols()) + " but Sc(alpha) is " +
                            std::to_string(nu.rows()) + "x" + std::to_string(nu.cols()));
  }
  ScaleLossResult r;
  r.padded = pooled.padded;
  const double m_hat = mass(alpha_hat);
  const double m_pool = mass(nu);
  const double gap = m_hat - m_pool;

  if (!(m_hat > 0.0) || !(m_pool > 0.0)) {
    r.zero_mass_fallback = true;
    r.value = 0.5 * gap * gap;
    r.grad_alpha_hat.assign(alpha_hat.size(), gap);
    r.grad_alpha.assign(alpha.size(), -gap);
    return r;
  }

  std::vector<double> mu(alpha_hat.values()), nv(nu.values());
  for (double& v : mu) v /= m_hat;
  for (double& v : nv) v /= m_pool;

  // Physical coordinates are preserved by downscale, so the normalisation is
  // taken from the original grid.
  const double norm = options.normalization.value_or(default_normalization(alpha));
  const DivergenceResult* init = workspace ? &workspace->scale : nullptr;
  DivergenceResult div;
  if (options.cost_kind == CostKind::squared_euclidean) {
    const GridCost cost(GridGeometry::of(alpha_hat), GridGeometry::of(nu), norm);
    div = sinkhorn_divergence(std::span<const double>(mu), std::span<const double>(nv), cost, cost,
                              cost, config, init);
  } else {
    const auto ca = alpha_hat.centers();
    const auto cb = nu.centers();
    const CostMatrix cross = build_cost(ca, cb, options.cost_kind, norm);
    const CostMatrix aa = build_cost(ca, ca, options.cost_kind, norm);
    const CostMatrix bb = build_cost(cb, cb, options.cost_kind, norm);
    div = sinkhorn_divergence(std::span<const double>(mu), std::span<const double>(nv),
                              DenseCost(cross), DenseCost(aa), DenseCost(bb), config, init);
  }
  r.converged = div.converged();
  r.iterations = div.iterations();
  r.value = div.value + 0.5 * gap * gap;

  // dS/dmu_i = f_i - p_i up to a constant; the constant vanishes when
  // projected through the normalisation x -> x / m(x).
  auto project = [](std::span<const double> a, std::span<const double> b,
                    std::span<const double> w, double m) {
    std::vector<double> g(a.size()), terms(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      g[i] = a[i] - b[i];
      terms[i] = w[i] > 0.0 ? g[i] * w[i] : 0.0;
    }
    const double mean = compensated_sum(terms);
    for (double& v : g) v = (v - mean) / m;
    return g;
  };
  r.grad_alpha_hat = project(div.cross.f, div.self_source.p, mu, m_hat);
  for (double& v : r.grad_alpha_hat) v += gap;
  auto grad_pool = project(div.cross.g, div.self_target.p, nv, m_pool);
  for (double& v : grad_pool) v -= gap;
  r.grad_alpha = downscale_backward(grad_pool, alpha.rows(), alpha.cols(), t);

  if (workspace) workspace->scale = std::move(div);
  return r;
}

}  // namespace s3

#endif  // S3_SCALE_HPP
