#ifndef S3_FIT_HPP
#define S3_FIT_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "s3/adam.hpp"
#include "s3/balanced.hpp"
#include "s3/error.hpp"
#include "s3/measures.hpp"
#include "s3/scale.hpp"
#include "s3/semibalanced.hpp"

namespace s3 {

enum class LossKind { l2_pseudo, wasserstein_entropic, semibalanced, s3 };

inline LossKind parse_loss_kind(std::string_view s) {
  if (s == "l2" || s == "l2_pseudo") return LossKind::l2_pseudo;
  if (s == "wd" || s == "wasserstein_entropic") return LossKind::wasserstein_entropic;
  if (s == "smb" || s == "semibalanced") return LossKind::semibalanced;
  if (s == "s3") return LossKind::s3;
  throw PreconditionError("unknown loss '" + std::string(s) + "' (expected l2|wd|smb|s3)");
}

inline std::string_view short_name(LossKind k) {
  switch (k) {
    case LossKind::l2_pseudo: return "l2";
    case LossKind::wasserstein_entropic: return "wd";
    case LossKind::semibalanced: return "smb";
    case LossKind::s3: return "s3";
  }
  return "?";
}

struct LossConfig {
  LossKind kind = LossKind::s3;
  double lambda = 1.0;  // weight of the scale-consistency term (s3 only)
  double epsilon = 0.01;
  ScaleTransform scale{2};
  bool randomize_scale = false;  // draw k from {2, 3} each epoch
  double gaussian_sigma = 2.0;   // pixels, l2_pseudo only

  void validate() const {
    if (!(lambda >= 0.0)) throw PreconditionError("loss config: lambda must be >= 0");
    if (!(epsilon > 0.0)) throw PreconditionError("loss config: epsilon must be > 0");
    if (!(gaussian_sigma > 0.0)) throw PreconditionError("loss config: sigma must be > 0");
    if (scale.k < 1) throw PreconditionError("loss config: scale factor must be positive");
  }
};

struct FitConfig {
  std::size_t rows = 32;
  std::size_t cols = 32;
  double cell_size = 1.0;
  int epochs = 300;
  AdamConfig adam{};
  std::uint64_t seed = 0;
  double solver_tolerance = 1e-6;
  int solver_max_iterations = 500;
  bool warm_start = true;  // reuse last epoch's potentials as the starting point
  double prune_below = 0.0;

  void validate() const {
    if (rows == 0 || cols == 0) throw PreconditionError("fit config: grid must be non-empty");
    if (!(cell_size > 0.0)) throw PreconditionError("fit config: cell size must be > 0");
    if (epochs < 1) throw PreconditionError("fit config: epochs must be >= 1");
    if (!(adam.learning_rate > 0.0)) throw PreconditionError("fit config: learning rate must be > 0");
  }
};

struct FitRecord {
  int epoch = 0;
  double loss_total = 0.0;
  double loss_smb = 0.0;  // data term of whichever loss is being fit
  double loss_sc = 0.0;
  double mass = 0.0;
  double count_err = 0.0;
  int inner_iters = 0;
  bool converged = true;
};

using FitTrace = std::vector<FitRecord>;

struct FitResult {
  GridMeasure grid;
  FitTrace trace;
};

/// Raised when the loss becomes non-finite; carries the epoch and the trace so far.
class FitError : public NumericError {
 public:
  FitError(const std::string& what, int epoch, FitTrace trace)
      : NumericError(what), epoch_(epoch), trace_(std::move(trace)) {}
  int epoch() const { return epoch_; }
  const FitTrace& trace() const { return trace_; }

 private:
  int epoch_;
  FitTrace trace_;
};

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
inline double softplus_inverse(double y) { return y + std::log(-std::expm1(-y)); }
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double count_from_grid(const GridMeasure& grid) { return mass(grid); }

struct CountMetrics {
  double mae = 0.0;
  double mse = 0.0;  // root mean squared error, as reported in crowd counting
};

inline CountMetrics count_metrics(std::span<const double> predicted, std::span<const double> truth) {
  if (predicted.empty() || predicted.size() != truth.size()) {
    throw PreconditionError("count_metrics: need equal, non-zero lengths (got " +
                            std::to_string(predicted.size()) + " and " +
                            std::to_string(truth.size()) + ")");
  }
  std::vector<double> abs_err(predicted.size()), sq_err(predicted.size());
  for (std::size_t k = 0; k < predicted.size(); ++k) {
    const double d = predicted[k] - truth[k];
    abs_err[k] = std::abs(d);
    sq_err[k] = d * d;
  }
  const double n = static_cast<double>(predicted.size());
  return {compensated_sum(abs_err) / n, std::sqrt(compensated_sum(sq_err) / n)};
}

// Portable random draws: mt19937_64 is fully specified, the std
// distributions are not.
class SceneRng {
 public:
  explicit SceneRng(std::uint64_t seed) : eng_(seed) {}
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() {
    double u = uniform();
    while (u <= 0.0) u = uniform();
    return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * std::numbers::pi * uniform());
  }

 private:
  std::mt19937_64 eng_;
};

enum class SceneProfile { uniform, gaussian_clusters, single_line };

struct SceneSpec {
  double width = 32.0;
  double height = 32.0;
  SceneProfile profile = SceneProfile::uniform;
  int clusters = 2;             // gaussian_clusters
  double cluster_spread = 0.08; // std-dev as a fraction of the shorter side
};

/// Deterministic synthetic annotations inside [0, width) x [0, height).
inline PointMeasure generate_scene(int n_points, const SceneSpec& spec, std::uint64_t seed) {
  if (n_points < 0) throw PreconditionError("generate_scene: n_points must be >= 0");
  if (!(spec.width > 0.0) || !(spec.height > 0.0)) {
    throw PreconditionError("generate_scene: extent must be positive");
  }
  SceneRng rng(seed);
  std::vector<Point2> pts;
  pts.reserve(static_cast<std::size_t>(n_points));
  auto clamp_in = [&](Point2 p) {
    const double hi_x = std::nextafter(spec.width, 0.0), hi_y = std::nextafter(spec.height, 0.0);
    return Point2{std::clamp(p.x, 0.0, hi_x), std::clamp(p.y, 0.0, hi_y)};
  };
  switch (spec.profile) {
    case SceneProfile::uniform:
      for (int k = 0; k < n_points; ++k)
        pts.push_back(clamp_in({rng.uniform(0.0, spec.width), rng.uniform(0.0, spec.height)}));
      break;
    case SceneProfile::gaussian_clusters: {
      const int nc = std::max(1, spec.clusters);
      std::vector<Point2> centres;
      for (int c = 0; c < nc; ++c) {
        centres.push_back({rng.uniform(0.15, 0.85) * spec.width,
                           rng.uniform(0.15, 0.85) * spec.height});
      }
      const double sd = spec.cluster_spread * std::min(spec.width, spec.height);
      for (int k = 0; k < n_points; ++k) {
        const Point2 c = centres[static_cast<std::size_t>(k % nc)];
        Point2 p{c.x + sd * rng.normal(), c.y + sd * rng.normal()};
        for (int tries = 0; tries < 16 && (p.x < 0.0 || p.x >= spec.width || p.y < 0.0 ||
                                           p.y >= spec.height);
             ++tries) {
          p = {c.x + sd * rng.normal(), c.y + sd * rng.normal()};
        }
        pts.push_back(clamp_in(p));
      }
      break;
    }
    case SceneProfile::single_line: {
      const Point2 a{rng.uniform(0.1, 0.3) * spec.width, rng.uniform(0.1, 0.9) * spec.height};
      const Point2 b{rng.uniform(0.7, 0.9) * spec.width, rng.uniform(0.1, 0.9) * spec.height};
      const double jitter = 0.01 * std::min(spec.width, spec.height);
      for (int k = 0; k < n_points; ++k) {
        const double s = n_points == 1 ? 0.5 : static_cast<double>(k) / (n_points - 1);
        pts.push_back(clamp_in({a.x + s * (b.x - a.x) + jitter * rng.normal(),
                                a.y + s * (b.y - a.y) + jitter * rng.normal()}));
      }
      break;
    }
  }
  return PointMeasure(std::move(pts));
}

/// Fixed-sigma Gaussian pseudo density: each annotation spreads unit mass over
/// the cells within 4 sigma of it (renormalised after truncation).
inline GridMeasure render_pseudo_density(std::size_t rows, std::size_t cols, double cell_size,
                                         const PointMeasure& points, double sigma) {
  if (!(sigma > 0.0)) throw PreconditionError("pseudo density: sigma must be > 0");
  GridMeasure frame = GridMeasure::zeros(rows, cols, cell_size);
  std::vector<double> out(rows * cols, 0.0);
  const double radius = 4.0 * sigma;
  std::vector<std::pair<std::size_t, double>> kernel;
  for (std::size_t a = 0; a < points.size(); ++a) {
    const Point2 y = points.points()[a];
    const double w = points.weights()[a];
    kernel.clear();
    double total = 0.0;
    std::size_t nearest = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < out.size(); ++k) {
      const Point2 c = frame.center(k);
      const double d2 = (c.x - y.x) * (c.x - y.x) + (c.y - y.y) * (c.y - y.y);
      if (d2 < best) {
        best = d2;
        nearest = k;
      }
      if (d2 <= radius * radius) {
        const double v = std::exp(-d2 / (2.0 * sigma * sigma));
        kernel.emplace_back(k, v);
        total += v;
      }
    }
    if (kernel.empty() || !(total > 0.0)) {
      out[nearest] += w;
      continue;
    }
    for (auto [k, v] : kernel) out[k] += w * v / total;
  }
  return GridMeasure(rows, cols, cell_size, std::move(out));
}

/// Pixel-wise L2 against a rendered pseudo density: value ||alpha - pseudo||^2 / 2.
inline LossResult l2_pseudo_loss(const GridMeasure& alpha, const PointMeasure& points,
                                 double sigma) {
  const GridMeasure pseudo =
      render_pseudo_density(alpha.rows(), alpha.cols(), alpha.cell_size(), points, sigma);
  LossResult r;
  r.gradient.resize(alpha.size());
  std::vector<double> sq(alpha.size());
  for (std::size_t k = 0; k < alpha.size(); ++k) {
    const double d = alpha.values()[k] - pseudo.values()[k];
    r.gradient[k] = d;
    sq[k] = 0.5 * d * d;
  }
  r.value = compensated_sum(sq);
  r.zero_target = points.empty();
  return r;
}

/// The toy regressor evaluated on a 1/k-rescaled input: the raw parameters are
/// block-averaged (the input is downsampled) and the coarse cell covers the
/// block's area, so alpha_hat_J = n_J * softplus(mean of theta over block J).
/// Equal to Sc(alpha) exactly when theta is constant on every block.
inline GridMeasure coarse_prediction(std::span<const double> theta, std::size_t rows,
                                     std::size_t cols, double cell_size, ScaleTransform t,
                                     std::vector<double>* block_sigmoid = nullptr) {
  const std::size_t k = static_cast<std::size_t>(t.k);
  const std::size_t pr = (rows + k - 1) / k, pc = (cols + k - 1) / k;
  std::vector<double> out(pr * pc, 0.0);
  if (block_sigmoid) block_sigmoid->assign(pr * pc, 0.0);
  for (std::size_t r = 0; r < pr; ++r) {
    for (std::size_t c = 0; c < pc; ++c) {
      double sum = 0.0;
      std::size_t n = 0;
      for (std::size_t i = r * k; i < std::min((r + 1) * k, rows); ++i)
        for (std::size_t j = c * k; j < std::min((c + 1) * k, cols); ++j, ++n)
          sum += theta[i * cols + j];
      const double mean = sum / static_cast<double>(n);
      out[r * pc + c] = static_cast<double>(n) * softplus(mean);
      if (block_sigmoid) (*block_sigmoid)[r * pc + c] = sigmoid(mean);
    }
  }
  return GridMeasure(pr, pc, cell_size * static_cast<double>(k), std::move(out));
}

/// Optimises a directly parameterised density grid alpha = softplus(theta)
/// against the annotations with Adam, one loss evaluation per epoch.
inline FitResult fit_density_grid(const PointMeasure& points, const FitConfig& fit,
                                  const LossConfig& loss) {
  fit.validate();
  loss.validate();
  const std::size_t n = fit.rows * fit.cols;
  const double target = mass(points);

  SceneRng rng(fit.seed);
  std::vector<double> theta(n);
  const double base = std::max(target, 1.0) / static_cast<double>(n);
  for (double& t : theta) t = softplus_inverse(base * (1.0 + 0.1 * rng.uniform(-1.0, 1.0)));

  SolverConfig solver;
  solver.epsilon = loss.epsilon;
  solver.tolerance = fit.solver_tolerance;
  solver.max_iterations = fit.solver_max_iterations;
  GridLossOptions options;
  options.prune_below = fit.prune_below;

  LossWorkspace ws;
  LossWorkspace* wsp = fit.warm_start ? &ws : nullptr;
  Adam adam(n, fit.adam);
  FitTrace trace;
  trace.reserve(static_cast<std::size_t>(fit.epochs));
  std::vector<double> values(n), grad_theta(n), block_sig;

  for (int epoch = 1; epoch <= fit.epochs; ++epoch) {
    for (std::size_t k = 0; k < n; ++k) values[k] = softplus(theta[k]);
    const GridMeasure alpha(fit.rows, fit.cols, fit.cell_size, values);

    FitRecord rec;
    rec.epoch = epoch;
    rec.mass = mass(alpha);
    rec.count_err = std::abs(rec.mass - target);

    LossResult data;
    switch (loss.kind) {
      case LossKind::l2_pseudo: data = l2_pseudo_loss(alpha, points, loss.gaussian_sigma); break;
      case LossKind::wasserstein_entropic:
        data = entropic_wasserstein_loss(alpha, points, solver, options, wsp);
        break;
      case LossKind::semibalanced:
      case LossKind::s3: data = semibalanced_loss(alpha, points, solver, options, wsp); break;
    }
    rec.loss_smb = data.value;
    rec.inner_iters = data.iterations;
    rec.converged = data.converged;
    for (std::size_t k = 0; k < n; ++k) grad_theta[k] = data.gradient[k] * sigmoid(theta[k]);

    if (loss.kind == LossKind::s3 && loss.lambda > 0.0) {
      ScaleTransform t = loss.scale;
      if (loss.randomize_scale) t.k = rng.uniform() < 0.5 ? 2 : 3;
      const GridMeasure alpha_hat =
          coarse_prediction(theta, fit.rows, fit.cols, fit.cell_size, t, &block_sig);
      // Potentials from another scale do not fit this geometry.
      if (loss.randomize_scale) ws.scale = {};
      const ScaleLossResult sc = scale_consistency_loss(alpha_hat, alpha, t, solver, options, wsp);
      rec.loss_sc = sc.value;
      rec.inner_iters += sc.iterations;
      rec.converged = rec.converged && sc.converged;
      const std::size_t k = static_cast<std::size_t>(t.k);
      const std::size_t pc = alpha_hat.cols();
      for (std::size_t i = 0; i < fit.rows; ++i) {
        for (std::size_t j = 0; j < fit.cols; ++j) {
          const std::size_t cell = i * fit.cols + j, block = (i / k) * pc + j / k;
          grad_theta[cell] += loss.lambda * (sc.grad_alpha[cell] * sigmoid(theta[cell]) +
                                             sc.grad_alpha_hat[block] * block_sig[block]);
        }
      }
    }
    rec.loss_total = rec.loss_smb + loss.lambda * rec.loss_sc;

    bool finite = std::isfinite(rec.loss_total);
    for (double g : grad_theta) finite = finite && std::isfinite(g);
    if (!finite) {
      throw FitError("non-finite loss at epoch " + std::to_string(epoch), epoch, trace);
    }
    trace.push_back(rec);
    adam.step(theta, grad_theta);
  }

  for (std::size_t k = 0; k < n; ++k) values[k] = softplus(theta[k]);
  return {GridMeasure(fit.rows, fit.cols, fit.cell_size, values), std::move(trace)};
}

/// Cells that are >= all 8 neighbours and above `min_fraction` of the global max.
inline std::vector<std::size_t> local_maxima(const GridMeasure& grid, double min_fraction = 0.1) {
  const auto& v = grid.values();
  const double top = *std::max_element(v.begin(), v.end());
  std::vector<std::size_t> peaks;
  if (!(top > 0.0)) return peaks;
  const long R = static_cast<long>(grid.rows()), C = static_cast<long>(grid.cols());
  for (long i = 0; i < R; ++i) {
    for (long j = 0; j < C; ++j) {
      const double x = v[static_cast<std::size_t>(i * C + j)];
      if (x < min_fraction * top) continue;
      bool is_max = true;
      for (long di = -1; di <= 1 && is_max; ++di) {
        for (long dj = -1; dj <= 1; ++dj) {
          const long a = i + di, b = j + dj;
          if ((di == 0 && dj == 0) || a < 0 || b < 0 || a >= R || b >= C) continue;
          if (v[static_cast<std::size_t>(a * C + b)] > x) {
            is_max = false;
            break;
          }
        }
      }
      if (is_max) peaks.push_back(static_cast<std::size_t>(i * C + j));
    }
  }
  return peaks;
}

/// Number of annotations with a local maximum within `radius` cells (Chebyshev).
inline int recovered_peaks(const GridMeasure& grid, const PointMeasure& points, long radius = 1,
                           double min_fraction = 0.1) {
  const auto peaks = local_maxima(grid, min_fraction);
  int hits = 0;
  for (const Point2& y : points.points()) {
    const long yi = static_cast<long>(std::floor(y.y / grid.cell_size()));
    const long yj = static_cast<long>(std::floor(y.x / grid.cell_size()));
    for (std::size_t p : peaks) {
      const long pi = static_cast<long>(p / grid.cols()), pj = static_cast<long>(p % grid.cols());
      if (std::abs(pi - yi) <= radius && std::abs(pj - yj) <= radius) {
        ++hits;
        break;
      }
    }
  }
  return hits;
}

inline void write_trace(std::ostream& os, const FitTrace& trace) {
  os << "epoch,loss_total,loss_smb,loss_sc,mass,count_err,inner_iters,converged\n";
  const auto old = os.precision(17);
  for (const FitRecord& r : trace) {
    os << r.epoch << ',' << r.loss_total << ',' << r.loss_smb << ',' << r.loss_sc << ','
       << r.mass << ',' << r.count_err << ',' << r.inner_iters << ',' << (r.converged ? 1 : 0)
       << '\n';
  }
  os.precision(old);
}

}  // namespace s3

#endif  // S3_FIT_HPP
