#ifndef S3_SOFTMIN_HPP
#define S3_SOFTMIN_HPP

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "s3/measures.hpp"

namespace s3 {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// log sum_k exp(x_k), max-subtracted. Returns -inf for an empty or all -inf input.
inline double log_sum_exp(std::span<const double> x) {
  double top = kNegInf;
  for (double v : x) top = std::max(top, v);
  if (top == kNegInf) return kNegInf;
  double acc = 0.0;
  for (double v : x) acc += std::exp(v - top);
  return top + std::log(acc);
}

/// ln w with ln 0 = -inf.
inline std::vector<double> log_weights(std::span<const double> w) {
  std::vector<double> out(w.size());
  for (std::size_t k = 0; k < w.size(); ++k) out[k] = w[k] > 0.0 ? std::log(w[k]) : kNegInf;
  return out;
}

// A cost operator evaluates the two c-transforms every scaling iteration needs:
//
//   to_source: out_i = -eps * log sum_j exp((pot_j - c_ij) / eps + logw_j)
//   to_target: out_j = -eps * log sum_i exp((pot_i - c_ij) / eps + logw_i)
//
// Potentials and log-weights live on the opposite support.
template <class C>
concept CostOperator = requires(const C& c, double eps, std::span<const double> in,
                                std::span<double> out) {
  { c.n_source() } -> std::convertible_to<std::size_t>;
  { c.n_target() } -> std::convertible_to<std::size_t>;
  { c.cost(std::size_t{}, std::size_t{}) } -> std::convertible_to<double>;
  c.softmin_to_source(eps, in, in, out);
  c.softmin_to_target(eps, in, in, out);
};

/// Cost operator backed by an explicit CostMatrix.
class DenseCost {
 public:
  explicit DenseCost(const CostMatrix& c) : c_(&c) {}

  std::size_t n_source() const { return c_->n_source; }
  std::size_t n_target() const { return c_->n_target; }
  double cost(std::size_t i, std::size_t j) const { return (*c_)(i, j); }
  const CostMatrix& matrix() const { return *c_; }

  void softmin_to_source(double eps, std::span<const double> pot_t,
                         std::span<const double> logw_t, std::span<double> out) const {
    const std::size_t n = c_->n_source, m = c_->n_target;
    std::vector<double> buf(m);
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = c_->costs.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) {
        buf[j] = logw_t[j] == kNegInf ? kNegInf : (pot_t[j] - row[j]) / eps + logw_t[j];
      }
      out[i] = -eps * log_sum_exp(buf);
    }
  }

  void softmin_to_target(double eps, std::span<const double> pot_s,
                         std::span<const double> logw_s, std::span<double> out) const {
    const std::size_t n = c_->n_source, m = c_->n_target;
    std::vector<double> top(m, kNegInf);
    for (std::size_t i = 0; i < n; ++i) {
      if (logw_s[i] == kNegInf) continue;
      const double* row = c_->costs.data() + i * m;
      const double base = pot_s[i] / eps + logw_s[i];
      for (std::size_t j = 0; j < m; ++j) top[j] = std::max(top[j], base - row[j] / eps);
    }
    std::vector<double> acc(m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      if (logw_s[i] == kNegInf) continue;
      const double* row = c_->costs.data() + i * m;
      const double base = pot_s[i] / eps + logw_s[i];
      for (std::size_t j = 0; j < m; ++j) acc[j] += std::exp(base - row[j] / eps - top[j]);
    }
    for (std::size_t j = 0; j < m; ++j) {
      out[j] = top[j] == kNegInf ? std::numeric_limits<double>::infinity()
                                 : -eps * (top[j] + std::log(acc[j]));
    }
  }

 private:
  const CostMatrix* c_;
};

/// Geometry of a regular grid of cell centres.
struct GridGeometry {
  std::size_t rows = 0;
  std::size_t cols = 0;
  double cell_size = 1.0;

  static GridGeometry of(const GridMeasure& g) { return {g.rows(), g.cols(), g.cell_size()}; }
  std::size_t size() const { return rows * cols; }
};

/// Squared-Euclidean cost between two regular grids, applied separably: a
/// c-transform over an R x C grid is one log-sum-exp pass along columns
/// followed by one along rows, O(R C (R' + C')) instead of O(R C R' C').
class GridCost {
 public:
  GridCost(GridGeometry source, GridGeometry target, double normalization)
      : src_(source), tgt_(target), norm_(normalization) {
    dx_ = axis_costs(src_.cols, src_.cell_size, tgt_.cols, tgt_.cell_size);
    dy_ = axis_costs(src_.rows, src_.cell_size, tgt_.rows, tgt_.cell_size);
  }

  std::size_t n_source() const { return src_.size(); }
  std::size_t n_target() const { return tgt_.size(); }
  double cost(std::size_t i, std::size_t j) const {
    const std::size_t ri = i / src_.cols, ci = i % src_.cols;
    const std::size_t rj = j / tgt_.cols, cj = j % tgt_.cols;
    return dy_[ri * tgt_.rows + rj] + dx_[ci * tgt_.cols + cj];
  }

  CostMatrix dense() const {
    CostMatrix c;
    c.n_source = n_source();
    c.n_target = n_target();
    c.normalization = norm_;
    c.costs.resize(c.n_source * c.n_target);
    for (std::size_t i = 0; i < c.n_source; ++i)
      for (std::size_t j = 0; j < c.n_target; ++j) c.costs[i * c.n_target + j] = cost(i, j);
    return c;
  }

  void softmin_to_source(double eps, std::span<const double> pot_t,
                         std::span<const double> logw_t, std::span<double> out) const {
    separable(eps, pot_t, logw_t, tgt_, src_, dx_, dy_, /*transposed=*/true, out);
  }

  void softmin_to_target(double eps, std::span<const double> pot_s,
                         std::span<const double> logw_s, std::span<double> out) const {
    separable(eps, pot_s, logw_s, src_, tgt_, dx_, dy_, /*transposed=*/false, out);
  }

 private:
  std::vector<double> axis_costs(std::size_t n_a, double cell_a, std::size_t n_b,
                                 double cell_b) const {
    std::vector<double> d(n_a * n_b);
    for (std::size_t a = 0; a < n_a; ++a) {
      for (std::size_t b = 0; b < n_b; ++b) {
        const double diff = ((static_cast<double>(a) + 0.5) * cell_a -
                             (static_cast<double>(b) + 0.5) * cell_b) / norm_;
        d[a * n_b + b] = diff * diff;
      }
    }
    return d;
  }

  // Reduces over the `in` grid onto the `out` grid. Axis tables are indexed
  // [source][target]; `transposed` means `in` is the target side.
  static void separable(double eps, std::span<const double> pot, std::span<const double> logw,
                        GridGeometry in, GridGeometry outg, const std::vector<double>& dx,
                        const std::vector<double>& dy, bool transposed,
                        std::span<double> out) {
    auto ax = [transposed](const std::vector<double>& t, std::size_t a_in, std::size_t a_out,
                           std::size_t n_in_axis, std::size_t n_out_axis) {
      return transposed ? t[a_out * n_in_axis + a_in] : t[a_in * n_out_axis + a_out];
    };
    std::vector<double> h(in.size());
    for (std::size_t k = 0; k < h.size(); ++k) {
      h[k] = logw[k] == kNegInf ? kNegInf : pot[k] / eps + logw[k];
    }
    // Pass 1: reduce input columns onto output columns, per input row.
    std::vector<double> mid(in.rows * outg.cols);
    std::vector<double> buf(std::max(in.cols, in.rows));
    for (std::size_t r = 0; r < in.rows; ++r) {
      for (std::size_t c_out = 0; c_out < outg.cols; ++c_out) {
        for (std::size_t c_in = 0; c_in < in.cols; ++c_in) {
          buf[c_in] = h[r * in.cols + c_in] - ax(dx, c_in, c_out, in.cols, outg.cols) / eps;
        }
        mid[r * outg.cols + c_out] = log_sum_exp({buf.data(), in.cols});
      }
    }
    // Pass 2: reduce input rows onto output rows.
    for (std::size_t r_out = 0; r_out < outg.rows; ++r_out) {
      for (std::size_t c_out = 0; c_out < outg.cols; ++c_out) {
        for (std::size_t r_in = 0; r_in < in.rows; ++r_in) {
          buf[r_in] = mid[r_in * outg.cols + c_out] -
                      ax(dy, r_in, r_out, in.rows, outg.rows) / eps;
        }
        const double lse = log_sum_exp({buf.data(), in.rows});
        out[r_out * outg.cols + c_out] =
            lse == kNegInf ? std::numeric_limits<double>::infinity() : -eps * lse;
      }
    }
  }

  GridGeometry src_;
  GridGeometry tgt_;
  double norm_;
  std::vector<double> dx_;  // [src col][tgt col]
  std::vector<double> dy_;  // [src row][tgt row]
};

static_assert(CostOperator<DenseCost>);
static_assert(CostOperator<GridCost>);

}  // namespace s3

#endif  // S3_SOFTMIN_HPP
