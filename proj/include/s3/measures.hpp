#ifndef S3_MEASURES_HPP
#define S3_MEASURES_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "s3/error.hpp"

namespace s3 {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

/// Neumaier-compensated sum.
inline double compensated_sum(std::span<const double> values) {
  double sum = 0.0;
  double carry = 0.0;
  for (double v : values) {
    const double t = sum + v;
    if (std::abs(sum) >= std::abs(v)) {
      carry += (sum - t) + v;
    } else {
      carry += (v - t) + sum;
    }
    sum = t;
  }
  return sum + carry;
}

/// Weighted Dirac atoms at annotated locations. Unit weights by default, so
/// the mass of an annotation set is its head count.
class PointMeasure {
 public:
  PointMeasure() = default;

  explicit PointMeasure(std::vector<Point2> points)
      : points_(std::move(points)), weights_(points_.size(), 1.0) {}

  PointMeasure(std::vector<Point2> points, std::vector<double> weights)
      : points_(std::move(points)), weights_(std::move(weights)) {
    if (points_.size() != weights_.size()) {
      throw PreconditionError("point measure: " + std::to_string(points_.size()) +
                              " points but " + std::to_string(weights_.size()) +
                              " weights");
    }
    for (double w : weights_) {
      if (!(w >= 0.0) || !std::isfinite(w)) {
        throw PreconditionError("point measure: weights must be finite and >= 0");
      }
    }
  }

  const std::vector<Point2>& points() const { return points_; }
  const std::vector<double>& weights() const { return weights_; }
  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }

 private:
  std::vector<Point2> points_;
  std::vector<double> weights_;
};

/// Nonnegative per-cell masses on a regular grid, row-major. Cell (i, j) is
/// centred at ((j + 0.5) * cell_size, (i + 0.5) * cell_size).
class GridMeasure {
 public:
  GridMeasure() = default;

  GridMeasure(std::size_t rows, std::size_t cols, double cell_size,
              std::vector<double> values)
      : rows_(rows), cols_(cols), cell_size_(cell_size), values_(std::move(values)) {
    if (rows_ == 0 || cols_ == 0) {
      throw PreconditionError("grid measure: rows and cols must be positive");
    }
    if (!(cell_size_ > 0.0) || !std::isfinite(cell_size_)) {
      throw PreconditionError("grid measure: cell_size must be positive");
    }
    if (values_.size() != rows_ * cols_) {
      throw PreconditionError("grid measure: expected " + std::to_string(rows_ * cols_) +
                              " values, got " + std::to_string(values_.size()));
    }
    for (double v : values_) {
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw PreconditionError("grid measure: values must be finite and >= 0");
      }
    }
  }

  static GridMeasure zeros(std::size_t rows, std::size_t cols, double cell_size) {
    return GridMeasure(rows, cols, cell_size, std::vector<double>(rows * cols, 0.0));
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }
  double cell_size() const { return cell_size_; }
  const std::vector<double>& values() const { return values_; }
  double at(std::size_t i, std::size_t j) const { return values_[i * cols_ + j]; }

  Point2 center(std::size_t i, std::size_t j) const {
    return {(static_cast<double>(j) + 0.5) * cell_size_,
            (static_cast<double>(i) + 0.5) * cell_size_};
  }
  Point2 center(std::size_t flat) const { return center(flat / cols_, flat % cols_); }

  /// Cell centres for every cell, row-major.
  std::vector<Point2> centers() const {
    std::vector<Point2> out;
    out.reserve(size());
    for (std::size_t k = 0; k < size(); ++k) out.push_back(center(k));
    return out;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  double cell_size_ = 1.0;
  std::vector<double> values_;
};

/// A plain weighted support. Both measure types flatten to this before a solve.
struct DiscreteMeasure {
  std::vector<Point2> support;
  std::vector<double> weights;

  std::size_t size() const { return weights.size(); }
};

inline double mass(std::span<const double> weights) { return compensated_sum(weights); }
inline double mass(const PointMeasure& m) { return compensated_sum(m.weights()); }
inline double mass(const GridMeasure& m) { return compensated_sum(m.values()); }
inline double mass(const DiscreteMeasure& m) { return compensated_sum(m.weights); }

inline DiscreteMeasure to_discrete(const PointMeasure& m) {
  return {m.points(), m.weights()};
}

enum class CostKind { squared_euclidean, euclidean };

inline double ground_cost(CostKind kind, Point2 a, Point2 b, double normalization) {
  const double dx = (a.x - b.x) / normalization;
  const double dy = (a.y - b.y) / normalization;
  const double sq = dx * dx + dy * dy;
  return kind == CostKind::squared_euclidean ? sq : std::sqrt(sq);
}

/// Dense pairwise ground costs, row-major n_source x n_target.
struct CostMatrix {
  std::size_t n_source = 0;
  std::size_t n_target = 0;
  std::vector<double> costs;
  CostKind kind = CostKind::squared_euclidean;
  double normalization = 1.0;

  double operator()(std::size_t i, std::size_t j) const { return costs[i * n_target + j]; }
  std::span<const double> row(std::size_t i) const {
    return {costs.data() + i * n_target, n_target};
  }
};

inline CostMatrix build_cost(std::span<const Point2> source, std::span<const Point2> target,
                             CostKind kind, double normalization) {
  if (source.empty() || target.empty()) throw PreconditionError("empty support");
  if (!(normalization > 0.0) || !std::isfinite(normalization)) {
    throw PreconditionError("build_cost: normalization must be positive");
  }
  CostMatrix c;
  c.n_source = source.size();
  c.n_target = target.size();
  c.kind = kind;
  c.normalization = normalization;
  c.costs.resize(c.n_source * c.n_target);
  for (std::size_t i = 0; i < c.n_source; ++i) {
    for (std::size_t j = 0; j < c.n_target; ++j) {
      c.costs[i * c.n_target + j] = ground_cost(kind, source[i], target[j], normalization);
    }
  }
  return c;
}

struct DiscretizedGrid {
  DiscreteMeasure measure;
  std::vector<std::size_t> cell_index;  // flat grid index of each retained atom
  double retained_mass = 0.0;
  bool all_pruned = false;
};

/// Flattens a grid onto its cell centres, keeping cells with value > prune_below.
inline DiscretizedGrid grid_to_discrete(const GridMeasure& grid, double prune_below = 0.0) {
  DiscretizedGrid out;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double v = grid.values()[k];
    if (v > prune_below) {
      out.measure.support.push_back(grid.center(k));
      out.measure.weights.push_back(v);
      out.cell_index.push_back(k);
    }
  }
  out.retained_mass = mass(out.measure);
  out.all_pruned = out.measure.weights.empty();
  return out;
}

/// Default cost normalization: the longer image side in pixels.
inline double default_normalization(const GridMeasure& grid) {
  return static_cast<double>(std::max(grid.rows(), grid.cols())) * grid.cell_size();
}

}  // namespace s3

#endif  // S3_MEASURES_HPP
