#ifndef S3_TESTS_SUPPORT_HPP
#define S3_TESTS_SUPPORT_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "s3/s3.hpp"

namespace s3test {

using namespace s3;

inline std::filesystem::path vectors_dir() { return S3_VECTORS_DIR; }

/// Fresh per-test scratch directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::path(S3_SCRATCH_DIR) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::vector<double> random_weights(SceneRng& rng, std::size_t n, double lo = 0.1,
                                          double hi = 1.0) {
  std::vector<double> w(n);
  for (double& v : w) v = rng.uniform(lo, hi);
  return w;
}

inline std::vector<Point2> random_points(SceneRng& rng, std::size_t n, double extent = 1.0) {
  std::vector<Point2> p(n);
  for (Point2& q : p) q = {rng.uniform(0.0, extent), rng.uniform(0.0, extent)};
  return p;
}

inline void normalize_to(std::vector<double>& w, double target) {
  const double m = mass(w);
  for (double& v : w) v *= target / m;
}

inline SolverConfig tight(double eps) {
  SolverConfig c;
  c.epsilon = eps;
  c.tolerance = 1e-13;
  c.max_iterations = 1000000;
  return c;
}

/// Central difference of f along coordinate k of x.
inline double central_difference(const std::function<double(const std::vector<double>&)>& f,
                                 const std::vector<double>& x, std::size_t k, double h) {
  auto xp = x, xm = x;
  xp[k] += h;
  xm[k] -= h;
  return (f(xp) - f(xm)) / (2.0 * h);
}

inline double relative_error(double got, double want) {
  return std::abs(got - want) / std::max(std::abs(want), 1e-300);
}

}  // namespace s3test

#endif  // S3_TESTS_SUPPORT_HPP
