#ifndef S3_ENTROPY_HPP
#define S3_ENTROPY_HPP

#include <cmath>
#include <limits>
#include <span>
#include <string>

#include "s3/error.hpp"

namespace s3 {

/// Entropy generator used by the marginal penalty. Only KL ships.
enum class GeneratorKind { kullback_leibler };

/// phi(x) = x ln x - x + 1 for x > 0, phi(0) = 1.
inline double phi(double x, GeneratorKind = GeneratorKind::kullback_leibler) {
  if (!(x >= 0.0)) throw DomainError("phi: argument must be >= 0, got " + std::to_string(x));
  if (x == 0.0) return 1.0;
  if (std::isinf(x)) return x;
  return x * std::log(x) - x + 1.0;
}

struct ConjugateValue {
  double value = 0.0;
  bool saturated = false;  // e^z overflowed; value clamped to max double
};

/// phi*(z) = e^z - 1, with an overflow flag.
inline ConjugateValue phi_star_checked(double z, GeneratorKind = GeneratorKind::kullback_leibler) {
  const double v = std::expm1(z);
  if (std::isinf(v) && v > 0.0) return {std::numeric_limits<double>::max(), true};
  return {v, false};
}

inline double phi_star(double z, GeneratorKind kind = GeneratorKind::kullback_leibler) {
  return phi_star_checked(z, kind).value;
}

/// D_phi(mu | nu) = sum_k nu_k phi(mu_k / nu_k) with 0 phi(0/0) = 0.
/// Returns +infinity when mu puts mass where nu has none.
inline double kl_penalty(std::span<const double> mu, std::span<const double> nu) {
  if (mu.size() != nu.size()) {
    throw PreconditionError("kl_penalty: length mismatch (" + std::to_string(mu.size()) +
                            " vs " + std::to_string(nu.size()) + ")");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < mu.size(); ++k) {
    if (!(mu[k] >= 0.0) || !(nu[k] >= 0.0)) {
      throw DomainError("kl_penalty: weights must be >= 0");
    }
    if (nu[k] == 0.0) {
      if (mu[k] > 0.0) return std::numeric_limits<double>::infinity();
      continue;
    }
    total += nu[k] * phi(mu[k] / nu[k]);
  }
  return total;
}

}  // namespace s3

#endif  // S3_ENTROPY_HPP
