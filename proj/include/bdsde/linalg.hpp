#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace bdsde {

/// Upper bound on every small dimension (state d, noise l, forward-state m).
/// Small vectors and matrices live on the stack up to this size.
inline constexpr int kMaxDim = 4;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDim, kMaxDim>;

inline void require(bool cond, const std::string& what) {
  if (!cond) throw std::domain_error(what);
}

inline void require_dim(int n, const char* name) {
  if (n < 1 || n > kMaxDim)
    throw std::domain_error(std::string(name) + " must be in [1, " + std::to_string(kMaxDim) + "]");
}

/// Frobenius norm squared, |z|^2 = trace(z z*).
template <class Derived>
double sq_norm(const Eigen::MatrixBase<Derived>& z) {
  return z.squaredNorm();
}

inline bool all_finite(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  return m.allFinite();
}

}  // namespace bdsde
