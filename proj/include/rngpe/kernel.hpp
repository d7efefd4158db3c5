/*
 * Copyright 2026 The rngpe Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "rngpe/errors.hpp"

namespace rngpe {

/// Squared-exponential kernel hyperparameters: k = amplitude^2 * R + nugget * I.
struct KernelParams {
  Eigen::VectorXd lengthscales;
  double amplitude = 1.0;
  double nugget = 0.0;

  void validate() const;
  void validate(Eigen::Index input_dim) const;
  double variance() const { return amplitude * amplitude; }
  /// Smallest diagonal jitter tried when Sigma fails to factorize.
  double nugget_floor() const { return 1e-10 * variance(); }
};

/// Rows [1, x_1..x_p, x_1^2..x_p^2]; q = 2p + 1 columns.
Eigen::MatrixXd quadratic_basis(const Eigen::Ref<const Eigen::MatrixXd>& X);

/// Basis row of a single point.
Eigen::VectorXd quadratic_basis_row(const Eigen::Ref<const Eigen::VectorXd>& x);

inline Eigen::Index basis_size(Eigen::Index input_dim) { return 2 * input_dim + 1; }

/// exp(-sum_k (a_k - b_k)^2 / l_k^2).
template <typename DerivedA, typename DerivedB, typename DerivedL>
typename DerivedA::Scalar se_correlation(const Eigen::MatrixBase<DerivedA>& a,
                                         const Eigen::MatrixBase<DerivedB>& b,
                                         const Eigen::MatrixBase<DerivedL>& lengthscales) {
  using Scalar = typename DerivedA::Scalar;
  if (a.size() != b.size() || a.size() != lengthscales.size()) {
    throw InvalidArgument("se_correlation: dimension mismatch");
  }
  if (!(lengthscales.array() > Scalar(0)).all()) {
    throw InvalidArgument("se_correlation: lengthscales must be positive");
  }
  Scalar s = 0;
  for (Eigen::Index k = 0; k < a.size(); ++k) {
    const Scalar g = (a(k) - b(k)) / lengthscales(k);
    s += g * g;
  }
  return std::exp(-s);
}

/// R(X, X) for the rows of X.
Eigen::MatrixXd correlation_matrix(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                   const Eigen::Ref<const Eigen::VectorXd>& lengthscales);

/// R(A, B), rows of A against rows of B.
Eigen::MatrixXd cross_correlation(const Eigen::Ref<const Eigen::MatrixXd>& A,
                                  const Eigen::Ref<const Eigen::MatrixXd>& B,
                                  const Eigen::Ref<const Eigen::VectorXd>& lengthscales);

/// Sigma(X) = amplitude^2 R(X, X) + nugget I.
Eigen::MatrixXd assemble_covariance(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                    const KernelParams& params);

/// Cholesky factor of a covariance matrix plus whatever jitter it took to get one.
struct CovarianceFactor {
  Eigen::MatrixXd chol;  ///< lower triangular
  double log_det = 0.0;
  double jitter = 0.0;   ///< diagonal term added before factorizing (0 if none)

  Eigen::Index size() const { return chol.rows(); }
  template <typename Derived>
  typename Derived::PlainObject solve(const Eigen::MatrixBase<Derived>& b) const {
    typename Derived::PlainObject x = chol.triangularView<Eigen::Lower>().solve(b);
    chol.triangularView<Eigen::Lower>().transpose().solveInPlace(x);
    return x;
  }
  /// L^{-1} b
  Eigen::VectorXd half_solve(const Eigen::Ref<const Eigen::VectorXd>& b) const;
  Eigen::MatrixXd inverse() const;
};

/// Factorizes a symmetric matrix. On failure, retries with diagonal jitter
/// nugget_floor, 10x nugget_floor, ... up to 1e-4 * max(diag); throws
/// NumericalError listing the attempted levels if none succeeds.
CovarianceFactor factorize(const Eigen::Ref<const Eigen::MatrixXd>& sigma, double nugget_floor);

/// Per-coordinate affine map z = (x - center) / scale, fitted with median / MAD.
struct Standardizer {
  Eigen::VectorXd center;
  Eigen::VectorXd scale;

  static Standardizer fit(const Eigen::Ref<const Eigen::MatrixXd>& X);
  static Standardizer identity(Eigen::Index dim);

  Eigen::Index dim() const { return center.size(); }
  Eigen::MatrixXd apply(const Eigen::Ref<const Eigen::MatrixXd>& X) const;
  Eigen::VectorXd apply_row(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  Eigen::MatrixXd invert(const Eigen::Ref<const Eigen::MatrixXd>& Z) const;
};

}  // namespace rngpe
