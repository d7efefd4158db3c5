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

#include "rngpe/kernel.hpp"

#include <algorithm>
#include <sstream>

#include "rngpe/robust.hpp"

namespace rngpe {

void KernelParams::validate() const {
  if (lengthscales.size() == 0) throw InvalidArgument("KernelParams: no lengthscales");
  if (!lengthscales.allFinite() || !(lengthscales.array() > 0.0).all()) {
    throw InvalidArgument("KernelParams: lengthscales must be finite and positive");
  }
  if (!std::isfinite(amplitude) || !(amplitude > 0.0)) {
    throw InvalidArgument("KernelParams: amplitude must be finite and positive");
  }
  if (!std::isfinite(nugget) || nugget < 0.0) {
    throw InvalidArgument("KernelParams: nugget must be finite and non-negative");
  }
}

void KernelParams::validate(Eigen::Index input_dim) const {
  validate();
  if (lengthscales.size() != input_dim) {
    throw InvalidArgument("KernelParams: expected " + std::to_string(input_dim) + " lengthscales, got " +
                          std::to_string(lengthscales.size()));
  }
}

Eigen::MatrixXd quadratic_basis(const Eigen::Ref<const Eigen::MatrixXd>& X) {
  if (!X.allFinite()) throw InvalidArgument("quadratic_basis: non-finite inputs");
  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols();
  Eigen::MatrixXd H(n, basis_size(p));
  H.col(0).setOnes();
  H.middleCols(1, p) = X;
  H.rightCols(p) = X.array().square().matrix();
  return H;
}

Eigen::VectorXd quadratic_basis_row(const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (!x.allFinite()) throw InvalidArgument("quadratic_basis: non-finite inputs");
  const Eigen::Index p = x.size();
  Eigen::VectorXd h(basis_size(p));
  h(0) = 1.0;
  h.segment(1, p) = x;
  h.tail(p) = x.array().square().matrix();
  return h;
}

namespace {

void check_lengthscales(const Eigen::Ref<const Eigen::VectorXd>& l, Eigen::Index p) {
  if (l.size() != p) throw InvalidArgument("correlation: lengthscale count does not match input dimension");
  if (!(l.array() > 0.0).all()) throw InvalidArgument("correlation: lengthscales must be positive");
}

}  // namespace

Eigen::MatrixXd correlation_matrix(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                   const Eigen::Ref<const Eigen::VectorXd>& lengthscales) {
  check_lengthscales(lengthscales, X.cols());
  if (!X.allFinite()) throw InvalidArgument("correlation_matrix: non-finite inputs");
  const Eigen::Index n = X.rows();
  const Eigen::MatrixXd Z = X * lengthscales.cwiseInverse().asDiagonal();
  Eigen::MatrixXd R(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    R(j, j) = 1.0;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      const double v = std::exp(-(Z.row(i) - Z.row(j)).squaredNorm());
      R(i, j) = v;
      R(j, i) = v;
    }
  }
  return R;
}

Eigen::MatrixXd cross_correlation(const Eigen::Ref<const Eigen::MatrixXd>& A,
                                  const Eigen::Ref<const Eigen::MatrixXd>& B,
                                  const Eigen::Ref<const Eigen::VectorXd>& lengthscales) {
  if (A.cols() != B.cols()) throw InvalidArgument("cross_correlation: dimension mismatch");
  check_lengthscales(lengthscales, A.cols());
  const Eigen::MatrixXd ZA = A * lengthscales.cwiseInverse().asDiagonal();
  const Eigen::MatrixXd ZB = B * lengthscales.cwiseInverse().asDiagonal();
  Eigen::MatrixXd R(A.rows(), B.rows());
  for (Eigen::Index j = 0; j < B.rows(); ++j) {
    for (Eigen::Index i = 0; i < A.rows(); ++i) R(i, j) = std::exp(-(ZA.row(i) - ZB.row(j)).squaredNorm());
  }
  return R;
}

Eigen::MatrixXd assemble_covariance(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                    const KernelParams& params) {
  params.validate(X.cols());
  Eigen::MatrixXd sigma = params.variance() * correlation_matrix(X, params.lengthscales);
  sigma.diagonal().array() += params.nugget;
  return sigma;
}

Eigen::VectorXd CovarianceFactor::half_solve(const Eigen::Ref<const Eigen::VectorXd>& b) const {
  return chol.triangularView<Eigen::Lower>().solve(b);
}

Eigen::MatrixXd CovarianceFactor::inverse() const {
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(size(), size());
  return solve(eye);
}

CovarianceFactor factorize(const Eigen::Ref<const Eigen::MatrixXd>& sigma, double nugget_floor) {
  if (sigma.rows() != sigma.cols() || sigma.rows() == 0) {
    throw InvalidArgument("factorize: expected a non-empty square matrix");
  }
  if (!sigma.allFinite()) throw InvalidArgument("factorize: non-finite entries");
  const double scale = sigma.cwiseAbs().maxCoeff();
  if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(scale, 1e-300)) {
    throw InvalidArgument("factorize: matrix is not symmetric");
  }

  auto attempt = [&](double jitter, CovarianceFactor& out) {
    Eigen::MatrixXd work = sigma;
    if (jitter > 0.0) work.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(work);
    if (llt.info() != Eigen::Success) return false;
    out.chol = llt.matrixL();
    if (!(out.chol.diagonal().array() > 0.0).all()) return false;
    out.log_det = 2.0 * out.chol.diagonal().array().log().sum();
    out.jitter = jitter;
    return true;
  };

  CovarianceFactor out;
  if (attempt(0.0, out)) return out;

  const double max_diag = sigma.diagonal().maxCoeff();
  const double ceiling = 1e-4 * max_diag;
  double jitter = nugget_floor > 0.0 ? nugget_floor : 1e-10 * std::max(max_diag, 1e-300);
  std::ostringstream tried;
  for (; jitter <= ceiling * (1.0 + 1e-12); jitter *= 10.0) {
    if (attempt(jitter, out)) return out;
    tried << ' ' << jitter;
  }
  throw NumericalError("factorize: matrix not positive definite after jitter levels" + tried.str());
}

Standardizer Standardizer::fit(const Eigen::Ref<const Eigen::MatrixXd>& X) {
  if (X.rows() == 0) throw InvalidArgument("Standardizer: empty input");
  Standardizer s;
  s.center.resize(X.cols());
  s.scale.resize(X.cols());
  for (Eigen::Index k = 0; k < X.cols(); ++k) {
    const LocationScale ls = robust_location_scale(X.col(k));
    s.center(k) = ls.median;
    double scale = ls.mad_scale;
    if (!(scale > 0.0) && X.rows() > 1) {
      const Eigen::ArrayXd c = X.col(k).array() - X.col(k).mean();
      scale = std::sqrt(c.square().sum() / static_cast<double>(X.rows() - 1));
    }
    s.scale(k) = scale > 0.0 ? scale : 1.0;
  }
  return s;
}

Standardizer Standardizer::identity(Eigen::Index dim) {
  Standardizer s;
  s.center = Eigen::VectorXd::Zero(dim);
  s.scale = Eigen::VectorXd::Ones(dim);
  return s;
}

Eigen::MatrixXd Standardizer::apply(const Eigen::Ref<const Eigen::MatrixXd>& X) const {
  if (X.cols() != dim()) throw InvalidArgument("Standardizer: dimension mismatch");
  Eigen::MatrixXd Z = X.rowwise() - center.transpose();
  Z.array().rowwise() /= scale.transpose().array();
  return Z;
}

Eigen::VectorXd Standardizer::apply_row(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() != dim()) throw InvalidArgument("Standardizer: dimension mismatch");
  return ((x - center).array() / scale.array()).matrix();
}

Eigen::MatrixXd Standardizer::invert(const Eigen::Ref<const Eigen::MatrixXd>& Z) const {
  if (Z.cols() != dim()) throw InvalidArgument("Standardizer: dimension mismatch");
  return (Z * scale.asDiagonal()).rowwise() + center.transpose();
}

}  // namespace rngpe
