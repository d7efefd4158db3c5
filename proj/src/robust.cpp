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

#include "rngpe/robust.hpp"

#include <algorithm>
#include <iostream>

namespace rngpe {

double median(std::vector<double> values) {
  if (values.empty()) throw InvalidArgument("median: empty input");
  const auto n = values.size();
  const auto mid = static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  const double upper = values[n / 2];
  if (n % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + mid);
  return 0.5 * (lower + upper);
}

double median(const Eigen::Ref<const Eigen::VectorXd>& values) {
  return median(std::vector<double>(values.data(), values.data() + values.size()));
}

LocationScale robust_location_scale(const Eigen::Ref<const Eigen::VectorXd>& v) {
  if (v.size() == 0) throw InvalidArgument("robust_location_scale: empty input");
  if (!v.allFinite()) throw InvalidArgument("robust_location_scale: non-finite entries");
  LocationScale out;
  out.median = median(v);
  const Eigen::VectorXd dev = (v.array() - out.median).abs().matrix();
  out.mad_scale = kMadConsistency * median(dev);
  return out;
}

Eigen::VectorXd projection_statistics(const Eigen::Ref<const Eigen::MatrixXd>& cloud) {
  const Eigen::Index m = cloud.rows();
  const Eigen::Index d = cloud.cols();
  if (m < 2 || d < 1) throw InvalidArgument("projection_statistics: need at least 2 points and 1 coordinate");
  if (!cloud.allFinite()) throw InvalidArgument("projection_statistics: non-finite entries");
  if (m <= d) {
    std::clog << "rngpe: projection_statistics with " << m << " points in " << d
              << " dimensions; outlyingness is poorly resolved\n";
  }

  Eigen::VectorXd center(d);
  for (Eigen::Index k = 0; k < d; ++k) center(k) = median(cloud.col(k));
  const Eigen::MatrixXd centered = cloud.rowwise() - center.transpose();

  Eigen::VectorXd ps = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd z(m);
  Eigen::VectorXd dev(m);
  constexpr double eps = std::numeric_limits<double>::epsilon();
  for (Eigen::Index j = 0; j < m; ++j) {
    const double norm = centered.row(j).norm();
    if (norm == 0.0) continue;
    const Eigen::VectorXd u = centered.row(j).transpose() / norm;
    z.noalias() = cloud * u;
    const double zmed = median(z);
    dev = (z.array() - zmed).abs().matrix();
    const double mad = kMadConsistency * median(dev);
    // Zero spread along u, up to rounding of the projections.
    if (!(mad > 64.0 * eps * z.cwiseAbs().maxCoeff())) continue;
    for (Eigen::Index i = 0; i < m; ++i) ps(i) = std::max(ps(i), dev(i) / mad);
  }
  return ps;
}

LeverageDiagnostics shgm_weights(const Eigen::Ref<const Eigen::VectorXd>& ps, int nu) {
  if (nu < 1) throw InvalidArgument("shgm_weights: nu must be >= 1");
  if (!ps.allFinite() || (ps.array() < 0.0).any()) {
    throw InvalidArgument("shgm_weights: projection statistics must be finite and non-negative");
  }
  LeverageDiagnostics out;
  out.ps = ps;
  out.nu = nu;
  out.cutoff = chi_squared_quantile(kLeverageQuantile, nu);
  out.weights.resize(ps.size());
  for (Eigen::Index i = 0; i < ps.size(); ++i) {
    const double ps2 = ps(i) * ps(i);
    out.weights(i) = ps2 <= out.cutoff ? 1.0 : out.cutoff / ps2;
  }
  return out;
}

}  // namespace rngpe
