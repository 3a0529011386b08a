#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "physio/dataset.hpp"

namespace physio {

inline constexpr int kFeaturesPerChannel = 13;

/// Fixed per-channel summary used by the margin classifier in the utility
/// evaluation: mean, std, min, max, median, interquartile range, energy,
/// zero-crossing count, autocorrelation at lags 1-5.
inline Eigen::VectorXd engineered_features(const Eigen::MatrixXd& values) {
  const int t = static_cast<int>(values.rows());
  const int nd = static_cast<int>(values.cols());
  if (t < 2) throw std::invalid_argument("engineered_features: need at least 2 steps");
  Eigen::VectorXd out(kFeaturesPerChannel * nd);

  auto quantile = [](std::vector<double>& sorted, double q) {
    const double pos = q * (static_cast<double>(sorted.size()) - 1.0);
    const auto lo = static_cast<std::size_t>(pos);
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
  };

  for (int c = 0; c < nd; ++c) {
    const Eigen::ArrayXd x = values.col(c).array();
    const double mean = x.mean();
    const double var = (x - mean).square().mean();
    std::vector<double> sorted(x.data(), x.data() + t);
    std::sort(sorted.begin(), sorted.end());

    int zero_crossings = 0;
    for (int i = 0; i + 1 < t; ++i)
      if (x(i) * x(i + 1) < 0.0) ++zero_crossings;

    const double centered_energy = (x - mean).square().sum();
    double* f = out.data() + c * kFeaturesPerChannel;
    f[0] = mean;
    f[1] = std::sqrt(var);
    f[2] = sorted.front();
    f[3] = sorted.back();
    f[4] = quantile(sorted, 0.5);
    f[5] = quantile(sorted, 0.75) - quantile(sorted, 0.25);
    f[6] = x.square().mean();
    f[7] = static_cast<double>(zero_crossings);
    for (int lag = 1; lag <= 5; ++lag) {
      double acc = 0.0;
      for (int i = 0; i + lag < t; ++i) acc += (x(i) - mean) * (x(i + lag) - mean);
      f[7 + lag] = centered_energy > 1e-12 ? acc / centered_energy : 0.0;
    }
  }
  return out;
}

inline Eigen::MatrixXd feature_matrix(const std::vector<SequenceSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("feature_matrix: empty sample list");
  const auto f0 = engineered_features(samples[0].values);
  Eigen::MatrixXd out(f0.size(), static_cast<Eigen::Index>(samples.size()));
  out.col(0) = f0;
  for (std::size_t i = 1; i < samples.size(); ++i)
    out.col(static_cast<Eigen::Index>(i)) = engineered_features(samples[i].values);
  return out;
}

}  // namespace physio
