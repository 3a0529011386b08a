#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "physio/dataset.hpp"
#include "physio/nets.hpp"
#include "physio/rng.hpp"
#include "physio/util.hpp"

namespace physio {

/// A generated dataset plus provenance.
struct SyntheticSet {
  std::vector<SequenceSample> samples;  // condition label recorded per sample
  std::string source;                   // model kind + checkpoint fingerprint
};

/// Classic dynamic-programming alignment cost. Frame cost is the Euclidean
/// distance across channels; no warping window; the optimal path sum is
/// returned unnormalized.
inline double dtw_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("dtw_distance: channel mismatch");
  const int n = static_cast<int>(a.rows());
  const int m = static_cast<int>(b.rows());
  if (n == 0 || m == 0) throw std::invalid_argument("dtw_distance: empty sequence");
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(m + 1, inf), curr(m + 1, inf);
  prev[0] = 0.0;
  for (int i = 1; i <= n; ++i) {
    curr[0] = inf;
    for (int j = 1; j <= m; ++j) {
      const double cost = (a.row(i - 1) - b.row(j - 1)).norm();
      curr[j] = cost + std::min({prev[j], curr[j - 1], prev[j - 1]});
    }
    std::swap(prev, curr);
  }
  return prev[m];
}

namespace detail {

inline double min_dtw_to_set(const Eigen::MatrixXd& probe,
                             const std::vector<const Eigen::MatrixXd*>& pool,
                             const Eigen::MatrixXd* skip) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto* cand : pool) {
    if (cand == skip) continue;
    best = std::min(best, dtw_distance(probe, *cand));
  }
  return best;
}

inline std::vector<const Eigen::MatrixXd*> collect(const std::vector<SequenceSample>& s) {
  std::vector<const Eigen::MatrixXd*> out;
  out.reserve(s.size());
  for (const auto& x : s) out.push_back(&x.values);
  return out;
}

/// Seeded uniform subsample without replacement, identity when n <= cap.
inline std::vector<const Eigen::MatrixXd*> capped(std::vector<const Eigen::MatrixXd*> pool,
                                                  std::size_t cap, std::uint64_t seed) {
  if (cap == 0 || pool.size() <= cap) return pool;
  Rng rng(seed);
  rng.shuffle(pool);
  pool.resize(cap);
  return pool;
}

}  // namespace detail

/// Average nearest-neighbor DTW distance inside the reference set, the shared
/// normalizer for both diversity and novelty.
inline double dtw_nn_normalizer(const std::vector<SequenceSample>& reference) {
  if (reference.size() < 2)
    throw std::invalid_argument("dtw_nn_normalizer: need at least 2 reference samples");
  auto pool = detail::collect(reference);
  std::vector<double> mins(pool.size());
  parallel_for(pool.size(), [&](std::size_t i) {
    mins[i] = detail::min_dtw_to_set(*pool[i], pool, pool[i]);
  });
  return std::accumulate(mins.begin(), mins.end(), 0.0) / static_cast<double>(mins.size());
}

struct DiversityResult {
  double score = 0.0;
  double normalizer = 0.0;  // Lambda
};

struct ScoringOptions {
  std::size_t subsample_cap = 500;  // pairwise DTW cost grows quadratically
  std::uint64_t subsample_seed = 0;
  std::optional<double> normalizer;  // reuse a precomputed Lambda
};

/// Mean distance from each synthetic sample to its nearest other synthetic
/// sample, divided by the reference normalizer; the real set scores 1 by
/// construction.
inline DiversityResult diversity_score(const std::vector<SequenceSample>& synthetic,
                                       const std::vector<SequenceSample>& reference,
                                       const ScoringOptions& opt = {}) {
  if (synthetic.size() < 2)
    throw std::invalid_argument("diversity_score: need at least 2 synthetic samples");
  DiversityResult out;
  out.normalizer = opt.normalizer ? *opt.normalizer : dtw_nn_normalizer(reference);
  auto pool = detail::capped(detail::collect(synthetic), opt.subsample_cap, opt.subsample_seed);
  std::vector<double> mins(pool.size());
  parallel_for(pool.size(), [&](std::size_t i) {
    mins[i] = detail::min_dtw_to_set(*pool[i], pool, pool[i]);
  });
  const double mean = std::accumulate(mins.begin(), mins.end(), 0.0) / pool.size();
  out.score = mean / out.normalizer;
  return out;
}

struct NoveltyResult {
  double score = 0.0;
  double normalizer = 0.0;
  std::vector<double> per_sample;  // normalized, for histograms
};

/// Mean distance from each synthetic sample to its nearest real training
/// sample, under the same normalizer as the diversity score.
inline NoveltyResult novelty_score(const std::vector<SequenceSample>& synthetic,
                                   const std::vector<SequenceSample>& train,
                                   const ScoringOptions& opt = {}) {
  if (synthetic.empty() || train.empty())
    throw std::invalid_argument("novelty_score: empty input set");
  NoveltyResult out;
  out.normalizer = opt.normalizer ? *opt.normalizer : dtw_nn_normalizer(train);
  auto pool = detail::capped(detail::collect(synthetic), opt.subsample_cap, opt.subsample_seed);
  auto ref = detail::collect(train);
  out.per_sample.resize(pool.size());
  parallel_for(pool.size(), [&](std::size_t i) {
    out.per_sample[i] = detail::min_dtw_to_set(*pool[i], ref, nullptr) / out.normalizer;
  });
  out.score = std::accumulate(out.per_sample.begin(), out.per_sample.end(), 0.0) /
              static_cast<double>(out.per_sample.size());
  return out;
}

/// Fraction of samples whose oracle prediction matches the condition label.
inline double conditional_accuracy(const SyntheticSet& synthetic, const OracleParams& oracle,
                                   const NetConfig& oracle_cfg) {
  if (synthetic.samples.empty())
    throw std::invalid_argument("conditional_accuracy: empty synthetic set");
  std::size_t hits = 0;
  for (const auto& s : synthetic.samples) {
    if (s.label < 1 || s.label > oracle_cfg.num_classes)
      throw std::invalid_argument("conditional_accuracy: label outside oracle classes");
    hits += (argmax_label(classify_oracle(oracle, oracle_cfg, s.values)) == s.label);
  }
  return static_cast<double>(hits) / static_cast<double>(synthetic.samples.size());
}

/// Rank-statistic AUC: probability that a positive outranks a negative, ties
/// counting one half.
inline double auc_score(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auc_score: length mismatch");
  double n_pos = 0, n_neg = 0;
  for (int l : labels) (l != 0 ? n_pos : n_neg) += 1.0;
  if (n_pos == 0 || n_neg == 0)
    throw std::invalid_argument("auc_score: both classes must be present");
  double wins = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == 0) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      if (scores[i] > scores[j])
        wins += 1.0;
      else if (scores[i] == scores[j])
        wins += 0.5;
    }
  }
  return wins / (n_pos * n_neg);
}

/// Aggregate report serialized by the evaluate command.
struct ScoreReport {
  std::optional<double> conditional_accuracy;
  std::optional<double> diversity;
  std::optional<double> novelty;
  double normalizer = 0.0;
  std::vector<double> novelty_per_sample;
};

}  // namespace physio
