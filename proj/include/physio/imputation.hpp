#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "physio/checkpoint.hpp"
#include "physio/dataset.hpp"
#include "physio/nets.hpp"
#include "physio/training.hpp"

namespace physio {

struct ImputationResult {
  Eigen::MatrixXd repaired;  // T x Nd; observed frames preserved bitwise
  std::string method;        // "physiogan" or "knn"
  MaskScenario scenario = MaskScenario::mcar;
  std::vector<int> mask;
};

/// Encode the zero-filled corrupted input, take the posterior mean, and decode
/// with the observed frames pinned: ground truth is emitted wherever the mask
/// is 1 and the network output elsewhere, with the emitted frame feeding back.
inline ImputationResult impute_physiogan(const Checkpoint& ckpt, const MaskedSample& ms) {
  if (!ckpt.has_encoder() || !ckpt.has_decoder())
    throw std::invalid_argument("impute_physiogan: checkpoint lacks encoder/decoder");
  const int t = static_cast<int>(ms.observed.rows());
  if (static_cast<int>(ms.observed.cols()) != ckpt.net.channels)
    throw std::invalid_argument("impute_physiogan: channel count mismatch with checkpoint");
  const PosteriorParams post = encode(ckpt.enc, ckpt.net, ms.observed);
  ImputationResult out;
  out.method = "physiogan";
  out.scenario = ms.scenario;
  out.mask = ms.mask;
  out.repaired = decode(ckpt.dec, ckpt.net, post.mu, ms.label, t, &ms);
  return out;
}

/// Rank same-label training samples by Euclidean distance over the observed
/// time steps only; missing frames become the mean of the k nearest
/// neighbors' corresponding frames.
inline ImputationResult impute_knn(const std::vector<SequenceSample>& train,
                                   const MaskedSample& ms, int k = 3) {
  if (k < 1) throw std::invalid_argument("impute_knn: k must be >= 1");
  const int t = static_cast<int>(ms.observed.rows());
  struct Scored {
    double dist;
    const SequenceSample* sample;
  };
  std::vector<Scored> candidates;
  for (const auto& s : train) {
    if (s.label != ms.label) continue;
    if (s.values.rows() != t || s.values.cols() != ms.observed.cols())
      throw std::invalid_argument("impute_knn: train sample shape mismatch");
    double sq = 0.0;
    for (int i = 0; i < t; ++i)
      if (ms.mask[i] == 1) sq += (ms.observed.row(i) - s.values.row(i)).squaredNorm();
    candidates.push_back({std::sqrt(sq), &s});
  }
  if (candidates.empty())
    throw std::invalid_argument("impute_knn: no training samples share label " +
                                std::to_string(ms.label));
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Scored& a, const Scored& b) { return a.dist < b.dist; });
  const int use = std::min<int>(k, static_cast<int>(candidates.size()));

  ImputationResult out;
  out.method = "knn";
  out.scenario = ms.scenario;
  out.mask = ms.mask;
  out.repaired = ms.observed;
  for (int i = 0; i < t; ++i) {
    if (ms.mask[i] == 1) continue;
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(ms.observed.cols());
    for (int n = 0; n < use; ++n) mean += candidates[n].sample->values.row(i);
    out.repaired.row(i) = mean / static_cast<double>(use);
  }
  return out;
}

/// Mean absolute error over all T*Nd entries.
inline double mae(const Eigen::MatrixXd& original, const Eigen::MatrixXd& repaired) {
  if (original.rows() != repaired.rows() || original.cols() != repaired.cols())
    throw std::invalid_argument("mae: shape mismatch");
  return (original - repaired).cwiseAbs().sum() / static_cast<double>(original.size());
}

struct SemanticRepairResult {
  /// (Acc(repaired) - Acc(corrupted)) / (Acc(complete) - Acc(corrupted));
  /// absent when the denominator is zero. Out-of-range values are reported
  /// raw, never clamped.
  std::optional<double> score;
  double acc_complete = 0.0;
  double acc_corrupted = 0.0;
  double acc_repaired = 0.0;
};

/// Oracle-accuracy gap recovered by imputation. Corrupted samples are scored
/// with their missing frames zero-filled.
inline SemanticRepairResult semantic_repair(const std::vector<SequenceSample>& complete,
                                            const std::vector<MaskedSample>& corrupted,
                                            const std::vector<SequenceSample>& repaired,
                                            const OracleParams& oracle,
                                            const NetConfig& oracle_cfg) {
  if (complete.size() != corrupted.size() || complete.size() != repaired.size())
    throw std::invalid_argument("semantic_repair: sets must be aligned sample-for-sample");
  if (complete.empty()) throw std::invalid_argument("semantic_repair: empty sets");

  std::vector<SequenceSample> corrupted_view(corrupted.size());
  for (std::size_t i = 0; i < corrupted.size(); ++i) {
    corrupted_view[i].values = corrupted[i].observed;
    corrupted_view[i].label = corrupted[i].label;
  }
  SemanticRepairResult out;
  out.acc_complete = oracle_accuracy(oracle, oracle_cfg, complete);
  out.acc_corrupted = oracle_accuracy(oracle, oracle_cfg, corrupted_view);
  out.acc_repaired = oracle_accuracy(oracle, oracle_cfg, repaired);
  const double denom = out.acc_complete - out.acc_corrupted;
  if (denom != 0.0) out.score = (out.acc_repaired - out.acc_corrupted) / denom;
  return out;
}

/// Full per-sample report serialized by the impute command.
struct RepairReport {
  double mae = 0.0;
  std::optional<double> semantic_repair;
  double acc_complete = 0.0;
  double acc_corrupted = 0.0;
  double acc_repaired = 0.0;
  std::string method;
  std::string scenario;
  double rate = 0.0;
  int sample_count = 0;
};

}  // namespace physio
