#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "physio/autodiff.hpp"
#include "physio/nets.hpp"

namespace physio {

struct LossWeights {
  double beta = 0.2;      // posterior weight
  double lambda_f = 1.0;  // feature matching weight
  double lambda_a = 1.0;  // adversarial weight
  double lambda_d = 0.2;  // diversity weight
  double delta = 0.1;     // free-bits threshold
  double k = 200.0;       // annealing time constant
  double eta_floor = 0.1;
};

/// Per-epoch scalar components of the composite objective. `total` is the
/// value the run optimized; for the full model it recombines from the parts
/// (see total_generator_loss), baselines fill unused columns with zero.
struct LossBreakdown {
  double eta = 0.0;
  double recon = 0.0;
  double posterior = 0.0;
  double feats = 0.0;
  double adv = 0.0;
  double diverse = 0.0;
  double disc = 0.0;
  double total = 0.0;
};

// ---------------------------------------------------------------------------
// scalar forms (single sample); training uses the tape builders further down

/// Mean of squared differences over all T*Nd entries.
inline double recon_loss(const Eigen::MatrixXd& x, const Eigen::MatrixXd& x_bar) {
  if (x.rows() != x_bar.rows() || x.cols() != x_bar.cols())
    throw std::invalid_argument("recon_loss: shape mismatch");
  return (x - x_bar).array().square().sum() / static_cast<double>(x.size());
}

/// Dimension-averaged Gaussian KL to the standard-normal prior, with the
/// free-bits clamp max(KL - delta, 0).
inline double posterior_loss(const PosteriorParams& post, double delta = 0.1) {
  const int nz = static_cast<int>(post.mu.size());
  const Eigen::ArrayXd lv = post.log_var.array();
  const double kl =
      -0.5 / nz * (1.0 + lv - post.mu.array().square() - lv.exp()).sum();
  return std::max(kl - delta, 0.0);
}

/// Scaled Euclidean norm between discriminator feature embeddings.
inline double feature_match_loss(const Eigen::VectorXd& psi_x, const Eigen::VectorXd& psi_xbar) {
  if (psi_x.size() != psi_xbar.size())
    throw std::invalid_argument("feature_match_loss: length mismatch");
  return (psi_x - psi_xbar).norm() / static_cast<double>(psi_x.size());
}

/// -log p(y). Probabilities are clamped at 1e-12 so a saturated discriminator
/// yields a large finite value instead of infinity.
inline double adversarial_loss(const Eigen::VectorXd& probs, int label) {
  if (label < 1 || label > probs.size())
    throw std::invalid_argument("adversarial_loss: label out of range");
  return -std::log(std::max(probs(label - 1), 1e-12));
}

/// Mean of squared differences between a latent code and its reconstruction.
inline double diversity_loss(const Eigen::VectorXd& z, const Eigen::VectorXd& z_bar) {
  if (z.size() != z_bar.size()) throw std::invalid_argument("diversity_loss: length mismatch");
  return (z - z_bar).array().square().sum() / static_cast<double>(z.size());
}

/// Mean of -log p(y) over the real batch plus mean of -log p(L+1) over the
/// fake batch. Each probability vector has length L+1.
inline double discriminator_loss(const std::vector<Eigen::VectorXd>& real_probs,
                                 const std::vector<int>& real_labels,
                                 const std::vector<Eigen::VectorXd>& fake_probs) {
  if (real_probs.empty() || fake_probs.empty())
    throw std::invalid_argument("discriminator_loss: empty batch");
  if (real_probs.size() != real_labels.size())
    throw std::invalid_argument("discriminator_loss: label count mismatch");
  double real_term = 0.0;
  for (std::size_t i = 0; i < real_probs.size(); ++i)
    real_term += -std::log(std::max(real_probs[i](real_labels[i] - 1), 1e-12));
  double fake_term = 0.0;
  for (const auto& p : fake_probs)
    fake_term += -std::log(std::max(p(p.size() - 1), 1e-12));
  return real_term / static_cast<double>(real_probs.size()) +
         fake_term / static_cast<double>(fake_probs.size());
}

/// Inverse-sigmoid decay, eta_t = max(k / (k + exp(t/k)), floor), evaluated
/// once per epoch with t starting at 1.
inline double anneal_coefficient(int t, double k = 200.0, double eta_floor = 0.1) {
  if (t < 1) throw std::invalid_argument("anneal_coefficient: t must be >= 1");
  return std::max(k / (k + std::exp(static_cast<double>(t) / k)), eta_floor);
}

/// eta*recon + (1-eta)*(beta*posterior + lambda_f*feats)
///           + (1-eta)*(lambda_a*adv + lambda_d*diverse)
inline double total_generator_loss(double recon, double posterior, double feats, double adv,
                                   double diverse, const LossWeights& w, double eta) {
  return eta * recon + (1.0 - eta) * (w.beta * posterior + w.lambda_f * feats) +
         (1.0 - eta) * (w.lambda_a * adv + w.lambda_d * diverse);
}

inline double total_generator_loss(const LossBreakdown& parts, const LossWeights& w) {
  return total_generator_loss(parts.recon, parts.posterior, parts.feats, parts.adv,
                              parts.diverse, w, parts.eta);
}

// ---------------------------------------------------------------------------
// batched graph builders (backend-generic; 1x1 results)

/// Batch-mean squared reconstruction error between ground-truth steps and
/// decoded steps.
template <class B>
typename B::V recon_loss_graph(B& b, const std::vector<typename B::V>& x_steps,
                               const std::vector<typename B::V>& xbar_steps) {
  if (x_steps.size() != xbar_steps.size())
    throw std::invalid_argument("recon_loss_graph: step count mismatch");
  const int nd = b.rows_of(x_steps[0]);
  typename B::V acc;
  for (std::size_t t = 0; t < x_steps.size(); ++t) {
    auto d = b.sub(x_steps[t], xbar_steps[t]);
    auto sq = b.colsum(b.cmul(d, d));
    acc = (t == 0) ? sq : b.add(acc, sq);
  }
  return b.scale(b.mean_all(acc), 1.0 / (static_cast<double>(x_steps.size()) * nd));
}

/// Batch-mean free-bits posterior loss from encoder outputs.
template <class B>
typename B::V posterior_loss_graph(B& b, const typename B::V& mu, const typename B::V& logvar,
                                   double delta) {
  const int nz = b.rows_of(mu);
  auto inner = b.add_scalar(
      b.sub(b.sub(logvar, b.cmul(mu, mu)), b.exp_(logvar)), 1.0);
  auto kl = b.scale(b.colsum(inner), -0.5 / nz);
  return b.mean_all(b.relu(b.add_scalar(kl, -delta)));
}

/// Batch-mean scaled feature-matching norm.
template <class B>
typename B::V feature_match_loss_graph(B& b, const typename B::V& psi_x,
                                       const typename B::V& psi_xbar) {
  const int d_f = b.rows_of(psi_x);
  auto d = b.sub(psi_x, psi_xbar);
  auto norms = b.sqrt_(b.colsum(b.cmul(d, d)));
  return b.scale(b.mean_all(norms), 1.0 / d_f);
}

/// Batch-mean latent reconstruction error (diversity objective).
template <class B>
typename B::V diversity_loss_graph(B& b, const typename B::V& z, const typename B::V& z_bar) {
  const int nz = b.rows_of(z);
  auto d = b.sub(z, z_bar);
  return b.scale(b.mean_all(b.colsum(b.cmul(d, d))), 1.0 / nz);
}

}  // namespace physio
