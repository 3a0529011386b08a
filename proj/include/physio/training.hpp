#pragma once

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "physio/autodiff.hpp"
#include "physio/checkpoint.hpp"
#include "physio/dataset.hpp"
#include "physio/features.hpp"
#include "physio/losses.hpp"
#include "physio/metrics.hpp"
#include "physio/nets.hpp"
#include "physio/rng.hpp"

namespace physio {

struct TrainingConfig {
  int epochs = 5000;
  int batch_size = 256;
  double learning_rate = 0.001;
  std::uint64_t seed = 0;
  /// Global gradient-norm clip applied to recurrent networks; 0 disables.
  double clip_norm = 5.0;
  /// Optional reconstruction-path variant; the default feeds the decoder its
  /// own previous output.
  bool teacher_forcing = false;
  LossWeights weights;
  NetConfig net;
};

inline void apply_config_json(TrainingConfig& c, const nlohmann::json& j) {
  for (const auto& [key, val] : j.items()) {
    if (key == "epochs") c.epochs = val.get<int>();
    else if (key == "batch_size") c.batch_size = val.get<int>();
    else if (key == "learning_rate") c.learning_rate = val.get<double>();
    else if (key == "seed") c.seed = val.get<std::uint64_t>();
    else if (key == "clip_norm") c.clip_norm = val.get<double>();
    else if (key == "teacher_forcing") c.teacher_forcing = val.get<bool>();
    else if (key == "beta") c.weights.beta = val.get<double>();
    else if (key == "lambda_f") c.weights.lambda_f = val.get<double>();
    else if (key == "lambda_a") c.weights.lambda_a = val.get<double>();
    else if (key == "lambda_d") c.weights.lambda_d = val.get<double>();
    else if (key == "delta") c.weights.delta = val.get<double>();
    else if (key == "k") c.weights.k = val.get<double>();
    else if (key == "eta_floor") c.weights.eta_floor = val.get<double>();
    else if (key == "nz") c.net.latent_dim = val.get<int>();
    else if (key == "enc_hidden") c.net.enc_hidden = val.get<int>();
    else if (key == "dec_hidden") c.net.dec_hidden = val.get<int>();
    else if (key == "oracle_hidden") c.net.oracle_hidden = val.get<int>();
    else if (key == "conv_filters") c.net.conv_filters = val.get<int>();
    else if (key == "conv_size") c.net.conv_size = val.get<int>();
    else if (key == "conv_stride") c.net.conv_stride = val.get<int>();
    else throw std::invalid_argument("unknown config key: " + key);
  }
  if (c.epochs < 1 || c.batch_size < 1 || !(c.learning_rate > 0))
    throw std::invalid_argument("config: epochs, batch_size and learning_rate must be positive");
}

inline nlohmann::json training_config_json(const TrainingConfig& c) {
  nlohmann::json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["seed"] = c.seed;
  j["clip_norm"] = c.clip_norm;
  j["teacher_forcing"] = c.teacher_forcing;
  j["beta"] = c.weights.beta;
  j["lambda_f"] = c.weights.lambda_f;
  j["lambda_a"] = c.weights.lambda_a;
  j["lambda_d"] = c.weights.lambda_d;
  j["delta"] = c.weights.delta;
  j["k"] = c.weights.k;
  j["eta_floor"] = c.weights.eta_floor;
  j["nz"] = c.net.latent_dim;
  j["enc_hidden"] = c.net.enc_hidden;
  j["dec_hidden"] = c.net.dec_hidden;
  j["oracle_hidden"] = c.net.oracle_hidden;
  j["conv_filters"] = c.net.conv_filters;
  j["conv_size"] = c.net.conv_size;
  j["conv_stride"] = c.net.conv_stride;
  j["L"] = c.net.num_classes;
  j["Nd"] = c.net.channels;
  j["T"] = c.net.seq_len;
  return j;
}

inline std::string training_config_fingerprint(const TrainingConfig& c) {
  return hex64(fnv1a(training_config_json(c).dump()));
}

struct TrainingLog {
  std::vector<LossBreakdown> epochs;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  std::string config_fingerprint;
};

struct TrainResult {
  Checkpoint checkpoint;
  TrainingLog log;
};

// ---------------------------------------------------------------------------
// optimizer

class AdamOptimizer {
 public:
  explicit AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999,
                         double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// Apply one update. `grads` must align with `params`; clip_norm > 0 scales
  /// the whole gradient so its global norm stays below the bound.
  void step(const std::vector<MatrixXd*>& params, std::vector<MatrixXd>& grads,
            double clip_norm) {
    if (params.size() != grads.size())
      throw std::invalid_argument("AdamOptimizer: gradient count mismatch");
    if (m_.empty()) {
      for (auto* p : params) {
        m_.emplace_back(MatrixXd::Zero(p->rows(), p->cols()));
        v_.emplace_back(MatrixXd::Zero(p->rows(), p->cols()));
      }
    }
    if (clip_norm > 0) {
      double sq = 0.0;
      for (const auto& g : grads) sq += g.squaredNorm();
      const double norm = std::sqrt(sq);
      if (norm > clip_norm) {
        const double s = clip_norm / norm;
        for (auto& g : grads) g *= s;
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i]->size() == 0) continue;
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseProduct(grads[i]);
      params[i]->array() -=
          lr_ * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps_);
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<MatrixXd> m_, v_;
};

// ---------------------------------------------------------------------------
// shared helpers

namespace detail {

inline MatrixXd gaussian_matrix(Rng& rng, int rows, int cols) {
  MatrixXd m(rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) m(r, c) = rng.gaussian();
  return m;
}

inline std::vector<int> uniform_labels(Rng& rng, int n, int num_classes) {
  std::vector<int> out(n);
  for (auto& y : out) y = 1 + static_cast<int>(rng.uniform_index(num_classes));
  return out;
}

inline std::vector<std::vector<int>> epoch_batches(std::size_t n, int batch_size, Rng& rng) {
  std::vector<int> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);
  std::vector<std::vector<int>> batches;
  for (std::size_t at = 0; at < n; at += batch_size) {
    const std::size_t end = std::min(n, at + batch_size);
    batches.emplace_back(order.begin() + at, order.begin() + end);
  }
  return batches;
}

inline std::vector<const SequenceSample*> gather(const std::vector<SequenceSample>& pool,
                                                 const std::vector<int>& idx) {
  std::vector<const SequenceSample*> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(&pool[i]);
  return out;
}

inline std::vector<int> labels_of(const std::vector<const SequenceSample*>& batch) {
  std::vector<int> out;
  out.reserve(batch.size());
  for (const auto* s : batch) out.push_back(s->label);
  return out;
}

inline std::vector<int> to_zero_based(const std::vector<int>& labels) {
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = labels[i] - 1;
  return out;
}

inline std::vector<ad::Var> leaf_steps(ad::TapeBackend& tb, const std::vector<MatrixXd>& steps) {
  std::vector<ad::Var> out;
  out.reserve(steps.size());
  for (const auto& s : steps) out.push_back(tb.leaf(s));
  return out;
}

inline std::vector<MatrixXd> read_grads(const ad::Tape& tape, const std::vector<ad::Var>& vars) {
  std::vector<MatrixXd> out;
  out.reserve(vars.size());
  for (auto v : vars) out.push_back(tape.grad(v));
  return out;
}

/// Eager generation of a fake batch for the chosen generator kind; returns
/// per-step matrices (Nd x B).
inline std::vector<MatrixXd> generate_steps(const DecoderParams& dec, const NetConfig& cfg,
                                            ModelKind kind, const MatrixXd& z,
                                            const std::vector<int>& labels, int t_out) {
  ad::EagerBackend b;
  auto bound = bind_params(b, dec);
  if (kind == ModelKind::rcgan) return rcgan_forward(b, bound, cfg, z, labels, t_out);
  DecodeOptions opt;
  opt.t_out = t_out;
  return decoder_forward(b, bound, cfg, z, labels, opt).outputs;
}

inline void check_finite(double v, int epoch, const char* what) {
  if (!std::isfinite(v))
    throw std::runtime_error("training diverged: non-finite " + std::string(what) +
                             " at epoch " + std::to_string(epoch));
}

inline NetConfig resolve_net_config(const DatasetBundle& bundle, NetConfig net) {
  if (bundle.train.empty()) throw std::invalid_argument("training requires a train split");
  net.num_classes = bundle.num_classes();
  net.channels = bundle.channels();
  net.seq_len = bundle.seq_len();
  return net;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// batched eager classification

inline Eigen::MatrixXd oracle_probs(const OracleParams& oracle, const NetConfig& cfg,
                                    const std::vector<const SequenceSample*>& samples) {
  Eigen::MatrixXd probs(cfg.num_classes, static_cast<Eigen::Index>(samples.size()));
  constexpr std::size_t kChunk = 512;
  ad::EagerBackend b;
  auto bound = bind_params(b, oracle);
  for (std::size_t at = 0; at < samples.size(); at += kChunk) {
    const std::size_t end = std::min(samples.size(), at + kChunk);
    std::vector<const SequenceSample*> chunk(samples.begin() + at, samples.begin() + end);
    auto logits = oracle_forward(b, bound, cfg, batch_steps(chunk));
    probs.middleCols(static_cast<Eigen::Index>(at), static_cast<Eigen::Index>(end - at)) =
        ad::Tape::softmax_cols(logits);
  }
  return probs;
}

inline double oracle_accuracy(const OracleParams& oracle, const NetConfig& cfg,
                              const std::vector<SequenceSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("oracle_accuracy: empty sample list");
  std::vector<const SequenceSample*> ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(&s);
  const auto probs = oracle_probs(oracle, cfg, ptrs);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    hits += (argmax_label(probs.col(static_cast<Eigen::Index>(i))) == samples[i].label);
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

// ---------------------------------------------------------------------------
// PhysioGAN training (alternating discriminator and encoder/decoder updates)

inline TrainResult train_physiogan(const DatasetBundle& bundle, const TrainingConfig& cfg_in) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainingConfig cfg = cfg_in;
  cfg.net = detail::resolve_net_config(bundle, cfg.net);
  const NetConfig& net = cfg.net;
  const LossWeights& w = cfg.weights;

  Rng rng(cfg.seed);
  Checkpoint ckpt;
  ckpt.kind = ModelKind::physiogan;
  ckpt.net = net;
  ckpt.data = dataset_meta(bundle);
  allocate_networks(ckpt);
  init_params(ckpt.enc, rng);
  init_params(ckpt.dec, rng);
  init_params(ckpt.disc, rng);

  auto enc_tensors = collect_tensors(ckpt.enc);
  auto dec_tensors = collect_tensors(ckpt.dec);
  std::vector<MatrixXd*> gen_tensors = enc_tensors;
  gen_tensors.insert(gen_tensors.end(), dec_tensors.begin(), dec_tensors.end());
  auto disc_tensors = collect_tensors(ckpt.disc);
  AdamOptimizer adam_gen(cfg.learning_rate);
  AdamOptimizer adam_disc(cfg.learning_rate);

  TrainingLog log;
  log.seed = cfg.seed;
  log.config_fingerprint = training_config_fingerprint(cfg);

  ad::Tape tape;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double eta = anneal_coefficient(epoch, w.k, w.eta_floor);
    LossBreakdown acc;
    double seen = 0.0;
    for (const auto& batch_idx : detail::epoch_batches(bundle.train.size(), cfg.batch_size, rng)) {
      const auto batch = detail::gather(bundle.train, batch_idx);
      const int bsz = static_cast<int>(batch.size());
      const auto real_steps = batch_steps(batch);
      const auto y_real = detail::labels_of(batch);

      // --- discriminator step (Eq. 16): real batch vs a fresh fake batch ---
      const MatrixXd z_fake = detail::gaussian_matrix(rng, net.latent_dim, bsz);
      const auto y_fake = detail::uniform_labels(rng, bsz, net.num_classes);
      const auto fake_steps = detail::generate_steps(ckpt.dec, net, ModelKind::physiogan,
                                                     z_fake, y_fake, net.seq_len);
      double disc_val;
      {
        tape.reset();
        ad::TapeBackend tb(tape);
        std::vector<ad::Var> disc_vars;
        auto disc_b = bind_params(tb, ckpt.disc, &disc_vars);
        auto real_fwd = discriminator_forward(tb, disc_b, net, detail::leaf_steps(tb, real_steps));
        auto fake_fwd = discriminator_forward(tb, disc_b, net, detail::leaf_steps(tb, fake_steps));
        auto ce_real = tb.cross_entropy_mean(real_fwd.logits, detail::to_zero_based(y_real));
        auto ce_fake = tb.cross_entropy_mean(fake_fwd.logits,
                                             std::vector<int>(bsz, net.num_classes));
        auto j_disc = tb.add(ce_real, ce_fake);
        disc_val = tape.value(j_disc)(0, 0);
        detail::check_finite(disc_val, epoch, "discriminator loss");
        tape.backward(j_disc);
        auto grads = detail::read_grads(tape, disc_vars);
        adam_disc.step(disc_tensors, grads, 0.0);
      }

      // --- generator step (Eq. 23) ---
      tape.reset();
      ad::TapeBackend tb(tape);
      std::vector<ad::Var> gen_vars;
      auto enc_b = bind_params(tb, ckpt.enc, &gen_vars);
      auto dec_b = bind_params(tb, ckpt.dec, &gen_vars);
      auto disc_frozen = bind_params(tb, ckpt.disc);

      const auto x_leaves = detail::leaf_steps(tb, real_steps);
      auto enc_out = encoder_forward(tb, enc_b, net, x_leaves);
      auto eps = tb.leaf(detail::gaussian_matrix(rng, net.latent_dim, bsz));
      auto z = reparameterize(tb, enc_out.mu, enc_out.logvar, eps);
      DecodeOptions opt;
      opt.t_out = net.seq_len;
      if (cfg.teacher_forcing) opt.teacher_steps = &real_steps;
      auto xbar = decoder_forward(tb, dec_b, net, z, y_real, opt);

      auto recon = recon_loss_graph(tb, x_leaves, xbar.outputs);
      auto post = posterior_loss_graph(tb, enc_out.mu, enc_out.logvar, w.delta);
      // psi(x) carries no gradient for the update, so it is computed eagerly
      ad::EagerBackend eager;
      auto psi_real = tb.leaf(
          discriminator_forward(eager, bind_params(eager, ckpt.disc), net, real_steps).features);
      auto psi_fake = discriminator_forward(tb, disc_frozen, net, xbar.outputs).features;
      auto feats = feature_match_loss_graph(tb, psi_real, psi_fake);

      // fresh latent batch for the adversarial and diversity terms
      auto z2 = tb.leaf(detail::gaussian_matrix(rng, net.latent_dim, bsz));
      const auto y2 = detail::uniform_labels(rng, bsz, net.num_classes);
      DecodeOptions opt2;
      opt2.t_out = net.seq_len;
      auto x_gen = decoder_forward(tb, dec_b, net, z2, y2, opt2);
      auto gen_fwd = discriminator_forward(tb, disc_frozen, net, x_gen.outputs);
      auto adv = tb.cross_entropy_mean(gen_fwd.logits, detail::to_zero_based(y2));
      auto z2_rec = encoder_forward(tb, enc_b, net, x_gen.outputs).mu;
      auto diverse = diversity_loss_graph(tb, z2, z2_rec);

      auto vae_part = tb.add(tb.scale(post, w.beta), tb.scale(feats, w.lambda_f));
      auto gan_part = tb.add(tb.scale(adv, w.lambda_a), tb.scale(diverse, w.lambda_d));
      auto total = tb.add(tb.scale(recon, eta),
                          tb.scale(tb.add(vae_part, gan_part), 1.0 - eta));
      const double total_val = tape.value(total)(0, 0);
      detail::check_finite(total_val, epoch, "generator loss");
      tape.backward(total);
      auto grads = detail::read_grads(tape, gen_vars);
      adam_gen.step(gen_tensors, grads, cfg.clip_norm);

      const double bw = static_cast<double>(bsz);
      acc.recon += tape.value(recon)(0, 0) * bw;
      acc.posterior += tape.value(post)(0, 0) * bw;
      acc.feats += tape.value(feats)(0, 0) * bw;
      acc.adv += tape.value(adv)(0, 0) * bw;
      acc.diverse += tape.value(diverse)(0, 0) * bw;
      acc.disc += disc_val * bw;
      seen += bw;
    }
    acc.eta = eta;
    acc.recon /= seen;
    acc.posterior /= seen;
    acc.feats /= seen;
    acc.adv /= seen;
    acc.diverse /= seen;
    acc.disc /= seen;
    acc.total = total_generator_loss(acc, w);
    detail::check_finite(acc.total, epoch, "epoch total");
    log.epochs.push_back(acc);
  }
  tape.reset();
  log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(ckpt), std::move(log)};
}

// ---------------------------------------------------------------------------
// baseline training loops

inline TrainResult train_baseline(ModelKind kind, const DatasetBundle& bundle,
                                  const TrainingConfig& cfg_in) {
  if (kind == ModelKind::physiogan) return train_physiogan(bundle, cfg_in);
  if (kind == ModelKind::oracle)
    throw std::invalid_argument("train_baseline: oracle has a dedicated trainer");
  const auto t0 = std::chrono::steady_clock::now();
  TrainingConfig cfg = cfg_in;
  cfg.net = detail::resolve_net_config(bundle, cfg.net);
  const NetConfig& net = cfg.net;
  const LossWeights& w = cfg.weights;

  Rng rng(cfg.seed);
  Checkpoint ckpt;
  ckpt.kind = kind;
  ckpt.net = net;
  ckpt.data = dataset_meta(bundle);
  allocate_networks(ckpt);
  if (ckpt.has_encoder()) init_params(ckpt.enc, rng);
  init_params(ckpt.dec, rng);
  if (ckpt.has_discriminator()) init_params(ckpt.disc, rng);

  auto dec_tensors = collect_tensors(ckpt.dec);
  std::vector<MatrixXd*> gen_tensors;
  if (ckpt.has_encoder()) {
    gen_tensors = collect_tensors(ckpt.enc);
    gen_tensors.insert(gen_tensors.end(), dec_tensors.begin(), dec_tensors.end());
  } else {
    gen_tensors = dec_tensors;
  }
  auto disc_tensors = ckpt.has_discriminator() ? collect_tensors(ckpt.disc)
                                               : std::vector<MatrixXd*>{};
  AdamOptimizer adam_gen(cfg.learning_rate);
  AdamOptimizer adam_disc(cfg.learning_rate);

  TrainingLog log;
  log.seed = cfg.seed;
  log.config_fingerprint = training_config_fingerprint(cfg);

  ad::Tape tape;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    LossBreakdown acc;
    double seen = 0.0;
    for (const auto& batch_idx : detail::epoch_batches(bundle.train.size(), cfg.batch_size, rng)) {
      const auto batch = detail::gather(bundle.train, batch_idx);
      const int bsz = static_cast<int>(batch.size());
      const auto real_steps = batch_steps(batch);
      const auto y_real = detail::labels_of(batch);

      if (kind == ModelKind::crnn) {
        // maximum-likelihood next-step prediction with teacher-forced inputs
        tape.reset();
        ad::TapeBackend tb(tape);
        std::vector<ad::Var> vars;
        auto dec_b = bind_params(tb, ckpt.dec, &vars);
        auto z = tb.leaf(detail::gaussian_matrix(rng, net.latent_dim, bsz));
        DecodeOptions opt;
        opt.t_out = net.seq_len;
        opt.teacher_steps = &real_steps;
        auto pred = decoder_forward(tb, dec_b, net, z, y_real, opt);
        auto recon = recon_loss_graph(tb, detail::leaf_steps(tb, real_steps), pred.outputs);
        const double val = tape.value(recon)(0, 0);
        detail::check_finite(val, epoch, "crnn loss");
        tape.backward(recon);
        auto grads = detail::read_grads(tape, vars);
        adam_gen.step(gen_tensors, grads, cfg.clip_norm);
        acc.recon += val * bsz;
      } else if (kind == ModelKind::cvrae) {
        // vanilla conditional VAE objective: reconstruction plus posterior
        tape.reset();
        ad::TapeBackend tb(tape);
        std::vector<ad::Var> vars;
        auto enc_b = bind_params(tb, ckpt.enc, &vars);
        auto dec_b = bind_params(tb, ckpt.dec, &vars);
        const auto x_leaves = detail::leaf_steps(tb, real_steps);
        auto enc_out = encoder_forward(tb, enc_b, net, x_leaves);
        auto eps = tb.leaf(detail::gaussian_matrix(rng, net.latent_dim, bsz));
        auto z = reparameterize(tb, enc_out.mu, enc_out.logvar, eps);
        DecodeOptions opt;
        opt.t_out = net.seq_len;
        if (cfg.teacher_forcing) opt.teacher_steps = &real_steps;
        auto xbar = decoder_forward(tb, dec_b, net, z, y_real, opt);
        auto recon = recon_loss_graph(tb, x_leaves, xbar.outputs);
        auto post = posterior_loss_graph(tb, enc_out.mu, enc_out.logvar, w.delta);
        auto total = tb.add(recon, post);
        const double val = tape.value(total)(0, 0);
        detail::check_finite(val, epoch, "cvrae loss");
        tape.backward(total);
        auto grads = detail::read_grads(tape, vars);
        adam_gen.step(gen_tensors, grads, cfg.clip_norm);
        acc.recon += tape.value(recon)(0, 0) * bsz;
        acc.posterior += tape.value(post)(0, 0) * bsz;
      } else {
        // rcgan / rcgan_ar: discriminator step on Eq. 16, generator on Eq. 21
        const MatrixXd z_fake = detail::gaussian_matrix(rng, net.latent_dim, bsz);
        const auto y_fake = detail::uniform_labels(rng, bsz, net.num_classes);
        const auto fake_steps =
            detail::generate_steps(ckpt.dec, net, kind, z_fake, y_fake, net.seq_len);
        {
          tape.reset();
          ad::TapeBackend tb(tape);
          std::vector<ad::Var> disc_vars;
          auto disc_b = bind_params(tb, ckpt.disc, &disc_vars);
          auto real_fwd =
              discriminator_forward(tb, disc_b, net, detail::leaf_steps(tb, real_steps));
          auto fake_fwd =
              discriminator_forward(tb, disc_b, net, detail::leaf_steps(tb, fake_steps));
          auto j_disc = tb.add(
              tb.cross_entropy_mean(real_fwd.logits, detail::to_zero_based(y_real)),
              tb.cross_entropy_mean(fake_fwd.logits, std::vector<int>(bsz, net.num_classes)));
          const double val = tape.value(j_disc)(0, 0);
          detail::check_finite(val, epoch, "discriminator loss");
          tape.backward(j_disc);
          auto grads = detail::read_grads(tape, disc_vars);
          adam_disc.step(disc_tensors, grads, 0.0);
          acc.disc += val * bsz;
        }
        tape.reset();
        ad::TapeBackend tb(tape);
        std::vector<ad::Var> vars;
        auto dec_b = bind_params(tb, ckpt.dec, &vars);
        auto disc_frozen = bind_params(tb, ckpt.disc);
        auto z2 = tb.leaf(detail::gaussian_matrix(rng, net.latent_dim, bsz));
        const auto y2 = detail::uniform_labels(rng, bsz, net.num_classes);
        std::vector<ad::Var> gen_steps;
        if (kind == ModelKind::rcgan) {
          gen_steps = rcgan_forward(tb, dec_b, net, z2, y2, net.seq_len);
        } else {
          DecodeOptions opt;
          opt.t_out = net.seq_len;
          gen_steps = decoder_forward(tb, dec_b, net, z2, y2, opt).outputs;
        }
        auto gen_fwd = discriminator_forward(tb, disc_frozen, net, gen_steps);
        auto adv = tb.cross_entropy_mean(gen_fwd.logits, detail::to_zero_based(y2));
        const double val = tape.value(adv)(0, 0);
        detail::check_finite(val, epoch, "generator loss");
        tape.backward(adv);
        auto grads = detail::read_grads(tape, vars);
        adam_gen.step(gen_tensors, grads, cfg.clip_norm);
        acc.adv += val * bsz;
      }
      seen += static_cast<double>(bsz);
    }
    acc.recon /= seen;
    acc.posterior /= seen;
    acc.adv /= seen;
    acc.disc /= seen;
    if (kind == ModelKind::crnn)
      acc.total = acc.recon;
    else if (kind == ModelKind::cvrae)
      acc.total = acc.recon + acc.posterior;
    else
      acc.total = acc.adv;
    detail::check_finite(acc.total, epoch, "epoch total");
    log.epochs.push_back(acc);
  }
  tape.reset();
  log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(ckpt), std::move(log)};
}

// ---------------------------------------------------------------------------
// sequence classifiers (oracle and the TSTR recurrent model)

namespace detail {

struct ClassifierFit {
  OracleParams params;
  double holdout_accuracy = 0.0;
  TrainingLog log;
};

/// Cross-entropy training with a stratified 10% holdout; the best holdout
/// snapshot is restored at the end and training stops early once the holdout
/// accuracy has not improved for a while.
inline ClassifierFit fit_sequence_classifier(const std::vector<SequenceSample>& samples,
                                             const TrainingConfig& cfg, const NetConfig& net) {
  auto [fit_set, holdout] = split(samples, 0.9, cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  if (holdout.empty()) {
    holdout = fit_set;  // degenerate fixtures; holdout equals train
  }
  Rng rng(cfg.seed);
  ClassifierFit out;
  out.params = make_oracle(net);
  init_params(out.params, rng);
  auto tensors = collect_tensors(out.params);
  AdamOptimizer adam(cfg.learning_rate);
  out.log.seed = cfg.seed;
  out.log.config_fingerprint = training_config_fingerprint(cfg);

  OracleParams best = out.params;
  double best_acc = -1.0;
  int since_best = 0;
  const int patience = std::max(50, cfg.epochs / 4);

  ad::Tape tape;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    LossBreakdown acc;
    double seen = 0.0;
    for (const auto& batch_idx : epoch_batches(fit_set.size(), cfg.batch_size, rng)) {
      const auto batch = gather(fit_set, batch_idx);
      tape.reset();
      ad::TapeBackend tb(tape);
      std::vector<ad::Var> vars;
      auto bound = bind_params(tb, out.params, &vars);
      auto logits = oracle_forward(tb, bound, net, leaf_steps(tb, batch_steps(batch)));
      auto ce = tb.cross_entropy_mean(logits, to_zero_based(labels_of(batch)));
      const double val = tape.value(ce)(0, 0);
      check_finite(val, epoch, "classifier loss");
      tape.backward(ce);
      auto grads = read_grads(tape, vars);
      adam.step(tensors, grads, cfg.clip_norm);
      acc.total += val * static_cast<double>(batch.size());
      seen += static_cast<double>(batch.size());
    }
    acc.total /= seen;
    acc.recon = acc.total;  // single-objective run; total mirrors the CE term
    out.log.epochs.push_back(acc);

    const double holdout_acc = oracle_accuracy(out.params, net, holdout);
    if (holdout_acc > best_acc) {
      best_acc = holdout_acc;
      best = out.params;
      since_best = 0;
    } else if (++since_best >= patience) {
      break;
    }
  }
  tape.reset();
  out.params = best;
  out.holdout_accuracy = best_acc;
  return out;
}

}  // namespace detail

struct OracleTrainResult {
  Checkpoint checkpoint;
  TrainingLog log;
  double holdout_accuracy = 0.0;
  double test_accuracy = 0.0;
  /// False when the fixture failed to clear chance + 10 points on the test
  /// split; reported, not fatal.
  bool converged = true;
};

inline OracleTrainResult train_oracle(const DatasetBundle& bundle, const TrainingConfig& cfg_in) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainingConfig cfg = cfg_in;
  cfg.net = detail::resolve_net_config(bundle, cfg.net);

  auto fit = detail::fit_sequence_classifier(bundle.train, cfg, cfg.net);
  OracleTrainResult out;
  out.checkpoint.kind = ModelKind::oracle;
  out.checkpoint.net = cfg.net;
  out.checkpoint.data = dataset_meta(bundle);
  out.checkpoint.oracle = std::move(fit.params);
  out.log = std::move(fit.log);
  out.log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.holdout_accuracy = fit.holdout_accuracy;
  out.test_accuracy = bundle.test.empty()
                          ? fit.holdout_accuracy
                          : oracle_accuracy(out.checkpoint.oracle, cfg.net, bundle.test);
  out.converged = out.test_accuracy >= 1.0 / bundle.num_classes() + 0.10;
  return out;
}

// ---------------------------------------------------------------------------
// margin classifier over engineered features

struct LinearClassifier {
  MatrixXd weights;        // L x F
  MatrixXd bias;           // L x 1
  Eigen::VectorXd f_mean;  // feature standardization, fit on training data
  Eigen::VectorXd f_std;
};

inline Eigen::VectorXd margin_scores(const LinearClassifier& clf, const Eigen::MatrixXd& values) {
  Eigen::VectorXd f = engineered_features(values);
  f = ((f - clf.f_mean).array() / clf.f_std.array()).matrix();
  return clf.weights * f + clf.bias.col(0);
}

inline int margin_predict(const LinearClassifier& clf, const Eigen::MatrixXd& values) {
  return argmax_label(margin_scores(clf, values));
}

/// Multiclass hinge objective, full-batch Adam. Deterministic: weights start
/// at zero and the data order is fixed.
inline LinearClassifier train_margin_classifier(const std::vector<SequenceSample>& train,
                                                int num_classes, int iterations = 400,
                                                double lr = 0.05, double l2 = 1e-3) {
  const Eigen::MatrixXd raw = feature_matrix(train);
  LinearClassifier clf;
  clf.f_mean = raw.rowwise().mean();
  clf.f_std = ((raw.colwise() - clf.f_mean).array().square().rowwise().mean()).sqrt();
  for (int i = 0; i < clf.f_std.size(); ++i)
    if (!(clf.f_std(i) > 1e-9)) clf.f_std(i) = 1.0;
  Eigen::MatrixXd feats = (raw.colwise() - clf.f_mean).array().colwise() / clf.f_std.array();

  const int n = static_cast<int>(train.size());
  const int f_dim = static_cast<int>(feats.rows());
  clf.weights = MatrixXd::Zero(num_classes, f_dim);
  clf.bias = MatrixXd::Zero(num_classes, 1);
  AdamOptimizer adam(lr);
  std::vector<MatrixXd*> tensors{&clf.weights, &clf.bias};

  for (int it = 0; it < iterations; ++it) {
    const Eigen::MatrixXd scores = (clf.weights * feats).colwise() + clf.bias.col(0).eval();
    MatrixXd dw = l2 * clf.weights;
    MatrixXd db = MatrixXd::Zero(num_classes, 1);
    for (int i = 0; i < n; ++i) {
      const int y = train[i].label - 1;
      int rival = -1;
      for (int c = 0; c < num_classes; ++c) {
        if (c == y) continue;
        if (rival < 0 || scores(c, i) > scores(rival, i)) rival = c;
      }
      if (rival < 0) continue;  // single-class degenerate case
      if (1.0 + scores(rival, i) - scores(y, i) > 0.0) {
        dw.row(rival) += feats.col(i).transpose() / n;
        dw.row(y) -= feats.col(i).transpose() / n;
        db(rival, 0) += 1.0 / n;
        db(y, 0) -= 1.0 / n;
      }
    }
    std::vector<MatrixXd> grads{dw, db};
    adam.step(tensors, grads, 0.0);
  }
  return clf;
}

// ---------------------------------------------------------------------------
// TSTR: train on synthetic, test on real

struct TstrReport {
  double rnn_accuracy = 0.0;
  double feat_accuracy = 0.0;
  std::optional<double> rnn_auc;   // binary tasks only; positive class is 2
  std::optional<double> feat_auc;
};

inline TstrReport train_tstr_classifiers(const std::vector<SequenceSample>& synthetic_train,
                                         const std::vector<SequenceSample>& real_test,
                                         int num_classes, const TrainingConfig& cfg_in) {
  if (synthetic_train.empty() || real_test.empty())
    throw std::invalid_argument("train_tstr_classifiers: empty inputs");
  std::vector<bool> present(num_classes + 1, false);
  for (const auto& s : synthetic_train) present[s.label] = true;
  for (int c = 1; c <= num_classes; ++c)
    if (!present[c])
      throw std::invalid_argument("train_tstr_classifiers: class " + std::to_string(c) +
                                  " missing from the synthetic set");

  TrainingConfig cfg = cfg_in;
  cfg.net.num_classes = num_classes;
  cfg.net.channels = static_cast<int>(synthetic_train[0].values.cols());
  cfg.net.seq_len = static_cast<int>(synthetic_train[0].values.rows());

  TstrReport rep;
  auto fit = detail::fit_sequence_classifier(synthetic_train, cfg, cfg.net);
  std::vector<const SequenceSample*> test_ptrs;
  for (const auto& s : real_test) test_ptrs.push_back(&s);
  const auto probs = oracle_probs(fit.params, cfg.net, test_ptrs);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < real_test.size(); ++i)
    hits += (argmax_label(probs.col(static_cast<Eigen::Index>(i))) == real_test[i].label);
  rep.rnn_accuracy = static_cast<double>(hits) / static_cast<double>(real_test.size());

  auto clf = train_margin_classifier(synthetic_train, num_classes);
  std::size_t feat_hits = 0;
  std::vector<double> margin_pos;
  for (const auto& s : real_test) {
    const auto scores = margin_scores(clf, s.values);
    feat_hits += (argmax_label(scores) == s.label);
    if (num_classes == 2) margin_pos.push_back(scores(1) - scores(0));
  }
  rep.feat_accuracy = static_cast<double>(feat_hits) / static_cast<double>(real_test.size());

  if (num_classes == 2) {
    std::vector<double> rnn_scores;
    std::vector<int> bin_labels;
    for (std::size_t i = 0; i < real_test.size(); ++i) {
      rnn_scores.push_back(probs(1, static_cast<Eigen::Index>(i)));
      bin_labels.push_back(real_test[i].label == 2 ? 1 : 0);
    }
    rep.rnn_auc = auc_score(rnn_scores, bin_labels);
    rep.feat_auc = auc_score(margin_pos, bin_labels);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// synthetic-set generation from a checkpoint

enum class LabelSampling { uniform, match, stratified };

inline LabelSampling label_sampling_from_string(const std::string& s) {
  if (s == "uniform") return LabelSampling::uniform;
  if (s == "match") return LabelSampling::match;
  if (s == "stratified") return LabelSampling::stratified;
  throw std::invalid_argument("unknown label sampling mode: " + s);
}

inline std::vector<int> sample_condition_labels(const DatasetMeta& meta, int n,
                                                LabelSampling mode, Rng& rng) {
  const int num_classes = static_cast<int>(meta.classes.size());
  std::vector<int> labels;
  labels.reserve(n);
  if (mode == LabelSampling::uniform) {
    for (int i = 0; i < n; ++i)
      labels.push_back(1 + static_cast<int>(rng.uniform_index(num_classes)));
  } else if (mode == LabelSampling::match) {
    double total = 0.0;
    for (int c : meta.class_counts) total += c;
    if (total <= 0) throw std::invalid_argument("sample_condition_labels: no class counts");
    for (int i = 0; i < n; ++i) {
      double u = rng.uniform() * total;
      int label = num_classes;
      for (int c = 0; c < num_classes; ++c) {
        u -= meta.class_counts[c];
        if (u < 0) {
          label = c + 1;
          break;
        }
      }
      labels.push_back(label);
    }
  } else {
    for (int i = 0; i < n; ++i) labels.push_back(1 + i % num_classes);
    rng.shuffle(labels);
  }
  return labels;
}

/// Draw latent codes from the prior and decode a labeled synthetic set.
/// RCGAN checkpoints cannot run past their training length.
inline SyntheticSet generate_synthetic(const Checkpoint& ckpt, int n, int t_out,
                                       LabelSampling mode, std::uint64_t seed) {
  if (!ckpt.has_decoder())
    throw std::invalid_argument("generate_synthetic: checkpoint has no generator");
  if (n < 1 || t_out < 1) throw std::invalid_argument("generate_synthetic: n and length must be >= 1");
  if (ckpt.kind == ModelKind::rcgan && t_out > ckpt.net.seq_len)
    throw std::invalid_argument(
        "rcgan has no autoregressive feedback and cannot generate sequences longer than its "
        "training length (" +
        std::to_string(ckpt.net.seq_len) + ")");
  Rng rng(seed);
  SyntheticSet out;
  out.source = std::string(to_string(ckpt.kind)) + ":" + ckpt.data.fingerprint;
  const auto labels = sample_condition_labels(ckpt.data, n, mode, rng);
  constexpr int kChunk = 256;
  for (int at = 0; at < n; at += kChunk) {
    const int bsz = std::min(kChunk, n - at);
    const MatrixXd z = detail::gaussian_matrix(rng, ckpt.net.latent_dim, bsz);
    const std::vector<int> chunk_labels(labels.begin() + at, labels.begin() + at + bsz);
    const auto steps =
        detail::generate_steps(ckpt.dec, ckpt.net, ckpt.kind, z, chunk_labels, t_out);
    for (int i = 0; i < bsz; ++i) {
      SequenceSample s;
      s.values = sample_from_steps(steps, i);
      s.label = chunk_labels[i];
      out.samples.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace physio
