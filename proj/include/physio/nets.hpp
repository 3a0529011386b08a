#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "physio/autodiff.hpp"
#include "physio/dataset.hpp"
#include "physio/rng.hpp"

namespace physio {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct NetConfig {
  int latent_dim = 32;     // Nz
  int enc_hidden = 128;    // per direction
  int dec_hidden = 128;    // per layer, three layers
  int oracle_hidden = 64;
  int conv_filters = 32;
  int conv_size = 3;
  int conv_stride = 3;
  int num_classes = 0;  // L, from dataset
  int channels = 0;     // Nd, from dataset
  int seq_len = 0;      // T, from dataset

  bool operator==(const NetConfig&) const = default;
};

enum class ModelKind { physiogan, crnn, cvrae, rcgan, rcgan_ar, oracle };

inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::physiogan: return "physiogan";
    case ModelKind::crnn: return "crnn";
    case ModelKind::cvrae: return "cvrae";
    case ModelKind::rcgan: return "rcgan";
    case ModelKind::rcgan_ar: return "rcgan_ar";
    case ModelKind::oracle: return "oracle";
  }
  return "?";
}

inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "physiogan") return ModelKind::physiogan;
  if (s == "crnn") return ModelKind::crnn;
  if (s == "cvrae") return ModelKind::cvrae;
  if (s == "rcgan") return ModelKind::rcgan;
  if (s == "rcgan_ar") return ModelKind::rcgan_ar;
  if (s == "oracle") return ModelKind::oracle;
  throw std::invalid_argument("unknown model kind: " + s);
}

// ---------------------------------------------------------------------------
// parameter containers (templated on storage so the same struct can hold
// either raw matrices or tape handles)

template <class M>
struct GruCellT {
  M gate_w, gate_u, gate_b;  // reset+update gates, stacked (2h rows)
  M cand_w, cand_u, cand_b;  // candidate state (h rows)
};

template <class M>
struct EncoderT {
  GruCellT<M> fwd, bwd;
  M mu_w, mu_b;
  M logvar_w, logvar_b;
};

template <class M>
struct DecoderT {
  M init_w, init_b;  // latent -> stacked initial states (3h)
  M ctx_w, ctx_b;    // [z; onehot(y)] -> context (empty for rcgan)
  GruCellT<M> l1, l2, l3;
  M out_w, out_b;
};

template <class M>
struct DiscriminatorT {
  M conv1_w, conv1_b;
  M conv2_w, conv2_b;
  M conv3_w, conv3_b;
  M out_w, out_b;
};

template <class M>
struct OracleT {
  GruCellT<M> cell;
  M out_w, out_b;
};

using EncoderParams = EncoderT<MatrixXd>;
using DecoderParams = DecoderT<MatrixXd>;
using DiscriminatorParams = DiscriminatorT<MatrixXd>;
using OracleParams = OracleT<MatrixXd>;

template <class M, class F>
void visit_params(GruCellT<M>& p, F&& f) {
  f("gate_w", p.gate_w);
  f("gate_u", p.gate_u);
  f("gate_b", p.gate_b);
  f("cand_w", p.cand_w);
  f("cand_u", p.cand_u);
  f("cand_b", p.cand_b);
}

template <class M, class F>
void visit_params(EncoderT<M>& p, F&& f) {
  visit_params(p.fwd, [&](const std::string& n, M& m) { f("fwd." + n, m); });
  visit_params(p.bwd, [&](const std::string& n, M& m) { f("bwd." + n, m); });
  f("mu_w", p.mu_w);
  f("mu_b", p.mu_b);
  f("logvar_w", p.logvar_w);
  f("logvar_b", p.logvar_b);
}

template <class M, class F>
void visit_params(DecoderT<M>& p, F&& f) {
  f("init_w", p.init_w);
  f("init_b", p.init_b);
  f("ctx_w", p.ctx_w);
  f("ctx_b", p.ctx_b);
  visit_params(p.l1, [&](const std::string& n, M& m) { f("l1." + n, m); });
  visit_params(p.l2, [&](const std::string& n, M& m) { f("l2." + n, m); });
  visit_params(p.l3, [&](const std::string& n, M& m) { f("l3." + n, m); });
  f("out_w", p.out_w);
  f("out_b", p.out_b);
}

template <class M, class F>
void visit_params(DiscriminatorT<M>& p, F&& f) {
  f("conv1_w", p.conv1_w);
  f("conv1_b", p.conv1_b);
  f("conv2_w", p.conv2_w);
  f("conv2_b", p.conv2_b);
  f("conv3_w", p.conv3_w);
  f("conv3_b", p.conv3_b);
  f("out_w", p.out_w);
  f("out_b", p.out_b);
}

template <class M, class F>
void visit_params(OracleT<M>& p, F&& f) {
  visit_params(p.cell, [&](const std::string& n, M& m) { f("cell." + n, m); });
  f("out_w", p.out_w);
  f("out_b", p.out_b);
}

// ---------------------------------------------------------------------------
// construction

namespace detail {
inline GruCellT<MatrixXd> make_gru(int hidden, int input) {
  GruCellT<MatrixXd> g;
  g.gate_w = MatrixXd::Zero(2 * hidden, input);
  g.gate_u = MatrixXd::Zero(2 * hidden, hidden);
  g.gate_b = MatrixXd::Zero(2 * hidden, 1);
  g.cand_w = MatrixXd::Zero(hidden, input);
  g.cand_u = MatrixXd::Zero(hidden, hidden);
  g.cand_b = MatrixXd::Zero(hidden, 1);
  return g;
}
}  // namespace detail

inline int conv_out_len(int in, int stride) { return (in + stride - 1) / stride; }

/// Flattened feature width of the discriminator for a given input length.
inline int discriminator_feature_dim(const NetConfig& cfg, int t) {
  int len = t;
  for (int layer = 0; layer < 3; ++layer) len = conv_out_len(len, cfg.conv_stride);
  return len * cfg.conv_filters;
}

inline int decoder_context_dim(const NetConfig& cfg) { return cfg.dec_hidden; }

inline EncoderParams make_encoder(const NetConfig& cfg) {
  EncoderParams p;
  p.fwd = detail::make_gru(cfg.enc_hidden, cfg.channels);
  p.bwd = detail::make_gru(cfg.enc_hidden, cfg.channels);
  p.mu_w = MatrixXd::Zero(cfg.latent_dim, 2 * cfg.enc_hidden);
  p.mu_b = MatrixXd::Zero(cfg.latent_dim, 1);
  p.logvar_w = MatrixXd::Zero(cfg.latent_dim, 2 * cfg.enc_hidden);
  p.logvar_b = MatrixXd::Zero(cfg.latent_dim, 1);
  return p;
}

/// The decoder, CRNN and RCGAN-AR share this layout. RCGAN keeps the same
/// hidden sizes but feeds [z; onehot(y)] straight into layer 1 and has no
/// context projection.
inline DecoderParams make_decoder(const NetConfig& cfg, ModelKind kind = ModelKind::physiogan) {
  const int h = cfg.dec_hidden;
  DecoderParams p;
  p.init_w = MatrixXd::Zero(3 * h, cfg.latent_dim);
  p.init_b = MatrixXd::Zero(3 * h, 1);
  int l1_input;
  if (kind == ModelKind::rcgan) {
    p.ctx_w = MatrixXd(0, 0);
    p.ctx_b = MatrixXd(0, 0);
    l1_input = cfg.latent_dim + cfg.num_classes;
  } else {
    const int ctx = decoder_context_dim(cfg);
    p.ctx_w = MatrixXd::Zero(ctx, cfg.latent_dim + cfg.num_classes);
    p.ctx_b = MatrixXd::Zero(ctx, 1);
    l1_input = cfg.channels + ctx;
  }
  p.l1 = detail::make_gru(h, l1_input);
  p.l2 = detail::make_gru(h, h);
  p.l3 = detail::make_gru(h, h);
  p.out_w = MatrixXd::Zero(cfg.channels, h);
  p.out_b = MatrixXd::Zero(cfg.channels, 1);
  return p;
}

inline DiscriminatorParams make_discriminator(const NetConfig& cfg) {
  const int f = cfg.conv_filters;
  const int k = cfg.conv_size;
  DiscriminatorParams p;
  p.conv1_w = MatrixXd::Zero(f, cfg.channels * k);
  p.conv1_b = MatrixXd::Zero(f, 1);
  p.conv2_w = MatrixXd::Zero(f, f * k);
  p.conv2_b = MatrixXd::Zero(f, 1);
  p.conv3_w = MatrixXd::Zero(f, f * k);
  p.conv3_b = MatrixXd::Zero(f, 1);
  p.out_w = MatrixXd::Zero(cfg.num_classes + 1, discriminator_feature_dim(cfg, cfg.seq_len));
  p.out_b = MatrixXd::Zero(cfg.num_classes + 1, 1);
  return p;
}

inline OracleParams make_oracle(const NetConfig& cfg) {
  OracleParams p;
  p.cell = detail::make_gru(cfg.oracle_hidden, cfg.channels);
  p.out_w = MatrixXd::Zero(cfg.num_classes, cfg.oracle_hidden);
  p.out_b = MatrixXd::Zero(cfg.num_classes, 1);
  return p;
}

/// Uniform fan-in initialization for weights; biases stay zero.
template <template <class> class P>
void init_params(P<MatrixXd>& params, Rng& rng) {
  visit_params(params, [&](const std::string& name, MatrixXd& m) {
    if (m.size() == 0) return;
    if (name.size() >= 2 && name.compare(name.size() - 2, 2, "_b") == 0) {
      m.setZero();
      return;
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(m.cols()));
    for (int c = 0; c < m.cols(); ++c)
      for (int r = 0; r < m.rows(); ++r) m(r, c) = rng.uniform(-bound, bound);
  });
}

template <template <class> class P>
std::vector<MatrixXd*> collect_tensors(P<MatrixXd>& params) {
  std::vector<MatrixXd*> out;
  visit_params(params, [&](const std::string&, MatrixXd& m) { out.push_back(&m); });
  return out;
}

/// Mirror a parameter struct into backend values (tape leaves while training,
/// plain copies in eager mode). `order` collects the handles in visit order so
/// gradients can be read back against collect_tensors().
template <class B, template <class> class P>
P<typename B::V> bind_params(B& b, const P<MatrixXd>& src,
                             std::vector<typename B::V>* order = nullptr) {
  P<typename B::V> dst;
  std::vector<const MatrixXd*> srcs;
  visit_params(const_cast<P<MatrixXd>&>(src),
               [&](const std::string&, MatrixXd& m) { srcs.push_back(&m); });
  std::vector<typename B::V*> dsts;
  visit_params(dst, [&](const std::string&, typename B::V& v) { dsts.push_back(&v); });
  for (std::size_t i = 0; i < srcs.size(); ++i) {
    *dsts[i] = b.leaf(*srcs[i]);
    if (order) order->push_back(*dsts[i]);
  }
  return dst;
}

// ---------------------------------------------------------------------------
// batching helpers

inline MatrixXd onehot_matrix(const std::vector<int>& labels, int num_classes) {
  MatrixXd m = MatrixXd::Zero(num_classes, static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 1 || y > num_classes) throw std::invalid_argument("label out of range");
    m(y - 1, static_cast<Eigen::Index>(i)) = 1.0;
  }
  return m;
}

/// Stack samples column-wise into per-time-step matrices (Nd x B each).
inline std::vector<MatrixXd> batch_steps(const std::vector<const SequenceSample*>& batch) {
  if (batch.empty()) throw std::invalid_argument("batch_steps: empty batch");
  const int t = static_cast<int>(batch[0]->values.rows());
  const int nd = static_cast<int>(batch[0]->values.cols());
  std::vector<MatrixXd> steps(t, MatrixXd(nd, static_cast<Eigen::Index>(batch.size())));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i]->values.rows() != t || batch[i]->values.cols() != nd)
      throw std::invalid_argument("batch_steps: inconsistent sample shapes");
    for (int s = 0; s < t; ++s)
      steps[s].col(static_cast<Eigen::Index>(i)) = batch[i]->values.row(s).transpose();
  }
  return steps;
}

inline MatrixXd sample_from_steps(const std::vector<MatrixXd>& steps, int col) {
  const int t = static_cast<int>(steps.size());
  const int nd = static_cast<int>(steps[0].rows());
  MatrixXd m(t, nd);
  for (int s = 0; s < t; ++s) m.row(s) = steps[s].col(col).transpose();
  return m;
}

// ---------------------------------------------------------------------------
// forward passes (templated over the backend)

template <class B>
typename B::V gru_step(B& b, const GruCellT<typename B::V>& p, int hidden,
                       const typename B::V& x, const typename B::V& h) {
  return b.gru_cell(p.gate_w, p.gate_u, p.gate_b, p.cand_w, p.cand_u, p.cand_b, hidden, x, h);
}

template <class B>
struct EncoderOut {
  typename B::V mu;
  typename B::V logvar;
};

/// Bidirectional recurrence from zero states; final states concatenated and
/// projected to the posterior mean and log-variance.
template <class B>
EncoderOut<B> encoder_forward(B& b, const EncoderT<typename B::V>& p, const NetConfig& cfg,
                              const std::vector<typename B::V>& steps) {
  if (static_cast<int>(steps.size()) < 1)
    throw std::invalid_argument("encoder_forward: empty sequence");
  const int batch = b.cols_of(steps[0]);
  auto hf = b.leaf(MatrixXd::Zero(cfg.enc_hidden, batch));
  auto hb = b.leaf(MatrixXd::Zero(cfg.enc_hidden, batch));
  const int t = static_cast<int>(steps.size());
  for (int s = 0; s < t; ++s) hf = gru_step(b, p.fwd, cfg.enc_hidden, steps[s], hf);
  for (int s = t - 1; s >= 0; --s) hb = gru_step(b, p.bwd, cfg.enc_hidden, steps[s], hb);
  auto h_cat = b.vcat(hf, hb);
  EncoderOut<B> out;
  out.mu = b.add_bias(b.matmul(p.mu_w, h_cat), p.mu_b);
  out.logvar = b.add_bias(b.matmul(p.logvar_w, h_cat), p.logvar_b);
  return out;
}

/// z = mu + exp(logvar/2) .* eps
template <class B>
typename B::V reparameterize(B& b, const typename B::V& mu, const typename B::V& logvar,
                             const typename B::V& eps) {
  return b.add(mu, b.cmul(b.exp_(b.scale(logvar, 0.5)), eps));
}

template <class B>
struct DecodeOut {
  std::vector<typename B::V> outputs;  // network predictions per step (Nd x B)
  std::vector<typename B::V> emitted;  // what was fed back (differs under a mask)
};

struct DecodeOptions {
  int t_out = 0;
  /// Teacher forcing: feedback input at step t is the ground-truth frame t-1.
  const std::vector<MatrixXd>* teacher_steps = nullptr;
  /// Imputation mode (batch of one): emit the observed frame where the mask
  /// is 1 and the network frame where it is 0; the emitted frame feeds back.
  const MaskedSample* masked = nullptr;
};

/// Three stacked GRU layers, state initialized from z, context vector
/// appended to the fed-back frame at every step.
template <class B>
DecodeOut<B> decoder_forward(B& b, const DecoderT<typename B::V>& p, const NetConfig& cfg,
                             const typename B::V& z, const std::vector<int>& labels,
                             const DecodeOptions& opt) {
  if (opt.t_out < 1) throw std::invalid_argument("decoder_forward: t_out must be >= 1");
  const int h = cfg.dec_hidden;
  const int batch = b.cols_of(z);
  if (static_cast<int>(labels.size()) != batch)
    throw std::invalid_argument("decoder_forward: label count != batch");
  if (opt.masked && batch != 1)
    throw std::invalid_argument("decoder_forward: masked decoding is per-sample");
  if (opt.masked && static_cast<int>(opt.masked->mask.size()) != opt.t_out)
    throw std::invalid_argument("decoder_forward: mask length != t_out");

  auto y1h = b.leaf(onehot_matrix(labels, cfg.num_classes));
  auto ctx = b.add_bias(b.matmul(p.ctx_w, b.vcat(z, y1h)), p.ctx_b);
  auto s0 = b.tanh_(b.add_bias(b.matmul(p.init_w, z), p.init_b));
  auto h1 = b.rows(s0, 0, h);
  auto h2 = b.rows(s0, h, h);
  auto h3 = b.rows(s0, 2 * h, h);

  DecodeOut<B> out;
  out.outputs.reserve(opt.t_out);
  out.emitted.reserve(opt.t_out);
  auto prev = b.leaf(MatrixXd::Zero(cfg.channels, batch));
  for (int t = 0; t < opt.t_out; ++t) {
    auto input = b.vcat(prev, ctx);
    h1 = gru_step(b, p.l1, h, input, h1);
    h2 = gru_step(b, p.l2, h, h1, h2);
    h3 = gru_step(b, p.l3, h, h2, h3);
    auto frame = b.add_bias(b.matmul(p.out_w, h3), p.out_b);
    out.outputs.push_back(frame);
    auto emitted = frame;
    if (opt.masked && opt.masked->mask[t] == 1)
      emitted = b.leaf(opt.masked->observed.row(t).transpose());
    out.emitted.push_back(emitted);
    if (opt.teacher_steps)
      prev = b.leaf((*opt.teacher_steps)[t]);
    else
      prev = emitted;
  }
  return out;
}

/// RCGAN generator: identical hidden stack, but the per-step input is the
/// constant [z; onehot(y)] with no feedback from previous outputs.
template <class B>
std::vector<typename B::V> rcgan_forward(B& b, const DecoderT<typename B::V>& p,
                                         const NetConfig& cfg, const typename B::V& z,
                                         const std::vector<int>& labels, int t_out) {
  if (t_out < 1) throw std::invalid_argument("rcgan_forward: t_out must be >= 1");
  const int h = cfg.dec_hidden;
  auto y1h = b.leaf(onehot_matrix(labels, cfg.num_classes));
  auto input = b.vcat(z, y1h);
  auto s0 = b.tanh_(b.add_bias(b.matmul(p.init_w, z), p.init_b));
  auto h1 = b.rows(s0, 0, h);
  auto h2 = b.rows(s0, h, h);
  auto h3 = b.rows(s0, 2 * h, h);
  std::vector<typename B::V> outputs;
  outputs.reserve(t_out);
  for (int t = 0; t < t_out; ++t) {
    h1 = gru_step(b, p.l1, h, input, h1);
    h2 = gru_step(b, p.l2, h, h1, h2);
    h3 = gru_step(b, p.l3, h, h2, h3);
    outputs.push_back(b.add_bias(b.matmul(p.out_w, h3), p.out_b));
  }
  return outputs;
}

namespace detail {

template <class B>
std::vector<typename B::V> conv1d_same(B& b, const std::vector<typename B::V>& seq,
                                       const typename B::V& w, const typename B::V& bias,
                                       int in_channels, int ksize, int stride) {
  const int n = static_cast<int>(seq.size());
  const int batch = b.cols_of(seq[0]);
  const int out_len = conv_out_len(n, stride);
  const int pad_total = std::max((out_len - 1) * stride + ksize - n, 0);
  const int pad_left = pad_total / 2;
  auto zero = b.leaf(MatrixXd::Zero(in_channels, batch));
  std::vector<typename B::V> out;
  out.reserve(out_len);
  for (int i = 0; i < out_len; ++i) {
    const int j0 = i * stride - pad_left;
    auto window = (j0 >= 0 && j0 < n) ? seq[j0] : zero;
    for (int k = 1; k < ksize; ++k) {
      const int j = j0 + k;
      window = b.vcat(window, (j >= 0 && j < n) ? seq[j] : zero);
    }
    out.push_back(b.add_bias(b.matmul(w, window), bias));
  }
  return out;
}

}  // namespace detail

template <class B>
struct DiscriminatorFwd {
  typename B::V logits;    // (L+1) x B
  typename B::V features;  // d_f x B, time-major flatten of conv layer 3
};

/// Three strided 1-D convolutions with rectifier nonlinearities between them;
/// layer-3 activations double as the feature-matching embedding.
template <class B>
DiscriminatorFwd<B> discriminator_forward(B& b, const DiscriminatorT<typename B::V>& p,
                                          const NetConfig& cfg,
                                          const std::vector<typename B::V>& steps) {
  const int f = cfg.conv_filters;
  auto l1 = detail::conv1d_same(b, steps, p.conv1_w, p.conv1_b, cfg.channels, cfg.conv_size,
                                cfg.conv_stride);
  for (auto& v : l1) v = b.relu(v);
  auto l2 = detail::conv1d_same(b, l1, p.conv2_w, p.conv2_b, f, cfg.conv_size, cfg.conv_stride);
  for (auto& v : l2) v = b.relu(v);
  auto l3 = detail::conv1d_same(b, l2, p.conv3_w, p.conv3_b, f, cfg.conv_size, cfg.conv_stride);

  auto features = l3[0];
  for (std::size_t i = 1; i < l3.size(); ++i) features = b.vcat(features, l3[i]);
  DiscriminatorFwd<B> out;
  out.features = features;
  out.logits = b.add_bias(b.matmul(p.out_w, features), p.out_b);
  return out;
}

/// Single recurrent layer over the sequence; final state through an affine
/// softmax head.
template <class B>
typename B::V oracle_forward(B& b, const OracleT<typename B::V>& p, const NetConfig& cfg,
                             const std::vector<typename B::V>& steps) {
  const int batch = b.cols_of(steps[0]);
  auto h = b.leaf(MatrixXd::Zero(cfg.oracle_hidden, batch));
  for (const auto& s : steps) h = gru_step(b, p.cell, cfg.oracle_hidden, s, h);
  return b.add_bias(b.matmul(p.out_w, h), p.out_b);
}

// ---------------------------------------------------------------------------
// eager single-sample surface

/// Latent posterior produced by the encoder.
struct PosteriorParams {
  VectorXd mu;
  VectorXd log_var;
  VectorXd std;  // exp(log_var / 2)
};

inline std::vector<MatrixXd> sample_steps(const Eigen::MatrixXd& values) {
  std::vector<MatrixXd> steps;
  steps.reserve(values.rows());
  for (int t = 0; t < values.rows(); ++t) steps.push_back(values.row(t).transpose());
  return steps;
}

inline PosteriorParams encode(const EncoderParams& p, const NetConfig& cfg,
                              const MatrixXd& values) {
  if (values.cols() != cfg.channels)
    throw std::invalid_argument("encode: channel count mismatch");
  if (!values.allFinite()) throw std::invalid_argument("encode: non-finite input");
  ad::EagerBackend b;
  auto steps = sample_steps(values);
  std::vector<MatrixXd> leaves(steps.begin(), steps.end());
  auto out = encoder_forward(b, bind_params(b, p), cfg, leaves);
  PosteriorParams post;
  post.mu = out.mu.col(0);
  post.log_var = out.logvar.col(0);
  post.std = (post.log_var.array() / 2.0).exp();
  return post;
}

inline VectorXd sample_latent(const PosteriorParams& post, const VectorXd& eps) {
  if (eps.size() != post.mu.size())
    throw std::invalid_argument("sample_latent: eps length mismatch");
  return post.mu.array() + post.std.array() * eps.array();
}

/// Generate t_out frames conditioned on (z, y). When `observed` is given the
/// output keeps the ground-truth frames wherever the mask is 1 and those
/// frames feed the recurrence.
inline MatrixXd decode(const DecoderParams& p, const NetConfig& cfg, const VectorXd& z,
                       int label, int t_out, const MaskedSample* observed = nullptr) {
  if (label < 1 || label > cfg.num_classes) throw std::invalid_argument("decode: bad label");
  if (z.size() != cfg.latent_dim) throw std::invalid_argument("decode: latent size mismatch");
  if (observed && static_cast<int>(observed->mask.size()) != t_out)
    throw std::invalid_argument("decode: observed length != t_out");
  ad::EagerBackend b;
  DecodeOptions opt;
  opt.t_out = t_out;
  opt.masked = observed;
  auto out = decoder_forward(b, bind_params(b, p), cfg, MatrixXd(z), {label}, opt);
  return sample_from_steps(out.emitted, 0);
}

struct DiscriminatorOutput {
  VectorXd probs;     // length L+1, sums to 1
  VectorXd features;  // length d_f
};

inline DiscriminatorOutput discriminate(const DiscriminatorParams& p, const NetConfig& cfg,
                                        const MatrixXd& values) {
  if (values.cols() != cfg.channels)
    throw std::invalid_argument("discriminate: channel count mismatch");
  if (!values.allFinite()) throw std::invalid_argument("discriminate: non-finite input");
  ad::EagerBackend b;
  auto steps = sample_steps(values);
  auto fwd = discriminator_forward(b, bind_params(b, p), cfg, steps);
  DiscriminatorOutput out;
  out.features = fwd.features.col(0);
  out.probs = ad::Tape::softmax_cols(fwd.logits).col(0);
  return out;
}

inline VectorXd classify_oracle(const OracleParams& p, const NetConfig& cfg,
                                const MatrixXd& values) {
  if (values.cols() != cfg.channels)
    throw std::invalid_argument("classify_oracle: channel count mismatch");
  ad::EagerBackend b;
  auto steps = sample_steps(values);
  auto logits = oracle_forward(b, bind_params(b, p), cfg, steps);
  return ad::Tape::softmax_cols(logits).col(0);
}

/// Arg-max with ties broken toward the lowest class index; returns a 1-based
/// label.
inline int argmax_label(const VectorXd& probs) {
  int best = 0;
  for (int i = 1; i < probs.size(); ++i)
    if (probs(i) > probs(best)) best = i;
  return best + 1;
}

inline MatrixXd baseline_generate(ModelKind kind, const DecoderParams& p, const NetConfig& cfg,
                                  const VectorXd& z, int label, int t_out) {
  if (kind == ModelKind::crnn || kind == ModelKind::rcgan_ar || kind == ModelKind::physiogan)
    return decode(p, cfg, z, label, t_out);
  if (kind == ModelKind::rcgan) {
    ad::EagerBackend b;
    auto out = rcgan_forward(b, bind_params(b, p), cfg, MatrixXd(z), {label}, t_out);
    return sample_from_steps(out, 0);
  }
  throw std::invalid_argument("baseline_generate: unknown generator kind");
}

}  // namespace physio
