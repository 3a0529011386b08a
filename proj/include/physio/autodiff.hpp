#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace physio::ad {

using Matrix = Eigen::MatrixXd;

/// Handle to a node owned by a Tape.
struct Var {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

/// Reverse-mode tape over dense double matrices. Columns are batch items,
/// rows are features. Build a graph with the op members, call backward() on a
/// 1x1 result, then read gradients of the leaves.
class Tape {
 public:
  Var leaf(Matrix value) {
    nodes_.push_back(Node{std::move(value), {}, {}});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Matrix& value(Var v) const { return nodes_[check(v)].value; }

  /// Gradient of the last backward() root with respect to v. Zero matrix if
  /// the node is not reached by the sweep.
  Matrix grad(Var v) const {
    const Node& n = nodes_[check(v)];
    if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void reset() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

  void backward(Var root) {
    Node& r = nodes_[check(root)];
    if (r.value.size() != 1) throw std::invalid_argument("backward: root must be 1x1");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    r.grad = Matrix::Ones(1, 1);
    for (int i = root.idx; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad.size() != 0 && n.back) n.back();
    }
  }

  // ---- ops ----

  Var matmul(Var a, Var b) {
    Var out = leaf(value(a) * value(b));
    nodes_[out.idx].back = [this, a, b, out] {
      const Matrix& g = nodes_[out.idx].grad;
      accum(a, g * value(b).transpose());
      accum(b, value(a).transpose() * g);
    };
    return out;
  }

  Var add(Var a, Var b) {
    Var out = leaf(value(a) + value(b));
    nodes_[out.idx].back = [this, a, b, out] {
      const Matrix& g = nodes_[out.idx].grad;
      accum(a, g);
      accum(b, g);
    };
    return out;
  }

  /// Broadcast a column vector (h x 1) over every column of a (h x B).
  Var add_bias(Var a, Var bias) {
    Var out = leaf(value(a).colwise() + Eigen::VectorXd(value(bias).col(0)));
    nodes_[out.idx].back = [this, a, bias, out] {
      const Matrix& g = nodes_[out.idx].grad;
      accum(a, g);
      accum(bias, g.rowwise().sum());
    };
    return out;
  }

  Var sub(Var a, Var b) {
    Var out = leaf(value(a) - value(b));
    nodes_[out.idx].back = [this, a, b, out] {
      const Matrix& g = nodes_[out.idx].grad;
      accum(a, g);
      accum(b, -g);
    };
    return out;
  }

  Var cmul(Var a, Var b) {
    Var out = leaf(value(a).cwiseProduct(value(b)));
    nodes_[out.idx].back = [this, a, b, out] {
      const Matrix& g = nodes_[out.idx].grad;
      accum(a, g.cwiseProduct(value(b)));
      accum(b, g.cwiseProduct(value(a)));
    };
    return out;
  }

  Var scale(Var a, double s) {
    Var out = leaf(value(a) * s);
    nodes_[out.idx].back = [this, a, s, out] { accum(a, nodes_[out.idx].grad * s); };
    return out;
  }

  Var add_scalar(Var a, double s) {
    Var out = leaf(value(a).array() + s);
    nodes_[out.idx].back = [this, a, out] { accum(a, nodes_[out.idx].grad); };
    return out;
  }

  Var sigmoid(Var a) {
    Var out = leaf(((value(a).array() * -1.0).exp() + 1.0).inverse());
    nodes_[out.idx].back = [this, a, out] {
      const Matrix& y = nodes_[out.idx].value;
      accum(a, nodes_[out.idx].grad.cwiseProduct(
                   (y.array() * (1.0 - y.array())).matrix()));
    };
    return out;
  }

  Var tanh_(Var a) {
    Var out = leaf(value(a).array().tanh());
    nodes_[out.idx].back = [this, a, out] {
      const Matrix& y = nodes_[out.idx].value;
      accum(a, nodes_[out.idx].grad.cwiseProduct((1.0 - y.array().square()).matrix()));
    };
    return out;
  }

  Var relu(Var a) {
    Var out = leaf(value(a).cwiseMax(0.0));
    nodes_[out.idx].back = [this, a, out] {
      const Matrix& x = value(a);
      accum(a, nodes_[out.idx].grad.cwiseProduct(
                   (x.array() > 0.0).cast<double>().matrix()));
    };
    return out;
  }

  Var exp_(Var a) {
    Var out = leaf(value(a).array().exp());
    nodes_[out.idx].back = [this, a, out] {
      accum(a, nodes_[out.idx].grad.cwiseProduct(nodes_[out.idx].value));
    };
    return out;
  }

  /// Elementwise square root with a guarded derivative near zero.
  Var sqrt_(Var a) {
    Var out = leaf(value(a).cwiseMax(0.0).cwiseSqrt());
    nodes_[out.idx].back = [this, a, out] {
      const Matrix denom = nodes_[out.idx].value.cwiseMax(1e-12);
      accum(a, (nodes_[out.idx].grad.array() * 0.5 / denom.array()).matrix());
    };
    return out;
  }

  /// Vertical concatenation (rows of a above rows of b).
  Var vcat(Var a, Var b) {
    // references into nodes_ do not survive leaf(); copy sizes first
    const int ra = static_cast<int>(value(a).rows());
    const int rb = static_cast<int>(value(b).rows());
    Matrix v(ra + rb, value(a).cols());
    v.topRows(ra) = value(a);
    v.bottomRows(rb) = value(b);
    Var out = leaf(std::move(v));
    nodes_[out.idx].back = [this, a, b, out, ra, rb] {
      const Matrix& g = nodes_[out.idx].grad;
      accum(a, g.topRows(ra));
      accum(b, g.bottomRows(rb));
    };
    return out;
  }

  /// Row slice [r0, r0 + n).
  Var rows(Var a, int r0, int n) {
    Var out = leaf(value(a).middleRows(r0, n));
    nodes_[out.idx].back = [this, a, out, r0, n] {
      const Matrix& g = nodes_[out.idx].grad;
      Matrix full = Matrix::Zero(value(a).rows(), value(a).cols());
      full.middleRows(r0, n) = g;
      accum(a, full);
    };
    return out;
  }

  /// Sum over rows, yielding a 1 x B row.
  Var colsum(Var a) {
    Var out = leaf(value(a).colwise().sum());
    nodes_[out.idx].back = [this, a, out] {
      const Matrix& g = nodes_[out.idx].grad;
      accum(a, g.replicate(value(a).rows(), 1));
    };
    return out;
  }

  /// Mean of all entries, yielding 1x1.
  Var mean_all(Var a) {
    const double n = static_cast<double>(value(a).size());
    Var out = leaf(Matrix::Constant(1, 1, value(a).sum() / n));
    nodes_[out.idx].back = [this, a, out, n] {
      accum(a, Matrix::Constant(value(a).rows(), value(a).cols(),
                                nodes_[out.idx].grad(0, 0) / n));
    };
    return out;
  }

  /// Mean over the batch of -log softmax(logits)[label]. labels are 0-based
  /// row indices, one per column. Probabilities are clamped at 1e-12.
  Var cross_entropy_mean(Var logits, std::vector<int> labels) {
    const Matrix& l = value(logits);
    if (static_cast<int>(labels.size()) != l.cols())
      throw std::invalid_argument("cross_entropy_mean: label count != batch");
    Matrix p = softmax_cols(l);
    double total = 0.0;
    for (int c = 0; c < p.cols(); ++c)
      total -= std::log(std::max(p(labels[c], c), 1e-12));
    const double inv_b = 1.0 / static_cast<double>(l.cols());
    Var out = leaf(Matrix::Constant(1, 1, total * inv_b));
    nodes_[out.idx].back = [this, logits, out, p = std::move(p),
                            labels = std::move(labels), inv_b] {
      Matrix d = p;
      for (int c = 0; c < d.cols(); ++c) d(labels[c], c) -= 1.0;
      accum(logits, d * (nodes_[out.idx].grad(0, 0) * inv_b));
    };
    return out;
  }

  /// Fused GRU step: h' from input x and previous state h. Gates are the
  /// reset/update pair stacked in one projection; the update gate keeps the
  /// previous state, as in the original gated-unit formulation. Fusing the
  /// whole cell into one node keeps tape length and memory proportional to
  /// sequence length rather than to the op count of the cell.
  Var gru_cell(Var wg, Var ug, Var bg, Var wc, Var uc, Var bc, int hidden, Var x, Var h) {
    const Matrix pre_g =
        ((value(wg) * value(x)).colwise() + Eigen::VectorXd(value(bg).col(0))) +
        value(ug) * value(h);
    Matrix g = ((pre_g.array() * -1.0).exp() + 1.0).inverse();
    Matrix rh = g.topRows(hidden).cwiseProduct(value(h));
    const Matrix pre_c =
        ((value(wc) * value(x)).colwise() + Eigen::VectorXd(value(bc).col(0))) +
        value(uc) * rh;
    Matrix c = pre_c.array().tanh();
    const auto u = g.bottomRows(hidden).array();
    Var out = leaf((u * value(h).array() + (1.0 - u) * c.array()).matrix());
    nodes_[out.idx].back = [this, wg, ug, bg, wc, uc, bc, hidden, x, h, out,
                            g = std::move(g), c = std::move(c), rh = std::move(rh)] {
      const Matrix& gout = nodes_[out.idx].grad;
      const auto r_arr = g.topRows(hidden).array();
      const auto u_arr = g.bottomRows(hidden).array();
      const Matrix& hv = value(h);
      const Matrix dc = (gout.array() * (1.0 - u_arr)).matrix();
      const Matrix du = (gout.array() * (hv.array() - c.array())).matrix();
      Matrix dh = (gout.array() * u_arr).matrix();

      const Matrix dpre_c = (dc.array() * (1.0 - c.array().square())).matrix();
      accum(wc, dpre_c * value(x).transpose());
      accum(bc, dpre_c.rowwise().sum());
      accum(uc, dpre_c * rh.transpose());
      const Matrix drh = value(uc).transpose() * dpre_c;
      dh += (drh.array() * r_arr).matrix();

      Matrix dg(2 * hidden, gout.cols());
      dg.topRows(hidden) = (drh.array() * hv.array()).matrix();
      dg.bottomRows(hidden) = du;
      dg = (dg.array() * g.array() * (1.0 - g.array())).matrix();
      accum(wg, dg * value(x).transpose());
      accum(bg, dg.rowwise().sum());
      accum(ug, dg * hv.transpose());
      dh += value(ug).transpose() * dg;

      accum(x, value(wg).transpose() * dg + value(wc).transpose() * dpre_c);
      accum(h, dh);
    };
    return out;
  }

  static Matrix softmax_cols(const Matrix& logits) {
    Matrix shifted = logits.rowwise() - logits.colwise().maxCoeff();
    Matrix e = shifted.array().exp();
    Eigen::RowVectorXd sums = e.colwise().sum();
    for (int c = 0; c < e.cols(); ++c) e.col(c) /= sums(c);
    return e;
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void()> back;
  };

  int check(Var v) const {
    if (!v.valid() || v.idx >= static_cast<int>(nodes_.size()))
      throw std::invalid_argument("invalid tape handle");
    return v.idx;
  }

  void accum(Var v, const Matrix& g) {
    Node& n = nodes_[v.idx];
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  void accum(Var v, Matrix&& g) {
    Node& n = nodes_[v.idx];
    if (n.grad.size() == 0)
      n.grad = std::move(g);
    else
      n.grad += g;
  }

  std::vector<Node> nodes_;
};

/// Immediate-mode backend: the same expression templates the nets are written
/// against, evaluated eagerly without gradient tracking. Keeping one forward
/// implementation for training and inference means the two can never drift.
struct EagerBackend {
  using V = Matrix;
  static constexpr bool tracks_gradients = false;

  V leaf(const Matrix& m) const { return m; }
  V matmul(const V& a, const V& b) const { return a * b; }
  V add(const V& a, const V& b) const { return a + b; }
  V add_bias(const V& a, const V& bias) const {
    return a.colwise() + Eigen::VectorXd(bias.col(0));
  }
  V sub(const V& a, const V& b) const { return a - b; }
  V cmul(const V& a, const V& b) const { return a.cwiseProduct(b); }
  V scale(const V& a, double s) const { return a * s; }
  V add_scalar(const V& a, double s) const { return a.array() + s; }
  V sigmoid(const V& a) const { return ((a.array() * -1.0).exp() + 1.0).inverse(); }
  V tanh_(const V& a) const { return a.array().tanh(); }
  V relu(const V& a) const { return a.cwiseMax(0.0); }
  V exp_(const V& a) const { return a.array().exp(); }
  V sqrt_(const V& a) const { return a.cwiseMax(0.0).cwiseSqrt(); }
  V vcat(const V& a, const V& b) const {
    V v(a.rows() + b.rows(), a.cols());
    v.topRows(a.rows()) = a;
    v.bottomRows(b.rows()) = b;
    return v;
  }
  V rows(const V& a, int r0, int n) const { return a.middleRows(r0, n); }
  V colsum(const V& a) const { return a.colwise().sum(); }
  V mean_all(const V& a) const {
    return Matrix::Constant(1, 1, a.sum() / static_cast<double>(a.size()));
  }
  V cross_entropy_mean(const V& logits, const std::vector<int>& labels) const {
    Matrix p = Tape::softmax_cols(logits);
    double total = 0.0;
    for (int c = 0; c < p.cols(); ++c)
      total -= std::log(std::max(p(labels[c], c), 1e-12));
    return Matrix::Constant(1, 1, total / static_cast<double>(logits.cols()));
  }
  V gru_cell(const V& wg, const V& ug, const V& bg, const V& wc, const V& uc, const V& bc,
             int hidden, const V& x, const V& h) const {
    const Matrix pre_g = ((wg * x).colwise() + Eigen::VectorXd(bg.col(0))) + ug * h;
    const Matrix g = ((pre_g.array() * -1.0).exp() + 1.0).inverse();
    const Matrix rh = g.topRows(hidden).cwiseProduct(h);
    const Matrix pre_c = ((wc * x).colwise() + Eigen::VectorXd(bc.col(0))) + uc * rh;
    const Matrix c = pre_c.array().tanh();
    const auto u = g.bottomRows(hidden).array();
    return (u * h.array() + (1.0 - u) * c.array()).matrix();
  }

  int rows_of(const V& a) const { return static_cast<int>(a.rows()); }
  int cols_of(const V& a) const { return static_cast<int>(a.cols()); }
  const Matrix& materialize(const V& a) const { return a; }
};

/// Tape-recording backend used during training.
struct TapeBackend {
  using V = Var;
  static constexpr bool tracks_gradients = true;

  explicit TapeBackend(Tape& t) : tape(&t) {}
  Tape* tape;

  V leaf(const Matrix& m) const { return tape->leaf(m); }
  V matmul(V a, V b) const { return tape->matmul(a, b); }
  V add(V a, V b) const { return tape->add(a, b); }
  V add_bias(V a, V bias) const { return tape->add_bias(a, bias); }
  V sub(V a, V b) const { return tape->sub(a, b); }
  V cmul(V a, V b) const { return tape->cmul(a, b); }
  V scale(V a, double s) const { return tape->scale(a, s); }
  V add_scalar(V a, double s) const { return tape->add_scalar(a, s); }
  V sigmoid(V a) const { return tape->sigmoid(a); }
  V tanh_(V a) const { return tape->tanh_(a); }
  V relu(V a) const { return tape->relu(a); }
  V exp_(V a) const { return tape->exp_(a); }
  V sqrt_(V a) const { return tape->sqrt_(a); }
  V vcat(V a, V b) const { return tape->vcat(a, b); }
  V rows(V a, int r0, int n) const { return tape->rows(a, r0, n); }
  V colsum(V a) const { return tape->colsum(a); }
  V mean_all(V a) const { return tape->mean_all(a); }
  V cross_entropy_mean(V logits, const std::vector<int>& labels) const {
    return tape->cross_entropy_mean(logits, labels);
  }
  V gru_cell(V wg, V ug, V bg, V wc, V uc, V bc, int hidden, V x, V h) const {
    return tape->gru_cell(wg, ug, bg, wc, uc, bc, hidden, x, h);
  }

  int rows_of(V a) const { return static_cast<int>(tape->value(a).rows()); }
  int cols_of(V a) const { return static_cast<int>(tape->value(a).cols()); }
  const Matrix& materialize(V a) const { return tape->value(a); }
};

}  // namespace physio::ad
