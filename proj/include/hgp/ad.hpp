#pragma once

#include <functional>
#include <initializer_list>
#include <utility>
#include <vector>

#include "hgp/common.hpp"

namespace hgp::ad {

class Tape;

/// Handle to a tape node. Values are dense matrices; scalars are 1x1.
struct Var {
  Tape* tape = nullptr;
  int idx = -1;
  bool valid() const { return tape != nullptr && idx >= 0; }
};

/// Record of a single objective evaluation. Nodes hold forward values and,
/// during the reverse sweep, lazily allocated adjoints.
class Tape {
 public:
  struct Node {
    Mat value;
    Mat adj;
    std::function<void(Tape&)> pull;
    const char* op = "";
    bool requires_grad = false;
  };

  Tape() { nodes_.reserve(1024); }

  Var emplace(Mat value, bool requires_grad, const char* op) {
    if (!value.allFinite())
      throw NonFiniteError(std::string("non-finite value produced by op '") +
                           op + "'");
    nodes_.push_back(Node{std::move(value), Mat(), nullptr, op, requires_grad});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  void set_pull(Var v, std::function<void(Tape&)> pull) {
    nodes_[v.idx].pull = std::move(pull);
  }

  Var constant(Mat v) { return emplace(std::move(v), false, "constant"); }
  Var constant(double v) { return constant(Mat::Constant(1, 1, v)); }
  Var leaf(Mat v) { return emplace(std::move(v), true, "leaf"); }

  const Mat& val(int i) const { return nodes_[i].value; }
  const Mat& val(Var v) const { return nodes_[v.idx].value; }
  double scalar(Var v) const {
    require(val(v).size() == 1, "scalar(): node is not 1x1");
    return val(v)(0, 0);
  }

  bool rg(int i) const { return nodes_[i].requires_grad; }
  bool rg(Var v) const { return rg(v.idx); }

  /// Adjoint slot, allocated (zeroed) on first touch.
  Mat& adj_ref(int i) {
    Node& n = nodes_[i];
    if (n.adj.size() == 0) n.adj = Mat::Zero(n.value.rows(), n.value.cols());
    return n.adj;
  }
  const Mat& adj_of(int i) const { return nodes_[i].adj; }

  /// Seed the adjoint of an interface node from an outer tape.
  void accumulate_adjoint(Var v, const Mat& g) { adj_ref(v.idx) += g; }

  /// Reverse sweep from a scalar objective.
  void backward(Var root) {
    require(val(root).size() == 1, "backward(): objective must be scalar");
    adj_ref(root.idx)(0, 0) += 1.0;
    sweep(root.idx);
  }

  /// Reverse sweep assuming adjoints were seeded via accumulate_adjoint.
  void backward_accumulated() {
    sweep(static_cast<int>(nodes_.size()) - 1);
  }

  /// Gradient of the last backward sweep wrt a node (zero if untouched).
  Mat grad(Var v) const {
    const Node& n = nodes_[v.idx];
    if (n.adj.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.adj;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  void sweep(int from) {
    for (int i = from; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.adj.size() != 0 && n.pull) n.pull(*this);
    }
  }

  std::vector<Node> nodes_;
};

namespace detail {
inline Tape& tape_of(Var a, Var b) {
  require(a.tape && a.tape == b.tape, "operands must live on one tape");
  return *a.tape;
}
inline Tape& tape_of(Var a) {
  require(a.tape != nullptr, "operand is not bound to a tape");
  return *a.tape;
}
}  // namespace detail

// ---- elementwise and scalar ops -------------------------------------------

inline Var add(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  Var out = t.emplace(t.val(a) + t.val(b), t.rg(a) || t.rg(b), "add");
  if (t.rg(out))
    t.set_pull(out, [ai = a.idx, bi = b.idx, o = out.idx](Tape& t) {
      const Mat& g = t.adj_of(o);
      if (t.rg(ai)) t.adj_ref(ai) += g;
      if (t.rg(bi)) t.adj_ref(bi) += g;
    });
  return out;
}

inline Var sub(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  Var out = t.emplace(t.val(a) - t.val(b), t.rg(a) || t.rg(b), "sub");
  if (t.rg(out))
    t.set_pull(out, [ai = a.idx, bi = b.idx, o = out.idx](Tape& t) {
      const Mat& g = t.adj_of(o);
      if (t.rg(ai)) t.adj_ref(ai) += g;
      if (t.rg(bi)) t.adj_ref(bi) -= g;
    });
  return out;
}

inline Var neg(Var a) {
  Tape& t = detail::tape_of(a);
  Var out = t.emplace(-t.val(a), t.rg(a), "neg");
  if (t.rg(out))
    t.set_pull(out, [ai = a.idx, o = out.idx](Tape& t) {
      t.adj_ref(ai) -= t.adj_of(o);
    });
  return out;
}

/// c * a with a plain double constant.
inline Var cmul(Var a, double c) {
  Tape& t = detail::tape_of(a);
  Var out = t.emplace(c * t.val(a), t.rg(a), "cmul");
  if (t.rg(out))
    t.set_pull(out, [ai = a.idx, c, o = out.idx](Tape& t) {
      t.adj_ref(ai) += c * t.adj_of(o);
    });
  return out;
}

/// a + c elementwise with a plain double constant.
inline Var cadd(Var a, double c) {
  Tape& t = detail::tape_of(a);
  Var out = t.emplace((t.val(a).array() + c).matrix(), t.rg(a), "cadd");
  if (t.rg(out))
    t.set_pull(out, [ai = a.idx, o = out.idx](Tape& t) {
      t.adj_ref(ai) += t.adj_of(o);
    });
  return out;
}

inline Var mul(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  require(t.val(a).rows() == t.val(b).rows() &&
              t.val(a).cols() == t.val(b).cols(),
          "mul: shape mismatch");
  Var out =
      t.emplace(t.val(a).cwiseProduct(t.val(b)), t.rg(a) || t.rg(b), "mul");
  if (t.rg(out))
    t.set_pull(out, [ai = a.idx, bi = b.idx, o = out.idx](Tape& t) {
      const Mat& g = t.adj_of(o);
      if (t.rg(ai)) t.adj_ref(ai) += g.cwiseProduct(t.val(bi));
      if (t.rg(bi)) t.adj_ref(bi) += g.cwiseProduct(t.val(ai));
    });
  return out;
}

/// a * s with s a 1x1 node broadcast over a.
inline Var mul_scalar(Var a, Var s) {
  Tape& t = detail::tape_of(a, s);
  require(t.val(s).size() == 1, "mul_scalar: s must be 1x1");
  Var out =
      t.emplace(t.val(a) * t.val(s)(0, 0), t.rg(a) || t.rg(s), "mul_scalar");
  if (t.rg(out))
    t.set_pull(out, [ai = a.idx, si = s.idx, o = out.idx](Tape& t) {
      const Mat& g = t.adj_of(o);
      if (t.rg(ai)) t.adj_ref(ai) += g * t.val(si)(0, 0);
      if (t.rg(si))
        t.adj_ref(si)(0, 0) += g.cwiseProduct(t.val(ai)).sum();
    });
  return out;
}

inline Var div(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  require(t.val(a).rows() == t.val(b).rows() &&
              t.val(a).cols() == t.val(b).cols(),
          "div: shape mismatch");
  Var out =
      t.emplace(t.val(a).cwiseQuotient(t.val(b)), t.rg(a) || t.rg(b), "div");
  if (t.rg(out))
    t.set_pull(out, [ai = a.idx, bi = b.idx, o = out.idx](Tape& t) {
      const Mat& g = t.adj_of(o);
      if (t.rg(ai)) t.adj_ref(ai) += g.cwiseQuotient(t.val(bi));
      if (t.rg(bi))
        t.adj_ref(bi) -= g.cwiseProduct(t.val(o)).cwiseQuotient(t.val(bi));
    });
  return out;
}

inline Var exp_(Var a) {
  Tape& t = detail::tape_of(a);
  Var out = t.emplace(t.val(a).array().exp().matrix(), t.rg(a), "exp");
  if (t.rg(out))
    t.set_pull(out, [ai = a.idx, o = out.idx](Tape& t) {
      t.adj_ref(ai) += t.adj_of(o).cwiseProduct(t.val(o));
    });
  return out;
}

inline Var log_(Var a) {
  Tape& t = detail::tape_of(a);
  Var out = t.emplace(t.val(a).array().log().matrix(), t.rg(a), "log");
  if (t.rg(out))
    t.set_pull(out, [ai = a.idx, o = out.idx](Tape& t) {
      t.adj_ref(ai) += t.adj_of(o).cwiseQuotient(t.val(ai));
    });
  return out;
}

inline Var sin_(Var a) {
  Tape& t = detail::tape_of(a);
  Var out = t.emplace(t.val(a).array().sin().matrix(), t.rg(a), "sin");
  if (t.rg(out))
    t.set_pull(out, [ai = a.idx, o = out.idx](Tape& t) {
      t.adj_ref(ai) +=
          t.adj_of(o).cwiseProduct(t.val(ai).array().cos().matrix());
    });
  return out;
}

inline Var cos_(Var a) {
  Tape& t = detail::tape_of(a);
  Var out = t.emplace(t.val(a).array().cos().matrix(), t.rg(a), "cos");
  if (t.rg(out))
    t.set_pull(out, [ai = a.idx, o = out.idx](Tape& t) {
      t.adj_ref(ai) -=
          t.adj_of(o).cwiseProduct(t.val(ai).array().sin().matrix());
    });
  return out;
}

inline Var sqrt_(Var a) {
  Tape& t = detail::tape_of(a);
  Var out = t.emplace(t.val(a).array().sqrt().matrix(), t.rg(a), "sqrt");
  if (t.rg(out))
    t.set_pull(out, [ai = a.idx, o = out.idx](Tape& t) {
      t.adj_ref(ai) += (t.adj_of(o).array() / (2.0 * t.val(o).array())).matrix();
    });
  return out;
}

inline Var square(Var a) {
  Tape& t = detail::tape_of(a);
  Var out = t.emplace(t.val(a).array().square().matrix(), t.rg(a), "square");
  if (t.rg(out))
    t.set_pull(out, [ai = a.idx, o = out.idx](Tape& t) {
      t.adj_ref(ai) += 2.0 * t.adj_of(o).cwiseProduct(t.val(ai));
    });
  return out;
}

// ---- reductions ------------------------------------------------------------

inline Var sum(Var a) {
  Tape& t = detail::tape_of(a);
  Var out = t.emplace(Mat::Constant(1, 1, t.val(a).sum()), t.rg(a), "sum");
  if (t.rg(out))
    t.set_pull(out, [ai = a.idx, o = out.idx](Tape& t) {
      t.adj_ref(ai).array() += t.adj_of(o)(0, 0);
    });
  return out;
}

/// Frobenius inner product <a, b>.
inline Var dot(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  require(t.val(a).rows() == t.val(b).rows() &&
              t.val(a).cols() == t.val(b).cols(),
          "dot: shape mismatch");
  Var out = t.emplace(
      Mat::Constant(1, 1, t.val(a).cwiseProduct(t.val(b)).sum()),
      t.rg(a) || t.rg(b), "dot");
  if (t.rg(out))
    t.set_pull(out, [ai = a.idx, bi = b.idx, o = out.idx](Tape& t) {
      const double g = t.adj_of(o)(0, 0);
      if (t.rg(ai)) t.adj_ref(ai) += g * t.val(bi);
      if (t.rg(bi)) t.adj_ref(bi) += g * t.val(ai);
    });
  return out;
}

inline Var squared_norm(Var a) { return dot(a, a); }

// ---- matrix ops ------------------------------------------------------------

inline Var matmul(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  require(t.val(a).cols() == t.val(b).rows(), "matmul: inner dim mismatch");
  Var out = t.emplace(t.val(a) * t.val(b), t.rg(a) || t.rg(b), "matmul");
  if (t.rg(out))
    t.set_pull(out, [ai = a.idx, bi = b.idx, o = out.idx](Tape& t) {
      const Mat& g = t.adj_of(o);
      if (t.rg(ai)) t.adj_ref(ai) += g * t.val(bi).transpose();
      if (t.rg(bi)) t.adj_ref(bi) += t.val(ai).transpose() * g;
    });
  return out;
}

/// a^T b without materializing the transpose as a node.
inline Var tmatmul(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  require(t.val(a).rows() == t.val(b).rows(), "tmatmul: inner dim mismatch");
  Var out =
      t.emplace(t.val(a).transpose() * t.val(b), t.rg(a) || t.rg(b), "tmatmul");
  if (t.rg(out))
    t.set_pull(out, [ai = a.idx, bi = b.idx, o = out.idx](Tape& t) {
      const Mat& g = t.adj_of(o);
      if (t.rg(ai)) t.adj_ref(ai) += t.val(bi) * g.transpose();
      if (t.rg(bi)) t.adj_ref(bi) += t.val(ai) * g;
    });
  return out;
}

inline Var transpose_(Var a) {
  Tape& t = detail::tape_of(a);
  Var out = t.emplace(t.val(a).transpose(), t.rg(a), "transpose");
  if (t.rg(out))
    t.set_pull(out, [ai = a.idx, o = out.idx](Tape& t) {
      t.adj_ref(ai) += t.adj_of(o).transpose();
    });
  return out;
}

/// A + 1 r^T: add a length-cols(A) vector to every row.
inline Var add_rowvec(Var a, Var r) {
  Tape& t = detail::tape_of(a, r);
  require(t.val(r).cols() == 1 && t.val(r).rows() == t.val(a).cols(),
          "add_rowvec: r must be a column vector of length cols(A)");
  Mat v = t.val(a);
  v.rowwise() += t.val(r).col(0).transpose();
  Var out = t.emplace(std::move(v), t.rg(a) || t.rg(r), "add_rowvec");
  if (t.rg(out))
    t.set_pull(out, [ai = a.idx, ri = r.idx, o = out.idx](Tape& t) {
      const Mat& g = t.adj_of(o);
      if (t.rg(ai)) t.adj_ref(ai) += g;
      if (t.rg(ri)) t.adj_ref(ri) += g.colwise().sum().transpose();
    });
  return out;
}

/// A * diag(d): scale column j by d_j.
inline Var scale_cols(Var a, Var d) {
  Tape& t = detail::tape_of(a, d);
  require(t.val(d).cols() == 1 && t.val(d).rows() == t.val(a).cols(),
          "scale_cols: d must be a column vector of length cols(A)");
  Var out = t.emplace(t.val(a) * t.val(d).col(0).asDiagonal(),
                      t.rg(a) || t.rg(d), "scale_cols");
  if (t.rg(out))
    t.set_pull(out, [ai = a.idx, di = d.idx, o = out.idx](Tape& t) {
      const Mat& g = t.adj_of(o);
      if (t.rg(ai)) t.adj_ref(ai) += g * t.val(di).col(0).asDiagonal();
      if (t.rg(di))
        t.adj_ref(di) +=
            g.cwiseProduct(t.val(ai)).colwise().sum().transpose();
    });
  return out;
}

// ---- structure ops ---------------------------------------------------------

inline Var vcat(const std::vector<Var>& parts) {
  require(!parts.empty(), "vcat: empty");
  Tape& t = detail::tape_of(parts[0]);
  int rows = 0;
  bool rg = false;
  for (Var p : parts) {
    require(p.tape == &t && t.val(p).cols() == 1,
            "vcat: column vectors on one tape");
    rows += static_cast<int>(t.val(p).rows());
    rg = rg || t.rg(p);
  }
  Mat v(rows, 1);
  int at = 0;
  std::vector<std::pair<int, int>> spans;  // (node, offset)
  for (Var p : parts) {
    const int n = static_cast<int>(t.val(p).rows());
    v.block(at, 0, n, 1) = t.val(p);
    spans.emplace_back(p.idx, at);
    at += n;
  }
  Var out = t.emplace(std::move(v), rg, "vcat");
  if (rg)
    t.set_pull(out, [spans, o = out.idx](Tape& t) {
      const Mat& g = t.adj_of(o);
      for (auto [ni, off] : spans) {
        const int n = static_cast<int>(t.val(ni).rows());
        if (t.rg(ni)) t.adj_ref(ni) += g.block(off, 0, n, 1);
      }
    });
  return out;
}

/// Rows [i, i+n) of a column vector.
inline Var segment(Var a, int i, int n) {
  Tape& t = detail::tape_of(a);
  require(t.val(a).cols() == 1 && i >= 0 && i + n <= t.val(a).rows(),
          "segment: out of range");
  Var out = t.emplace(t.val(a).block(i, 0, n, 1), t.rg(a), "segment");
  if (t.rg(out))
    t.set_pull(out, [ai = a.idx, i, n, o = out.idx](Tape& t) {
      t.adj_ref(ai).block(i, 0, n, 1) += t.adj_of(o);
    });
  return out;
}

/// sum_k c_k v_k over same-shape nodes; one node per Runge-Kutta update.
inline Var lincomb(const std::vector<std::pair<double, Var>>& terms) {
  require(!terms.empty(), "lincomb: empty");
  Tape& t = detail::tape_of(terms[0].second);
  Mat v = terms[0].first * t.val(terms[0].second);
  bool rg = t.rg(terms[0].second);
  std::vector<std::pair<double, int>> caps{{terms[0].first,
                                            terms[0].second.idx}};
  for (std::size_t k = 1; k < terms.size(); ++k) {
    v += terms[k].first * t.val(terms[k].second);
    rg = rg || t.rg(terms[k].second);
    caps.emplace_back(terms[k].first, terms[k].second.idx);
  }
  Var out = t.emplace(std::move(v), rg, "lincomb");
  if (rg)
    t.set_pull(out, [caps, o = out.idx](Tape& t) {
      const Mat& g = t.adj_of(o);
      for (auto [c, ni] : caps)
        if (t.rg(ni)) t.adj_ref(ni) += c * g;
    });
  return out;
}

// ---- triangular / factorization ops ----------------------------------------

/// Lower Cholesky factor of a symmetric positive-definite node.
inline Var cholesky(Var a) {
  Tape& t = detail::tape_of(a);
  Eigen::LLT<Mat> llt(t.val(a));
  if (llt.info() != Eigen::Success)
    throw FactorizationError("cholesky: matrix not positive definite");
  Var out = t.emplace(Mat(llt.matrixL()), t.rg(a), "cholesky");
  if (t.rg(out))
    t.set_pull(out, [ai = a.idx, o = out.idx](Tape& t) {
      const Mat& l = t.val(o);
      // Mask structural zeros of L, then the standard Cholesky pullback:
      // Abar = L^{-T} Phi(L^T Lbar) L^{-1}, Phi = tril with halved diagonal.
      Mat lbar = t.adj_of(o).triangularView<Eigen::Lower>();
      Mat p = l.transpose() * lbar;
      p = p.triangularView<Eigen::Lower>();
      p.diagonal() *= 0.5;
      Mat x = l.transpose().triangularView<Eigen::Upper>().solve(p);
      Mat abar_t = l.transpose().triangularView<Eigen::Upper>().solve(
          Mat(x.transpose()));
      Mat abar = abar_t.transpose();
      t.adj_ref(ai) += 0.5 * (abar + abar.transpose());
    });
  return out;
}

/// L^{-1} b for lower-triangular L.
inline Var solve_lower(Var l, Var b) {
  Tape& t = detail::tape_of(l, b);
  Var out = t.emplace(t.val(l).triangularView<Eigen::Lower>().solve(t.val(b)),
                      t.rg(l) || t.rg(b), "solve_lower");
  if (t.rg(out))
    t.set_pull(out, [li = l.idx, bi = b.idx, o = out.idx](Tape& t) {
      Mat w = t.val(li).transpose().triangularView<Eigen::Upper>().solve(
          t.adj_of(o));
      if (t.rg(bi)) t.adj_ref(bi) += w;
      if (t.rg(li)) {
        Mat lb = -(w * t.val(o).transpose());
        t.adj_ref(li) += lb.triangularView<Eigen::Lower>();
      }
    });
  return out;
}

/// L^{-T} b for lower-triangular L.
inline Var solve_lower_t(Var l, Var b) {
  Tape& t = detail::tape_of(l, b);
  Var out = t.emplace(
      t.val(l).transpose().triangularView<Eigen::Upper>().solve(t.val(b)),
      t.rg(l) || t.rg(b), "solve_lower_t");
  if (t.rg(out))
    t.set_pull(out, [li = l.idx, bi = b.idx, o = out.idx](Tape& t) {
      Mat w = t.val(li).triangularView<Eigen::Lower>().solve(t.adj_of(o));
      if (t.rg(bi)) t.adj_ref(bi) += w;
      if (t.rg(li)) {
        Mat lb = -(t.val(o) * w.transpose());
        t.adj_ref(li) += lb.triangularView<Eigen::Lower>();
      }
    });
  return out;
}

/// Strict lower part of W plus exp of its diagonal: an unconstrained
/// parameterization of a Cholesky factor with positive diagonal.
inline Var tril_expdiag(Var w) {
  Tape& t = detail::tape_of(w);
  require(t.val(w).rows() == t.val(w).cols(), "tril_expdiag: square input");
  Mat v = t.val(w).triangularView<Eigen::StrictlyLower>();
  v.diagonal() = t.val(w).diagonal().array().exp();
  Var out = t.emplace(std::move(v), t.rg(w), "tril_expdiag");
  if (t.rg(out))
    t.set_pull(out, [wi = w.idx, o = out.idx](Tape& t) {
      Mat g = t.adj_of(o).triangularView<Eigen::StrictlyLower>();
      g.diagonal() =
          t.adj_of(o).diagonal().cwiseProduct(t.val(o).diagonal());
      t.adj_ref(wi) += g;
    });
  return out;
}

/// sum_i log L_ii.
inline Var logdiag_sum(Var l) {
  Tape& t = detail::tape_of(l);
  Var out = t.emplace(
      Mat::Constant(1, 1, t.val(l).diagonal().array().log().sum()), t.rg(l),
      "logdiag_sum");
  if (t.rg(out))
    t.set_pull(out, [li = l.idx, o = out.idx](Tape& t) {
      t.adj_ref(li).diagonal() +=
          t.adj_of(o)(0, 0) * t.val(li).diagonal().cwiseInverse();
    });
  return out;
}

// ---- operators -------------------------------------------------------------

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(double c, Var a) { return cmul(a, c); }
inline Var operator*(Var a, double c) { return cmul(a, c); }

}  // namespace hgp::ad
