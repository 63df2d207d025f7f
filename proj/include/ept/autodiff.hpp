#pragma once

// Reverse-mode differentiation over Matrix-valued nodes.
//
// A Tape records nodes in creation order, which is a topological order of the
// computation graph; backward() walks them in reverse. Each primitive below
// carries a hand-derived backward closure that is individually checked against
// central finite differences in the unit tests.

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <string>
#include <unordered_map>
#include <vector>

#include "ept/matrix.hpp"

namespace ept {

/// A named trainable tensor that outlives any single tape.
struct Parameter {
  std::string name;
  Matrix value;
};

using Gradients = std::map<std::string, Matrix>;

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value) { return push(std::move(value), false, nullptr, nullptr); }

  /// Registers a trainable parameter. Watching the same parameter twice
  /// returns the node created the first time.
  Var watch(const Parameter& p) {
    if (auto it = watched_.find(&p); it != watched_.end()) return Var(this, it->second);
    for (const auto& [ptr, id] : watched_) {
      if (ptr->name == p.name) throw ContractError("two distinct parameters named '" + p.name + "'");
    }
    Var v = push(p.value, true, nullptr, &p);
    watched_.emplace(&p, v.id());
    order_.push_back(&p);
    return v;
  }

  Var record(Matrix value, bool requires_grad, BackwardFn fn) {
    return push(std::move(value), requires_grad, std::move(fn), nullptr);
  }

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient buffer of a node, allocated as zeros on first use.
  Matrix& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
    return n.grad;
  }

  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

  void backward(Var loss) {
    if (loss.value().rows() != 1 || loss.value().cols() != 1) {
      throw ContractError("backward needs a scalar loss, got " + loss.value().shape());
    }
    if (backward_done_) throw ContractError("backward already ran on this tape");
    backward_done_ = true;
    if (!nodes_[loss.id()].requires_grad) return;
    grad(loss.id())(0, 0) = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
      n.backward(*this, i);
    }
  }

  /// Gradients of every watched parameter, zeros where no path reached it.
  Gradients gradients() {
    Gradients out;
    for (const Parameter* p : order_) out.emplace(p->name, grad(watched_.at(p)));
    return out;
  }

  std::vector<const Parameter*> watched() const { return order_; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Matrix value, bool requires_grad, BackwardFn fn, const Parameter*) {
    nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, std::move(fn)});
    return Var(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> watched_;
  std::vector<const Parameter*> order_;
  bool backward_done_ = false;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }

namespace ad {

namespace detail {

inline bool any_grad(std::initializer_list<Var> vs) {
  for (const Var& v : vs)
    if (v.tape().requires_grad(v.id())) return true;
  return false;
}

inline void add_into(Matrix& dst, const Matrix& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

inline Tape& same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw ContractError("variables recorded on different tapes");
  return a.tape();
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(ept::matmul(a.value(), b.value()), detail::any_grad({a, b}), [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) detail::add_into(t.grad(ia), ept::matmul_nt(g, t.value(ib)));
    if (t.requires_grad(ib)) detail::add_into(t.grad(ib), ept::matmul_tn(t.value(ia), g));
  });
}

/// a * b^T
inline Var matmul_nt(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(ept::matmul_nt(a.value(), b.value()), detail::any_grad({a, b}),
                  [ia, ib](Tape& t, std::size_t self) {
                    const Matrix& g = t.grad(self);
                    if (t.requires_grad(ia)) detail::add_into(t.grad(ia), ept::matmul(g, t.value(ib)));
                    if (t.requires_grad(ib)) detail::add_into(t.grad(ib), ept::matmul_tn(g, t.value(ia)));
                  });
}

inline Var add(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  if (!a.value().same_shape(b.value())) {
    throw ShapeError("add shape mismatch: " + a.value().shape() + " + " + b.value().shape());
  }
  Matrix out = a.value();
  detail::add_into(out, b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), detail::any_grad({a, b}), [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) detail::add_into(t.grad(ia), g);
    if (t.requires_grad(ib)) detail::add_into(t.grad(ib), g);
  });
}

inline Var scale(Var a, double c) {
  Matrix out = a.value();
  for (double& x : out.data()) x *= c;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), detail::any_grad({a}), [ia, c](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += c * g.data()[i];
  });
}

inline Var sum(Var a) {
  double acc = 0.0;
  for (double x : a.value().data()) acc += x;
  const std::size_t ia = a.id();
  return a.tape().record(Matrix(1, 1, acc), detail::any_grad({a}), [ia](Tape& t, std::size_t self) {
    const double g = t.grad(self)(0, 0);
    for (double& x : t.grad(ia).data()) x += g;
  });
}

/// Top-left rows x cols block.
inline Var crop(Var a, std::size_t rows, std::size_t cols) {
  const std::size_t ia = a.id();
  if (rows == a.value().rows() && cols == a.value().cols()) return a;
  return a.tape().record(ept::crop(a.value(), rows, cols), detail::any_grad({a}),
                         [ia](Tape& t, std::size_t self) {
                           const Matrix& g = t.grad(self);
                           Matrix& ga = t.grad(ia);
                           for (std::size_t i = 0; i < g.rows(); ++i)
                             for (std::size_t j = 0; j < g.cols(); ++j) ga(i, j) += g(i, j);
                         });
}

inline Var transposed_conv2d(Var z, Var k, std::size_t stride) {
  Tape& t = detail::same_tape(z, k);
  const std::size_t iz = z.id(), ik = k.id();
  return t.record(ept::transposed_conv2d(z.value(), k.value(), stride), detail::any_grad({z, k}),
                  [iz, ik, stride](Tape& t, std::size_t self) {
                    const Matrix& g = t.grad(self);
                    const Matrix& zv = t.value(iz);
                    const Matrix& kv = t.value(ik);
                    const std::size_t s = kv.rows();
                    const bool gz = t.requires_grad(iz), gk = t.requires_grad(ik);
                    Matrix* dz = gz ? &t.grad(iz) : nullptr;
                    Matrix* dk = gk ? &t.grad(ik) : nullptr;
                    for (std::size_t a = 0; a < zv.rows(); ++a) {
                      for (std::size_t b = 0; b < zv.cols(); ++b) {
                        double acc = 0.0;
                        for (std::size_t p = 0; p < s; ++p) {
                          for (std::size_t q = 0; q < s; ++q) {
                            const double gv = g(a * stride + p, b * stride + q);
                            acc += gv * kv(p, q);
                            if (gk) (*dk)(p, q) += gv * zv(a, b);
                          }
                        }
                        if (gz) (*dz)(a, b) += acc;
                      }
                    }
                  });
}

/// out(r, :) = y(r, :) * (g(r, col) * c).
inline Var scale_rows_by_gate(Var y, Var g, std::size_t col, double c) {
  Tape& t = detail::same_tape(y, g);
  const Matrix& yv = y.value();
  const Matrix& gv = g.value();
  if (gv.rows() != yv.rows() || col >= gv.cols()) {
    throw ShapeError("gate matrix " + gv.shape() + " does not match rows of " + yv.shape());
  }
  Matrix out(yv.rows(), yv.cols());
  for (std::size_t r = 0; r < yv.rows(); ++r) {
    const double f = gv(r, col) * c;
    for (std::size_t j = 0; j < yv.cols(); ++j) out(r, j) = yv(r, j) * f;
  }
  const std::size_t iy = y.id(), ig = g.id();
  return t.record(std::move(out), detail::any_grad({y, g}), [iy, ig, col, c](Tape& t, std::size_t self) {
    const Matrix& d = t.grad(self);
    const Matrix& yv = t.value(iy);
    const Matrix& gv = t.value(ig);
    if (t.requires_grad(iy)) {
      Matrix& dy = t.grad(iy);
      for (std::size_t r = 0; r < d.rows(); ++r) {
        const double f = gv(r, col) * c;
        for (std::size_t j = 0; j < d.cols(); ++j) dy(r, j) += d(r, j) * f;
      }
    }
    if (t.requires_grad(ig)) {
      Matrix& dg = t.grad(ig);
      for (std::size_t r = 0; r < d.rows(); ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d.cols(); ++j) acc += d(r, j) * yv(r, j);
        dg(r, col) += acc * c;
      }
    }
  });
}

/// Row-wise softmax of logits / tau restricted to a per-row selected index
/// set; unselected entries are exactly zero. The selection itself is treated
/// as a constant.
inline Var masked_softmax_rows(Var logits, const std::vector<std::vector<std::size_t>>& selected, double tau) {
  const Matrix& lv = logits.value();
  if (selected.size() != lv.rows()) throw ShapeError("one selection set per row required");
  Matrix out(lv.rows(), lv.cols());
  std::vector<double> sub;
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    if (selected[r].empty()) throw ContractError("empty expert selection");
    sub.clear();
    for (std::size_t i : selected[r]) sub.push_back(lv(r, i));
    const auto p = softmax_temp(sub, tau);
    for (std::size_t j = 0; j < p.size(); ++j) out(r, selected[r][j]) = p[j];
  }
  const std::size_t il = logits.id();
  return logits.tape().record(std::move(out), detail::any_grad({logits}),
                              [il, selected, tau](Tape& t, std::size_t self) {
                                const Matrix& d = t.grad(self);
                                const Matrix& g = t.value(self);
                                Matrix& dl = t.grad(il);
                                for (std::size_t r = 0; r < d.rows(); ++r) {
                                  double inner = 0.0;
                                  for (std::size_t i : selected[r]) inner += g(r, i) * d(r, i);
                                  for (std::size_t i : selected[r]) dl(r, i) += g(r, i) * (d(r, i) - inner) / tau;
                                }
                              });
}

/// Per-row normalization to zero mean and unit variance (no affine terms).
inline Var layer_norm_rows(Var x, double eps = 1e-5) {
  const Matrix& xv = x.value();
  const std::size_t n = xv.cols();
  Matrix out(xv.rows(), n);
  std::vector<double> inv_std(xv.rows());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double mean = 0.0;
    for (double v : xv.row_span(r)) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : xv.row_span(r)) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) out(r, j) = (xv(r, j) - mean) * inv_std[r];
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), detail::any_grad({x}), [ix, inv_std](Tape& t, std::size_t self) {
    const Matrix& d = t.grad(self);
    const Matrix& y = t.value(self);
    Matrix& dx = t.grad(ix);
    const double n = static_cast<double>(d.cols());
    for (std::size_t r = 0; r < d.rows(); ++r) {
      double mean_d = 0.0, mean_dy = 0.0;
      for (std::size_t j = 0; j < d.cols(); ++j) {
        mean_d += d(r, j);
        mean_dy += d(r, j) * y(r, j);
      }
      mean_d /= n;
      mean_dy /= n;
      for (std::size_t j = 0; j < d.cols(); ++j) dx(r, j) += inv_std[r] * (d(r, j) - mean_d - y(r, j) * mean_dy);
    }
  });
}

/// tanh-approximated GELU.
inline Var gelu(Var x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double a = 0.044715;
  Matrix out = x.value();
  for (double& v : out.data()) v = 0.5 * v * (1.0 + std::tanh(c * (v + a * v * v * v)));
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), detail::any_grad({x}), [ix](Tape& t, std::size_t self) {
    const Matrix& d = t.grad(self);
    const Matrix& xv = t.value(ix);
    Matrix& dx = t.grad(ix);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double v = xv.data()[i];
      const double th = std::tanh(c * (v + a * v * v * v));
      const double dv = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * c * (1.0 + 3.0 * a * v * v);
      dx.data()[i] += d.data()[i] * dv;
    }
  });
}

/// Single-head scaled dot-product self-attention applied independently to
/// consecutive blocks of seq_len rows.
inline Var attention(Var q, Var k, Var v, std::size_t seq_len) {
  Tape& t = detail::same_tape(q, k);
  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const Matrix& vv = v.value();
  if (!qv.same_shape(kv) || qv.rows() != vv.rows() || seq_len == 0 || qv.rows() % seq_len != 0) {
    throw ShapeError("attention inputs " + qv.shape() + ", " + kv.shape() + ", " + vv.shape() +
                     " incompatible with sequence length " + std::to_string(seq_len));
  }
  const std::size_t batches = qv.rows() / seq_len;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(qv.cols()));
  auto probs = std::make_shared<std::vector<Matrix>>();
  Matrix out(qv.rows(), vv.cols());
  for (std::size_t b = 0; b < batches; ++b) {
    const std::size_t off = b * seq_len;
    Matrix p(seq_len, seq_len);
    for (std::size_t i = 0; i < seq_len; ++i) {
      std::vector<double> scores(seq_len);
      for (std::size_t j = 0; j < seq_len; ++j) scores[j] = dot(qv.row_span(off + i), kv.row_span(off + j)) * inv_sqrt;
      const auto row = softmax_temp(scores, 1.0);
      for (std::size_t j = 0; j < seq_len; ++j) p(i, j) = row[j];
      for (std::size_t j = 0; j < seq_len; ++j)
        for (std::size_t c = 0; c < vv.cols(); ++c) out(off + i, c) += row[j] * vv(off + j, c);
    }
    probs->push_back(std::move(p));
  }
  const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
  return t.record(std::move(out), detail::any_grad({q, k, v}),
                  [iq, ik, iv, seq_len, inv_sqrt, probs](Tape& t, std::size_t self) {
                    const Matrix& d = t.grad(self);
                    const Matrix& qv = t.value(iq);
                    const Matrix& kv = t.value(ik);
                    const Matrix& vv = t.value(iv);
                    const bool gq = t.requires_grad(iq), gk = t.requires_grad(ik), gv = t.requires_grad(iv);
                    for (std::size_t b = 0; b < probs->size(); ++b) {
                      const std::size_t off = b * seq_len;
                      const Matrix& p = (*probs)[b];
                      // dP = dO V^T, dV = P^T dO
                      Matrix dp(seq_len, seq_len);
                      for (std::size_t i = 0; i < seq_len; ++i)
                        for (std::size_t j = 0; j < seq_len; ++j) dp(i, j) = dot(d.row_span(off + i), vv.row_span(off + j));
                      if (gv) {
                        Matrix& dv = t.grad(iv);
                        for (std::size_t j = 0; j < seq_len; ++j)
                          for (std::size_t i = 0; i < seq_len; ++i)
                            for (std::size_t c = 0; c < d.cols(); ++c) dv(off + j, c) += p(i, j) * d(off + i, c);
                      }
                      Matrix ds(seq_len, seq_len);
                      for (std::size_t i = 0; i < seq_len; ++i) {
                        double inner = 0.0;
                        for (std::size_t j = 0; j < seq_len; ++j) inner += p(i, j) * dp(i, j);
                        for (std::size_t j = 0; j < seq_len; ++j) ds(i, j) = p(i, j) * (dp(i, j) - inner) * inv_sqrt;
                      }
                      if (gq) {
                        Matrix& dq = t.grad(iq);
                        for (std::size_t i = 0; i < seq_len; ++i)
                          for (std::size_t j = 0; j < seq_len; ++j)
                            for (std::size_t c = 0; c < qv.cols(); ++c) dq(off + i, c) += ds(i, j) * kv(off + j, c);
                      }
                      if (gk) {
                        Matrix& dk = t.grad(ik);
                        for (std::size_t i = 0; i < seq_len; ++i)
                          for (std::size_t j = 0; j < seq_len; ++j)
                            for (std::size_t c = 0; c < qv.cols(); ++c) dk(off + j, c) += ds(i, j) * qv(off + i, c);
                      }
                    }
                  });
}

/// Mean over consecutive blocks of seq_len rows: (B*S) x d -> B x d.
inline Var mean_pool(Var h, std::size_t seq_len) {
  const Matrix& hv = h.value();
  if (seq_len == 0) throw ContractError("mean_pool over an empty sequence");
  if (hv.rows() % seq_len != 0) throw ShapeError("rows of " + hv.shape() + " not a multiple of " + std::to_string(seq_len));
  const std::size_t batches = hv.rows() / seq_len;
  Matrix out(batches, hv.cols());
  for (std::size_t b = 0; b < batches; ++b) {
    for (std::size_t c = 0; c < hv.cols(); ++c) {
      double acc = 0.0;
      for (std::size_t s = 0; s < seq_len; ++s) acc += hv(b * seq_len + s, c);
      out(b, c) = acc / static_cast<double>(seq_len);
    }
  }
  const std::size_t ih = h.id();
  return h.tape().record(std::move(out), detail::any_grad({h}), [ih, seq_len](Tape& t, std::size_t self) {
    const Matrix& d = t.grad(self);
    Matrix& dh = t.grad(ih);
    const double inv = 1.0 / static_cast<double>(seq_len);
    for (std::size_t b = 0; b < d.rows(); ++b)
      for (std::size_t s = 0; s < seq_len; ++s)
        for (std::size_t c = 0; c < d.cols(); ++c) dh(b * seq_len + s, c) += d(b, c) * inv;
  });
}

/// Rows of a table selected by index: out(i, :) = table(idx[i], :).
inline Var gather_rows(Var table, const std::vector<std::size_t>& idx) {
  const Matrix& tv = table.value();
  if (idx.empty()) throw ContractError("gather_rows with no indices");
  Matrix out(idx.size(), tv.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= tv.rows()) throw IndexError("row index " + std::to_string(idx[i]) + " out of range for " + tv.shape());
    for (std::size_t c = 0; c < tv.cols(); ++c) out(i, c) = tv(idx[i], c);
  }
  const std::size_t it = table.id();
  return table.tape().record(std::move(out), detail::any_grad({table}), [it, idx](Tape& t, std::size_t self) {
    const Matrix& d = t.grad(self);
    Matrix& dt = t.grad(it);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < d.cols(); ++c) dt(idx[i], c) += d(i, c);
  });
}

/// Mean cross-entropy of each logits row against its target class.
inline Var cross_entropy_mean(Var logits, const std::vector<std::size_t>& targets) {
  const Matrix& lv = logits.value();
  if (targets.size() != lv.rows()) throw ShapeError("one target per logits row required");
  double total = 0.0;
  for (std::size_t r = 0; r < lv.rows(); ++r) total += cross_entropy(lv.row_span(r), targets[r]);
  const double n = static_cast<double>(lv.rows());
  const std::size_t il = logits.id();
  return logits.tape().record(Matrix(1, 1, total / n), detail::any_grad({logits}),
                              [il, targets, n](Tape& t, std::size_t self) {
                                const double g = t.grad(self)(0, 0) / n;
                                const Matrix& lv = t.value(il);
                                Matrix& dl = t.grad(il);
                                for (std::size_t r = 0; r < lv.rows(); ++r) {
                                  const auto p = softmax_temp(lv.row_span(r), 1.0);
                                  for (std::size_t c = 0; c < p.size(); ++c) {
                                    dl(r, c) += g * (p[c] - (c == targets[r] ? 1.0 : 0.0));
                                  }
                                }
                              });
}

/// Cosine similarity between every row of f and every row of e: M x T.
inline Var cosine_similarity_matrix(Var f, Var e) {
  Tape& t = detail::same_tape(f, e);
  const Matrix& fv = f.value();
  const Matrix& ev = e.value();
  if (fv.cols() != ev.cols()) throw ShapeError("cosine similarity of " + fv.shape() + " rows with " + ev.shape() + " rows");
  std::vector<double> fn(fv.rows()), en(ev.rows());
  for (std::size_t i = 0; i < fv.rows(); ++i) {
    fn[i] = norm(fv.row_span(i));
    if (fn[i] == 0.0) throw DegenerateInputError("zero-norm feature row " + std::to_string(i));
  }
  for (std::size_t k = 0; k < ev.rows(); ++k) {
    en[k] = norm(ev.row_span(k));
    if (en[k] == 0.0) throw DegenerateInputError("zero-norm prototype row " + std::to_string(k));
  }
  Matrix out(fv.rows(), ev.rows());
  for (std::size_t i = 0; i < fv.rows(); ++i)
    for (std::size_t k = 0; k < ev.rows(); ++k) out(i, k) = dot(fv.row_span(i), ev.row_span(k)) / (fn[i] * en[k]);
  const std::size_t iF = f.id(), iE = e.id();
  return t.record(std::move(out), detail::any_grad({f, e}), [iF, iE, fn, en](Tape& t, std::size_t self) {
    const Matrix& d = t.grad(self);
    const Matrix& s = t.value(self);
    const Matrix& fv = t.value(iF);
    const Matrix& ev = t.value(iE);
    const bool gf = t.requires_grad(iF), ge = t.requires_grad(iE);
    for (std::size_t i = 0; i < fv.rows(); ++i) {
      for (std::size_t k = 0; k < ev.rows(); ++k) {
        const double g = d(i, k);
        if (g == 0.0) continue;
        if (gf) {
          Matrix& df = t.grad(iF);
          for (std::size_t c = 0; c < fv.cols(); ++c)
            df(i, c) += g * (ev(k, c) / (fn[i] * en[k]) - s(i, k) * fv(i, c) / (fn[i] * fn[i]));
        }
        if (ge) {
          Matrix& de = t.grad(iE);
          for (std::size_t c = 0; c < ev.cols(); ++c)
            de(k, c) += g * (fv(i, c) / (fn[i] * en[k]) - s(i, k) * ev(k, c) / (en[k] * en[k]));
        }
      }
    }
  });
}

}  // namespace ad
}  // namespace ept
