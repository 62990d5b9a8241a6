#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "tandem/mat.hpp"
#include "tandem/rng.hpp"

namespace tandem {

// Named trainable tensor. Gradients accumulate across tape evaluations until
// zero_grad(), which is what lets a training step replay one sample at a time
// on a fresh tape and still produce batch gradients.
template <class S>
struct ParamT {
  std::string name;
  MatT<S> value;
  MatT<S> grad;
  bool trainable = true;

  void init(std::string n, int rows, int cols) {
    name = std::move(n);
    value = MatT<S>(rows, cols);
    grad = MatT<S>(rows, cols);
  }

  void init_gaussian(std::string n, int rows, int cols, Rng& rng, double stddev) {
    init(std::move(n), rows, cols);
    for (std::size_t i = 0; i < value.size(); ++i)
      value.data()[i] = static_cast<S>(rng.gaussian(0.0, stddev));
  }

  void init_const(std::string n, int rows, int cols, S v) {
    init(std::move(n), rows, cols);
    value.fill(v);
  }

  void zero_grad() { grad.set_zero(); }
};

using Param = ParamT<double>;

// Reverse-mode tape. Ops record closures in construction order; backward
// walks them strictly in reverse, so gradient accumulation order is a pure
// function of graph construction order and results are bit-reproducible.
//
// Inference tapes skip closure construction entirely (no grad memory, no
// aux caches), which is the forward-only path the scheduler benchmarks.
template <class S>
class TapeT {
 public:
  enum class Mode { train, infer };
  using Id = int;

  explicit TapeT(Mode m = Mode::train) : mode_(m) {}

  bool training() const { return mode_ == Mode::train; }
  int node_count() const { return static_cast<int>(nodes_.size()); }

  const MatT<S>& value(Id id) const { return at(id).value; }

  // Zero matrix if the node never received gradient.
  MatT<S> grad_of(Id id) const {
    const Node& n = at(id);
    if (n.grad.empty()) return MatT<S>(n.value.rows(), n.value.cols());
    return n.grad;
  }

  Id input(MatT<S> v) { return push(std::move(v)); }

  Id param(ParamT<S>& p) {
    const Id id = push(p.value);
    if (training() && p.trainable) {
      ParamT<S>* pp = &p;
      set_back(id, [id, pp](TapeT& t) {
        const MatT<S>& g = t.at(id).grad;
        for (std::size_t i = 0; i < g.size(); ++i) pp->grad.data()[i] += g.data()[i];
      });
    }
    return id;
  }

  Id add(Id a, Id b) {
    const Id id = push(tandem::add(value(a), value(b)));
    if (training())
      set_back(id, [id, a, b](TapeT& t) {
        t.accumulate(a, t.at(id).grad);
        t.accumulate(b, t.at(id).grad);
      });
    return id;
  }

  Id sub(Id a, Id b) {
    const Id id = push(tandem::sub(value(a), value(b)));
    if (training())
      set_back(id, [id, a, b](TapeT& t) {
        t.accumulate(a, t.at(id).grad);
        t.accumulate_scaled(b, t.at(id).grad, S(-1));
      });
    return id;
  }

  Id hadamard(Id a, Id b) {
    const Id id = push(tandem::hadamard(value(a), value(b)));
    if (training())
      set_back(id, [id, a, b](TapeT& t) {
        t.accumulate(a, tandem::hadamard(t.at(id).grad, t.value(b)));
        t.accumulate(b, tandem::hadamard(t.at(id).grad, t.value(a)));
      });
    return id;
  }

  Id scale(Id a, S s) {
    const Id id = push(tandem::scale(value(a), s));
    if (training())
      set_back(id, [id, a, s](TapeT& t) { t.accumulate_scaled(a, t.at(id).grad, s); });
    return id;
  }

  Id matmul(Id a, Id b) {
    const Id id = push(tandem::matmul(value(a), value(b)));
    if (training())
      set_back(id, [id, a, b](TapeT& t) {
        const MatT<S>& g = t.at(id).grad;
        t.accumulate(a, tandem::matmul_nt(g, t.value(b)));
        t.accumulate(b, tandem::matmul_tn(t.value(a), g));
      });
    return id;
  }

  // C = A * B^T.
  Id matmul_nt(Id a, Id b) {
    const Id id = push(tandem::matmul_nt(value(a), value(b)));
    if (training())
      set_back(id, [id, a, b](TapeT& t) {
        const MatT<S>& g = t.at(id).grad;
        t.accumulate(a, tandem::matmul(g, t.value(b)));
        t.accumulate(b, tandem::matmul_tn(g, t.value(a)));
      });
    return id;
  }

  Id add_rowvec(Id x, Id r) {
    const Id id = push(tandem::add_rowvec(value(x), value(r)));
    if (training())
      set_back(id, [id, x, r](TapeT& t) {
        const MatT<S>& g = t.at(id).grad;
        t.accumulate(x, g);
        MatT<S> dr(1, g.cols());
        for (int i = 0; i < g.rows(); ++i)
          for (int j = 0; j < g.cols(); ++j) dr(0, j) += g(i, j);
        t.accumulate(r, dr);
      });
    return id;
  }

  // y(i, j) = x(i, j) * r(0, j).
  Id mul_rowvec(Id x, Id r) {
    const MatT<S>& xv = value(x);
    const MatT<S>& rv = value(r);
    if (rv.rows() != 1 || rv.cols() != xv.cols())
      throw ShapeError("mul_rowvec: incompatible shapes " + xv.shape_str() + " and " +
                       rv.shape_str());
    MatT<S> y(xv.rows(), xv.cols());
    for (int i = 0; i < xv.rows(); ++i)
      for (int j = 0; j < xv.cols(); ++j) y(i, j) = xv(i, j) * rv(0, j);
    const Id id = push(std::move(y));
    if (training())
      set_back(id, [id, x, r](TapeT& t) {
        const MatT<S>& g = t.at(id).grad;
        const MatT<S>& xv2 = t.value(x);
        const MatT<S>& rv2 = t.value(r);
        MatT<S> dx(xv2.rows(), xv2.cols());
        MatT<S> dr(1, rv2.cols());
        for (int i = 0; i < g.rows(); ++i)
          for (int j = 0; j < g.cols(); ++j) {
            dx(i, j) = g(i, j) * rv2(0, j);
            dr(0, j) += g(i, j) * xv2(i, j);
          }
        t.accumulate(x, dx);
        t.accumulate(r, dr);
      });
    return id;
  }

  Id slice_rows(Id a, int r0, int n) {
    const Id id = push(tandem::slice_rows(value(a), r0, n));
    if (training())
      set_back(id, [id, a, r0](TapeT& t) {
        const MatT<S>& g = t.at(id).grad;
        t.accumulate_rows(a, r0, g);
      });
    return id;
  }

  Id slice_cols(Id a, int c0, int n) {
    const Id id = push(tandem::slice_cols(value(a), c0, n));
    if (training())
      set_back(id, [id, a, c0](TapeT& t) {
        const MatT<S>& g = t.at(id).grad;
        t.accumulate_cols(a, c0, g);
      });
    return id;
  }

  Id concat_rows(const std::vector<Id>& parts) {
    std::vector<const MatT<S>*> vs;
    vs.reserve(parts.size());
    for (Id p : parts) vs.push_back(&value(p));
    const Id id = push(tandem::concat_rows(vs));
    if (training())
      set_back(id, [id, parts](TapeT& t) {
        const MatT<S>& g = t.at(id).grad;
        int r = 0;
        for (Id p : parts) {
          const int pr = t.value(p).rows();
          if (pr > 0) t.accumulate(p, tandem::slice_rows(g, r, pr));
          r += pr;
        }
      });
    return id;
  }

  Id concat_cols(const std::vector<Id>& parts) {
    std::vector<const MatT<S>*> vs;
    vs.reserve(parts.size());
    for (Id p : parts) vs.push_back(&value(p));
    const Id id = push(tandem::concat_cols(vs));
    if (training())
      set_back(id, [id, parts](TapeT& t) {
        const MatT<S>& g = t.at(id).grad;
        int c = 0;
        for (Id p : parts) {
          const int pc = t.value(p).cols();
          if (pc > 0) t.accumulate(p, tandem::slice_cols(g, c, pc));
          c += pc;
        }
      });
    return id;
  }

  // y = x * s where s is a 1x1 node (learned scalar gate).
  Id mul_scalar_node(Id x, Id s) {
    const MatT<S>& sv = value(s);
    if (sv.rows() != 1 || sv.cols() != 1)
      throw ShapeError("mul_scalar_node: gate must be 1x1, got " + sv.shape_str());
    const Id id = push(tandem::scale(value(x), sv(0, 0)));
    if (training())
      set_back(id, [id, x, s](TapeT& t) {
        const MatT<S>& g = t.at(id).grad;
        const S sval = t.value(s)(0, 0);
        t.accumulate_scaled(x, g, sval);
        const MatT<S>& xv = t.value(x);
        MatT<S> ds(1, 1);
        for (std::size_t i = 0; i < xv.size(); ++i)
          ds(0, 0) += g.data()[i] * xv.data()[i];
        t.accumulate(s, ds);
      });
    return id;
  }

  // mask must outlive the tape; the model owns its masks.
  Id masked_softmax(Id scores, const BoolMat* mask) {
    const Id id = push(tandem::masked_softmax(value(scores), *mask));
    if (training())
      set_back(id, [id, scores, mask](TapeT& t) {
        const MatT<S>& g = t.at(id).grad;
        const MatT<S>& p = t.at(id).value;
        MatT<S> ds(p.rows(), p.cols());
        for (int i = 0; i < p.rows(); ++i) {
          S dot = 0;
          for (int j = 0; j < p.cols(); ++j) dot += g(i, j) * p(i, j);
          const std::uint8_t* mi = mask->row(i);
          for (int j = 0; j < p.cols(); ++j)
            ds(i, j) = mi[j] ? p(i, j) * (g(i, j) - dot) : S(0);
        }
        t.accumulate(scores, ds);
      });
    return id;
  }

  Id layernorm(Id x, Id gain, Id bias, S eps) {
    MatT<S> mean, rstd;
    MatT<S> y = tandem::layernorm(value(x), value(gain), value(bias), eps, &mean, &rstd);
    const Id id = push(std::move(y));
    if (training()) {
      // xhat is recoverable from x, mean, rstd; cache it to keep backward simple.
      auto aux = std::make_shared<std::pair<MatT<S>, MatT<S>>>();
      const MatT<S>& xv = value(x);
      MatT<S> xhat(xv.rows(), xv.cols());
      for (int i = 0; i < xv.rows(); ++i)
        for (int j = 0; j < xv.cols(); ++j)
          xhat(i, j) = (xv(i, j) - mean(i, 0)) * rstd(i, 0);
      aux->first = std::move(xhat);
      aux->second = std::move(rstd);
      set_back(id, [id, x, gain, bias, aux](TapeT& t) {
        const MatT<S>& g = t.at(id).grad;
        const MatT<S>& xh = aux->first;
        const MatT<S>& rs = aux->second;
        const MatT<S>& gv = t.value(gain);
        const int c = g.cols();
        MatT<S> dgain(1, c);
        MatT<S> dbias(1, c);
        MatT<S> dx(g.rows(), c);
        for (int i = 0; i < g.rows(); ++i) {
          S sum_gh = 0;
          S sum_gh_xh = 0;
          for (int j = 0; j < c; ++j) {
            const S gh = g(i, j) * gv(0, j);
            sum_gh += gh;
            sum_gh_xh += gh * xh(i, j);
            dgain(0, j) += g(i, j) * xh(i, j);
            dbias(0, j) += g(i, j);
          }
          const S inv_c = S(1) / static_cast<S>(c);
          for (int j = 0; j < c; ++j) {
            const S gh = g(i, j) * gv(0, j);
            dx(i, j) = rs(i, 0) * (gh - inv_c * sum_gh - inv_c * xh(i, j) * sum_gh_xh);
          }
        }
        t.accumulate(x, dx);
        t.accumulate(gain, dgain);
        t.accumulate(bias, dbias);
      });
    }
    return id;
  }

  Id gelu(Id x) {
    MatT<S> th;
    MatT<S> y = tandem::gelu(value(x), training() ? &th : nullptr);
    const Id id = push(std::move(y));
    if (training()) {
      auto aux = std::make_shared<MatT<S>>(std::move(th));
      set_back(id, [id, x, aux](TapeT& t) {
        const MatT<S>& g = t.at(id).grad;
        const MatT<S>& xv = t.value(x);
        const MatT<S>& tv = *aux;
        constexpr double kC = 0.7978845608028654;
        MatT<S> dx(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.size(); ++i) {
          const S v = xv.data()[i];
          const S th_v = tv.data()[i];
          const S sech2 = S(1) - th_v * th_v;
          const S du = static_cast<S>(kC) * (S(1) + S(3) * S(0.044715) * v * v);
          const S dy = S(0.5) * (S(1) + th_v) + S(0.5) * v * sech2 * du;
          dx.data()[i] = g.data()[i] * dy;
        }
        t.accumulate(x, dx);
      });
    }
    return id;
  }

  Id tanh_op(Id x) {
    const Id id = push(tandem::tanh_mat(value(x)));
    if (training())
      set_back(id, [id, x](TapeT& t) {
        const MatT<S>& g = t.at(id).grad;
        const MatT<S>& y = t.at(id).value;
        MatT<S> dx(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.size(); ++i)
          dx.data()[i] = g.data()[i] * (S(1) - y.data()[i] * y.data()[i]);
        t.accumulate(x, dx);
      });
    return id;
  }

  Id sigmoid_op(Id x) {
    const Id id = push(tandem::sigmoid_mat(value(x)));
    if (training())
      set_back(id, [id, x](TapeT& t) {
        const MatT<S>& g = t.at(id).grad;
        const MatT<S>& y = t.at(id).value;
        MatT<S> dx(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.size(); ++i)
          dx.data()[i] = g.data()[i] * y.data()[i] * (S(1) - y.data()[i]);
        t.accumulate(x, dx);
      });
    return id;
  }

  Id mean_rows(Id x) {
    const Id id = push(tandem::mean_rows(value(x)));
    if (training())
      set_back(id, [id, x](TapeT& t) {
        const MatT<S>& g = t.at(id).grad;
        const MatT<S>& xv = t.value(x);
        const S inv = S(1) / static_cast<S>(xv.rows());
        MatT<S> dx(xv.rows(), xv.cols());
        for (int i = 0; i < xv.rows(); ++i)
          for (int j = 0; j < xv.cols(); ++j) dx(i, j) = g(0, j) * inv;
        t.accumulate(x, dx);
      });
    return id;
  }

  Id broadcast_row(Id r, int rows) {
    const Id id = push(tandem::broadcast_row(value(r), rows));
    if (training())
      set_back(id, [id, r](TapeT& t) {
        const MatT<S>& g = t.at(id).grad;
        MatT<S> dr(1, g.cols());
        for (int i = 0; i < g.rows(); ++i)
          for (int j = 0; j < g.cols(); ++j) dr(0, j) += g(i, j);
        t.accumulate(r, dr);
      });
    return id;
  }

  // Summed token-wise negative log-likelihood over rows of logits.
  // targets[i] indexes the class of row i. Uniform logits over V classes
  // give exactly rows * ln(V).
  Id nll_tokenwise(Id logits, std::vector<int> targets) {
    const MatT<S>& z = value(logits);
    if (static_cast<int>(targets.size()) != z.rows())
      throw ShapeError("nll_tokenwise: " + std::to_string(targets.size()) +
                       " targets for logits " + z.shape_str());
    auto probs = std::make_shared<MatT<S>>(z.rows(), z.cols());
    S loss = 0;
    for (int i = 0; i < z.rows(); ++i) {
      const int t_i = targets[i];
      if (t_i < 0 || t_i >= z.cols())
        throw ShapeError("nll_tokenwise: target " + std::to_string(t_i) +
                         " out of range for " + z.shape_str());
      const S* zi = z.row(i);
      S mx = zi[0];
      for (int j = 1; j < z.cols(); ++j) mx = std::max(mx, zi[j]);
      S denom = 0;
      for (int j = 0; j < z.cols(); ++j) denom += std::exp(zi[j] - mx);
      const S log_denom = std::log(denom);
      for (int j = 0; j < z.cols(); ++j)
        (*probs)(i, j) = std::exp(zi[j] - mx) / denom;
      loss -= (zi[t_i] - mx - log_denom);
    }
    MatT<S> out(1, 1);
    out(0, 0) = loss;
    check_finite(out, "nll_tokenwise");
    const Id id = push(std::move(out));
    if (training()) {
      auto tg = std::make_shared<std::vector<int>>(std::move(targets));
      set_back(id, [id, logits, probs, tg](TapeT& t) {
        const S g = t.at(id).grad(0, 0);
        MatT<S> dz = *probs;
        for (int i = 0; i < dz.rows(); ++i) dz(i, (*tg)[i]) -= S(1);
        for (std::size_t i = 0; i < dz.size(); ++i) dz.data()[i] *= g;
        t.accumulate(logits, dz);
      });
    }
    return id;
  }

  // Mean over rows of the L1 norm of (pred - target): (1/R) sum_i |diff_i|_1.
  Id l1_mean(Id pred, MatT<S> target) {
    const MatT<S>& p = value(pred);
    if (!p.same_shape(target))
      throw ShapeError("l1_mean: pred " + p.shape_str() + " vs target " + target.shape_str());
    const S inv_r = S(1) / static_cast<S>(p.rows());
    S loss = 0;
    for (std::size_t i = 0; i < p.size(); ++i) loss += std::abs(p.data()[i] - target.data()[i]);
    MatT<S> out(1, 1);
    out(0, 0) = loss * inv_r;
    const Id id = push(std::move(out));
    if (training()) {
      auto tg = std::make_shared<MatT<S>>(std::move(target));
      set_back(id, [id, pred, tg, inv_r](TapeT& t) {
        const S g = t.at(id).grad(0, 0) * inv_r;
        const MatT<S>& pv = t.value(pred);
        MatT<S> dp(pv.rows(), pv.cols());
        for (std::size_t i = 0; i < pv.size(); ++i) {
          const S d = pv.data()[i] - tg->data()[i];
          dp.data()[i] = d > 0 ? g : (d < 0 ? -g : S(0));
        }
        t.accumulate(pred, dp);
      });
    }
    return id;
  }

  // Scalar projection sum(x .* w); the finite-difference harness uses this to
  // scalarize arbitrary outputs.
  Id weighted_sum(Id x, MatT<S> w) {
    const MatT<S>& xv = value(x);
    if (!xv.same_shape(w))
      throw ShapeError("weighted_sum: x " + xv.shape_str() + " vs w " + w.shape_str());
    S acc = 0;
    for (std::size_t i = 0; i < xv.size(); ++i) acc += xv.data()[i] * w.data()[i];
    MatT<S> out(1, 1);
    out(0, 0) = acc;
    const Id id = push(std::move(out));
    if (training()) {
      auto wp = std::make_shared<MatT<S>>(std::move(w));
      set_back(id, [id, x, wp](TapeT& t) {
        const S g = t.at(id).grad(0, 0);
        t.accumulate(x, tandem::scale(*wp, g));
      });
    }
    return id;
  }

  void backward(Id loss) {
    if (!training()) throw Error("tape: backward() called on an inference tape");
    if (ran_backward_) throw Error("tape: backward() already ran; reset() first");
    const MatT<S>& lv = at(loss).value;
    if (lv.rows() != 1 || lv.cols() != 1)
      throw ShapeError("tape: backward target must be 1x1, got " + lv.shape_str());
    ensure_grad(loss);
    at(loss).grad(0, 0) = S(1);
    for (Id i = loss; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.grad.empty() || !n.back) continue;
      n.back(*this);
    }
    ran_backward_ = true;
  }

  void reset() {
    nodes_.clear();
    ran_backward_ = false;
  }

 private:
  struct Node {
    MatT<S> value;
    MatT<S> grad;
    std::function<void(TapeT&)> back;
  };

  Node& at(Id id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& at(Id id) const { return nodes_[static_cast<std::size_t>(id)]; }

  Id push(MatT<S> v) {
    nodes_.push_back(Node{std::move(v), {}, {}});
    return static_cast<Id>(nodes_.size()) - 1;
  }

  void set_back(Id id, std::function<void(TapeT&)> fn) { at(id).back = std::move(fn); }

  void ensure_grad(Id id) {
    Node& n = at(id);
    if (n.grad.empty() && n.value.size() > 0)
      n.grad = MatT<S>(n.value.rows(), n.value.cols());
  }

  void accumulate(Id id, const MatT<S>& g) {
    ensure_grad(id);
    Node& n = at(id);
    for (std::size_t i = 0; i < g.size(); ++i) n.grad.data()[i] += g.data()[i];
  }

  void accumulate_scaled(Id id, const MatT<S>& g, S s) {
    ensure_grad(id);
    Node& n = at(id);
    for (std::size_t i = 0; i < g.size(); ++i) n.grad.data()[i] += s * g.data()[i];
  }

  void accumulate_rows(Id id, int r0, const MatT<S>& g) {
    ensure_grad(id);
    Node& n = at(id);
    for (int i = 0; i < g.rows(); ++i) {
      S* dst = n.grad.row(r0 + i);
      const S* src = g.row(i);
      for (int j = 0; j < g.cols(); ++j) dst[j] += src[j];
    }
  }

  void accumulate_cols(Id id, int c0, const MatT<S>& g) {
    ensure_grad(id);
    Node& n = at(id);
    for (int i = 0; i < g.rows(); ++i) {
      S* dst = n.grad.row(i) + c0;
      const S* src = g.row(i);
      for (int j = 0; j < g.cols(); ++j) dst[j] += src[j];
    }
  }

  Mode mode_;
  std::vector<Node> nodes_;
  bool ran_backward_ = false;
};

using Tape = TapeT<double>;

// y = x * W + b with W (in x out), b (1 x out).
template <class S>
typename TapeT<S>::Id affine(TapeT<S>& t, typename TapeT<S>::Id x, typename TapeT<S>::Id w,
                             typename TapeT<S>::Id b) {
  return t.add_rowvec(t.matmul(x, w), b);
}

}  // namespace tandem
