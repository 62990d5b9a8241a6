#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "tandem/error.hpp"
#include "tandem/hash.hpp"

namespace tandem {

// Global toggle for post-kernel finite checks. On by default; the latency
// benchmark path switches it off before spawning workers (it is read-only
// while threads run).
struct NumericChecks {
  static inline bool enabled = true;
};

// Dense row-major matrix templated on scalar type. double is the reference
// precision used by training and the test suite; float is instantiated for
// the inference benchmark path.
template <class S>
class MatT {
 public:
  MatT() = default;
  MatT(int rows, int cols) : rows_(rows), cols_(cols), data_(check_dims(rows, cols)) {}

  static MatT filled(int rows, int cols, S v) {
    MatT m(rows, cols);
    m.fill(v);
    return m;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  S* row(int i) { return data_.data() + static_cast<std::size_t>(i) * cols_; }
  const S* row(int i) const { return data_.data() + static_cast<std::size_t>(i) * cols_; }

  S& operator()(int i, int j) { return data_[static_cast<std::size_t>(i) * cols_ + j]; }
  const S& operator()(int i, int j) const {
    return data_[static_cast<std::size_t>(i) * cols_ + j];
  }

  void fill(S v) { std::fill(data_.begin(), data_.end(), v); }
  void set_zero() { fill(S(0)); }

  std::string shape_str() const {
    std::ostringstream os;
    os << rows_ << "x" << cols_;
    return os.str();
  }

  bool same_shape(const MatT& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

 private:
  static std::size_t check_dims(int rows, int cols) {
    if (rows < 0 || cols < 0) throw ShapeError("matrix dims must be non-negative");
    return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  }

  int rows_ = 0;
  int cols_ = 0;
  std::vector<S> data_;
};

using Mat = MatT<double>;
using Mat32 = MatT<float>;

// Attention mask: permitted(i, j) as bytes, row-major.
class BoolMat {
 public:
  BoolMat() = default;
  BoolMat(int rows, int cols)
      : rows_(rows), cols_(cols),
        data_(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), 0) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::uint8_t& operator()(int i, int j) {
    return data_[static_cast<std::size_t>(i) * cols_ + j];
  }
  std::uint8_t operator()(int i, int j) const {
    return data_[static_cast<std::size_t>(i) * cols_ + j];
  }
  const std::uint8_t* row(int i) const {
    return data_.data() + static_cast<std::size_t>(i) * cols_;
  }
  bool operator==(const BoolMat& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<std::uint8_t> data_;
};

namespace detail {
template <class S>
[[noreturn]] void shape_fail(const char* op, const MatT<S>& a, const MatT<S>& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " +
                   b.shape_str());
}
}  // namespace detail

template <class S>
void check_finite(const MatT<S>& m, const char* op) {
  if (!NumericChecks::enabled) return;
  const S* p = m.data();
  for (std::size_t i = 0, n = m.size(); i < n; ++i) {
    if (!std::isfinite(p[i])) {
      throw NumericError(std::string(op) + ": non-finite value in " + m.shape_str() +
                         " output at flat index " + std::to_string(i));
    }
  }
}

// C = A * B. Inner loop ordering (i, k, j) keeps both B and C rows streaming.
template <class S>
MatT<S> matmul(const MatT<S>& a, const MatT<S>& b) {
  if (a.cols() != b.rows()) detail::shape_fail("matmul", a, b);
  MatT<S> c(a.rows(), b.cols());
  const int n = b.cols();
  for (int i = 0; i < a.rows(); ++i) {
    S* ci = c.row(i);
    const S* ai = a.row(i);
    for (int k = 0; k < a.cols(); ++k) {
      const S aik = ai[k];
      const S* bk = b.row(k);
      for (int j = 0; j < n; ++j) ci[j] += aik * bk[j];
    }
  }
  check_finite(c, "matmul");
  return c;
}

// C = A * B^T. B is accessed row-wise, so this is the cache-friendly form
// for attention scores (Q * K^T).
template <class S>
MatT<S> matmul_nt(const MatT<S>& a, const MatT<S>& b) {
  if (a.cols() != b.cols()) detail::shape_fail("matmul_nt", a, b);
  MatT<S> c(a.rows(), b.rows());
  for (int i = 0; i < a.rows(); ++i) {
    const S* ai = a.row(i);
    S* ci = c.row(i);
    for (int j = 0; j < b.rows(); ++j) {
      const S* bj = b.row(j);
      S acc = 0;
      for (int k = 0; k < a.cols(); ++k) acc += ai[k] * bj[k];
      ci[j] = acc;
    }
  }
  check_finite(c, "matmul_nt");
  return c;
}

// C = A^T * B. Used by backward passes for weight gradients.
template <class S>
MatT<S> matmul_tn(const MatT<S>& a, const MatT<S>& b) {
  if (a.rows() != b.rows()) detail::shape_fail("matmul_tn", a, b);
  MatT<S> c(a.cols(), b.cols());
  const int n = b.cols();
  for (int k = 0; k < a.rows(); ++k) {
    const S* ak = a.row(k);
    const S* bk = b.row(k);
    for (int i = 0; i < a.cols(); ++i) {
      const S aki = ak[i];
      S* ci = c.row(i);
      for (int j = 0; j < n; ++j) ci[j] += aki * bk[j];
    }
  }
  check_finite(c, "matmul_tn");
  return c;
}

template <class S>
MatT<S> add(const MatT<S>& a, const MatT<S>& b) {
  if (!a.same_shape(b)) detail::shape_fail("add", a, b);
  MatT<S> c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] + b.data()[i];
  return c;
}

template <class S>
MatT<S> sub(const MatT<S>& a, const MatT<S>& b) {
  if (!a.same_shape(b)) detail::shape_fail("sub", a, b);
  MatT<S> c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] - b.data()[i];
  return c;
}

template <class S>
MatT<S> hadamard(const MatT<S>& a, const MatT<S>& b) {
  if (!a.same_shape(b)) detail::shape_fail("hadamard", a, b);
  MatT<S> c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] * b.data()[i];
  return c;
}

template <class S>
MatT<S> scale(const MatT<S>& a, S s) {
  MatT<S> c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] * s;
  check_finite(c, "scale");
  return c;
}

// x + broadcast row vector (1 x c).
template <class S>
MatT<S> add_rowvec(const MatT<S>& x, const MatT<S>& r) {
  if (r.rows() != 1 || r.cols() != x.cols()) detail::shape_fail("add_rowvec", x, r);
  MatT<S> c(x.rows(), x.cols());
  const S* rv = r.row(0);
  for (int i = 0; i < x.rows(); ++i) {
    const S* xi = x.row(i);
    S* ci = c.row(i);
    for (int j = 0; j < x.cols(); ++j) ci[j] = xi[j] + rv[j];
  }
  return c;
}

template <class S>
MatT<S> transpose(const MatT<S>& a) {
  MatT<S> c(a.cols(), a.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) c(j, i) = a(i, j);
  return c;
}

template <class S>
MatT<S> slice_rows(const MatT<S>& a, int r0, int n) {
  if (r0 < 0 || n < 0 || r0 + n > a.rows())
    throw ShapeError("slice_rows: [" + std::to_string(r0) + ", " + std::to_string(r0 + n) +
                     ") out of " + a.shape_str());
  MatT<S> c(n, a.cols());
  std::memcpy(c.data(), a.row(r0), static_cast<std::size_t>(n) * a.cols() * sizeof(S));
  return c;
}

template <class S>
MatT<S> slice_cols(const MatT<S>& a, int c0, int n) {
  if (c0 < 0 || n < 0 || c0 + n > a.cols())
    throw ShapeError("slice_cols: [" + std::to_string(c0) + ", " + std::to_string(c0 + n) +
                     ") out of " + a.shape_str());
  MatT<S> c(a.rows(), n);
  for (int i = 0; i < a.rows(); ++i)
    std::memcpy(c.row(i), a.row(i) + c0, static_cast<std::size_t>(n) * sizeof(S));
  return c;
}

template <class S>
MatT<S> concat_rows(const std::vector<const MatT<S>*>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: empty part list");
  int rows = 0;
  const int cols = parts[0]->cols();
  for (const auto* p : parts) {
    if (p->cols() != cols) detail::shape_fail("concat_rows", *parts[0], *p);
    rows += p->rows();
  }
  MatT<S> c(rows, cols);
  int r = 0;
  for (const auto* p : parts) {
    if (p->rows() > 0)
      std::memcpy(c.row(r), p->data(),
                  static_cast<std::size_t>(p->rows()) * cols * sizeof(S));
    r += p->rows();
  }
  return c;
}

template <class S>
MatT<S> concat_cols(const std::vector<const MatT<S>*>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: empty part list");
  const int rows = parts[0]->rows();
  int cols = 0;
  for (const auto* p : parts) {
    if (p->rows() != rows) detail::shape_fail("concat_cols", *parts[0], *p);
    cols += p->cols();
  }
  MatT<S> c(rows, cols);
  for (int i = 0; i < rows; ++i) {
    S* ci = c.row(i);
    int off = 0;
    for (const auto* p : parts) {
      std::memcpy(ci + off, p->row(i), static_cast<std::size_t>(p->cols()) * sizeof(S));
      off += p->cols();
    }
  }
  return c;
}

// Row-wise softmax restricted to permitted entries. Forbidden entries get
// exactly 0. Uses the usual max-shift for stability; a row with nothing
// permitted is a layout bug upstream and is rejected.
template <class S>
MatT<S> masked_softmax(const MatT<S>& scores, const BoolMat& mask) {
  if (scores.rows() != mask.rows() || scores.cols() != mask.cols())
    throw ShapeError("masked_softmax: scores " + scores.shape_str() + " vs mask " +
                     std::to_string(mask.rows()) + "x" + std::to_string(mask.cols()));
  MatT<S> out(scores.rows(), scores.cols());
  for (int i = 0; i < scores.rows(); ++i) {
    const S* si = scores.row(i);
    const std::uint8_t* mi = mask.row(i);
    S* oi = out.row(i);
    S mx = -std::numeric_limits<S>::infinity();
    for (int j = 0; j < scores.cols(); ++j)
      if (mi[j] && si[j] > mx) mx = si[j];
    if (mx == -std::numeric_limits<S>::infinity())
      throw LayoutError("masked_softmax: row " + std::to_string(i) +
                        " has no permitted entries");
    S denom = 0;
    for (int j = 0; j < scores.cols(); ++j) {
      if (mi[j]) {
        const S e = std::exp(si[j] - mx);
        oi[j] = e;
        denom += e;
      } else {
        oi[j] = 0;
      }
    }
    const S inv = S(1) / denom;
    for (int j = 0; j < scores.cols(); ++j) oi[j] *= inv;
  }
  check_finite(out, "masked_softmax");
  return out;
}

// LayerNorm over the last dimension. Returns the normalized matrix and, via
// out parameters, the per-row mean and reciprocal stddev needed by backward.
template <class S>
MatT<S> layernorm(const MatT<S>& x, const MatT<S>& gain, const MatT<S>& bias, S eps,
                  MatT<S>* mean_out = nullptr, MatT<S>* rstd_out = nullptr) {
  if (gain.rows() != 1 || gain.cols() != x.cols()) detail::shape_fail("layernorm", x, gain);
  if (bias.rows() != 1 || bias.cols() != x.cols()) detail::shape_fail("layernorm", x, bias);
  MatT<S> out(x.rows(), x.cols());
  MatT<S> mean(x.rows(), 1);
  MatT<S> rstd(x.rows(), 1);
  const int c = x.cols();
  for (int i = 0; i < x.rows(); ++i) {
    const S* xi = x.row(i);
    S mu = 0;
    for (int j = 0; j < c; ++j) mu += xi[j];
    mu /= static_cast<S>(c);
    S var = 0;
    for (int j = 0; j < c; ++j) {
      const S d = xi[j] - mu;
      var += d * d;
    }
    var /= static_cast<S>(c);
    const S rs = S(1) / std::sqrt(var + eps);
    mean(i, 0) = mu;
    rstd(i, 0) = rs;
    S* oi = out.row(i);
    const S* g = gain.row(0);
    const S* b = bias.row(0);
    for (int j = 0; j < c; ++j) oi[j] = (xi[j] - mu) * rs * g[j] + b[j];
  }
  check_finite(out, "layernorm");
  if (mean_out) *mean_out = std::move(mean);
  if (rstd_out) *rstd_out = std::move(rstd);
  return out;
}

// tanh-approximation GELU, the form used throughout the model stack.
template <class S>
MatT<S> gelu(const MatT<S>& x, MatT<S>* tanh_cache = nullptr) {
  MatT<S> out(x.rows(), x.cols());
  MatT<S> th(x.rows(), x.cols());
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  for (std::size_t i = 0; i < x.size(); ++i) {
    const S v = x.data()[i];
    const S u = static_cast<S>(kC) * (v + S(0.044715) * v * v * v);
    const S t = std::tanh(u);
    th.data()[i] = t;
    out.data()[i] = S(0.5) * v * (S(1) + t);
  }
  check_finite(out, "gelu");
  if (tanh_cache) *tanh_cache = std::move(th);
  return out;
}

template <class S>
MatT<S> tanh_mat(const MatT<S>& x) {
  MatT<S> out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = std::tanh(x.data()[i]);
  return out;
}

template <class S>
MatT<S> sigmoid_mat(const MatT<S>& x) {
  MatT<S> out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i)
    out.data()[i] = S(1) / (S(1) + std::exp(-x.data()[i]));
  check_finite(out, "sigmoid");
  return out;
}

// Column-wise mean over rows: (n x c) -> (1 x c).
template <class S>
MatT<S> mean_rows(const MatT<S>& x) {
  if (x.rows() == 0) throw ShapeError("mean_rows: empty input " + x.shape_str());
  MatT<S> out(1, x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    const S* xi = x.row(i);
    for (int j = 0; j < x.cols(); ++j) out(0, j) += xi[j];
  }
  const S inv = S(1) / static_cast<S>(x.rows());
  for (int j = 0; j < x.cols(); ++j) out(0, j) *= inv;
  return out;
}

template <class S>
MatT<S> broadcast_row(const MatT<S>& r, int rows) {
  if (r.rows() != 1) throw ShapeError("broadcast_row: expected 1 row, got " + r.shape_str());
  MatT<S> out(rows, r.cols());
  for (int i = 0; i < rows; ++i)
    std::memcpy(out.row(i), r.row(0), static_cast<std::size_t>(r.cols()) * sizeof(S));
  return out;
}

template <class To, class From>
MatT<To> cast_mat(const MatT<From>& a) {
  MatT<To> c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = static_cast<To>(a.data()[i]);
  return c;
}

template <class S>
std::uint64_t mat_digest(const MatT<S>& m, std::uint64_t h = kFnvOffset) {
  h = fnv1a_value(m.rows(), h);
  h = fnv1a_value(m.cols(), h);
  return fnv1a(m.data(), m.size() * sizeof(S), h);
}

}  // namespace tandem
