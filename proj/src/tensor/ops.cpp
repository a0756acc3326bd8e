#include "segkit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <type_traits>

#include "segkit/kernels.hpp"
#include "segkit/kernels_ref.hpp"

namespace segkit::ops {
namespace {

template <typename T>
void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T beta, T* c, std::size_t ldc) {
  if constexpr (std::is_same_v<T, float>) {
    kernels::active().gemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
  } else {
    kernels::ref::gemm<T>(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
  }
}

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  if constexpr (std::is_same_v<T, float>) {
    kernels::active().axpy(n, alpha, x, y);
  } else {
    kernels::ref::axpy<T>(n, alpha, x, y);
  }
}

template <typename T>
void add_into(std::size_t n, const T* x, const T* y, T* out) {
  if constexpr (std::is_same_v<T, float>) {
    kernels::active().add(n, x, y, out);
  } else {
    kernels::ref::add<T>(n, x, y, out);
  }
}

template <typename T>
void mul_into(std::size_t n, const T* x, const T* y, T* out) {
  if constexpr (std::is_same_v<T, float>) {
    kernels::active().mul(n, x, y, out);
  } else {
    kernels::ref::mul<T>(n, x, y, out);
  }
}

template <typename T>
T dot(const T* x, const T* y, std::size_t n) {
  if constexpr (std::is_same_v<T, float>) {
    return kernels::active().dot(x, y, n);
  } else {
    return kernels::ref::dot<T>(x, y, n);
  }
}

template <typename T>
void accumulate(Tape<T>& tape, std::uint32_t id, const Tensor<T>& delta) {
  Tensor<T>& g = tape.grad_buffer(id);
  axpy<T>(g.size(), T(1), delta.ptr(), g.ptr());
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " +
                   to_string(b));
}

void require_rank2(const char* op, const Shape& s) {
  if (s.size() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + to_string(s));
}

template <typename T>
Var<T> elementwise_unary(Var<T> a, T (*fn)(T), T (*derivative_from)(T x, T y)) {
  const Tensor<T>& x = a.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fn(x[i]);
  const std::uint32_t ia = a.id();
  return a.tape().push(std::move(out), {a}, [ia, derivative_from](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = *t.grad(self);
    const Tensor<T>& xv = t.value(ia);
    const Tensor<T>& yv = t.value(self);
    Tensor<T>& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * derivative_from(xv[i], yv[i]);
  });
}

template <typename T>
T gelu_fn(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::sqrt(T(2))));
}
template <typename T>
T gelu_grad(T x, T) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::sqrt(T(2))));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * T(3.14159265358979323846));
  return cdf + x * pdf;
}
template <typename T>
T tanh_fn(T x) {
  return std::tanh(x);
}
template <typename T>
T tanh_grad(T, T y) {
  return T(1) - y * y;
}
template <typename T>
T sigmoid_fn(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}
template <typename T>
T sigmoid_grad(T, T y) {
  return y * (T(1) - y);
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, bool trans_b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_rank2("matmul", av.shape());
  require_rank2("matmul", bv.shape());
  const std::size_t m = av.dim(0);
  const std::size_t k = av.dim(1);
  const std::size_t kb = trans_b ? bv.dim(1) : bv.dim(0);
  const std::size_t n = trans_b ? bv.dim(0) : bv.dim(1);
  if (k != kb) shape_error("matmul", av.shape(), bv.shape());
  Tensor<T> out(Shape{m, n});
  gemm<T>(false, trans_b, m, n, k, T(1), av.ptr(), k, bv.ptr(), bv.dim(1), T(0), out.ptr(), n);
  const std::uint32_t ia = a.id();
  const std::uint32_t ib = b.id();
  return a.tape().push(std::move(out), {a, b}, [=](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = *t.grad(self);
    const Tensor<T>& A = t.value(ia);
    const Tensor<T>& B = t.value(ib);
    if (t.needs_grad(ia)) {
      // dA = dC * op(B)^T
      Tensor<T>& ga = t.grad_buffer(ia);
      gemm<T>(false, !trans_b, m, k, n, T(1), g.ptr(), n, B.ptr(), B.dim(1), T(1), ga.ptr(), k);
    }
    if (t.needs_grad(ib)) {
      Tensor<T>& gb = t.grad_buffer(ib);
      if (trans_b) {
        // dB[N,K] = dC^T * A
        gemm<T>(true, false, n, k, m, T(1), g.ptr(), n, A.ptr(), k, T(1), gb.ptr(), k);
      } else {
        // dB[K,N] = A^T * dC
        gemm<T>(true, false, k, n, m, T(1), A.ptr(), k, g.ptr(), n, T(1), gb.ptr(), n);
      }
    }
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  const Tensor<T>& bv = bias.value();
  require_rank2("linear", xv.shape());
  require_rank2("linear", wv.shape());
  const std::size_t m = xv.dim(0);
  const std::size_t k = xv.dim(1);
  const std::size_t n = wv.dim(1);
  if (wv.dim(0) != k) shape_error("linear", xv.shape(), wv.shape());
  if (bv.rank() != 1 || bv.dim(0) != n) shape_error("linear bias", wv.shape(), bv.shape());
  Tensor<T> out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) std::copy_n(bv.ptr(), n, out.ptr() + i * n);
  gemm<T>(false, false, m, n, k, T(1), xv.ptr(), k, wv.ptr(), n, T(1), out.ptr(), n);
  const std::uint32_t ix = x.id();
  const std::uint32_t iw = w.id();
  const std::uint32_t ib = bias.id();
  return x.tape().push(std::move(out), {x, w, bias}, [=](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = *t.grad(self);
    if (t.needs_grad(ix)) {
      Tensor<T>& gx = t.grad_buffer(ix);
      gemm<T>(false, true, m, k, n, T(1), g.ptr(), n, t.value(iw).ptr(), n, T(1), gx.ptr(), k);
    }
    if (t.needs_grad(iw)) {
      Tensor<T>& gw = t.grad_buffer(iw);
      gemm<T>(true, false, k, n, m, T(1), t.value(ix).ptr(), k, g.ptr(), n, T(1), gw.ptr(), n);
    }
    if (t.needs_grad(ib)) {
      Tensor<T>& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < m; ++i) axpy<T>(n, T(1), g.ptr() + i * n, gb.ptr());
    }
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (av.shape() != bv.shape()) shape_error("add", av.shape(), bv.shape());
  Tensor<T> out(av.shape());
  add_into<T>(out.size(), av.ptr(), bv.ptr(), out.ptr());
  const std::uint32_t ia = a.id();
  const std::uint32_t ib = b.id();
  return a.tape().push(std::move(out), {a, b}, [=](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = *t.grad(self);
    if (t.needs_grad(ia)) accumulate(t, ia, g);
    if (t.needs_grad(ib)) accumulate(t, ib, g);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (av.shape() != bv.shape()) shape_error("sub", av.shape(), bv.shape());
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  const std::uint32_t ia = a.id();
  const std::uint32_t ib = b.id();
  return a.tape().push(std::move(out), {a, b}, [=](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = *t.grad(self);
    if (t.needs_grad(ia)) accumulate(t, ia, g);
    if (t.needs_grad(ib)) {
      Tensor<T>& gb = t.grad_buffer(ib);
      axpy<T>(g.size(), T(-1), g.ptr(), gb.ptr());
    }
  });
}

template <typename T>
Var<T> add_row(Var<T> a, Var<T> row) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& rv = row.value();
  require_rank2("add_row", av.shape());
  const std::size_t m = av.dim(0);
  const std::size_t n = av.dim(1);
  if (rv.rank() != 1 || rv.dim(0) != n) shape_error("add_row", av.shape(), rv.shape());
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < m; ++i) add_into<T>(n, av.ptr() + i * n, rv.ptr(), out.ptr() + i * n);
  const std::uint32_t ia = a.id();
  const std::uint32_t ir = row.id();
  return a.tape().push(std::move(out), {a, row}, [=](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = *t.grad(self);
    if (t.needs_grad(ia)) accumulate(t, ia, g);
    if (t.needs_grad(ir)) {
      Tensor<T>& gr = t.grad_buffer(ir);
      for (std::size_t i = 0; i < m; ++i) axpy<T>(n, T(1), g.ptr() + i * n, gr.ptr());
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (av.shape() != bv.shape()) shape_error("mul", av.shape(), bv.shape());
  Tensor<T> out(av.shape());
  mul_into<T>(out.size(), av.ptr(), bv.ptr(), out.ptr());
  const std::uint32_t ia = a.id();
  const std::uint32_t ib = b.id();
  return a.tape().push(std::move(out), {a, b}, [=](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = *t.grad(self);
    Tensor<T> tmp(g.shape());
    if (t.needs_grad(ia)) {
      mul_into<T>(g.size(), g.ptr(), t.value(ib).ptr(), tmp.ptr());
      accumulate(t, ia, tmp);
    }
    if (t.needs_grad(ib)) {
      mul_into<T>(g.size(), g.ptr(), t.value(ia).ptr(), tmp.ptr());
      accumulate(t, ib, tmp);
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  const Tensor<T>& av = a.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * av[i];
  const std::uint32_t ia = a.id();
  return a.tape().push(std::move(out), {a}, [=](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = *t.grad(self);
    Tensor<T>& ga = t.grad_buffer(ia);
    axpy<T>(g.size(), factor, g.ptr(), ga.ptr());
  });
}

template <typename T>
Var<T> scale_rows(Var<T> a, std::vector<T> factors) {
  const Tensor<T>& av = a.value();
  require_rank2("scale_rows", av.shape());
  const std::size_t m = av.dim(0);
  const std::size_t n = av.dim(1);
  if (factors.size() != m) shape_error("scale_rows", av.shape(), Shape{factors.size()});
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = factors[i] * av[i * n + j];
  }
  const std::uint32_t ia = a.id();
  return a.tape().push(std::move(out), {a},
                       [ia, m, n, factors = std::move(factors)](Tape<T>& t, std::uint32_t self) {
                         const Tensor<T>& g = *t.grad(self);
                         Tensor<T>& ga = t.grad_buffer(ia);
                         for (std::size_t i = 0; i < m; ++i) {
                           if (factors[i] != T(0)) axpy<T>(n, factors[i], g.ptr() + i * n, ga.ptr() + i * n);
                         }
                       });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  const Shape& first = parts.front().shape();
  if (first.empty() || first.size() > 2 || axis >= first.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " invalid for shape " + to_string(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) shape_error("concat", first, s);
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) shape_error("concat", first, s);
    }
    out_shape[axis] += s[axis];
  }
  // Stacking along the leading axis places each part in one contiguous block;
  // joining columns interleaves rows.
  const bool contiguous = axis == 0;
  Tensor<T> out(out_shape);
  const std::size_t out_cols = out.cols();
  std::vector<std::size_t> offsets;
  std::vector<std::uint32_t> ids;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const Tensor<T>& v = p.value();
    offsets.push_back(offset);
    ids.push_back(p.id());
    if (contiguous) {
      std::copy(v.ptr(), v.ptr() + v.size(), out.ptr() + offset);
      offset += v.size();
    } else {
      const std::size_t c = v.dim(1);
      for (std::size_t r = 0; r < v.dim(0); ++r) {
        std::copy_n(v.ptr() + r * c, c, out.ptr() + r * out_cols + offset);
      }
      offset += c;
    }
  }
  return parts.front().tape().push(std::move(out), parts, [=](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = *t.grad(self);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!t.needs_grad(ids[i])) continue;
      Tensor<T>& gp = t.grad_buffer(ids[i]);
      if (contiguous) {
        axpy<T>(gp.size(), T(1), g.ptr() + offsets[i], gp.ptr());
      } else {
        const std::size_t c = gp.dim(1);
        for (std::size_t r = 0; r < gp.dim(0); ++r) {
          axpy<T>(c, T(1), g.ptr() + r * out_cols + offsets[i], gp.ptr() + r * c);
        }
      }
    }
  });
}

template <typename T>
Var<T> slice(Var<T> a, std::size_t axis, std::size_t start, std::size_t length) {
  const Tensor<T>& av = a.value();
  if (av.rank() == 0 || av.rank() > 2 || axis >= av.rank() || start + length > av.dim(axis)) {
    throw ShapeError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") on axis " + std::to_string(axis) + " out of range for shape " +
                     to_string(av.shape()));
  }
  Shape out_shape = av.shape();
  out_shape[axis] = length;
  Tensor<T> out(out_shape);
  const std::size_t cols = av.cols();
  const bool rows_axis = axis == 0 && av.rank() == 2;
  if (av.rank() == 1) {
    std::copy_n(av.ptr() + start, length, out.ptr());
  } else if (rows_axis) {
    std::copy_n(av.ptr() + start * cols, length * cols, out.ptr());
  } else {
    for (std::size_t r = 0; r < av.dim(0); ++r) {
      std::copy_n(av.ptr() + r * cols + start, length, out.ptr() + r * length);
    }
  }
  const std::uint32_t ia = a.id();
  const std::size_t rank = av.rank();
  const std::size_t rows = av.rank() == 2 ? av.dim(0) : 1;
  return a.tape().push(std::move(out), {a}, [=](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = *t.grad(self);
    Tensor<T>& ga = t.grad_buffer(ia);
    if (rank == 1) {
      axpy<T>(length, T(1), g.ptr(), ga.ptr() + start);
    } else if (rows_axis) {
      axpy<T>(length * cols, T(1), g.ptr(), ga.ptr() + start * cols);
    } else {
      for (std::size_t r = 0; r < rows; ++r) {
        axpy<T>(length, T(1), g.ptr() + r * length, ga.ptr() + r * cols + start);
      }
    }
  });
}

template <typename T>
Var<T> gather_rows(Var<T> table, std::span<const std::size_t> rows) {
  const Tensor<T>& tv = table.value();
  require_rank2("gather_rows", tv.shape());
  const std::size_t n = tv.dim(1);
  Tensor<T> out(Shape{rows.size(), n});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= tv.dim(0)) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " out of range for shape " +
                       to_string(tv.shape()));
    }
    std::copy_n(tv.ptr() + rows[i] * n, n, out.ptr() + i * n);
  }
  const std::uint32_t it = table.id();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return table.tape().push(std::move(out), {table},
                           [it, n, idx = std::move(idx)](Tape<T>& t, std::uint32_t self) {
                             const Tensor<T>& g = *t.grad(self);
                             Tensor<T>& gt = t.grad_buffer(it);
                             for (std::size_t i = 0; i < idx.size(); ++i) {
                               axpy<T>(n, T(1), g.ptr() + i * n, gt.ptr() + idx[i] * n);
                             }
                           });
}

template <typename T>
Var<T> embedding(Var<T> table, std::span<const std::int32_t> ids) {
  const std::size_t vocab = table.value().rank() == 2 ? table.value().dim(0) : 0;
  std::vector<std::size_t> rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw InvalidArgument("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                            std::to_string(vocab) + " rows");
    }
    rows[i] = static_cast<std::size_t>(ids[i]);
  }
  return gather_rows(table, std::span<const std::size_t>(rows));
}

template <typename T>
Var<T> softmax(Var<T> a, int axis) {
  const Tensor<T>& av = a.value();
  const std::size_t rank = av.rank();
  if (rank == 0) throw ShapeError("softmax: scalar input");
  const int ax = axis < 0 ? static_cast<int>(rank) + axis : axis;
  if (ax < 0 || ax >= static_cast<int>(rank)) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for shape " + to_string(av.shape()));
  }
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (int d = 0; d < ax; ++d) outer *= av.dim(static_cast<std::size_t>(d));
  for (std::size_t d = static_cast<std::size_t>(ax) + 1; d < rank; ++d) inner *= av.dim(d);
  const std::size_t len = av.dim(static_cast<std::size_t>(ax));
  Tensor<T> out(av.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, av[base + j * inner]);
      T total = 0;
      for (std::size_t j = 0; j < len; ++j) {
        const T e = std::exp(av[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
    }
  }
  const std::uint32_t ia = a.id();
  return a.tape().push(std::move(out), {a}, [=](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = *t.grad(self);
    const Tensor<T>& y = t.value(self);
    Tensor<T>& ga = t.grad_buffer(ia);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * len * inner + i;
        T inner_dot = 0;
        for (std::size_t j = 0; j < len; ++j) inner_dot += g[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t p = base + j * inner;
          ga[p] += y[p] * (g[p] - inner_dot);
        }
      }
    }
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& gv = gamma.value();
  const Tensor<T>& bv = beta.value();
  if (xv.rank() == 0) throw ShapeError("layer_norm: scalar input");
  const std::size_t n = xv.cols();
  const std::size_t m = xv.size() / std::max<std::size_t>(n, 1);
  if (gv.rank() != 1 || gv.dim(0) != n) shape_error("layer_norm gamma", xv.shape(), gv.shape());
  if (bv.rank() != 1 || bv.dim(0) != n) shape_error("layer_norm beta", xv.shape(), bv.shape());
  Tensor<T> out(xv.shape());
  // normalized values and inverse std, saved for backward
  auto xhat = std::make_shared<std::vector<T>>(xv.size());
  auto inv_std = std::make_shared<std::vector<T>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = xv.ptr() + i * n;
    T mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<T>(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(n);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (row[j] - mu) * is;
      (*xhat)[i * n + j] = h;
      out[i * n + j] = h * gv[j] + bv[j];
    }
  }
  const std::uint32_t ix = x.id();
  const std::uint32_t ig = gamma.id();
  const std::uint32_t ib = beta.id();
  return x.tape().push(std::move(out), {x, gamma, beta}, [=](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = *t.grad(self);
    const Tensor<T>& gam = t.value(ig);
    if (t.needs_grad(ig) || t.needs_grad(ib)) {
      Tensor<T>& gg = t.grad_buffer(ig);
      Tensor<T>& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          gg[j] += g[i * n + j] * (*xhat)[i * n + j];
          gb[j] += g[i * n + j];
        }
      }
    }
    if (t.needs_grad(ix)) {
      Tensor<T>& gx = t.grad_buffer(ix);
      std::vector<T> dh(n);
      for (std::size_t i = 0; i < m; ++i) {
        T sum_dh = 0;
        T sum_dh_h = 0;
        for (std::size_t j = 0; j < n; ++j) {
          dh[j] = g[i * n + j] * gam[j];
          sum_dh += dh[j];
          sum_dh_h += dh[j] * (*xhat)[i * n + j];
        }
        const T k = (*inv_std)[i] / static_cast<T>(n);
        for (std::size_t j = 0; j < n; ++j) {
          gx[i * n + j] += k * (static_cast<T>(n) * dh[j] - sum_dh - (*xhat)[i * n + j] * sum_dh_h);
        }
      }
    }
  });
}

template <typename T>
Var<T> gelu(Var<T> a) {
  return elementwise_unary<T>(a, &gelu_fn<T>, &gelu_grad<T>);
}

template <typename T>
Var<T> tanh(Var<T> a) {
  return elementwise_unary<T>(a, &tanh_fn<T>, &tanh_grad<T>);
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  return elementwise_unary<T>(a, &sigmoid_fn<T>, &sigmoid_grad<T>);
}

template <typename T>
Var<T> dropout(Var<T> a, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw InvalidArgument("dropout: rate must be in [0, 1)");
  if (rate == 0.0) return a;
  const Tensor<T>& av = a.value();
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<T>>(av.size());
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) {
    (*mask)[i] = rng.uniform() < rate ? T(0) : keep_scale;
    out[i] = av[i] * (*mask)[i];
  }
  const std::uint32_t ia = a.id();
  return a.tape().push(std::move(out), {a}, [=](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = *t.grad(self);
    Tensor<T>& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*mask)[i];
  });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> labels, std::span<const T> weights) {
  const Tensor<T>& lv = logits.value();
  require_rank2("cross_entropy", lv.shape());
  const std::size_t m = lv.dim(0);
  const std::size_t c = lv.dim(1);
  if (labels.size() != m) shape_error("cross_entropy labels", lv.shape(), Shape{labels.size()});
  if (!weights.empty() && weights.size() != m) {
    shape_error("cross_entropy weights", lv.shape(), Shape{weights.size()});
  }
  auto probs = std::make_shared<std::vector<T>>(m * c);
  std::vector<T> w(m, T(1));
  if (!weights.empty()) std::copy(weights.begin(), weights.end(), w.begin());
  T total_w = 0;
  T loss = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw InvalidArgument("cross_entropy: label " + std::to_string(labels[i]) + " outside " +
                            std::to_string(c) + " classes");
    }
    const T* row = lv.ptr() + i * c;
    const T mx = *std::max_element(row, row + c);
    T z = 0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const T log_z = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) (*probs)[i * c + j] = std::exp(row[j] - log_z);
    loss += w[i] * (log_z - row[labels[i]]);
    total_w += w[i];
  }
  const T norm = total_w > T(0) ? T(1) / total_w : T(0);
  Tensor<T> out = Tensor<T>::scalar(loss * norm);
  const std::uint32_t il = logits.id();
  std::vector<int> y(labels.begin(), labels.end());
  return logits.tape().push(std::move(out), {logits},
                            [=, y = std::move(y), w = std::move(w)](Tape<T>& t, std::uint32_t self) {
                              const T g = (*t.grad(self))[0];
                              Tensor<T>& gl = t.grad_buffer(il);
                              for (std::size_t i = 0; i < m; ++i) {
                                const T f = g * w[i] * norm;
                                for (std::size_t j = 0; j < c; ++j) {
                                  const T onehot = static_cast<int>(j) == y[i] ? T(1) : T(0);
                                  gl[i * c + j] += f * ((*probs)[i * c + j] - onehot);
                                }
                              }
                            });
}

template <typename T>
Var<T> mse(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (av.shape() != bv.shape()) shape_error("mse", av.shape(), bv.shape());
  const std::size_t n = av.size();
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) total += (av[i] - bv[i]) * (av[i] - bv[i]);
  const T inv_n = n > 0 ? T(1) / static_cast<T>(n) : T(0);
  const std::uint32_t ia = a.id();
  const std::uint32_t ib = b.id();
  return a.tape().push(Tensor<T>::scalar(total * inv_n), {a, b}, [=](Tape<T>& t, std::uint32_t self) {
    const T g = (*t.grad(self))[0];
    const Tensor<T>& A = t.value(ia);
    const Tensor<T>& B = t.value(ib);
    const T f = T(2) * g * inv_n;
    if (t.needs_grad(ia)) {
      Tensor<T>& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < n; ++i) ga[i] += f * (A[i] - B[i]);
    }
    if (t.needs_grad(ib)) {
      Tensor<T>& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < n; ++i) gb[i] -= f * (A[i] - B[i]);
    }
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  const Tensor<T>& av = a.value();
  T total = 0;
  for (std::size_t i = 0; i < av.size(); ++i) total += av[i];
  const std::uint32_t ia = a.id();
  return a.tape().push(Tensor<T>::scalar(total), {a}, [=](Tape<T>& t, std::uint32_t self) {
    const T g = (*t.grad(self))[0];
    Tensor<T>& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

template <typename T>
Var<T> mean(Var<T> a) {
  const std::size_t n = a.value().size();
  return scale(sum(a), n > 0 ? T(1) / static_cast<T>(n) : T(0));
}

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, const AttentionLayout& layout, double dropout_rate,
                 Rng* rng) {
  const Tensor<T>& qv = q.value();
  const Tensor<T>& kv = k.value();
  const Tensor<T>& vv = v.value();
  require_rank2("attention", qv.shape());
  if (kv.shape() != qv.shape()) shape_error("attention", qv.shape(), kv.shape());
  if (vv.shape() != qv.shape()) shape_error("attention", qv.shape(), vv.shape());
  const std::size_t rows = qv.dim(0);
  const std::size_t width = qv.dim(1);
  const std::size_t heads = layout.heads;
  if (heads == 0 || width % heads != 0) {
    throw ShapeError("attention: width " + std::to_string(width) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  if (!layout.key_mask.empty() && layout.key_mask.size() != rows) {
    shape_error("attention key_mask", qv.shape(), Shape{layout.key_mask.size()});
  }
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw InvalidArgument("attention: bad dropout rate");
  const bool use_dropout = dropout_rate > 0.0;
  if (use_dropout && rng == nullptr) throw InvalidArgument("attention: dropout needs an rng");
  for (const auto& [off, len] : layout.segments) {
    if (off + len > rows) throw ShapeError("attention: segment exceeds " + std::to_string(rows) + " rows");
  }
  const std::size_t dh = width / heads;
  const T scale_factor = T(1) / std::sqrt(static_cast<T>(dh));
  const auto& mask = layout.key_mask;
  auto real = [&mask](std::size_t r) { return mask.empty() || mask[r] != 0; };

  // Saved per (segment, head): probabilities and, with dropout, the kept
  // probabilities actually multiplied into V.
  struct Saved {
    std::vector<T> probs;
    std::vector<T> dropped;
  };
  auto saved = std::make_shared<std::vector<Saved>>(layout.segments.size() * heads);
  Tensor<T> out(Shape{rows, width});
  std::vector<T> scores;
  for (std::size_t s = 0; s < layout.segments.size(); ++s) {
    const auto [off, len] = layout.segments[s];
    if (len == 0) continue;
    for (std::size_t h = 0; h < heads; ++h) {
      Saved& sv = (*saved)[s * heads + h];
      scores.assign(len * len, T(0));
      const T* qh = qv.ptr() + off * width + h * dh;
      const T* kh = kv.ptr() + off * width + h * dh;
      gemm<T>(false, true, len, len, dh, scale_factor, qh, width, kh, width, T(0), scores.data(), len);
      sv.probs.assign(len * len, T(0));
      for (std::size_t i = 0; i < len; ++i) {
        if (!real(off + i)) continue;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < len; ++j) {
          if (real(off + j)) mx = std::max(mx, scores[i * len + j]);
        }
        T total = 0;
        for (std::size_t j = 0; j < len; ++j) {
          if (!real(off + j)) continue;
          const T e = std::exp(scores[i * len + j] - mx);
          sv.probs[i * len + j] = e;
          total += e;
        }
        for (std::size_t j = 0; j < len; ++j) sv.probs[i * len + j] /= total;
      }
      const T* used = sv.probs.data();
      if (use_dropout) {
        const T keep_scale = static_cast<T>(1.0 / (1.0 - dropout_rate));
        sv.dropped.resize(len * len);
        for (std::size_t i = 0; i < len * len; ++i) {
          sv.dropped[i] = rng->uniform() < dropout_rate ? T(0) : sv.probs[i] * keep_scale;
        }
        used = sv.dropped.data();
      }
      const T* vh = vv.ptr() + off * width + h * dh;
      gemm<T>(false, false, len, dh, len, T(1), used, len, vh, width, T(0),
              out.ptr() + off * width + h * dh, width);
    }
  }

  const std::uint32_t iq = q.id();
  const std::uint32_t ik = k.id();
  const std::uint32_t iv = v.id();
  auto segments = layout.segments;
  return q.tape().push(std::move(out), {q, k, v}, [=, segments = std::move(segments)](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = *t.grad(self);
    const Tensor<T>& Q = t.value(iq);
    const Tensor<T>& K = t.value(ik);
    const Tensor<T>& V = t.value(iv);
    const bool need_q = t.needs_grad(iq);
    const bool need_k = t.needs_grad(ik);
    const bool need_v = t.needs_grad(iv);
    T* gq = need_q ? t.grad_buffer(iq).ptr() : nullptr;
    T* gk = need_k ? t.grad_buffer(ik).ptr() : nullptr;
    T* gv = need_v ? t.grad_buffer(iv).ptr() : nullptr;
    const T keep_scale = use_dropout ? static_cast<T>(1.0 / (1.0 - dropout_rate)) : T(1);
    std::vector<T> dp;
    for (std::size_t s = 0; s < segments.size(); ++s) {
      const auto [off, len] = segments[s];
      if (len == 0) continue;
      for (std::size_t h = 0; h < heads; ++h) {
        const Saved& sv = (*saved)[s * heads + h];
        const T* used = use_dropout ? sv.dropped.data() : sv.probs.data();
        const T* gh = g.ptr() + off * width + h * dh;
        const std::size_t col = off * width + h * dh;
        if (need_v) {
          // dV = P^T dO
          gemm<T>(true, false, len, dh, len, T(1), used, len, gh, width, T(1), gv + col, width);
        }
        if (!need_q && !need_k) continue;
        // dP_used = dO V^T
        dp.assign(len * len, T(0));
        gemm<T>(false, true, len, len, dh, T(1), gh, width, V.ptr() + col, width, T(0), dp.data(), len);
        if (use_dropout) {
          for (std::size_t i = 0; i < len * len; ++i) {
            dp[i] = sv.dropped[i] != T(0) ? dp[i] * keep_scale : T(0);
          }
        }
        // dS = P * (dP - rowsum(dP * P)), then scaled.
        for (std::size_t i = 0; i < len; ++i) {
          T* row = dp.data() + i * len;
          const T* p = sv.probs.data() + i * len;
          const T inner = dot<T>(row, p, len);
          for (std::size_t j = 0; j < len; ++j) row[j] = p[j] * (row[j] - inner) * scale_factor;
        }
        if (need_q) {
          gemm<T>(false, false, len, dh, len, T(1), dp.data(), len, K.ptr() + col, width, T(1), gq + col, width);
        }
        if (need_k) {
          gemm<T>(true, false, len, dh, len, T(1), dp.data(), len, Q.ptr() + col, width, T(1), gk + col, width);
        }
      }
    }
  });
}

template <typename T>
Var<T> lstm(Var<T> x, Var<T> w_x, Var<T> w_h, Var<T> bias, bool reverse) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wxv = w_x.value();
  const Tensor<T>& whv = w_h.value();
  const Tensor<T>& bv = bias.value();
  require_rank2("lstm", xv.shape());
  require_rank2("lstm", wxv.shape());
  require_rank2("lstm", whv.shape());
  const std::size_t steps = xv.dim(0);
  const std::size_t d = xv.dim(1);
  const std::size_t h = whv.dim(0);
  const std::size_t g4 = 4 * h;
  if (wxv.dim(0) != d || wxv.dim(1) != g4) shape_error("lstm input weights", xv.shape(), wxv.shape());
  if (whv.dim(1) != g4) shape_error("lstm recurrent weights", wxv.shape(), whv.shape());
  if (bv.rank() != 1 || bv.dim(0) != g4) shape_error("lstm bias", wxv.shape(), bv.shape());
  if (steps == 0) throw ShapeError("lstm: empty input sequence");

  // Activated gates, cell states and tanh(cell) per step, saved for backward.
  auto gates = std::make_shared<std::vector<T>>(steps * g4);
  auto cells = std::make_shared<std::vector<T>>(steps * h);
  auto cell_tanh = std::make_shared<std::vector<T>>(steps * h);
  std::vector<T>& gt = *gates;
  for (std::size_t t = 0; t < steps; ++t) std::copy_n(bv.ptr(), g4, gt.data() + t * g4);
  gemm<T>(false, false, steps, g4, d, T(1), xv.ptr(), d, wxv.ptr(), g4, T(1), gt.data(), g4);
  Tensor<T> out(Shape{steps, h});
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t t = reverse ? steps - 1 - s : s;
    T* z = gt.data() + t * g4;
    if (s > 0) {
      const std::size_t prev = reverse ? t + 1 : t - 1;
      gemm<T>(false, false, 1, g4, h, T(1), out.ptr() + prev * h, h, whv.ptr(), g4, T(1), z, g4);
    }
    for (std::size_t j = 0; j < h; ++j) {
      const T in = sigmoid_fn(z[j]);
      const T forget = sigmoid_fn(z[h + j]);
      const T cand = std::tanh(z[2 * h + j]);
      const T outg = sigmoid_fn(z[3 * h + j]);
      z[j] = in;
      z[h + j] = forget;
      z[2 * h + j] = cand;
      z[3 * h + j] = outg;
      const T c_prev = s > 0 ? (*cells)[(reverse ? t + 1 : t - 1) * h + j] : T(0);
      const T c = forget * c_prev + in * cand;
      (*cells)[t * h + j] = c;
      (*cell_tanh)[t * h + j] = std::tanh(c);
      out[t * h + j] = outg * (*cell_tanh)[t * h + j];
    }
  }

  const std::uint32_t ix = x.id();
  const std::uint32_t iwx = w_x.id();
  const std::uint32_t iwh = w_h.id();
  const std::uint32_t ib = bias.id();
  return x.tape().push(std::move(out), {x, w_x, w_h, bias}, [=](Tape<T>& tp, std::uint32_t self) {
    const Tensor<T>& g = *tp.grad(self);
    const Tensor<T>& hs = tp.value(self);
    const Tensor<T>& wh = tp.value(iwh);
    // dz per step, pre-activation
    std::vector<T> dz(steps * g4, T(0));
    std::vector<T> dh_next(h, T(0));
    std::vector<T> dc_next(h, T(0));
    for (std::size_t s = steps; s-- > 0;) {
      const std::size_t t = reverse ? steps - 1 - s : s;
      const T* gate = gates->data() + t * g4;
      T* dzt = dz.data() + t * g4;
      for (std::size_t j = 0; j < h; ++j) {
        const T in = gate[j];
        const T forget = gate[h + j];
        const T cand = gate[2 * h + j];
        const T outg = gate[3 * h + j];
        const T tc = (*cell_tanh)[t * h + j];
        const T c_prev = s > 0 ? (*cells)[(reverse ? t + 1 : t - 1) * h + j] : T(0);
        const T dh = g[t * h + j] + dh_next[j];
        const T dc = dh * outg * (T(1) - tc * tc) + dc_next[j];
        dzt[j] = dc * cand * in * (T(1) - in);
        dzt[h + j] = dc * c_prev * forget * (T(1) - forget);
        dzt[2 * h + j] = dc * in * (T(1) - cand * cand);
        dzt[3 * h + j] = dh * tc * outg * (T(1) - outg);
        dc_next[j] = dc * forget;
      }
      // dh_prev = dz * w_h^T
      gemm<T>(false, true, 1, h, g4, T(1), dzt, g4, wh.ptr(), g4, T(0), dh_next.data(), h);
    }
    if (tp.needs_grad(ix)) {
      Tensor<T>& gx = tp.grad_buffer(ix);
      gemm<T>(false, true, steps, d, g4, T(1), dz.data(), g4, tp.value(iwx).ptr(), g4, T(1), gx.ptr(), d);
    }
    if (tp.needs_grad(iwx)) {
      Tensor<T>& gwx = tp.grad_buffer(iwx);
      gemm<T>(true, false, d, g4, steps, T(1), tp.value(ix).ptr(), d, dz.data(), g4, T(1), gwx.ptr(), g4);
    }
    if (tp.needs_grad(iwh) && steps > 1) {
      // previous hidden state of each step; the first step's is zero
      std::vector<T> prev(steps * h, T(0));
      for (std::size_t s = 1; s < steps; ++s) {
        const std::size_t t = reverse ? steps - 1 - s : s;
        const std::size_t p = reverse ? t + 1 : t - 1;
        std::copy_n(hs.ptr() + p * h, h, prev.data() + t * h);
      }
      Tensor<T>& gwh = tp.grad_buffer(iwh);
      gemm<T>(true, false, h, g4, steps, T(1), prev.data(), h, dz.data(), g4, T(1), gwh.ptr(), g4);
    }
    if (tp.needs_grad(ib)) {
      Tensor<T>& gb = tp.grad_buffer(ib);
      for (std::size_t t = 0; t < steps; ++t) axpy<T>(g4, T(1), dz.data() + t * g4, gb.ptr());
    }
  });
}

#define SEGKIT_INSTANTIATE_OPS(T)                                                                  \
  template Var<T> matmul<T>(Var<T>, Var<T>, bool);                                                 \
  template Var<T> linear<T>(Var<T>, Var<T>, Var<T>);                                               \
  template Var<T> add<T>(Var<T>, Var<T>);                                                          \
  template Var<T> sub<T>(Var<T>, Var<T>);                                                          \
  template Var<T> add_row<T>(Var<T>, Var<T>);                                                      \
  template Var<T> mul<T>(Var<T>, Var<T>);                                                          \
  template Var<T> scale<T>(Var<T>, T);                                                             \
  template Var<T> scale_rows<T>(Var<T>, std::vector<T>);                                           \
  template Var<T> concat<T>(const std::vector<Var<T>>&, std::size_t);                              \
  template Var<T> slice<T>(Var<T>, std::size_t, std::size_t, std::size_t);                         \
  template Var<T> gather_rows<T>(Var<T>, std::span<const std::size_t>);                            \
  template Var<T> embedding<T>(Var<T>, std::span<const std::int32_t>);                             \
  template Var<T> softmax<T>(Var<T>, int);                                                         \
  template Var<T> layer_norm<T>(Var<T>, Var<T>, Var<T>, T);                                        \
  template Var<T> gelu<T>(Var<T>);                                                                 \
  template Var<T> tanh<T>(Var<T>);                                                                 \
  template Var<T> sigmoid<T>(Var<T>);                                                              \
  template Var<T> dropout<T>(Var<T>, double, Rng&);                                                \
  template Var<T> cross_entropy<T>(Var<T>, std::span<const int>, std::span<const T>);              \
  template Var<T> mse<T>(Var<T>, Var<T>);                                                          \
  template Var<T> sum<T>(Var<T>);                                                                  \
  template Var<T> mean<T>(Var<T>);                                                                 \
  template Var<T> attention<T>(Var<T>, Var<T>, Var<T>, const AttentionLayout&, double, Rng*); \
  template Var<T> lstm<T>(Var<T>, Var<T>, Var<T>, Var<T>, bool);

SEGKIT_INSTANTIATE_OPS(float)
SEGKIT_INSTANTIATE_OPS(double)

}  // namespace segkit::ops
