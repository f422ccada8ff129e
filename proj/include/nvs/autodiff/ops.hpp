#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nvs/autodiff/tensor.hpp"
#include "nvs/error.hpp"

namespace nvs::ad {

namespace detail {

template <class T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + to_string(a.shape()) + " and " +
                         to_string(b.shape()) + " differ");
  }
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw DimensionError(msg);
}

template <class T>
bool wants_grad(const Node<T>& n, std::size_t parent) {
  return parent < n.parents.size() && n.parents[parent]->requires_grad;
}

template <class T>
std::span<T> parent_grad(Node<T>& n, std::size_t parent) {
  return n.parents[parent]->grad;
}

template <class T>
std::span<const T> parent_value(const Node<T>& n, std::size_t parent) {
  return n.parents[parent]->value;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reductions

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "add");
  auto out = make_result<T>(a.shape(), {&a, &b});
  auto o = out.data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (out.requires_grad()) {
    out.raw()->backward = [](Node<T>& n) {
      for (std::size_t p = 0; p < 2; ++p) {
        if (!detail::wants_grad(n, p)) continue;
        auto g = detail::parent_grad(n, p);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
      }
    };
  }
  return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "mul");
  auto out = make_result<T>(a.shape(), {&a, &b});
  auto o = out.data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  if (out.requires_grad()) {
    out.raw()->backward = [](Node<T>& n) {
      auto x = detail::parent_value(n, 0), y = detail::parent_value(n, 1);
      if (detail::wants_grad(n, 0)) {
        auto g = detail::parent_grad(n, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * y[i];
      }
      if (detail::wants_grad(n, 1)) {
        auto g = detail::parent_grad(n, 1);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * x[i];
      }
    };
  }
  return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  auto out = make_result<T>(a.shape(), {&a});
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * s;
  if (out.requires_grad()) {
    out.raw()->backward = [s](Node<T>& n) {
      auto g = detail::parent_grad(n, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * s;
    };
  }
  return out;
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  auto out = make_result<T>({1}, {&a});
  T acc = 0;
  for (T v : a.data()) acc += v;
  out.data()[0] = acc;
  if (out.requires_grad()) {
    out.raw()->backward = [](Node<T>& n) {
      auto g = detail::parent_grad(n, 0);
      for (auto& v : g) v += n.grad[0];
    };
  }
  return out;
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

// Sum of scalar tensors in list order.
template <class T>
Tensor<T> add_n(const std::vector<Tensor<T>>& terms) {
  if (terms.empty()) throw DimensionError("add_n of an empty list");
  Tensor<T> acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return acc;
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  detail::require(numel(shape) == a.size(),
                  "reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  auto out = make_result<T>(std::move(shape), {&a});
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  if (out.requires_grad()) {
    out.raw()->backward = [](Node<T>& n) {
      auto g = detail::parent_grad(n, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    };
  }
  return out;
}

// Rows of the leading axis, in the given order (repeats allowed).
template <class T>
Tensor<T> gather_rows(const Tensor<T>& a, std::vector<std::size_t> rows) {
  detail::require(a.rank() >= 1, "gather_rows: rank-0 input");
  const std::size_t n_rows = a.dim(0);
  const std::size_t row = a.size() / n_rows;
  for (auto r : rows) detail::require(r < n_rows, "gather_rows: row index out of range");
  Shape shape = a.shape();
  shape[0] = rows.size();
  auto out = make_result<T>(std::move(shape), {&a});
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(x.begin() + rows[i] * row, row, o.begin() + i * row);
  }
  if (out.requires_grad()) {
    out.raw()->backward = [rows = std::move(rows), row](Node<T>& n) {
      auto g = detail::parent_grad(n, 0);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < row; ++j) g[rows[i] * row + j] += n.grad[i * row + j];
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Activations

template <class T>
Tensor<T> elu(const Tensor<T>& a) {
  auto out = make_result<T>(a.shape(), {&a});
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] >= T(0) ? x[i] : std::expm1(x[i]);
  if (out.requires_grad()) {
    out.raw()->backward = [](Node<T>& n) {
      auto x = detail::parent_value(n, 0);
      auto g = detail::parent_grad(n, 0);
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += n.grad[i] * (x[i] >= T(0) ? T(1) : n.value[i] + T(1));
      }
    };
  }
  return out;
}

template <class T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  auto out = make_result<T>(a.shape(), {&a});
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = sigmoid_scalar(x[i]);
  if (out.requires_grad()) {
    out.raw()->backward = [](Node<T>& n) {
      auto g = detail::parent_grad(n, 0);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T s = n.value[i];
        g[i] += n.grad[i] * s * (T(1) - s);
      }
    };
  }
  return out;
}

// log(p / (1 - p)) with p clamped to [eps, 1 - eps]; zero gradient where clamped.
template <class T>
Tensor<T> logit(const Tensor<T>& a, T eps = T(1e-7)) {
  auto out = make_result<T>(a.shape(), {&a});
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const T p = std::clamp(x[i], eps, T(1) - eps);
    o[i] = std::log(p) - std::log1p(-p);
  }
  if (out.requires_grad()) {
    out.raw()->backward = [eps](Node<T>& n) {
      auto x = detail::parent_value(n, 0);
      auto g = detail::parent_grad(n, 0);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (x[i] < eps || x[i] > T(1) - eps) continue;
        g[i] += n.grad[i] / (x[i] * (T(1) - x[i]));
      }
    };
  }
  return out;
}

// Softmax over the last axis, stabilised by subtracting the row maximum.
template <class T>
Tensor<T> softmax(const Tensor<T>& a) {
  detail::require(a.rank() >= 1, "softmax: rank-0 input");
  const std::size_t k = a.shape().back();
  const std::size_t rows = a.size() / k;
  auto out = make_result<T>(a.shape(), {&a});
  auto o = out.data();
  auto x = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const auto* xr = &x[r * k];
    auto* orow = &o[r * k];
    const T m = *std::max_element(xr, xr + k);
    T z = 0;
    for (std::size_t i = 0; i < k; ++i) z += (orow[i] = std::exp(xr[i] - m));
    for (std::size_t i = 0; i < k; ++i) orow[i] /= z;
  }
  if (out.requires_grad()) {
    out.raw()->backward = [k, rows](Node<T>& n) {
      auto g = detail::parent_grad(n, 0);
      for (std::size_t r = 0; r < rows; ++r) {
        T dot = 0;
        for (std::size_t i = 0; i < k; ++i) dot += n.grad[r * k + i] * n.value[r * k + i];
        for (std::size_t i = 0; i < k; ++i) {
          g[r * k + i] += n.value[r * k + i] * (n.grad[r * k + i] - dot);
        }
      }
    };
  }
  return out;
}

// q_i = mask_i * p_i / sum_j mask_j * p_j over the last axis.
template <class T>
Tensor<T> mask_renormalize(const Tensor<T>& p, std::vector<bool> mask) {
  const std::size_t k = p.shape().back();
  detail::require(mask.size() == k, "mask_renormalize: mask length mismatch");
  if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; })) {
    throw InvalidArgument("mask_renormalize: no available entry");
  }
  const std::size_t rows = p.size() / k;
  auto out = make_result<T>(p.shape(), {&p});
  auto o = out.data();
  auto x = p.data();
  std::vector<T> totals(rows, T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < k; ++i) totals[r] += mask[i] ? x[r * k + i] : T(0);
    for (std::size_t i = 0; i < k; ++i) o[r * k + i] = mask[i] ? x[r * k + i] / totals[r] : T(0);
  }
  if (out.requires_grad()) {
    out.raw()->backward = [mask = std::move(mask), totals = std::move(totals), k,
                           rows](Node<T>& n) {
      auto g = detail::parent_grad(n, 0);
      for (std::size_t r = 0; r < rows; ++r) {
        T dot = 0;
        for (std::size_t i = 0; i < k; ++i) dot += n.grad[r * k + i] * n.value[r * k + i];
        for (std::size_t i = 0; i < k; ++i) {
          if (mask[i]) g[r * k + i] += (n.grad[r * k + i] - dot) / totals[r];
        }
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dense layer

// y = x W + b for x [B, I], W [I, O], b [O] (bias optional).
template <class T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b = {}) {
  detail::require(x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(0),
                  "dense: cannot multiply " + to_string(x.shape()) + " by " + to_string(w.shape()));
  const std::size_t batch = x.dim(0), in = w.dim(0), outd = w.dim(1);
  if (b.defined()) {
    detail::require(b.size() == outd, "dense: bias length " + std::to_string(b.size()) +
                                          " does not match " + std::to_string(outd));
  }
  auto out = make_result<T>({batch, outd}, {&x, &w, &b});
  auto y = out.data();
  auto xv = x.data(), wv = w.data();
  for (std::size_t r = 0; r < batch; ++r) {
    T* yr = &y[r * outd];
    if (b.defined()) std::copy(b.data().begin(), b.data().end(), yr);
    for (std::size_t i = 0; i < in; ++i) {
      const T xi = xv[r * in + i];
      const T* wr = &wv[i * outd];
      for (std::size_t o = 0; o < outd; ++o) yr[o] += xi * wr[o];
    }
  }
  if (out.requires_grad()) {
    out.raw()->backward = [batch, in, outd](Node<T>& n) {
      auto xv = detail::parent_value(n, 0), wv = detail::parent_value(n, 1);
      const T* g = n.grad.data();
      if (detail::wants_grad(n, 0)) {
        auto gx = detail::parent_grad(n, 0);
        for (std::size_t r = 0; r < batch; ++r)
          for (std::size_t i = 0; i < in; ++i) {
            T acc = 0;
            for (std::size_t o = 0; o < outd; ++o) acc += g[r * outd + o] * wv[i * outd + o];
            gx[r * in + i] += acc;
          }
      }
      if (detail::wants_grad(n, 1)) {
        auto gw = detail::parent_grad(n, 1);
        for (std::size_t r = 0; r < batch; ++r)
          for (std::size_t i = 0; i < in; ++i) {
            const T xi = xv[r * in + i];
            for (std::size_t o = 0; o < outd; ++o) gw[i * outd + o] += xi * g[r * outd + o];
          }
      }
      if (detail::wants_grad(n, 2)) {
        auto gb = detail::parent_grad(n, 2);
        for (std::size_t r = 0; r < batch; ++r)
          for (std::size_t o = 0; o < outd; ++o) gb[o] += g[r * outd + o];
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolutions. Both kernels share one strided 3-axis core; 2D inputs are
// handled as depth-1 volumes.

namespace detail {

struct Geometry {
  std::size_t batch, cin, cout;
  std::size_t iz, iy, ix;  // input spatial
  std::size_t oz, oy, ox;  // output spatial
  std::size_t kz, ky, kx;
  long pz, py, px;
  long stride;
};

// Range of output coords o with in = o * s + k - p inside [0, n_in) and o in [0, n_out).
inline void conv_range(long k, long p, long s, long n_in, long n_out, long& lo, long& hi) {
  long a = p - k;  // need o * s >= a
  lo = a <= 0 ? 0 : (a + s - 1) / s;
  long b = n_in - 1 + p - k;  // need o * s <= b
  hi = b < 0 ? -1 : std::min(n_out - 1, b / s);
}

// Range of input coords i with o = i * s - p + k inside [0, n_out) and i in [0, n_in).
inline void tconv_range(long k, long p, long s, long n_in, long n_out, long& lo, long& hi) {
  long a = p - k;
  lo = a <= 0 ? 0 : (a + s - 1) / s;
  long b = n_out - 1 + p - k;
  hi = b < 0 ? -1 : std::min(n_in - 1, b / s);
}

// Cross-correlation: out[b,f,o] = bias[f] + sum_c,k w[f,c,k] x[b,c,o*s+k-p].
template <class T>
void conv_forward(const Geometry& g, const T* x, const T* w, const T* bias, T* y) {
  const long s = g.stride;
  const std::size_t in_vol = g.iz * g.iy * g.ix, out_vol = g.oz * g.oy * g.ox;
  const std::size_t kvol = g.kz * g.ky * g.kx;
#pragma omp parallel for collapse(2) schedule(static) if (g.batch * g.cout * out_vol * g.cin * kvol > 200000)
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t f = 0; f < g.cout; ++f) {
      T* yo = y + (b * g.cout + f) * out_vol;
      std::fill(yo, yo + out_vol, bias ? bias[f] : T(0));
      for (std::size_t c = 0; c < g.cin; ++c) {
        const T* xc = x + (b * g.cin + c) * in_vol;
        const T* wk = w + (f * g.cin + c) * kvol;
        for (std::size_t kz = 0; kz < g.kz; ++kz) {
          long z0, z1;
          conv_range(kz, g.pz, s, g.iz, g.oz, z0, z1);
          for (std::size_t ky = 0; ky < g.ky; ++ky) {
            long y0, y1;
            conv_range(ky, g.py, s, g.iy, g.oy, y0, y1);
            for (std::size_t kx = 0; kx < g.kx; ++kx) {
              long x0, x1;
              conv_range(kx, g.px, s, g.ix, g.ox, x0, x1);
              const T wv = wk[(kz * g.ky + ky) * g.kx + kx];
              const long offx = static_cast<long>(kx) - g.px;
              for (long oz = z0; oz <= z1; ++oz) {
                const long iz = oz * s + static_cast<long>(kz) - g.pz;
                for (long oy = y0; oy <= y1; ++oy) {
                  const long iy = oy * s + static_cast<long>(ky) - g.py;
                  const T* xr = xc + (iz * g.iy + iy) * g.ix;
                  T* yr = yo + (oz * g.oy + oy) * g.ox;
                  if (s == 1) {
                    for (long ox = x0; ox <= x1; ++ox) yr[ox] += wv * xr[ox + offx];
                  } else {
                    for (long ox = x0; ox <= x1; ++ox) yr[ox] += wv * xr[ox * s + offx];
                  }
                }
              }
            }
          }
        }
      }
    }
  }
}

template <class T>
void conv_backward(const Geometry& g, const T* x, const T* w, const T* gy, T* gx, T* gw, T* gb) {
  const long s = g.stride;
  const std::size_t in_vol = g.iz * g.iy * g.ix, out_vol = g.oz * g.oy * g.ox;
  const std::size_t kvol = g.kz * g.ky * g.kx;
  const bool big = g.batch * g.cout * out_vol * g.cin * kvol > 200000;
  if (gx) {
#pragma omp parallel for collapse(2) schedule(static) if (big)
    for (std::size_t b = 0; b < g.batch; ++b) {
      for (std::size_t c = 0; c < g.cin; ++c) {
        T* gxc = gx + (b * g.cin + c) * in_vol;
        for (std::size_t f = 0; f < g.cout; ++f) {
          const T* gyo = gy + (b * g.cout + f) * out_vol;
          const T* wk = w + (f * g.cin + c) * kvol;
          for (std::size_t kz = 0; kz < g.kz; ++kz) {
            long z0, z1;
            conv_range(kz, g.pz, s, g.iz, g.oz, z0, z1);
            for (std::size_t ky = 0; ky < g.ky; ++ky) {
              long y0, y1;
              conv_range(ky, g.py, s, g.iy, g.oy, y0, y1);
              for (std::size_t kx = 0; kx < g.kx; ++kx) {
                long x0, x1;
                conv_range(kx, g.px, s, g.ix, g.ox, x0, x1);
                const T wv = wk[(kz * g.ky + ky) * g.kx + kx];
                const long offx = static_cast<long>(kx) - g.px;
                for (long oz = z0; oz <= z1; ++oz) {
                  const long iz = oz * s + static_cast<long>(kz) - g.pz;
                  for (long oy = y0; oy <= y1; ++oy) {
                    const long iy = oy * s + static_cast<long>(ky) - g.py;
                    T* xr = gxc + (iz * g.iy + iy) * g.ix;
                    const T* yr = gyo + (oz * g.oy + oy) * g.ox;
                    for (long ox = x0; ox <= x1; ++ox) xr[ox * s + offx] += wv * yr[ox];
                  }
                }
              }
            }
          }
        }
      }
    }
  }
  if (gw) {
#pragma omp parallel for collapse(2) schedule(static) if (big)
    for (std::size_t f = 0; f < g.cout; ++f) {
      for (std::size_t c = 0; c < g.cin; ++c) {
        T* gk = gw + (f * g.cin + c) * kvol;
        for (std::size_t b = 0; b < g.batch; ++b) {
          const T* xc = x + (b * g.cin + c) * in_vol;
          const T* gyo = gy + (b * g.cout + f) * out_vol;
          for (std::size_t kz = 0; kz < g.kz; ++kz) {
            long z0, z1;
            conv_range(kz, g.pz, s, g.iz, g.oz, z0, z1);
            for (std::size_t ky = 0; ky < g.ky; ++ky) {
              long y0, y1;
              conv_range(ky, g.py, s, g.iy, g.oy, y0, y1);
              for (std::size_t kx = 0; kx < g.kx; ++kx) {
                long x0, x1;
                conv_range(kx, g.px, s, g.ix, g.ox, x0, x1);
                const long offx = static_cast<long>(kx) - g.px;
                T acc = 0;
                for (long oz = z0; oz <= z1; ++oz) {
                  const long iz = oz * s + static_cast<long>(kz) - g.pz;
                  for (long oy = y0; oy <= y1; ++oy) {
                    const long iy = oy * s + static_cast<long>(ky) - g.py;
                    const T* xr = xc + (iz * g.iy + iy) * g.ix;
                    const T* yr = gyo + (oz * g.oy + oy) * g.ox;
                    for (long ox = x0; ox <= x1; ++ox) acc += xr[ox * s + offx] * yr[ox];
                  }
                }
                gk[(kz * g.ky + ky) * g.kx + kx] += acc;
              }
            }
          }
        }
      }
    }
  }
  if (gb) {
    for (std::size_t f = 0; f < g.cout; ++f) {
      T acc = 0;
      for (std::size_t b = 0; b < g.batch; ++b) {
        const T* gyo = gy + (b * g.cout + f) * out_vol;
        for (std::size_t i = 0; i < out_vol; ++i) acc += gyo[i];
      }
      gb[f] += acc;
    }
  }
}

// Transposed convolution: out[b,f,i*s-p+k] += w[c,f,k] x[b,c,i]. The adjoint
// of conv_forward with the kernel's channel axes swapped.
template <class T>
void tconv_forward(const Geometry& g, const T* x, const T* w, const T* bias, T* y) {
  const long s = g.stride;
  const std::size_t in_vol = g.iz * g.iy * g.ix, out_vol = g.oz * g.oy * g.ox;
  const std::size_t kvol = g.kz * g.ky * g.kx;
#pragma omp parallel for collapse(2) schedule(static) if (g.batch * g.cout * in_vol * g.cin * kvol > 200000)
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t f = 0; f < g.cout; ++f) {
      T* yo = y + (b * g.cout + f) * out_vol;
      std::fill(yo, yo + out_vol, bias ? bias[f] : T(0));
      for (std::size_t c = 0; c < g.cin; ++c) {
        const T* xc = x + (b * g.cin + c) * in_vol;
        const T* wk = w + (c * g.cout + f) * kvol;
        for (std::size_t kz = 0; kz < g.kz; ++kz) {
          long z0, z1;
          tconv_range(kz, g.pz, s, g.iz, g.oz, z0, z1);
          for (std::size_t ky = 0; ky < g.ky; ++ky) {
            long y0, y1;
            tconv_range(ky, g.py, s, g.iy, g.oy, y0, y1);
            for (std::size_t kx = 0; kx < g.kx; ++kx) {
              long x0, x1;
              tconv_range(kx, g.px, s, g.ix, g.ox, x0, x1);
              const T wv = wk[(kz * g.ky + ky) * g.kx + kx];
              const long offx = static_cast<long>(kx) - g.px;
              for (long iz = z0; iz <= z1; ++iz) {
                const long oz = iz * s + static_cast<long>(kz) - g.pz;
                for (long iy = y0; iy <= y1; ++iy) {
                  const long oy = iy * s + static_cast<long>(ky) - g.py;
                  const T* xr = xc + (iz * g.iy + iy) * g.ix;
                  T* yr = yo + (oz * g.oy + oy) * g.ox;
                  for (long ix = x0; ix <= x1; ++ix) yr[ix * s + offx] += wv * xr[ix];
                }
              }
            }
          }
        }
      }
    }
  }
}

template <class T>
void tconv_backward(const Geometry& g, const T* x, const T* w, const T* gy, T* gx, T* gw, T* gb) {
  const long s = g.stride;
  const std::size_t in_vol = g.iz * g.iy * g.ix, out_vol = g.oz * g.oy * g.ox;
  const std::size_t kvol = g.kz * g.ky * g.kx;
  const bool big = g.batch * g.cout * in_vol * g.cin * kvol > 200000;
  if (gx) {
#pragma omp parallel for collapse(2) schedule(static) if (big)
    for (std::size_t b = 0; b < g.batch; ++b) {
      for (std::size_t c = 0; c < g.cin; ++c) {
        T* gxc = gx + (b * g.cin + c) * in_vol;
        for (std::size_t f = 0; f < g.cout; ++f) {
          const T* gyo = gy + (b * g.cout + f) * out_vol;
          const T* wk = w + (c * g.cout + f) * kvol;
          for (std::size_t kz = 0; kz < g.kz; ++kz) {
            long z0, z1;
            tconv_range(kz, g.pz, s, g.iz, g.oz, z0, z1);
            for (std::size_t ky = 0; ky < g.ky; ++ky) {
              long y0, y1;
              tconv_range(ky, g.py, s, g.iy, g.oy, y0, y1);
              for (std::size_t kx = 0; kx < g.kx; ++kx) {
                long x0, x1;
                tconv_range(kx, g.px, s, g.ix, g.ox, x0, x1);
                const T wv = wk[(kz * g.ky + ky) * g.kx + kx];
                const long offx = static_cast<long>(kx) - g.px;
                for (long iz = z0; iz <= z1; ++iz) {
                  const long oz = iz * s + static_cast<long>(kz) - g.pz;
                  for (long iy = y0; iy <= y1; ++iy) {
                    const long oy = iy * s + static_cast<long>(ky) - g.py;
                    T* xr = gxc + (iz * g.iy + iy) * g.ix;
                    const T* yr = gyo + (oz * g.oy + oy) * g.ox;
                    for (long ix = x0; ix <= x1; ++ix) xr[ix] += wv * yr[ix * s + offx];
                  }
                }
              }
            }
          }
        }
      }
    }
  }
  if (gw) {
#pragma omp parallel for collapse(2) schedule(static) if (big)
    for (std::size_t c = 0; c < g.cin; ++c) {
      for (std::size_t f = 0; f < g.cout; ++f) {
        T* gk = gw + (c * g.cout + f) * kvol;
        for (std::size_t b = 0; b < g.batch; ++b) {
          const T* xc = x + (b * g.cin + c) * in_vol;
          const T* gyo = gy + (b * g.cout + f) * out_vol;
          for (std::size_t kz = 0; kz < g.kz; ++kz) {
            long z0, z1;
            tconv_range(kz, g.pz, s, g.iz, g.oz, z0, z1);
            for (std::size_t ky = 0; ky < g.ky; ++ky) {
              long y0, y1;
              tconv_range(ky, g.py, s, g.iy, g.oy, y0, y1);
              for (std::size_t kx = 0; kx < g.kx; ++kx) {
                long x0, x1;
                tconv_range(kx, g.px, s, g.ix, g.ox, x0, x1);
                const long offx = static_cast<long>(kx) - g.px;
                T acc = 0;
                for (long iz = z0; iz <= z1; ++iz) {
                  const long oz = iz * s + static_cast<long>(kz) - g.pz;
                  for (long iy = y0; iy <= y1; ++iy) {
                    const long oy = iy * s + static_cast<long>(ky) - g.py;
                    const T* xr = xc + (iz * g.iy + iy) * g.ix;
                    const T* yr = gyo + (oz * g.oy + oy) * g.ox;
                    for (long ix = x0; ix <= x1; ++ix) acc += xr[ix] * yr[ix * s + offx];
                  }
                }
                gk[(kz * g.ky + ky) * g.kx + kx] += acc;
              }
            }
          }
        }
      }
    }
  }
  if (gb) {
    for (std::size_t f = 0; f < g.cout; ++f) {
      T acc = 0;
      for (std::size_t b = 0; b < g.batch; ++b) {
        const T* gyo = gy + (b * g.cout + f) * out_vol;
        for (std::size_t i = 0; i < out_vol; ++i) acc += gyo[i];
      }
      gb[f] += acc;
    }
  }
}

template <class T>
Tensor<T> run_conv(const Geometry& geo, const Tensor<T>& x, const Tensor<T>& k,
                   const Tensor<T>& bias, Shape out_shape, bool transposed) {
  auto out = make_result<T>(std::move(out_shape), {&x, &k, &bias});
  const T* b = bias.defined() ? bias.data().data() : nullptr;
  if (transposed) {
    tconv_forward(geo, x.data().data(), k.data().data(), b, out.data().data());
  } else {
    conv_forward(geo, x.data().data(), k.data().data(), b, out.data().data());
  }
  if (out.requires_grad()) {
    out.raw()->backward = [geo, transposed](Node<T>& n) {
      T* gx = wants_grad(n, 0) ? parent_grad(n, 0).data() : nullptr;
      T* gw = wants_grad(n, 1) ? parent_grad(n, 1).data() : nullptr;
      T* gb = wants_grad(n, 2) ? parent_grad(n, 2).data() : nullptr;
      const T* xv = parent_value(n, 0).data();
      const T* wv = parent_value(n, 1).data();
      if (transposed) {
        tconv_backward(geo, xv, wv, n.grad.data(), gx, gw, gb);
      } else {
        conv_backward(geo, xv, wv, n.grad.data(), gx, gw, gb);
      }
    };
  }
  return out;
}

template <class T>
void check_bias(const Tensor<T>& bias, std::size_t channels, const char* op) {
  if (bias.defined()) {
    require(bias.size() == channels, std::string(op) + ": bias length " +
                                         std::to_string(bias.size()) + " != " +
                                         std::to_string(channels));
  }
}

}  // namespace detail

// x [B, C, H, W], k [F, C, 3, 3], padding 1, stride 1 or 2.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& bias, int stride) {
  using detail::require;
  require(stride == 1 || stride == 2, "conv2d: stride must be 1 or 2");
  require(x.rank() == 4 && k.rank() == 4, "conv2d: expects x [B,C,H,W] and k [F,C,3,3]");
  require(k.dim(2) == 3 && k.dim(3) == 3, "conv2d: kernel must be 3x3");
  require(k.dim(1) == x.dim(1), "conv2d: kernel expects " + std::to_string(k.dim(1)) +
                                    " channels, input has " + std::to_string(x.dim(1)));
  require(x.dim(2) >= 3 && x.dim(3) >= 3, "conv2d: input smaller than 3x3");
  detail::check_bias(bias, k.dim(0), "conv2d");
  const std::size_t s = static_cast<std::size_t>(stride);
  detail::Geometry g{x.dim(0), x.dim(1), k.dim(0), 1, x.dim(2), x.dim(3),
                     1, (x.dim(2) - 1) / s + 1, (x.dim(3) - 1) / s + 1,
                     1, 3, 3, 0, 1, 1, stride};
  return detail::run_conv(g, x, k, bias, {g.batch, g.cout, g.oy, g.ox}, false);
}

// x [B, C, D, H, W], k [F, C, 3, 3, 3], padding 1, stride 1 or 2.
template <class T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& bias, int stride) {
  using detail::require;
  require(stride == 1 || stride == 2, "conv3d: stride must be 1 or 2");
  require(x.rank() == 5 && k.rank() == 5, "conv3d: expects x [B,C,D,H,W] and k [F,C,3,3,3]");
  require(k.dim(2) == 3 && k.dim(3) == 3 && k.dim(4) == 3, "conv3d: kernel must be 3x3x3");
  require(k.dim(1) == x.dim(1), "conv3d: kernel expects " + std::to_string(k.dim(1)) +
                                    " channels, input has " + std::to_string(x.dim(1)));
  detail::check_bias(bias, k.dim(0), "conv3d");
  const std::size_t s = static_cast<std::size_t>(stride);
  detail::Geometry g{x.dim(0), x.dim(1), k.dim(0), x.dim(2), x.dim(3), x.dim(4),
                     (x.dim(2) - 1) / s + 1, (x.dim(3) - 1) / s + 1, (x.dim(4) - 1) / s + 1,
                     3, 3, 3, 1, 1, 1, stride};
  return detail::run_conv(g, x, k, bias, {g.batch, g.cout, g.oz, g.oy, g.ox}, false);
}

// x [B, C, D, H, W], k [C, F, 4, 4, 4], stride 2, padding 1 -> [B, F, 2D, 2H, 2W].
template <class T>
Tensor<T> tconv3d(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& bias = {}) {
  using detail::require;
  require(x.rank() == 5 && k.rank() == 5, "tconv3d: expects x [B,C,D,H,W] and k [C,F,4,4,4]");
  require(k.dim(2) == 4 && k.dim(3) == 4 && k.dim(4) == 4, "tconv3d: kernel must be 4x4x4");
  require(k.dim(0) == x.dim(1), "tconv3d: kernel expects " + std::to_string(k.dim(0)) +
                                    " channels, input has " + std::to_string(x.dim(1)));
  detail::check_bias(bias, k.dim(1), "tconv3d");
  detail::Geometry g{x.dim(0), x.dim(1), k.dim(1), x.dim(2), x.dim(3), x.dim(4),
                     2 * x.dim(2), 2 * x.dim(3), 2 * x.dim(4), 4, 4, 4, 1, 1, 1, 2};
  return detail::run_conv(g, x, k, bias, {g.batch, g.cout, g.oz, g.oy, g.ox}, true);
}

// ---------------------------------------------------------------------------
// View fusion and mixtures

// values, scores [G, V, ...]: out[g, j] = sum_v softmax_v(scores[g, :, j]) values[g, v, j].
template <class T>
Tensor<T> softmax_fuse(const Tensor<T>& values, const Tensor<T>& scores) {
  detail::check_same_shape(values, scores, "softmax_fuse");
  detail::require(values.rank() >= 2, "softmax_fuse: expects [G, V, ...]");
  const std::size_t groups = values.dim(0), views = values.dim(1);
  const std::size_t inner = values.size() / (groups * views);
  Shape shape{groups};
  shape.insert(shape.end(), values.shape().begin() + 2, values.shape().end());
  if (shape.size() == 1) shape.push_back(1);
  auto out = make_result<T>(std::move(shape), {&values, &scores});
  // Cache the weights for backward.
  auto weights = std::make_shared<std::vector<T>>(values.size());
  auto v = values.data(), s = scores.data();
  auto o = out.data();
  auto& w = *weights;
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t base = g * views * inner;
    for (std::size_t j = 0; j < inner; ++j) {
      T m = s[base + j];
      for (std::size_t k = 1; k < views; ++k) m = std::max(m, s[base + k * inner + j]);
      T z = 0;
      for (std::size_t k = 0; k < views; ++k) {
        z += (w[base + k * inner + j] = std::exp(s[base + k * inner + j] - m));
      }
      T acc = 0;
      for (std::size_t k = 0; k < views; ++k) {
        w[base + k * inner + j] /= z;
        acc += w[base + k * inner + j] * v[base + k * inner + j];
      }
      o[g * inner + j] = acc;
    }
  }
  if (out.requires_grad()) {
    out.raw()->backward = [weights, groups, views, inner](Node<T>& n) {
      auto v = detail::parent_value(n, 0);
      const auto& w = *weights;
      const bool gv = detail::wants_grad(n, 0), gs = detail::wants_grad(n, 1);
      T* dv = gv ? detail::parent_grad(n, 0).data() : nullptr;
      T* ds = gs ? detail::parent_grad(n, 1).data() : nullptr;
      for (std::size_t g = 0; g < groups; ++g) {
        const std::size_t base = g * views * inner;
        for (std::size_t j = 0; j < inner; ++j) {
          const T go = n.grad[g * inner + j];
          const T fused = n.value[g * inner + j];
          for (std::size_t k = 0; k < views; ++k) {
            const std::size_t idx = base + k * inner + j;
            if (dv) dv[idx] += w[idx] * go;
            if (ds) ds[idx] += w[idx] * (v[idx] - fused) * go;
          }
        }
      }
    };
  }
  return out;
}

// Unweighted mean over axis 1 of [G, V, ...].
template <class T>
Tensor<T> mean_views(const Tensor<T>& values) {
  detail::require(values.rank() >= 2, "mean_views: expects [G, V, ...]");
  const std::size_t groups = values.dim(0), views = values.dim(1);
  const std::size_t inner = values.size() / (groups * views);
  Shape shape{groups};
  shape.insert(shape.end(), values.shape().begin() + 2, values.shape().end());
  if (shape.size() == 1) shape.push_back(1);
  auto out = make_result<T>(std::move(shape), {&values});
  auto v = values.data();
  auto o = out.data();
  const T inv = T(1) / static_cast<T>(views);
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t j = 0; j < inner; ++j) {
      T acc = 0;
      for (std::size_t k = 0; k < views; ++k) acc += v[(g * views + k) * inner + j];
      o[g * inner + j] = acc * inv;
    }
  if (out.requires_grad()) {
    out.raw()->backward = [groups, views, inner, inv](Node<T>& n) {
      auto dv = detail::parent_grad(n, 0);
      for (std::size_t g = 0; g < groups; ++g)
        for (std::size_t k = 0; k < views; ++k)
          for (std::size_t j = 0; j < inner; ++j)
            dv[(g * views + k) * inner + j] += n.grad[g * inner + j] * inv;
    };
  }
  return out;
}

// r = sum_i p_i v_i for p [K] and volumes [K, ...]; result has volumes' trailing shape.
template <class T>
Tensor<T> mixture(const Tensor<T>& p, const Tensor<T>& volumes) {
  detail::require(volumes.rank() >= 2, "mixture: volumes must be [K, ...]");
  const std::size_t k = volumes.dim(0);
  detail::require(p.size() == k, "mixture: " + std::to_string(p.size()) + " weights for " +
                                     std::to_string(k) + " volumes");
  const std::size_t inner = volumes.size() / k;
  Shape shape(volumes.shape().begin() + 1, volumes.shape().end());
  auto out = make_result<T>(std::move(shape), {&p, &volumes});
  auto pv = p.data(), v = volumes.data();
  auto o = out.data();
  for (std::size_t i = 0; i < k; ++i) {
    const T w = pv[i];
    const T* vi = &v[i * inner];
    for (std::size_t j = 0; j < inner; ++j) o[j] += w * vi[j];
  }
  if (out.requires_grad()) {
    out.raw()->backward = [k, inner](Node<T>& n) {
      auto pv = detail::parent_value(n, 0), v = detail::parent_value(n, 1);
      if (detail::wants_grad(n, 0)) {
        auto dp = detail::parent_grad(n, 0);
        for (std::size_t i = 0; i < k; ++i) {
          T acc = 0;
          for (std::size_t j = 0; j < inner; ++j) acc += n.grad[j] * v[i * inner + j];
          dp[i] += acc;
        }
      }
      if (detail::wants_grad(n, 1)) {
        auto dv = detail::parent_grad(n, 1);
        for (std::size_t i = 0; i < k; ++i) {
          const T w = pv[i];
          for (std::size_t j = 0; j < inner; ++j) dv[i * inner + j] += w * n.grad[j];
        }
      }
    };
  }
  return out;
}

// Mean binary cross entropy -(1/N) sum t ln r + (1-t) ln(1-r), r clamped to
// [eps, 1 - eps]. Targets are constants.
template <class T>
Tensor<T> binary_cross_entropy(const Tensor<T>& r, std::span<const float> target, T eps = T(1e-7)) {
  detail::require(r.size() == target.size(), "binary_cross_entropy: " + std::to_string(r.size()) +
                                                 " predictions for " +
                                                 std::to_string(target.size()) + " targets");
  auto out = make_result<T>({1}, {&r});
  auto x = r.data();
  const std::size_t n = x.size();
  T acc = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const T p = std::clamp(x[j], eps, T(1) - eps);
    const T t = static_cast<T>(target[j]);
    acc -= t * std::log(p) + (T(1) - t) * std::log1p(-p);
  }
  out.data()[0] = acc / static_cast<T>(n);
  if (out.requires_grad()) {
    std::vector<T> t(target.begin(), target.end());
    out.raw()->backward = [t = std::move(t), eps](Node<T>& node) {
      auto x = detail::parent_value(node, 0);
      auto g = detail::parent_grad(node, 0);
      const T scale = node.grad[0] / static_cast<T>(x.size());
      for (std::size_t j = 0; j < x.size(); ++j) {
        if (x[j] < eps || x[j] > T(1) - eps) continue;
        g[j] += scale * ((T(1) - t[j]) / (T(1) - x[j]) - t[j] / x[j]);
      }
    };
  }
  return out;
}

}  // namespace nvs::ad
