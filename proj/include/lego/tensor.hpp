#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "lego/kernels.hpp"

namespace lego {

std::string shape_str(const std::vector<int>& s);

namespace detail {
std::vector<int> broadcast_shape(const std::vector<int>& a, const std::vector<int>& b);
std::vector<int64_t> index_map(const std::vector<int>& in_shape, const std::vector<int>& out_shape);
}  // namespace detail

/// Dense row-major tensor. A tensor may carry a handle into the tape that
/// produced it (node >= 0); tensors with node == -1 are plain values
/// outside any differentiation graph. The library runs with T = float;
/// the double instantiation exists for the test-side oracles.
template <typename T>
struct TensorT {
  using value_type = T;
  std::vector<int> shape;
  std::vector<T> data;
  int node = -1;

  TensorT() = default;
  explicit TensorT(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel()), fill);
  }
  TensorT(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel() != static_cast<int64_t>(data.size()))
      throw std::invalid_argument("tensor data size " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
  }

  static TensorT scalar(T v) { return TensorT({1}, {v}); }
  static TensorT randn(std::vector<int> s, std::mt19937& rng, T mean = T(0), T stddev = T(1)) {
    TensorT t(std::move(s));
    std::normal_distribution<float> dist(static_cast<float>(mean), static_cast<float>(stddev));
    for (auto& v : t.data) v = static_cast<T>(dist(rng));
    return t;
  }
  static TensorT uniform(std::vector<int> s, std::mt19937& rng, T lo, T hi) {
    TensorT t(std::move(s));
    std::uniform_real_distribution<float> dist(static_cast<float>(lo), static_cast<float>(hi));
    for (auto& v : t.data) v = static_cast<T>(dist(rng));
    return t;
  }

  int64_t numel() const {
    int64_t n = 1;
    for (int d : shape) {
      if (d <= 0)
        throw std::invalid_argument("non-positive dimension in shape " + shape_str(shape));
      n *= d;
    }
    return n;
  }
  int dim() const { return static_cast<int>(shape.size()); }
  T item() const {
    if (data.size() != 1)
      throw std::invalid_argument("item() on tensor of shape " + shape_str(shape));
    return data[0];
  }
  bool same_shape(const TensorT& o) const { return shape == o.shape; }
};

template <typename To, typename From>
TensorT<To> cast(const TensorT<From>& t) {
  TensorT<To> out;
  out.shape = t.shape;
  out.data.assign(t.data.begin(), t.data.end());
  return out;
}

/// Define-by-run differentiation tape. One forward/backward pass owns a
/// tape exclusively; a fresh tape is built per pass.
template <typename T>
class TapeT {
 public:
  using Tensor = TensorT<T>;

  /// Process-unique tape identity (lets callers key per-tape caches).
  uint64_t id() const { return id_; }

  /// Registers an external parameter as a leaf. The returned tensor is a
  /// tracked copy; after backward() the gradient for `param` can be read
  /// through watched().
  Tensor watch(Tensor& param) {
    Tensor out = leaf(param);
    watched_.push_back(Watched{&param, out.node});
    return out;
  }

  /// Tracked leaf not tied to an external parameter.
  Tensor leaf(const Tensor& value) {
    Tensor out = value;
    out.node = push(value.numel(), nullptr);
    return out;
  }

  // ---- elementwise with numpy-style broadcasting ----

  Tensor add(const Tensor& a, const Tensor& b) {
    const auto oshape = detail::broadcast_shape(a.shape, b.shape);
    const auto ma = detail::index_map(a.shape, oshape);
    const auto mb = detail::index_map(b.shape, oshape);
    Tensor out(oshape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = a.data[ma[i]] + b.data[mb[i]];
    if (a.node < 0 && b.node < 0) return out;
    const int pa = a.node, pb = b.node;
    out.node = push(out.numel(), [pa, pb, ma, mb](TapeT& t, int self) {
      const auto& g = t.grads_[self];
      if (pa >= 0) {
        auto& ga = t.grad_buf(pa);
        for (size_t i = 0; i < g.size(); ++i) ga[ma[i]] += g[i];
      }
      if (pb >= 0) {
        auto& gb = t.grad_buf(pb);
        for (size_t i = 0; i < g.size(); ++i) gb[mb[i]] += g[i];
      }
    });
    return out;
  }

  Tensor mul(const Tensor& a, const Tensor& b) {
    const auto oshape = detail::broadcast_shape(a.shape, b.shape);
    const auto ma = detail::index_map(a.shape, oshape);
    const auto mb = detail::index_map(b.shape, oshape);
    Tensor out(oshape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = a.data[ma[i]] * b.data[mb[i]];
    if (a.node < 0 && b.node < 0) return out;
    const int pa = a.node, pb = b.node;
    std::vector<T> av = a.data, bv = b.data;
    out.node = push(out.numel(), [pa, pb, ma, mb, av, bv](TapeT& t, int self) {
      const auto& g = t.grads_[self];
      if (pa >= 0) {
        auto& ga = t.grad_buf(pa);
        for (size_t i = 0; i < g.size(); ++i) ga[ma[i]] += g[i] * bv[mb[i]];
      }
      if (pb >= 0) {
        auto& gb = t.grad_buf(pb);
        for (size_t i = 0; i < g.size(); ++i) gb[mb[i]] += g[i] * av[ma[i]];
      }
    });
    return out;
  }

  Tensor scale(const Tensor& a, T s) {
    Tensor out = a;
    out.node = -1;
    for (auto& v : out.data) v *= s;
    if (a.node < 0) return out;
    const int pa = a.node;
    out.node = push(out.numel(), [pa, s](TapeT& t, int self) {
      const auto& g = t.grads_[self];
      auto& ga = t.grad_buf(pa);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
    });
    return out;
  }

  Tensor relu(const Tensor& a) {
    Tensor out = a;
    out.node = -1;
    for (auto& v : out.data) v = v > T(0) ? v : T(0);
    if (a.node < 0) return out;
    const int pa = a.node;
    std::vector<T> av = a.data;
    out.node = push(out.numel(), [pa, av](TapeT& t, int self) {
      const auto& g = t.grads_[self];
      auto& ga = t.grad_buf(pa);
      for (size_t i = 0; i < g.size(); ++i)
        if (av[i] > T(0)) ga[i] += g[i];
    });
    return out;
  }

  Tensor sigmoid(const Tensor& a) {
    Tensor out = a;
    out.node = -1;
    for (auto& v : out.data) {
      if (v >= T(0)) {
        v = T(1) / (T(1) + std::exp(-v));
      } else {
        const T e = std::exp(v);
        v = e / (T(1) + e);
      }
    }
    if (a.node < 0) return out;
    const int pa = a.node;
    std::vector<T> yv = out.data;
    out.node = push(out.numel(), [pa, yv](TapeT& t, int self) {
      const auto& g = t.grads_[self];
      auto& ga = t.grad_buf(pa);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * yv[i] * (T(1) - yv[i]);
    });
    return out;
  }

  /// Numerically stabilized by max-subtraction per slice.
  Tensor softmax(const Tensor& a, int axis) {
    if (axis < 0) axis += a.dim();
    if (axis < 0 || axis >= a.dim())
      throw std::invalid_argument("softmax axis out of range for shape " + shape_str(a.shape));
    const int L = a.shape[axis];
    int64_t inner = 1, outer = 1;
    for (int i = axis + 1; i < a.dim(); ++i) inner *= a.shape[i];
    for (int i = 0; i < axis; ++i) outer *= a.shape[i];
    Tensor out(a.shape);
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t in = 0; in < inner; ++in) {
        const int64_t base = o * L * inner + in;
        T mx = a.data[base];
        for (int j = 1; j < L; ++j) mx = std::max(mx, a.data[base + j * inner]);
        T denom = T(0);
        for (int j = 0; j < L; ++j) {
          const T e = std::exp(a.data[base + j * inner] - mx);
          out.data[base + j * inner] = e;
          denom += e;
        }
        for (int j = 0; j < L; ++j) out.data[base + j * inner] /= denom;
      }
    if (a.node < 0) return out;
    const int pa = a.node;
    std::vector<T> yv = out.data;
    out.node = push(out.numel(), [pa, yv, L, inner, outer](TapeT& t, int self) {
      const auto& g = t.grads_[self];
      auto& ga = t.grad_buf(pa);
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t in = 0; in < inner; ++in) {
          const int64_t base = o * L * inner + in;
          T dot = T(0);
          for (int j = 0; j < L; ++j) dot += g[base + j * inner] * yv[base + j * inner];
          for (int j = 0; j < L; ++j)
            ga[base + j * inner] += yv[base + j * inner] * (g[base + j * inner] - dot);
        }
    });
    return out;
  }

  /// Normalizes over the last axis, then applies the per-element affine.
  Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, T eps) {
    if (eps <= T(0)) throw std::invalid_argument("layer_norm eps must be > 0");
    const int L = x.shape.back();
    if (gain.numel() != L || bias.numel() != L)
      throw std::invalid_argument("layer_norm gain/bias must have size of last axis");
    const int64_t rows = x.numel() / L;
    Tensor out(x.shape);
    std::vector<T> xhat(x.data.size()), inv(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
      const T* xr = x.data.data() + r * L;
      T m = T(0);
      for (int j = 0; j < L; ++j) m += xr[j];
      m /= L;
      T var = T(0);
      for (int j = 0; j < L; ++j) var += (xr[j] - m) * (xr[j] - m);
      var /= L;
      const T iv = T(1) / std::sqrt(var + eps);
      inv[r] = iv;
      for (int j = 0; j < L; ++j) {
        const T h = (xr[j] - m) * iv;
        xhat[r * L + j] = h;
        out.data[r * L + j] = h * gain.data[j] + bias.data[j];
      }
    }
    if (x.node < 0 && gain.node < 0 && bias.node < 0) return out;
    const int px = x.node, pg = gain.node, pb = bias.node;
    std::vector<T> gv = gain.data;
    out.node = push(out.numel(), [px, pg, pb, gv, xhat, inv, L, rows](TapeT& t, int self) {
      const auto& g = t.grads_[self];
      for (int64_t r = 0; r < rows; ++r) {
        const T* gr = g.data() + r * L;
        const T* hr = xhat.data() + r * L;
        if (px >= 0) {
          auto& gx = t.grad_buf(px);
          T mean_dh = T(0), mean_dhh = T(0);
          for (int j = 0; j < L; ++j) {
            const T dh = gr[j] * gv[j];
            mean_dh += dh;
            mean_dhh += dh * hr[j];
          }
          mean_dh /= L;
          mean_dhh /= L;
          for (int j = 0; j < L; ++j) {
            const T dh = gr[j] * gv[j];
            gx[r * L + j] += inv[r] * (dh - mean_dh - hr[j] * mean_dhh);
          }
        }
        if (pg >= 0) {
          auto& gg = t.grad_buf(pg);
          for (int j = 0; j < L; ++j) gg[j] += gr[j] * hr[j];
        }
        if (pb >= 0) {
          auto& gb = t.grad_buf(pb);
          for (int j = 0; j < L; ++j) gb[j] += gr[j];
        }
      }
    });
    return out;
  }

  /// Batched matrix product; leading dims broadcast.
  Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.dim() < 2 || b.dim() < 2)
      throw std::invalid_argument("matmul needs rank >= 2: " + shape_str(a.shape) + " @ " +
                                  shape_str(b.shape));
    const int m = a.shape[a.dim() - 2], k = a.shape[a.dim() - 1];
    const int k2 = b.shape[b.dim() - 2], n = b.shape[b.dim() - 1];
    if (k != k2)
      throw std::invalid_argument("matmul inner dimension mismatch: " + shape_str(a.shape) +
                                  " @ " + shape_str(b.shape));
    std::vector<int> ab(a.shape.begin(), a.shape.end() - 2), bb(b.shape.begin(), b.shape.end() - 2);
    std::vector<int> batch = detail::broadcast_shape(ab, bb);
    int64_t count = 1;
    for (int d : batch) count *= d;
    std::vector<int> bshape = batch.empty() ? std::vector<int>{1} : batch;
    if (ab.empty()) ab = {1};
    if (bb.empty()) bb = {1};
    const auto a_off = detail::index_map(ab, bshape);
    const auto b_off = detail::index_map(bb, bshape);
    std::vector<int> oshape = batch;
    oshape.push_back(m);
    oshape.push_back(n);
    Tensor out(oshape);
    for (int64_t bi = 0; bi < count; ++bi)
      kernels::matmul(a.data.data() + a_off[bi] * m * k, b.data.data() + b_off[bi] * k * n,
                      out.data.data() + bi * m * n, m, k, n);
    if (a.node < 0 && b.node < 0) return out;
    const int pa = a.node, pb = b.node;
    std::vector<T> av = a.data, bv = b.data;
    out.node =
        push(out.numel(), [pa, pb, av, bv, a_off, b_off, count, m, k, n](TapeT& t, int self) {
          const auto& g = t.grads_[self];
          for (int64_t bi = 0; bi < count; ++bi) {
            const T* gm = g.data() + bi * m * n;
            if (pa >= 0)
              kernels::matmul_nt(gm, bv.data() + b_off[bi] * k * n,
                                 t.grad_buf(pa).data() + a_off[bi] * m * k, m, n, k, true);
            if (pb >= 0)
              kernels::matmul_tn(av.data() + a_off[bi] * m * k, gm,
                                 t.grad_buf(pb).data() + b_off[bi] * k * n, m, k, n, true);
          }
        });
    return out;
  }

  Tensor reshape(const Tensor& a, std::vector<int> new_shape) {
    Tensor out(std::move(new_shape), a.data);
    if (out.numel() != a.numel())
      throw std::invalid_argument("reshape " + shape_str(a.shape) + " -> " +
                                  shape_str(out.shape) + " changes element count");
    if (a.node < 0) return out;
    const int pa = a.node;
    out.node = push(out.numel(), [pa](TapeT& t, int self) {
      const auto& g = t.grads_[self];
      auto& ga = t.grad_buf(pa);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
    return out;
  }

  Tensor transpose(const Tensor& a, std::vector<int> perm) {
    if (static_cast<int>(perm.size()) != a.dim())
      throw std::invalid_argument("transpose perm rank mismatch for " + shape_str(a.shape));
    std::vector<int> oshape(a.dim());
    for (int i = 0; i < a.dim(); ++i) oshape[i] = a.shape[perm[i]];
    std::vector<int64_t> src_stride(a.dim());
    int64_t s = 1;
    for (int i = a.dim() - 1; i >= 0; --i) {
      src_stride[i] = s;
      s *= a.shape[i];
    }
    Tensor out(oshape);
    std::vector<int> idx(a.dim(), 0);
    std::vector<int64_t> map(out.data.size());
    for (size_t f = 0; f < out.data.size(); ++f) {
      int64_t sf = 0;
      for (int i = 0; i < a.dim(); ++i) sf += static_cast<int64_t>(idx[i]) * src_stride[perm[i]];
      map[f] = sf;
      out.data[f] = a.data[sf];
      for (int d = a.dim() - 1; d >= 0; --d) {
        if (++idx[d] < oshape[d]) break;
        idx[d] = 0;
      }
    }
    if (a.node < 0) return out;
    const int pa = a.node;
    out.node = push(out.numel(), [pa, map](TapeT& t, int self) {
      const auto& g = t.grads_[self];
      auto& ga = t.grad_buf(pa);
      for (size_t i = 0; i < g.size(); ++i) ga[map[i]] += g[i];
    });
    return out;
  }

  Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat of zero tensors");
    if (axis < 0) axis += parts[0].dim();
    std::vector<int> oshape = parts[0].shape;
    for (size_t p = 1; p < parts.size(); ++p) {
      for (int d = 0; d < parts[0].dim(); ++d)
        if (d != axis && parts[p].shape[d] != oshape[d])
          throw std::invalid_argument("concat shape mismatch: " + shape_str(parts[p].shape) +
                                      " vs " + shape_str(parts[0].shape));
      oshape[axis] += parts[p].shape[axis];
    }
    int64_t inner = 1, outer = 1;
    for (int i = axis + 1; i < parts[0].dim(); ++i) inner *= oshape[i];
    for (int i = 0; i < axis; ++i) outer *= oshape[i];
    Tensor out(oshape);
    std::vector<int64_t> offsets(parts.size());
    int64_t pos = 0;
    for (size_t p = 0; p < parts.size(); ++p) {
      offsets[p] = pos;
      const int64_t chunk = static_cast<int64_t>(parts[p].shape[axis]) * inner;
      for (int64_t o = 0; o < outer; ++o)
        std::copy_n(parts[p].data.data() + o * chunk, chunk,
                    out.data.data() + o * oshape[axis] * inner + pos * inner);
      pos += parts[p].shape[axis];
    }
    bool tracked = false;
    for (const auto& p : parts) tracked |= p.node >= 0;
    if (!tracked) return out;
    std::vector<int> pnodes(parts.size());
    std::vector<int> sizes(parts.size());
    for (size_t p = 0; p < parts.size(); ++p) {
      pnodes[p] = parts[p].node;
      sizes[p] = parts[p].shape[axis];
    }
    const int64_t oaxis = oshape[axis];
    out.node =
        push(out.numel(), [pnodes, sizes, offsets, inner, outer, oaxis](TapeT& t, int self) {
          const auto& g = t.grads_[self];
          for (size_t p = 0; p < pnodes.size(); ++p) {
            if (pnodes[p] < 0) continue;
            auto& gp = t.grad_buf(pnodes[p]);
            const int64_t chunk = static_cast<int64_t>(sizes[p]) * inner;
            for (int64_t o = 0; o < outer; ++o) {
              const T* src = g.data() + o * oaxis * inner + offsets[p] * inner;
              T* dst = gp.data() + o * chunk;
              for (int64_t i = 0; i < chunk; ++i) dst[i] += src[i];
            }
          }
        });
    return out;
  }

  /// out[i] = a.data[idx[i]]; backward scatter-adds.
  Tensor gather(const Tensor& a, const std::vector<int64_t>& idx, std::vector<int> out_shape) {
    Tensor out(std::move(out_shape));
    if (static_cast<int64_t>(idx.size()) != out.numel())
      throw std::invalid_argument("gather index count does not match output shape");
    for (size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0 || idx[i] >= static_cast<int64_t>(a.data.size()))
        throw std::invalid_argument("gather index out of range");
      out.data[i] = a.data[idx[i]];
    }
    if (a.node < 0) return out;
    const int pa = a.node;
    std::vector<int64_t> map = idx;
    out.node = push(out.numel(), [pa, map](TapeT& t, int self) {
      const auto& g = t.grads_[self];
      auto& ga = t.grad_buf(pa);
      for (size_t i = 0; i < g.size(); ++i) ga[map[i]] += g[i];
    });
    return out;
  }

  /// Sets a[i] to `value` where mask[i] != 0 (mask broadcastable, untracked).
  Tensor masked_fill(const Tensor& a, const Tensor& mask, T value) {
    const auto oshape = detail::broadcast_shape(a.shape, mask.shape);
    if (oshape != a.shape)
      throw std::invalid_argument("masked_fill mask " + shape_str(mask.shape) +
                                  " does not broadcast onto " + shape_str(a.shape));
    const auto mm = detail::index_map(mask.shape, oshape);
    Tensor out = a;
    out.node = -1;
    for (size_t i = 0; i < out.data.size(); ++i)
      if (mask.data[mm[i]] != T(0)) out.data[i] = value;
    if (a.node < 0) return out;
    const int pa = a.node;
    std::vector<T> mv = mask.data;
    out.node = push(out.numel(), [pa, mv, mm](TapeT& t, int self) {
      const auto& g = t.grads_[self];
      auto& ga = t.grad_buf(pa);
      for (size_t i = 0; i < g.size(); ++i)
        if (mv[mm[i]] == T(0)) ga[i] += g[i];
    });
    return out;
  }

  Tensor sum(const Tensor& a) {
    double s = 0.0;  // high-precision accumulation; result rounds to T
    for (T v : a.data) s += static_cast<double>(v);
    Tensor out = Tensor::scalar(static_cast<T>(s));
    if (a.node < 0) return out;
    const int pa = a.node;
    const int64_t n = a.numel();
    out.node = push(1, [pa, n](TapeT& t, int self) {
      const T g = t.grads_[self][0];
      auto& ga = t.grad_buf(pa);
      for (int64_t i = 0; i < n; ++i) ga[i] += g;
    });
    return out;
  }

  Tensor mean(const Tensor& a) { return scale(sum(a), T(1) / static_cast<T>(a.numel())); }

  /// x: [C,H,W]; w: [O,C,kh,kw]; b: [O].
  Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    if (x.dim() != 3 || w.dim() != 4 || b.dim() != 1)
      throw std::invalid_argument("conv2d expects x[C,H,W], w[O,C,kh,kw], b[O]");
    const int cin = x.shape[0], h = x.shape[1], wd = x.shape[2];
    const int cout = w.shape[0], kh = w.shape[2], kw = w.shape[3];
    if (w.shape[1] != cin || b.shape[0] != cout)
      throw std::invalid_argument("conv2d channel mismatch: x " + shape_str(x.shape) + " w " +
                                  shape_str(w.shape));
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (wd + 2 * pad - kw) / stride + 1;
    Tensor out({cout, ho, wo});
    kernels::conv2d(x.data.data(), w.data.data(), b.data.data(), out.data.data(), cin, h, wd,
                    cout, kh, kw, stride, pad);
    if (x.node < 0 && w.node < 0 && b.node < 0) return out;
    const int px = x.node, pw = w.node, pb = b.node;
    std::vector<T> xv = x.data, wv = w.data;
    out.node = push(out.numel(), [=](TapeT& t, int self) {
      const auto& g = t.grads_[self];
      kernels::conv2d_backward(xv.data(), wv.data(), g.data(),
                               px >= 0 ? t.grad_buf(px).data() : nullptr,
                               pw >= 0 ? t.grad_buf(pw).data() : nullptr,
                               pb >= 0 ? t.grad_buf(pb).data() : nullptr, cin, h, wd, cout, kh,
                               kw, stride, pad);
    });
    return out;
  }

  Tensor maxpool2(const Tensor& x) {
    if (x.dim() != 3 || x.shape[1] % 2 || x.shape[2] % 2)
      throw std::invalid_argument("maxpool2 expects [C,H,W] with even H,W, got " +
                                  shape_str(x.shape));
    const int c = x.shape[0], h = x.shape[1], w = x.shape[2];
    const int ho = h / 2, wo = w / 2;
    Tensor out({c, ho, wo});
    std::vector<int64_t> arg(out.data.size());
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < ho; ++i)
        for (int j = 0; j < wo; ++j) {
          int64_t best = (static_cast<int64_t>(ch) * h + 2 * i) * w + 2 * j;
          for (int u = 0; u < 2; ++u)
            for (int v = 0; v < 2; ++v) {
              const int64_t f = (static_cast<int64_t>(ch) * h + 2 * i + u) * w + 2 * j + v;
              if (x.data[f] > x.data[best]) best = f;
            }
          const int64_t of = (static_cast<int64_t>(ch) * ho + i) * wo + j;
          out.data[of] = x.data[best];
          arg[of] = best;
        }
    if (x.node < 0) return out;
    const int px = x.node;
    out.node = push(out.numel(), [px, arg](TapeT& t, int self) {
      const auto& g = t.grads_[self];
      auto& gx = t.grad_buf(px);
      for (size_t i = 0; i < g.size(); ++i) gx[arg[i]] += g[i];
    });
    return out;
  }

  /// result[i,j,k] = z[i]*y[j]*x[k].
  Tensor outer3(const Tensor& z, const Tensor& y, const Tensor& x) {
    if (z.dim() != 1 || y.dim() != 1 || x.dim() != 1 || z.shape[0] != y.shape[0] ||
        z.shape[0] != x.shape[0])
      throw std::invalid_argument("outer3 expects three equal-length vectors, got " +
                                  shape_str(z.shape) + " " + shape_str(y.shape) + " " +
                                  shape_str(x.shape));
    const int n = z.shape[0];
    Tensor out({n, n, n});
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b)
        for (int c = 0; c < n; ++c)
          out.data[(static_cast<size_t>(a) * n + b) * n + c] = z.data[a] * y.data[b] * x.data[c];
    if (z.node < 0 && y.node < 0 && x.node < 0) return out;
    const int pz = z.node, py = y.node, px = x.node;
    std::vector<T> zv = z.data, yv = y.data, xv = x.data;
    out.node = push(out.numel(), [=](TapeT& t, int self) {
      const auto& g = t.grads_[self];
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b)
          for (int c = 0; c < n; ++c) {
            const T gv = g[(static_cast<size_t>(a) * n + b) * n + c];
            if (pz >= 0) t.grad_buf(pz)[a] += gv * yv[b] * xv[c];
            if (py >= 0) t.grad_buf(py)[b] += gv * zv[a] * xv[c];
            if (px >= 0) t.grad_buf(px)[c] += gv * zv[a] * yv[b];
          }
    });
    return out;
  }

  /// min(1, sum_i z_i (x) y_i (x) x_i) over k factor triplets, fused so only
  /// one N^3 buffer is materialized. Gradient is 1 where the sum < 1 and 0
  /// where clipped.
  Tensor compose_clipped(const std::vector<Tensor>& zs, const std::vector<Tensor>& ys,
                         const std::vector<Tensor>& xs) {
    const int nf = static_cast<int>(zs.size());
    if (nf == 0 || ys.size() != zs.size() || xs.size() != zs.size())
      throw std::invalid_argument("compose_clipped needs k >= 1 matching factor triplets");
    const int n = zs[0].shape[0];
    std::vector<T> zv, yv, xv;
    for (int i = 0; i < nf; ++i) {
      if (zs[i].numel() != n || ys[i].numel() != n || xs[i].numel() != n)
        throw std::invalid_argument("compose_clipped factor length mismatch");
      zv.insert(zv.end(), zs[i].data.begin(), zs[i].data.end());
      yv.insert(yv.end(), ys[i].data.begin(), ys[i].data.end());
      xv.insert(xv.end(), xs[i].data.begin(), xs[i].data.end());
    }
    Tensor out({n, n, n}, T(0));
    kernels::rank1_accumulate(zv.data(), yv.data(), xv.data(), nf, n, out.data.data(), false);
    std::vector<uint8_t> open(out.data.size());
    for (size_t i = 0; i < out.data.size(); ++i) {
      open[i] = out.data[i] < T(1);
      if (!open[i]) out.data[i] = T(1);
    }
    bool tracked = false;
    std::vector<int> pz(nf), py(nf), px(nf);
    for (int i = 0; i < nf; ++i) {
      pz[i] = zs[i].node;
      py[i] = ys[i].node;
      px[i] = xs[i].node;
      tracked |= pz[i] >= 0 || py[i] >= 0 || px[i] >= 0;
    }
    if (!tracked) return out;
    out.node = push(out.numel(), [=](TapeT& t, int self) {
      const auto& g = t.grads_[self];
      for (int i = 0; i < nf; ++i) {
        const T* zi = zv.data() + static_cast<size_t>(i) * n;
        const T* yi = yv.data() + static_cast<size_t>(i) * n;
        const T* xi = xv.data() + static_cast<size_t>(i) * n;
        for (int a = 0; a < n; ++a)
          for (int b = 0; b < n; ++b) {
            const T zy = zi[a] * yi[b];
            const size_t base = (static_cast<size_t>(a) * n + b) * n;
            for (int c = 0; c < n; ++c) {
              if (!open[base + c]) continue;
              const T gv = g[base + c];
              if (pz[i] >= 0) t.grad_buf(pz[i])[a] += gv * yi[b] * xi[c];
              if (py[i] >= 0) t.grad_buf(py[i])[b] += gv * zi[a] * xi[c];
              if (px[i] >= 0) t.grad_buf(px[i])[c] += gv * zy;
            }
          }
      }
    });
    return out;
  }

  /// Reverse pass from a scalar loss. Non-scalar loss is rejected.
  void backward(const Tensor& loss) {
    if (loss.numel() != 1)
      throw std::invalid_argument("backward requires a scalar loss, got shape " +
                                  shape_str(loss.shape));
    if (loss.node < 0) throw std::invalid_argument("backward on a tensor outside this tape");
    grads_.assign(nodes_.size(), {});
    grad_buf(loss.node)[0] = T(1);
    for (int i = loss.node; i >= 0; --i) {
      if (grads_[i].empty() || !nodes_[i].back) continue;
      nodes_[i].back(*this, i);
    }
  }

  /// Gradient of a tracked tensor; zeros if the node was not reached.
  std::vector<T> grad(const Tensor& t) const {
    if (t.node < 0) throw std::invalid_argument("grad of an untracked tensor");
    return grad_node(t.node);
  }

  std::vector<T> grad_node(int node) const {
    if (node < 0 || static_cast<size_t>(node) >= nodes_.size())
      throw std::invalid_argument("grad of a node outside this tape");
    if (static_cast<size_t>(node) < grads_.size() && !grads_[node].empty()) return grads_[node];
    return std::vector<T>(static_cast<size_t>(nodes_[node].numel), T(0));
  }

  struct Watched {
    Tensor* param;
    int node;
  };
  const std::vector<Watched>& watched() const { return watched_; }
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    int64_t numel;
    std::function<void(TapeT&, int)> back;  // reads grads_[self], adds into parents
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<T>> grads_;
  std::vector<Watched> watched_;
  static uint64_t next_id() {
    static std::atomic<uint64_t> counter{1};
    return counter.fetch_add(1);
  }
  uint64_t id_ = next_id();

  int push(int64_t numel, std::function<void(TapeT&, int)> back) {
    nodes_.push_back(Node{numel, std::move(back)});
    return static_cast<int>(nodes_.size()) - 1;
  }
  std::vector<T>& grad_buf(int node) {
    if (grads_[node].empty()) grads_[node].assign(static_cast<size_t>(nodes_[node].numel), T(0));
    return grads_[node];
  }
};

using Tensor = TensorT<float>;
using Tape = TapeT<float>;

}  // namespace lego
