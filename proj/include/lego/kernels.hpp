#pragma once

// Hot inner loops shared by the tensor library. Each kernel has an
// OpenMP-parallel version (used everywhere) and a plain serial version
// under kernels::serial (used as a reference by the tests and by the
// benchmark). Work is partitioned per output element, so the parallel
// results are bitwise identical to the serial ones at any thread count.
//
// Kernels are templated on the scalar type: the library runs in float,
// the test-side finite-difference oracle instantiates double.

#include <cstddef>
#include <cstdint>

namespace lego::kernels {

// C[m,n] = A[m,k] * B[k,n], optionally accumulating into C.
template <typename T>
void matmul(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate = false) {
#pragma omp parallel for schedule(static) if (static_cast<long>(m) * n * k > 16384)
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<size_t>(i) * n;
    if (!accumulate)
      for (int j = 0; j < n; ++j) crow[j] = T(0);
    const T* arow = a + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] = A[m,k] * B[n,k]^T
template <typename T>
void matmul_nt(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate = false) {
#pragma omp parallel for schedule(static) if (static_cast<long>(m) * n * k > 16384)
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<size_t>(i) * k;
    T* crow = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* brow = b + static_cast<size_t>(j) * k;
      T acc = accumulate ? crow[j] : T(0);
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = acc;
    }
  }
}

// C[k,n] = A[m,k]^T * B[m,n]
template <typename T>
void matmul_tn(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate = false) {
#pragma omp parallel for schedule(static) if (static_cast<long>(m) * n * k > 16384)
  for (int i = 0; i < k; ++i) {
    T* crow = c + static_cast<size_t>(i) * n;
    if (!accumulate)
      for (int j = 0; j < n; ++j) crow[j] = T(0);
    for (int p = 0; p < m; ++p) {
      const T av = a[static_cast<size_t>(p) * k + i];
      const T* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// out[o,ho,wo] = bias[o] + sum_{c,u,v} w[o,c,u,v] * x[c, ho*stride-pad+u, wo*stride-pad+v]
template <typename T>
void conv2d(const T* x, const T* w, const T* bias, T* out, int cin, int h, int wd, int cout,
            int kh, int kw, int stride, int pad) {
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (wd + 2 * pad - kw) / stride + 1;
#pragma omp parallel for schedule(static)
  for (int o = 0; o < cout; ++o) {
    T* oplane = out + static_cast<size_t>(o) * ho * wo;
    const T* wfilt = w + static_cast<size_t>(o) * cin * kh * kw;
    for (int i = 0; i < ho; ++i) {
      for (int j = 0; j < wo; ++j) {
        T acc = bias ? bias[o] : T(0);
        for (int c = 0; c < cin; ++c) {
          const T* xplane = x + static_cast<size_t>(c) * h * wd;
          const T* wplane = wfilt + static_cast<size_t>(c) * kh * kw;
          for (int u = 0; u < kh; ++u) {
            const int yi = i * stride - pad + u;
            if (yi < 0 || yi >= h) continue;
            for (int v = 0; v < kw; ++v) {
              const int xi = j * stride - pad + v;
              if (xi < 0 || xi >= wd) continue;
              acc += wplane[u * kw + v] * xplane[yi * wd + xi];
            }
          }
        }
        oplane[i * wo + j] = acc;
      }
    }
  }
}

// Gradients of conv2d. Each output pointer may be null to skip.
template <typename T>
void conv2d_backward(const T* x, const T* w, const T* dout, T* dx, T* dw, T* dbias, int cin,
                     int h, int wd, int cout, int kh, int kw, int stride, int pad) {
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (wd + 2 * pad - kw) / stride + 1;
  if (dbias) {
#pragma omp parallel for schedule(static)
    for (int o = 0; o < cout; ++o) {
      const T* dplane = dout + static_cast<size_t>(o) * ho * wo;
      T acc = T(0);
      for (int i = 0; i < ho * wo; ++i) acc += dplane[i];
      dbias[o] += acc;
    }
  }
  if (dw) {
#pragma omp parallel for schedule(static)
    for (int o = 0; o < cout; ++o) {
      const T* dplane = dout + static_cast<size_t>(o) * ho * wo;
      T* wfilt = dw + static_cast<size_t>(o) * cin * kh * kw;
      for (int c = 0; c < cin; ++c) {
        const T* xplane = x + static_cast<size_t>(c) * h * wd;
        T* wplane = wfilt + static_cast<size_t>(c) * kh * kw;
        for (int u = 0; u < kh; ++u)
          for (int v = 0; v < kw; ++v) {
            T acc = T(0);
            for (int i = 0; i < ho; ++i) {
              const int yi = i * stride - pad + u;
              if (yi < 0 || yi >= h) continue;
              for (int j = 0; j < wo; ++j) {
                const int xi = j * stride - pad + v;
                if (xi < 0 || xi >= wd) continue;
                acc += dplane[i * wo + j] * xplane[yi * wd + xi];
              }
            }
            wplane[u * kw + v] += acc;
          }
      }
    }
  }
  if (dx) {
#pragma omp parallel for schedule(static)
    for (int c = 0; c < cin; ++c) {
      T* dxplane = dx + static_cast<size_t>(c) * h * wd;
      for (int yi = 0; yi < h; ++yi)
        for (int xi = 0; xi < wd; ++xi) {
          T acc = T(0);
          for (int o = 0; o < cout; ++o) {
            const T* dplane = dout + static_cast<size_t>(o) * ho * wo;
            const T* wplane = w + (static_cast<size_t>(o) * cin + c) * kh * kw;
            for (int u = 0; u < kh; ++u) {
              const int num = yi + pad - u;
              if (num < 0 || num % stride != 0) continue;
              const int i = num / stride;
              if (i >= ho) continue;
              for (int v = 0; v < kw; ++v) {
                const int num2 = xi + pad - v;
                if (num2 < 0 || num2 % stride != 0) continue;
                const int j = num2 / stride;
                if (j >= wo) continue;
                acc += dplane[i * wo + j] * wplane[u * kw + v];
              }
            }
          }
          dxplane[yi * wd + xi] += acc;
        }
    }
  }
}

// grid[a,b,c] += sum_i z[i][a]*y[i][b]*x[i][c] for nf factors of length n,
// then clip to 1 if requested. Factor i lives at zs+i*n etc.
template <typename T>
void rank1_accumulate(const T* zs, const T* ys, const T* xs, int nf, int n, T* grid, bool clip) {
#pragma omp parallel for schedule(static) if (static_cast<long>(n) * n * n > 4096)
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      T* row = grid + (static_cast<size_t>(a) * n + b) * n;
      for (int c = 0; c < n; ++c) {
        // double accumulation keeps the sum independent of factor order
        double acc = row[c];
        for (int i = 0; i < nf; ++i)
          acc += static_cast<double>(zs[i * n + a]) * ys[i * n + b] * xs[i * n + c];
        row[c] = clip ? (acc < 1.0 ? static_cast<T>(acc) : T(1)) : static_cast<T>(acc);
      }
    }
}

namespace serial {

template <typename T>
void matmul(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate = false) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      T acc = accumulate ? c[static_cast<size_t>(i) * n + j] : T(0);
      for (int p = 0; p < k; ++p)
        acc += a[static_cast<size_t>(i) * k + p] * b[static_cast<size_t>(p) * n + j];
      c[static_cast<size_t>(i) * n + j] = acc;
    }
}

template <typename T>
void conv2d(const T* x, const T* w, const T* bias, T* out, int cin, int h, int wd, int cout,
            int kh, int kw, int stride, int pad) {
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (wd + 2 * pad - kw) / stride + 1;
  for (int o = 0; o < cout; ++o)
    for (int i = 0; i < ho; ++i)
      for (int j = 0; j < wo; ++j) {
        T acc = bias ? bias[o] : T(0);
        for (int c = 0; c < cin; ++c)
          for (int u = 0; u < kh; ++u)
            for (int v = 0; v < kw; ++v) {
              const int yi = i * stride - pad + u;
              const int xi = j * stride - pad + v;
              if (yi < 0 || yi >= h || xi < 0 || xi >= wd) continue;
              acc += w[((static_cast<size_t>(o) * cin + c) * kh + u) * kw + v] *
                     x[(static_cast<size_t>(c) * h + yi) * wd + xi];
            }
        out[(static_cast<size_t>(o) * ho + i) * wo + j] = acc;
      }
}

template <typename T>
void rank1_accumulate(const T* zs, const T* ys, const T* xs, int nf, int n, T* grid, bool clip) {
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      for (int c = 0; c < n; ++c) {
        double acc = grid[(static_cast<size_t>(a) * n + b) * n + c];
        for (int i = 0; i < nf; ++i)
          acc += static_cast<double>(zs[i * n + a]) * ys[i * n + b] * xs[i * n + c];
        grid[(static_cast<size_t>(a) * n + b) * n + c] =
            clip ? (acc < 1.0 ? static_cast<T>(acc) : T(1)) : static_cast<T>(acc);
      }
}

}  // namespace serial
}  // namespace lego::kernels
