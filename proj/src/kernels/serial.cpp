// Reference kernel backend: single-threaded, straightforward loops. The
// parallel backend in parallel.cpp must keep the per-output accumulation
// order used here so both produce bit-identical results.

#include <algorithm>
#include <cmath>
#include <vector>

#include "detail.hpp"
#include "impl.hpp"

namespace msav::kernels::serial_impl {

namespace {

constexpr std::size_t kStackDoubles = 512;

struct RowBuf {
  double stack[kStackDoubles];
  std::vector<double> heap;

  double* acquire(std::size_t n) {
    double* p = stack;
    if (n > kStackDoubles) {
      heap.resize(n);
      p = heap.data();
    }
    std::fill(p, p + n, 0.0);
    return p;
  }
};

}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t k,
          std::size_t n, const float* a, const float* b, float* y,
          bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    RowBuf buf;
    double* acc = buf.acquire(n);
    for (std::size_t p = 0; p < k; ++p) {
      const double a_ip =
          static_cast<double>(trans_a ? a[p * m + i] : a[i * k + p]);
      if (trans_b) {
        for (std::size_t j = 0; j < n; ++j) {
          acc[j] += a_ip * static_cast<double>(b[j * k + p]);
        }
      } else {
        const float* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) {
          acc[j] += a_ip * static_cast<double>(brow[j]);
        }
      }
    }
    float* yrow = y + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      yrow[j] = accumulate ? static_cast<float>(static_cast<double>(yrow[j]) + acc[j])
                           : static_cast<float>(acc[j]);
    }
  }
}

void transpose_last2(std::size_t outer, std::size_t rows, std::size_t cols,
                     const float* x, float* y) {
  for (std::size_t o = 0; o < outer; ++o) {
    const float* xs = x + o * rows * cols;
    float* ys = y + o * rows * cols;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        ys[c * rows + r] = xs[r * cols + c];
      }
    }
  }
}

namespace {

inline float apply_ew(EwOp op, float a, float b) {
  switch (op) {
    case EwOp::add: return a + b;
    case EwOp::sub: return a - b;
    default: return a * b;
  }
}

inline void ew_offsets(std::size_t flat, const std::size_t* dims,
                       const std::size_t* sa, const std::size_t* sb,
                       std::size_t rank, std::size_t& oa, std::size_t& ob) {
  oa = 0;
  ob = 0;
  for (std::size_t d = rank; d-- > 0;) {
    const std::size_t idx = flat % dims[d];
    flat /= dims[d];
    oa += idx * sa[d];
    ob += idx * sb[d];
  }
}

}  // namespace

void broadcast_ew(EwOp op, const float* a, const float* b, float* out,
                  const std::size_t* out_dims, const std::size_t* a_strides,
                  const std::size_t* b_strides, std::size_t rank) {
  std::size_t n = 1;
  for (std::size_t d = 0; d < rank; ++d) n *= out_dims[d];

  // fast path: both operands already contiguous over the output shape
  bool contiguous = true;
  std::size_t expect = 1;
  for (std::size_t d = rank; d-- > 0;) {
    if (a_strides[d] != expect || b_strides[d] != expect) {
      contiguous = false;
      break;
    }
    expect *= out_dims[d];
  }
  if (contiguous) {
    for (std::size_t i = 0; i < n; ++i) out[i] = apply_ew(op, a[i], b[i]);
    return;
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t oa, ob;
    ew_offsets(i, out_dims, a_strides, b_strides, rank, oa, ob);
    out[i] = apply_ew(op, a[oa], b[ob]);
  }
}

void reduce_broadcast(const float* src, const std::size_t* src_dims,
                      const std::size_t* dst_dims, std::size_t rank,
                      float* dst, bool accumulate) {
  std::size_t src_strides[16];
  std::size_t stride = 1;
  for (std::size_t d = rank; d-- > 0;) {
    src_strides[d] = stride;
    stride *= src_dims[d];
  }
  std::size_t n_dst = 1;
  for (std::size_t d = 0; d < rank; ++d) n_dst *= dst_dims[d];

  for (std::size_t j = 0; j < n_dst; ++j) {
    // base offset of this dst cell inside src
    std::size_t base = 0;
    std::size_t rem = j;
    for (std::size_t d = rank; d-- > 0;) {
      const std::size_t idx = rem % dst_dims[d];
      rem /= dst_dims[d];
      base += idx * src_strides[d];
    }
    // odometer over the reduced axes
    double acc = 0.0;
    std::size_t counter[16] = {0};
    for (;;) {
      std::size_t off = base;
      for (std::size_t d = 0; d < rank; ++d) off += counter[d] * src_strides[d];
      acc += static_cast<double>(src[off]);
      std::size_t d = rank;
      for (; d-- > 0;) {
        if (dst_dims[d] != 1 || src_dims[d] == 1) continue;
        if (++counter[d] < src_dims[d]) break;
        counter[d] = 0;
      }
      if (d == static_cast<std::size_t>(-1)) break;
    }
    dst[j] = accumulate ? static_cast<float>(static_cast<double>(dst[j]) + acc)
                        : static_cast<float>(acc);
  }
}

void conv2d_fwd(std::size_t batch, std::size_t in_ch, std::size_t out_ch,
                std::size_t h, std::size_t w, const float* x,
                const float* weight, const float* bias, float* y) {
  for (std::size_t flat = 0; flat < batch * out_ch * h; ++flat) {
    const std::size_t yo = flat % h;
    const std::size_t oc = (flat / h) % out_ch;
    const std::size_t b = flat / (h * out_ch);
    RowBuf buf;
    double* acc = buf.acquire(w);
    const double bias_v = static_cast<double>(bias[oc]);
    for (std::size_t j = 0; j < w; ++j) acc[j] = bias_v;
    for (std::size_t ic = 0; ic < in_ch; ++ic) {
      const float* xch = x + (b * in_ch + ic) * h * w;
      const float* wk = weight + (oc * in_ch + ic) * 9;
      for (std::size_t ky = 0; ky < 3; ++ky) {
        const std::size_t yi = yo + ky;
        if (yi < 1 || yi > h) continue;  // padded row
        const float* xrow = xch + (yi - 1) * w;
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const double wv = static_cast<double>(wk[ky * 3 + kx]);
          const std::size_t lo = (kx == 0) ? 1 : 0;
          const std::size_t hi = (kx == 2) ? w - 1 : w;
          for (std::size_t j = lo; j < hi; ++j) {
            acc[j] += wv * static_cast<double>(xrow[j + kx - 1]);
          }
        }
      }
    }
    float* yrow = y + (b * out_ch + oc) * h * w + yo * w;
    for (std::size_t j = 0; j < w; ++j) yrow[j] = static_cast<float>(acc[j]);
  }
}

void conv2d_dx(std::size_t batch, std::size_t in_ch, std::size_t out_ch,
               std::size_t h, std::size_t w, const float* g,
               const float* weight, float* dx) {
  for (std::size_t flat = 0; flat < batch * in_ch * h; ++flat) {
    const std::size_t yi = flat % h;
    const std::size_t ic = (flat / h) % in_ch;
    const std::size_t b = flat / (h * in_ch);
    RowBuf buf;
    double* acc = buf.acquire(w);
    for (std::size_t oc = 0; oc < out_ch; ++oc) {
      const float* gch = g + (b * out_ch + oc) * h * w;
      const float* wk = weight + (oc * in_ch + ic) * 9;
      for (std::size_t ky = 0; ky < 3; ++ky) {
        // this input row contributed to output row yo = yi - ky + 1
        const std::size_t yo = yi + 1 - ky;
        if (yo >= h) continue;  // unsigned wrap covers yi + 1 < ky
        const float* grow = gch + yo * w;
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const double wv = static_cast<double>(wk[ky * 3 + kx]);
          const std::size_t lo = (kx == 2) ? 1 : 0;
          const std::size_t hi = (kx == 0) ? w - 1 : w;
          for (std::size_t j = lo; j < hi; ++j) {
            acc[j] += wv * static_cast<double>(grow[j + 1 - kx]);
          }
        }
      }
    }
    float* dxrow = dx + (b * in_ch + ic) * h * w + yi * w;
    for (std::size_t j = 0; j < w; ++j) {
      dxrow[j] = static_cast<float>(static_cast<double>(dxrow[j]) + acc[j]);
    }
  }
}

void conv2d_dwdb(std::size_t batch, std::size_t in_ch, std::size_t out_ch,
                 std::size_t h, std::size_t w, const float* x, const float* g,
                 float* dw, float* db) {
  if (dw != nullptr) {
    for (std::size_t pair = 0; pair < out_ch * in_ch; ++pair) {
      const std::size_t ic = pair % in_ch;
      const std::size_t oc = pair / in_ch;
      double acc[9] = {0.0};
      for (std::size_t b = 0; b < batch; ++b) {
        const float* xch = x + (b * in_ch + ic) * h * w;
        const float* gch = g + (b * out_ch + oc) * h * w;
        for (std::size_t yo = 0; yo < h; ++yo) {
          const float* grow = gch + yo * w;
          for (std::size_t ky = 0; ky < 3; ++ky) {
            const std::size_t yi = yo + ky;
            if (yi < 1 || yi > h) continue;
            const float* xrow = xch + (yi - 1) * w;
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const std::size_t lo = (kx == 0) ? 1 : 0;
              const std::size_t hi = (kx == 2) ? w - 1 : w;
              double s = acc[ky * 3 + kx];
              for (std::size_t j = lo; j < hi; ++j) {
                s += static_cast<double>(grow[j]) *
                     static_cast<double>(xrow[j + kx - 1]);
              }
              acc[ky * 3 + kx] = s;
            }
          }
        }
      }
      float* dwk = dw + pair * 9;
      for (std::size_t t = 0; t < 9; ++t) {
        dwk[t] = static_cast<float>(static_cast<double>(dwk[t]) + acc[t]);
      }
    }
  }
  if (db != nullptr) {
    for (std::size_t oc = 0; oc < out_ch; ++oc) {
      double s = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const float* gch = g + (b * out_ch + oc) * h * w;
        for (std::size_t i = 0; i < h * w; ++i) s += static_cast<double>(gch[i]);
      }
      db[oc] = static_cast<float>(static_cast<double>(db[oc]) + s);
    }
  }
}

void avgpool_fwd(std::size_t batch, std::size_t ch, std::size_t h,
                 std::size_t w, std::size_t kt, std::size_t kf, const float* x,
                 float* y) {
  const std::size_t oh = h / kt;
  const std::size_t ow = w / kf;
  const double inv_area = 1.0 / static_cast<double>(kt * kf);
  for (std::size_t flat = 0; flat < batch * ch * oh; ++flat) {
    const std::size_t oy = flat % oh;
    const std::size_t c = (flat / oh) % ch;
    const std::size_t b = flat / (oh * ch);
    const float* xch = x + (b * ch + c) * h * w;
    float* yrow = y + (b * ch + c) * oh * ow + oy * ow;
    for (std::size_t ox = 0; ox < ow; ++ox) {
      double s = 0.0;
      for (std::size_t ky = 0; ky < kt; ++ky) {
        const float* xrow = xch + (oy * kt + ky) * w + ox * kf;
        for (std::size_t kx = 0; kx < kf; ++kx) {
          s += static_cast<double>(xrow[kx]);
        }
      }
      yrow[ox] = static_cast<float>(s * inv_area);
    }
  }
}

void avgpool_bwd(std::size_t batch, std::size_t ch, std::size_t h,
                 std::size_t w, std::size_t kt, std::size_t kf, const float* g,
                 float* dx) {
  const std::size_t oh = h / kt;
  const std::size_t ow = w / kf;
  const double inv_area = 1.0 / static_cast<double>(kt * kf);
  for (std::size_t flat = 0; flat < batch * ch * h; ++flat) {
    const std::size_t yy = flat % h;
    const std::size_t c = (flat / h) % ch;
    const std::size_t b = flat / (h * ch);
    const float* grow = g + (b * ch + c) * oh * ow + (yy / kt) * ow;
    float* dxrow = dx + (b * ch + c) * h * w + yy * w;
    for (std::size_t xx = 0; xx < w; ++xx) {
      dxrow[xx] = static_cast<float>(
          static_cast<double>(dxrow[xx]) +
          static_cast<double>(grow[xx / kf]) * inv_area);
    }
  }
}

void channel_stats(std::size_t batch, std::size_t ch, std::size_t h,
                   std::size_t w, const float* x, double* mean, double* var) {
  const std::size_t plane = h * w;
  const double inv_n = 1.0 / static_cast<double>(batch * plane);
  for (std::size_t c = 0; c < ch; ++c) {
    double s = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const float* xch = x + (b * ch + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) s += static_cast<double>(xch[i]);
    }
    const double mu = s * inv_n;
    double sq = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const float* xch = x + (b * ch + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = static_cast<double>(xch[i]) - mu;
        sq += d * d;
      }
    }
    mean[c] = mu;
    var[c] = sq * inv_n;
  }
}

void bn_apply(std::size_t batch, std::size_t ch, std::size_t h, std::size_t w,
              const float* x, const float* mean, const float* inv_std,
              const float* gamma, const float* beta, float* y, float* xhat) {
  const std::size_t plane = h * w;
  for (std::size_t flat = 0; flat < batch * ch; ++flat) {
    const std::size_t c = flat % ch;
    const float* xch = x + flat * plane;
    float* ych = y + flat * plane;
    float* hch = (xhat != nullptr) ? xhat + flat * plane : nullptr;
    const float mu = mean[c];
    const float is = inv_std[c];
    const float ga = gamma[c];
    const float be = beta[c];
    for (std::size_t i = 0; i < plane; ++i) {
      const float xh = (xch[i] - mu) * is;
      if (hch != nullptr) hch[i] = xh;
      ych[i] = ga * xh + be;
    }
  }
}

void bn_bwd(std::size_t batch, std::size_t ch, std::size_t h, std::size_t w,
            const float* xhat, const float* inv_std, const float* gamma,
            const float* g, bool train_dx, float* dx, float* dgamma,
            float* dbeta) {
  const std::size_t plane = h * w;
  const double n = static_cast<double>(batch * plane);
  std::vector<double> sum_g(ch, 0.0);
  std::vector<double> sum_gx(ch, 0.0);
  for (std::size_t c = 0; c < ch; ++c) {
    double sg = 0.0;
    double sgx = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const float* gch = g + (b * ch + c) * plane;
      const float* hch = xhat + (b * ch + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sg += static_cast<double>(gch[i]);
        sgx += static_cast<double>(gch[i]) * static_cast<double>(hch[i]);
      }
    }
    sum_g[c] = sg;
    sum_gx[c] = sgx;
  }
  if (dgamma != nullptr) {
    for (std::size_t c = 0; c < ch; ++c) {
      dgamma[c] = static_cast<float>(static_cast<double>(dgamma[c]) + sum_gx[c]);
    }
  }
  if (dbeta != nullptr) {
    for (std::size_t c = 0; c < ch; ++c) {
      dbeta[c] = static_cast<float>(static_cast<double>(dbeta[c]) + sum_g[c]);
    }
  }
  if (dx != nullptr) {
    for (std::size_t flat = 0; flat < batch * ch; ++flat) {
      const std::size_t c = flat % ch;
      const double scale = static_cast<double>(gamma[c]) *
                           static_cast<double>(inv_std[c]);
      const float* gch = g + flat * plane;
      const float* hch = xhat + flat * plane;
      float* dch = dx + flat * plane;
      if (train_dx) {
        const double mg = sum_g[c] / n;
        const double mgx = sum_gx[c] / n;
        for (std::size_t i = 0; i < plane; ++i) {
          const double v = scale * (static_cast<double>(gch[i]) - mg -
                                    static_cast<double>(hch[i]) * mgx);
          dch[i] = static_cast<float>(static_cast<double>(dch[i]) + v);
        }
      } else {
        for (std::size_t i = 0; i < plane; ++i) {
          dch[i] = static_cast<float>(static_cast<double>(dch[i]) +
                                      scale * static_cast<double>(gch[i]));
        }
      }
    }
  }
}

void softmax(std::size_t outer, std::size_t n, std::size_t inner,
             const float* x, float* y) {
  for (std::size_t flat = 0; flat < outer * inner; ++flat) {
    const std::size_t o = flat / inner;
    const std::size_t i = flat % inner;
    const float* xs = x + o * n * inner + i;
    float* ys = y + o * n * inner + i;
    float mx = xs[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xs[j * inner]);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = std::exp(static_cast<double>(xs[j * inner]) -
                                static_cast<double>(mx));
      ys[j * inner] = static_cast<float>(e);
      total += e;
    }
    for (std::size_t j = 0; j < n; ++j) {
      ys[j * inner] = static_cast<float>(static_cast<double>(ys[j * inner]) / total);
    }
  }
}

void softmax_bwd(std::size_t outer, std::size_t n, std::size_t inner,
                 const float* y, const float* g, float* dx) {
  for (std::size_t flat = 0; flat < outer * inner; ++flat) {
    const std::size_t o = flat / inner;
    const std::size_t i = flat % inner;
    const float* ys = y + o * n * inner + i;
    const float* gs = g + o * n * inner + i;
    float* ds = dx + o * n * inner + i;
    double dot = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      dot += static_cast<double>(gs[j * inner]) *
             static_cast<double>(ys[j * inner]);
    }
    for (std::size_t j = 0; j < n; ++j) {
      const double v = static_cast<double>(ys[j * inner]) *
                       (static_cast<double>(gs[j * inner]) - dot);
      ds[j * inner] = static_cast<float>(static_cast<double>(ds[j * inner]) + v);
    }
  }
}

void layernorm_fwd(std::size_t rows, std::size_t n, const float* x,
                   const float* gamma, const float* beta, float eps, float* y,
                   float* xhat, float* inv_std) {
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = x + r * n;
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += static_cast<double>(xr[j]);
    const double mu = s * inv_n;
    double sq = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = static_cast<double>(xr[j]) - mu;
      sq += d * d;
    }
    const double is = 1.0 / std::sqrt(sq * inv_n + static_cast<double>(eps));
    inv_std[r] = static_cast<float>(is);
    float* hr = xhat + r * n;
    float* yr = y + r * n;
    for (std::size_t j = 0; j < n; ++j) {
      const float xh = static_cast<float>((static_cast<double>(xr[j]) - mu) * is);
      hr[j] = xh;
      yr[j] = gamma[j] * xh + beta[j];
    }
  }
}

void layernorm_bwd(std::size_t rows, std::size_t n, const float* xhat,
                   const float* inv_std, const float* gamma, const float* g,
                   float* dx, float* dgamma, float* dbeta) {
  if (dgamma != nullptr || dbeta != nullptr) {
    for (std::size_t j = 0; j < n; ++j) {
      double sg = 0.0;
      double sgx = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        sg += static_cast<double>(g[r * n + j]);
        sgx += static_cast<double>(g[r * n + j]) *
               static_cast<double>(xhat[r * n + j]);
      }
      if (dgamma != nullptr) {
        dgamma[j] = static_cast<float>(static_cast<double>(dgamma[j]) + sgx);
      }
      if (dbeta != nullptr) {
        dbeta[j] = static_cast<float>(static_cast<double>(dbeta[j]) + sg);
      }
    }
  }
  if (dx != nullptr) {
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < rows; ++r) {
      const float* gr = g + r * n;
      const float* hr = xhat + r * n;
      float* dr = dx + r * n;
      double s1 = 0.0;
      double s2 = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double gy = static_cast<double>(gr[j]) *
                          static_cast<double>(gamma[j]);
        s1 += gy;
        s2 += gy * static_cast<double>(hr[j]);
      }
      const double is = static_cast<double>(inv_std[r]);
      for (std::size_t j = 0; j < n; ++j) {
        const double gy = static_cast<double>(gr[j]) *
                          static_cast<double>(gamma[j]);
        const double v =
            is * (gy - s1 * inv_n - static_cast<double>(hr[j]) * s2 * inv_n);
        dr[j] = static_cast<float>(static_cast<double>(dr[j]) + v);
      }
    }
  }
}

void relu_fwd(std::size_t n, const float* x, float* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_bwd(std::size_t n, const float* x, const float* g, float* dx) {
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i] > 0.0f) dx[i] += g[i];
  }
}

void scale_fwd(std::size_t n, const float* x, float c, float* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] = c * x[i];
}

void add_scaled(std::size_t n, float* dst, const float* src, double c) {
  for (std::size_t i = 0; i < n; ++i) {
    dst[i] = static_cast<float>(static_cast<double>(dst[i]) +
                                c * static_cast<double>(src[i]));
  }
}

void add_const(std::size_t n, float* dst, double c) {
  for (std::size_t i = 0; i < n; ++i) {
    dst[i] = static_cast<float>(static_cast<double>(dst[i]) + c);
  }
}

void log_clamped_fwd(std::size_t n, const float* x, float floor, float* y) {
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = std::log(std::max(x[i], floor));
  }
}

void log_clamped_bwd(std::size_t n, const float* x, float floor,
                     const float* g, float* dx) {
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i] >= floor) {
      dx[i] = static_cast<float>(static_cast<double>(dx[i]) +
                                 static_cast<double>(g[i]) /
                                     static_cast<double>(x[i]));
    }
  }
}

void dropout_fwd(std::size_t n, const float* x, const std::uint8_t* mask,
                 float inv_keep, float* y) {
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = mask[i] != 0 ? x[i] * inv_keep : 0.0f;
  }
}

void dropout_bwd(std::size_t n, const float* g, const std::uint8_t* mask,
                 float inv_keep, float* dx) {
  for (std::size_t i = 0; i < n; ++i) {
    if (mask[i] != 0) dx[i] += g[i] * inv_keep;
  }
}

double sum_all(std::size_t n, const float* x) {
  constexpr std::size_t kChunk = 4096;
  const std::size_t n_chunks = (n + kChunk - 1) / kChunk;
  std::vector<double> partial(n_chunks, 0.0);
  for (std::size_t c = 0; c < n_chunks; ++c) {
    const std::size_t lo = c * kChunk;
    const std::size_t hi = std::min(n, lo + kChunk);
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += static_cast<double>(x[i]);
    partial[c] = s;
  }
  double total = 0.0;
  for (std::size_t c = 0; c < n_chunks; ++c) total += partial[c];
  return total;
}

void ema_update(std::size_t n, float* average, const float* value,
                double decay) {
  for (std::size_t i = 0; i < n; ++i) {
    average[i] = static_cast<float>(ema_scalar_step(
        static_cast<double>(average[i]), static_cast<double>(value[i]), decay));
  }
}

void adam_update(std::size_t n, float* param, const float* grad, float* m,
                 float* v, double lr, double beta1, double beta2, double eps,
                 double bc1, double bc2) {
  for (std::size_t i = 0; i < n; ++i) {
    const double g = static_cast<double>(grad[i]);
    const double mi = beta1 * static_cast<double>(m[i]) + (1.0 - beta1) * g;
    const double vi = beta2 * static_cast<double>(v[i]) + (1.0 - beta2) * g * g;
    m[i] = static_cast<float>(mi);
    v[i] = static_cast<float>(vi);
    const double mhat = mi / bc1;
    const double vhat = vi / bc2;
    param[i] = static_cast<float>(static_cast<double>(param[i]) -
                                  lr * mhat / (std::sqrt(vhat) + eps));
  }
}

void stft_power(const float* padded, std::size_t n_frames, std::size_t n_fft,
                std::size_t hop, const float* window, float* power) {
  const detail::Twiddles tw(n_fft);
  std::vector<double> re(n_fft);
  std::vector<double> im(n_fft);
  const std::size_t n_bins = n_fft / 2 + 1;
  for (std::size_t t = 0; t < n_frames; ++t) {
    detail::frame_power(padded + t * hop, window, n_fft, tw, re.data(),
                        im.data(), power + t * n_bins);
  }
}

}  // namespace msav::kernels::serial_impl
