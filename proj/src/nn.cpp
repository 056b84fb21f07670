#include "msav/nn.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "msav/kernels.hpp"

namespace msav::nn {

namespace {

Tensor uniform_init(Shape shape, double bound, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (float& v : t.data()) {
    v = static_cast<float>(rng.uniform(-bound, bound));
  }
  return t;
}

}  // namespace

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng) {
  Linear l;
  const double bound = std::sqrt(1.0 / static_cast<double>(in));
  l.weight = uniform_init({in, out}, bound, rng);
  l.bias = Tensor::zeros({out}, true);
  return l;
}

Tensor Linear::forward(const Tensor& x, Tape* tape) const {
  return add(matmul(x, weight, tape), bias, tape);
}

Conv2d Conv2d::init(std::size_t in_ch, std::size_t out_ch, Rng& rng) {
  Conv2d c;
  c.in_ch = in_ch;
  c.out_ch = out_ch;
  const double bound = std::sqrt(1.0 / static_cast<double>(in_ch * 9));
  c.weight = uniform_init({out_ch, in_ch, 3, 3}, bound, rng);
  c.bias = Tensor::zeros({out_ch}, true);
  return c;
}

Tensor Conv2d::forward(const Tensor& x, Tape* tape) const {
  if (x.rank() != 4 || x.shape()[1] != in_ch) {
    throw std::invalid_argument(
        "conv2d expects input [batch, " + std::to_string(in_ch) +
        ", t, f], got " + shape_str(x.shape()));
  }
  const std::size_t batch = x.shape()[0];
  const std::size_t h = x.shape()[2];
  const std::size_t w = x.shape()[3];
  const bool needs = tape != nullptr &&
                     (x.requires_grad() || weight.requires_grad() ||
                      bias.requires_grad());
  Tensor out = Tensor::uninitialized({batch, out_ch, h, w}, needs);
  kernels::conv2d_fwd(batch, in_ch, out_ch, h, w, x.data().data(),
                      weight.data().data(), bias.data().data(),
                      out.data().data());
  if (needs) {
    Tensor tx = x;
    Tensor tw = weight;
    Tensor tb = bias;
    const std::size_t ic = in_ch;
    const std::size_t oc = out_ch;
    tape->record(out, [tx, tw, tb, out, batch, ic, oc, h, w]() mutable {
      const float* g = out.grad().data();
      if (tx.requires_grad()) {
        kernels::conv2d_dx(batch, ic, oc, h, w, g, tw.data().data(),
                           tx.grad().data());
      }
      float* dw = tw.requires_grad() ? tw.grad().data() : nullptr;
      float* db = tb.requires_grad() ? tb.grad().data() : nullptr;
      if (dw != nullptr || db != nullptr) {
        kernels::conv2d_dwdb(batch, ic, oc, h, w, tx.data().data(), g, dw, db);
      }
    });
  }
  return out;
}

BatchNorm2d BatchNorm2d::init(std::size_t ch) {
  BatchNorm2d bn;
  bn.gamma = Tensor::full({ch}, 1.0f, true);
  bn.beta = Tensor::zeros({ch}, true);
  bn.running_mean = Tensor::zeros({ch}, false);
  bn.running_var = Tensor::full({ch}, 1.0f, false);
  return bn;
}

Tensor BatchNorm2d::forward(const Tensor& x, Mode mode, Tape* tape) {
  if (x.rank() != 4 || x.shape()[1] != gamma.size()) {
    throw std::invalid_argument(
        "batchnorm expects input [batch, " + std::to_string(gamma.size()) +
        ", t, f], got " + shape_str(x.shape()));
  }
  const std::size_t batch = x.shape()[0];
  const std::size_t ch = x.shape()[1];
  const std::size_t h = x.shape()[2];
  const std::size_t w = x.shape()[3];
  const bool train = mode == Mode::train;

  std::vector<float> mean(ch);
  std::vector<float> inv_std(ch);
  if (train) {
    if (batch * h * w <= 1) {
      throw std::invalid_argument(
          "train-mode batchnorm needs more than one value per channel, got "
          "input " +
          shape_str(x.shape()));
    }
    std::vector<double> mu(ch);
    std::vector<double> var(ch);
    kernels::channel_stats(batch, ch, h, w, x.data().data(), mu.data(),
                           var.data());
    for (std::size_t c = 0; c < ch; ++c) {
      mean[c] = static_cast<float>(mu[c]);
      inv_std[c] = static_cast<float>(
          1.0 / std::sqrt(var[c] + static_cast<double>(eps)));
    }
    // running = (1 - momentum) * running + momentum * batch_stat
    auto rm = running_mean.data();
    auto rv = running_var.data();
    for (std::size_t c = 0; c < ch; ++c) {
      rm[c] = static_cast<float>((1.0 - momentum) * rm[c] + momentum * mu[c]);
      rv[c] = static_cast<float>((1.0 - momentum) * rv[c] + momentum * var[c]);
    }
  } else {
    auto rm = running_mean.data();
    auto rv = running_var.data();
    for (std::size_t c = 0; c < ch; ++c) {
      mean[c] = rm[c];
      inv_std[c] = static_cast<float>(
          1.0 / std::sqrt(static_cast<double>(rv[c]) +
                          static_cast<double>(eps)));
    }
  }

  const bool needs = tape != nullptr &&
                     (x.requires_grad() || gamma.requires_grad() ||
                      beta.requires_grad());
  Tensor out = Tensor::uninitialized(x.shape(), needs);
  auto xhat = std::make_shared<detail::FloatBuffer>(x.size());
  kernels::bn_apply(batch, ch, h, w, x.data().data(), mean.data(),
                    inv_std.data(), gamma.data().data(), beta.data().data(),
                    out.data().data(), xhat->data());
  if (needs) {
    Tensor tx = x;
    Tensor tg = gamma;
    Tensor tb = beta;
    auto inv = std::make_shared<std::vector<float>>(std::move(inv_std));
    tape->record(out, [tx, tg, tb, out, xhat, inv, batch, ch, h, w,
                       train]() mutable {
      float* dx = tx.requires_grad() ? tx.grad().data() : nullptr;
      float* dgamma = tg.requires_grad() ? tg.grad().data() : nullptr;
      float* dbeta = tb.requires_grad() ? tb.grad().data() : nullptr;
      kernels::bn_bwd(batch, ch, h, w, xhat->data(), inv->data(),
                      tg.data().data(), out.grad().data(), train, dx, dgamma,
                      dbeta);
    });
  }
  return out;
}

Tensor AvgPool2d::forward(const Tensor& x, Tape* tape) const {
  if (x.rank() != 4) {
    throw std::invalid_argument("avgpool expects a 4-D input, got " +
                                shape_str(x.shape()));
  }
  const std::size_t batch = x.shape()[0];
  const std::size_t ch = x.shape()[1];
  const std::size_t h = x.shape()[2];
  const std::size_t w = x.shape()[3];
  if (h % kt != 0) {
    throw std::invalid_argument(
        "avgpool time axis " + std::to_string(h) + " not divisible by kernel " +
        std::to_string(kt));
  }
  if (w % kf != 0) {
    throw std::invalid_argument(
        "avgpool frequency axis " + std::to_string(w) +
        " not divisible by kernel " + std::to_string(kf));
  }
  const bool needs = tape != nullptr && x.requires_grad();
  Tensor out = Tensor::uninitialized({batch, ch, h / kt, w / kf}, needs);
  kernels::avgpool_fwd(batch, ch, h, w, kt, kf, x.data().data(),
                       out.data().data());
  if (needs) {
    Tensor tx = x;
    const std::size_t pkt = kt;
    const std::size_t pkf = kf;
    tape->record(out, [tx, out, batch, ch, h, w, pkt, pkf]() mutable {
      kernels::avgpool_bwd(batch, ch, h, w, pkt, pkf, out.grad().data(),
                           tx.grad().data());
    });
  }
  return out;
}

LayerNorm LayerNorm::init(std::size_t dim) {
  LayerNorm ln;
  ln.gamma = Tensor::full({dim}, 1.0f, true);
  ln.beta = Tensor::zeros({dim}, true);
  return ln;
}

Tensor LayerNorm::forward(const Tensor& x, Tape* tape) const {
  const std::size_t n = gamma.size();
  if (x.rank() < 1 || x.shape().back() != n) {
    throw std::invalid_argument("layernorm expects last axis " +
                                std::to_string(n) + ", got " +
                                shape_str(x.shape()));
  }
  const std::size_t rows = x.size() / n;
  const bool needs = tape != nullptr &&
                     (x.requires_grad() || gamma.requires_grad() ||
                      beta.requires_grad());
  Tensor out = Tensor::uninitialized(x.shape(), needs);
  auto xhat = std::make_shared<detail::FloatBuffer>(x.size());
  auto inv_std = std::make_shared<detail::FloatBuffer>(rows);
  kernels::layernorm_fwd(rows, n, x.data().data(), gamma.data().data(),
                         beta.data().data(), eps, out.data().data(),
                         xhat->data(), inv_std->data());
  if (needs) {
    Tensor tx = x;
    Tensor tg = gamma;
    Tensor tb = beta;
    tape->record(out, [tx, tg, tb, out, xhat, inv_std, rows, n]() mutable {
      float* dx = tx.requires_grad() ? tx.grad().data() : nullptr;
      float* dgamma = tg.requires_grad() ? tg.grad().data() : nullptr;
      float* dbeta = tb.requires_grad() ? tb.grad().data() : nullptr;
      kernels::layernorm_bwd(rows, n, xhat->data(), inv_std->data(),
                             tg.data().data(), out.grad().data(), dx, dgamma,
                             dbeta);
    });
  }
  return out;
}

MultiHeadAttention MultiHeadAttention::init(std::size_t d_model,
                                            std::size_t n_heads,
                                            float attn_dropout, Rng& rng) {
  if (n_heads == 0 || d_model % n_heads != 0) {
    throw std::invalid_argument("d_model " + std::to_string(d_model) +
                                " not divisible by n_heads " +
                                std::to_string(n_heads));
  }
  MultiHeadAttention m;
  m.n_heads = n_heads;
  m.d_model = d_model;
  m.head_dim = d_model / n_heads;
  m.attn_dropout = attn_dropout;
  m.wq = Linear::init(d_model, d_model, rng);
  m.wk = Linear::init(d_model, d_model, rng);
  m.wv = Linear::init(d_model, d_model, rng);
  m.wo = Linear::init(d_model, d_model, rng);
  return m;
}

Tensor MultiHeadAttention::forward(const Tensor& q, const Tensor& k,
                                   const Tensor& v, Mode mode, Rng* rng,
                                   Tape* tape) const {
  if (q.rank() != 2 || q.shape()[1] != d_model) {
    throw std::invalid_argument("attention query must be [Lq, " +
                                std::to_string(d_model) + "], got " +
                                shape_str(q.shape()));
  }
  if (k.rank() != 2 || k.shape()[1] != d_model || k.shape() != v.shape()) {
    throw std::invalid_argument(
        "attention keys/values must be [Lk, " + std::to_string(d_model) +
        "], got " + shape_str(k.shape()) + " and " + shape_str(v.shape()));
  }
  const Tensor qp = wq.forward(q, tape);
  const Tensor kp = wk.forward(k, tape);
  const Tensor vp = wv.forward(v, tape);
  const float inv_sqrt_d =
      static_cast<float>(1.0 / std::sqrt(static_cast<double>(head_dim)));

  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  for (std::size_t hd = 0; hd < n_heads; ++hd) {
    const std::size_t off = hd * head_dim;
    const Tensor qh = slice_last(qp, off, head_dim, tape);
    const Tensor kh = slice_last(kp, off, head_dim, tape);
    const Tensor vh = slice_last(vp, off, head_dim, tape);
    Tensor scores =
        scale(matmul(qh, transpose_last2(kh, tape), tape), inv_sqrt_d, tape);
    Tensor weights = softmax(scores, 1, tape);
    weights = dropout(weights, attn_dropout, mode, rng, tape);
    heads.push_back(matmul(weights, vh, tape));
  }
  const Tensor merged = concat_last(heads, tape);
  return wo.forward(merged, tape);
}

FeedForward FeedForward::init(std::size_t d_model, Rng& rng) {
  FeedForward f;
  f.lin1 = Linear::init(d_model, d_model, rng);
  f.lin2 = Linear::init(d_model, d_model, rng);
  return f;
}

Tensor FeedForward::forward(const Tensor& x, Mode /*mode*/, Rng* /*rng*/,
                            Tape* tape) const {
  return lin2.forward(relu(lin1.forward(x, tape), tape), tape);
}

EncoderLayer EncoderLayer::init(std::size_t d_model, std::size_t n_heads,
                                float dropout, Rng& rng) {
  EncoderLayer e;
  e.self_attn = MultiHeadAttention::init(d_model, n_heads, dropout, rng);
  e.ff = FeedForward::init(d_model, rng);
  e.ln1 = LayerNorm::init(d_model);
  e.ln2 = LayerNorm::init(d_model);
  e.dropout_rate = dropout;
  return e;
}

Tensor EncoderLayer::forward(const Tensor& x, Mode mode, Rng* rng,
                             Tape* tape) const {
  Tensor h = self_attn.forward(x, x, x, mode, rng, tape);
  h = dropout(h, dropout_rate, mode, rng, tape);
  Tensor y = ln1.forward(add(x, h, tape), tape);
  Tensor f = ff.forward(y, mode, rng, tape);
  f = dropout(f, dropout_rate, mode, rng, tape);
  return ln2.forward(add(y, f, tape), tape);
}

MsDecoderLayer MsDecoderLayer::init(std::size_t d_model, std::size_t n_heads,
                                    float dropout, Rng& rng) {
  MsDecoderLayer d;
  d.self_attn = MultiHeadAttention::init(d_model, n_heads, dropout, rng);
  d.cross_a = MultiHeadAttention::init(d_model, n_heads, dropout, rng);
  d.cross_b = MultiHeadAttention::init(d_model, n_heads, dropout, rng);
  d.ff = FeedForward::init(d_model, rng);
  d.ln1 = LayerNorm::init(d_model);
  d.ln2 = LayerNorm::init(d_model);
  d.ln3 = LayerNorm::init(d_model);
  d.ln4 = LayerNorm::init(d_model);
  d.dropout_rate = dropout;
  return d;
}

Tensor MsDecoderLayer::forward(const Tensor& q, const Tensor& mem_a,
                               const Tensor& mem_b, Mode mode, Rng* rng,
                               Tape* tape) const {
  Tensor h = self_attn.forward(q, q, q, mode, rng, tape);
  h = dropout(h, dropout_rate, mode, rng, tape);
  Tensor y = ln1.forward(add(q, h, tape), tape);

  h = cross_a.forward(y, mem_a, mem_a, mode, rng, tape);
  h = dropout(h, dropout_rate, mode, rng, tape);
  y = ln2.forward(add(y, h, tape), tape);

  h = cross_b.forward(y, mem_b, mem_b, mode, rng, tape);
  h = dropout(h, dropout_rate, mode, rng, tape);
  y = ln3.forward(add(y, h, tape), tape);

  Tensor f = ff.forward(y, mode, rng, tape);
  f = dropout(f, dropout_rate, mode, rng, tape);
  return ln4.forward(add(y, f, tape), tape);
}

Tensor sinusoidal_encoding(std::size_t len, std::size_t dim) {
  Tensor pe = Tensor::zeros({len, dim});
  auto d = pe.data();
  for (std::size_t pos = 0; pos < len; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double exponent =
          static_cast<double>(2 * (i / 2)) / static_cast<double>(dim);
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, exponent);
      d[pos * dim + i] = static_cast<float>(i % 2 == 0 ? std::sin(angle)
                                                       : std::cos(angle));
    }
  }
  return pe;
}

}  // namespace msav::nn
