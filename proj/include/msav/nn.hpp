#pragma once

#include "msav/ops.hpp"
#include "msav/rng.hpp"
#include "msav/tensor.hpp"

namespace msav::nn {

// Layers hold their parameters as grad-enabled tensors and run forward
// passes against an optional tape. Weight init is uniform in
// +-sqrt(1/fan_in); norm scales start at 1, shifts and biases at 0.

/// y = x W + b for 2-D x of shape [rows, in].
struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  static Linear init(std::size_t in, std::size_t out, Rng& rng);
  Tensor forward(const Tensor& x, Tape* tape) const;
};

/// 3x3 convolution, stride 1, padding 1 (cross-correlation, no kernel flip).
struct Conv2d {
  Tensor weight;  // [out_ch, in_ch, 3, 3]
  Tensor bias;    // [out_ch]
  std::size_t in_ch = 0;
  std::size_t out_ch = 0;

  static Conv2d init(std::size_t in_ch, std::size_t out_ch, Rng& rng);
  Tensor forward(const Tensor& x, Tape* tape) const;
};

/// Per-channel batch normalization over (batch, t, f). Train mode uses the
/// biased batch statistics and folds them into the running stats with
/// running = (1 - momentum) * running + momentum * batch_stat.
struct BatchNorm2d {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  float eps = 1e-5f;
  float momentum = 0.1f;

  static BatchNorm2d init(std::size_t ch);
  Tensor forward(const Tensor& x, Mode mode, Tape* tape);
};

/// Non-overlapping average pooling; kernel equals stride.
struct AvgPool2d {
  std::size_t kt = 1;
  std::size_t kf = 1;

  Tensor forward(const Tensor& x, Tape* tape) const;
};

/// Layer normalization over the last axis, with affine transform.
struct LayerNorm {
  Tensor gamma;
  Tensor beta;
  float eps = 1e-5f;

  static LayerNorm init(std::size_t dim);
  Tensor forward(const Tensor& x, Tape* tape) const;
};

/// Scaled dot-product attention with per-head projections folded into four
/// full-width linear maps. Scores are scaled by 1/sqrt(head_dim), softmaxed
/// over keys, and (train mode) dropout is applied to the attention weights.
struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  std::size_t n_heads = 0;
  std::size_t d_model = 0;
  std::size_t head_dim = 0;
  float attn_dropout = 0.1f;

  static MultiHeadAttention init(std::size_t d_model, std::size_t n_heads,
                                 float attn_dropout, Rng& rng);
  /// q: [Lq, d_model], k/v: [Lk, d_model] -> [Lq, d_model]
  Tensor forward(const Tensor& q, const Tensor& k, const Tensor& v, Mode mode,
                 Rng* rng, Tape* tape) const;
};

/// linear(d -> d) -> ReLU -> linear(d -> d)
struct FeedForward {
  Linear lin1, lin2;

  static FeedForward init(std::size_t d_model, Rng& rng);
  Tensor forward(const Tensor& x, Mode mode, Rng* rng, Tape* tape) const;
};

/// Post-norm transformer encoder layer:
///   x = LN(x + Drop(SelfAttn(x))); x = LN(x + Drop(FFN(x)))
struct EncoderLayer {
  MultiHeadAttention self_attn;
  FeedForward ff;
  LayerNorm ln1, ln2;
  float dropout_rate = 0.1f;

  static EncoderLayer init(std::size_t d_model, std::size_t n_heads,
                           float dropout, Rng& rng);
  Tensor forward(const Tensor& x, Mode mode, Rng* rng, Tape* tape) const;
};

/// Decoder layer with two cross-attention blocks applied in series; the
/// first attends over memory A, the second over memory B:
///   q = LN(q + Drop(SelfAttn(q)))
///   q = LN(q + Drop(CrossAttnA(q, memA)))
///   q = LN(q + Drop(CrossAttnB(q, memB)))
///   q = LN(q + Drop(FFN(q)))
struct MsDecoderLayer {
  MultiHeadAttention self_attn;
  MultiHeadAttention cross_a;
  MultiHeadAttention cross_b;
  FeedForward ff;
  LayerNorm ln1, ln2, ln3, ln4;
  float dropout_rate = 0.1f;

  static MsDecoderLayer init(std::size_t d_model, std::size_t n_heads,
                             float dropout, Rng& rng);
  Tensor forward(const Tensor& q, const Tensor& mem_a, const Tensor& mem_b,
                 Mode mode, Rng* rng, Tape* tape) const;
};

/// Sinusoidal position table of shape [len, dim] (constant, no grad).
Tensor sinusoidal_encoding(std::size_t len, std::size_t dim);

}  // namespace msav::nn
