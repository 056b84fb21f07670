#include "msav/ops.hpp"

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "msav/kernels.hpp"

namespace msav {

namespace {

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    const std::size_t da =
        d + a.size() >= rank ? a[d + a.size() - rank] : 1;
    const std::size_t db =
        d + b.size() >= rank ? b[d + b.size() - rank] : 1;
    if (da != db && da != 1 && db != 1) {
      throw std::invalid_argument(std::string(op) +
                                  ": shapes not broadcast-compatible: " +
                                  shape_str(a) + " vs " + shape_str(b));
    }
    out[d] = std::max(da, db);
  }
  return out;
}

/// Row-major strides of `s` aligned to `out`, 0 on broadcast axes.
std::vector<std::size_t> broadcast_strides(const Shape& s, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = s.size(); i-- > 0;) {
    const std::size_t d = i + out.size() - s.size();
    strides[d] = (s[i] == 1 && out[d] != 1) ? 0 : stride;
    stride *= s[i];
  }
  return strides;
}

Shape aligned_dims(const Shape& s, std::size_t rank) {
  Shape out(rank, 1);
  std::copy(s.begin(), s.end(), out.begin() + (rank - s.size()));
  return out;
}

/// Adds the output-shaped gradient `g` into the grad buffer of operand `t`,
/// summing over broadcast axes when shapes differ.
void accumulate_operand_grad(Tensor& t, const float* g, const Shape& out_shape,
                             double sign) {
  if (t.shape() == out_shape) {
    kernels::add_scaled(t.size(), t.grad().data(), g, sign);
    return;
  }
  const Shape dst = aligned_dims(t.shape(), out_shape.size());
  if (sign == 1.0) {
    kernels::reduce_broadcast(g, out_shape.data(), dst.data(),
                              out_shape.size(), t.grad().data(), true);
  } else {
    std::vector<float> reduced(t.size(), 0.0f);
    kernels::reduce_broadcast(g, out_shape.data(), dst.data(),
                              out_shape.size(), reduced.data(), false);
    kernels::add_scaled(t.size(), t.grad().data(), reduced.data(), sign);
  }
}

Tensor binary_ew(kernels::EwOp kop, const Tensor& a, const Tensor& b,
                 Tape* tape, const char* name) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
  const bool needs =
      tape != nullptr && (a.requires_grad() || b.requires_grad());
  Tensor out = Tensor::uninitialized(out_shape, needs);
  const auto sa = broadcast_strides(a.shape(), out_shape);
  const auto sb = broadcast_strides(b.shape(), out_shape);
  kernels::broadcast_ew(kop, a.data().data(), b.data().data(),
                        out.data().data(), out_shape.data(), sa.data(),
                        sb.data(), out_shape.size());
  if (needs) {
    Tensor ta = a;
    Tensor tb = b;
    tape->record(out, [kop, ta, tb, out, out_shape, sa, sb]() mutable {
      const float* g = out.grad().data();
      switch (kop) {
        case kernels::EwOp::add:
          if (ta.requires_grad()) accumulate_operand_grad(ta, g, out_shape, 1.0);
          if (tb.requires_grad()) accumulate_operand_grad(tb, g, out_shape, 1.0);
          break;
        case kernels::EwOp::sub:
          if (ta.requires_grad()) accumulate_operand_grad(ta, g, out_shape, 1.0);
          if (tb.requires_grad()) accumulate_operand_grad(tb, g, out_shape, -1.0);
          break;
        case kernels::EwOp::mul: {
          // g is contiguous over out_shape; operands keep their strides
          const auto sg = broadcast_strides(out_shape, out_shape);
          if (ta.requires_grad()) {
            std::vector<float> prod(out.size());
            kernels::broadcast_ew(kernels::EwOp::mul, g, tb.data().data(),
                                  prod.data(), out_shape.data(), sg.data(),
                                  sb.data(), out_shape.size());
            accumulate_operand_grad(ta, prod.data(), out_shape, 1.0);
          }
          if (tb.requires_grad()) {
            std::vector<float> prod(out.size());
            kernels::broadcast_ew(kernels::EwOp::mul, g, ta.data().data(),
                                  prod.data(), out_shape.data(), sg.data(),
                                  sa.data(), out_shape.size());
            accumulate_operand_grad(tb, prod.data(), out_shape, 1.0);
          }
          break;
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
  return binary_ew(kernels::EwOp::add, a, b, tape, "add");
}

Tensor sub(const Tensor& a, const Tensor& b, Tape* tape) {
  return binary_ew(kernels::EwOp::sub, a, b, tape, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
  return binary_ew(kernels::EwOp::mul, a, b, tape, "mul");
}

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw std::invalid_argument("matmul expects 2-D tensors, got " +
                                shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[0];
  const std::size_t k = a.shape()[1];
  const std::size_t n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw std::invalid_argument("matmul inner dimensions differ: " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  const bool needs =
      tape != nullptr && (a.requires_grad() || b.requires_grad());
  Tensor out = Tensor::uninitialized({m, n}, needs);
  kernels::gemm(false, false, m, k, n, a.data().data(), b.data().data(),
                out.data().data(), false);
  if (needs) {
    Tensor ta = a;
    Tensor tb = b;
    tape->record(out, [ta, tb, out, m, k, n]() mutable {
      const float* g = out.grad().data();
      if (ta.requires_grad()) {
        // dA += G * B^T
        kernels::gemm(false, true, m, n, k, g, tb.data().data(),
                      ta.grad().data(), true);
      }
      if (tb.requires_grad()) {
        // dB += A^T * G
        kernels::gemm(true, false, k, m, n, ta.data().data(), g,
                      tb.grad().data(), true);
      }
    });
  }
  return out;
}

Tensor transpose_last2(const Tensor& a, Tape* tape) {
  if (a.rank() < 2) {
    throw std::invalid_argument("transpose_last2 expects rank >= 2, got " +
                                shape_str(a.shape()));
  }
  Shape out_shape = a.shape();
  const std::size_t rows = out_shape[out_shape.size() - 2];
  const std::size_t cols = out_shape[out_shape.size() - 1];
  std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
  const std::size_t outer = a.size() / (rows * cols);
  const bool needs = tape != nullptr && a.requires_grad();
  Tensor out = Tensor::uninitialized(out_shape, needs);
  kernels::transpose_last2(outer, rows, cols, a.data().data(),
                           out.data().data());
  if (needs) {
    Tensor ta = a;
    tape->record(out, [ta, out, outer, rows, cols]() mutable {
      // transpose the gradient back, then accumulate
      std::vector<float> gt(out.size());
      kernels::transpose_last2(outer, cols, rows, out.grad().data(), gt.data());
      kernels::add_scaled(ta.size(), ta.grad().data(), gt.data(), 1.0);
    });
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape shape, Tape* tape) {
  if (shape_numel(shape) != a.size()) {
    throw std::invalid_argument("reshape from " + shape_str(a.shape()) +
                                " to incompatible " + shape_str(shape));
  }
  const bool needs = tape != nullptr && a.requires_grad();
  Tensor out = Tensor::from_data(std::move(shape),
                                 {a.data().begin(), a.data().end()}, needs);
  if (needs) {
    Tensor ta = a;
    tape->record(out, [ta, out]() mutable {
      kernels::add_scaled(ta.size(), ta.grad().data(), out.grad().data(), 1.0);
    });
  }
  return out;
}

Tensor relu(const Tensor& a, Tape* tape) {
  const bool needs = tape != nullptr && a.requires_grad();
  Tensor out = Tensor::uninitialized(a.shape(), needs);
  kernels::relu_fwd(a.size(), a.data().data(), out.data().data());
  if (needs) {
    Tensor ta = a;
    tape->record(out, [ta, out]() mutable {
      kernels::relu_bwd(ta.size(), ta.data().data(), out.grad().data(),
                        ta.grad().data());
    });
  }
  return out;
}

Tensor softmax(const Tensor& a, std::size_t axis, Tape* tape) {
  if (axis >= a.rank()) {
    throw std::invalid_argument("softmax axis " + std::to_string(axis) +
                                " out of range for shape " +
                                shape_str(a.shape()));
  }
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= a.shape()[d];
  for (std::size_t d = axis + 1; d < a.rank(); ++d) inner *= a.shape()[d];
  const std::size_t n = a.shape()[axis];
  const bool needs = tape != nullptr && a.requires_grad();
  Tensor out = Tensor::uninitialized(a.shape(), needs);
  kernels::softmax(outer, n, inner, a.data().data(), out.data().data());
  if (needs) {
    Tensor ta = a;
    tape->record(out, [ta, out, outer, n, inner]() mutable {
      kernels::softmax_bwd(outer, n, inner, out.data().data(),
                           out.grad().data(), ta.grad().data());
    });
  }
  return out;
}

Tensor log_clamped(const Tensor& a, float floor, Tape* tape) {
  const bool needs = tape != nullptr && a.requires_grad();
  Tensor out = Tensor::uninitialized(a.shape(), needs);
  kernels::log_clamped_fwd(a.size(), a.data().data(), floor,
                           out.data().data());
  if (needs) {
    Tensor ta = a;
    tape->record(out, [ta, out, floor]() mutable {
      kernels::log_clamped_bwd(ta.size(), ta.data().data(), floor,
                               out.grad().data(), ta.grad().data());
    });
  }
  return out;
}

Tensor sum_all(const Tensor& a, Tape* tape) {
  const bool needs = tape != nullptr && a.requires_grad();
  const double total = kernels::sum_all(a.size(), a.data().data());
  Tensor out = Tensor::from_data({1}, {static_cast<float>(total)}, needs);
  if (needs) {
    Tensor ta = a;
    tape->record(out, [ta, out]() mutable {
      kernels::add_const(ta.size(), ta.grad().data(),
                         static_cast<double>(out.grad()[0]));
    });
  }
  return out;
}

Tensor scale(const Tensor& a, float c, Tape* tape) {
  const bool needs = tape != nullptr && a.requires_grad();
  Tensor out = Tensor::uninitialized(a.shape(), needs);
  kernels::scale_fwd(a.size(), a.data().data(), c, out.data().data());
  if (needs) {
    Tensor ta = a;
    tape->record(out, [ta, out, c]() mutable {
      kernels::add_scaled(ta.size(), ta.grad().data(), out.grad().data(),
                          static_cast<double>(c));
    });
  }
  return out;
}

Tensor dropout(const Tensor& a, float rate, Mode mode, Rng* rng, Tape* tape) {
  if (rate < 0.0f || rate >= 1.0f) {
    throw std::invalid_argument("dropout rate must be in [0, 1), got " +
                                std::to_string(rate));
  }
  if (mode == Mode::eval || rate == 0.0f) return a;
  if (rng == nullptr) {
    throw std::invalid_argument("train-mode dropout needs an rng");
  }
  const float inv_keep = 1.0f / (1.0f - rate);
  auto mask = std::make_shared<std::vector<std::uint8_t>>(a.size());
  const double keep = 1.0 - static_cast<double>(rate);
  for (std::size_t i = 0; i < a.size(); ++i) {
    (*mask)[i] = rng->uniform() < keep ? 1 : 0;
  }
  const bool needs = tape != nullptr && a.requires_grad();
  Tensor out = Tensor::uninitialized(a.shape(), needs);
  kernels::dropout_fwd(a.size(), a.data().data(), mask->data(), inv_keep,
                       out.data().data());
  if (needs) {
    Tensor ta = a;
    tape->record(out, [ta, out, mask, inv_keep]() mutable {
      kernels::dropout_bwd(ta.size(), out.grad().data(), mask->data(),
                           inv_keep, ta.grad().data());
    });
  }
  return out;
}

Tensor select_front(const Tensor& a, std::size_t index, Tape* tape) {
  if (a.rank() < 1 || index >= a.shape()[0]) {
    throw std::invalid_argument("select_front index " + std::to_string(index) +
                                " out of range for shape " +
                                shape_str(a.shape()));
  }
  Shape out_shape(a.shape().begin() + 1, a.shape().end());
  if (out_shape.empty()) out_shape = {1};
  const std::size_t slice = shape_numel(out_shape);
  const bool needs = tape != nullptr && a.requires_grad();
  Tensor out = Tensor::uninitialized(out_shape, needs);
  std::copy_n(a.data().data() + index * slice, slice, out.data().data());
  if (needs) {
    Tensor ta = a;
    tape->record(out, [ta, out, index, slice]() mutable {
      kernels::add_scaled(slice, ta.grad().data() + index * slice,
                          out.grad().data(), 1.0);
    });
  }
  return out;
}

Tensor stack_front(std::span<const Tensor> parts, Tape* tape) {
  if (parts.empty()) throw std::invalid_argument("stack_front of no tensors");
  const Shape& inner = parts[0].shape();
  bool needs = false;
  for (const Tensor& p : parts) {
    if (p.shape() != inner) {
      throw std::invalid_argument("stack_front shape mismatch: " +
                                  shape_str(inner) + " vs " +
                                  shape_str(p.shape()));
    }
    needs = needs || p.requires_grad();
  }
  needs = needs && tape != nullptr;
  Shape out_shape;
  out_shape.push_back(parts.size());
  out_shape.insert(out_shape.end(), inner.begin(), inner.end());
  Tensor out = Tensor::uninitialized(out_shape, needs);
  const std::size_t slice = shape_numel(inner);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    std::copy_n(parts[i].data().data(), slice, out.data().data() + i * slice);
  }
  if (needs) {
    std::vector<Tensor> held(parts.begin(), parts.end());
    tape->record(out, [held, out, slice]() mutable {
      for (std::size_t i = 0; i < held.size(); ++i) {
        if (!held[i].requires_grad()) continue;
        kernels::add_scaled(slice, held[i].grad().data(),
                            out.grad().data() + i * slice, 1.0);
      }
    });
  }
  return out;
}

Tensor slice_last(const Tensor& a, std::size_t start, std::size_t len,
                  Tape* tape) {
  if (a.rank() < 1) throw std::invalid_argument("slice_last on scalar shape");
  const std::size_t n = a.shape().back();
  if (start + len > n) {
    throw std::invalid_argument("slice_last [" + std::to_string(start) + ", " +
                                std::to_string(start + len) +
                                ") out of range for shape " +
                                shape_str(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape.back() = len;
  const std::size_t outer = a.size() / n;
  const bool needs = tape != nullptr && a.requires_grad();
  Tensor out = Tensor::uninitialized(out_shape, needs);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(a.data().data() + o * n + start, len,
                out.data().data() + o * len);
  }
  if (needs) {
    Tensor ta = a;
    tape->record(out, [ta, out, start, len, n, outer]() mutable {
      for (std::size_t o = 0; o < outer; ++o) {
        kernels::add_scaled(len, ta.grad().data() + o * n + start,
                            out.grad().data() + o * len, 1.0);
      }
    });
  }
  return out;
}

Tensor concat_last(std::span<const Tensor> parts, Tape* tape) {
  if (parts.empty()) throw std::invalid_argument("concat_last of no tensors");
  Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  std::size_t total = 0;
  bool needs = false;
  for (const Tensor& p : parts) {
    Shape plead(p.shape().begin(), p.shape().end() - 1);
    if (plead != lead) {
      throw std::invalid_argument(
          "concat_last leading-shape mismatch: " + shape_str(parts[0].shape()) +
          " vs " + shape_str(p.shape()));
    }
    total += p.shape().back();
    needs = needs || p.requires_grad();
  }
  needs = needs && tape != nullptr;
  Shape out_shape = parts[0].shape();
  out_shape.back() = total;
  const std::size_t outer = shape_numel(lead);
  Tensor out = Tensor::uninitialized(out_shape, needs);
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t len = p.shape().back();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p.data().data() + o * len, len,
                  out.data().data() + o * total + offset);
    }
    offset += len;
  }
  if (needs) {
    std::vector<Tensor> held(parts.begin(), parts.end());
    tape->record(out, [held, out, outer, total]() mutable {
      std::size_t off = 0;
      for (Tensor& p : held) {
        const std::size_t len = p.shape().back();
        if (p.requires_grad()) {
          for (std::size_t o = 0; o < outer; ++o) {
            kernels::add_scaled(len, p.grad().data() + o * len,
                                out.grad().data() + o * total + off, 1.0);
          }
        }
        off += len;
      }
    });
  }
  return out;
}

}  // namespace msav
