#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "impl.hpp"

namespace msav::kernels {

namespace {

std::atomic<Backend> g_backend{
#ifdef _OPENMP
    Backend::parallel
#else
    Backend::serial
#endif
};

std::atomic<std::size_t> g_min_work{32768};

/// Parallel only when requested and the kernel is big enough to amortize
/// the fork/join.
bool parallel(std::size_t work) {
  return g_backend.load() == Backend::parallel && work > g_min_work.load();
}

}  // namespace

Backend active_backend() { return g_backend.load(); }
void set_backend(Backend b) { g_backend.store(b); }

std::size_t parallel_threshold() { return g_min_work.load(); }
void set_parallel_threshold(std::size_t min_work) { g_min_work.store(min_work); }

bool parallel_available() {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

int thread_count() {
#ifdef _OPENMP
  return active_backend() == Backend::parallel ? omp_get_max_threads() : 1;
#else
  return 1;
#endif
}

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t k,
          std::size_t n, const float* a, const float* b, float* y,
          bool accumulate) {
  parallel(m * k * n)
      ? parallel_impl::gemm(trans_a, trans_b, m, k, n, a, b, y, accumulate)
      : serial_impl::gemm(trans_a, trans_b, m, k, n, a, b, y, accumulate);
}

void transpose_last2(std::size_t outer, std::size_t rows, std::size_t cols,
                     const float* x, float* y) {
  parallel(outer * rows * cols)
      ? parallel_impl::transpose_last2(outer, rows, cols, x, y)
      : serial_impl::transpose_last2(outer, rows, cols, x, y);
}

void broadcast_ew(EwOp op, const float* a, const float* b, float* out,
                  const std::size_t* out_dims, const std::size_t* a_strides,
                  const std::size_t* b_strides, std::size_t rank) {
  std::size_t n = 1;
  for (std::size_t d = 0; d < rank; ++d) n *= out_dims[d];
  parallel(n) ? parallel_impl::broadcast_ew(op, a, b, out, out_dims, a_strides,
                                            b_strides, rank)
              : serial_impl::broadcast_ew(op, a, b, out, out_dims, a_strides,
                                          b_strides, rank);
}

void reduce_broadcast(const float* src, const std::size_t* src_dims,
                      const std::size_t* dst_dims, std::size_t rank,
                      float* dst, bool accumulate) {
  std::size_t n = 1;
  for (std::size_t d = 0; d < rank; ++d) n *= src_dims[d];
  parallel(n) ? parallel_impl::reduce_broadcast(src, src_dims, dst_dims, rank,
                                                dst, accumulate)
              : serial_impl::reduce_broadcast(src, src_dims, dst_dims, rank,
                                              dst, accumulate);
}

void conv2d_fwd(std::size_t batch, std::size_t in_ch, std::size_t out_ch,
                std::size_t h, std::size_t w, const float* x,
                const float* weight, const float* bias, float* y) {
  parallel(batch * out_ch * h * w * in_ch * 9)
      ? parallel_impl::conv2d_fwd(batch, in_ch, out_ch, h, w, x, weight, bias, y)
      : serial_impl::conv2d_fwd(batch, in_ch, out_ch, h, w, x, weight, bias, y);
}

void conv2d_dx(std::size_t batch, std::size_t in_ch, std::size_t out_ch,
               std::size_t h, std::size_t w, const float* g,
               const float* weight, float* dx) {
  parallel(batch * in_ch * h * w * out_ch * 9)
      ? parallel_impl::conv2d_dx(batch, in_ch, out_ch, h, w, g, weight, dx)
      : serial_impl::conv2d_dx(batch, in_ch, out_ch, h, w, g, weight, dx);
}

void conv2d_dwdb(std::size_t batch, std::size_t in_ch, std::size_t out_ch,
                 std::size_t h, std::size_t w, const float* x, const float* g,
                 float* dw, float* db) {
  parallel(batch * out_ch * in_ch * h * w * 9)
      ? parallel_impl::conv2d_dwdb(batch, in_ch, out_ch, h, w, x, g, dw, db)
      : serial_impl::conv2d_dwdb(batch, in_ch, out_ch, h, w, x, g, dw, db);
}

void avgpool_fwd(std::size_t batch, std::size_t ch, std::size_t h,
                 std::size_t w, std::size_t kt, std::size_t kf, const float* x,
                 float* y) {
  parallel(batch * ch * h * w)
      ? parallel_impl::avgpool_fwd(batch, ch, h, w, kt, kf, x, y)
      : serial_impl::avgpool_fwd(batch, ch, h, w, kt, kf, x, y);
}

void avgpool_bwd(std::size_t batch, std::size_t ch, std::size_t h,
                 std::size_t w, std::size_t kt, std::size_t kf, const float* g,
                 float* dx) {
  parallel(batch * ch * h * w)
      ? parallel_impl::avgpool_bwd(batch, ch, h, w, kt, kf, g, dx)
      : serial_impl::avgpool_bwd(batch, ch, h, w, kt, kf, g, dx);
}

void channel_stats(std::size_t batch, std::size_t ch, std::size_t h,
                   std::size_t w, const float* x, double* mean, double* var) {
  parallel(batch * ch * h * w)
      ? parallel_impl::channel_stats(batch, ch, h, w, x, mean, var)
      : serial_impl::channel_stats(batch, ch, h, w, x, mean, var);
}

void bn_apply(std::size_t batch, std::size_t ch, std::size_t h, std::size_t w,
              const float* x, const float* mean, const float* inv_std,
              const float* gamma, const float* beta, float* y, float* xhat) {
  parallel(batch * ch * h * w)
      ? parallel_impl::bn_apply(batch, ch, h, w, x, mean, inv_std, gamma, beta,
                                y, xhat)
      : serial_impl::bn_apply(batch, ch, h, w, x, mean, inv_std, gamma, beta,
                              y, xhat);
}

void bn_bwd(std::size_t batch, std::size_t ch, std::size_t h, std::size_t w,
            const float* xhat, const float* inv_std, const float* gamma,
            const float* g, bool train_dx, float* dx, float* dgamma,
            float* dbeta) {
  parallel(batch * ch * h * w)
      ? parallel_impl::bn_bwd(batch, ch, h, w, xhat, inv_std, gamma, g,
                              train_dx, dx, dgamma, dbeta)
      : serial_impl::bn_bwd(batch, ch, h, w, xhat, inv_std, gamma, g, train_dx,
                            dx, dgamma, dbeta);
}

void softmax(std::size_t outer, std::size_t n, std::size_t inner,
             const float* x, float* y) {
  parallel(outer * n * inner) ? parallel_impl::softmax(outer, n, inner, x, y)
                              : serial_impl::softmax(outer, n, inner, x, y);
}

void softmax_bwd(std::size_t outer, std::size_t n, std::size_t inner,
                 const float* y, const float* g, float* dx) {
  parallel(outer * n * inner)
      ? parallel_impl::softmax_bwd(outer, n, inner, y, g, dx)
      : serial_impl::softmax_bwd(outer, n, inner, y, g, dx);
}

void layernorm_fwd(std::size_t rows, std::size_t n, const float* x,
                   const float* gamma, const float* beta, float eps, float* y,
                   float* xhat, float* inv_std) {
  parallel(rows * n)
      ? parallel_impl::layernorm_fwd(rows, n, x, gamma, beta, eps, y, xhat,
                                     inv_std)
      : serial_impl::layernorm_fwd(rows, n, x, gamma, beta, eps, y, xhat,
                                   inv_std);
}

void layernorm_bwd(std::size_t rows, std::size_t n, const float* xhat,
                   const float* inv_std, const float* gamma, const float* g,
                   float* dx, float* dgamma, float* dbeta) {
  parallel(rows * n)
      ? parallel_impl::layernorm_bwd(rows, n, xhat, inv_std, gamma, g, dx,
                                     dgamma, dbeta)
      : serial_impl::layernorm_bwd(rows, n, xhat, inv_std, gamma, g, dx,
                                   dgamma, dbeta);
}

void relu_fwd(std::size_t n, const float* x, float* y) {
  parallel(n) ? parallel_impl::relu_fwd(n, x, y)
              : serial_impl::relu_fwd(n, x, y);
}

void relu_bwd(std::size_t n, const float* x, const float* g, float* dx) {
  parallel(n) ? parallel_impl::relu_bwd(n, x, g, dx)
              : serial_impl::relu_bwd(n, x, g, dx);
}

void scale_fwd(std::size_t n, const float* x, float c, float* y) {
  parallel(n) ? parallel_impl::scale_fwd(n, x, c, y)
              : serial_impl::scale_fwd(n, x, c, y);
}

void add_scaled(std::size_t n, float* dst, const float* src, double c) {
  parallel(n) ? parallel_impl::add_scaled(n, dst, src, c)
              : serial_impl::add_scaled(n, dst, src, c);
}

void add_const(std::size_t n, float* dst, double c) {
  parallel(n) ? parallel_impl::add_const(n, dst, c)
              : serial_impl::add_const(n, dst, c);
}

void log_clamped_fwd(std::size_t n, const float* x, float floor, float* y) {
  parallel(n) ? parallel_impl::log_clamped_fwd(n, x, floor, y)
              : serial_impl::log_clamped_fwd(n, x, floor, y);
}

void log_clamped_bwd(std::size_t n, const float* x, float floor,
                     const float* g, float* dx) {
  parallel(n) ? parallel_impl::log_clamped_bwd(n, x, floor, g, dx)
              : serial_impl::log_clamped_bwd(n, x, floor, g, dx);
}

void dropout_fwd(std::size_t n, const float* x, const std::uint8_t* mask,
                 float inv_keep, float* y) {
  parallel(n) ? parallel_impl::dropout_fwd(n, x, mask, inv_keep, y)
              : serial_impl::dropout_fwd(n, x, mask, inv_keep, y);
}

void dropout_bwd(std::size_t n, const float* g, const std::uint8_t* mask,
                 float inv_keep, float* dx) {
  parallel(n) ? parallel_impl::dropout_bwd(n, g, mask, inv_keep, dx)
              : serial_impl::dropout_bwd(n, g, mask, inv_keep, dx);
}

double sum_all(std::size_t n, const float* x) {
  return parallel(n) ? parallel_impl::sum_all(n, x) : serial_impl::sum_all(n, x);
}

void ema_update(std::size_t n, float* average, const float* value,
                double decay) {
  parallel(n) ? parallel_impl::ema_update(n, average, value, decay)
              : serial_impl::ema_update(n, average, value, decay);
}

void adam_update(std::size_t n, float* param, const float* grad, float* m,
                 float* v, double lr, double beta1, double beta2, double eps,
                 double bc1, double bc2) {
  parallel(n) ? parallel_impl::adam_update(n, param, grad, m, v, lr, beta1,
                                           beta2, eps, bc1, bc2)
              : serial_impl::adam_update(n, param, grad, m, v, lr, beta1,
                                         beta2, eps, bc1, bc2);
}

void stft_power(const float* padded, std::size_t n_frames, std::size_t n_fft,
                std::size_t hop, const float* window, float* power) {
  parallel(n_frames * n_fft)
      ? parallel_impl::stft_power(padded, n_frames, n_fft, hop, window, power)
      : serial_impl::stft_power(padded, n_frames, n_fft, hop, window, power);
}

}  // namespace msav::kernels
