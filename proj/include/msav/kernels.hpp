#pragma once

#include <cstddef>
#include <cstdint>

namespace msav::kernels {

// Two interchangeable kernel backends: `serial` is the plain reference
// implementation, `parallel` adds OpenMP worksharing. Both walk every
// accumulation in the same order, so outputs are bit-identical regardless of
// backend or thread count; tests assert that equivalence and tools/bench
// compares their throughput. Reductions accumulate in 64-bit.
enum class Backend { serial, parallel };

Backend active_backend();
void set_backend(Backend b);

/// True when the parallel backend was compiled with OpenMP support.
bool parallel_available();

/// Worker thread count the parallel backend will use (1 for serial builds).
int thread_count();

/// Workloads below this many inner operations are routed to the serial
/// loops even under the parallel backend; forking a thread team costs more
/// than such kernels ever take. Tests set 0 to force the OpenMP paths.
std::size_t parallel_threshold();
void set_parallel_threshold(std::size_t min_work);

enum class EwOp { add, sub, mul };

// ---- dense linear algebra ------------------------------------------------

/// y[m,n] = op(A) * op(B) with op = optional transpose; `accumulate` adds
/// into y instead of overwriting. A is m x k after op, B is k x n after op.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t k,
          std::size_t n, const float* a, const float* b, float* y,
          bool accumulate);

/// y[..., c, r] = x[..., r, c] for `outer` leading slices.
void transpose_last2(std::size_t outer, std::size_t rows, std::size_t cols,
                     const float* x, float* y);

// ---- broadcast elementwise -------------------------------------------------

/// out[i] = a[dot(idx,a_strides)] op b[dot(idx,b_strides)] where idx is the
/// multi-index of i under out_dims. Broadcast axes carry stride 0.
void broadcast_ew(EwOp op, const float* a, const float* b, float* out,
                  const std::size_t* out_dims, const std::size_t* a_strides,
                  const std::size_t* b_strides, std::size_t rank);

/// dst (+)= src summed over axes where dst_dims[d] == 1 < src_dims[d].
/// Shapes are rank-aligned; dst_dims must otherwise match src_dims.
void reduce_broadcast(const float* src, const std::size_t* src_dims,
                      const std::size_t* dst_dims, std::size_t rank,
                      float* dst, bool accumulate);

// ---- convolution (3x3, stride 1, pad 1) ------------------------------------

void conv2d_fwd(std::size_t batch, std::size_t in_ch, std::size_t out_ch,
                std::size_t h, std::size_t w, const float* x,
                const float* weight, const float* bias, float* y);

/// dx += full correlation of g with the flipped kernel.
void conv2d_dx(std::size_t batch, std::size_t in_ch, std::size_t out_ch,
               std::size_t h, std::size_t w, const float* g,
               const float* weight, float* dx);

/// dw += x (*) g per tap; db += per-channel sum of g. Either may be null.
void conv2d_dwdb(std::size_t batch, std::size_t in_ch, std::size_t out_ch,
                 std::size_t h, std::size_t w, const float* x, const float* g,
                 float* dw, float* db);

// ---- pooling ---------------------------------------------------------------

void avgpool_fwd(std::size_t batch, std::size_t ch, std::size_t h,
                 std::size_t w, std::size_t kt, std::size_t kf, const float* x,
                 float* y);

void avgpool_bwd(std::size_t batch, std::size_t ch, std::size_t h,
                 std::size_t w, std::size_t kt, std::size_t kf, const float* g,
                 float* dx);

// ---- batch normalization ---------------------------------------------------

/// Per-channel mean and biased variance over (batch, h, w).
void channel_stats(std::size_t batch, std::size_t ch, std::size_t h,
                   std::size_t w, const float* x, double* mean, double* var);

/// y = gamma * (x - mean) * inv_std + beta; optionally stores xhat.
void bn_apply(std::size_t batch, std::size_t ch, std::size_t h, std::size_t w,
              const float* x, const float* mean, const float* inv_std,
              const float* gamma, const float* beta, float* y, float* xhat);

/// Gradients for batchnorm. train_dx selects the train-mode dx (batch stats
/// were functions of x) vs the eval-mode dx (running stats are constants).
/// Any of dx / dgamma / dbeta may be null.
void bn_bwd(std::size_t batch, std::size_t ch, std::size_t h, std::size_t w,
            const float* xhat, const float* inv_std, const float* gamma,
            const float* g, bool train_dx, float* dx, float* dgamma,
            float* dbeta);

// ---- softmax / layer norm ----------------------------------------------------

/// Softmax along the middle extent of x viewed as [outer, n, inner],
/// max-subtracted for stability.
void softmax(std::size_t outer, std::size_t n, std::size_t inner,
             const float* x, float* y);

/// dx += y .* (g - sum_j g_j y_j) along the softmax extent.
void softmax_bwd(std::size_t outer, std::size_t n, std::size_t inner,
                 const float* y, const float* g, float* dx);

void layernorm_fwd(std::size_t rows, std::size_t n, const float* x,
                   const float* gamma, const float* beta, float eps, float* y,
                   float* xhat, float* inv_std);

void layernorm_bwd(std::size_t rows, std::size_t n, const float* xhat,
                   const float* inv_std, const float* gamma, const float* g,
                   float* dx, float* dgamma, float* dbeta);

// ---- elementwise -------------------------------------------------------------

void relu_fwd(std::size_t n, const float* x, float* y);
void relu_bwd(std::size_t n, const float* x, const float* g, float* dx);

void scale_fwd(std::size_t n, const float* x, float c, float* y);

/// dst += c * src
void add_scaled(std::size_t n, float* dst, const float* src, double c);

/// dst += c
void add_const(std::size_t n, float* dst, double c);

void log_clamped_fwd(std::size_t n, const float* x, float floor, float* y);
void log_clamped_bwd(std::size_t n, const float* x, float floor,
                     const float* g, float* dx);

void dropout_fwd(std::size_t n, const float* x, const std::uint8_t* mask,
                 float inv_keep, float* y);
void dropout_bwd(std::size_t n, const float* g, const std::uint8_t* mask,
                 float inv_keep, float* dx);

/// Deterministic 64-bit total: fixed-size chunk partials combined in chunk
/// order, so the result does not depend on the thread count.
double sum_all(std::size_t n, const float* x);

// ---- optimizer / EMA -----------------------------------------------------------

/// One elementwise update of the exponential moving average. This is the
/// exact per-coordinate rule applied by ema_update before the f32 store.
inline double ema_scalar_step(double average, double value, double decay) {
  return decay * average + (1.0 - decay) * value;
}

void ema_update(std::size_t n, float* average, const float* value,
                double decay);

/// Bias-corrected Adam. bc1 = 1 - beta1^t, bc2 = 1 - beta2^t.
void adam_update(std::size_t n, float* param, const float* grad, float* m,
                 float* v, double lr, double beta1, double beta2, double eps,
                 double bc1, double bc2);

// ---- spectral ---------------------------------------------------------------

/// One-sided power spectrum per frame. `padded` holds n_fft/2 samples of
/// reflect padding on each side; frame t reads padded[t*hop .. t*hop+n_fft).
/// power is [n_frames, n_fft/2 + 1]. n_fft must be a power of two.
void stft_power(const float* padded, std::size_t n_frames, std::size_t n_fft,
                std::size_t hop, const float* window, float* power);

}  // namespace msav::kernels
