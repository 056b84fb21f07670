// Throughput comparison of the serial reference kernels against the OpenMP
// backend. Sizes roughly match what one training step of the full model
// pushes through each kernel.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "msav/kernels.hpp"
#include "msav/nn.hpp"
#include "msav/ops.hpp"
#include "msav/rng.hpp"

namespace {

using msav::Rng;
using msav::Tensor;
namespace k = msav::kernels;

std::vector<float> random_vec(std::size_t n, Rng& rng) {
  std::vector<float> v(n);
  for (float& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return v;
}

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warmup
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best,
                    std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

void report(const std::string& name, const std::function<void()>& fn,
            int reps = 5) {
  k::set_backend(k::Backend::serial);
  const double serial_ms = time_ms(fn, reps);
  k::set_backend(k::Backend::parallel);
  const double parallel_ms = time_ms(fn, reps);
  std::printf("%-24s %10.2f ms %10.2f ms %8.2fx\n", name.c_str(), serial_ms,
              parallel_ms, serial_ms / parallel_ms);
}

}  // namespace

int main() {
  Rng rng(7);
  std::printf("threads available: %d\n\n", k::thread_count());
  std::printf("%-24s %13s %13s %9s\n", "kernel", "serial", "openmp",
              "speedup");

  {
    const std::size_t m = 256, kk = 256, n = 256;
    auto a = random_vec(m * kk, rng);
    auto b = random_vec(kk * n, rng);
    std::vector<float> y(m * n);
    report("gemm 256^3", [&] {
      k::gemm(false, false, m, kk, n, a.data(), b.data(), y.data(), false);
    });
  }
  {
    const std::size_t m = 600, kk = 4096, n = 96;
    auto a = random_vec(m * kk, rng);
    auto b = random_vec(kk * n, rng);
    std::vector<float> y(m * n);
    report("gemm 600x4096x96", [&] {
      k::gemm(false, false, m, kk, n, a.data(), b.data(), y.data(), false);
    });
  }
  {
    const std::size_t batch = 8, ic = 12, oc = 24, h = 60, w = 32;
    auto x = random_vec(batch * ic * h * w, rng);
    auto wgt = random_vec(oc * ic * 9, rng);
    auto bias = random_vec(oc, rng);
    std::vector<float> y(batch * oc * h * w);
    report("conv2d fwd 8x12>24", [&] {
      k::conv2d_fwd(batch, ic, oc, h, w, x.data(), wgt.data(), bias.data(),
                    y.data());
    });
    std::vector<float> dx(x.size(), 0.0f);
    report("conv2d dx", [&] {
      k::conv2d_dx(batch, ic, oc, h, w, y.data(), wgt.data(), dx.data());
    });
    std::vector<float> dw(wgt.size(), 0.0f), db(oc, 0.0f);
    report("conv2d dw/db", [&] {
      k::conv2d_dwdb(batch, ic, oc, h, w, x.data(), y.data(), dw.data(),
                     db.data());
    });
  }
  {
    const std::size_t rows = 4096, n = 512;
    auto x = random_vec(rows * n, rng);
    std::vector<float> y(rows * n);
    report("softmax 4096x512", [&] {
      k::softmax(rows, n, 1, x.data(), y.data());
    });
  }
  {
    const std::size_t rows = 8192, n = 96;
    auto x = random_vec(rows * n, rng);
    auto gamma = random_vec(n, rng);
    auto beta = random_vec(n, rng);
    std::vector<float> y(rows * n), xhat(rows * n), inv(rows);
    report("layernorm 8192x96", [&] {
      k::layernorm_fwd(rows, n, x.data(), gamma.data(), beta.data(), 1e-5f,
                       y.data(), xhat.data(), inv.data());
    });
  }
  {
    Rng init(11);
    auto layer = msav::nn::EncoderLayer::init(96, 3, 0.1f, init);
    Tensor x = Tensor::zeros({50, 96});
    for (float& v : x.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    report("encoder layer L=50", [&] {
      (void)layer.forward(x, msav::Mode::eval, nullptr, nullptr);
    });
  }
  {
    const std::size_t sr = 22050, seconds = 10;
    const std::size_t n_fft = 2048, hop = 368;
    auto audio = random_vec(sr * seconds + n_fft, rng);
    auto window = random_vec(n_fft, rng);
    const std::size_t frames = 1 + (sr * seconds) / hop;
    std::vector<float> power(frames * (n_fft / 2 + 1));
    report("stft 10s @22050", [&] {
      k::stft_power(audio.data(), frames, n_fft, hop, window.data(),
                    power.data());
    });
  }
  return 0;
}
