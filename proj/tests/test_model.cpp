#include <cmath>
#include <cstring>
#include <fstream>

#include <doctest.h>

#include "msav/ftz.hpp"
#include "msav/model.hpp"
#include "test_support.hpp"

using namespace msav;
using test_support::random_tensor;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_encoder_layers = 1;
  cfg.n_decoder_layers = 1;
  cfg.cnn_channels = {4, 8};
  cfg.cnn_pools = {{3, 4}, {4, 32}};
  cfg.paudio_dim = 32;
  cfg.pvisual_dim = 48;
  return cfg;
}

}  // namespace

TEST_CASE("model config validation") {
  ModelConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.time_pool_product() == 12);
  CHECK(cfg.freq_pool_product() == 128);

  ModelConfig bad_heads = cfg;
  bad_heads.n_heads = 5;
  CHECK_THROWS_AS(bad_heads.validate(), std::invalid_argument);

  ModelConfig bad_pools = cfg;
  bad_pools.cnn_pools = {{3, 4}, {2, 4}, {2, 4}, {1, 4}};
  CHECK_THROWS_AS(bad_pools.validate(), std::invalid_argument);
}

TEST_CASE("cnn_forward shape arithmetic") {
  Rng rng(1);
  Model model(ModelConfig{}, 7);

  SUBCASE("T=60 maps to five steps of 96 features") {
    Tensor spectral = random_tensor({2, 60, 128}, rng);
    Tensor seq = model.cnn_forward(spectral, Mode::eval, nullptr, nullptr);
    CHECK(seq.shape() == Shape{2, 5, 96});
  }
  SUBCASE("T=600 maps to fifty steps") {
    Tensor spectral = random_tensor({1, 600, 128}, rng);
    Tensor seq = model.cnn_forward(spectral, Mode::eval, nullptr, nullptr);
    CHECK(seq.shape() == Shape{1, 50, 96});
  }
  SUBCASE("indivisible frame count is rejected") {
    CHECK_THROWS_WITH_AS(
        model.cnn_forward(Tensor::zeros({1, 61, 128}), Mode::eval, nullptr,
                          nullptr),
        doctest::Contains("not divisible"), std::invalid_argument);
  }
  SUBCASE("zero input propagates to zero output") {
    Tensor seq = model.cnn_forward(Tensor::zeros({1, 60, 128}), Mode::eval,
                                   nullptr, nullptr);
    for (float v : seq.data()) CHECK(v == 0.0f);
  }
}

TEST_CASE("full forward produces a probability row per sample") {
  Rng rng(2);
  Model model(ModelConfig{}, 3);
  Tensor spectral = random_tensor({2, 60, 128}, rng);
  Tensor paudio = random_tensor({2, 1, 128}, rng);
  Tensor pvisual = random_tensor({2, 30, 4096}, rng);

  Tensor probs = model.forward(spectral, paudio, pvisual, Mode::eval, nullptr,
                               nullptr);
  REQUIRE(probs.shape() == Shape{2, 10});
  for (std::size_t r = 0; r < 2; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 10; ++c) {
      const float p = probs.data()[r * 10 + c];
      CHECK(p > 0.0f);
      CHECK(p < 1.0f);
      sum += p;
    }
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }

  SUBCASE("eval passes are bit-identical") {
    Tensor again = model.forward(spectral, paudio, pvisual, Mode::eval,
                                 nullptr, nullptr);
    CHECK(std::memcmp(again.data().data(), probs.data().data(),
                      probs.size() * sizeof(float)) == 0);
  }

  SUBCASE("shape violations name the stream") {
    CHECK_THROWS_WITH_AS(
        model.forward(spectral, Tensor::zeros({2, 2, 128}), pvisual,
                      Mode::eval, nullptr, nullptr),
        doctest::Contains("paudio"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(
        model.forward(spectral, paudio, Tensor::zeros({2, 30, 96}),
                      Mode::eval, nullptr, nullptr),
        doctest::Contains("pvisual"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(
        model.forward(Tensor::zeros({1, 60, 128}), paudio, pvisual,
                      Mode::eval, nullptr, nullptr),
        doctest::Contains("batch"), std::invalid_argument);
  }
}

TEST_CASE("eval output is invariant under visual frame permutation") {
  Rng rng(4);
  Model model(small_config(), 11);
  Tensor spectral = random_tensor({2, 24, 128}, rng);
  Tensor paudio = random_tensor({2, 1, 32}, rng);
  Tensor pvisual = random_tensor({2, 6, 48}, rng);

  Tensor base = model.forward(spectral, paudio, pvisual, Mode::eval, nullptr,
                              nullptr);

  Tensor permuted = Tensor::zeros({2, 6, 48});
  const std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t i = 0; i < 6; ++i) {
      std::copy_n(pvisual.data().data() + (b * 6 + perm[i]) * 48, 48,
                  permuted.data().data() + (b * 6 + i) * 48);
    }
  }
  Tensor shuffled = model.forward(spectral, paudio, permuted, Mode::eval,
                                  nullptr, nullptr);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    max_diff = std::max(max_diff,
                        std::abs(static_cast<double>(base.data()[i]) -
                                 static_cast<double>(shuffled.data()[i])));
  }
  CHECK(max_diff < 1e-5);
}

TEST_CASE("positional encodings break permutation invariance when enabled") {
  Rng rng(5);
  ModelConfig cfg = small_config();
  cfg.positional_encoding = true;
  Model model(cfg, 11);
  Tensor spectral = random_tensor({1, 24, 128}, rng);
  Tensor paudio = random_tensor({1, 1, 32}, rng);
  Tensor pvisual = random_tensor({1, 6, 48}, rng);

  Tensor base = model.forward(spectral, paudio, pvisual, Mode::eval, nullptr,
                              nullptr);
  Tensor permuted = Tensor::zeros({1, 6, 48});
  for (std::size_t i = 0; i < 6; ++i) {
    std::copy_n(pvisual.data().data() + ((i + 1) % 6) * 48, 48,
                permuted.data().data() + i * 48);
  }
  Tensor shuffled = model.forward(spectral, paudio, permuted, Mode::eval,
                                  nullptr, nullptr);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    max_diff = std::max(max_diff,
                        std::abs(static_cast<double>(base.data()[i]) -
                                 static_cast<double>(shuffled.data()[i])));
  }
  CHECK(max_diff > 1e-5);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  test_support::TempDir dir("ckpt");
  Model model(small_config(), 21);
  save_checkpoint(model, dir.path() / "a", 17, "student");

  Checkpoint loaded = load_checkpoint(dir.path() / "a");
  CHECK(loaded.step == 17);
  CHECK(loaded.role == "student");
  CHECK(loaded.model.config() == model.config());
  const auto& a = model.params().entries();
  const auto& b = loaded.model.params().entries();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(std::memcmp(a[i].tensor.data().data(), b[i].tensor.data().data(),
                      a[i].tensor.size() * sizeof(float)) == 0);
  }

  // saving the loaded model reproduces identical files
  save_checkpoint(loaded.model, dir.path() / "b", 17, "student");
  CHECK(test_support::trees_equal(dir.path() / "a", dir.path() / "b"));
}

TEST_CASE("checkpoint loading rejects mismatches distinctly") {
  test_support::TempDir dir("ckpt_bad");
  Model model(small_config(), 22);
  const auto ckpt = dir.path() / "c";
  save_checkpoint(model, ckpt, 0, "teacher");

  SUBCASE("config mismatch against stored tensors") {
    // rewrite meta.json with a different class count
    std::ifstream is(ckpt / "meta.json");
    std::string meta((std::istreambuf_iterator<char>(is)),
                     std::istreambuf_iterator<char>());
    is.close();
    const auto pos = meta.find("\"n_classes\": 10");
    REQUIRE(pos != std::string::npos);
    meta.replace(pos, 15, "\"n_classes\": 12");
    std::ofstream(ckpt / "meta.json") << meta;
    CHECK_THROWS_WITH_AS(load_checkpoint(ckpt), doctest::Contains("shape"),
                         std::runtime_error);
  }
  SUBCASE("missing tensor") {
    std::filesystem::remove(ckpt / "params" / "head.bias.ftz");
    CHECK_THROWS_WITH_AS(load_checkpoint(ckpt),
                         doctest::Contains("missing tensor"),
                         std::runtime_error);
  }
  SUBCASE("unexpected tensor") {
    write_ftz(ckpt / "params" / "stray.ftz", Tensor::zeros({1}));
    CHECK_THROWS_WITH_AS(load_checkpoint(ckpt),
                         doctest::Contains("unexpected tensor"),
                         std::runtime_error);
  }
  SUBCASE("corrupt tensor file") {
    std::ofstream(ckpt / "params" / "head.bias.ftz", std::ios::binary)
        << "garbage";
    CHECK_THROWS_WITH_AS(load_checkpoint(ckpt), doctest::Contains("corrupt"),
                         std::runtime_error);
  }
}

TEST_CASE("clone copies values but not storage") {
  Model model(small_config(), 23);
  Model copy = model.clone();
  const auto& a = model.params().entries();
  auto& b = copy.params().entries();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK_FALSE(a[i].tensor.same_storage(b[i].tensor));
    CHECK(std::memcmp(a[i].tensor.data().data(), b[i].tensor.data().data(),
                      a[i].tensor.size() * sizeof(float)) == 0);
  }
  b[0].tensor.data()[0] += 1.0f;
  CHECK(a[0].tensor.data()[0] != b[0].tensor.data()[0]);
}
