#include <cmath>
#include <cstring>

#include <doctest.h>

#include "msav/kernels.hpp"
#include "msav/ops.hpp"
#include "msav/training.hpp"
#include "test_support.hpp"

using namespace msav;
using test_support::TempDir;
using test_support::random_tensor;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_encoder_layers = 1;
  cfg.n_decoder_layers = 1;
  cfg.cnn_channels = {4, 8};
  cfg.cnn_pools = {{3, 4}, {4, 32}};
  cfg.paudio_dim = 128;
  cfg.pvisual_dim = 4096;
  return cfg;
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  TrainConfig cfg;

  SUBCASE("peak is reached exactly at the warmup boundary") {
    CHECK(lr_at(675, cfg) == 0.00025);
  }
  SUBCASE("one decay step after the boundary") {
    CHECK(lr_at(676, cfg) == doctest::Approx(0.00024975).epsilon(1e-12));
    CHECK(lr_at(676, cfg) == 0.00025 * 0.999);
  }
  SUBCASE("the ramp starts near zero") {
    CHECK(lr_at(0, cfg) ==
          doctest::Approx(1.68448675e-06).epsilon(1e-6));
  }
  SUBCASE("strictly increasing over the ramp, continuous at the junction") {
    double prev = -1.0;
    for (std::size_t s = 0; s <= 675; ++s) {
      const double lr = lr_at(s, cfg);
      CHECK(lr > prev);
      prev = lr;
    }
    // both branches meet at the peak
    const double before = lr_at(675, cfg);
    const double after = lr_at(676, cfg);
    CHECK(before == cfg.peak_lr);
    CHECK(after < before);
    CHECK((before - after) / before < 2e-3);
  }
  SUBCASE("geometric variant shares the endpoints") {
    TrainConfig geo = cfg;
    geo.geometric_warmup = true;
    CHECK(lr_at(675, geo) == 0.00025);
    CHECK(lr_at(0, geo) == doctest::Approx(0.00025 * std::exp(-5.0)));
    double prev = -1.0;
    for (std::size_t s = 0; s <= 675; s += 5) {
      const double lr = lr_at(s, geo);
      CHECK(lr > prev);
      prev = lr;
    }
  }
  SUBCASE("config validation") {
    TrainConfig bad = cfg;
    bad.decay_rate = 1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.warmup_steps = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  }
}

TEST_CASE("categorical cross entropy") {
  SUBCASE("uniform probabilities against one-hot targets") {
    Tensor probs = Tensor::full({4, 10}, 0.1f);
    Tensor targets = Tensor::zeros({4, 10});
    for (std::size_t i = 0; i < 4; ++i) targets.data()[i * 10 + i] = 1.0f;
    Tensor loss = categorical_cross_entropy(probs, targets, nullptr);
    CHECK(static_cast<double>(loss.item()) ==
          doctest::Approx(2.302585092994).epsilon(1e-6));
  }
  SUBCASE("perfect prediction is (clamped) zero") {
    Tensor probs = Tensor::zeros({2, 10});
    probs.data()[3] = 1.0f;
    probs.data()[10 + 7] = 1.0f;
    Tensor targets = probs.clone();
    Tensor loss = categorical_cross_entropy(probs, targets, nullptr);
    CHECK(std::abs(loss.item()) < 1e-6);
  }
  SUBCASE("soft targets match hand arithmetic") {
    Tensor probs = Tensor::zeros({1, 10});
    probs.data()[0] = 0.25f;
    probs.data()[1] = 0.75f;
    Tensor targets = Tensor::zeros({1, 10});
    targets.data()[0] = 0.5f;
    targets.data()[1] = 0.5f;
    Tensor loss = categorical_cross_entropy(probs, targets, nullptr);
    CHECK(static_cast<double>(loss.item()) ==
          doctest::Approx(0.836988216786).epsilon(1e-6));
  }
  SUBCASE("shape mismatch and invalid rows are rejected") {
    CHECK_THROWS_AS(categorical_cross_entropy(Tensor::zeros({2, 10}),
                                              Tensor::zeros({3, 10}), nullptr),
                    std::invalid_argument);
    Tensor bad = Tensor::full({1, 10}, 0.2f);  // sums to 2
    Tensor t = Tensor::zeros({1, 10});
    t.data()[0] = 1.0f;
    CHECK_THROWS_AS(categorical_cross_entropy(bad, t, nullptr),
                    std::invalid_argument);
  }
  SUBCASE("gradient flows through the loss") {
    Rng rng(1);
    Tensor logits = random_tensor({3, 10}, rng, true);
    Tensor targets = Tensor::zeros({3, 10});
    for (std::size_t i = 0; i < 3; ++i) targets.data()[i * 10 + i] = 1.0f;

    auto build = [&](Tape* tape) {
      return categorical_cross_entropy(softmax(logits, 1, tape), targets,
                                       tape);
    };
    Tape tape;
    Tensor loss = build(&tape);
    tape.backward(loss);
    auto eval = [&]() { return static_cast<double>(build(nullptr).item()); };
    double max_dev = 0.0, max_mag = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double fd = test_support::central_diff(logits, i, eval, 1e-3);
      const double an = static_cast<double>(logits.grad()[i]);
      max_dev = std::max(max_dev, std::abs(fd - an));
      max_mag = std::max({max_mag, std::abs(fd), std::abs(an)});
    }
    CHECK(max_dev / std::max(max_mag, 1e-8) < 1e-3);
  }
}

TEST_CASE("Adam optimizer") {
  SUBCASE("first bias-corrected step moves by about lr in the gradient sign") {
    ModelParams params;
    Tensor p = Tensor::from_data({3}, {1.0f, 2.0f, -1.0f}, true);
    params.add("p", p);
    std::copy_n(std::vector<float>{0.3f, -0.7f, 0.0f}.data(), 3,
                p.grad().data());
    TrainConfig cfg;
    AdamOptimizer opt(params);
    opt.step(1e-3, cfg);
    CHECK(static_cast<double>(p.data()[0]) ==
          doctest::Approx(1.0 - 1e-3).epsilon(1e-6));
    CHECK(static_cast<double>(p.data()[1]) ==
          doctest::Approx(2.0 + 1e-3).epsilon(1e-6));
    CHECK(p.data()[2] == -1.0f);  // zero gradient, zero update
  }
  SUBCASE("zero gradients leave parameters unchanged") {
    ModelParams params;
    Tensor p = Tensor::from_data({2}, {0.5f, -0.5f}, true);
    params.add("p", p);
    TrainConfig cfg;
    AdamOptimizer opt(params);
    opt.step(1e-2, cfg);
    CHECK(p.data()[0] == 0.5f);
    CHECK(p.data()[1] == -0.5f);
  }
  SUBCASE("two steps match a hand-unrolled scalar oracle") {
    ModelParams params;
    Tensor p = Tensor::from_data({1}, {0.7f}, true);
    params.add("p", p);
    TrainConfig cfg;
    AdamOptimizer opt(params);

    // oracle mirrors the update arithmetic, including the f32 stores
    float theta = 0.7f, m = 0.0f, v = 0.0f;
    auto oracle_step = [&](double g, double lr, int t) {
      const double mi = cfg.adam_beta1 * m + (1 - cfg.adam_beta1) * g;
      const double vi = cfg.adam_beta2 * v + (1 - cfg.adam_beta2) * g * g;
      m = static_cast<float>(mi);
      v = static_cast<float>(vi);
      const double mhat = mi / (1.0 - std::pow(cfg.adam_beta1, t));
      const double vhat = vi / (1.0 - std::pow(cfg.adam_beta2, t));
      theta = static_cast<float>(
          theta - lr * mhat / (std::sqrt(vhat) + cfg.adam_eps));
    };
    p.grad()[0] = 0.3f;
    opt.step(1e-3, cfg);
    oracle_step(0.3f, 1e-3, 1);
    p.grad()[0] = -0.1f;
    opt.step(1e-3, cfg);
    oracle_step(-0.1f, 1e-3, 2);
    CHECK(std::abs(static_cast<double>(p.data()[0]) -
                   static_cast<double>(theta)) < 1e-12);
  }
}

TEST_CASE("EMA updates") {
  SUBCASE("teacher equal to student is a fixed point") {
    Model a(tiny_config(), 1);
    Model b = a.clone();
    ema_update(b.params(), a.params(), 0.999);
    for (std::size_t i = 0; i < a.params().size(); ++i) {
      const auto& pa = a.params().entries()[i].tensor;
      const auto& pb = b.params().entries()[i].tensor;
      CHECK(std::memcmp(pa.data().data(), pb.data().data(),
                        pa.size() * sizeof(float)) == 0);
    }
  }
  SUBCASE("single update from zero toward one") {
    ModelParams teacher, student;
    teacher.add("w", Tensor::zeros({4}, true));
    Tensor ones = Tensor::full({4}, 1.0f, true);
    student.add("w", ones);
    ema_update(teacher, student, 0.999);
    for (float v : teacher.entries()[0].tensor.data()) {
      CHECK(static_cast<double>(v) == doctest::Approx(0.001).epsilon(1e-9));
    }
  }
  SUBCASE("scalar probe follows the closed-form geometric series") {
    for (const std::size_t k : {std::size_t{1}, std::size_t{10},
                                std::size_t{1000}}) {
      double probe = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        probe = kernels::ema_scalar_step(probe, 1.0, 0.999);
      }
      const double expected = 1.0 - std::pow(0.999, static_cast<double>(k));
      CHECK(std::abs(probe - expected) < 1e-10);
    }
  }
  SUBCASE("teacher stays inside the convex hull of observed values") {
    Rng rng(2);
    Tensor teacher = Tensor::from_data({1}, {0.25f});
    float lo = 0.25f, hi = 0.25f;
    ModelParams tp, sp;
    tp.add("w", teacher);
    Tensor student = Tensor::zeros({1});
    sp.add("w", student);
    for (int i = 0; i < 200; ++i) {
      student.data()[0] = static_cast<float>(rng.uniform(-2.0, 2.0));
      lo = std::min(lo, student.data()[0]);
      hi = std::max(hi, student.data()[0]);
      ema_update(tp, sp, 0.999);
      CHECK(teacher.data()[0] >= lo);
      CHECK(teacher.data()[0] <= hi);
    }
  }
  SUBCASE("mismatched name sets are rejected") {
    ModelParams a, b;
    a.add("x", Tensor::zeros({1}));
    b.add("y", Tensor::zeros({1}));
    CHECK_THROWS_WITH_AS(ema_update(a, b, 0.999),
                         doctest::Contains("name mismatch"),
                         std::invalid_argument);
  }
}

TEST_CASE("loss on a fixed batch halves within fifty steps") {
  Rng rng(3);
  Model model(tiny_config(), 5);
  const std::size_t batch = 4;
  Tensor spectral = random_tensor({batch, 12, 128}, rng);
  Tensor paudio = random_tensor({batch, 1, 128}, rng);
  Tensor pvisual = random_tensor({batch, 3, 4096}, rng);
  Tensor targets = Tensor::zeros({batch, 10});
  for (std::size_t i = 0; i < batch; ++i) {
    targets.data()[i * 10 + (i * 3) % 10] = 1.0f;
  }

  TrainConfig cfg;
  cfg.peak_lr = 1e-3;
  cfg.warmup_steps = 20;
  AdamOptimizer opt(model.params());
  Rng train_rng(7);
  double first = 0.0, last = 0.0;
  for (std::size_t step = 0; step < 50; ++step) {
    Tape tape;
    Tensor probs = model.forward(spectral, paudio, pvisual, Mode::train,
                                 &train_rng, &tape);
    Tensor loss = categorical_cross_entropy(probs, targets, &tape);
    if (step == 0) first = loss.item();
    last = loss.item();
    tape.backward(loss);
    opt.step(lr_at(step, cfg), cfg);
    model.params().zero_grads();
  }
  CHECK(last < 0.5 * first);
}

TEST_CASE("zero-epoch training leaves the teacher identical to the student") {
  TempDir dir("train0");
  const Manifest m = synth_dataset(dir.path() / "d", 3, 1, 2, 9);
  Model student(tiny_config(), 11);
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.batch_size = 2;
  const TrainResult result =
      train(m, m, student, cfg, MixupConfig{}, dir.path() / "out");
  CHECK(result.history.empty());
  CHECK_FALSE(result.best_macro_ce.has_value());
  const auto& s = student.params().entries();
  const auto& t = result.teacher.params().entries();
  for (std::size_t i = 0; i < s.size(); ++i) {
    CHECK(std::memcmp(s[i].tensor.data().data(), t[i].tensor.data().data(),
                      s[i].tensor.size() * sizeof(float)) == 0);
  }
  CHECK(test_support::trees_equal(dir.path() / "out" / "final_student",
                                  dir.path() / "out" / "final_teacher") ==
        false);  // meta.json differs by role
  // parameter files themselves are identical
  CHECK(test_support::trees_equal(
      dir.path() / "out" / "final_student" / "params",
      dir.path() / "out" / "final_teacher" / "params"));
}

TEST_CASE("short training run retains the best teacher scores") {
  TempDir dir("train_smoke");
  const Manifest m = synth_dataset(dir.path() / "d", 3, 2, 3, 13);
  Model student(tiny_config(), 17);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.peak_lr = 1e-3;
  cfg.warmup_steps = 5;
  cfg.seed = 99;
  const TrainResult result =
      train(m, m, student, cfg, MixupConfig{}, dir.path() / "out");

  REQUIRE(result.history.size() == 3);
  REQUIRE(result.best_macro_ce.has_value());
  // best-retention equals an independent scan of the history
  double min_ce = 1e300, max_acc = -1.0;
  for (const EpochRecord& r : result.history) {
    min_ce = std::min(min_ce, r.val_macro_ce);
    max_acc = std::max(max_acc, r.val_accuracy);
  }
  CHECK(*result.best_macro_ce == min_ce);
  CHECK(*result.best_accuracy == max_acc);
  CHECK(std::filesystem::exists(dir.path() / "out" / "train_log.jsonl"));
  CHECK(std::filesystem::exists(dir.path() / "out" / "best_ce" / "meta.json"));
  CHECK(std::filesystem::exists(dir.path() / "out" / "best_acc" / "meta.json"));

  SUBCASE("same seed reproduces the run bit-exactly") {
    Model student2(tiny_config(), 17);
    const TrainResult again =
        train(m, m, student2, cfg, MixupConfig{}, dir.path() / "out2");
    REQUIRE(again.history.size() == result.history.size());
    for (std::size_t i = 0; i < result.history.size(); ++i) {
      CHECK(again.history[i].train_loss == result.history[i].train_loss);
      CHECK(again.history[i].val_macro_ce == result.history[i].val_macro_ce);
      CHECK(again.history[i].val_accuracy == result.history[i].val_accuracy);
    }
    CHECK(test_support::trees_equal(dir.path() / "out" / "final_teacher",
                                    dir.path() / "out2" / "final_teacher"));
  }
}
