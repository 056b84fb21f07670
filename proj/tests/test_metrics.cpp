#include <cmath>

#include <doctest.h>

#include "msav/metrics.hpp"
#include "test_support.hpp"

using namespace msav;

namespace {

/// Builds a [n, 10] probability tensor where row i puts p_true on labels[i]
/// and spreads the remainder uniformly over the other nine classes.
Tensor probs_with_true(const std::vector<int>& labels,
                       const std::vector<double>& p_true) {
  Tensor t = Tensor::zeros({labels.size(), 10});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double rest = (1.0 - p_true[i]) / 9.0;
    for (std::size_t c = 0; c < 10; ++c) {
      t.data()[i * 10 + c] = static_cast<float>(
          static_cast<int>(c) == labels[i] ? p_true[i] : rest);
    }
  }
  return t;
}

}  // namespace

TEST_CASE("uniform predictions score ln(10) for any class balance") {
  Tensor probs = Tensor::full({7, 10}, 0.1f);
  const std::vector<int> labels = {0, 0, 0, 0, 0, 3, 9};
  const auto [macro, per_class] = macro_cross_entropy(probs, labels);
  CHECK(std::abs(macro - 2.302585092994) < 1e-6);
  for (int c : {0, 3, 9}) {
    REQUIRE(per_class[c].has_value());
    CHECK(std::abs(*per_class[c] - 2.302585092994) < 1e-6);
  }
  CHECK_FALSE(per_class[1].has_value());
}

TEST_CASE("macro averaging weighs classes equally under 9:1 imbalance") {
  // class 0 samples get p_true = e^-1, class 1 samples get e^-2
  std::vector<int> labels(10, 0);
  labels[9] = 1;
  std::vector<double> p_true(10, std::exp(-1.0));
  p_true[9] = std::exp(-2.0);
  Tensor probs = probs_with_true(labels, p_true);

  const auto [macro, per_class] = macro_cross_entropy(probs, labels);
  REQUIRE(per_class[0].has_value());
  REQUIRE(per_class[1].has_value());
  CHECK(std::abs(*per_class[0] - 1.0) < 1e-6);
  CHECK(std::abs(*per_class[1] - 2.0) < 1e-6);
  CHECK(std::abs(macro - 1.5) < 1e-6);

  // micro average would be dominated by class 0
  const double micro = (9.0 * 1.0 + 1.0 * 2.0) / 10.0;
  CHECK(std::abs(macro - micro) > 0.3);
}

TEST_CASE("six-sample fixture reproduces the hand-computed oracle") {
  // true-class probabilities are binary fractions, exact in f32, so the
  // oracle can be recomputed from the committed fixture to full precision
  const std::vector<int> labels = {0, 0, 3, 7, 7, 7};
  const std::vector<double> p_true = {0.5, 0.25, 0.125, 0.75, 0.375, 0.09375};
  Tensor probs = probs_with_true(labels, p_true);

  // independent spreadsheet-style recomputation from the stored values
  std::vector<double> sums(10, 0.0);
  std::vector<int> counts(10, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    sums[labels[i]] -=
        std::log(static_cast<double>(probs.data()[i * 10 + labels[i]]));
    counts[labels[i]] += 1;
  }
  double macro_oracle = 0.0;
  int present = 0;
  for (int c = 0; c < 10; ++c) {
    if (counts[c] > 0) {
      macro_oracle += sums[c] / counts[c];
      ++present;
    }
  }
  macro_oracle /= present;

  const auto [macro, per_class] = macro_cross_entropy(probs, labels);
  CHECK(std::abs(macro - macro_oracle) < 1e-9);
  // frozen values from the oracle
  CHECK(std::abs(macro - 1.443680208573) < 1e-6);
  CHECK(std::abs(*per_class[0] - 1.039720770840) < 1e-6);
  CHECK(std::abs(*per_class[3] - 2.079441541680) < 1e-6);
  CHECK(std::abs(*per_class[7] - 1.211878313198) < 1e-6);
}

TEST_CASE("accuracy") {
  SUBCASE("perfect one-hot predictions") {
    const std::vector<int> labels = {1, 4, 9};
    Tensor probs = Tensor::zeros({3, 10});
    for (std::size_t i = 0; i < 3; ++i) {
      probs.data()[i * 10 + labels[i]] = 1.0f;
    }
    const auto [overall, per_class] = accuracy(probs, labels);
    CHECK(overall == 1.0);
  }
  SUBCASE("exact ties resolve to the lowest index") {
    Tensor probs = Tensor::zeros({2, 10});
    probs.data()[0] = 0.5f;   // row 0: tie between classes 0 and 1
    probs.data()[1] = 0.5f;
    probs.data()[10] = 0.5f;  // row 1: same tie
    probs.data()[11] = 0.5f;
    const auto [overall, per_class] = accuracy(probs, {0, 1});
    CHECK(*per_class[0] == 1.0);  // label 0: lowest tied index wins
    CHECK(*per_class[1] == 0.0);  // label 1: loses the tie to class 0
    CHECK(overall == 0.5);
  }
  SUBCASE("imbalanced fixture separates overall from macro") {
    // three class-0 samples correct, one class-1 sample wrong
    const std::vector<int> labels = {0, 0, 0, 1};
    Tensor probs = Tensor::zeros({4, 10});
    for (std::size_t i = 0; i < 3; ++i) probs.data()[i * 10 + 0] = 1.0f;
    probs.data()[3 * 10 + 2] = 1.0f;  // class-1 sample predicted as class 2
    const auto [overall, per_class] = accuracy(probs, labels);
    CHECK(overall == 0.75);
    const double macro = (*per_class[0] + *per_class[1]) / 2.0;
    CHECK(macro == 0.5);
  }
  SUBCASE("argmax is invariant to positive rescaling") {
    Rng rng(5);
    Tensor probs = Tensor::zeros({8, 10});
    std::vector<int> labels(8);
    for (std::size_t i = 0; i < 8; ++i) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 10; ++c) {
        probs.data()[i * 10 + c] = static_cast<float>(rng.uniform(0.01, 1.0));
        sum += probs.data()[i * 10 + c];
      }
      for (std::size_t c = 0; c < 10; ++c) {
        probs.data()[i * 10 + c] /= static_cast<float>(sum);
      }
      labels[i] = static_cast<int>(i % 10);
    }
    Tensor scaled = Tensor::zeros({8, 10});
    for (std::size_t i = 0; i < scaled.size(); ++i) {
      scaled.data()[i] = probs.data()[i] * 3.0f;
    }
    const auto [a1, p1] = accuracy(probs, labels);
    const auto [a2, p2] = accuracy(scaled, labels);
    CHECK(a1 == a2);
  }
}

TEST_CASE("macro cross-entropy properties") {
  SUBCASE("duplicating a sample within its class leaves the macro unchanged") {
    std::vector<int> labels = {0, 0, 2};
    std::vector<double> p_true = {0.6, 0.3, 0.5};
    Tensor probs = probs_with_true(labels, p_true);
    const auto [macro1, _] = macro_cross_entropy(probs, labels);

    // duplicate the whole of class 0
    std::vector<int> labels2 = {0, 0, 0, 0, 2};
    std::vector<double> p2 = {0.6, 0.3, 0.6, 0.3, 0.5};
    Tensor probs2 = probs_with_true(labels2, p2);
    const auto [macro2, _2] = macro_cross_entropy(probs2, labels2);
    CHECK(std::abs(macro1 - macro2) < 1e-12);
  }
  SUBCASE("zero loss only at certainty, never negative") {
    Tensor certain = Tensor::zeros({2, 10});
    certain.data()[0 * 10 + 4] = 1.0f;
    certain.data()[1 * 10 + 4] = 1.0f;
    const auto [macro, _] = macro_cross_entropy(certain, {4, 4});
    CHECK(macro == 0.0);

    Tensor nearly = probs_with_true({4}, {0.999});
    const auto [macro2, _2] = macro_cross_entropy(nearly, {4});
    CHECK(macro2 > 0.0);
  }
  SUBCASE("empty evaluation set is an error") {
    CHECK_THROWS_AS(macro_cross_entropy(Tensor::zeros({1, 10}), {}),
                    std::invalid_argument);
    CHECK_THROWS_AS(accuracy(Tensor::zeros({1, 10}), {}),
                    std::invalid_argument);
  }
}

TEST_CASE("report serialization uses the contract field names") {
  const std::vector<int> labels = {0, 1};
  Tensor probs = probs_with_true(labels, {0.9, 0.8});
  const MetricReport report = evaluate_metrics(probs, labels);
  CHECK(report.n_samples == 2);
  const std::string json = report.to_json_string();
  for (const char* key : {"macro_ce", "accuracy", "per_class_ce",
                          "per_class_accuracy", "n_samples"}) {
    CHECK(json.find(key) != std::string::npos);
  }
  CHECK(json.find("null") != std::string::npos);  // absent classes
}
