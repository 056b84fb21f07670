#include "msav/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace msav {

namespace {

constexpr double kLogClamp = 1e-12;

void check_inputs(const Tensor& probs, const std::vector<int>& labels,
                  const char* op) {
  if (probs.rank() != 2) {
    throw std::invalid_argument(std::string(op) + ": probs must be 2-D, got " +
                                shape_str(probs.shape()));
  }
  if (probs.shape()[0] == 0 || labels.empty()) {
    throw std::invalid_argument(std::string(op) + ": empty evaluation set");
  }
  if (probs.shape()[0] != labels.size()) {
    throw std::invalid_argument(
        std::string(op) + ": " + std::to_string(labels.size()) +
        " labels for probs of shape " + shape_str(probs.shape()));
  }
  const int n_classes = static_cast<int>(probs.shape()[1]);
  for (int label : labels) {
    if (label < 0 || label >= n_classes) {
      throw std::invalid_argument(std::string(op) + ": label " +
                                  std::to_string(label) + " outside 0.." +
                                  std::to_string(n_classes - 1));
    }
  }
}

}  // namespace

std::pair<double, std::vector<std::optional<double>>> macro_cross_entropy(
    const Tensor& probs, const std::vector<int>& labels) {
  check_inputs(probs, labels, "macro_cross_entropy");
  const std::size_t n = labels.size();
  const std::size_t n_classes = probs.shape()[1];
  const auto p = probs.data();

  std::vector<double> loss_sum(n_classes, 0.0);
  std::vector<std::size_t> count(n_classes, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    const double pt =
        std::max(static_cast<double>(p[i * n_classes + c]), kLogClamp);
    loss_sum[c] -= std::log(pt);
    ++count[c];
  }
  std::vector<std::optional<double>> per_class(n_classes);
  double total = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (count[c] == 0) continue;
    per_class[c] = loss_sum[c] / static_cast<double>(count[c]);
    total += *per_class[c];
    ++present;
  }
  return {total / static_cast<double>(present), std::move(per_class)};
}

std::pair<double, std::vector<std::optional<double>>> accuracy(
    const Tensor& probs, const std::vector<int>& labels) {
  check_inputs(probs, labels, "accuracy");
  const std::size_t n = labels.size();
  const std::size_t n_classes = probs.shape()[1];
  const auto p = probs.data();

  std::vector<std::size_t> correct(n_classes, 0);
  std::vector<std::size_t> count(n_classes, 0);
  std::size_t total_correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = p.data() + i * n_classes;
    std::size_t argmax = 0;
    for (std::size_t c = 1; c < n_classes; ++c) {
      if (row[c] > row[argmax]) argmax = c;  // ties keep the lowest index
    }
    const auto label = static_cast<std::size_t>(labels[i]);
    ++count[label];
    if (argmax == label) {
      ++correct[label];
      ++total_correct;
    }
  }
  std::vector<std::optional<double>> per_class(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (count[c] == 0) continue;
    per_class[c] = static_cast<double>(correct[c]) /
                   static_cast<double>(count[c]);
  }
  return {static_cast<double>(total_correct) / static_cast<double>(n),
          std::move(per_class)};
}

MetricReport evaluate_metrics(const Tensor& probs,
                              const std::vector<int>& labels) {
  MetricReport report;
  auto [mce, per_ce] = macro_cross_entropy(probs, labels);
  auto [acc, per_acc] = accuracy(probs, labels);
  report.macro_ce = mce;
  report.per_class_ce = std::move(per_ce);
  report.accuracy = acc;
  report.per_class_accuracy = std::move(per_acc);
  report.n_samples = labels.size();
  return report;
}

std::string MetricReport::to_json_string() const {
  nlohmann::json j;
  j["macro_ce"] = macro_ce;
  j["accuracy"] = accuracy;
  auto opt_array = [](const std::vector<std::optional<double>>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& x : v) {
      if (x.has_value()) {
        a.push_back(*x);
      } else {
        a.push_back(nullptr);
      }
    }
    return a;
  };
  j["per_class_ce"] = opt_array(per_class_ce);
  j["per_class_accuracy"] = opt_array(per_class_accuracy);
  j["n_samples"] = n_samples;
  return j.dump(2);
}

}  // namespace msav
