#pragma once

#include <optional>
#include <string>
#include <vector>

#include "msav/tensor.hpp"

namespace msav {

/// Challenge metrics. Per-class entries are empty (null in JSON) for classes
/// with no evaluation samples; such classes are excluded from the macro mean.
struct MetricReport {
  double macro_ce = 0.0;
  double accuracy = 0.0;
  std::vector<std::optional<double>> per_class_ce;
  std::vector<std::optional<double>> per_class_accuracy;
  std::size_t n_samples = 0;

  std::string to_json_string() const;
};

/// Per-class mean of -ln(max(p_true, 1e-12)), macro-averaged over the
/// classes present. probs: [N, C] rows summing to 1; labels in 0..C-1.
std::pair<double, std::vector<std::optional<double>>> macro_cross_entropy(
    const Tensor& probs, const std::vector<int>& labels);

/// Argmax accuracy (ties to the lowest index), overall and per class.
std::pair<double, std::vector<std::optional<double>>> accuracy(
    const Tensor& probs, const std::vector<int>& labels);

MetricReport evaluate_metrics(const Tensor& probs,
                              const std::vector<int>& labels);

}  // namespace msav
