#pragma once

#include <functional>
#include <string>
#include <vector>

#include "msav/rng.hpp"
#include "msav/tensor.hpp"

namespace msav {

/// One gradient check: a forward closure producing an output tensor from
/// grad-enabled leaves, re-built fresh for every seed. The harness reduces
/// the output with a random linear functional, compares tape gradients of
/// every listed leaf against central finite differences, and reports the
/// largest deviation relative to the largest gradient magnitude.
struct GradCheckCase {
  std::string name;
  std::function<Tensor(Tape*)> forward;
  std::vector<Tensor> wrt;
  // Composed layers are curvy enough that larger steps pick up visible h^2
  // truncation while the f32 noise floor sits around 3e-5; this step keeps
  // both error sources an order of magnitude under the tolerance.
  double h = 3e-4;
  std::size_t max_coords = 24;  // sampled coordinates per tensor
};

using GradCheckFactory = std::function<GradCheckCase(Rng&)>;

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
};

struct GradCheckOptions {
  std::size_t n_seeds = 20;
  std::uint64_t base_seed = 42;
  double tolerance = 1e-3;
  /// Negative-control hook: skews one analytic gradient per check so the
  /// suite must fail.
  bool corrupt = false;
};

/// Runs one case over n_seeds seeds; returns the worst relative error seen.
double run_gradcheck_case(const GradCheckFactory& factory,
                          const GradCheckOptions& opt);

/// The full suite: every tensor op, every layer, and the tiny end-to-end
/// model in eval and train mode, each exactly once.
std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& opt);

}  // namespace msav
