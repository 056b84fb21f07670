#include <set>

#include <doctest.h>

#include "msav/gradcheck.hpp"

using namespace msav;

TEST_CASE("gradient suite passes for every op, layer and the tiny model") {
  GradCheckOptions opt;
  opt.n_seeds = 3;  // the acceptance suite runs the full 20
  const auto results = run_gradcheck_suite(opt);
  REQUIRE_FALSE(results.empty());
  for (const auto& r : results) {
    INFO(r.name, " max rel err ", r.max_rel_err);
    CHECK(r.pass);
    CHECK(r.max_rel_err < 1e-3);
  }
}

TEST_CASE("suite covers each op and layer exactly once") {
  GradCheckOptions opt;
  opt.n_seeds = 1;
  const auto results = run_gradcheck_suite(opt);
  std::set<std::string> names;
  for (const auto& r : results) {
    CHECK(names.insert(r.name).second);  // unique
  }
  for (const char* expected :
       {"op.add", "op.mul", "op.matmul", "op.softmax", "layer.linear",
        "layer.conv2d", "layer.batchnorm_train", "layer.avgpool",
        "layer.layernorm", "layer.attention", "layer.encoder",
        "layer.ms_decoder", "layer.cnn_block", "model.tiny_e2e_eval",
        "model.tiny_e2e_train"}) {
    CHECK(names.contains(expected));
  }
}

TEST_CASE("a corrupted backward rule makes the suite fail") {
  GradCheckOptions opt;
  opt.n_seeds = 1;
  opt.corrupt = true;
  const auto results = run_gradcheck_suite(opt);
  bool any_failed = false;
  for (const auto& r : results) any_failed = any_failed || !r.pass;
  CHECK(any_failed);
}
