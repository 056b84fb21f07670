#pragma once

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "msav/rng.hpp"
#include "msav/tensor.hpp"

namespace test_support {

/// Unique scratch directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("msav_test_" + tag + "_" + std::to_string(++counter) + "_" +
             std::to_string(static_cast<unsigned>(::getpid())));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline void fill_uniform(msav::Tensor& t, msav::Rng& rng, double lo = -1.0,
                         double hi = 1.0) {
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
}

inline msav::Tensor random_tensor(msav::Shape shape, msav::Rng& rng,
                                  bool requires_grad = false) {
  msav::Tensor t = msav::Tensor::zeros(std::move(shape), requires_grad);
  fill_uniform(t, rng);
  return t;
}

/// Central finite difference of a scalar functional with respect to one
/// coordinate of `t`, honoring the f32-representable step actually taken.
inline double central_diff(msav::Tensor t, std::size_t idx,
                           const std::function<double()>& eval, double h) {
  auto data = t.data();
  const float saved = data[idx];
  const float plus = static_cast<float>(static_cast<double>(saved) + h);
  const float minus = static_cast<float>(static_cast<double>(saved) - h);
  data[idx] = plus;
  const double l_plus = eval();
  data[idx] = minus;
  const double l_minus = eval();
  data[idx] = saved;
  return (l_plus - l_minus) /
         (static_cast<double>(plus) - static_cast<double>(minus));
}

inline bool bytes_equal(const std::filesystem::path& a,
                        const std::filesystem::path& b) {
  std::ifstream fa(a, std::ios::binary);
  std::ifstream fb(b, std::ios::binary);
  if (!fa || !fb) return false;
  const std::string sa((std::istreambuf_iterator<char>(fa)),
                       std::istreambuf_iterator<char>());
  const std::string sb((std::istreambuf_iterator<char>(fb)),
                       std::istreambuf_iterator<char>());
  return sa == sb;
}

/// Byte-compares two directory trees (same relative files, same contents).
inline bool trees_equal(const std::filesystem::path& a,
                        const std::filesystem::path& b) {
  std::vector<std::filesystem::path> rel_a;
  for (const auto& e : std::filesystem::recursive_directory_iterator(a)) {
    if (e.is_regular_file()) rel_a.push_back(std::filesystem::relative(e, a));
  }
  std::vector<std::filesystem::path> rel_b;
  for (const auto& e : std::filesystem::recursive_directory_iterator(b)) {
    if (e.is_regular_file()) rel_b.push_back(std::filesystem::relative(e, b));
  }
  std::sort(rel_a.begin(), rel_a.end());
  std::sort(rel_b.begin(), rel_b.end());
  if (rel_a != rel_b) return false;
  for (const auto& rel : rel_a) {
    if (!bytes_equal(a / rel, b / rel)) return false;
  }
  return true;
}

inline int run_cli(const std::string& args) {
  const std::string cmd = std::string(MSAV_CLI_PATH) + " " + args;
  const int status = std::system(cmd.c_str());
  if (status < 0) return -1;
  return WEXITSTATUS(status);
}

inline int run_cli_quiet(const std::string& args) {
  return run_cli(args + " > /dev/null 2>&1");
}

}  // namespace test_support
