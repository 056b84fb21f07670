#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "msav/rng.hpp"
#include "msav/tensor.hpp"

namespace msav {

struct SampleRecord {
  std::string id;
  std::string parent_file;
  int label = 0;
  std::string spectral_path;
  std::string paudio_path;
  std::string pvisual_path;
};

/// One data split. Feature paths are stored relative to the manifest file
/// and checked for existence at load time; ids must be unique.
struct Manifest {
  std::vector<SampleRecord> records;
  std::string split;  // "train" or "val"
  std::vector<std::string> class_names;
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& rel) const {
    return base_dir / rel;
  }
  std::size_t distinct_parent_count() const;
};

/// Scene labels of the ten-class task, in label order.
const std::vector<std::string>& default_class_names();

Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

struct MixupConfig {
  float activation_prob = 0.5f;
  float beta_shape = 0.2f;
};

/// Draws `batch_size` records with pairwise-distinct parent files: a random
/// subset of parents, then a uniform segment of each chosen parent.
std::vector<const SampleRecord*> sample_batch(const Manifest& manifest,
                                              std::size_t batch_size,
                                              Rng& rng);

/// Beta(a, b) via the ratio of Marsaglia-Tsang gamma variates
/// (with the boost U^(1/a) for shape < 1).
double beta_sample(double a, double b, Rng& rng);

/// An assembled training batch. Targets are one-hot rows (soft after mixup).
struct Batch {
  Tensor spectral;  // [B, T, bins]
  Tensor paudio;    // [B, 1, paudio_dim]
  Tensor pvisual;   // [B, Lv, pvisual_dim]
  Tensor targets;   // [B, n_classes]
};

/// With probability cfg.activation_prob: draws one lambda ~ Beta(s, s) and a
/// within-batch permutation, then mixes all three input streams and the
/// targets identically: x' = lambda * x + (1 - lambda) * x[perm].
/// Targets must be one-hot on entry.
void mixup(Batch& batch, const MixupConfig& cfg, Rng& rng);

/// Deterministic core of mixup: applies one coefficient and permutation to
/// all three streams and the targets.
void apply_mixup(Batch& batch, float lambda,
                 const std::vector<std::size_t>& perm);

/// In-memory FTZ tensor cache keyed by absolute path.
class FeatureCache {
 public:
  const Tensor& get(const std::filesystem::path& path);

 private:
  std::map<std::string, Tensor> cache_;
};

/// Stacks records into batch tensors; all records must agree on the feature
/// shapes. Targets are one-hot over `n_classes`.
Batch load_batch(const Manifest& manifest,
                 const std::vector<const SampleRecord*>& records,
                 std::size_t n_classes, FeatureCache& cache);

/// Writes a deterministic synthetic dataset: per class, one anchor tensor
/// per stream; every sample is anchor + Gaussian noise. Shapes are
/// [60, 128] spectral, [1, 128] pretrained-audio, [30, 4096] visual.
Manifest synth_dataset(const std::filesystem::path& out_dir,
                       std::size_t n_classes, std::size_t files_per_class,
                       std::size_t segments_per_file, std::uint64_t seed);

}  // namespace msav
