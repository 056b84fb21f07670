#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "msav/nn.hpp"

namespace msav {

/// Architecture hyperparameters. Defaults are the full-size configuration;
/// tests shrink the dims so gradient checks run in seconds.
struct ModelConfig {
  std::size_t n_classes = 10;
  std::size_t d_model = 96;
  std::size_t n_heads = 3;
  std::size_t n_encoder_layers = 3;
  std::size_t n_decoder_layers = 3;
  std::vector<std::size_t> cnn_channels = {12, 24, 48, 96};
  std::vector<std::pair<std::size_t, std::size_t>> cnn_pools = {
      {3, 4}, {2, 4}, {2, 4}, {1, 2}};
  float cnn_dropout = 0.33f;
  float embed_dropout = 0.33f;
  float transformer_dropout = 0.1f;
  float head_dropout = 0.33f;
  std::size_t spectral_bins = 128;
  std::size_t paudio_dim = 128;
  std::size_t pvisual_dim = 4096;
  bool positional_encoding = false;

  std::size_t time_pool_product() const;
  std::size_t freq_pool_product() const;

  /// Throws std::invalid_argument when the configuration is inconsistent
  /// (e.g. the frequency pools do not collapse spectral_bins to 1).
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Named view over every tensor of a model: trainable parameters plus the
/// batchnorm running statistics. Entries alias the layer tensors.
class ModelParams {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    bool is_stat = false;  // running statistic: updated by EMA, not by Adam
  };

  void add(std::string name, Tensor t, bool is_stat = false);

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  /// Copies tensor values from another set with an identical name list.
  void copy_values_from(const ModelParams& other);

  Tensor* find(const std::string& name);
  const Tensor* find(const std::string& name) const;

  void zero_grads();

 private:
  std::vector<Entry> entries_;
};

/// The full network: CNN over the spectral stream, linear embeddings for all
/// three streams, per-stream transformer encoders, a multi-source serial
/// decoder driven by the pretrained-audio query, and a softmax classifier.
class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);

  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }

  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }

  /// Deep copy with identical parameter values (used for the teacher).
  Model clone() const;

  /// spectral [batch, T, bins] -> sequence [batch, T/time_pool, channels].
  Tensor cnn_forward(const Tensor& spectral, Mode mode, Rng* rng, Tape* tape);

  /// Full forward pass to class probabilities [batch, n_classes].
  Tensor forward(const Tensor& spectral, const Tensor& paudio,
                 const Tensor& pvisual, Mode mode, Rng* rng, Tape* tape);

 private:
  struct CnnBlock {
    nn::Conv2d conv;
    nn::BatchNorm2d bn;
    nn::AvgPool2d pool;
  };

  void register_params();

  ModelConfig config_;
  std::uint64_t seed_ = 0;
  std::vector<CnnBlock> cnn_;
  nn::Linear embed_spectral_;
  nn::Linear embed_paudio_;
  nn::Linear embed_pvisual_;
  std::vector<nn::EncoderLayer> enc_audio_;
  std::vector<nn::EncoderLayer> enc_visual_;
  std::vector<nn::MsDecoderLayer> decoder_;
  nn::Linear head_;
  ModelParams params_;
};

/// Checkpoint directory: params/<name>.ftz plus meta.json holding the model
/// config, training step, seed, and role ("student" or "teacher").
void save_checkpoint(const Model& model, const std::filesystem::path& dir,
                     std::uint64_t step, const std::string& role);

struct Checkpoint {
  Model model;
  std::uint64_t step = 0;
  std::string role;
};

Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace msav
