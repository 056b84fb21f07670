#include "msav/model.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "msav/ftz.hpp"
#include "json_util.hpp"

namespace msav {

using nlohmann::json;

std::size_t ModelConfig::time_pool_product() const {
  std::size_t p = 1;
  for (const auto& [kt, kf] : cnn_pools) p *= kt;
  return p;
}

std::size_t ModelConfig::freq_pool_product() const {
  std::size_t p = 1;
  for (const auto& [kt, kf] : cnn_pools) p *= kf;
  return p;
}

void ModelConfig::validate() const {
  if (n_classes < 2) {
    throw std::invalid_argument("model config: n_classes must be >= 2");
  }
  if (n_heads == 0 || d_model % n_heads != 0) {
    throw std::invalid_argument("model config: d_model " +
                                std::to_string(d_model) +
                                " not divisible by n_heads " +
                                std::to_string(n_heads));
  }
  if (cnn_channels.empty() || cnn_channels.size() != cnn_pools.size()) {
    throw std::invalid_argument(
        "model config: cnn_channels and cnn_pools must be non-empty and of "
        "equal length");
  }
  if (freq_pool_product() != spectral_bins) {
    throw std::invalid_argument(
        "model config: frequency pools must collapse spectral_bins to 1 (" +
        std::to_string(spectral_bins) + " bins vs pool product " +
        std::to_string(freq_pool_product()) + ")");
  }
}

void ModelParams::add(std::string name, Tensor t, bool is_stat) {
  entries_.push_back(Entry{std::move(name), std::move(t), is_stat});
}

Tensor* ModelParams::find(const std::string& name) {
  for (Entry& e : entries_) {
    if (e.name == name) return &e.tensor;
  }
  return nullptr;
}

const Tensor* ModelParams::find(const std::string& name) const {
  for (const Entry& e : entries_) {
    if (e.name == name) return &e.tensor;
  }
  return nullptr;
}

void ModelParams::zero_grads() {
  for (Entry& e : entries_) {
    if (!e.is_stat) e.tensor.zero_grad();
  }
}

void ModelParams::copy_values_from(const ModelParams& other) {
  if (entries_.size() != other.entries_.size()) {
    throw std::invalid_argument("parameter sets differ in size: " +
                                std::to_string(entries_.size()) + " vs " +
                                std::to_string(other.entries_.size()));
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name) {
      throw std::invalid_argument("parameter name mismatch: " +
                                  entries_[i].name + " vs " +
                                  other.entries_[i].name);
    }
    entries_[i].tensor.copy_from(other.entries_[i].tensor);
  }
}

Model::Model(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)), seed_(seed) {
  config_.validate();
  Rng rng(seed_);
  std::size_t in_ch = 1;
  for (std::size_t b = 0; b < config_.cnn_channels.size(); ++b) {
    CnnBlock block;
    block.conv = nn::Conv2d::init(in_ch, config_.cnn_channels[b], rng);
    block.bn = nn::BatchNorm2d::init(config_.cnn_channels[b]);
    block.pool =
        nn::AvgPool2d{config_.cnn_pools[b].first, config_.cnn_pools[b].second};
    cnn_.push_back(std::move(block));
    in_ch = config_.cnn_channels[b];
  }
  embed_spectral_ =
      nn::Linear::init(config_.cnn_channels.back(), config_.d_model, rng);
  embed_paudio_ = nn::Linear::init(config_.paudio_dim, config_.d_model, rng);
  embed_pvisual_ = nn::Linear::init(config_.pvisual_dim, config_.d_model, rng);
  for (std::size_t l = 0; l < config_.n_encoder_layers; ++l) {
    enc_audio_.push_back(nn::EncoderLayer::init(
        config_.d_model, config_.n_heads, config_.transformer_dropout, rng));
  }
  for (std::size_t l = 0; l < config_.n_encoder_layers; ++l) {
    enc_visual_.push_back(nn::EncoderLayer::init(
        config_.d_model, config_.n_heads, config_.transformer_dropout, rng));
  }
  for (std::size_t l = 0; l < config_.n_decoder_layers; ++l) {
    decoder_.push_back(nn::MsDecoderLayer::init(
        config_.d_model, config_.n_heads, config_.transformer_dropout, rng));
  }
  head_ = nn::Linear::init(config_.d_model, config_.n_classes, rng);
  register_params();
}

namespace {

void add_linear(ModelParams& p, const std::string& prefix,
                const nn::Linear& l) {
  p.add(prefix + ".weight", l.weight);
  p.add(prefix + ".bias", l.bias);
}

void add_attention(ModelParams& p, const std::string& prefix,
                   const nn::MultiHeadAttention& a) {
  add_linear(p, prefix + ".wq", a.wq);
  add_linear(p, prefix + ".wk", a.wk);
  add_linear(p, prefix + ".wv", a.wv);
  add_linear(p, prefix + ".wo", a.wo);
}

void add_layernorm(ModelParams& p, const std::string& prefix,
                   const nn::LayerNorm& ln) {
  p.add(prefix + ".gamma", ln.gamma);
  p.add(prefix + ".beta", ln.beta);
}

void add_ff(ModelParams& p, const std::string& prefix,
            const nn::FeedForward& f) {
  add_linear(p, prefix + ".lin1", f.lin1);
  add_linear(p, prefix + ".lin2", f.lin2);
}

void add_encoder(ModelParams& p, const std::string& prefix,
                 const nn::EncoderLayer& e) {
  add_attention(p, prefix + ".self_attn", e.self_attn);
  add_ff(p, prefix + ".ff", e.ff);
  add_layernorm(p, prefix + ".ln1", e.ln1);
  add_layernorm(p, prefix + ".ln2", e.ln2);
}

}  // namespace

void Model::register_params() {
  for (std::size_t b = 0; b < cnn_.size(); ++b) {
    const std::string prefix = "cnn.block" + std::to_string(b);
    params_.add(prefix + ".conv.weight", cnn_[b].conv.weight);
    params_.add(prefix + ".conv.bias", cnn_[b].conv.bias);
    params_.add(prefix + ".bn.gamma", cnn_[b].bn.gamma);
    params_.add(prefix + ".bn.beta", cnn_[b].bn.beta);
    params_.add(prefix + ".bn.running_mean", cnn_[b].bn.running_mean, true);
    params_.add(prefix + ".bn.running_var", cnn_[b].bn.running_var, true);
  }
  add_linear(params_, "embed.spectral", embed_spectral_);
  add_linear(params_, "embed.paudio", embed_paudio_);
  add_linear(params_, "embed.pvisual", embed_pvisual_);
  for (std::size_t l = 0; l < enc_audio_.size(); ++l) {
    add_encoder(params_, "enc_audio.layer" + std::to_string(l), enc_audio_[l]);
  }
  for (std::size_t l = 0; l < enc_visual_.size(); ++l) {
    add_encoder(params_, "enc_visual.layer" + std::to_string(l),
                enc_visual_[l]);
  }
  for (std::size_t l = 0; l < decoder_.size(); ++l) {
    const std::string prefix = "dec.layer" + std::to_string(l);
    add_attention(params_, prefix + ".self_attn", decoder_[l].self_attn);
    add_attention(params_, prefix + ".cross_a", decoder_[l].cross_a);
    add_attention(params_, prefix + ".cross_b", decoder_[l].cross_b);
    add_ff(params_, prefix + ".ff", decoder_[l].ff);
    add_layernorm(params_, prefix + ".ln1", decoder_[l].ln1);
    add_layernorm(params_, prefix + ".ln2", decoder_[l].ln2);
    add_layernorm(params_, prefix + ".ln3", decoder_[l].ln3);
    add_layernorm(params_, prefix + ".ln4", decoder_[l].ln4);
  }
  add_linear(params_, "head", head_);
}

Model Model::clone() const {
  Model copy(config_, seed_);
  copy.params_.copy_values_from(params_);
  return copy;
}

Tensor Model::cnn_forward(const Tensor& spectral, Mode mode, Rng* rng,
                          Tape* tape) {
  if (spectral.rank() != 3 || spectral.shape()[2] != config_.spectral_bins) {
    throw std::invalid_argument(
        "spectral stream must be [batch, T, " +
        std::to_string(config_.spectral_bins) + "], got " +
        shape_str(spectral.shape()));
  }
  const std::size_t batch = spectral.shape()[0];
  const std::size_t t = spectral.shape()[1];
  const std::size_t tp = config_.time_pool_product();
  if (t % tp != 0) {
    throw std::invalid_argument(
        "spectral stream frame count " + std::to_string(t) +
        " not divisible by the CNN time-pool product " + std::to_string(tp));
  }
  Tensor x = reshape(spectral, {batch, 1, t, config_.spectral_bins}, tape);
  for (CnnBlock& block : cnn_) {
    x = block.conv.forward(x, tape);
    x = block.bn.forward(x, mode, tape);
    x = relu(x, tape);
    x = dropout(x, config_.cnn_dropout, mode, rng, tape);
    x = block.pool.forward(x, tape);
  }
  // frequency axis is now 1; make time the sequence axis
  const std::size_t ch = config_.cnn_channels.back();
  x = reshape(x, {batch, ch, t / tp}, tape);
  return transpose_last2(x, tape);
}

namespace {

/// Applies a linear map row-wise over a [batch, L, in] tensor.
Tensor project_sequences(const nn::Linear& lin, const Tensor& x, Tape* tape) {
  const std::size_t batch = x.shape()[0];
  const std::size_t len = x.shape()[1];
  const std::size_t in = x.shape()[2];
  const std::size_t out = lin.bias.size();
  Tensor flat = reshape(x, {batch * len, in}, tape);
  return reshape(lin.forward(flat, tape), {batch, len, out}, tape);
}

}  // namespace

Tensor Model::forward(const Tensor& spectral, const Tensor& paudio,
                      const Tensor& pvisual, Mode mode, Rng* rng, Tape* tape) {
  if (spectral.rank() != 3) {
    throw std::invalid_argument("spectral stream must be [batch, T, bins], got " +
                                shape_str(spectral.shape()));
  }
  const std::size_t batch = spectral.shape()[0];
  if (paudio.rank() != 3 || paudio.shape()[1] != 1 ||
      paudio.shape()[2] != config_.paudio_dim) {
    throw std::invalid_argument("paudio stream must be [batch, 1, " +
                                std::to_string(config_.paudio_dim) +
                                "], got " + shape_str(paudio.shape()));
  }
  if (pvisual.rank() != 3 || pvisual.shape()[2] != config_.pvisual_dim) {
    throw std::invalid_argument("pvisual stream must be [batch, Lv, " +
                                std::to_string(config_.pvisual_dim) +
                                "], got " + shape_str(pvisual.shape()));
  }
  if (paudio.shape()[0] != batch || pvisual.shape()[0] != batch) {
    throw std::invalid_argument(
        "stream batch sizes differ: spectral " + shape_str(spectral.shape()) +
        ", paudio " + shape_str(paudio.shape()) + ", pvisual " +
        shape_str(pvisual.shape()));
  }

  Tensor conv_seq = cnn_forward(spectral, mode, rng, tape);

  Tensor emb_audio = project_sequences(embed_spectral_, conv_seq, tape);
  emb_audio = dropout(emb_audio, config_.embed_dropout, mode, rng, tape);
  Tensor emb_query = project_sequences(embed_paudio_, paudio, tape);
  emb_query = dropout(emb_query, config_.embed_dropout, mode, rng, tape);
  Tensor emb_visual = project_sequences(embed_pvisual_, pvisual, tape);
  emb_visual = dropout(emb_visual, config_.embed_dropout, mode, rng, tape);

  if (config_.positional_encoding) {
    emb_audio = add(emb_audio,
                    nn::sinusoidal_encoding(emb_audio.shape()[1],
                                            config_.d_model),
                    tape);
    emb_visual = add(emb_visual,
                     nn::sinusoidal_encoding(emb_visual.shape()[1],
                                             config_.d_model),
                     tape);
  }

  std::vector<Tensor> logits_rows;
  logits_rows.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    Tensor mem_a = select_front(emb_audio, b, tape);
    for (nn::EncoderLayer& layer : enc_audio_) {
      mem_a = layer.forward(mem_a, mode, rng, tape);
    }
    Tensor mem_b = select_front(emb_visual, b, tape);
    for (nn::EncoderLayer& layer : enc_visual_) {
      mem_b = layer.forward(mem_b, mode, rng, tape);
    }
    Tensor q = select_front(emb_query, b, tape);
    for (nn::MsDecoderLayer& layer : decoder_) {
      q = layer.forward(q, mem_a, mem_b, mode, rng, tape);
    }
    q = dropout(q, config_.head_dropout, mode, rng, tape);
    logits_rows.push_back(head_.forward(q, tape));  // [1, n_classes]
  }
  Tensor logits = reshape(stack_front(logits_rows, tape),
                          {batch, config_.n_classes}, tape);
  return softmax(logits, 1, tape);
}

json model_config_to_json(const ModelConfig& c) {
  json pools = json::array();
  for (const auto& [kt, kf] : c.cnn_pools) pools.push_back({kt, kf});
  return json{{"n_classes", c.n_classes},
              {"d_model", c.d_model},
              {"n_heads", c.n_heads},
              {"n_encoder_layers", c.n_encoder_layers},
              {"n_decoder_layers", c.n_decoder_layers},
              {"cnn_channels", c.cnn_channels},
              {"cnn_pools", pools},
              {"cnn_dropout", c.cnn_dropout},
              {"embed_dropout", c.embed_dropout},
              {"transformer_dropout", c.transformer_dropout},
              {"head_dropout", c.head_dropout},
              {"spectral_bins", c.spectral_bins},
              {"paudio_dim", c.paudio_dim},
              {"pvisual_dim", c.pvisual_dim},
              {"positional_encoding", c.positional_encoding}};
}

void save_checkpoint(const Model& model, const std::filesystem::path& dir,
                     std::uint64_t step, const std::string& role) {
  std::filesystem::create_directories(dir / "params");
  for (const auto& entry : model.params().entries()) {
    write_ftz(dir / "params" / (entry.name + ".ftz"), entry.tensor);
  }
  json meta{{"config", model_config_to_json(model.config())},
            {"step", step},
            {"seed", model.seed()},
            {"role", role}};
  std::ofstream os(dir / "meta.json");
  if (!os) {
    throw std::runtime_error("cannot write " + (dir / "meta.json").string());
  }
  os << meta.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream is(dir / "meta.json");
  if (!is) {
    throw std::runtime_error("cannot open checkpoint metadata " +
                             (dir / "meta.json").string());
  }
  json meta = json::parse(is);
  for (const auto& [key, _] : meta.items()) {
    if (key != "config" && key != "step" && key != "seed" && key != "role") {
      throw std::runtime_error("unknown key in checkpoint metadata: " + key);
    }
  }
  ModelConfig config;
  model_config_from_json(meta.at("config"), config);

  Checkpoint ckpt{Model(config, meta.at("seed").get<std::uint64_t>()),
                  meta.at("step").get<std::uint64_t>(),
                  meta.at("role").get<std::string>()};

  std::set<std::string> expected;
  for (ModelParams::Entry& entry : ckpt.model.params().entries()) {
    expected.insert(entry.name);
    const auto path = dir / "params" / (entry.name + ".ftz");
    if (!std::filesystem::exists(path)) {
      throw std::runtime_error("checkpoint missing tensor " + entry.name);
    }
    Tensor loaded = read_ftz(path);
    if (loaded.shape() != entry.tensor.shape()) {
      throw std::runtime_error(
          "checkpoint tensor " + entry.name + " has shape " +
          shape_str(loaded.shape()) + ", expected " +
          shape_str(entry.tensor.shape()));
    }
    entry.tensor.copy_from(loaded);
  }
  for (const auto& file : std::filesystem::directory_iterator(dir / "params")) {
    const std::string stem = file.path().stem().string();
    if (file.path().extension() == ".ftz" && !expected.contains(stem)) {
      throw std::runtime_error("unexpected tensor file in checkpoint: " +
                               file.path().filename().string());
    }
  }
  return ckpt;
}

void model_config_from_json(const json& j, ModelConfig& c) {
  static const std::set<std::string> known = {
      "n_classes",       "d_model",          "n_heads",
      "n_encoder_layers", "n_decoder_layers", "cnn_channels",
      "cnn_pools",       "cnn_dropout",      "embed_dropout",
      "transformer_dropout", "head_dropout", "spectral_bins",
      "paudio_dim",      "pvisual_dim",      "positional_encoding"};
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) {
      throw std::runtime_error("unknown key in model config: " + key);
    }
  }
  if (j.contains("n_classes")) c.n_classes = j.at("n_classes");
  if (j.contains("d_model")) c.d_model = j.at("d_model");
  if (j.contains("n_heads")) c.n_heads = j.at("n_heads");
  if (j.contains("n_encoder_layers")) c.n_encoder_layers = j.at("n_encoder_layers");
  if (j.contains("n_decoder_layers")) c.n_decoder_layers = j.at("n_decoder_layers");
  if (j.contains("cnn_channels")) {
    c.cnn_channels = j.at("cnn_channels").get<std::vector<std::size_t>>();
  }
  if (j.contains("cnn_pools")) {
    c.cnn_pools.clear();
    for (const auto& p : j.at("cnn_pools")) {
      if (!p.is_array() || p.size() != 2) {
        throw std::runtime_error("cnn_pools entries must be [kt, kf] pairs");
      }
      c.cnn_pools.emplace_back(p[0].get<std::size_t>(),
                               p[1].get<std::size_t>());
    }
  }
  if (j.contains("cnn_dropout")) c.cnn_dropout = j.at("cnn_dropout");
  if (j.contains("embed_dropout")) c.embed_dropout = j.at("embed_dropout");
  if (j.contains("transformer_dropout")) {
    c.transformer_dropout = j.at("transformer_dropout");
  }
  if (j.contains("head_dropout")) c.head_dropout = j.at("head_dropout");
  if (j.contains("spectral_bins")) c.spectral_bins = j.at("spectral_bins");
  if (j.contains("paudio_dim")) c.paudio_dim = j.at("paudio_dim");
  if (j.contains("pvisual_dim")) c.pvisual_dim = j.at("pvisual_dim");
  if (j.contains("positional_encoding")) {
    c.positional_encoding = j.at("positional_encoding");
  }
}

}  // namespace msav
