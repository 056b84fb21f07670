#include "msav/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "json_util.hpp"

namespace msav {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known,
                    const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) {
      throw std::runtime_error("unknown key in " + where + ": " + key);
    }
  }
}

void train_from_json(const json& j, TrainConfig& c) {
  reject_unknown(j,
                 {"epochs", "batch_size", "peak_lr", "warmup_steps",
                  "decay_rate", "ema_decay", "adam_beta1", "adam_beta2",
                  "adam_eps", "geometric_warmup"},
                 "train config");
  if (j.contains("epochs")) c.epochs = j.at("epochs");
  if (j.contains("batch_size")) c.batch_size = j.at("batch_size");
  if (j.contains("peak_lr")) c.peak_lr = j.at("peak_lr");
  if (j.contains("warmup_steps")) c.warmup_steps = j.at("warmup_steps");
  if (j.contains("decay_rate")) c.decay_rate = j.at("decay_rate");
  if (j.contains("ema_decay")) c.ema_decay = j.at("ema_decay");
  if (j.contains("adam_beta1")) c.adam_beta1 = j.at("adam_beta1");
  if (j.contains("adam_beta2")) c.adam_beta2 = j.at("adam_beta2");
  if (j.contains("adam_eps")) c.adam_eps = j.at("adam_eps");
  if (j.contains("geometric_warmup")) c.geometric_warmup = j.at("geometric_warmup");
}

void mixup_from_json(const json& j, MixupConfig& c) {
  reject_unknown(j, {"activation_prob", "beta_shape"}, "mixup config");
  if (j.contains("activation_prob")) c.activation_prob = j.at("activation_prob");
  if (j.contains("beta_shape")) c.beta_shape = j.at("beta_shape");
  if (c.activation_prob < 0.0f || c.activation_prob > 1.0f) {
    throw std::runtime_error("mixup activation_prob must lie in [0, 1]");
  }
  if (c.beta_shape <= 0.0f) {
    throw std::runtime_error("mixup beta_shape must be positive");
  }
}

void mel_from_json(const json& j, dsp::MelConfig& c) {
  reject_unknown(j,
                 {"target_rate", "n_fft", "hop", "n_mels", "fmin", "fmax",
                  "log_floor", "log_base"},
                 "mel config");
  if (j.contains("target_rate")) c.target_rate = j.at("target_rate");
  if (j.contains("n_fft")) c.n_fft = j.at("n_fft");
  if (j.contains("hop")) c.hop = j.at("hop");
  if (j.contains("n_mels")) c.n_mels = j.at("n_mels");
  if (j.contains("fmin")) c.fmin = j.at("fmin");
  if (j.contains("fmax")) c.fmax = j.at("fmax");
  if (j.contains("log_floor")) c.log_floor = j.at("log_floor");
  if (j.contains("log_base")) {
    const std::string base = j.at("log_base");
    if (base == "natural") {
      c.log_base = dsp::LogBase::natural;
    } else if (base == "decibel") {
      c.log_base = dsp::LogBase::decibel;
    } else {
      throw std::runtime_error("mel log_base must be natural or decibel");
    }
  }
  if (c.n_mels == 0) throw std::runtime_error("mel n_mels must be >= 1");
  if ((c.n_fft & (c.n_fft - 1)) != 0 || c.n_fft == 0) {
    throw std::runtime_error("mel n_fft must be a power of two");
  }
  if (c.fmax > static_cast<double>(c.target_rate) / 2.0) {
    throw std::runtime_error("mel fmax exceeds the Nyquist frequency");
  }
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json j = json::parse(json_text);
  reject_unknown(j, {"seed", "model", "train", "mixup", "mel"}, "run config");
  RunConfig cfg;
  if (j.contains("seed")) cfg.seed = j.at("seed");
  if (j.contains("model")) model_config_from_json(j.at("model"), cfg.model);
  if (j.contains("train")) train_from_json(j.at("train"), cfg.train);
  if (j.contains("mixup")) mixup_from_json(j.at("mixup"), cfg.mixup);
  if (j.contains("mel")) mel_from_json(j.at("mel"), cfg.mel);
  cfg.train.seed = cfg.seed;
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) {
    throw std::runtime_error("cannot open config " + path.string());
  }
  return parse_run_config(std::string((std::istreambuf_iterator<char>(is)),
                                      std::istreambuf_iterator<char>()));
}

std::string run_config_to_json(const RunConfig& cfg) {
  json train{{"epochs", cfg.train.epochs},
             {"batch_size", cfg.train.batch_size},
             {"peak_lr", cfg.train.peak_lr},
             {"warmup_steps", cfg.train.warmup_steps},
             {"decay_rate", cfg.train.decay_rate},
             {"ema_decay", cfg.train.ema_decay},
             {"adam_beta1", cfg.train.adam_beta1},
             {"adam_beta2", cfg.train.adam_beta2},
             {"adam_eps", cfg.train.adam_eps},
             {"geometric_warmup", cfg.train.geometric_warmup}};
  json mixup{{"activation_prob", cfg.mixup.activation_prob},
             {"beta_shape", cfg.mixup.beta_shape}};
  json mel{{"target_rate", cfg.mel.target_rate},
           {"n_fft", cfg.mel.n_fft},
           {"hop", cfg.mel.hop},
           {"n_mels", cfg.mel.n_mels},
           {"fmin", cfg.mel.fmin},
           {"fmax", cfg.mel.fmax},
           {"log_floor", cfg.mel.log_floor},
           {"log_base",
            cfg.mel.log_base == dsp::LogBase::natural ? "natural" : "decibel"}};
  json j{{"seed", cfg.seed},
         {"model", model_config_to_json(cfg.model)},
         {"train", train},
         {"mixup", mixup},
         {"mel", mel}};
  return j.dump(2);
}

}  // namespace msav
