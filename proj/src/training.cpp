#include "msav/training.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "msav/kernels.hpp"
#include "msav/ops.hpp"

namespace msav {

void TrainConfig::validate() const {
  if (warmup_steps < 1) {
    throw std::invalid_argument("train config: warmup_steps must be >= 1");
  }
  if (batch_size < 1) {
    throw std::invalid_argument("train config: batch_size must be >= 1");
  }
  for (const auto& [name, v] :
       {std::pair<const char*, double>{"peak_lr", peak_lr},
        {"decay_rate", decay_rate},
        {"ema_decay", ema_decay},
        {"adam_beta1", adam_beta1},
        {"adam_beta2", adam_beta2},
        {"adam_eps", adam_eps}}) {
    if (!(v > 0.0 && v < 1.0)) {
      throw std::invalid_argument(std::string("train config: ") + name +
                                  " must lie in (0, 1), got " +
                                  std::to_string(v));
    }
  }
}

double lr_at(std::size_t step, const TrainConfig& cfg) {
  const double peak = cfg.peak_lr;
  if (step <= cfg.warmup_steps) {
    const double x = 1.0 - static_cast<double>(step) /
                               static_cast<double>(cfg.warmup_steps);
    return cfg.geometric_warmup ? peak * std::exp(-5.0 * x)
                                : peak * std::exp(-5.0 * x * x);
  }
  return peak * std::pow(cfg.decay_rate,
                         static_cast<double>(step - cfg.warmup_steps));
}

Tensor categorical_cross_entropy(const Tensor& probs, const Tensor& targets,
                                 Tape* tape) {
  if (probs.rank() != 2 || probs.shape() != targets.shape()) {
    throw std::invalid_argument("cross entropy shape mismatch: probs " +
                                shape_str(probs.shape()) + " vs targets " +
                                shape_str(targets.shape()));
  }
  const std::size_t batch = probs.shape()[0];
  const std::size_t n_classes = probs.shape()[1];
  for (const Tensor* t : {&probs, &targets}) {
    const auto d = t->data();
    for (std::size_t r = 0; r < batch; ++r) {
      double row = 0.0;
      for (std::size_t c = 0; c < n_classes; ++c) {
        row += static_cast<double>(d[r * n_classes + c]);
      }
      if (std::abs(row - 1.0) > 1e-4) {
        throw std::invalid_argument(
            (t == &probs ? std::string("probs") : std::string("targets")) +
            " row " + std::to_string(r) + " sums to " + std::to_string(row) +
            ", expected 1");
      }
    }
  }
  Tensor weighted = mul(targets, log_clamped(probs, 1e-12f, tape), tape);
  return scale(sum_all(weighted, tape),
               -1.0f / static_cast<float>(batch), tape);
}

AdamOptimizer::AdamOptimizer(ModelParams& params) : params_(&params) {
  for (const auto& e : params.entries()) {
    if (e.is_stat) {
      m_.emplace_back();
      v_.emplace_back();
      continue;
    }
    if (!e.tensor.requires_grad()) {
      throw std::invalid_argument("trainable parameter " + e.name +
                                  " has no gradient buffer");
    }
    m_.push_back(Tensor::zeros(e.tensor.shape()));
    v_.push_back(Tensor::zeros(e.tensor.shape()));
  }
}

void AdamOptimizer::step(double lr, const TrainConfig& cfg) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(t_));
  auto& entries = params_->entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].is_stat) continue;
    Tensor& p = entries[i].tensor;
    kernels::adam_update(p.size(), p.data().data(), p.grad().data(),
                         m_[i].data().data(), v_[i].data().data(), lr,
                         cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, bc1,
                         bc2);
  }
}

void ema_update(ModelParams& teacher, const ModelParams& student,
                double decay) {
  auto& t_entries = teacher.entries();
  const auto& s_entries = student.entries();
  if (t_entries.size() != s_entries.size()) {
    throw std::invalid_argument(
        "EMA parameter sets differ in size: " +
        std::to_string(t_entries.size()) + " vs " +
        std::to_string(s_entries.size()));
  }
  for (std::size_t i = 0; i < t_entries.size(); ++i) {
    if (t_entries[i].name != s_entries[i].name) {
      throw std::invalid_argument("EMA parameter name mismatch: " +
                                  t_entries[i].name + " vs " +
                                  s_entries[i].name);
    }
    Tensor& t = t_entries[i].tensor;
    kernels::ema_update(t.size(), t.data().data(),
                        s_entries[i].tensor.data().data(), decay);
  }
}

MetricReport evaluate_model(Model& model, const Manifest& manifest,
                            FeatureCache& cache) {
  if (manifest.records.empty()) {
    throw std::invalid_argument("evaluation manifest is empty");
  }
  constexpr std::size_t kChunk = 64;
  const std::size_t n = manifest.records.size();
  const std::size_t n_classes = model.config().n_classes;
  Tensor all_probs = Tensor::zeros({n, n_classes});
  std::vector<int> labels(n);
  for (std::size_t lo = 0; lo < n; lo += kChunk) {
    const std::size_t hi = std::min(n, lo + kChunk);
    std::vector<const SampleRecord*> chunk;
    chunk.reserve(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) {
      chunk.push_back(&manifest.records[i]);
      labels[i] = manifest.records[i].label;
    }
    Batch batch = load_batch(manifest, chunk, n_classes, cache);
    Tensor probs = model.forward(batch.spectral, batch.paudio, batch.pvisual,
                                 Mode::eval, nullptr, nullptr);
    std::copy_n(probs.data().data(), probs.size(),
                all_probs.data().data() + lo * n_classes);
  }
  return evaluate_metrics(all_probs, labels);
}

TrainResult train(const Manifest& train_manifest, const Manifest& val_manifest,
                  Model& student, const TrainConfig& cfg,
                  const MixupConfig& mixup_cfg,
                  const std::filesystem::path& out_dir) {
  cfg.validate();
  const bool write_outputs = !out_dir.empty();
  if (write_outputs) std::filesystem::create_directories(out_dir);

  std::ofstream log;
  if (write_outputs) {
    log.open(out_dir / "train_log.jsonl");
    if (!log) {
      throw std::runtime_error("cannot write " +
                               (out_dir / "train_log.jsonl").string());
    }
  }

  TrainResult result{.best_macro_ce = std::nullopt,
                     .best_macro_ce_epoch = 0,
                     .best_accuracy = std::nullopt,
                     .best_accuracy_epoch = 0,
                     .history = {},
                     .total_steps = 0,
                     .teacher = student.clone()};
  AdamOptimizer optimizer(student.params());
  Rng rng(derive_seed(cfg.seed, "train"));
  FeatureCache cache;
  const std::size_t n_classes = student.config().n_classes;
  const std::size_t steps_per_epoch =
      std::max<std::size_t>(1, train_manifest.records.size() / cfg.batch_size);

  std::size_t global_step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    double last_lr = 0.0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      auto records = sample_batch(train_manifest, cfg.batch_size, rng);
      Batch batch = load_batch(train_manifest, records, n_classes, cache);
      mixup(batch, mixup_cfg, rng);

      Tape tape;
      Tensor probs = student.forward(batch.spectral, batch.paudio,
                                     batch.pvisual, Mode::train, &rng, &tape);
      Tensor loss = categorical_cross_entropy(probs, batch.targets, &tape);
      tape.backward(loss);
      last_lr = lr_at(global_step, cfg);
      optimizer.step(last_lr, cfg);
      student.params().zero_grads();
      tape.clear();
      ema_update(result.teacher.params(), student.params(), cfg.ema_decay);
      loss_sum += static_cast<double>(loss.item());
      ++global_step;
    }

    const MetricReport report =
        evaluate_model(result.teacher, val_manifest, cache);
    EpochRecord rec{.epoch = epoch,
                    .step = global_step,
                    .lr = last_lr,
                    .train_loss = loss_sum / static_cast<double>(steps_per_epoch),
                    .val_macro_ce = report.macro_ce,
                    .val_accuracy = report.accuracy};
    result.history.push_back(rec);
    if (write_outputs) {
      nlohmann::json line{{"epoch", rec.epoch},
                          {"step", rec.step},
                          {"lr", rec.lr},
                          {"train_loss", rec.train_loss},
                          {"val_macro_ce", rec.val_macro_ce},
                          {"val_accuracy", rec.val_accuracy}};
      log << line.dump() << "\n";
      log.flush();
    }

    if (!result.best_macro_ce || report.macro_ce < *result.best_macro_ce) {
      result.best_macro_ce = report.macro_ce;
      result.best_macro_ce_epoch = epoch;
      if (write_outputs) {
        save_checkpoint(result.teacher, out_dir / "best_ce", global_step,
                        "teacher");
      }
    }
    if (!result.best_accuracy || report.accuracy > *result.best_accuracy) {
      result.best_accuracy = report.accuracy;
      result.best_accuracy_epoch = epoch;
      if (write_outputs) {
        save_checkpoint(result.teacher, out_dir / "best_acc", global_step,
                        "teacher");
      }
    }
  }

  result.total_steps = global_step;
  if (write_outputs) {
    save_checkpoint(student, out_dir / "final_student", global_step,
                    "student");
    save_checkpoint(result.teacher, out_dir / "final_teacher", global_step,
                    "teacher");
  }
  return result;
}

}  // namespace msav
