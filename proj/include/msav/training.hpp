#pragma once

#include <filesystem>
#include <optional>

#include "msav/data.hpp"
#include "msav/metrics.hpp"
#include "msav/model.hpp"

namespace msav {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  double peak_lr = 0.00025;
  std::size_t warmup_steps = 675;
  double decay_rate = 0.999;  // multiplicative decay per step after warmup
  double ema_decay = 0.999;   // teacher decay per training iteration
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  // Alternative strictly geometric warmup ramp (same endpoints); the default
  // ramp is peak * exp(-5 * (1 - step/warmup)^2).
  bool geometric_warmup = false;

  void validate() const;
};

/// Learning rate at a given 0-based optimization step: ramped up to peak_lr
/// over the first warmup_steps steps, then decayed by decay_rate per step.
/// Both branches give exactly peak_lr at step == warmup_steps.
double lr_at(std::size_t step, const TrainConfig& cfg);

/// -mean over the batch of sum_c targets * ln(max(probs, 1e-12)).
/// Rows of probs and targets must each sum to 1.
Tensor categorical_cross_entropy(const Tensor& probs, const Tensor& targets,
                                 Tape* tape);

/// Adam with bias correction over the trainable entries of a parameter set.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(ModelParams& params);

  /// Applies one update from the accumulated gradients.
  void step(double lr, const TrainConfig& cfg);

  std::size_t step_count() const { return t_; }

 private:
  ModelParams* params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::size_t t_ = 0;
};

/// teacher = decay * teacher + (1 - decay) * student, for every parameter
/// and running statistic. Name sets must match exactly.
void ema_update(ModelParams& teacher, const ModelParams& student,
                double decay);

/// Eval-mode forward over a manifest (chunked, manifest order), -> metrics.
MetricReport evaluate_model(Model& model, const Manifest& manifest,
                            FeatureCache& cache);

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;  // optimization steps completed
  double lr = 0.0;
  double train_loss = 0.0;  // mean over the epoch
  double val_macro_ce = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  std::optional<double> best_macro_ce;
  std::size_t best_macro_ce_epoch = 0;
  std::optional<double> best_accuracy;
  std::size_t best_accuracy_epoch = 0;
  std::vector<EpochRecord> history;
  std::size_t total_steps = 0;
  Model teacher;  // final teacher (EMA) model
};

/// Full training loop: file-unique batches, mixup, student update with the
/// warmup/decay schedule, per-step EMA into the teacher, per-epoch teacher
/// evaluation on the validation manifest with independent best-score
/// retention. When out_dir is non-empty, writes train_log.jsonl and the
/// best_ce/, best_acc/, final_student/, final_teacher/ checkpoints.
TrainResult train(const Manifest& train_manifest, const Manifest& val_manifest,
                  Model& student, const TrainConfig& cfg,
                  const MixupConfig& mixup_cfg,
                  const std::filesystem::path& out_dir);

}  // namespace msav
