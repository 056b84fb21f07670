// Command-line entry point: synthetic data generation, WAV feature
// extraction, training, evaluation, and the gradient-check suite.
// Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "msav/config.hpp"
#include "msav/data.hpp"
#include "msav/dsp.hpp"
#include "msav/ftz.hpp"
#include "msav/gradcheck.hpp"
#include "msav/metrics.hpp"
#include "msav/model.hpp"
#include "msav/training.hpp"
#include "msav/wav.hpp"

namespace {

namespace fs = std::filesystem;
using msav::RunConfig;

enum class LogLevel { error = 0, info = 1, debug = 2 };

LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("MSAV_LOG_LEVEL");
    if (env == nullptr) return LogLevel::info;
    const std::string v = env;
    if (v == "error") return LogLevel::error;
    if (v == "debug") return LogLevel::debug;
    if (v == "info") return LogLevel::info;
    std::fprintf(stderr, "warning: unknown MSAV_LOG_LEVEL '%s', using info\n",
                 v.c_str());
    return LogLevel::info;
  }();
  return level;
}

void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::info) {
    std::fprintf(stderr, "[info] %s\n", msg.c_str());
  }
}

void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::debug) {
    std::fprintf(stderr, "[debug] %s\n", msg.c_str());
  }
}

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

RunConfig load_config_or_default(const std::string& path) {
  if (path.empty()) return RunConfig{};
  try {
    return msav::load_run_config(path);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

msav::Manifest load_manifest_checked(const std::string& path) {
  try {
    return msav::load_manifest(path);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

// ---- synth -------------------------------------------------------------------

int cmd_synth(const std::string& out, std::size_t classes,
              std::size_t files_per_class, std::size_t segments,
              std::uint64_t seed) {
  if (classes == 0 || files_per_class == 0 || segments == 0) {
    throw UsageError("synth: counts must be positive");
  }
  const msav::Manifest m =
      msav::synth_dataset(out, classes, files_per_class, segments, seed);
  log_info("synth: wrote " + std::to_string(m.records.size()) + " records to " +
           out);
  return 0;
}

// ---- featurize ---------------------------------------------------------------

msav::Tensor standin_tensor(msav::Shape shape, std::uint64_t seed) {
  msav::Tensor t = msav::Tensor::zeros(std::move(shape));
  msav::Rng rng(seed);
  for (float& v : t.data()) v = static_cast<float>(rng.normal());
  return t;
}

int cmd_featurize(const std::string& wav_dir, const std::string& out_dir,
                  const std::string& stats_mode, std::string stats_file,
                  const std::string& pretrained_dir,
                  const std::string& config_path, std::uint64_t seed) {
  const RunConfig cfg = load_config_or_default(config_path);
  if (stats_mode != "fit" && stats_mode != "in") {
    throw UsageError("--stats must be 'fit' or 'in'");
  }
  if (!fs::is_directory(wav_dir)) {
    throw UsageError("--wav-dir is not a directory: " + wav_dir);
  }
  fs::create_directories(fs::path(out_dir) / "features");
  if (stats_file.empty()) stats_file = (fs::path(out_dir) / "stats.ftz").string();

  std::vector<fs::path> wavs;
  for (const auto& entry : fs::directory_iterator(wav_dir)) {
    if (entry.path().extension() == ".wav") wavs.push_back(entry.path());
  }
  std::sort(wavs.begin(), wavs.end());
  if (wavs.empty()) {
    throw UsageError("no .wav files in " + wav_dir);
  }

  const auto& classes = msav::default_class_names();
  auto class_index = [&](const std::string& stem) {
    const auto dash = stem.find('-');
    const std::string scene = stem.substr(0, dash);
    for (std::size_t i = 0; i < classes.size(); ++i) {
      if (classes[i] == scene) return static_cast<int>(i);
    }
    throw UsageError("unknown scene name '" + scene + "' in file " + stem +
                     ".wav (expected <scene>-<fileid>.wav)");
  };

  msav::dsp::BinStats stats;
  struct Pending {
    std::string parent;
    int label;
    std::vector<msav::Tensor> segments;
  };
  std::vector<Pending> pending;

  for (const fs::path& wav : wavs) {
    const std::string stem = wav.stem().string();
    Pending p;
    p.parent = stem;
    p.label = class_index(stem);
    msav::AudioClip clip = msav::read_wav(wav);
    clip = msav::dsp::peak_normalize(std::move(clip));
    clip = msav::dsp::resample_linear(clip, cfg.mel.target_rate);
    for (const msav::AudioClip& seg : msav::dsp::segment_clip(clip, 10)) {
      p.segments.push_back(msav::dsp::log_mel(seg, cfg.mel));
    }
    log_debug("featurize: " + stem + " -> " +
              std::to_string(p.segments.size()) + " segments");
    pending.push_back(std::move(p));
  }

  if (stats_mode == "fit") {
    std::vector<msav::Tensor> all;
    for (const Pending& p : pending) {
      all.insert(all.end(), p.segments.begin(), p.segments.end());
    }
    stats = msav::dsp::fit_bin_stats(all);
    msav::dsp::save_bin_stats(stats, stats_file);
    log_info("featurize: fitted bin stats over " + std::to_string(all.size()) +
             " spectrograms -> " + stats_file);
  } else {
    if (!fs::exists(stats_file)) {
      throw UsageError("--stats in: missing stats file " + stats_file);
    }
    stats = msav::dsp::load_bin_stats(stats_file);
  }

  msav::Manifest manifest;
  manifest.split = stats_mode == "fit" ? "train" : "val";
  manifest.class_names = classes;
  manifest.base_dir = out_dir;
  for (const Pending& p : pending) {
    for (std::size_t s = 0; s < p.segments.size(); ++s) {
      msav::SampleRecord rec;
      rec.id = p.parent + "-s" + std::to_string(s);
      rec.parent_file = p.parent;
      rec.label = p.label;
      rec.spectral_path = "features/" + rec.id + ".spec.ftz";
      rec.paudio_path = "features/" + rec.id + ".pa.ftz";
      rec.pvisual_path = "features/" + rec.id + ".pv.ftz";
      msav::write_ftz(fs::path(out_dir) / rec.spectral_path,
                      msav::dsp::standardize(p.segments[s], stats));
      // pretrained features: ingest when provided, otherwise deterministic
      // stand-ins of the right shapes
      const fs::path pa_src =
          pretrained_dir.empty() ? fs::path()
                                 : fs::path(pretrained_dir) / (rec.id + ".pa.ftz");
      const fs::path pv_src =
          pretrained_dir.empty() ? fs::path()
                                 : fs::path(pretrained_dir) / (rec.id + ".pv.ftz");
      if (!pretrained_dir.empty() && fs::exists(pa_src)) {
        msav::write_ftz(fs::path(out_dir) / rec.paudio_path,
                        msav::read_ftz(pa_src));
      } else {
        msav::write_ftz(
            fs::path(out_dir) / rec.paudio_path,
            standin_tensor({1, 128}, msav::derive_seed(seed, rec.id + ".pa")));
      }
      if (!pretrained_dir.empty() && fs::exists(pv_src)) {
        msav::write_ftz(fs::path(out_dir) / rec.pvisual_path,
                        msav::read_ftz(pv_src));
      } else {
        msav::write_ftz(
            fs::path(out_dir) / rec.pvisual_path,
            standin_tensor({30, 4096},
                           msav::derive_seed(seed, rec.id + ".pv")));
      }
      manifest.records.push_back(std::move(rec));
    }
  }
  msav::save_manifest(manifest, fs::path(out_dir) / "manifest.json");
  log_info("featurize: wrote " + std::to_string(manifest.records.size()) +
           " records to " + out_dir);
  return 0;
}

// ---- train -------------------------------------------------------------------

int cmd_train(const std::string& train_manifest_path,
              const std::string& val_manifest_path,
              const std::string& out_dir, const std::string& config_path,
              std::optional<std::uint64_t> seed_flag,
              std::optional<std::size_t> epochs_flag,
              std::optional<std::size_t> batch_flag) {
  RunConfig cfg = load_config_or_default(config_path);
  if (seed_flag) {
    cfg.seed = *seed_flag;
    cfg.train.seed = *seed_flag;
  }
  if (epochs_flag) cfg.train.epochs = *epochs_flag;
  if (batch_flag) cfg.train.batch_size = *batch_flag;

  const msav::Manifest train_m = load_manifest_checked(train_manifest_path);
  const msav::Manifest val_m = load_manifest_checked(val_manifest_path);
  if (train_m.class_names.size() != cfg.model.n_classes) {
    throw UsageError("manifest has " +
                     std::to_string(train_m.class_names.size()) +
                     " classes but the model expects " +
                     std::to_string(cfg.model.n_classes));
  }
  if (train_m.distinct_parent_count() < cfg.train.batch_size) {
    throw UsageError(
        "train manifest has only " +
        std::to_string(train_m.distinct_parent_count()) +
        " distinct parent files; file-unique batches of " +
        std::to_string(cfg.train.batch_size) + " are impossible");
  }

  msav::Model student(cfg.model, msav::derive_seed(cfg.seed, "model"));
  log_info("train: " + std::to_string(train_m.records.size()) + " records, " +
           std::to_string(cfg.train.epochs) + " epochs, batch " +
           std::to_string(cfg.train.batch_size));
  const msav::TrainResult result = msav::train(
      train_m, val_m, student, cfg.train, cfg.mixup, out_dir);

  nlohmann::json report;
  report["epochs"] = cfg.train.epochs;
  report["total_steps"] = result.total_steps;
  report["seed"] = cfg.seed;
  if (result.best_macro_ce) {
    report["best_macro_ce"] = *result.best_macro_ce;
    report["best_macro_ce_epoch"] = result.best_macro_ce_epoch;
    report["best_accuracy"] = *result.best_accuracy;
    report["best_accuracy_epoch"] = result.best_accuracy_epoch;
    report["final_val_macro_ce"] = result.history.back().val_macro_ce;
    report["final_val_accuracy"] = result.history.back().val_accuracy;
  } else {
    report["best_macro_ce"] = nullptr;
    report["best_macro_ce_epoch"] = nullptr;
    report["best_accuracy"] = nullptr;
    report["best_accuracy_epoch"] = nullptr;
    report["final_val_macro_ce"] = nullptr;
    report["final_val_accuracy"] = nullptr;
  }
  std::ofstream os(fs::path(out_dir) / "report.json");
  if (!os) {
    throw std::runtime_error("cannot write report.json under " + out_dir);
  }
  os << report.dump(2) << "\n";
  std::cout << report.dump(2) << "\n";
  return 0;
}

// ---- eval --------------------------------------------------------------------

int cmd_eval(const std::string& manifest_path, const std::string& checkpoint,
             const std::string& out_path) {
  msav::Manifest manifest = load_manifest_checked(manifest_path);
  if (manifest.records.empty()) {
    throw UsageError("manifest " + manifest_path + " has no records");
  }
  msav::Checkpoint ckpt = [&] {
    try {
      return msav::load_checkpoint(checkpoint);
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
  }();
  log_info("eval: " + std::to_string(manifest.records.size()) + " records, " +
           ckpt.role + " checkpoint at step " + std::to_string(ckpt.step));
  msav::FeatureCache cache;
  const msav::MetricReport report =
      msav::evaluate_model(ckpt.model, manifest, cache);
  const std::string text = report.to_json_string();
  std::cout << text << "\n";
  if (!out_path.empty()) {
    std::ofstream os(out_path);
    if (!os) throw std::runtime_error("cannot write " + out_path);
    os << text << "\n";
  }
  return 0;
}

// ---- gradcheck ----------------------------------------------------------------

int cmd_gradcheck(std::size_t n_seeds, std::uint64_t seed, bool corrupt) {
  msav::GradCheckOptions opt;
  opt.n_seeds = n_seeds;
  opt.base_seed = seed;
  opt.corrupt = corrupt;
  const auto results = msav::run_gradcheck_suite(opt);
  bool all_pass = true;
  std::printf("%-28s %14s  %s\n", "check", "max rel err", "status");
  for (const auto& r : results) {
    std::printf("%-28s %14.3e  %s\n", r.name.c_str(), r.max_rel_err,
                r.pass ? "pass" : "FAIL");
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-source audiovisual scene classifier"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  std::string synth_out;
  std::size_t synth_classes = 10;
  std::size_t synth_files = 2;
  std::size_t synth_segments = 10;
  std::uint64_t synth_seed = 0;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--classes", synth_classes, "Number of classes");
  synth->add_option("--files-per-class", synth_files, "Files per class");
  synth->add_option("--segments-per-file", synth_segments, "Segments per file");
  synth->add_option("--seed", synth_seed, "Random seed");

  // featurize
  auto* feat = app.add_subcommand("featurize", "Extract log-mel features from WAVs");
  std::string feat_wav_dir;
  std::string feat_out_dir;
  std::string feat_stats = "fit";
  std::string feat_stats_file;
  std::string feat_pretrained;
  std::string feat_config;
  std::uint64_t feat_seed = 0;
  feat->add_option("--wav-dir", feat_wav_dir, "Directory of <scene>-<fileid>.wav files")
      ->required();
  feat->add_option("--out-dir", feat_out_dir, "Output directory")->required();
  feat->add_option("--stats", feat_stats, "'fit' bin stats here or read them 'in'");
  feat->add_option("--stats-file", feat_stats_file,
                   "Stats file (default <out-dir>/stats.ftz)");
  feat->add_option("--pretrained-dir", feat_pretrained,
                   "Directory of precomputed <id>.pa.ftz / <id>.pv.ftz tensors");
  feat->add_option("--config", feat_config, "JSON run config");
  feat->add_option("--seed", feat_seed, "Seed for stand-in pretrained features");

  // train
  auto* train = app.add_subcommand("train", "Train the model");
  std::string train_manifest;
  std::string val_manifest;
  std::string train_out;
  std::string train_config;
  std::optional<std::uint64_t> train_seed;
  std::optional<std::size_t> train_epochs;
  std::optional<std::size_t> train_batch;
  train->add_option("--train-manifest", train_manifest, "Training manifest")->required();
  train->add_option("--val-manifest", val_manifest, "Validation manifest")->required();
  train->add_option("--out-dir", train_out, "Output directory")->required();
  train->add_option("--config", train_config, "JSON run config");
  train->add_option("--seed", train_seed, "Seed override");
  train->add_option("--epochs", train_epochs, "Epoch override");
  train->add_option("--batch-size", train_batch, "Batch size override");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string eval_manifest;
  std::string eval_checkpoint;
  std::string eval_out = "eval_report.json";
  eval->add_option("--manifest", eval_manifest, "Evaluation manifest")->required();
  eval->add_option("--checkpoint", eval_checkpoint, "Checkpoint directory")->required();
  eval->add_option("--out", eval_out, "Report output path");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  std::size_t gc_seeds = 20;
  std::uint64_t gc_seed = 42;
  bool gc_corrupt = false;
  gc->add_option("--seeds", gc_seeds, "Seeds per check");
  gc->add_option("--seed", gc_seed, "Base seed");
  gc->add_flag("--corrupt", gc_corrupt)->group("");  // test hook, hidden

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) {
      return cmd_synth(synth_out, synth_classes, synth_files, synth_segments,
                       synth_seed);
    }
    if (feat->parsed()) {
      return cmd_featurize(feat_wav_dir, feat_out_dir, feat_stats,
                           feat_stats_file, feat_pretrained, feat_config,
                           feat_seed);
    }
    if (train->parsed()) {
      return cmd_train(train_manifest, val_manifest, train_out, train_config,
                       train_seed, train_epochs, train_batch);
    }
    if (eval->parsed()) {
      return cmd_eval(eval_manifest, eval_checkpoint, eval_out);
    }
    if (gc->parsed()) {
      return cmd_gradcheck(gc_seeds, gc_seed, gc_corrupt);
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
