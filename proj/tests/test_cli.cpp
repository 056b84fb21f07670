// End-to-end checks of the command-line binary: exit codes, output files,
// and byte-level determinism across reruns.

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <string>

#include <doctest.h>
#include <json.hpp>

#include "msav/ftz.hpp"
#include "msav/wav.hpp"
#include "test_support.hpp"

using nlohmann::json;
using test_support::TempDir;
using test_support::run_cli;
using test_support::run_cli_quiet;

namespace {

const char* kTinyConfig = R"({
  "seed": 5,
  "model": {
    "d_model": 16,
    "n_heads": 2,
    "n_encoder_layers": 1,
    "n_decoder_layers": 1,
    "cnn_channels": [4, 8],
    "cnn_pools": [[3, 4], [4, 32]]
  },
  "train": {
    "epochs": 2,
    "batch_size": 4,
    "peak_lr": 0.001,
    "warmup_steps": 5
  }
})";

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

json read_json(const std::filesystem::path& p) {
  std::ifstream is(p);
  REQUIRE(is);
  return json::parse(is);
}

}  // namespace

TEST_CASE("synth subcommand") {
  TempDir dir("cli_synth");
  SUBCASE("happy path writes a valid manifest") {
    const int rc = run_cli_quiet("synth --out " + q(dir.path() / "d") +
                                 " --classes 3 --files-per-class 2"
                                 " --segments-per-file 4 --seed 1");
    CHECK(rc == 0);
    const json manifest = read_json(dir.path() / "d" / "manifest.json");
    CHECK(manifest.at("records").size() == 3 * 2 * 4);
  }
  SUBCASE("zero classes is a usage error") {
    const int rc =
        run_cli_quiet("synth --out " + q(dir.path() / "d2") + " --classes 0");
    CHECK(rc == 2);
  }
  SUBCASE("unknown flags are usage errors") {
    const int rc = run_cli_quiet("synth --out x --wat 1");
    CHECK(rc == 2);
  }
}

TEST_CASE("featurize subcommand") {
  TempDir dir("cli_feat");
  const auto wav_dir = dir.path() / "wavs";
  std::filesystem::create_directories(wav_dir);

  // two 10-second clips with legal scene names
  msav::Rng rng(2);
  for (const auto& [name, freq] :
       {std::pair<const char*, double>{"park-0001.wav", 440.0},
        {"metro-0002.wav", 950.0}}) {
    msav::AudioClip clip;
    clip.sample_rate = 16000;
    clip.samples.resize(160000);
    for (std::size_t i = 0; i < clip.samples.size(); ++i) {
      clip.samples[i] = static_cast<float>(
          0.5 * std::sin(2.0 * std::numbers::pi * freq * i / 16000.0) +
          0.1 * rng.uniform(-1.0, 1.0));
    }
    msav::write_wav_pcm16(wav_dir / name, clip);
  }

  SUBCASE("ten records per file, with stats and standardized spectra") {
    const int rc = run_cli_quiet("featurize --wav-dir " + q(wav_dir) +
                                 " --out-dir " + q(dir.path() / "f1") +
                                 " --stats fit --seed 3");
    REQUIRE(rc == 0);
    const json manifest = read_json(dir.path() / "f1" / "manifest.json");
    CHECK(manifest.at("records").size() == 20);
    CHECK(std::filesystem::exists(dir.path() / "f1" / "stats.ftz"));
    const auto rec = manifest.at("records")[0];
    CHECK(rec.at("parent_file") == "metro-0002");  // sorted scan order
    const msav::Tensor spec = msav::read_ftz(
        dir.path() / "f1" / rec.at("spectral_path").get<std::string>());
    CHECK(spec.shape() == msav::Shape{60, 128});
    const msav::Tensor pa = msav::read_ftz(
        dir.path() / "f1" / rec.at("paudio_path").get<std::string>());
    CHECK(pa.shape() == msav::Shape{1, 128});

    SUBCASE("rerunning with the same seed is byte-identical") {
      const int rc2 = run_cli_quiet("featurize --wav-dir " + q(wav_dir) +
                                    " --out-dir " + q(dir.path() / "f2") +
                                    " --stats fit --seed 3");
      REQUIRE(rc2 == 0);
      CHECK(test_support::trees_equal(dir.path() / "f1", dir.path() / "f2"));
    }
    SUBCASE("stats 'in' mode consumes previously fitted stats") {
      const int rc2 = run_cli_quiet(
          "featurize --wav-dir " + q(wav_dir) + " --out-dir " +
          q(dir.path() / "f3") + " --stats in --stats-file " +
          q(dir.path() / "f1" / "stats.ftz") + " --seed 3");
      CHECK(rc2 == 0);
    }
  }
  SUBCASE("missing stats file in 'in' mode is a usage error") {
    const int rc = run_cli_quiet("featurize --wav-dir " + q(wav_dir) +
                                 " --out-dir " + q(dir.path() / "f4") +
                                 " --stats in");
    CHECK(rc == 2);
  }
  SUBCASE("unknown scene names are rejected") {
    msav::AudioClip clip;
    clip.sample_rate = 16000;
    clip.samples.assign(160000, 0.1f);
    msav::write_wav_pcm16(wav_dir / "volcano-0003.wav", clip);
    const int rc = run_cli_quiet("featurize --wav-dir " + q(wav_dir) +
                                 " --out-dir " + q(dir.path() / "f5") +
                                 " --stats fit");
    CHECK(rc == 2);
  }
}

TEST_CASE("train, eval and the determinism contract") {
  TempDir dir("cli_train");
  REQUIRE(run_cli_quiet("synth --out " + q(dir.path() / "data") +
                        " --classes 10 --files-per-class 1"
                        " --segments-per-file 4 --seed 11") == 0);
  std::ofstream(dir.path() / "config.json") << kTinyConfig;
  const std::string manifest = q(dir.path() / "data" / "manifest.json");
  const std::string config = q(dir.path() / "config.json");

  const int rc = run_cli_quiet("train --train-manifest " + manifest +
                               " --val-manifest " + manifest + " --config " +
                               config + " --out-dir " + q(dir.path() / "run1"));
  REQUIRE(rc == 0);

  SUBCASE("report carries both metrics and the log is valid JSONL") {
    const json report = read_json(dir.path() / "run1" / "report.json");
    CHECK(report.at("best_macro_ce").is_number());
    CHECK(report.at("best_accuracy").is_number());
    CHECK(report.at("total_steps") == 20);  // 2 epochs x (40 records / 4)

    std::ifstream log(dir.path() / "run1" / "train_log.jsonl");
    std::string line;
    std::size_t lines = 0;
    while (std::getline(log, line)) {
      const json rec = json::parse(line);
      for (const char* key : {"epoch", "step", "lr", "train_loss",
                              "val_macro_ce", "val_accuracy"}) {
        CHECK(rec.contains(key));
      }
      ++lines;
    }
    CHECK(lines == 2);
  }

  SUBCASE("a rerun with the same seed is byte-identical") {
    REQUIRE(run_cli_quiet("train --train-manifest " + manifest +
                          " --val-manifest " + manifest + " --config " +
                          config + " --out-dir " +
                          q(dir.path() / "run2")) == 0);
    CHECK(test_support::trees_equal(dir.path() / "run1", dir.path() / "run2"));
  }

  SUBCASE("eval on the best_ce checkpoint reproduces the logged score") {
    const int erc =
        run_cli("eval --manifest " + manifest + " --checkpoint " +
                q(dir.path() / "run1" / "best_ce") + " --out " +
                q(dir.path() / "eval_report.json") + " > /dev/null 2>&1");
    REQUIRE(erc == 0);
    const json eval_report = read_json(dir.path() / "eval_report.json");

    double best_logged = 1e300;
    std::ifstream log(dir.path() / "run1" / "train_log.jsonl");
    std::string line;
    while (std::getline(log, line)) {
      best_logged =
          std::min(best_logged, json::parse(line).at("val_macro_ce").get<double>());
    }
    CHECK(std::abs(eval_report.at("macro_ce").get<double>() - best_logged) <
          1e-6);
  }

  SUBCASE("teacher and student diverge after training") {
    const int e1 =
        run_cli("eval --manifest " + manifest + " --checkpoint " +
                q(dir.path() / "run1" / "final_teacher") + " --out " +
                q(dir.path() / "t.json") + " > /dev/null 2>&1");
    const int e2 =
        run_cli("eval --manifest " + manifest + " --checkpoint " +
                q(dir.path() / "run1" / "final_student") + " --out " +
                q(dir.path() / "s.json") + " > /dev/null 2>&1");
    REQUIRE(e1 == 0);
    REQUIRE(e2 == 0);
    const json t = read_json(dir.path() / "t.json");
    const json s = read_json(dir.path() / "s.json");
    CHECK(t.at("macro_ce").get<double>() != s.at("macro_ce").get<double>());
  }

  SUBCASE("unknown config keys are usage errors") {
    std::ofstream(dir.path() / "bad.json") << R"({"plaid": 1})";
    const int brc = run_cli_quiet(
        "train --train-manifest " + manifest + " --val-manifest " + manifest +
        " --config " + q(dir.path() / "bad.json") + " --out-dir " +
        q(dir.path() / "run3"));
    CHECK(brc == 2);
  }

  SUBCASE("an empty manifest is a usage error for eval") {
    std::ofstream(dir.path() / "empty.json")
        << R"({"split": "val", "class_names": ["a","b"], "records": []})";
    const int erc = run_cli_quiet("eval --manifest " +
                                  q(dir.path() / "empty.json") +
                                  " --checkpoint " +
                                  q(dir.path() / "run1" / "best_ce"));
    CHECK(erc == 2);
  }
}

TEST_CASE("gradcheck subcommand") {
  SUBCASE("default run passes") {
    CHECK(run_cli_quiet("gradcheck --seeds 1") == 0);
  }
  SUBCASE("the corrupt hook forces a nonzero exit") {
    CHECK(run_cli_quiet("gradcheck --seeds 1 --corrupt") != 0);
  }
  SUBCASE("the table lists every check exactly once") {
    TempDir dir("cli_gc");
    const auto out = dir.path() / "table.txt";
    REQUIRE(run_cli("gradcheck --seeds 1 > " + q(out) + " 2>/dev/null") == 0);
    std::ifstream is(out);
    std::string line;
    std::size_t rows = 0;
    std::set<std::string> names;
    while (std::getline(is, line)) {
      if (line.starts_with("op.") || line.starts_with("layer.") ||
          line.starts_with("model.")) {
        ++rows;
        names.insert(line.substr(0, line.find(' ')));
      }
    }
    CHECK(rows == names.size());
    CHECK(names.contains("model.tiny_e2e_train"));
    CHECK(rows >= 20);
  }
}
