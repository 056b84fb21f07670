#include "msav/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "msav/ftz.hpp"
#include "msav/kernels.hpp"

namespace msav {

using nlohmann::json;

const std::vector<std::string>& default_class_names() {
  static const std::vector<std::string> names = {
      "airport",       "bus",
      "metro",         "metro_station",
      "park",          "public_square",
      "shopping_mall", "street_pedestrian",
      "street_traffic", "tram"};
  return names;
}

std::size_t Manifest::distinct_parent_count() const {
  std::set<std::string> parents;
  for (const SampleRecord& r : records) parents.insert(r.parent_file);
  return parents.size();
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) {
    throw std::runtime_error("cannot open manifest " + path.string());
  }
  json j = json::parse(is);
  for (const auto& [key, _] : j.items()) {
    if (key != "split" && key != "class_names" && key != "records") {
      throw std::runtime_error("unknown key in manifest: " + key);
    }
  }
  Manifest m;
  m.base_dir = path.parent_path();
  m.split = j.at("split").get<std::string>();
  m.class_names = j.at("class_names").get<std::vector<std::string>>();
  std::set<std::string> ids;
  for (const auto& r : j.at("records")) {
    for (const auto& [key, _] : r.items()) {
      if (key != "id" && key != "parent_file" && key != "label" &&
          key != "spectral_path" && key != "paudio_path" &&
          key != "pvisual_path") {
        throw std::runtime_error("unknown key in manifest record: " + key);
      }
    }
    SampleRecord rec;
    rec.id = r.at("id").get<std::string>();
    rec.parent_file = r.at("parent_file").get<std::string>();
    rec.label = r.at("label").get<int>();
    rec.spectral_path = r.at("spectral_path").get<std::string>();
    rec.paudio_path = r.at("paudio_path").get<std::string>();
    rec.pvisual_path = r.at("pvisual_path").get<std::string>();
    if (rec.label < 0 ||
        rec.label >= static_cast<int>(m.class_names.size())) {
      throw std::runtime_error("record " + rec.id + " has label " +
                               std::to_string(rec.label) + " outside 0.." +
                               std::to_string(m.class_names.size() - 1));
    }
    if (!ids.insert(rec.id).second) {
      throw std::runtime_error("duplicate record id in manifest: " + rec.id);
    }
    for (const std::string& rel :
         {rec.spectral_path, rec.paudio_path, rec.pvisual_path}) {
      if (!std::filesystem::exists(m.base_dir / rel)) {
        throw std::runtime_error("manifest path not resolvable: " + rel +
                                 " (record " + rec.id + ")");
      }
    }
    m.records.push_back(std::move(rec));
  }
  return m;
}

void save_manifest(const Manifest& manifest,
                   const std::filesystem::path& path) {
  json records = json::array();
  for (const SampleRecord& r : manifest.records) {
    records.push_back(json{{"id", r.id},
                           {"parent_file", r.parent_file},
                           {"label", r.label},
                           {"spectral_path", r.spectral_path},
                           {"paudio_path", r.paudio_path},
                           {"pvisual_path", r.pvisual_path}});
  }
  json j{{"split", manifest.split},
         {"class_names", manifest.class_names},
         {"records", records}};
  std::ofstream os(path);
  if (!os) {
    throw std::runtime_error("cannot write manifest " + path.string());
  }
  os << j.dump(2) << "\n";
}

std::vector<const SampleRecord*> sample_batch(const Manifest& manifest,
                                              std::size_t batch_size,
                                              Rng& rng) {
  // group record indices by parent, in first-appearance order
  std::vector<std::string> parents;
  std::vector<std::vector<std::size_t>> members;
  std::map<std::string, std::size_t> parent_index;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const std::string& p = manifest.records[i].parent_file;
    auto [it, inserted] = parent_index.try_emplace(p, parents.size());
    if (inserted) {
      parents.push_back(p);
      members.emplace_back();
    }
    members[it->second].push_back(i);
  }
  if (parents.size() < batch_size) {
    throw std::invalid_argument(
        "cannot draw a file-unique batch of " + std::to_string(batch_size) +
        " from " + std::to_string(parents.size()) + " distinct parent files");
  }
  // partial Fisher-Yates selects batch_size distinct parents
  std::vector<std::size_t> order(parents.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<const SampleRecord*> batch;
  batch.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const std::size_t j = i + rng.uniform_index(order.size() - i);
    std::swap(order[i], order[j]);
    const auto& group = members[order[i]];
    batch.push_back(&manifest.records[group[rng.uniform_index(group.size())]]);
  }
  return batch;
}

namespace {

double gamma_sample(double shape, Rng& rng) {
  if (shape < 1.0) {
    // boost: Gamma(a) = Gamma(a + 1) * U^(1/a)
    const double g = gamma_sample(shape + 1.0, rng);
    const double u = 1.0 - rng.uniform();  // (0, 1]
    return g * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x;
    double v;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = 1.0 - rng.uniform();  // (0, 1]
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

}  // namespace

double beta_sample(double a, double b, Rng& rng) {
  if (a <= 0.0 || b <= 0.0) {
    throw std::invalid_argument("beta_sample shapes must be positive");
  }
  const double ga = gamma_sample(a, rng);
  const double gb = gamma_sample(b, rng);
  const double lambda = ga / (ga + gb);
  // keep strictly inside (0, 1) against underflow
  return std::clamp(lambda, 1e-12, 1.0 - 1e-12);
}

namespace {

void check_one_hot(const Tensor& targets) {
  const std::size_t n_classes = targets.shape()[1];
  const auto d = targets.data();
  for (std::size_t r = 0; r < targets.shape()[0]; ++r) {
    std::size_t ones = 0;
    for (std::size_t c = 0; c < n_classes; ++c) {
      const float v = d[r * n_classes + c];
      if (v == 1.0f) {
        ++ones;
      } else if (v != 0.0f) {
        throw std::invalid_argument(
            "mixup targets must be one-hot; row " + std::to_string(r) +
            " has value " + std::to_string(v));
      }
    }
    if (ones != 1) {
      throw std::invalid_argument("mixup targets must be one-hot; row " +
                                  std::to_string(r) + " has " +
                                  std::to_string(ones) + " ones");
    }
  }
}

Tensor mix_tensor(const Tensor& x, const std::vector<std::size_t>& perm,
                  float lambda) {
  const std::size_t batch = x.shape()[0];
  const std::size_t slice = x.size() / batch;
  Tensor out = Tensor::zeros(x.shape());
  const auto src = x.data();
  auto dst = out.data();
  for (std::size_t b = 0; b < batch; ++b) {
    const float* xa = src.data() + b * slice;
    const float* xb = src.data() + perm[b] * slice;
    float* o = dst.data() + b * slice;
    for (std::size_t i = 0; i < slice; ++i) {
      o[i] = lambda * xa[i] + (1.0f - lambda) * xb[i];
    }
  }
  return out;
}

}  // namespace

void apply_mixup(Batch& batch, float lambda,
                 const std::vector<std::size_t>& perm) {
  batch.spectral = mix_tensor(batch.spectral, perm, lambda);
  batch.paudio = mix_tensor(batch.paudio, perm, lambda);
  batch.pvisual = mix_tensor(batch.pvisual, perm, lambda);
  batch.targets = mix_tensor(batch.targets, perm, lambda);
}

void mixup(Batch& batch, const MixupConfig& cfg, Rng& rng) {
  check_one_hot(batch.targets);
  if (rng.uniform() >= static_cast<double>(cfg.activation_prob)) {
    return;
  }
  const float lambda = static_cast<float>(
      beta_sample(cfg.beta_shape, cfg.beta_shape, rng));
  apply_mixup(batch, lambda, rng.permutation(batch.targets.shape()[0]));
}

const Tensor& FeatureCache::get(const std::filesystem::path& path) {
  const std::string key = path.string();
  auto it = cache_.find(key);
  if (it == cache_.end()) {
    it = cache_.emplace(key, read_ftz(path)).first;
  }
  return it->second;
}

namespace {

Tensor stack_records(const Manifest& manifest,
                     const std::vector<const SampleRecord*>& records,
                     const std::string SampleRecord::*path_member,
                     const char* stream, FeatureCache& cache) {
  const Tensor& first = cache.get(manifest.resolve(records[0]->*path_member));
  Shape item_shape = first.shape();
  Shape out_shape;
  out_shape.push_back(records.size());
  out_shape.insert(out_shape.end(), item_shape.begin(), item_shape.end());
  Tensor out = Tensor::zeros(out_shape);
  const std::size_t slice = first.size();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const Tensor& t = cache.get(manifest.resolve(records[i]->*path_member));
    if (t.shape() != item_shape) {
      throw std::runtime_error(std::string(stream) + " feature of record " +
                               records[i]->id + " has shape " +
                               shape_str(t.shape()) + ", expected " +
                               shape_str(item_shape));
    }
    std::copy_n(t.data().data(), slice, out.data().data() + i * slice);
  }
  return out;
}

}  // namespace

Batch load_batch(const Manifest& manifest,
                 const std::vector<const SampleRecord*>& records,
                 std::size_t n_classes, FeatureCache& cache) {
  if (records.empty()) {
    throw std::invalid_argument("load_batch: empty record list");
  }
  Batch batch;
  batch.spectral = stack_records(manifest, records,
                                 &SampleRecord::spectral_path, "spectral",
                                 cache);
  batch.paudio = stack_records(manifest, records, &SampleRecord::paudio_path,
                               "paudio", cache);
  batch.pvisual = stack_records(manifest, records,
                                &SampleRecord::pvisual_path, "pvisual", cache);
  batch.targets = Tensor::zeros({records.size(), n_classes});
  auto t = batch.targets.data();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const int label = records[i]->label;
    if (label < 0 || label >= static_cast<int>(n_classes)) {
      throw std::runtime_error("record " + records[i]->id + " has label " +
                               std::to_string(label) + " outside 0.." +
                               std::to_string(n_classes - 1));
    }
    t[i * n_classes + static_cast<std::size_t>(label)] = 1.0f;
  }
  return batch;
}

namespace {

constexpr std::size_t kSynthFrames = 60;
constexpr std::size_t kSynthBins = 128;
constexpr std::size_t kSynthPaudioDim = 128;
constexpr std::size_t kSynthVisualLen = 30;
constexpr std::size_t kSynthVisualDim = 4096;
constexpr float kSynthNoiseSigma = 0.5f;

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (float& v : t.data()) v = static_cast<float>(rng.normal());
  return t;
}

Tensor noisy_copy(const Tensor& anchor, float sigma, Rng& rng) {
  Tensor t = anchor.clone();
  for (float& v : t.data()) {
    v += sigma * static_cast<float>(rng.normal());
  }
  return t;
}

double min_pairwise_distance(const std::vector<Tensor>& anchors) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    for (std::size_t j = i + 1; j < anchors.size(); ++j) {
      const auto a = anchors[i].data();
      const auto b = anchors[j].data();
      double d2 = 0.0;
      for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = static_cast<double>(a[k]) - static_cast<double>(b[k]);
        d2 += d * d;
      }
      best = std::min(best, std::sqrt(d2));
    }
  }
  return best;
}

}  // namespace

Manifest synth_dataset(const std::filesystem::path& out_dir,
                       std::size_t n_classes, std::size_t files_per_class,
                       std::size_t segments_per_file, std::uint64_t seed) {
  if (n_classes == 0 || files_per_class == 0 || segments_per_file == 0) {
    throw std::invalid_argument(
        "synth_dataset: class/file/segment counts must be positive");
  }
  std::filesystem::create_directories(out_dir / "features");

  Manifest manifest;
  manifest.split = "train";
  manifest.base_dir = out_dir;
  for (std::size_t c = 0; c < n_classes; ++c) {
    manifest.class_names.push_back(
        c < default_class_names().size() ? default_class_names()[c]
                                         : "scene" + std::to_string(c));
  }

  Rng rng(seed);
  std::vector<Tensor> spec_anchors;
  std::vector<Tensor> pa_anchors;
  std::vector<Tensor> pv_anchors;
  for (std::size_t c = 0; c < n_classes; ++c) {
    spec_anchors.push_back(random_tensor({kSynthFrames, kSynthBins}, rng));
    pa_anchors.push_back(random_tensor({1, kSynthPaudioDim}, rng));
    pv_anchors.push_back(
        random_tensor({kSynthVisualLen, kSynthVisualDim}, rng));
  }
  // anchors are drawn i.i.d. standard normal, so in these dimensions the
  // pairwise distances concentrate around sqrt(2 * dim); verify the
  // separation the overfit run relies on
  for (const auto* anchors : {&spec_anchors, &pa_anchors, &pv_anchors}) {
    if (n_classes > 1 &&
        min_pairwise_distance(*anchors) <
            5.0 * static_cast<double>(kSynthNoiseSigma)) {
      throw std::runtime_error(
          "synth_dataset: anchor separation below 5 sigma");
    }
  }

  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t f = 0; f < files_per_class; ++f) {
      const std::string parent =
          manifest.class_names[c] + "-f" + std::to_string(f);
      for (std::size_t s = 0; s < segments_per_file; ++s) {
        const std::string id = parent + "-s" + std::to_string(s);
        SampleRecord rec;
        rec.id = id;
        rec.parent_file = parent;
        rec.label = static_cast<int>(c);
        rec.spectral_path = "features/" + id + ".spec.ftz";
        rec.paudio_path = "features/" + id + ".pa.ftz";
        rec.pvisual_path = "features/" + id + ".pv.ftz";
        write_ftz(out_dir / rec.spectral_path,
                  noisy_copy(spec_anchors[c], kSynthNoiseSigma, rng));
        write_ftz(out_dir / rec.paudio_path,
                  noisy_copy(pa_anchors[c], kSynthNoiseSigma, rng));
        write_ftz(out_dir / rec.pvisual_path,
                  noisy_copy(pv_anchors[c], kSynthNoiseSigma, rng));
        manifest.records.push_back(std::move(rec));
      }
    }
  }
  save_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

}  // namespace msav
