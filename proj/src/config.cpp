#include "cante/config.hpp"

#include <fstream>

#include "cante/error.hpp"

namespace cante {

std::map<ModelKind, ArchitectureConfig> PipelineConfig::default_architectures() {
  std::map<ModelKind, ArchitectureConfig> out;
  for (ModelKind k : {ModelKind::kCrnn, ModelKind::kResnet, ModelKind::kResBlstm}) {
    ArchitectureConfig a;
    a.kind = k;
    out[k] = a;
  }
  return out;
}

ArchitectureConfig PipelineConfig::architecture(ModelKind kind, int n_classes) const {
  ArchitectureConfig a = architectures.at(kind);
  a.n_classes = n_classes;
  a.validate();
  return a;
}

namespace {

std::string scope_name(ClusterScope s) { return s == ClusterScope::kCorpus ? "corpus" : "recording"; }

template <typename T, typename F>
nlohmann::json names(const std::vector<T>& items, F to_name) {
  nlohmann::json out = nlohmann::json::array();
  for (const T& x : items) out.push_back(std::string(to_name(x)));
  return out;
}

// Every key of `given` must exist in `reference`, recursively through objects.
void check_keys(const nlohmann::json& given, const nlohmann::json& reference, const std::string& at) {
  if (!given.is_object() || !reference.is_object()) return;
  for (const auto& item : given.items()) {
    const std::string path = at.empty() ? item.key() : at + "." + item.key();
    if (!reference.contains(item.key())) throw ConfigError("unknown config key '" + path + "'");
    check_keys(item.value(), reference.at(item.key()), path);
  }
}

}  // namespace

nlohmann::json to_json(const PipelineConfig& c) {
  nlohmann::json archs = nlohmann::json::object();
  for (const auto& [kind, a] : c.architectures) {
    nlohmann::json j = to_json(a);
    j.erase("n_classes");  // fixed by the corpus
    archs[to_string(kind)] = j;
  }
  const auto& s = c.pitch.salience;
  const auto& t = c.pitch.track;
  const auto& f = c.features;
  return {
      {"paths", {{"manifest", c.paths.manifest.string()}, {"work_dir", c.paths.work_dir.string()}}},
      {"corpus", {{"min_recordings", c.min_recordings}}},
      {"pitch",
       {{"sample_rate", c.pitch.sample_rate},
        {"window", c.pitch.window},
        {"hop", c.pitch.hop},
        {"n_harmonics", s.n_harmonics},
        {"decay", s.decay},
        {"f_min", s.f_min},
        {"f_max", s.f_max},
        {"cents_step", s.cents_step},
        {"weight_width_cents", s.weight_width_cents},
        {"peak_floor", s.peak_floor},
        {"voicing_threshold", t.voicing_threshold},
        {"median_filter", t.median_filter},
        {"voicing_window", t.voicing_window},
        {"octave_jump_cents", t.octave_jump_cents}}},
      {"contour",
       {{"k_min", c.contour.k_min},
        {"k_max", c.contour.k_max},
        {"min_frames", c.contour.segment.min_frames},
        {"max_gap_seconds", c.contour.segment.max_gap_seconds},
        {"cluster_scope", scope_name(c.cluster_scope)}}},
      {"mining",
       {{"min_support", c.mining.min_support},
        {"len_min", c.mining.len_min},
        {"len_max", c.mining.len_max}}},
      {"features",
       {{"sample_rate", f.sample_rate},
        {"window", f.window},
        {"hop", f.hop},
        {"fft_bins", f.fft_bins},
        {"mel_bands", f.mel_bands},
        {"mfcc_filters", f.mfcc_filters},
        {"mfcc_coeffs", f.mfcc_coeffs},
        {"db_floor", f.db_floor},
        {"log_floor", f.log_floor}}},
      {"dataset",
       {{"test_fraction", c.dataset.test_fraction},
        {"val_fraction", c.dataset.val_fraction},
        {"segment_seconds", c.dataset.segment_seconds},
        {"max_instances_per_singer", c.dataset.max_instances_per_singer},
        {"split_by_recording", c.dataset.split_by_recording},
        {"seed", c.dataset.seed}}},
      {"architectures", archs},
      {"train",
       {{"batch_size", c.train.batch_size},
        {"max_epochs", c.train.max_epochs},
        {"patience", c.train.patience},
        {"learning_rate", c.train.learning_rate},
        {"seed", c.train.seed}}},
      {"eval", {{"auc_average", c.auc_average == AucAverage::kMicro ? "micro" : "macro"}}},
      {"grid",
       {{"models", names(c.grid.models, [](ModelKind k) { return to_string(k); })},
        {"datasets", names(c.grid.datasets, [](DatasetKind k) { return to_string(k); })},
        {"features", names(c.grid.features, [](FeatureKind k) { return to_string(k); })},
        {"jobs", c.grid.jobs}}},
      {"synth",
       {{"recordings_per_singer", c.synth.recordings_per_singer},
        {"duration_seconds", c.synth.duration_seconds},
        {"seed", c.synth.seed},
        {"profiles", c.synth.profiles.string()}}},
  };
}

PipelineConfig config_from_json(const nlohmann::json& given) {
  if (!given.is_object()) throw ConfigError("config must be a JSON object");
  const nlohmann::json reference = to_json(PipelineConfig{});
  check_keys(given, reference, "");
  nlohmann::json j = reference;
  j.merge_patch(given);

  PipelineConfig c;
  try {
    c.paths.manifest = j["paths"]["manifest"].get<std::string>();
    c.paths.work_dir = j["paths"]["work_dir"].get<std::string>();
    c.min_recordings = j["corpus"]["min_recordings"].get<int>();

    const auto& p = j["pitch"];
    c.pitch.sample_rate = p["sample_rate"].get<int>();
    c.pitch.window = p["window"].get<int>();
    c.pitch.hop = p["hop"].get<int>();
    c.pitch.salience.n_harmonics = p["n_harmonics"].get<int>();
    c.pitch.salience.decay = p["decay"].get<double>();
    c.pitch.salience.f_min = p["f_min"].get<double>();
    c.pitch.salience.f_max = p["f_max"].get<double>();
    c.pitch.salience.cents_step = p["cents_step"].get<double>();
    c.pitch.salience.weight_width_cents = p["weight_width_cents"].get<double>();
    c.pitch.salience.peak_floor = p["peak_floor"].get<double>();
    c.pitch.track.voicing_threshold = p["voicing_threshold"].get<double>();
    c.pitch.track.median_filter = p["median_filter"].get<int>();
    c.pitch.track.voicing_window = p["voicing_window"].get<int>();
    c.pitch.track.octave_jump_cents = p["octave_jump_cents"].get<double>();

    const auto& ct = j["contour"];
    c.contour.k_min = ct["k_min"].get<int>();
    c.contour.k_max = ct["k_max"].get<int>();
    c.contour.segment.min_frames = ct["min_frames"].get<int>();
    c.contour.segment.max_gap_seconds = ct["max_gap_seconds"].get<double>();
    const auto scope = ct["cluster_scope"].get<std::string>();
    if (scope == "recording") {
      c.cluster_scope = ClusterScope::kRecording;
    } else if (scope == "corpus") {
      c.cluster_scope = ClusterScope::kCorpus;
    } else {
      throw ConfigError("cluster_scope must be 'recording' or 'corpus'");
    }

    c.mining.min_support = j["mining"]["min_support"].get<int>();
    c.mining.len_min = j["mining"]["len_min"].get<int>();
    c.mining.len_max = j["mining"]["len_max"].get<int>();

    const auto& f = j["features"];
    c.features.sample_rate = f["sample_rate"].get<int>();
    c.features.window = f["window"].get<int>();
    c.features.hop = f["hop"].get<int>();
    c.features.fft_bins = f["fft_bins"].get<int>();
    c.features.mel_bands = f["mel_bands"].get<int>();
    c.features.mfcc_filters = f["mfcc_filters"].get<int>();
    c.features.mfcc_coeffs = f["mfcc_coeffs"].get<int>();
    c.features.db_floor = f["db_floor"].get<double>();
    c.features.log_floor = f["log_floor"].get<double>();

    const auto& d = j["dataset"];
    c.dataset.test_fraction = d["test_fraction"].get<double>();
    c.dataset.val_fraction = d["val_fraction"].get<double>();
    c.dataset.segment_seconds = d["segment_seconds"].get<double>();
    c.dataset.max_instances_per_singer = d["max_instances_per_singer"].get<int>();
    c.dataset.split_by_recording = d["split_by_recording"].get<bool>();
    c.dataset.seed = d["seed"].get<std::uint64_t>();

    for (const auto& item : j["architectures"].items()) {
      nlohmann::json a = item.value();
      a.erase("embedding_dim");  // derived; a stale value must not block overrides
      const ModelKind kind = model_kind_from_string(item.key());
      if (a.contains("kind") && a["kind"].get<std::string>() != item.key()) {
        throw ConfigError("architecture '" + item.key() + "' declares a different kind");
      }
      a["kind"] = item.key();
      ArchitectureConfig arch = architecture_from_json(a);
      arch.validate();
      c.architectures[kind] = arch;
    }

    const auto& t = j["train"];
    c.train.batch_size = t["batch_size"].get<int>();
    c.train.max_epochs = t["max_epochs"].get<int>();
    c.train.patience = t["patience"].get<int>();
    c.train.learning_rate = t["learning_rate"].get<double>();
    c.train.seed = t["seed"].get<std::uint64_t>();

    const auto avg = j["eval"]["auc_average"].get<std::string>();
    if (avg != "macro" && avg != "micro") throw ConfigError("auc_average must be 'macro' or 'micro'");
    c.auc_average = avg == "micro" ? AucAverage::kMicro : AucAverage::kMacro;

    const auto& g = j["grid"];
    c.grid.models.clear();
    for (const auto& x : g["models"]) c.grid.models.push_back(model_kind_from_string(x.get<std::string>()));
    c.grid.datasets.clear();
    for (const auto& x : g["datasets"]) {
      c.grid.datasets.push_back(dataset_kind_from_string(x.get<std::string>()));
    }
    c.grid.features.clear();
    for (const auto& x : g["features"]) {
      c.grid.features.push_back(feature_kind_from_string(x.get<std::string>()));
    }
    c.grid.jobs = g["jobs"].get<int>();
    if (c.grid.jobs < 1) throw ConfigError("grid.jobs must be at least 1");

    const auto& s = j["synth"];
    c.synth.recordings_per_singer = s["recordings_per_singer"].get<int>();
    c.synth.duration_seconds = s["duration_seconds"].get<double>();
    c.synth.seed = s["seed"].get<std::uint64_t>();
    c.synth.profiles = s["profiles"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  if (c.contour.k_min < 1 || c.contour.k_max < c.contour.k_min) throw ConfigError("bad k range");
  if (c.mining.min_support < 1 || c.mining.len_min < 1 || c.mining.len_max < c.mining.len_min) {
    throw ConfigError("bad mining parameters");
  }
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  nlohmann::json* node = &doc;
  std::size_t begin = 0;
  while (true) {
    const auto dot = path.find('.', begin);
    const std::string key = path.substr(begin, dot == std::string::npos ? std::string::npos : dot - begin);
    if (key.empty()) throw ConfigError("override key '" + path + "' has an empty component");
    if (!node->is_object()) *node = nlohmann::json::object();
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    begin = dot + 1;
  }
}

}  // namespace cante
