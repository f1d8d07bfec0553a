#include "cante/pipeline.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "cante/error.hpp"
#include "cante/log.hpp"
#include "cante/nn/checkpoint.hpp"

namespace cante {

namespace fs = std::filesystem;

std::filesystem::path WorkDir::dataset(DatasetKind kind) const {
  return datasets() / (std::string(to_string(kind)) + ".json");
}

std::string Cell::name() const {
  return to_string(model) + "_" + to_string(dataset) + "_" + to_string(feature);
}

namespace {

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
  if (!fs::exists(path)) throw DependencyError("missing input artifact " + path.string());
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void require(const fs::path& path) {
  if (!fs::exists(path)) throw DependencyError("missing input artifact " + path.string());
}

WorkDir work(const PipelineConfig& cfg) { return {cfg.paths.work_dir}; }

fs::path run_dir(const PipelineConfig& cfg, const Cell& cell) { return work(cfg).runs() / cell.name(); }

std::map<std::string, double> load_durations(const WorkDir& w) {
  return read_json(w.durations()).get<std::map<std::string, double>>();
}

Dataset load_dataset(const WorkDir& w, DatasetKind kind) {
  const Dataset d = dataset_from_json(read_json(w.dataset(kind)));
  if (d.kind != kind) throw FormatError(w.dataset(kind).string() + " holds a different variant");
  return d;
}

LabeledSet make_set(const std::vector<FeatureMatrix>& feats, const std::vector<std::size_t>& idx,
                    const Normalizer& norm) {
  LabeledSet s;
  for (std::size_t i : idx) {
    s.inputs.push_back(norm.apply(feats[i]));
    s.labels.push_back(feats[i].source.label);
  }
  return s;
}

// Dataset restricted to one split, keeping the original order.
Dataset subset(const Dataset& d, Split which) {
  Dataset out;
  out.kind = d.kind;
  out.singers = d.singers;
  for (std::size_t i : d.indices(which)) {
    out.instances.push_back(d.instances[i]);
    out.split.push_back(which);
  }
  return out;
}

nlohmann::json cell_json(const Cell& c) {
  return {{"model", to_string(c.model)}, {"dataset", to_string(c.dataset)}, {"feature", to_string(c.feature)}};
}

nlohmann::json train_params_json(const TrainParams& t) {
  return {{"batch_size", t.batch_size},
          {"max_epochs", t.max_epochs},
          {"patience", t.patience},
          {"learning_rate", t.learning_rate},
          {"seed", t.seed}};
}

struct TrainedCell {
  TrainReport report;
  std::unique_ptr<models::Model<float>> model;
  LabeledSet test;
};

TrainedCell train_and_save(const PipelineConfig& cfg, const Cell& cell, bool keep_test) {
  const WorkDir w = work(cfg);
  const Dataset d = load_dataset(w, cell.dataset);
  const Corpus corpus = load_corpus(cfg);
  log::info("train", {{"cell", cell.name()}, {"instances", std::to_string(d.instances.size())}});
  const std::vector<FeatureMatrix> feats = extract_dataset_features(d, corpus, cell.feature, cfg.features);

  const auto train_idx = d.indices(Split::kTrain);
  if (train_idx.empty()) throw ArgumentError("dataset " + std::string(to_string(cell.dataset)) + " has no training instances");
  std::vector<const FeatureMatrix*> train_feats;
  for (std::size_t i : train_idx) train_feats.push_back(&feats[i]);
  const Normalizer norm = Normalizer::fit(train_feats);

  const ArchitectureConfig arch = cfg.architecture(cell.model, static_cast<int>(d.singers.size()));
  Rng init(cfg.train.seed);
  TrainedCell out;
  out.model = models::build_model<float>(arch, init);
  out.report = train(*out.model, make_set(feats, train_idx, norm), make_set(feats, d.indices(Split::kVal), norm),
                     cfg.train);
  if (keep_test) out.test = make_set(feats, d.indices(Split::kTest), norm);

  const fs::path dir = run_dir(cfg, cell);
  fs::create_directories(dir);
  nn::save_tensor_table((dir / "model.ckpt").string(), nn::state_of(*out.model), true);
  write_json(dir / "model.json", {{"format_version", kRunFormatVersion},
                                  {"cell", cell_json(cell)},
                                  {"architecture", to_json(arch)},
                                  {"seed", cfg.train.seed},
                                  {"train", train_params_json(cfg.train)},
                                  {"normalizer", to_json(norm)},
                                  {"singers", d.singers},
                                  {"config", to_json(cfg)}});
  write_json(dir / "train_report.json", to_json(out.report));
  return out;
}

EvalReport write_eval(const PipelineConfig& cfg, const Cell& cell, const EvalReport& r) {
  nlohmann::json j = to_json(r);
  j["cell"] = cell_json(cell);
  j["auc_average"] = cfg.auc_average == AucAverage::kMicro ? "micro" : "macro";
  write_json(run_dir(cfg, cell) / "eval.json", j);
  log::info("eval", {{"cell", cell.name()},
                     {"accuracy_pct", std::to_string(r.accuracy_pct)},
                     {"auc", std::to_string(r.auc)}});
  return r;
}

std::string format_number(double v, int digits) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::vector<Cell> grid_cells(const PipelineConfig& cfg) {
  std::vector<Cell> cells;
  for (ModelKind m : cfg.grid.models) {
    for (DatasetKind d : cfg.grid.datasets) {
      for (FeatureKind f : cfg.grid.features) cells.push_back({m, d, f});
    }
  }
  return cells;
}

CellResult read_result(const PipelineConfig& cfg, const Cell& cell) {
  const fs::path dir = run_dir(cfg, cell);
  const nlohmann::json e = read_json(dir / "eval.json");
  CellResult r;
  r.cell = cell;
  r.eval.accuracy_pct = e.at("accuracy_pct").get<double>();
  r.eval.auc = e.at("auc").is_null() ? std::nan("") : e.at("auc").get<double>();
  r.eval.excluded_classes = e.at("excluded_classes").get<std::vector<int>>();
  const auto& conf = e.at("confusion");
  const auto k = static_cast<Eigen::Index>(conf.size());
  r.eval.confusion = Eigen::MatrixXi::Zero(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) r.eval.confusion(i, j) = conf[i][j].get<int>();
  }
  const nlohmann::json t = read_json(dir / "train_report.json");
  r.train.best_epoch = t.at("best_epoch").get<int>();
  r.train.stopped_epoch = t.at("stopped_epoch").get<int>();
  for (const auto& ep : t.at("epochs")) {
    EpochStats s;
    s.epoch = ep.at("epoch").get<int>();
    s.train_loss = ep.at("train_loss").get<double>();
    s.train_accuracy = ep.at("train_accuracy").get<double>();
    s.val_loss = ep.at("val_loss").get<double>();
    s.val_accuracy = ep.at("val_accuracy").get<double>();
    r.train.epochs.push_back(s);
  }
  return r;
}

}  // namespace

Corpus load_corpus(const PipelineConfig& cfg) {
  require(cfg.paths.manifest);
  Corpus corpus = load_manifest(cfg.paths.manifest);
  corpus.check_min_recordings(cfg.min_recordings);
  return corpus;
}

void write_config_sidecar(const fs::path& dir, const PipelineConfig& cfg) {
  fs::create_directories(dir);
  write_json(dir / "config.json", {{"format_version", kConfigFormatVersion},
                                   {"version", CANTE_VERSION},
                                   {"config", to_json(cfg)}});
}

void run_synth(const PipelineConfig& cfg) {
  SynthCorpusSpec spec;
  if (!cfg.synth.profiles.empty()) spec.profiles = load_profiles(cfg.synth.profiles);
  spec.recordings_per_singer = cfg.synth.recordings_per_singer;
  spec.duration_seconds = cfg.synth.duration_seconds;
  spec.seed = cfg.synth.seed;
  spec.params.sample_rate = cfg.pitch.sample_rate;
  fs::path dir = cfg.paths.manifest.parent_path();
  if (dir.empty()) dir = ".";
  const Corpus corpus = generate_corpus(dir, spec);
  if (cfg.paths.manifest.filename() != "manifest.json") save_manifest(cfg.paths.manifest, corpus);
  write_config_sidecar(dir, cfg);
}

void run_f0(const PipelineConfig& cfg) {
  const Corpus corpus = load_corpus(cfg);
  const WorkDir w = work(cfg);
  fs::create_directories(w.pitch());
  nlohmann::json durations = nlohmann::json::object();
  for (const Recording& r : corpus.recordings) {
    require(r.path);
    const AudioBuffer audio = load_wav(r.path);
    PitchTrack track = extract_pitch(audio, cfg.pitch);
    track.source_id = r.source_id;
    save_pitch_csv(w.pitch() / (r.source_id + ".csv"), track);
    durations[r.source_id] = audio.duration_seconds();
    log::info("f0", {{"source", r.source_id}, {"frames", std::to_string(track.size())}});
  }
  write_json(w.durations(), durations);
  write_config_sidecar(w.pitch(), cfg);
}

void run_contour(const PipelineConfig& cfg) {
  const Corpus corpus = load_corpus(cfg);
  const WorkDir w = work(cfg);
  fs::create_directories(w.contour());
  std::vector<PitchTrack> tracks;
  for (const Recording& r : corpus.recordings) {
    const fs::path p = w.pitch() / (r.source_id + ".csv");
    require(p);
    tracks.push_back(load_pitch_csv(p, cfg.pitch.sample_rate));
    tracks.back().source_id = r.source_id;
  }
  ClusterModel shared;
  if (cfg.cluster_scope == ClusterScope::kCorpus) {
    std::vector<double> all;
    for (const auto& t : tracks) {
      const auto v = voiced_cents(t);
      all.insert(all.end(), v.begin(), v.end());
    }
    shared = fit_clusters(all, cfg.contour);
  }
  for (const auto& t : tracks) {
    const auto phrases =
        approximate_contour(t, cfg.contour, cfg.cluster_scope == ClusterScope::kCorpus ? &shared : nullptr);
    save_contours_json(w.contour() / (t.source_id + ".json"), phrases);
    log::info("contour", {{"source", t.source_id}, {"phrases", std::to_string(phrases.size())}});
  }
  write_config_sidecar(w.contour(), cfg);
}

void run_mine(const PipelineConfig& cfg) {
  const Corpus corpus = load_corpus(cfg);
  const WorkDir w = work(cfg);
  fs::create_directories(w.dict());
  std::vector<SequenceDatabase> dbs;
  for (const std::string& singer : corpus.singers()) {
    SequenceDatabase db;
    db.owner = singer;
    for (const Recording& r : corpus.recordings) {
      if (r.singer != singer) continue;
      const fs::path p = w.contour() / (r.source_id + ".json");
      require(p);
      for (auto& s : load_contours_json(p)) db.sequences.push_back(std::move(s));
    }
    dbs.push_back(std::move(db));
  }
  for (const MotifDictionary& d : build_dictionary(dbs, cfg.mining)) {
    save_dictionary_json(w.dict() / (d.singer + ".json"), d);
  }
  write_config_sidecar(w.dict(), cfg);
}

void run_datasets(const PipelineConfig& cfg) {
  const Corpus corpus = load_corpus(cfg);
  const WorkDir w = work(cfg);
  std::vector<MotifDictionary> dicts;
  for (const std::string& singer : corpus.singers()) {
    const fs::path p = w.dict() / (singer + ".json");
    require(p);
    dicts.push_back(load_dictionary_json(p));
  }
  const auto variants = build_datasets(corpus, dicts, load_durations(w), cfg.pitch, cfg.dataset);
  fs::create_directories(w.datasets());
  for (const Dataset& d : variants) write_json(w.dataset(d.kind), to_json(d));
  write_config_sidecar(w.datasets(), cfg);
}

void run_features(const PipelineConfig& cfg, DatasetKind dataset, FeatureKind feature) {
  const WorkDir w = work(cfg);
  const Dataset d = load_dataset(w, dataset);
  const auto feats = extract_dataset_features(d, load_corpus(cfg), feature, cfg.features);
  const fs::path dir = w.features() / (std::string(to_string(dataset)) + "_" + to_string(feature));
  fs::create_directories(dir);
  for (std::size_t i = 0; i < feats.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.feat", i);
    save_feature_file(dir / name, feats[i]);
  }
  write_config_sidecar(dir, cfg);
}

TrainReport train_cell(const PipelineConfig& cfg, const Cell& cell) {
  return train_and_save(cfg, cell, false).report;
}

EvalReport eval_cell(const PipelineConfig& cfg, const Cell& cell) {
  const WorkDir w = work(cfg);
  const fs::path dir = run_dir(cfg, cell);
  const nlohmann::json side = read_json(dir / "model.json");
  require(dir / "model.ckpt");
  const ArchitectureConfig arch = architecture_from_json(side.at("architecture"));
  Rng init(side.at("seed").get<std::uint64_t>());
  auto model = models::build_model<float>(arch, init);
  nn::load_state(*model, nn::load_tensor_table((dir / "model.ckpt").string()));
  const Normalizer norm = normalizer_from_json(side.at("normalizer"));

  const Dataset test = subset(load_dataset(w, cell.dataset), Split::kTest);
  if (test.singers != side.at("singers").get<std::vector<std::string>>()) {
    throw FormatError("dataset singers differ from the checkpoint's");
  }
  const auto feats = extract_dataset_features(test, load_corpus(cfg), cell.feature, cfg.features);
  std::vector<std::size_t> all(feats.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return write_eval(cfg, cell, evaluate(*model, make_set(feats, all, norm), cfg.auc_average));
}

CellResult run_cell(const PipelineConfig& cfg, const Cell& cell) {
  TrainedCell t = train_and_save(cfg, cell, true);
  CellResult r;
  r.cell = cell;
  r.train = t.report;
  r.eval = write_eval(cfg, cell, evaluate(*t.model, t.test, cfg.auc_average));
  return r;
}

std::vector<CellResult> run_grid(const PipelineConfig& cfg) {
  const std::vector<Cell> cells = grid_cells(cfg);
  const WorkDir w = work(cfg);
  fs::create_directories(w.runs());
  std::vector<CellResult> results;
  if (cfg.grid.jobs <= 1) {
    for (const Cell& c : cells) results.push_back(run_cell(cfg, c));
  } else {
    std::map<pid_t, std::string> running;
    std::vector<std::string> failed;
    auto reap_one = [&] {
      int status = 0;
      const pid_t pid = ::waitpid(-1, &status, 0);
      if (pid <= 0) throw Error("internal", "waitpid failed");
      if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) failed.push_back(running[pid]);
      running.erase(pid);
    };
    for (const Cell& c : cells) {
      while (static_cast<int>(running.size()) >= cfg.grid.jobs) reap_one();
      std::cout.flush();
      std::cerr.flush();
      const pid_t pid = ::fork();
      if (pid < 0) throw Error("internal", "fork failed");
      if (pid == 0) {
        int code = 0;
        try {
          run_cell(cfg, c);
        } catch (const std::exception& e) {
          log::write(log::Level::kError, "grid", {{"cell", c.name()}, {"error", e.what()}});
          code = 1;
        }
        std::cerr.flush();
        ::_exit(code);
      }
      running[pid] = c.name();
    }
    while (!running.empty()) reap_one();
    if (!failed.empty()) throw Error("grid", "cells failed: " + failed.front());
    for (const Cell& c : cells) results.push_back(read_result(cfg, c));
  }
  write_results_csv(w.results(), results);
  write_config_sidecar(w.runs(), cfg);
  return results;
}

void write_results_csv(const fs::path& path, const std::vector<CellResult>& rows) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "model,dataset,feature,accuracy_pct,auc\n";
  for (const CellResult& r : rows) {
    out << to_string(r.cell.model) << ',' << to_string(r.cell.dataset) << ',' << to_string(r.cell.feature)
        << ',' << format_number(r.eval.accuracy_pct, 2) << ',' << format_number(r.eval.auc, 4) << '\n';
  }
}

std::vector<CellResult> run_pipeline(const PipelineConfig& cfg) {
  run_f0(cfg);
  run_contour(cfg);
  run_mine(cfg);
  run_datasets(cfg);
  return run_grid(cfg);
}

}  // namespace cante
