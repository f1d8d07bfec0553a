#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cante/contour.hpp"
#include "cante/features.hpp"
#include "cante/mining.hpp"
#include "cante/models.hpp"
#include "cante/pitch.hpp"
#include "cante/synth.hpp"
#include "cante/training.hpp"

namespace cante {

enum class ClusterScope { kRecording, kCorpus };

/// Every tunable of the pipeline. Serialises to one JSON document with a
/// section per stage; defaults are the reference values.
struct PipelineConfig {
  struct Paths {
    std::filesystem::path manifest = "corpus/manifest.json";
    std::filesystem::path work_dir = "work";
  } paths;

  int min_recordings = 3;
  PitchParams pitch;
  ContourParams contour;
  ClusterScope cluster_scope = ClusterScope::kRecording;
  MiningParams mining;
  FeatureParams features;
  DatasetParams dataset;
  std::map<ModelKind, ArchitectureConfig> architectures = default_architectures();
  TrainParams train;
  AucAverage auc_average = AucAverage::kMacro;

  struct Grid {
    std::vector<ModelKind> models{ModelKind::kCrnn, ModelKind::kResnet, ModelKind::kResBlstm};
    std::vector<DatasetKind> datasets{DatasetKind::kMotifs, DatasetKind::kMotifsSegment,
                                      DatasetKind::kRandom};
    std::vector<FeatureKind> features{FeatureKind::kSpec, FeatureKind::kMelSpec, FeatureKind::kMfcc};
    int jobs = 1;
  } grid;

  struct Synth {
    int recordings_per_singer = 4;
    double duration_seconds = 30.0;
    std::uint64_t seed = 7;
    std::filesystem::path profiles;  // empty selects the built-in voices
  } synth;

  static std::map<ModelKind, ArchitectureConfig> default_architectures();
  /// Architecture for `kind` with n_classes set to the singer count.
  ArchitectureConfig architecture(ModelKind kind, int n_classes) const;
};

nlohmann::json to_json(const PipelineConfig& cfg);
/// Missing keys keep their defaults; unknown keys are a ConfigError.
PipelineConfig config_from_json(const nlohmann::json& j);
PipelineConfig load_config(const std::filesystem::path& path);

/// Applies `section.key=value` to a config document. The value is read as
/// JSON when it parses and as a plain string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

}  // namespace cante
