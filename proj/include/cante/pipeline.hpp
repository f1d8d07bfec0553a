#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cante/config.hpp"

namespace cante {

inline constexpr int kConfigFormatVersion = 1;
inline constexpr int kRunFormatVersion = 1;

/// Layout of the working directory shared by all stages.
struct WorkDir {
  std::filesystem::path root;

  std::filesystem::path pitch() const { return root / "pitch"; }
  std::filesystem::path contour() const { return root / "contour"; }
  std::filesystem::path dict() const { return root / "dict"; }
  std::filesystem::path datasets() const { return root / "datasets"; }
  std::filesystem::path features() const { return root / "features"; }
  std::filesystem::path runs() const { return root / "runs"; }
  std::filesystem::path results() const { return root / "results.csv"; }
  std::filesystem::path durations() const { return pitch() / "durations.json"; }
  std::filesystem::path dataset(DatasetKind kind) const;
};

struct Cell {
  ModelKind model = ModelKind::kResBlstm;
  DatasetKind dataset = DatasetKind::kMotifs;
  FeatureKind feature = FeatureKind::kMelSpec;
  std::string name() const;
};

struct CellResult {
  Cell cell;
  EvalReport eval;
  TrainReport train;
};

/// Manifest named by the config, checked for the minimum recordings per singer.
Corpus load_corpus(const PipelineConfig& cfg);

/// Writes the full config next to a stage's outputs.
void write_config_sidecar(const std::filesystem::path& dir, const PipelineConfig& cfg);

void run_synth(const PipelineConfig& cfg);
void run_f0(const PipelineConfig& cfg);
void run_contour(const PipelineConfig& cfg);
void run_mine(const PipelineConfig& cfg);
void run_datasets(const PipelineConfig& cfg);
/// Feature files for every instance of one dataset variant.
void run_features(const PipelineConfig& cfg, DatasetKind dataset, FeatureKind feature);

/// Trains one grid cell and writes its checkpoint, sidecar and report.
TrainReport train_cell(const PipelineConfig& cfg, const Cell& cell);
/// Evaluates a trained cell on its test split and writes eval.json.
EvalReport eval_cell(const PipelineConfig& cfg, const Cell& cell);
/// Train then evaluate, sharing the extracted features.
CellResult run_cell(const PipelineConfig& cfg, const Cell& cell);

/// Every configured cell, `cfg.grid.jobs` worker processes at a time, then
/// the results table.
std::vector<CellResult> run_grid(const PipelineConfig& cfg);
void write_results_csv(const std::filesystem::path& path, const std::vector<CellResult>& rows);

/// f0, contour, mine, dataset and grid in order.
std::vector<CellResult> run_pipeline(const PipelineConfig& cfg);

}  // namespace cante
