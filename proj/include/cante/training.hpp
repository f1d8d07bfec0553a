#pragma once

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cante/audio_io.hpp"
#include "cante/features.hpp"
#include "cante/mining.hpp"
#include "cante/models.hpp"
#include "cante/pitch.hpp"

namespace cante {

enum class DatasetKind { kMotifs = 0, kMotifsSegment = 1, kRandom = 2 };

const char* to_string(DatasetKind kind);
DatasetKind dataset_kind_from_string(const std::string& name);

enum class Split { kTrain = 0, kVal = 1, kTest = 2 };

/// One audio excerpt with its singer label. For MOTIFS_SEGMENT the span is
/// the motif and `window_seconds` the centred context length.
struct Instance {
  std::string source_id;
  std::string singer;
  int label = 0;
  double start_seconds = 0.0;
  double end_seconds = 0.0;
  double window_seconds = 0.0;
  Eigen::Index start_frame = -1;  // pitch frames of the motif, -1 for random crops
  Eigen::Index end_frame = -1;

  double duration() const { return end_seconds - start_seconds; }
};

struct Dataset {
  DatasetKind kind = DatasetKind::kMotifs;
  std::vector<std::string> singers;  // label -> name
  std::vector<Instance> instances;
  std::vector<Split> split;          // parallel to instances

  std::vector<std::size_t> indices(Split s) const;
};

struct DatasetParams {
  double test_fraction = 0.2;
  double val_fraction = 0.1;
  double segment_seconds = 3.0;
  int max_instances_per_singer = 0;  // 0 keeps all
  bool split_by_recording = false;
  std::uint64_t seed = 13;
};

/// Seconds covered by pitch frames [start_frame, end_frame).
std::pair<double, double> frame_span_seconds(Eigen::Index start_frame, Eigen::Index end_frame,
                                             const PitchParams& pitch);

/// Builds MOTIFS, MOTIFS_SEGMENT and RANDOM over the same per-recording
/// instance counts and the same train/val/test assignment. Random crops avoid
/// every mined motif span of their recording. `durations` maps source_id to
/// recording length in seconds.
std::array<Dataset, 3> build_datasets(const Corpus& corpus,
                                      const std::vector<MotifDictionary>& dictionaries,
                                      const std::map<std::string, double>& durations,
                                      const PitchParams& pitch, const DatasetParams& params);

nlohmann::json to_json(const Dataset& d);
Dataset dataset_from_json(const nlohmann::json& j);

/// Cuts the instance's audio out of its recording.
AudioBuffer instance_audio(const AudioBuffer& recording, const Instance& inst);

/// Feature matrices for every instance, loading each recording once.
std::vector<FeatureMatrix> extract_dataset_features(const Dataset& d, const Corpus& corpus,
                                                    FeatureKind kind,
                                                    const FeatureParams& params = {});

/// Per-row standardisation over valid frames; padding stays zero.
struct Normalizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;  // zero for constant rows, which map to zero

  static Normalizer fit(const std::vector<const FeatureMatrix*>& train);
  FeatureGrid apply(const FeatureMatrix& m) const;
};

nlohmann::json to_json(const Normalizer& n);
Normalizer normalizer_from_json(const nlohmann::json& j);

struct LabeledSet {
  std::vector<FeatureGrid> inputs;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

struct TrainParams {
  int batch_size = 64;
  int max_epochs = 20;
  int patience = 2;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0, train_accuracy = 0;
  double val_loss = 0, val_accuracy = 0;
  double seconds = 0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  int best_epoch = 0;
  int stopped_epoch = 0;
  double wall_seconds = 0;
};

nlohmann::json to_json(const TrainReport& r);

/// Adam on mean cross-entropy with early stopping on validation loss. The
/// model ends holding the parameters of its best validation epoch.
TrainReport train(models::Model<float>& model, const LabeledSet& train_set,
                  const LabeledSet& val_set, const TrainParams& params);

/// Early-stopping rule: index of the epoch training halts after, given the
/// validation losses seen so far (or -1 to continue).
int stopping_epoch(const std::vector<double>& val_losses, int patience, int max_epochs);

/// Class probabilities [n, classes] in inference mode.
Eigen::MatrixXd predict(models::Model<float>& model, const std::vector<FeatureGrid>& inputs,
                        int batch_size = 64);

double mean_cross_entropy(models::Model<float>& model, const LabeledSet& set, int batch_size = 64);

enum class AucAverage { kMacro, kMicro };

struct EvalReport {
  double accuracy_pct = 0;
  double auc = 0;
  Eigen::MatrixXi confusion;      // rows true class, columns predicted
  std::vector<int> excluded_classes;
};

/// Area under the ROC curve by trapezoidal integration; tied scores form a
/// single ROC step. Needs at least one positive and one negative.
double roc_auc(const std::vector<double>& scores, const std::vector<bool>& positive);

EvalReport evaluate_scores(const Eigen::MatrixXd& scores, const std::vector<int>& labels,
                           AucAverage average = AucAverage::kMacro);

EvalReport evaluate(models::Model<float>& model, const LabeledSet& test_set,
                    AucAverage average = AucAverage::kMacro);

nlohmann::json to_json(const EvalReport& r);

}  // namespace cante
