#include "cante/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <tuple>

#include "cante/error.hpp"
#include "cante/log.hpp"
#include "cante/nn/checkpoint.hpp"
#include "cante/nn/optim.hpp"
#include "cante/random.hpp"

namespace cante {

const char* to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::kMotifs: return "motifs";
    case DatasetKind::kMotifsSegment: return "motifs_segment";
    case DatasetKind::kRandom: return "random";
  }
  return "?";
}

DatasetKind dataset_kind_from_string(const std::string& name) {
  if (name == "motifs") return DatasetKind::kMotifs;
  if (name == "motifs_segment") return DatasetKind::kMotifsSegment;
  if (name == "random") return DatasetKind::kRandom;
  throw ConfigError("unknown dataset kind '" + name + "'");
}

std::vector<std::size_t> Dataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.size(); ++i) {
    if (split[i] == s) out.push_back(i);
  }
  return out;
}

std::pair<double, double> frame_span_seconds(Eigen::Index start_frame, Eigen::Index end_frame,
                                             const PitchParams& pitch) {
  if (end_frame <= start_frame) throw ArgumentError("empty frame span");
  const double sr = pitch.sample_rate;
  const double half_hop = 0.5 * pitch.hop / sr;
  const auto centre = [&](Eigen::Index t) {
    return (static_cast<double>(t) * pitch.hop + 0.5 * pitch.window) / sr;
  };
  return {centre(start_frame) - half_hop, centre(end_frame - 1) + half_hop};
}

namespace {

using Span = std::pair<double, double>;

// Onset for a crop of length d avoiding `blocked`, uniform over all valid
// onsets in [0, total - d]; returns NaN when none exists.
double free_onset(std::vector<Span> blocked, double total, double d, Rng& rng) {
  std::sort(blocked.begin(), blocked.end());
  std::vector<Span> free;
  double cursor = 0.0;
  for (const auto& [a, b] : blocked) {
    if (a > cursor) free.emplace_back(cursor, a);
    cursor = std::max(cursor, b);
  }
  if (cursor < total) free.emplace_back(cursor, total);
  double measure = 0.0;
  for (const auto& [a, b] : free) measure += std::max(0.0, (b - a) - d);
  if (!(measure > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  double u = rng.uniform() * measure;
  for (const auto& [a, b] : free) {
    const double room = std::max(0.0, (b - a) - d);
    if (u < room) return a + u;
    u -= room;
  }
  return free.back().second - d;
}

struct Group {
  std::vector<std::size_t> members;
};

// Walks groups in order, moving them into `target` until `want` members moved.
void take_groups(const std::vector<Group>& groups, std::vector<bool>& used, std::size_t want,
                 std::vector<Split>& split, Split target, std::size_t keep_free_groups = 0) {
  std::size_t taken = 0;
  std::size_t remaining = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) remaining += used[g] ? 0 : 1;
  for (std::size_t g = 0; g < groups.size() && taken < want; ++g) {
    if (used[g]) continue;
    if (remaining <= keep_free_groups) break;
    used[g] = true;
    --remaining;
    for (std::size_t i : groups[g].members) split[i] = target;
    taken += groups[g].members.size();
  }
}

}  // namespace

std::array<Dataset, 3> build_datasets(const Corpus& corpus,
                                      const std::vector<MotifDictionary>& dictionaries,
                                      const std::map<std::string, double>& durations,
                                      const PitchParams& pitch, const DatasetParams& params) {
  if (params.test_fraction < 0 || params.test_fraction >= 1 || params.val_fraction < 0 ||
      params.val_fraction >= 1) {
    throw ConfigError("split fractions must lie in [0, 1)");
  }
  if (!(params.segment_seconds > 0)) throw ConfigError("segment_seconds must be positive");
  std::map<std::string, std::string> singer_of;
  for (const auto& r : corpus.recordings) singer_of[r.source_id] = r.singer;
  std::map<std::string, const MotifDictionary*> dict_of;
  for (const auto& d : dictionaries) dict_of[d.singer] = &d;
  const Rng root(params.seed);

  std::array<Dataset, 3> out;
  out[0].kind = DatasetKind::kMotifs;
  out[1].kind = DatasetKind::kMotifsSegment;
  out[2].kind = DatasetKind::kRandom;

  for (const std::string& singer : corpus.singers()) {
    std::set<std::tuple<std::string, Eigen::Index, Eigen::Index>> spans;
    if (auto it = dict_of.find(singer); it != dict_of.end()) {
      for (const Motif& m : it->second->motifs) {
        for (const Occurrence& o : m.occurrences) {
          auto s = singer_of.find(o.source_id);
          if (s == singer_of.end() || s->second != singer) {
            log::warn("dataset", {{"singer", singer}, {"skipped_source", o.source_id}});
            continue;
          }
          spans.emplace(o.source_id, o.start_frame, o.end_frame);
        }
      }
    }
    if (spans.empty()) {
      log::warn("dataset", {{"singer", singer}, {"excluded", "no motif occurrences"}});
      continue;
    }
    // Random crops stay clear of every mined span, selected or not.
    std::map<std::string, std::vector<Span>> motif_spans;
    for (const auto& [source, s, e] : spans) {
      const auto [t0, t1] = frame_span_seconds(s, e, pitch);
      motif_spans[source].emplace_back(t0, t1);
    }
    std::vector<std::tuple<std::string, Eigen::Index, Eigen::Index>> chosen(spans.begin(), spans.end());
    if (params.max_instances_per_singer > 0 &&
        chosen.size() > static_cast<std::size_t>(params.max_instances_per_singer)) {
      Rng rng = root.fork("cap/" + singer);
      rng.shuffle(chosen);
      chosen.resize(static_cast<std::size_t>(params.max_instances_per_singer));
      std::sort(chosen.begin(), chosen.end());
    }

    const int label = static_cast<int>(out[0].singers.size());
    for (auto& d : out) d.singers.push_back(singer);
    const std::size_t first = out[0].instances.size();

    std::vector<double> motif_durations;
    for (const auto& [source, s, e] : chosen) {
      auto [t0, t1] = frame_span_seconds(s, e, pitch);
      const auto dur = durations.find(source);
      if (dur == durations.end()) throw DependencyError("no duration known for " + source);
      t0 = std::max(0.0, t0);
      t1 = std::min(dur->second, t1);
      Instance inst{source, singer, label, t0, t1, 0.0, s, e};
      out[0].instances.push_back(inst);
      inst.window_seconds = params.segment_seconds;
      out[1].instances.push_back(inst);
      motif_durations.push_back(t1 - t0);
    }

    // Random crops: same count per recording, durations from this singer's motifs.
    std::map<std::string, Rng> crop_rng;
    for (const auto& [source, s, e] : chosen) {
      (void)s;
      (void)e;
      auto it = crop_rng.find(source);
      if (it == crop_rng.end()) it = crop_rng.emplace(source, root.fork("random/" + source)).first;
      Rng& rng = it->second;
      const double total = durations.at(source);
      double onset = std::numeric_limits<double>::quiet_NaN();
      double d = 0.0;
      for (int attempt = 0; attempt < 64 && std::isnan(onset); ++attempt) {
        d = motif_durations[rng.uniform_int(motif_durations.size())];
        onset = free_onset(motif_spans[source], total, d, rng);
      }
      if (std::isnan(onset)) {
        throw ArgumentError("no motif-free stretch of audio in " + source +
                            " is long enough for a random crop");
      }
      out[2].instances.push_back({source, singer, label, onset, onset + d, 0.0, -1, -1});
    }

    // Shared split. Instances whose context windows coincide stay together.
    const std::size_t n = chosen.size();
    std::vector<Split> split(n, Split::kTrain);
    auto make_groups = [&](bool by_recording, const std::vector<std::size_t>& subset) {
      std::map<std::pair<std::string, long long>, std::size_t> index;
      std::vector<Group> groups;
      for (std::size_t i : subset) {
        const Instance& inst = out[0].instances[first + i];
        const long long key =
            by_recording ? 0 : std::llround(500.0 * (inst.start_seconds + inst.end_seconds));
        auto [it, fresh] = index.emplace(std::make_pair(inst.source_id, key), groups.size());
        if (fresh) groups.emplace_back();
        groups[it->second].members.push_back(i);
      }
      return groups;
    };
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    std::vector<Group> groups = make_groups(params.split_by_recording, all);
    Rng split_rng = root.fork("split/" + singer);
    split_rng.shuffle(groups);
    std::vector<bool> used(groups.size(), false);
    const auto n_test = static_cast<std::size_t>(std::llround(params.test_fraction * n));
    take_groups(groups, used, n_test, split, Split::kTest, 1);

    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < n; ++i) {
      if (split[i] == Split::kTrain) rest.push_back(i);
    }
    std::vector<Group> val_groups = make_groups(false, rest);
    split_rng.shuffle(val_groups);
    std::vector<bool> val_used(val_groups.size(), false);
    const auto n_val = static_cast<std::size_t>(std::llround(params.val_fraction * rest.size()));
    take_groups(val_groups, val_used, n_val, split, Split::kVal, 1);
    for (auto& d : out) d.split.insert(d.split.end(), split.begin(), split.end());

    log::info("dataset", {{"singer", singer},
                          {"instances", std::to_string(n)},
                          {"test", std::to_string(std::count(split.begin(), split.end(), Split::kTest))},
                          {"val", std::to_string(std::count(split.begin(), split.end(), Split::kVal))}});
  }
  if (out[0].singers.size() < 2) throw ArgumentError("datasets need at least two singers with motifs");
  return out;
}

nlohmann::json to_json(const Dataset& d) {
  nlohmann::json items = nlohmann::json::array();
  for (std::size_t i = 0; i < d.instances.size(); ++i) {
    const Instance& x = d.instances[i];
    items.push_back({{"source_id", x.source_id},
                     {"singer", x.singer},
                     {"label", x.label},
                     {"start_seconds", x.start_seconds},
                     {"end_seconds", x.end_seconds},
                     {"window_seconds", x.window_seconds},
                     {"start_frame", x.start_frame},
                     {"end_frame", x.end_frame},
                     {"split", static_cast<int>(d.split[i])}});
  }
  return {{"kind", to_string(d.kind)}, {"singers", d.singers}, {"instances", items}};
}

Dataset dataset_from_json(const nlohmann::json& j) {
  Dataset d;
  try {
    d.kind = dataset_kind_from_string(j.at("kind").get<std::string>());
    d.singers = j.at("singers").get<std::vector<std::string>>();
    for (const auto& x : j.at("instances")) {
      Instance inst;
      inst.source_id = x.at("source_id").get<std::string>();
      inst.singer = x.at("singer").get<std::string>();
      inst.label = x.at("label").get<int>();
      inst.start_seconds = x.at("start_seconds").get<double>();
      inst.end_seconds = x.at("end_seconds").get<double>();
      inst.window_seconds = x.at("window_seconds").get<double>();
      inst.start_frame = x.at("start_frame").get<Eigen::Index>();
      inst.end_frame = x.at("end_frame").get<Eigen::Index>();
      const int s = x.at("split").get<int>();
      if (s < 0 || s > 2) throw FormatError("bad split value");
      if (inst.label < 0 || inst.label >= static_cast<int>(d.singers.size())) {
        throw FormatError("label out of range");
      }
      d.instances.push_back(inst);
      d.split.push_back(static_cast<Split>(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad dataset index: ") + e.what());
  }
  return d;
}

AudioBuffer instance_audio(const AudioBuffer& recording, const Instance& inst) {
  if (inst.window_seconds > 0) {
    return slice_centered(recording, inst.start_seconds, inst.end_seconds, inst.window_seconds);
  }
  return slice_padded(recording, inst.start_seconds, inst.end_seconds);
}

std::vector<FeatureMatrix> extract_dataset_features(const Dataset& d, const Corpus& corpus,
                                                    FeatureKind kind, const FeatureParams& params) {
  std::map<std::string, std::filesystem::path> path_of;
  for (const auto& r : corpus.recordings) path_of[r.source_id] = r.path;
  std::vector<FeatureMatrix> out;
  out.reserve(d.instances.size());
  std::string loaded_id;
  AudioBuffer loaded;
  for (const Instance& inst : d.instances) {
    if (inst.source_id != loaded_id) {
      auto it = path_of.find(inst.source_id);
      if (it == path_of.end()) throw DependencyError("recording " + inst.source_id + " not in corpus");
      loaded = load_wav(it->second);
      loaded_id = inst.source_id;
    }
    FeatureMatrix m = compute_features(kind, instance_audio(loaded, inst), params);
    m.source = {inst.source_id, inst.start_frame, inst.end_frame, inst.singer, inst.label};
    out.push_back(std::move(m));
  }
  return out;
}

Normalizer Normalizer::fit(const std::vector<const FeatureMatrix*>& train) {
  if (train.empty()) throw ArgumentError("cannot fit a normalizer on no data");
  const Eigen::Index rows = train[0]->data.rows();
  Normalizer n;
  n.mean = Eigen::VectorXd::Zero(rows);
  n.stddev = Eigen::VectorXd::Zero(rows);
  double count = 0;
  for (const FeatureMatrix* m : train) {
    const Eigen::Index v = m->valid_frames;
    n.mean += m->data.leftCols(v).cast<double>().rowwise().sum();
    count += static_cast<double>(v);
  }
  if (count == 0) throw ArgumentError("training features have no valid frames");
  n.mean /= count;
  for (const FeatureMatrix* m : train) {
    const Eigen::Index v = m->valid_frames;
    n.stddev +=
        (m->data.leftCols(v).cast<double>().colwise() - n.mean).array().square().rowwise().sum().matrix();
  }
  n.stddev = (n.stddev / count).cwiseSqrt();
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (n.stddev[r] <= 1e-9 * std::max(1.0, std::abs(n.mean[r]))) n.stddev[r] = 0.0;
  }
  return n;
}

FeatureGrid Normalizer::apply(const FeatureMatrix& m) const {
  if (m.data.rows() != mean.size()) throw ShapeError("normalizer row count mismatch");
  FeatureGrid out = FeatureGrid::Zero(m.data.rows(), m.data.cols());
  const Eigen::Index v = m.valid_frames;
  for (Eigen::Index r = 0; r < m.data.rows(); ++r) {
    if (stddev[r] == 0.0) continue;
    out.row(r).head(v) =
        ((m.data.row(r).head(v).cast<double>().array() - mean[r]) / stddev[r]).cast<float>().matrix();
  }
  return out;
}

nlohmann::json to_json(const Normalizer& n) {
  return {{"mean", std::vector<double>(n.mean.data(), n.mean.data() + n.mean.size())},
          {"stddev", std::vector<double>(n.stddev.data(), n.stddev.data() + n.stddev.size())}};
}

Normalizer normalizer_from_json(const nlohmann::json& j) {
  Normalizer n;
  const auto m = j.at("mean").get<std::vector<double>>();
  const auto s = j.at("stddev").get<std::vector<double>>();
  if (m.size() != s.size()) throw FormatError("normalizer vectors differ in length");
  n.mean = Eigen::Map<const Eigen::VectorXd>(m.data(), static_cast<Eigen::Index>(m.size()));
  n.stddev = Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(s.size()));
  return n;
}

namespace {

// Batch slices of `order`; a trailing batch of one joins its predecessor
// because batch norm cannot train on a single instance.
std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t batch) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch) out.emplace_back(i, std::min(n, i + batch));
  if (out.size() > 1 && out.back().second - out.back().first == 1) {
    out.pop_back();
    out.back().second = n;
  }
  return out;
}

Eigen::MatrixXd forward_logits(models::Model<float>& model, const std::vector<FeatureGrid>& inputs,
                               int batch_size) {
  const bool was_training = model.training();
  model.set_training(false);
  nn::NoGradGuard guard;
  const int k = model.config().n_classes;
  Eigen::MatrixXd logits(static_cast<Eigen::Index>(inputs.size()), k);
  for (std::size_t i = 0; i < inputs.size(); i += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(inputs.size(), i + static_cast<std::size_t>(batch_size));
    std::vector<const FeatureGrid*> grids;
    for (std::size_t j = i; j < end; ++j) grids.push_back(&inputs[j]);
    auto out = model.forward(nn::Var<float>::leaf(models::batch_tensor<float>(grids)));
    logits.middleRows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(end - i)) =
        out.logits.value().matrix(static_cast<Eigen::Index>(end - i), k).cast<double>();
  }
  model.set_training(was_training);
  return logits;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    p.row(i) = (logits.row(i).array() - logits.row(i).maxCoeff()).exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

double cross_entropy_of(const Eigen::MatrixXd& logits, const std::vector<int>& labels) {
  double total = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    total += lse - logits(i, labels[static_cast<std::size_t>(i)]);
  }
  return total / static_cast<double>(logits.rows());
}

double accuracy_of(const Eigen::MatrixXd& scores, const std::vector<int>& labels) {
  int correct = 0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index arg = 0;
    scores.row(i).maxCoeff(&arg);
    correct += arg == labels[static_cast<std::size_t>(i)] ? 1 : 0;
  }
  return 100.0 * correct / static_cast<double>(scores.rows());
}

}  // namespace

int stopping_epoch(const std::vector<double>& val_losses, int patience, int max_epochs) {
  double best = std::numeric_limits<double>::infinity();
  int bad = 0;
  for (std::size_t i = 0; i < val_losses.size(); ++i) {
    const int epoch = static_cast<int>(i) + 1;
    if (val_losses[i] < best) {
      best = val_losses[i];
      bad = 0;
    } else if (++bad >= patience) {
      return epoch;
    }
    if (epoch >= max_epochs) return epoch;
  }
  return -1;
}

TrainReport train(models::Model<float>& model, const LabeledSet& train_set,
                  const LabeledSet& val_set, const TrainParams& params) {
  if (train_set.size() == 0) throw ArgumentError("empty training set");
  if (train_set.size() < 2) throw ArgumentError("training needs at least two instances");
  if (params.batch_size < 2 || params.max_epochs < 1 || params.patience < 1) {
    throw ConfigError("batch_size >= 2, max_epochs >= 1 and patience >= 1 required");
  }
  const auto wall_start = std::chrono::steady_clock::now();
  Rng rng(params.seed);
  model.reseed_dropout(rng.fork("dropout").next_u64());
  Rng order_rng = rng.fork("order");
  nn::Adam<float> opt(model.parameters(), {params.learning_rate, 0.9, 0.999, 1e-8});
  const bool has_val = val_set.size() > 0;
  if (!has_val) log::warn("train", {{"validation", "empty; monitoring training loss"}});

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  TrainReport report;
  std::vector<double> monitored;
  double best = std::numeric_limits<double>::infinity();
  nn::TensorTable best_state;
  const int k = model.config().n_classes;

  for (int epoch = 1; epoch <= params.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    model.set_training(true);
    order_rng.shuffle(order);
    double loss_sum = 0;
    int correct = 0;
    for (const auto& [b0, b1] : batch_ranges(order.size(), static_cast<std::size_t>(params.batch_size))) {
      std::vector<const FeatureGrid*> grids;
      std::vector<int> labels;
      for (std::size_t i = b0; i < b1; ++i) {
        grids.push_back(&train_set.inputs[order[i]]);
        labels.push_back(train_set.labels[order[i]]);
      }
      auto out = model.forward(nn::Var<float>::leaf(models::batch_tensor<float>(grids)));
      auto loss = nn::cross_entropy(out.logits, labels);
      const auto logits = out.logits.value().matrix(static_cast<Eigen::Index>(labels.size()), k);
      for (std::size_t i = 0; i < labels.size(); ++i) {
        Eigen::Index arg = 0;
        logits.row(static_cast<Eigen::Index>(i)).maxCoeff(&arg);
        correct += arg == labels[i] ? 1 : 0;
      }
      loss_sum += static_cast<double>(loss.value()[0]) * static_cast<double>(labels.size());
      nn::backward(loss);
      opt.step();
      opt.zero_grad();
    }
    EpochStats st;
    st.epoch = epoch;
    st.train_loss = loss_sum / static_cast<double>(order.size());
    st.train_accuracy = 100.0 * correct / static_cast<double>(order.size());
    if (has_val) {
      const Eigen::MatrixXd logits = forward_logits(model, val_set.inputs, params.batch_size);
      st.val_loss = cross_entropy_of(logits, val_set.labels);
      st.val_accuracy = accuracy_of(logits, val_set.labels);
    } else {
      st.val_loss = st.train_loss;
      st.val_accuracy = st.train_accuracy;
    }
    st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.epochs.push_back(st);
    log::info("train", {{"epoch", std::to_string(epoch)},
                        {"train_loss", std::to_string(st.train_loss)},
                        {"train_acc", std::to_string(st.train_accuracy)},
                        {"val_loss", std::to_string(st.val_loss)},
                        {"val_acc", std::to_string(st.val_accuracy)}});
    if (st.val_loss < best) {
      best = st.val_loss;
      best_state = nn::state_of(model);
      report.best_epoch = epoch;
    }
    monitored.push_back(st.val_loss);
    const int stop = stopping_epoch(monitored, params.patience, params.max_epochs);
    report.stopped_epoch = epoch;
    if (stop > 0) break;
  }
  if (!best_state.empty()) nn::load_state(model, best_state);
  model.set_training(false);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
  return report;
}

Eigen::MatrixXd predict(models::Model<float>& model, const std::vector<FeatureGrid>& inputs,
                        int batch_size) {
  if (inputs.empty()) return Eigen::MatrixXd(0, model.config().n_classes);
  return softmax_rows(forward_logits(model, inputs, batch_size));
}

double mean_cross_entropy(models::Model<float>& model, const LabeledSet& set, int batch_size) {
  if (set.size() == 0) throw ArgumentError("empty set");
  return cross_entropy_of(forward_logits(model, set.inputs, batch_size), set.labels);
}

double roc_auc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) throw ArgumentError("score/label length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double pos = 0, neg = 0;
  for (bool p : positive) (p ? pos : neg) += 1;
  if (pos == 0 || neg == 0) throw ArgumentError("AUC needs positives and negatives");
  // Twice the area in units of (1/pos)(1/neg); stays integral until the end.
  double twice_area = 0, tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    double dtp = 0, dfp = 0;
    std::size_t j = i;
    for (; j < order.size() && scores[order[j]] == scores[order[i]]; ++j) {
      (positive[order[j]] ? dtp : dfp) += 1;
    }
    twice_area += dfp * (2 * tp + dtp);
    tp += dtp;
    fp += dfp;
    i = j;
  }
  return twice_area / (2.0 * pos * neg);
}

EvalReport evaluate_scores(const Eigen::MatrixXd& scores, const std::vector<int>& labels,
                           AucAverage average) {
  const Eigen::Index n = scores.rows(), k = scores.cols();
  if (n == 0) throw ArgumentError("cannot evaluate an empty test split");
  if (static_cast<Eigen::Index>(labels.size()) != n) throw ArgumentError("label count mismatch");
  EvalReport r;
  r.confusion = Eigen::MatrixXi::Zero(k, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) throw ArgumentError("label out of range");
    Eigen::Index arg = 0;
    scores.row(i).maxCoeff(&arg);
    r.confusion(y, arg) += 1;
  }
  r.accuracy_pct = 100.0 * r.confusion.trace() / static_cast<double>(n);

  if (average == AucAverage::kMicro) {
    std::vector<double> s;
    std::vector<bool> p;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index c = 0; c < k; ++c) {
        s.push_back(scores(i, c));
        p.push_back(labels[static_cast<std::size_t>(i)] == c);
      }
    }
    r.auc = roc_auc(s, p);
    return r;
  }
  double total = 0;
  int used = 0;
  for (Eigen::Index c = 0; c < k; ++c) {
    std::vector<bool> p;
    for (int y : labels) p.push_back(y == c);
    const auto positives = std::count(p.begin(), p.end(), true);
    if (positives == 0 || positives == n) {
      r.excluded_classes.push_back(static_cast<int>(c));
      log::warn("eval", {{"class", std::to_string(c)}, {"excluded", "absent from test split"}});
      continue;
    }
    std::vector<double> s(scores.col(c).data(), scores.col(c).data() + n);
    total += roc_auc(s, p);
    ++used;
  }
  r.auc = used > 0 ? total / used : std::numeric_limits<double>::quiet_NaN();
  return r;
}

EvalReport evaluate(models::Model<float>& model, const LabeledSet& test_set, AucAverage average) {
  if (test_set.size() == 0) throw ArgumentError("cannot evaluate an empty test split");
  return evaluate_scores(predict(model, test_set.inputs), test_set.labels, average);
}

nlohmann::json to_json(const TrainReport& r) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"train_accuracy", e.train_accuracy},
                      {"val_loss", e.val_loss},
                      {"val_accuracy", e.val_accuracy}});
  }
  return {{"epochs", epochs}, {"best_epoch", r.best_epoch}, {"stopped_epoch", r.stopped_epoch}};
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json confusion = nlohmann::json::array();
  for (Eigen::Index i = 0; i < r.confusion.rows(); ++i) {
    std::vector<int> row(r.confusion.cols());
    for (Eigen::Index j = 0; j < r.confusion.cols(); ++j) row[j] = r.confusion(i, j);
    confusion.push_back(row);
  }
  return {{"accuracy_pct", r.accuracy_pct},
          {"auc", std::isnan(r.auc) ? nlohmann::json(nullptr) : nlohmann::json(r.auc)},
          {"confusion", confusion},
          {"excluded_classes", r.excluded_classes}};
}

}  // namespace cante
