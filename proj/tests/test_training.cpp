#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "cante/error.hpp"
#include "cante/log.hpp"
#include "cante/training.hpp"

using namespace cante;

namespace {

struct Fixture {
  Corpus corpus;
  std::vector<MotifDictionary> dicts;
  std::map<std::string, double> durations;
};

// Three singers with three 30 s recordings each; motifs every few seconds.
Fixture fixture() {
  Fixture f;
  for (const std::string singer : {"ana", "bea", "cai"}) {
    MotifDictionary dict{singer, {}};
    for (int m = 0; m < 3; ++m) dict.motifs.push_back({{m, -m, m}, 3, {}});
    for (int r = 0; r < 3; ++r) {
      const std::string source = singer + std::to_string(r);
      f.corpus.recordings.push_back({source + ".wav", singer, "style", source});
      f.durations[source] = 30.0;
      for (int k = 0; k < 12; ++k) {
        const Eigen::Index start = 100 + 420 * k + 7 * r;
        auto& motif = dict.motifs[static_cast<std::size_t>(k % 3)];
        motif.occurrences.push_back({source, start, start + 90 + 20 * (k % 4)});
      }
    }
    f.dicts.push_back(dict);
  }
  return f;
}

LabeledSet separable(int per_class, Rng& rng) {
  LabeledSet s;
  for (int i = 0; i < 2 * per_class; ++i) {
    const int label = i % 2;
    FeatureGrid g(16, 24);
    for (Eigen::Index k = 0; k < g.size(); ++k) g.data()[k] = static_cast<float>(rng.normal(0.0, 0.5));
    g.middleRows(label == 0 ? 2 : 10, 4).array() += 1.5f;
    s.inputs.push_back(g);
    s.labels.push_back(label);
  }
  return s;
}

}  // namespace

TEST_CASE("ROC area on a hand-made table") {
  // Positives 0.9 0.8 0.6 0.55 0.3 against negatives 0.7 0.55 0.4 0.2 0.1:
  // 5 + 5 + 4 + (3 + 1/2) + 2 = 19.5 winning pairs out of 25.
  const std::vector<double> scores{0.9, 0.7, 0.8, 0.55, 0.6, 0.4, 0.55, 0.2, 0.3, 0.1};
  const std::vector<bool> pos{true, false, true, false, true, false, true, false, true, false};
  CHECK(roc_auc(scores, pos) == 19.5 / 25.0);
  const std::vector<bool> flipped{false, true, false, true, false, true, false, true, false, true};
  CHECK(roc_auc(scores, flipped) == 5.5 / 25.0);
  CHECK(roc_auc({0.5, 0.5, 0.5}, {true, false, true}) == 0.5);
  CHECK_THROWS_AS(roc_auc({0.1, 0.2}, {true, true}), ArgumentError);
}

TEST_CASE("perfect and chance-level classifiers") {
  const int k = 5;
  std::vector<int> labels;
  Eigen::MatrixXd perfect = Eigen::MatrixXd::Zero(50, k);
  for (int i = 0; i < 50; ++i) {
    labels.push_back(i % k);
    perfect(i, i % k) = 1.0;
  }
  const EvalReport best = evaluate_scores(perfect, labels);
  CHECK(best.accuracy_pct == 100.0);
  CHECK(best.auc == 1.0);
  CHECK(best.confusion.trace() == 50);
  CHECK(best.confusion.rowwise().sum().isConstant(10));

  Rng rng(8);
  const int n = 5000;
  Eigen::MatrixXd noise(n, k);
  std::vector<int> truth;
  for (int i = 0; i < n; ++i) {
    truth.push_back(static_cast<int>(rng.uniform_int(k)));
    for (int c = 0; c < k; ++c) noise(i, c) = rng.uniform();
  }
  for (AucAverage avg : {AucAverage::kMacro, AucAverage::kMicro}) {
    const EvalReport chance = evaluate_scores(noise, truth, avg);
    CHECK(chance.accuracy_pct == doctest::Approx(20.0).epsilon(0.1));
    CHECK(chance.auc == doctest::Approx(0.5).epsilon(0.04));
    CHECK(chance.confusion.sum() == n);
    CHECK(chance.accuracy_pct == doctest::Approx(100.0 * chance.confusion.trace() / n));
  }
}

TEST_CASE("classes missing from the test split are left out of the macro average") {
  Eigen::MatrixXd scores(4, 3);
  scores << 0.9, 0.1, 0.0, 0.2, 0.8, 0.0, 0.7, 0.3, 0.0, 0.1, 0.9, 0.0;
  const long before = log::warning_count();
  const EvalReport r = evaluate_scores(scores, {0, 1, 0, 1});
  CHECK(r.excluded_classes == std::vector<int>{2});
  CHECK(r.auc == 1.0);
  CHECK(log::warning_count() > before);
}

TEST_CASE("patience rule") {
  CHECK(stopping_epoch({1.0, 0.9, 0.8}, 2, 20) == -1);
  CHECK(stopping_epoch({1.0, 0.9, 0.95, 0.97}, 2, 20) == 4);
  CHECK(stopping_epoch({1.0, 0.9, 0.95, 0.85, 0.86}, 2, 20) == -1);
  CHECK(stopping_epoch({1.0, 1.0, 1.0}, 2, 20) == 3);
  std::vector<double> falling;
  for (int e = 0; e < 25; ++e) falling.push_back(1.0 / (e + 1));
  CHECK(stopping_epoch(falling, 2, 20) == 20);
}

TEST_CASE("standardisation uses the training split only") {
  Rng rng(3);
  std::vector<FeatureMatrix> train;
  for (int i = 0; i < 6; ++i) {
    Eigen::MatrixXd m(128, 40 + 30 * i);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.normal(5.0 + (k % 128), 3.0);
    m.row(7).setConstant(2.0);
    train.push_back(pad_to_shape(m));
  }
  std::vector<const FeatureMatrix*> ptrs;
  for (const auto& m : train) ptrs.push_back(&m);
  const Normalizer norm = Normalizer::fit(ptrs);
  CHECK(norm.stddev[7] == 0.0);

  Eigen::VectorXd sum = Eigen::VectorXd::Zero(128), sq = Eigen::VectorXd::Zero(128);
  double count = 0;
  for (const auto& m : train) {
    const FeatureGrid g = norm.apply(m);
    CHECK(g.rightCols(kFeatureCols - m.valid_frames).isZero(0));
    const Eigen::MatrixXd v = g.leftCols(m.valid_frames).cast<double>();
    sum += v.rowwise().sum();
    sq += v.array().square().rowwise().sum().matrix();
    count += m.valid_frames;
  }
  const Eigen::VectorXd mean = sum / count;
  const Eigen::VectorXd sd = (sq / count - mean.cwiseAbs2()).cwiseSqrt();
  for (Eigen::Index r = 0; r < 128; ++r) {
    CHECK(std::abs(mean[r]) < 1e-6);
    if (r == 7) {
      CHECK(sd[r] == 0.0);
    } else {
      CHECK(std::abs(sd[r] - 1.0) < 1e-3);
    }
  }
  const Normalizer back = normalizer_from_json(to_json(norm));
  CHECK(back.mean == norm.mean);
  CHECK(back.stddev == norm.stddev);
}

TEST_CASE("a separable two-class problem is learned") {
  Rng rng(21);
  const LabeledSet train_set = separable(48, rng);
  const LabeledSet val_set = separable(8, rng);
  ArchitectureConfig cfg;
  cfg.kind = ModelKind::kResBlstm;
  cfg.n_classes = 2;
  cfg.input_rows = 16;
  cfg.input_cols = 24;
  cfg.width_multiplier = 0.25;
  cfg.blstm_hidden = 8;
  cfg.fc_units = 32;
  Rng init(5);
  auto model = models::build_model<float>(cfg, init);
  TrainParams tp;
  tp.batch_size = 16;
  tp.max_epochs = 12;
  tp.patience = 20;
  const TrainReport report = train(*model, train_set, val_set, tp);
  REQUIRE(report.epochs.size() >= 4);
  for (int e = 1; e <= 3; ++e) CHECK(report.epochs[e].train_loss < report.epochs[e - 1].train_loss);
  const EvalReport fit = evaluate(*model, train_set);
  CHECK(fit.accuracy_pct > 95.0);
  CHECK(report.stopped_epoch <= tp.max_epochs);
  for (const auto& ep : report.epochs) {
    if (ep.epoch > report.best_epoch) {
      CHECK(report.epochs[static_cast<std::size_t>(report.best_epoch - 1)].val_loss <= ep.val_loss);
    }
  }
  // The restored parameters are those of the best validation epoch.
  CHECK(mean_cross_entropy(*model, val_set) ==
        doctest::Approx(report.epochs[static_cast<std::size_t>(report.best_epoch - 1)].val_loss).epsilon(1e-4));
}

TEST_CASE("default patience halts training") {
  Rng rng(2);
  LabeledSet train_set = separable(8, rng);
  LabeledSet val_set = separable(4, rng);
  // Labels carry no information, so validation loss cannot keep falling.
  for (auto& l : val_set.labels) l = static_cast<int>(rng.uniform_int(2));
  ArchitectureConfig cfg;
  cfg.kind = ModelKind::kResBlstm;
  cfg.n_classes = 2;
  cfg.input_rows = 16;
  cfg.input_cols = 24;
  cfg.width_multiplier = 0.25;
  cfg.blstm_hidden = 4;
  cfg.fc_units = 8;
  Rng init(1);
  auto model = models::build_model<float>(cfg, init);
  TrainParams tp;
  tp.batch_size = 8;
  tp.learning_rate = 1e-2;
  const TrainReport r = train(*model, train_set, val_set, tp);
  std::vector<double> losses;
  for (const auto& e : r.epochs) losses.push_back(e.val_loss);
  CHECK(r.stopped_epoch == static_cast<int>(r.epochs.size()));
  CHECK(r.stopped_epoch <= 20);
  if (r.stopped_epoch < 20) CHECK(stopping_epoch(losses, 2, 20) == r.stopped_epoch);
  CHECK_THROWS_AS(train(*model, LabeledSet{}, val_set, tp), ArgumentError);
}

TEST_CASE("dataset variants share counts and split") {
  const Fixture f = fixture();
  const PitchParams pitch;
  DatasetParams dp;
  const auto sets = build_datasets(f.corpus, f.dicts, f.durations, pitch, dp);
  const Dataset& motifs = sets[0];
  const Dataset& segment = sets[1];
  const Dataset& random = sets[2];
  REQUIRE(motifs.singers == std::vector<std::string>{"ana", "bea", "cai"});
  CHECK(motifs.instances.size() == 3 * 36);
  CHECK(segment.instances.size() == motifs.instances.size());
  CHECK(random.instances.size() == motifs.instances.size());
  CHECK(motifs.split == segment.split);
  CHECK(motifs.split == random.split);

  for (int label = 0; label < 3; ++label) {
    std::map<std::string, int> per_source_motif, per_source_random;
    int n = 0, test = 0, val = 0;
    for (std::size_t i = 0; i < motifs.instances.size(); ++i) {
      if (motifs.instances[i].label != label) continue;
      ++n;
      test += motifs.split[i] == Split::kTest;
      val += motifs.split[i] == Split::kVal;
      ++per_source_motif[motifs.instances[i].source_id];
      ++per_source_random[random.instances[i].source_id];
    }
    CHECK(per_source_motif == per_source_random);
    CHECK(test == static_cast<int>(std::lround(0.2 * n)));
    CHECK(val == static_cast<int>(std::lround(0.1 * (n - test))));
  }

  for (const auto& inst : segment.instances) {
    CHECK(inst.window_seconds == 3.0);
    const AudioBuffer rec(Eigen::VectorXd::Ones(30 * 8000), 8000);
    CHECK(instance_audio(rec, inst).duration_seconds() == doctest::Approx(3.0));
  }

  std::set<std::tuple<std::string, double, double>> train_spans;
  for (std::size_t i = 0; i < motifs.instances.size(); ++i) {
    const auto& x = motifs.instances[i];
    if (motifs.split[i] == Split::kTrain) train_spans.emplace(x.source_id, x.start_seconds, x.end_seconds);
  }
  for (std::size_t i = 0; i < motifs.instances.size(); ++i) {
    const auto& x = motifs.instances[i];
    if (motifs.split[i] == Split::kTest) CHECK(train_spans.count({x.source_id, x.start_seconds, x.end_seconds}) == 0);
  }

  // Random crops avoid every motif occurrence of their recording.
  std::set<double> motif_durations;
  for (const auto& x : motifs.instances) motif_durations.insert(x.duration());
  for (const auto& r : random.instances) {
    CHECK(r.start_frame == -1);
    CHECK(r.start_seconds >= 0.0);
    CHECK(r.end_seconds <= 30.0);
    const auto near = motif_durations.lower_bound(r.duration() - 1e-9);
    CHECK((near != motif_durations.end() && std::abs(*near - r.duration()) < 1e-9));
    for (const auto& d : f.dicts) {
      for (const auto& m : d.motifs) {
        for (const auto& o : m.occurrences) {
          if (o.source_id != r.source_id) continue;
          const auto [t0, t1] = frame_span_seconds(o.start_frame, o.end_frame, pitch);
          CHECK((r.end_seconds <= t0 || r.start_seconds >= t1));
        }
      }
    }
  }

  const auto again = build_datasets(f.corpus, f.dicts, f.durations, pitch, dp);
  CHECK(again[0].split == motifs.split);
  for (std::size_t i = 0; i < random.instances.size(); ++i) {
    CHECK(again[2].instances[i].start_seconds == random.instances[i].start_seconds);
  }
  const Dataset parsed = dataset_from_json(to_json(random));
  CHECK(parsed.split == random.split);
  CHECK(parsed.instances.size() == random.instances.size());
  CHECK(parsed.instances[5].start_seconds == random.instances[5].start_seconds);
}

TEST_CASE("dataset edge cases") {
  Fixture f = fixture();
  const PitchParams pitch;
  DatasetParams dp;
  dp.split_by_recording = true;
  const auto sets = build_datasets(f.corpus, f.dicts, f.durations, pitch, dp);
  std::map<std::string, std::set<Split>> splits_of;
  for (std::size_t i = 0; i < sets[0].instances.size(); ++i) {
    if (sets[0].split[i] == Split::kTest) splits_of[sets[0].instances[i].source_id].insert(Split::kTest);
  }
  for (std::size_t i = 0; i < sets[0].instances.size(); ++i) {
    const auto& s = sets[0].instances[i].source_id;
    if (splits_of.count(s)) CHECK(sets[0].split[i] == Split::kTest);
  }

  dp = DatasetParams{};
  dp.max_instances_per_singer = 10;
  CHECK(build_datasets(f.corpus, f.dicts, f.durations, pitch, dp)[0].instances.size() == 30);

  const long before = log::warning_count();
  f.dicts[2].motifs.clear();
  const auto two = build_datasets(f.corpus, f.dicts, f.durations, pitch, DatasetParams{});
  CHECK(two[0].singers.size() == 2);
  CHECK(log::warning_count() > before);
  f.dicts[1].motifs.clear();
  CHECK_THROWS_AS(build_datasets(f.corpus, f.dicts, f.durations, pitch, DatasetParams{}), ArgumentError);
  CHECK(dataset_kind_from_string("motifs_segment") == DatasetKind::kMotifsSegment);
  CHECK_THROWS_AS(dataset_kind_from_string("motif"), ConfigError);
}
