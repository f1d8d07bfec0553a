// One line per acceptance criterion; exits nonzero when any asserted criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>

#include "cante/config.hpp"
#include "cante/contour.hpp"
#include "cante/features.hpp"
#include "cante/log.hpp"
#include "cante/mining.hpp"
#include "cante/nn/ops.hpp"
#include "cante/pipeline.hpp"
#include "cante/pitch.hpp"
#include "cante/random.hpp"
#include "cante/synth.hpp"
#include "gradient_suite.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace cante;
namespace fs = std::filesystem;

namespace {

enum class Verdict { kPass, kFail, kNotRun };

struct Outcome {
  Verdict verdict = Verdict::kFail;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

class Cwd {
 public:
  explicit Cwd(const fs::path& p) : saved_(fs::current_path()) { fs::current_path(p); }
  ~Cwd() { fs::current_path(saved_); }

 private:
  fs::path saved_;
};

Outcome mining_oracle() {
  Rng rng(500);
  int agree = 0;
  const int cases = 500;
  for (int c = 0; c < cases; ++c) {
    std::vector<Pattern> db(1 + rng.uniform_int(8));
    const int alphabet = 1 + static_cast<int>(rng.uniform_int(5));
    for (auto& seq : db) {
      seq.resize(rng.uniform_int(11));
      for (int& s : seq) s = static_cast<int>(rng.uniform_int(alphabet)) - alphabet / 2;
    }
    const int min_support = 2 + static_cast<int>(rng.uniform_int(2));
    std::vector<std::pair<Pattern, int>> got;
    for (const auto& m : mine_closed(db, {min_support, 1, 10})) got.emplace_back(m.pattern, m.support);
    std::sort(got.begin(), got.end());
    agree += got == oracle::closed_patterns(db, min_support, 1, 10);
  }
  return {agree == cases ? Verdict::kPass : Verdict::kFail,
          std::to_string(agree) + "/" + std::to_string(cases) + " databases match"};
}

Outcome kmeans_optimality() {
  Rng rng(200);
  int agree = 0;
  const int cases = 200;
  for (int c = 0; c < cases; ++c) {
    std::vector<int> ints(1 + rng.uniform_int(12));
    for (int& v : ints) v = static_cast<int>(rng.uniform_int(61)) - 30;
    const std::set<int> distinct(ints.begin(), ints.end());
    const int k = 1 + static_cast<int>(rng.uniform_int(std::min<std::size_t>(4, distinct.size())));
    const std::vector<double> values(ints.begin(), ints.end());
    agree += oracle::model_sse(ints, cluster_1d(values, k)) == oracle::best_partition_sse(ints, k);
  }
  return {agree == cases ? Verdict::kPass : Verdict::kFail,
          std::to_string(agree) + "/" + std::to_string(cases) + " inputs optimal"};
}

Outcome gradient_suite() {
  const auto results = gradcheck::run_suite(3, 5);
  std::map<std::string, std::pair<int, double>> per_layer;
  for (const auto& r : results) {
    auto& [shapes, worst] = per_layer[r.layer];
    shapes += r.shapes;
    worst = std::max(worst, r.max_relative_error);
  }
  bool ok = per_layer.size() == 10;
  double worst = 0;
  int min_shapes = 1 << 30;
  for (const auto& [layer, s] : per_layer) {
    ok = ok && s.first >= 5 && s.second < 1e-4;
    worst = std::max(worst, s.second);
    min_shapes = std::min(min_shapes, s.first);
  }
  return {ok ? Verdict::kPass : Verdict::kFail,
          std::to_string(per_layer.size()) + " layers, >= " + std::to_string(min_shapes) +
              " shapes each, max rel err " + fmt("%.2e", worst)};
}

Outcome analytic_anchors() {
  using nn::Tensor;
  using nn::Var;
  const auto logits = Var<double>::leaf(Tensor<double>({3, 5}));
  const double ce = nn::cross_entropy(logits, {0, 3, 4}).value()[0];
  const bool ce_ok = std::abs(ce - std::log(5.0)) < 1e-9;
  const bool octave = hz_to_cents(880.0) - hz_to_cents(440.0) == 1200.0 &&
                      hz_to_cents(55.0 * 16) - hz_to_cents(55.0 * 8) == 1200.0;
  Rng rng(4);
  Eigen::MatrixXd m(100, 300);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  const FeatureMatrix once = pad_to_shape(m);
  const FeatureMatrix twice = pad_to_shape(once.data.cast<double>());
  const bool idempotent = once.data == twice.data;
  double dct_err = 0;
  for (int n : {40, 128}) {
    const Eigen::MatrixXd d = dct_matrix(n);
    dct_err = std::max(dct_err, (d * d.transpose() - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff());
  }
  const bool ok = ce_ok && octave && idempotent && dct_err < 1e-10;
  return {ok ? Verdict::kPass : Verdict::kFail,
          "ce-ln5 " + fmt("%.1e", ce - std::log(5.0)) + ", octave " + (octave ? "exact" : "inexact") +
              ", pad " + (idempotent ? "idempotent" : "changed") + ", dct " + fmt("%.1e", dct_err)};
}

Outcome planted_motifs(const fs::path& root) {
  PipelineConfig cfg;
  fs::create_directories(root);
  Cwd cwd(root);
  run_synth(cfg);
  run_f0(cfg);
  run_contour(cfg);
  run_mine(cfg);

  nlohmann::json plan;
  std::ifstream(root / "corpus" / "plan.json") >> plan;
  std::map<std::string, std::vector<Pattern>> grammar;
  for (const auto& p : plan["profiles"]) {
    for (const auto& r : p["grammar"]) grammar[p["name"]].push_back(r["steps"].get<Pattern>());
  }
  std::map<std::string, std::map<int, int>> emitted;
  std::map<std::string, int> phrases;
  for (const auto& rec : plan["recordings"]) {
    for (const auto& ph : rec["phrases"]) {
      ++phrases[rec["singer"]];
      if (ph["rule"].get<int>() >= 0) ++emitted[rec["singer"]][ph["rule"].get<int>()];
    }
  }

  const WorkDir work{cfg.paths.work_dir};
  const Corpus corpus = load_corpus(cfg);
  int planted = 0, recovered = 0;
  bool every_singer = true;
  std::string missing;
  for (const auto& singer : corpus.singers()) {
    std::vector<Pattern> db;
    for (const auto& r : corpus.recordings) {
      if (r.singer != singer) continue;
      for (const auto& c : load_contours_json(work.contour() / (r.source_id + ".json"))) db.push_back(c.steps);
    }
    const MotifDictionary dict = load_dictionary_json(work.dict() / (singer + ".json"));
    int singer_planted = 0;
    for (const auto& [rule, count] : emitted[singer]) {
      if (count < 0.6 * phrases[singer]) continue;
      ++planted;
      ++singer_planted;
      const Pattern& p = grammar[singer][static_cast<std::size_t>(rule)];
      const auto support = std::count_if(db.begin(), db.end(), [&](const Pattern& s) { return contains_subsequence(s, p); });
      const bool found = std::any_of(dict.motifs.begin(), dict.motifs.end(), [&](const Motif& m) {
        return m.support == support && contains_subsequence(m.pattern, p);
      });
      recovered += found;
      if (!found) missing += " " + singer;
    }
    every_singer = every_singer && singer_planted > 0;
  }
  const bool ok = every_singer && planted > 0 && recovered == planted;
  return {ok ? Verdict::kPass : Verdict::kFail,
          std::to_string(recovered) + "/" + std::to_string(planted) + " planted patterns recovered" +
              (missing.empty() ? "" : " (missing:" + missing + ")")};
}

struct DeskRun {
  double motifs = NAN;
  double random = NAN;
  std::string results;
};

DeskRun desk_run(const fs::path& root) {
  fs::create_directories(root);
  Cwd cwd(root);
  const PipelineConfig cfg = load_config(CANTE_DESK_CONFIG);
  run_synth(cfg);
  DeskRun out;
  for (const CellResult& r : run_pipeline(cfg)) {
    if (r.cell.model != ModelKind::kResBlstm || r.cell.feature != FeatureKind::kMelSpec) continue;
    if (r.cell.dataset == DatasetKind::kMotifs) out.motifs = r.eval.accuracy_pct;
    if (r.cell.dataset == DatasetKind::kRandom) out.random = r.eval.accuracy_pct;
  }
  std::ifstream in(WorkDir{cfg.paths.work_dir}.results());
  std::stringstream ss;
  ss << in.rdbuf();
  out.results = ss.str();
  return out;
}

Outcome end_to_end(const DeskRun& run, double seconds) {
  const bool ok = run.motifs >= 90.0 && run.motifs >= run.random && seconds < 1800.0;
  return {ok ? Verdict::kPass : Verdict::kFail,
          "MOTIFS " + fmt("%.2f%%", run.motifs) + ", RANDOM " + fmt("%.2f%%", run.random)};
}

Outcome table_reproduction() {
  const char* manifest = std::getenv("CANTE_CORPUS_MANIFEST");
  if (manifest == nullptr) return {Verdict::kNotRun, "needs the original recordings (set CANTE_CORPUS_MANIFEST)"};
  PipelineConfig cfg;
  cfg.paths.manifest = manifest;
  cfg.paths.work_dir = fs::temp_directory_path() / "cante_table";
  const auto rows = run_pipeline(cfg);
  std::map<std::tuple<ModelKind, DatasetKind, FeatureKind>, double> acc;
  for (const auto& r : rows) acc[{r.cell.model, r.cell.dataset, r.cell.feature}] = r.eval.accuracy_pct;
  bool ok = rows.size() == 27;
  for (FeatureKind f : {FeatureKind::kSpec, FeatureKind::kMelSpec, FeatureKind::kMfcc}) {
    for (DatasetKind d : {DatasetKind::kMotifs, DatasetKind::kMotifsSegment, DatasetKind::kRandom}) {
      const double best = acc[{ModelKind::kResBlstm, d, f}];
      ok = ok && best >= acc[{ModelKind::kCrnn, d, f}] && best >= acc[{ModelKind::kResnet, d, f}];
    }
    for (ModelKind m : {ModelKind::kCrnn, ModelKind::kResnet, ModelKind::kResBlstm}) {
      ok = ok && acc[{m, DatasetKind::kMotifs, f}] >= acc[{m, DatasetKind::kMotifsSegment, f}] &&
           acc[{m, DatasetKind::kMotifsSegment, f}] >= acc[{m, DatasetKind::kRandom, f}];
    }
  }
  return {ok ? Verdict::kPass : Verdict::kFail,
          "RES_BLSTM/melspec/motifs " + fmt("%.2f%%", acc[{ModelKind::kResBlstm, DatasetKind::kMotifs, FeatureKind::kMelSpec}])};
}

Outcome determinism(const fs::path& first, const DeskRun& a, const fs::path& second) {
  const DeskRun b = desk_run(second);
  const auto ha = testutil::tree_hashes(first);
  const auto hb = testutil::tree_hashes(second);
  std::size_t differing = 0;
  if (ha.size() == hb.size()) {
    for (std::size_t i = 0; i < ha.size(); ++i) differing += ha[i] != hb[i];
  }
  const bool ok = a.results == b.results && ha.size() == hb.size() && differing == 0 && !ha.empty();
  return {ok ? Verdict::kPass : Verdict::kFail,
          std::to_string(ha.size()) + " artifacts, " + std::to_string(differing) + " differ, results " +
              (a.results == b.results ? "identical" : "differ")};
}

bool report(int id, const std::string& name, double limit_seconds, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {Verdict::kFail, std::string("exception: ") + e.what()};
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (o.verdict == Verdict::kPass && limit_seconds > 0 && s >= limit_seconds) {
    o.verdict = Verdict::kFail;
    o.detail += ", over the time limit";
  }
  const char* tag = o.verdict == Verdict::kPass ? "PASS" : o.verdict == Verdict::kFail ? "FAIL" : "NOT RUN";
  std::printf("criterion %d %-28s %-7s %s (%.1f s)\n", id, name.c_str(), tag, o.detail.c_str(), s);
  std::fflush(stdout);
  return o.verdict != Verdict::kFail;
}

}  // namespace

int main() {
  log::set_level(log::Level::kWarn);
  testutil::TempDir scratch("acceptance");
  bool ok = true;
  ok &= report(1, "mining oracle", 60, mining_oracle);
  ok &= report(2, "1-D k-means optimality", 10, kmeans_optimality);
  ok &= report(3, "gradient suite", 120, gradient_suite);
  ok &= report(4, "analytic anchors", 0, analytic_anchors);
  ok &= report(5, "planted-motif recovery", 300, [&] { return planted_motifs(scratch / "planted"); });

  DeskRun desk;
  double desk_seconds = 0;
  ok &= report(6, "end-to-end synthetic SID", 1800, [&] {
    const auto t0 = std::chrono::steady_clock::now();
    desk = desk_run(scratch / "desk1");
    desk_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return end_to_end(desk, desk_seconds);
  });
  ok &= report(7, "real-corpus orderings", 0, table_reproduction);
  ok &= report(8, "determinism", 0, [&] { return determinism(scratch / "desk1", desk, scratch / "desk2"); });
  return ok ? 0 : 1;
}
