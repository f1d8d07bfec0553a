// Command-line front end: one subcommand per pipeline stage.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "cante/error.hpp"
#include "cante/log.hpp"
#include "cante/pipeline.hpp"

namespace {

using namespace cante;

std::string version_text() {
  return std::string("cante ") + CANTE_VERSION + " (config format " + std::to_string(kConfigFormatVersion) +
         ", run format " + std::to_string(kRunFormatVersion) + ", checkpoint format 1, feature format 1)";
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string log_level = "info";
};

PipelineConfig resolve(const Options& opt, const std::vector<std::string>& extra = {}) {
  nlohmann::json doc = nlohmann::json::object();
  if (!opt.config_path.empty()) {
    std::ifstream in(opt.config_path);
    if (!in) throw DependencyError("missing input artifact " + opt.config_path);
    doc = nlohmann::json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw ConfigError(opt.config_path + " is not valid JSON");
  }
  for (const auto& s : opt.overrides) apply_override(doc, s);
  for (const auto& s : extra) apply_override(doc, s);
  return config_from_json(doc);
}

void set_log_level(const std::string& name) {
  if (name == "debug") {
    log::set_level(log::Level::kDebug);
  } else if (name == "info") {
    log::set_level(log::Level::kInfo);
  } else if (name == "warn") {
    log::set_level(log::Level::kWarn);
  } else if (name == "error") {
    log::set_level(log::Level::kError);
  } else {
    throw ArgumentError("unknown log level '" + name + "'");
  }
}

struct CellOptions {
  std::string model = "RES_BLSTM";
  std::string dataset = "motifs";
  std::string feature = "melspec";
  Cell cell() const {
    return {model_kind_from_string(model), dataset_kind_from_string(dataset), feature_kind_from_string(feature)};
  }
};

void add_cell_options(CLI::App* sub, CellOptions& c) {
  sub->add_option("--model", c.model, "CRNN, RESNET or RES_BLSTM")->capture_default_str();
  sub->add_option("--dataset", c.dataset, "motifs, motifs_segment or random")->capture_default_str();
  sub->add_option("--feature", c.feature, "spec, melspec or mfcc")->capture_default_str();
}

int run(int argc, char** argv) {
  CLI::App app{"Singer identification from melodic motifs"};
  app.set_version_flag("--version", version_text());
  app.require_subcommand(1);
  Options opt;
  app.add_option("-c,--config", opt.config_path, "pipeline config JSON");
  app.add_option("--set", opt.overrides, "override a config value, section.key=value")->take_all();
  app.add_option("--log-level", opt.log_level, "debug, info, warn or error")->capture_default_str();

  std::string in_path, out_path;
  auto* f0 = app.add_subcommand("f0", "pitch tracks for the corpus, or one file with --in/--out");
  f0->add_option("--in", in_path, "input WAV");
  f0->add_option("--out", out_path, "output CSV");

  auto* contour = app.add_subcommand("contour", "contour steps from pitch tracks");
  contour->add_option("--in", in_path, "input pitch CSV");
  contour->add_option("--out", out_path, "output JSON");

  auto* mine = app.add_subcommand("mine", "per-singer motif dictionaries");

  std::string feature_kind = "melspec";
  CellOptions cell_opt;
  auto* features = app.add_subcommand("features", "feature files for a dataset, or one WAV with --in/--out");
  features->add_option("--in", in_path, "input WAV");
  features->add_option("--out", out_path, "output feature file");
  features->add_option("--kind", feature_kind, "spec, melspec or mfcc")->capture_default_str();
  features->add_option("--dataset", cell_opt.dataset, "dataset variant")->capture_default_str();

  auto* dataset = app.add_subcommand("dataset", "MOTIFS, MOTIFS_SEGMENT and RANDOM instance lists");

  auto* train_cmd = app.add_subcommand("train", "train one model/dataset/feature cell");
  add_cell_options(train_cmd, cell_opt);
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a trained cell on its test split");
  add_cell_options(eval_cmd, cell_opt);

  std::optional<int> jobs;
  auto* grid = app.add_subcommand("grid", "train and evaluate every grid cell");
  grid->add_option("-j,--jobs", jobs, "parallel worker processes");

  auto* synth = app.add_subcommand("synth", "generate the synthetic corpus");

  auto* pipeline = app.add_subcommand("pipeline", "f0, contour, mine, dataset and grid");
  pipeline->add_option("-j,--jobs", jobs, "parallel worker processes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error argument: " << one_line(e.what()) << '\n';
    return 2;
  }

  set_log_level(opt.log_level);
  std::vector<std::string> extra;
  if (jobs) extra.push_back("grid.jobs=" + std::to_string(*jobs));
  const PipelineConfig cfg = resolve(opt, extra);

  if (f0->parsed()) {
    if (in_path.empty() != out_path.empty()) throw ArgumentError("f0 needs both --in and --out");
    if (in_path.empty()) {
      run_f0(cfg);
    } else {
      AudioBuffer audio = load_wav(in_path);
      PitchTrack track = extract_pitch(audio, cfg.pitch);
      track.source_id = std::filesystem::path(in_path).stem().string();
      save_pitch_csv(out_path, track);
    }
  } else if (contour->parsed()) {
    if (in_path.empty() != out_path.empty()) throw ArgumentError("contour needs both --in and --out");
    if (in_path.empty()) {
      run_contour(cfg);
    } else {
      PitchTrack track = load_pitch_csv(in_path, cfg.pitch.sample_rate);
      track.source_id = std::filesystem::path(in_path).stem().string();
      save_contours_json(out_path, approximate_contour(track, cfg.contour));
    }
  } else if (mine->parsed()) {
    run_mine(cfg);
  } else if (features->parsed()) {
    const FeatureKind kind = feature_kind_from_string(feature_kind);
    if (in_path.empty() != out_path.empty()) throw ArgumentError("features needs both --in and --out");
    if (in_path.empty()) {
      run_features(cfg, dataset_kind_from_string(cell_opt.dataset), kind);
    } else {
      save_feature_file(out_path, compute_features(kind, load_wav(in_path), cfg.features));
    }
  } else if (dataset->parsed()) {
    run_datasets(cfg);
  } else if (train_cmd->parsed()) {
    train_cell(cfg, cell_opt.cell());
  } else if (eval_cmd->parsed()) {
    const EvalReport r = eval_cell(cfg, cell_opt.cell());
    std::cout << "accuracy_pct=" << r.accuracy_pct << " auc=" << r.auc << '\n';
  } else if (grid->parsed()) {
    run_grid(cfg);
  } else if (synth->parsed()) {
    run_synth(cfg);
  } else if (pipeline->parsed()) {
    run_pipeline(cfg);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const cante::Error& e) {
    std::cerr << "error " << e.category() << ": " << one_line(e.what()) << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error internal: " << one_line(e.what()) << '\n';
    return 3;
  }
}
