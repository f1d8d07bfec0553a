#include "cante/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "cante/error.hpp"
#include "cante/log.hpp"
#include "cante/pitch.hpp"
#include "cante/random.hpp"

namespace cante {

void SingerProfile::validate() const {
  if (scale_cents.size() < 2) throw ConfigError(name + ": scale needs at least two levels");
  if (!std::is_sorted(scale_cents.begin(), scale_cents.end()) ||
      std::adjacent_find(scale_cents.begin(), scale_cents.end()) != scale_cents.end()) {
    throw ConfigError(name + ": scale levels must be strictly increasing");
  }
  if (grammar.empty()) throw ConfigError(name + ": grammar is empty");
  double total = 0.0;
  const int levels = static_cast<int>(scale_cents.size());
  for (const MotifRule& r : grammar) {
    if (r.probability < 0) throw ConfigError(name + ": negative emission probability");
    total += r.probability;
    int pos = 0, lo = 0, hi = 0;
    for (int s : r.steps) {
      if (s == 0) throw ConfigError(name + ": motif steps must be nonzero");
      pos += s;
      lo = std::min(lo, pos);
      hi = std::max(hi, pos);
    }
    if (hi - lo >= levels) throw ConfigError(name + ": motif does not fit the scale");
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError(name + ": emission probabilities must sum to 1");
  if (vibrato_depth_cents < 0 || vibrato_rate_hz < 0 || jitter_cents < 0) {
    throw ConfigError(name + ": vibrato and jitter must be non-negative");
  }
  if (harmonic_gains.empty()) throw ConfigError(name + ": no harmonic gains");
  if (!(note_min_seconds > 0) || note_max_seconds < note_min_seconds) {
    throw ConfigError(name + ": invalid note duration range");
  }
  if (max_filler_steps < 0) throw ConfigError(name + ": max_filler_steps must be >= 0");
  if (held_probability < 0 || held_probability > 1) {
    throw ConfigError(name + ": held_probability must lie in [0, 1]");
  }
  if (!(held_min_seconds > 0) || held_max_seconds < held_min_seconds) {
    throw ConfigError(name + ": invalid held note duration range");
  }
}

namespace {

constexpr int kFillerSteps[] = {-2, -1, 1, 2};

Pattern random_fillers(Rng& rng, int max_count) {
  Pattern out(rng.uniform_int(static_cast<std::uint64_t>(max_count) + 1));
  for (int& s : out) s = kFillerSteps[rng.uniform_int(4)];
  return out;
}

// Start levels from which `steps` stays inside [0, levels).
std::vector<int> feasible_starts(const Pattern& steps, int levels) {
  int pos = 0, lo = 0, hi = 0;
  for (int s : steps) {
    pos += s;
    lo = std::min(lo, pos);
    hi = std::max(hi, pos);
  }
  std::vector<int> out;
  for (int start = -lo; start + hi < levels; ++start) out.push_back(start);
  return out;
}

void render_note(Eigen::VectorXd& out, Eigen::Index first, Eigen::Index count, double cents,
                 const SingerProfile& p, const SynthParams& sp, double vibrato_phase) {
  const double sr = sp.sample_rate;
  const Eigen::Index ramp = std::max<Eigen::Index>(
      1, std::min<Eigen::Index>(count / 2, std::lround(sp.envelope_seconds * sr)));
  double gain_sum = 0.0;
  for (double g : p.harmonic_gains) gain_sum += std::abs(g);
  double phase = 0.0;
  for (Eigen::Index i = 0; i < count; ++i) {
    const double t = static_cast<double>(i) / sr;
    const double c = cents + p.vibrato_depth_cents *
                                 std::sin(2.0 * std::numbers::pi * p.vibrato_rate_hz * t + vibrato_phase);
    const double f0 = cents_to_hz(c);
    double v = 0.0;
    for (std::size_t h = 0; h < p.harmonic_gains.size(); ++h) {
      if (f0 * static_cast<double>(h + 1) >= 0.5 * sr) break;
      v += p.harmonic_gains[h] * std::sin(static_cast<double>(h + 1) * phase);
    }
    double env = 1.0;
    if (i < ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(i) / ramp);
    if (count - 1 - i < ramp) {
      env = std::min(env, 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(count - 1 - i) / ramp));
    }
    out[first + i] = sp.amplitude * env * v / gain_sum;
    phase += 2.0 * std::numbers::pi * f0 / sr;
    if (phase > 2.0 * std::numbers::pi) phase -= 2.0 * std::numbers::pi;
  }
}

}  // namespace

SynthRecording synthesize_recording(const SingerProfile& profile, double duration_seconds,
                                    std::uint64_t seed, const SynthParams& sp,
                                    const std::string& source_id) {
  if (!(duration_seconds >= 5.0)) throw ArgumentError("synthetic recordings must last at least 5 s");
  if (sp.sample_rate <= 0) throw ArgumentError("sample rate must be positive");
  profile.validate();

  Rng rng(seed);
  const double sr = sp.sample_rate;
  const auto total = static_cast<Eigen::Index>(std::llround(duration_seconds * sr));
  Eigen::VectorXd samples = Eigen::VectorXd::Zero(total);
  const int levels = static_cast<int>(profile.scale_cents.size());
  std::vector<double> probabilities;
  for (const MotifRule& r : profile.grammar) probabilities.push_back(r.probability);

  SynthRecording rec;
  std::set<int> visited;
  double t = sp.lead_in_seconds;
  while (true) {
    PhrasePlan plan;
    const bool held =
        profile.held_probability > 0 && (rec.phrases.empty() || rng.bernoulli(profile.held_probability));
    plan.rule = held ? -1 : static_cast<int>(rng.categorical(probabilities));
    static const Pattern kNoSteps;
    const Pattern& motif = held ? kNoSteps : profile.grammar[static_cast<std::size_t>(plan.rule)].steps;
    std::vector<int> starts;
    if (held) starts = feasible_starts(kNoSteps, levels);
    for (int attempt = 0; attempt < 8 && starts.empty(); ++attempt) {
      const Pattern pre = random_fillers(rng, profile.max_filler_steps);
      const Pattern post = random_fillers(rng, profile.max_filler_steps);
      plan.steps = pre;
      plan.steps.insert(plan.steps.end(), motif.begin(), motif.end());
      plan.steps.insert(plan.steps.end(), post.begin(), post.end());
      plan.motif_offset = pre.size();
      starts = feasible_starts(plan.steps, levels);
    }
    if (starts.empty()) {
      plan.steps = motif;
      plan.motif_offset = 0;
      starts = feasible_starts(plan.steps, levels);
    }

    // Prefer starts that reach levels not sung yet so every level is heard.
    std::vector<int> best;
    int best_gain = -1;
    for (int s : starts) {
      int pos = s, gain = visited.count(pos) ? 0 : 1;
      std::set<int> seen{pos};
      for (int d : plan.steps) {
        pos += d;
        if (!visited.count(pos) && seen.insert(pos).second) ++gain;
      }
      if (gain > best_gain) {
        best_gain = gain;
        best.clear();
      }
      if (gain == best_gain) best.push_back(s);
    }
    int level = best[rng.uniform_int(best.size())];
    plan.levels.push_back(level);
    for (int d : plan.steps) plan.levels.push_back(level += d);

    std::vector<double> durations;
    double length = sp.note_gap_seconds * static_cast<double>(plan.levels.size() - 1);
    for (std::size_t i = 0; i < plan.levels.size(); ++i) {
      durations.push_back(held ? rng.uniform(profile.held_min_seconds, profile.held_max_seconds)
                               : rng.uniform(profile.note_min_seconds, profile.note_max_seconds));
      length += durations.back();
    }
    if (t + length > duration_seconds - 0.1) break;

    plan.start_seconds = t;
    for (std::size_t i = 0; i < plan.levels.size(); ++i) {
      const double jitter = profile.jitter_cents > 0 ? rng.normal(0.0, profile.jitter_cents) : 0.0;
      const double vib_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const auto first = static_cast<Eigen::Index>(std::llround(t * sr));
      const auto count = static_cast<Eigen::Index>(std::llround(durations[i] * sr));
      const double cents =
          profile.base_pitch_cents + profile.scale_cents[static_cast<std::size_t>(plan.levels[i])] + jitter;
      render_note(samples, first, std::min(count, total - first), cents, profile, sp, vib_phase);
      visited.insert(plan.levels[i]);
      t += durations[i] + (i + 1 < plan.levels.size() ? sp.note_gap_seconds : 0.0);
    }
    plan.end_seconds = t;
    rec.phrases.push_back(std::move(plan));
    t += sp.breath_gap_seconds;
  }
  rec.audio = AudioBuffer(std::move(samples), sp.sample_rate, source_id);
  return rec;
}

std::vector<SingerProfile> default_profiles() {
  std::vector<SingerProfile> out(5);
  out[0].name = "voice_a";
  out[0].base_pitch_cents = 2400;
  out[0].scale_cents = {0, 100, 300, 500, 700, 800, 1000, 1200, 1300, 1500};
  out[0].grammar = {{{2, -1, 2}, 0.9}, {{-1, -1, 3}, 0.06}, {{1, 1, -2}, 0.04}};
  out[0].vibrato_rate_hz = 5.5;
  out[0].harmonic_gains = {1.0, 0.5, 0.33, 0.25, 0.2, 0.17, 0.14, 0.12};

  out[1].name = "voice_b";
  out[1].base_pitch_cents = 3200;
  out[1].scale_cents = {0, 200, 300, 500, 700, 900, 1000, 1200, 1400, 1500};
  out[1].grammar = {{{1, 1, 1, -2}, 0.9}, {{-2, 1, -1}, 0.06}, {{3, -1, -1}, 0.04}};
  out[1].vibrato_rate_hz = 6.2;
  out[1].vibrato_depth_cents = 2.0;
  out[1].harmonic_gains = {0.4, 1.0, 0.6, 0.2, 0.3, 0.1, 0.1, 0.05};
  out[1].note_min_seconds = 0.22;
  out[1].note_max_seconds = 0.4;

  out[2].name = "voice_c";
  out[2].base_pitch_cents = 4000;
  out[2].scale_cents = {0, 100, 300, 400, 600, 800, 900, 1100, 1200, 1400};
  out[2].grammar = {{{-1, 2, -1, 2}, 0.9}, {{1, -2, 1}, 0.1}};
  out[2].vibrato_rate_hz = 4.8;
  out[2].vibrato_depth_cents = 1.0;
  out[2].harmonic_gains = {1.0, 0.1, 0.6, 0.05, 0.4, 0.05, 0.2, 0.05};
  out[2].note_min_seconds = 0.15;
  out[2].note_max_seconds = 0.3;

  out[3].name = "voice_d";
  out[3].base_pitch_cents = 2800;
  out[3].scale_cents = {0, 200, 400, 500, 700, 900, 1100, 1200, 1400, 1600};
  out[3].grammar = {{{3, -2, -1}, 0.9}, {{1, 1, -1, -1}, 0.1}};
  out[3].vibrato_rate_hz = 6.8;
  out[3].vibrato_depth_cents = 1.5;
  out[3].harmonic_gains = {0.7, 0.8, 1.0, 0.7, 0.5, 0.3, 0.2, 0.1};
  out[3].note_min_seconds = 0.2;
  out[3].note_max_seconds = 0.32;

  out[4].name = "voice_e";
  out[4].base_pitch_cents = 3600;
  out[4].scale_cents = {0, 100, 200, 400, 500, 700, 900, 1000, 1200, 1300};
  out[4].grammar = {{{-2, -1, 1, 2}, 0.9}, {{2, 2, -1}, 0.1}};
  out[4].vibrato_rate_hz = 5.0;
  out[4].vibrato_depth_cents = 1.5;
  out[4].harmonic_gains = {1.0, 0.9, 0.2, 0.6, 0.1, 0.3, 0.05, 0.1};
  out[4].note_min_seconds = 0.17;
  out[4].note_max_seconds = 0.28;
  return out;
}

nlohmann::json to_json(const SingerProfile& p) {
  nlohmann::json grammar = nlohmann::json::array();
  for (const auto& r : p.grammar) grammar.push_back({{"steps", r.steps}, {"probability", r.probability}});
  return {{"name", p.name},
          {"base_pitch_cents", p.base_pitch_cents},
          {"scale_cents", p.scale_cents},
          {"grammar", grammar},
          {"vibrato_rate_hz", p.vibrato_rate_hz},
          {"vibrato_depth_cents", p.vibrato_depth_cents},
          {"jitter_cents", p.jitter_cents},
          {"harmonic_gains", p.harmonic_gains},
          {"note_min_seconds", p.note_min_seconds},
          {"note_max_seconds", p.note_max_seconds},
          {"max_filler_steps", p.max_filler_steps},
          {"held_probability", p.held_probability},
          {"held_min_seconds", p.held_min_seconds},
          {"held_max_seconds", p.held_max_seconds}};
}

SingerProfile profile_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{
      "name",          "base_pitch_cents",    "scale_cents",  "grammar",
      "vibrato_rate_hz", "vibrato_depth_cents", "jitter_cents", "harmonic_gains",
      "note_min_seconds", "note_max_seconds", "max_filler_steps", "held_probability",
      "held_min_seconds", "held_max_seconds"};
  if (!j.is_object()) throw ConfigError("profile must be an object");
  for (const auto& item : j.items()) {
    if (!known.count(item.key())) throw ConfigError("unknown profile key '" + item.key() + "'");
  }
  SingerProfile p;
  try {
    p.name = j.at("name").get<std::string>();
    auto take = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    take("base_pitch_cents", p.base_pitch_cents);
    take("scale_cents", p.scale_cents);
    if (j.contains("grammar")) {
      p.grammar.clear();
      for (const auto& r : j.at("grammar")) {
        p.grammar.push_back({r.at("steps").get<Pattern>(), r.at("probability").get<double>()});
      }
    }
    take("vibrato_rate_hz", p.vibrato_rate_hz);
    take("vibrato_depth_cents", p.vibrato_depth_cents);
    take("jitter_cents", p.jitter_cents);
    take("harmonic_gains", p.harmonic_gains);
    take("note_min_seconds", p.note_min_seconds);
    take("note_max_seconds", p.note_max_seconds);
    take("max_filler_steps", p.max_filler_steps);
    take("held_probability", p.held_probability);
    take("held_min_seconds", p.held_min_seconds);
    take("held_max_seconds", p.held_max_seconds);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad profile: ") + e.what());
  }
  p.validate();
  return p;
}

std::vector<SingerProfile> load_profiles(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DependencyError("missing profile file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  std::vector<SingerProfile> out;
  if (j.is_array()) {
    for (const auto& p : j) out.push_back(profile_from_json(p));
  } else {
    out.push_back(profile_from_json(j));
  }
  return out;
}

nlohmann::json to_json(const SynthParams& p) {
  return {{"sample_rate", p.sample_rate},
          {"note_gap_seconds", p.note_gap_seconds},
          {"breath_gap_seconds", p.breath_gap_seconds},
          {"envelope_seconds", p.envelope_seconds},
          {"lead_in_seconds", p.lead_in_seconds},
          {"amplitude", p.amplitude}};
}

Corpus generate_corpus(const std::filesystem::path& dir, const SynthCorpusSpec& spec) {
  if (spec.recordings_per_singer < 1) throw ArgumentError("need at least one recording per singer");
  std::filesystem::create_directories(dir);
  Rng root(spec.seed);
  Corpus corpus;
  nlohmann::json plan = nlohmann::json::array();
  for (const SingerProfile& profile : spec.profiles) {
    for (int r = 0; r < spec.recordings_per_singer; ++r) {
      const std::string id = profile.name + "_" + std::to_string(r + 1);
      const std::uint64_t seed = root.fork(id).next_u64();
      SynthRecording rec = synthesize_recording(profile, spec.duration_seconds, seed, spec.params, id);
      const auto path = dir / (id + ".wav");
      save_wav(path, rec.audio);
      corpus.recordings.push_back({path, profile.name, "synthetic", id});
      nlohmann::json phrases = nlohmann::json::array();
      for (const auto& ph : rec.phrases) {
        phrases.push_back({{"rule", ph.rule},
                           {"steps", ph.steps},
                           {"motif_offset", ph.motif_offset},
                           {"levels", ph.levels},
                           {"start_seconds", ph.start_seconds},
                           {"end_seconds", ph.end_seconds}});
      }
      plan.push_back({{"source_id", id}, {"singer", profile.name}, {"seed", seed}, {"phrases", phrases}});
      log::info("synth", {{"recording", id}, {"phrases", std::to_string(rec.phrases.size())}});
    }
  }
  save_manifest(dir / "manifest.json", corpus);
  nlohmann::json profiles = nlohmann::json::array();
  for (const auto& p : spec.profiles) profiles.push_back(to_json(p));
  nlohmann::json meta{{"seed", spec.seed},
                      {"recordings_per_singer", spec.recordings_per_singer},
                      {"duration_seconds", spec.duration_seconds},
                      {"params", to_json(spec.params)},
                      {"profiles", profiles},
                      {"recordings", plan}};
  std::ofstream out(dir / "plan.json");
  if (!out) throw IoError("cannot write " + (dir / "plan.json").string());
  out << meta.dump(1) << '\n';
  return corpus;
}

}  // namespace cante
