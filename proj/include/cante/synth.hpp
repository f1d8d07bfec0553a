#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

#include "cante/audio_io.hpp"
#include "cante/mining.hpp"

namespace cante {

/// A step pattern over scale levels and its emission probability.
struct MotifRule {
  Pattern steps;
  double probability = 1.0;
};

/// Voice and melodic habits of one synthetic singer. Pitches are
/// base_pitch_cents + scale_cents[level]; notes never repeat a level.
struct SingerProfile {
  std::string name;
  double base_pitch_cents = 3000.0;
  std::vector<double> scale_cents{0, 100, 300, 500, 700, 800, 1000, 1200, 1300, 1500};
  std::vector<MotifRule> grammar{{{2, -1, 2}, 1.0}};
  double vibrato_rate_hz = 5.5;
  double vibrato_depth_cents = 2.0;
  double jitter_cents = 0.5;
  std::vector<double> harmonic_gains{1.0, 0.5, 0.33, 0.25, 0.2, 0.17, 0.14, 0.12};
  double note_min_seconds = 0.18;
  double note_max_seconds = 0.35;
  /// Up to this many random ornament steps before and after the motif.
  int max_filler_steps = 1;
  /// Share of phrases that are one long held note. When positive, every
  /// recording also opens with such a phrase.
  double held_probability = 0.15;
  double held_min_seconds = 1.2;
  double held_max_seconds = 2.4;

  void validate() const;
};

struct SynthParams {
  int sample_rate = 44100;
  double note_gap_seconds = 0.06;
  double breath_gap_seconds = 0.3;
  double envelope_seconds = 0.01;
  double lead_in_seconds = 0.25;
  double amplitude = 0.5;
};

/// What one phrase of a synthetic recording realises.
struct PhrasePlan {
  int rule = -1;               // index into the grammar, -1 for a held note
  Pattern steps;               // all level steps of the phrase
  std::size_t motif_offset = 0;  // where the rule's steps begin inside `steps`
  std::vector<int> levels;
  double start_seconds = 0.0;
  double end_seconds = 0.0;
};

struct SynthRecording {
  AudioBuffer audio;
  std::vector<PhrasePlan> phrases;
};

SynthRecording synthesize_recording(const SingerProfile& profile, double duration_seconds,
                                    std::uint64_t seed, const SynthParams& params = {},
                                    const std::string& source_id = {});

/// Five contrasting voices, each with a signature motif emitted by 90% of motif phrases.
std::vector<SingerProfile> default_profiles();

struct SynthCorpusSpec {
  std::vector<SingerProfile> profiles = default_profiles();
  int recordings_per_singer = 4;
  double duration_seconds = 30.0;
  std::uint64_t seed = 7;
  SynthParams params;
};

/// Writes <dir>/<singer>_<r>.wav, <dir>/manifest.json and <dir>/plan.json.
Corpus generate_corpus(const std::filesystem::path& dir, const SynthCorpusSpec& spec);

nlohmann::json to_json(const SingerProfile& p);
SingerProfile profile_from_json(const nlohmann::json& j);
std::vector<SingerProfile> load_profiles(const std::filesystem::path& path);
nlohmann::json to_json(const SynthParams& p);

}  // namespace cante
