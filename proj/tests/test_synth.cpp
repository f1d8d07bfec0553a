#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>

#include "cante/contour.hpp"
#include "cante/error.hpp"
#include "cante/mining.hpp"
#include "cante/pitch.hpp"
#include "cante/synth.hpp"
#include "test_util.hpp"

using namespace cante;

namespace {

SingerProfile plain(std::vector<MotifRule> grammar) {
  SingerProfile p;
  p.name = "plain";
  p.grammar = std::move(grammar);
  p.vibrato_depth_cents = 0.0;
  p.jitter_cents = 0.0;
  p.max_filler_steps = 0;
  p.held_probability = 0.0;
  return p;
}

std::set<Pattern> mined(const SingerProfile& profile, std::uint64_t seed) {
  SequenceDatabase db{profile.name, {}};
  for (int r = 0; r < 3; ++r) {
    const auto rec = synthesize_recording(profile, 12.0, seed + r);
    const auto phrases = approximate_contour(extract_pitch(rec.audio));
    db.sequences.insert(db.sequences.end(), phrases.begin(), phrases.end());
  }
  std::set<Pattern> out;
  for (const auto& m : mine_closed(db, {3, 3, 12})) out.insert(m.pattern);
  return out;
}

}  // namespace

TEST_CASE("same seed gives identical audio") {
  const SingerProfile p = default_profiles()[1];
  const auto a = synthesize_recording(p, 6.0, 42);
  const auto b = synthesize_recording(p, 6.0, 42);
  const auto c = synthesize_recording(p, 6.0, 43);
  CHECK(a.audio.samples() == b.audio.samples());
  CHECK(a.audio.samples() != c.audio.samples());
  CHECK(a.audio.sample_rate() == 44100);
  CHECK(a.audio.size() == 6 * 44100);
  CHECK(a.audio.samples().cwiseAbs().maxCoeff() <= 1.0);
}

TEST_CASE("phrase plans follow the grammar") {
  for (const auto& p : default_profiles()) {
    CAPTURE(p.name);
    const auto rec = synthesize_recording(p, 20.0, 9);
    REQUIRE(!rec.phrases.empty());
    CHECK(rec.phrases.front().rule == -1);
    double previous_end = 0.0;
    for (const auto& ph : rec.phrases) {
      CHECK(ph.start_seconds >= previous_end);
      CHECK(ph.end_seconds > ph.start_seconds);
      CHECK(ph.end_seconds <= 20.0);
      previous_end = ph.end_seconds;
      CHECK(ph.levels.size() == ph.steps.size() + 1);
      for (std::size_t i = 0; i < ph.steps.size(); ++i) CHECK(ph.levels[i + 1] - ph.levels[i] == ph.steps[i]);
      for (int level : ph.levels) {
        CHECK(level >= 0);
        CHECK(level < static_cast<int>(p.scale_cents.size()));
      }
      if (ph.rule >= 0) {
        const Pattern& rule = p.grammar[static_cast<std::size_t>(ph.rule)].steps;
        REQUIRE(ph.motif_offset + rule.size() <= ph.steps.size());
        CHECK(std::equal(rule.begin(), rule.end(), ph.steps.begin() + static_cast<long>(ph.motif_offset)));
      }
    }
  }
}

TEST_CASE("a steady voice tracks at a constant pitch") {
  const SingerProfile p = plain({{{}, 1.0}});
  const auto rec = synthesize_recording(p, 8.0, 5);
  const PitchTrack track = extract_pitch(rec.audio);
  int checked = 0;
  for (const auto& ph : rec.phrases) {
    REQUIRE(ph.levels.size() == 1);
    const double want = p.base_pitch_cents + p.scale_cents[static_cast<std::size_t>(ph.levels[0])];
    for (Eigen::Index i = 0; i < track.size(); ++i) {
      if (track.time[i] < ph.start_seconds + 0.05 || track.time[i] > ph.end_seconds - 0.05) continue;
      REQUIRE(track.voiced(i));
      CHECK(std::abs(track.f0_cents[i] - want) <= 15.0);
      ++checked;
    }
  }
  CHECK(checked > 100);
}

TEST_CASE("disjoint grammars give disjoint dictionaries") {
  const auto up = mined(plain({{{2, -1, 2}, 1.0}}), 100);
  const auto down = mined(plain({{{-2, 1, -2}, 1.0}}), 200);
  CHECK(!up.empty());
  CHECK(!down.empty());
  for (const auto& p : up) CHECK(down.count(p) == 0);
}

TEST_CASE("profile validation and JSON") {
  SingerProfile p = default_profiles()[0];
  const SingerProfile back = profile_from_json(to_json(p));
  CHECK(back.name == p.name);
  CHECK(back.grammar.size() == p.grammar.size());
  CHECK(back.grammar[0].steps == p.grammar[0].steps);
  CHECK(back.harmonic_gains == p.harmonic_gains);

  SingerProfile bad = p;
  bad.grammar[0].probability = 0.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = p;
  bad.vibrato_depth_cents = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = p;
  bad.grammar = {{{9, 9}, 1.0}};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  auto j = to_json(p);
  j["tempo"] = 3;
  CHECK_THROWS_AS(profile_from_json(j), ConfigError);
}

TEST_CASE("generated corpus layout") {
  testutil::TempDir dir("synth");
  SynthCorpusSpec spec;
  spec.profiles.resize(2);
  spec.recordings_per_singer = 2;
  spec.duration_seconds = 5.0;
  const Corpus c = generate_corpus(dir.path(), spec);
  CHECK(c.recordings.size() == 4);
  CHECK(std::filesystem::exists(dir / "manifest.json"));
  CHECK(std::filesystem::exists(dir / "plan.json"));
  const Corpus loaded = load_manifest(dir / "manifest.json");
  REQUIRE(loaded.recordings.size() == 4);
  CHECK(loaded.singers() == std::vector<std::string>{"voice_a", "voice_b"});
  const AudioBuffer a = load_wav(loaded.recordings[0].path);
  CHECK(a.duration_seconds() == doctest::Approx(5.0));
}
