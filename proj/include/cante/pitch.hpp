#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <limits>
#include <string>
#include <utility>

#include "cante/audio_io.hpp"

namespace cante {

inline constexpr double kCentsReferenceHz = 55.0;

/// Cents above 55 Hz. Doubling the frequency adds exactly 1200: the octave
/// part is carried as an integer and the fractional part is rounded to a
/// multiple of 2^-30 cents so the final sum is exact.
double hz_to_cents(double hz);
double cents_to_hz(double cents);

struct Spectrogram {
  Eigen::MatrixXcd bins;  // frames x (fft_size / 2 + 1)
  int fft_size = 0;
  int window = 0;
  int hop = 0;
  int sample_rate = 0;
};

/// Hann-windowed STFT; FFT size is the next power of two >= window. Frame t
/// covers samples [t * hop, t * hop + window).
Spectrogram stft(const AudioBuffer& buf, int window_samples, int hop_samples);

struct SalienceParams {
  int n_harmonics = 8;
  double decay = 0.8;
  double f_min = 55.0;
  double f_max = 1760.0;
  double cents_step = 10.0;
  // A spectral peak contributes to harmonic h of candidate f with weight
  // cos^2(pi/2 * d / width), d = cents distance from h*f, |d| < width.
  double weight_width_cents = 100.0;
  // Peaks below this fraction of the frame's largest peak are ignored.
  double peak_floor = 1e-4;
};

/// Candidate fundamentals (Hz) of the log-frequency salience grid.
Eigen::VectorXd salience_grid(const SalienceParams& params = {});

/// Harmonic-summation salience of one spectrum frame over salience_grid().
Eigen::VectorXd salience(const Eigen::Ref<const Eigen::VectorXcd>& frame, int fft_size,
                         int sample_rate, const SalienceParams& params = {});

/// Per-frame f0 track. Unvoiced frames hold NaN in f0_cents.
struct PitchTrack {
  Eigen::VectorXd time;      // frame centre, seconds
  Eigen::VectorXd f0_cents;  // NaN when unvoiced
  Eigen::VectorXd salience;  // frame maximum of the salience function
  int hop_samples = 256;
  int sample_rate = 44100;
  std::string source_id;

  Eigen::Index size() const { return time.size(); }
  bool voiced(Eigen::Index i) const { return !std::isnan(f0_cents[i]); }
  double frame_period() const { return static_cast<double>(hop_samples) / sample_rate; }
  /// Time span in seconds covered by frames [start_frame, end_frame).
  std::pair<double, double> span_seconds(Eigen::Index start_frame, Eigen::Index end_frame) const;
};

struct TrackParams {
  double voicing_threshold = 0.2;
  int median_filter = 5;
  // Window (frames, centred) of the running median of frame maxima.
  int voicing_window = 345;
  double octave_jump_cents = 1150.0;
};

/// Picks the salience argmax per frame, gates voicing against the running
/// median of frame maxima, median-filters voiced cents and repairs isolated
/// octave jumps.
PitchTrack track_f0(const Eigen::Ref<const Eigen::MatrixXd>& salience_frames,
                    const Eigen::Ref<const Eigen::VectorXd>& frame_times,
                    const TrackParams& params = {}, const SalienceParams& salience_params = {});

struct PitchParams {
  int sample_rate = 44100;
  int window = 2048;
  int hop = 256;
  SalienceParams salience;
  TrackParams track;
};

/// Full f0 extraction: resample to params.sample_rate if needed, STFT,
/// salience, tracking.
PitchTrack extract_pitch(const AudioBuffer& buf, const PitchParams& params = {});

/// CSV with header `time_s,f0_cents,salience`; unvoiced f0 is an empty field.
void save_pitch_csv(const std::filesystem::path& path, const PitchTrack& track);
PitchTrack load_pitch_csv(const std::filesystem::path& path, int sample_rate = 44100);

}  // namespace cante
