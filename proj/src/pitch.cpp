#include "cante/pitch.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <vector>

#include "cante/dsp.hpp"
#include "cante/error.hpp"

namespace cante {

double hz_to_cents(double hz) {
  if (!(hz > 0.0) || !std::isfinite(hz)) throw ArgumentError("frequency must be positive");
  int octave = 0;
  const double mantissa = std::frexp(hz / kCentsReferenceHz, &octave);  // [0.5, 1)
  const double fractional = std::round(1200.0 * std::log2(mantissa) * 0x1.0p30) * 0x1.0p-30;
  return fractional + 1200.0 * octave;
}

double cents_to_hz(double cents) { return kCentsReferenceHz * std::exp2(cents / 1200.0); }

std::pair<double, double> PitchTrack::span_seconds(Eigen::Index start_frame,
                                                   Eigen::Index end_frame) const {
  const double half = 0.5 * frame_period();
  return {time[start_frame] - half, time[end_frame - 1] + half};
}

Spectrogram stft(const AudioBuffer& buf, int window_samples, int hop_samples) {
  if (hop_samples < 1) throw ArgumentError("hop must be >= 1");
  if (window_samples < 2 || window_samples > buf.size()) {
    throw ArgumentError("STFT window longer than signal");
  }
  Spectrogram s;
  s.window = window_samples;
  s.hop = hop_samples;
  s.fft_size = static_cast<int>(dsp::next_pow2(window_samples));
  s.sample_rate = buf.sample_rate();
  const Eigen::Index frames = 1 + (buf.size() - window_samples) / hop_samples;
  dsp::RealFft fft(s.fft_size);
  const Eigen::VectorXd w = dsp::hann(window_samples);
  s.bins.resize(frames, fft.bins());
  Eigen::VectorXd frame(window_samples);
  for (Eigen::Index t = 0; t < frames; ++t) {
    frame = buf.samples().segment(t * hop_samples, window_samples).cwiseProduct(w);
    s.bins.row(t) = fft.forward(frame).transpose();
  }
  return s;
}

Eigen::VectorXd salience_grid(const SalienceParams& params) {
  const double span = 1200.0 * std::log2(params.f_max / params.f_min);
  const auto n = static_cast<Eigen::Index>(std::floor(span / params.cents_step + 1e-9)) + 1;
  Eigen::VectorXd grid(n);
  for (Eigen::Index b = 0; b < n; ++b) {
    grid[b] = params.f_min * std::exp2(b * params.cents_step / 1200.0);
  }
  return grid;
}

namespace {

struct Peak {
  double freq;
  double mag;
};

std::vector<Peak> find_peaks(const Eigen::Ref<const Eigen::VectorXcd>& frame, int fft_size,
                             int sample_rate, double floor_ratio) {
  const Eigen::Index n = frame.size();
  Eigen::VectorXd mag = frame.cwiseAbs();
  std::vector<Peak> peaks;
  const double bin_hz = static_cast<double>(sample_rate) / fft_size;
  constexpr double kTiny = 1e-300;
  for (Eigen::Index k = 1; k + 1 < n; ++k) {
    if (!(mag[k] > mag[k - 1] && mag[k] >= mag[k + 1])) continue;
    const double a = std::log(std::max(mag[k - 1], kTiny));
    const double b = std::log(mag[k]);
    const double c = std::log(std::max(mag[k + 1], kTiny));
    const double denom = a - 2.0 * b + c;
    double p = denom < 0.0 ? 0.5 * (a - c) / denom : 0.0;
    p = std::clamp(p, -0.5, 0.5);
    peaks.push_back({(k + p) * bin_hz, std::exp(b - 0.25 * (a - c) * p)});
  }
  double top = 0.0;
  for (const auto& pk : peaks) top = std::max(top, pk.mag);
  std::erase_if(peaks, [&](const Peak& pk) { return pk.mag < floor_ratio * top; });
  return peaks;
}

}  // namespace

Eigen::VectorXd salience(const Eigen::Ref<const Eigen::VectorXcd>& frame, int fft_size,
                         int sample_rate, const SalienceParams& params) {
  const Eigen::VectorXd grid = salience_grid(params);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(grid.size());
  const std::vector<Peak> peaks = find_peaks(frame, fft_size, sample_rate, params.peak_floor);
  if (peaks.empty()) return out;
  const double nyquist = 0.5 * sample_rate;
  const double reach = std::exp2(params.weight_width_cents / 1200.0);
  for (Eigen::Index b = 0; b < grid.size(); ++b) {
    double total = 0.0;
    double gain = 1.0;
    for (int h = 1; h <= params.n_harmonics; ++h, gain *= params.decay) {
      const double target = h * grid[b];
      if (target > nyquist) break;
      const double lo = target / reach;
      const double hi = target * reach;
      auto it = std::lower_bound(peaks.begin(), peaks.end(), lo,
                                 [](const Peak& p, double f) { return p.freq < f; });
      double best = 0.0;
      for (; it != peaks.end() && it->freq <= hi; ++it) {
        const double d = 1200.0 * std::log2(it->freq / target);
        if (std::abs(d) >= params.weight_width_cents) continue;
        const double c = std::cos(0.5 * std::numbers::pi * d / params.weight_width_cents);
        best = std::max(best, c * c * it->mag);
      }
      total += gain * best;
    }
    out[b] = total;
  }
  return out;
}

namespace {

double median_of(std::vector<double>& v) {
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(v.begin(), mid);
  return 0.5 * (lower + upper);
}

}  // namespace

PitchTrack track_f0(const Eigen::Ref<const Eigen::MatrixXd>& salience_frames,
                    const Eigen::Ref<const Eigen::VectorXd>& frame_times, const TrackParams& params,
                    const SalienceParams& salience_params) {
  const Eigen::Index frames = salience_frames.rows();
  if (frame_times.size() != frames) throw ArgumentError("frame_times length mismatch");
  const Eigen::VectorXd grid = salience_grid(salience_params);
  if (salience_frames.cols() != grid.size()) throw ArgumentError("salience grid size mismatch");

  PitchTrack track;
  track.time = frame_times;
  track.f0_cents = Eigen::VectorXd::Constant(frames, std::numeric_limits<double>::quiet_NaN());
  track.salience = Eigen::VectorXd::Zero(frames);

  Eigen::VectorXd raw = track.f0_cents;
  for (Eigen::Index t = 0; t < frames; ++t) {
    Eigen::Index arg = 0;
    track.salience[t] = salience_frames.row(t).maxCoeff(&arg);
    raw[t] = hz_to_cents(grid[arg]);
  }

  // Voicing: frame maximum against the running median of positive maxima.
  const Eigen::Index half = params.voicing_window / 2;
  std::vector<double> window;
  Eigen::VectorXd filtered = track.f0_cents;
  for (Eigen::Index t = 0; t < frames; ++t) {
    if (!(track.salience[t] > 0.0)) continue;
    window.clear();
    const Eigen::Index lo = std::max<Eigen::Index>(0, t - half);
    const Eigen::Index hi = std::min<Eigen::Index>(frames, t + half + 1);
    for (Eigen::Index u = lo; u < hi; ++u) {
      if (track.salience[u] > 0.0) window.push_back(track.salience[u]);
    }
    const double med = median_of(window);
    if (track.salience[t] >= params.voicing_threshold * med) filtered[t] = raw[t];
  }

  // Median filter over voiced neighbours.
  const Eigen::Index reach = params.median_filter / 2;
  std::vector<double> local;
  for (Eigen::Index t = 0; t < frames; ++t) {
    if (std::isnan(filtered[t])) continue;
    local.clear();
    for (Eigen::Index u = std::max<Eigen::Index>(0, t - reach);
         u <= std::min<Eigen::Index>(frames - 1, t + reach); ++u) {
      if (!std::isnan(filtered[u])) local.push_back(filtered[u]);
    }
    track.f0_cents[t] = median_of(local);
  }

  // Isolated octave jumps.
  Eigen::VectorXd& f0 = track.f0_cents;
  for (Eigen::Index t = 1; t + 1 < frames; ++t) {
    if (std::isnan(f0[t]) || std::isnan(f0[t - 1]) || std::isnan(f0[t + 1])) continue;
    if (std::abs(f0[t] - f0[t - 1]) >= params.octave_jump_cents &&
        std::abs(f0[t] - f0[t + 1]) >= params.octave_jump_cents) {
      f0[t] = 0.5 * (f0[t - 1] + f0[t + 1]);
    }
  }
  return track;
}

PitchTrack extract_pitch(const AudioBuffer& input, const PitchParams& params) {
  const AudioBuffer buf =
      input.sample_rate() == params.sample_rate ? input : resample(input, params.sample_rate);
  PitchTrack track;
  if (buf.size() < params.window) {
    track.hop_samples = params.hop;
    track.sample_rate = params.sample_rate;
    track.source_id = buf.source_id();
    return track;
  }
  const Spectrogram spec = stft(buf, params.window, params.hop);
  const Eigen::Index frames = spec.bins.rows();
  const Eigen::VectorXd grid = salience_grid(params.salience);
  Eigen::MatrixXd sal(frames, grid.size());
  Eigen::VectorXd times(frames);
  for (Eigen::Index t = 0; t < frames; ++t) {
    sal.row(t) =
        salience(spec.bins.row(t).transpose(), spec.fft_size, spec.sample_rate, params.salience)
            .transpose();
    times[t] = (static_cast<double>(t) * params.hop + 0.5 * params.window) / params.sample_rate;
  }
  track = track_f0(sal, times, params.track, params.salience);
  track.hop_samples = params.hop;
  track.sample_rate = params.sample_rate;
  track.source_id = buf.source_id();
  return track;
}

void save_pitch_csv(const std::filesystem::path& path, const PitchTrack& track) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "time_s,f0_cents,salience\n";
  char line[128];
  for (Eigen::Index t = 0; t < track.size(); ++t) {
    if (track.voiced(t)) {
      std::snprintf(line, sizeof line, "%.6f,%.4f,%.9g\n", track.time[t], track.f0_cents[t],
                    track.salience[t]);
    } else {
      std::snprintf(line, sizeof line, "%.6f,,%.9g\n", track.time[t], track.salience[t]);
    }
    out << line;
  }
}

PitchTrack load_pitch_csv(const std::filesystem::path& path, int sample_rate) {
  std::ifstream in(path);
  if (!in) throw DependencyError("missing pitch track " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "time_s,f0_cents,salience") {
    throw FormatError(path.string() + ": bad pitch CSV header");
  }
  std::vector<double> time, f0, sal;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) {
      throw FormatError(path.string() + ": malformed row");
    }
    try {
      time.push_back(std::stod(line.substr(0, c1)));
      const std::string f = line.substr(c1 + 1, c2 - c1 - 1);
      f0.push_back(f.empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(f));
      sal.push_back(std::stod(line.substr(c2 + 1)));
    } catch (const std::exception&) {
      throw FormatError(path.string() + ": malformed number");
    }
  }
  PitchTrack track;
  const auto n = static_cast<Eigen::Index>(time.size());
  track.time = Eigen::Map<Eigen::VectorXd>(time.data(), n);
  track.f0_cents = Eigen::Map<Eigen::VectorXd>(f0.data(), n);
  track.salience = Eigen::Map<Eigen::VectorXd>(sal.data(), n);
  track.sample_rate = sample_rate;
  track.hop_samples = n > 1 ? static_cast<int>(std::lround((time[1] - time[0]) * sample_rate)) : 256;
  for (Eigen::Index t = 1; t < n; ++t) {
    if (!(time[static_cast<std::size_t>(t)] > time[static_cast<std::size_t>(t - 1)])) {
      throw FormatError(path.string() + ": frame times not increasing");
    }
  }
  track.source_id = path.stem().string();
  return track;
}

}  // namespace cante
