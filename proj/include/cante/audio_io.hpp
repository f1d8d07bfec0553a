#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace cante {

/// Monaural audio at a fixed sample rate. Immutable once constructed.
class AudioBuffer {
 public:
  AudioBuffer() = default;
  AudioBuffer(Eigen::VectorXd samples, int sample_rate, std::string source_id = {});

  const Eigen::VectorXd& samples() const { return samples_; }
  int sample_rate() const { return sample_rate_; }
  const std::string& source_id() const { return source_id_; }
  Eigen::Index size() const { return samples_.size(); }
  bool empty() const { return samples_.size() == 0; }
  double duration_seconds() const {
    return sample_rate_ > 0 ? static_cast<double>(samples_.size()) / sample_rate_ : 0.0;
  }

 private:
  Eigen::VectorXd samples_;
  int sample_rate_ = 1;
  std::string source_id_;
};

enum class WavEncoding { kPcm8, kPcm16, kPcm24, kPcm32, kFloat32 };

/// Decodes a RIFF/WAVE byte stream (PCM 8/16/24/32-bit or 32-bit float, one
/// or two channels). Stereo is averaged to mono.
AudioBuffer decode_wav(std::span<const std::uint8_t> bytes, std::string source_id = {});
AudioBuffer load_wav(const std::filesystem::path& path);

/// Encodes one or more equal-length channels; samples are clipped to [-1, 1]
/// for integer encodings.
std::vector<std::uint8_t> encode_wav(const std::vector<Eigen::VectorXd>& channels,
                                     int sample_rate, WavEncoding encoding);
void save_wav(const std::filesystem::path& path, const AudioBuffer& buf,
              WavEncoding encoding = WavEncoding::kFloat32);

/// Windowed-sinc polyphase resampler with a Kaiser window.
AudioBuffer resample(const AudioBuffer& buf, int target_rate);

/// Samples in [start, end) seconds. Requires 0 <= start < end <= duration.
AudioBuffer slice(const AudioBuffer& buf, double start, double end);

/// Samples in [start, end) seconds where the range may overrun the recording;
/// missing samples are zero.
AudioBuffer slice_padded(const AudioBuffer& buf, double start, double end);

/// Window of `window_seconds` centred on the midpoint of [start, end],
/// zero-padded where it overruns the recording.
AudioBuffer slice_centered(const AudioBuffer& buf, double start, double end,
                           double window_seconds);

struct Recording {
  std::filesystem::path path;
  std::string singer;
  std::string style;
  std::string source_id;
};

struct Corpus {
  std::vector<Recording> recordings;

  /// Sorted unique singer labels; a singer's label index is its position.
  std::vector<std::string> singers() const;
  int singer_index(const std::string& singer) const;
  /// Throws ArgumentError if a singer has fewer than `min_recordings`.
  void check_min_recordings(int min_recordings = 3) const;
};

/// Manifest: JSON array of {"path", "singer", "style"}. Relative paths are
/// resolved against the manifest's directory. source_id is the file stem.
Corpus load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const Corpus& corpus);

}  // namespace cante
