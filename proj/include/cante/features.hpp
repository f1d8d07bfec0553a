#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string>

#include "cante/audio_io.hpp"

namespace cante {

inline constexpr Eigen::Index kFeatureRows = 128;
inline constexpr Eigen::Index kFeatureCols = 426;

enum class FeatureKind : std::uint32_t { kSpec = 0, kMelSpec = 1, kMfcc = 2 };

const char* to_string(FeatureKind kind);
FeatureKind feature_kind_from_string(const std::string& name);

using FeatureGrid = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct FeatureSource {
  std::string source_id;
  Eigen::Index start_frame = 0;
  Eigen::Index end_frame = 0;
  std::string singer;
  int label = -1;
};

/// Fixed 128 x 426 grid (rows = feature dimension, columns = frames).
/// Columns at or beyond valid_frames are zero.
struct FeatureMatrix {
  FeatureKind kind = FeatureKind::kMelSpec;
  FeatureGrid data;
  int valid_frames = 0;
  FeatureSource source;
};

struct FeatureParams {
  int sample_rate = 16000;
  int window = 400;   // 25 ms
  int hop = 160;      // 10 ms
  int fft_bins = 400; // FFT size
  int mel_bands = 128;
  int mfcc_filters = 40;
  int mfcc_coeffs = 40;
  double db_floor = -80.0;
  double log_floor = 1e-10;
};

/// Power spectrogram, (fft_bins/2 + 1) x frames; Hann window, frame t covers
/// [t * hop, t * hop + window). Buffers shorter than one window are
/// zero-padded to one frame.
Eigen::MatrixXd power_spectrogram(const AudioBuffer& buf, const FeatureParams& params = {});

/// Triangular HTK-mel filters over [f_min, f_max], unit height at each
/// filter's centre frequency, evaluated at the FFT bin frequencies.
Eigen::MatrixXd mel_filterbank(int n_filters, int fft_size, int sample_rate, double f_min,
                               double f_max);
double hz_to_mel(double hz);
double mel_to_hz(double mel);
/// Centre frequencies (Hz) of mel_filterbank's filters.
Eigen::VectorXd mel_centers(int n_filters, double f_min, double f_max);

/// Orthonormal DCT-II matrix (n x n).
Eigen::MatrixXd dct_matrix(int n);

/// Area-weighted linear rebinning of `in_bins` equal-width bins to `out_rows`.
Eigen::MatrixXd rebin_matrix(int in_bins, int out_rows);

FeatureMatrix spectrogram_features(const AudioBuffer& buf, const FeatureParams& params = {});
FeatureMatrix melspec_features(const AudioBuffer& buf, const FeatureParams& params = {});
FeatureMatrix mfcc_features(const AudioBuffer& buf, const FeatureParams& params = {});
FeatureMatrix compute_features(FeatureKind kind, const AudioBuffer& buf,
                               const FeatureParams& params = {});

/// Zero-pads to 128 x 426; extra columns are truncated with a warning.
/// Throws ShapeError when the input has more than 128 rows.
FeatureMatrix pad_to_shape(const Eigen::Ref<const Eigen::MatrixXd>& matrix,
                           FeatureKind kind = FeatureKind::kMelSpec);

/// Flat little-endian float32 file with a 32-byte header:
/// "FMTX", version, kind, valid_frames, label, rows, cols, reserved.
void save_feature_file(const std::filesystem::path& path, const FeatureMatrix& m);
FeatureMatrix load_feature_file(const std::filesystem::path& path);

}  // namespace cante
