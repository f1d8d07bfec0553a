#include "cante/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <vector>

#include "cante/dsp.hpp"
#include "cante/error.hpp"
#include "cante/log.hpp"

namespace cante {

const char* to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::kSpec: return "spec";
    case FeatureKind::kMelSpec: return "melspec";
    case FeatureKind::kMfcc: return "mfcc";
  }
  return "melspec";
}

FeatureKind feature_kind_from_string(const std::string& name) {
  if (name == "spec") return FeatureKind::kSpec;
  if (name == "melspec") return FeatureKind::kMelSpec;
  if (name == "mfcc") return FeatureKind::kMfcc;
  throw ArgumentError("unknown feature kind " + name);
}

Eigen::MatrixXd power_spectrogram(const AudioBuffer& input, const FeatureParams& params) {
  if (input.empty()) throw ArgumentError("empty audio buffer");
  const AudioBuffer buf =
      input.sample_rate() == params.sample_rate ? input : resample(input, params.sample_rate);
  const Eigen::Index n = buf.size();
  const Eigen::Index frames = n < params.window ? 1 : 1 + (n - params.window) / params.hop;
  dsp::RealFft fft(params.fft_bins);
  const Eigen::VectorXd w = dsp::hann(params.window);
  Eigen::MatrixXd power(fft.bins(), frames);
  Eigen::VectorXd frame(params.window);
  for (Eigen::Index t = 0; t < frames; ++t) {
    frame.setZero();
    const Eigen::Index start = t * params.hop;
    const Eigen::Index len = std::min<Eigen::Index>(params.window, n - start);
    frame.head(len) = buf.samples().segment(start, len);
    frame.array() *= w.array();
    power.col(t) = fft.forward(frame).cwiseAbs2();
  }
  return power;
}

double hz_to_mel(double hz) { return 1127.0 * std::log1p(hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * std::expm1(mel / 1127.0); }

Eigen::VectorXd mel_centers(int n_filters, double f_min, double f_max) {
  const double lo = hz_to_mel(f_min);
  const double hi = hz_to_mel(f_max);
  Eigen::VectorXd c(n_filters);
  for (int j = 0; j < n_filters; ++j) c[j] = mel_to_hz(lo + (hi - lo) * (j + 1) / (n_filters + 1));
  return c;
}

Eigen::MatrixXd mel_filterbank(int n_filters, int fft_size, int sample_rate, double f_min,
                               double f_max) {
  const int bins = fft_size / 2 + 1;
  const double lo = hz_to_mel(f_min);
  const double hi = hz_to_mel(f_max);
  std::vector<double> edges(static_cast<std::size_t>(n_filters + 2));
  for (int i = 0; i < n_filters + 2; ++i) {
    edges[static_cast<std::size_t>(i)] = mel_to_hz(lo + (hi - lo) * i / (n_filters + 1));
  }
  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(n_filters, bins);
  for (int j = 0; j < n_filters; ++j) {
    const double left = edges[static_cast<std::size_t>(j)];
    const double center = edges[static_cast<std::size_t>(j + 1)];
    const double right = edges[static_cast<std::size_t>(j + 2)];
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / fft_size;
      const double up = (f - left) / (center - left);
      const double down = (right - f) / (right - center);
      fb(j, k) = std::max(0.0, std::min(up, down));
    }
  }
  return fb;
}

Eigen::MatrixXd dct_matrix(int n) {
  Eigen::MatrixXd m(n, n);
  for (int k = 0; k < n; ++k) {
    const double scale = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (int i = 0; i < n; ++i) {
      m(k, i) = scale * std::cos(std::numbers::pi * k * (2.0 * i + 1.0) / (2.0 * n));
    }
  }
  return m;
}

Eigen::MatrixXd rebin_matrix(int in_bins, int out_rows) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(out_rows, in_bins);
  const double width = static_cast<double>(in_bins) / out_rows;
  for (int r = 0; r < out_rows; ++r) {
    const double lo = r * width;
    const double hi = (r + 1) * width;
    for (int i = static_cast<int>(std::floor(lo)); i < in_bins && i < hi; ++i) {
      const double overlap = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
      if (overlap > 0.0) m(r, i) = overlap / width;
    }
  }
  return m;
}

FeatureMatrix pad_to_shape(const Eigen::Ref<const Eigen::MatrixXd>& matrix, FeatureKind kind) {
  if (matrix.rows() > kFeatureRows) {
    throw ShapeError("feature matrix has " + std::to_string(matrix.rows()) + " rows (max 128)");
  }
  if (matrix.cols() > kFeatureCols) {
    log::warn("features", {{"msg", "truncating frames"},
                           {"frames", std::to_string(matrix.cols())},
                           {"kept", std::to_string(kFeatureCols)}});
  }
  FeatureMatrix out;
  out.kind = kind;
  out.valid_frames = static_cast<int>(std::min<Eigen::Index>(matrix.cols(), kFeatureCols));
  out.data = FeatureGrid::Zero(kFeatureRows, kFeatureCols);
  out.data.topLeftCorner(matrix.rows(), out.valid_frames) =
      matrix.leftCols(out.valid_frames).cast<float>();
  return out;
}

FeatureMatrix spectrogram_features(const AudioBuffer& buf, const FeatureParams& params) {
  const Eigen::MatrixXd power = power_spectrogram(buf, params);
  const Eigen::MatrixXd rebinned =
      rebin_matrix(static_cast<int>(power.rows()), static_cast<int>(kFeatureRows)) * power;
  const double top = rebinned.maxCoeff();
  Eigen::MatrixXd db(rebinned.rows(), rebinned.cols());
  if (!(top > 0.0)) {
    db.setConstant(params.db_floor);
  } else {
    db = (10.0 * (rebinned.array() / top).max(1e-300).log10()).max(params.db_floor);
  }
  return pad_to_shape(db, FeatureKind::kSpec);
}

FeatureMatrix melspec_features(const AudioBuffer& buf, const FeatureParams& params) {
  const Eigen::MatrixXd power = power_spectrogram(buf, params);
  const Eigen::MatrixXd fb = mel_filterbank(params.mel_bands, params.fft_bins, params.sample_rate,
                                            0.0, 0.5 * params.sample_rate);
  const Eigen::MatrixXd mel = (fb * power).array().max(params.log_floor).log();
  return pad_to_shape(mel, FeatureKind::kMelSpec);
}

FeatureMatrix mfcc_features(const AudioBuffer& buf, const FeatureParams& params) {
  const Eigen::MatrixXd power = power_spectrogram(buf, params);
  const Eigen::MatrixXd fb = mel_filterbank(params.mfcc_filters, params.fft_bins,
                                            params.sample_rate, 0.0, 0.5 * params.sample_rate);
  const Eigen::MatrixXd logmel = (fb * power).array().max(params.log_floor).log();
  const Eigen::MatrixXd ceps = dct_matrix(params.mfcc_filters).topRows(params.mfcc_coeffs) * logmel;
  return pad_to_shape(ceps, FeatureKind::kMfcc);
}

FeatureMatrix compute_features(FeatureKind kind, const AudioBuffer& buf,
                               const FeatureParams& params) {
  switch (kind) {
    case FeatureKind::kSpec: return spectrogram_features(buf, params);
    case FeatureKind::kMelSpec: return melspec_features(buf, params);
    case FeatureKind::kMfcc: return mfcc_features(buf, params);
  }
  throw ArgumentError("unknown feature kind");
}

namespace {

void put_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF), static_cast<unsigned char>((v >> 8) & 0xFF),
                        static_cast<unsigned char>((v >> 16) & 0xFF),
                        static_cast<unsigned char>((v >> 24) & 0xFF)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(const unsigned char* b) {
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_feature_file(const std::filesystem::path& path, const FeatureMatrix& m) {
  if (m.data.rows() != kFeatureRows || m.data.cols() != kFeatureCols) {
    throw ShapeError("feature files hold 128 x 426 grids");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write("FMTX", 4);
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(m.kind));
  put_u32(out, static_cast<std::uint32_t>(m.valid_frames));
  put_u32(out, static_cast<std::uint32_t>(static_cast<std::int32_t>(m.source.label)));
  put_u32(out, static_cast<std::uint32_t>(kFeatureRows));
  put_u32(out, static_cast<std::uint32_t>(kFeatureCols));
  put_u32(out, 0);
  for (Eigen::Index r = 0; r < kFeatureRows; ++r) {
    for (Eigen::Index c = 0; c < kFeatureCols; ++c) {
      std::uint32_t u;
      const float f = m.data(r, c);
      std::memcpy(&u, &f, sizeof u);
      put_u32(out, u);
    }
  }
}

FeatureMatrix load_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DependencyError("missing feature file " + path.string());
  unsigned char header[32];
  if (!in.read(reinterpret_cast<char*>(header), 32) || std::memcmp(header, "FMTX", 4) != 0) {
    throw FormatError(path.string() + ": not a feature file");
  }
  if (get_u32(header + 4) != 1) throw UnsupportedError(path.string() + ": unknown version");
  const auto rows = get_u32(header + 20);
  const auto cols = get_u32(header + 24);
  if (rows != kFeatureRows || cols != kFeatureCols) throw FormatError(path.string() + ": bad shape");
  FeatureMatrix m;
  m.kind = static_cast<FeatureKind>(get_u32(header + 8));
  m.valid_frames = static_cast<int>(get_u32(header + 12));
  m.source.label = static_cast<std::int32_t>(get_u32(header + 16));
  std::vector<unsigned char> body(static_cast<std::size_t>(rows * cols * 4));
  if (!in.read(reinterpret_cast<char*>(body.data()), static_cast<std::streamsize>(body.size()))) {
    throw FormatError(path.string() + ": truncated");
  }
  m.data.resize(rows, cols);
  for (std::size_t i = 0; i < static_cast<std::size_t>(rows) * cols; ++i) {
    const std::uint32_t u = get_u32(body.data() + 4 * i);
    float f;
    std::memcpy(&f, &u, sizeof f);
    m.data(static_cast<Eigen::Index>(i / cols), static_cast<Eigen::Index>(i % cols)) = f;
  }
  return m;
}

}  // namespace cante
