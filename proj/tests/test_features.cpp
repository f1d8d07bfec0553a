#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "cante/error.hpp"
#include "cante/features.hpp"
#include "cante/log.hpp"
#include "cante/random.hpp"
#include "test_util.hpp"

using namespace cante;

namespace {

constexpr double kPi = std::numbers::pi;

AudioBuffer tone(double hz, double seconds, int rate = 16000, double amp = 0.5) {
  const auto n = static_cast<Eigen::Index>(seconds * rate);
  Eigen::VectorXd x(n);
  for (Eigen::Index i = 0; i < n; ++i) x[i] = amp * std::sin(2 * kPi * hz * i / rate);
  return AudioBuffer(x, rate);
}

AudioBuffer noise(double seconds, std::uint64_t seed) {
  Rng rng(seed);
  const auto n = static_cast<Eigen::Index>(seconds * 16000);
  Eigen::VectorXd x(n);
  for (Eigen::Index i = 0; i < n; ++i) x[i] = rng.normal(0.0, 0.3);
  return AudioBuffer(x, 16000);
}

// Straight-line references: direct DFT, triangular filters from the HTK
// formula, DCT-II by its definition.
std::vector<double> direct_power(const Eigen::VectorXd& x, Eigen::Index start) {
  const int n = 400;
  std::vector<double> out(201);
  for (int k = 0; k <= 200; ++k) {
    std::complex<double> acc = 0;
    for (int i = 0; i < n; ++i) {
      const double w = 0.5 - 0.5 * std::cos(2 * kPi * i / n);
      const double v = start + i < x.size() ? x[start + i] : 0.0;
      acc += w * v * std::polar(1.0, -2 * kPi * k * i / n);
    }
    out[static_cast<std::size_t>(k)] = std::norm(acc);
  }
  return out;
}

double triangle(int j, int n_filters, double f) {
  auto mel = [](double hz) { return 1127.0 * std::log(1.0 + hz / 700.0); };
  auto hz = [](double m) { return 700.0 * (std::exp(m / 1127.0) - 1.0); };
  const double top = mel(8000.0);
  const double l = hz(top * j / (n_filters + 1));
  const double c = hz(top * (j + 1) / (n_filters + 1));
  const double r = hz(top * (j + 2) / (n_filters + 1));
  if (f <= l || f >= r) return 0.0;
  return f <= c ? (f - l) / (c - l) : (r - f) / (r - c);
}

std::vector<double> reference_mfcc(const std::vector<double>& power) {
  const int m = 40;
  std::vector<double> logmel(m);
  for (int j = 0; j < m; ++j) {
    double e = 0;
    for (int k = 0; k <= 200; ++k) e += triangle(j, m, 40.0 * k) * power[static_cast<std::size_t>(k)];
    logmel[static_cast<std::size_t>(j)] = std::log(std::max(e, 1e-10));
  }
  std::vector<double> c(m);
  for (int k = 0; k < m; ++k) {
    double s = 0;
    for (int i = 0; i < m; ++i) s += logmel[static_cast<std::size_t>(i)] * std::cos(kPi * k * (i + 0.5) / m);
    c[static_cast<std::size_t>(k)] = s * std::sqrt((k == 0 ? 1.0 : 2.0) / m);
  }
  return c;
}

}  // namespace

TEST_CASE("power spectrogram equals a direct DFT") {
  const AudioBuffer buf = noise(0.1, 3);
  const Eigen::MatrixXd p = power_spectrogram(buf);
  CHECK(p.rows() == 201);
  CHECK(p.cols() == 1 + (1600 - 400) / 160);
  for (Eigen::Index t : {Eigen::Index{0}, Eigen::Index{4}, p.cols() - 1}) {
    const auto ref = direct_power(buf.samples(), t * 160);
    for (int k = 0; k <= 200; ++k) {
      CHECK(p(k, t) == doctest::Approx(ref[static_cast<std::size_t>(k)]).epsilon(1e-9).scale(1e-9));
    }
  }
}

TEST_CASE("scaling the waveform scales power by the square of the gain") {
  const AudioBuffer buf = noise(0.2, 8);
  const AudioBuffer louder(buf.samples() * 3.0, 16000);
  const Eigen::MatrixXd a = power_spectrogram(buf);
  const Eigen::MatrixXd b = power_spectrogram(louder);
  CHECK(((b - 9.0 * a).cwiseAbs().array() <= 1e-9 * (1.0 + b.array().abs())).all());
}

TEST_CASE("frame count and padding") {
  const FeatureMatrix m = melspec_features(noise(3.0, 1));
  CHECK(m.valid_frames == 298);
  CHECK(m.data.rows() == kFeatureRows);
  CHECK(m.data.cols() == kFeatureCols);
  CHECK(m.data.rightCols(kFeatureCols - 298).isZero(0));
  CHECK(m.data.allFinite());
  CHECK_THROWS_AS(melspec_features(AudioBuffer()), ArgumentError);
}

TEST_CASE("silence sits on the floors") {
  const AudioBuffer quiet(Eigen::VectorXd::Zero(16000), 16000);
  const FeatureMatrix spec = spectrogram_features(quiet);
  CHECK((spec.data.leftCols(spec.valid_frames).array() == -80.0f).all());
  const FeatureMatrix mel = melspec_features(quiet);
  CHECK((mel.data.leftCols(mel.valid_frames).array() == static_cast<float>(std::log(1e-10))).all());
  const FeatureMatrix mfcc = mfcc_features(quiet);
  for (int t = 0; t < mfcc.valid_frames; ++t) {
    CHECK(mfcc.data(0, t) == doctest::Approx(std::sqrt(40.0) * std::log(1e-10)).epsilon(1e-6));
    CHECK(mfcc.data.col(t).segment(1, 39).cwiseAbs().maxCoeff() < 1e-4f);
  }
  CHECK(mfcc.data.bottomRows(88).isZero(0));
}

TEST_CASE("MFCC of white noise matches the reference computation") {
  const AudioBuffer buf = noise(0.5, 11);
  const FeatureMatrix m = mfcc_features(buf);
  for (int t : {0, 7, m.valid_frames - 1}) {
    const auto ref = reference_mfcc(direct_power(buf.samples(), t * 160));
    for (int k = 0; k < 40; ++k) {
      const double want = ref[static_cast<std::size_t>(k)];
      CHECK(std::abs(m.data(k, t) - want) <= 1e-6 * std::abs(want) + 1e-5);
    }
  }
  CHECK(m.data.bottomRows(88).isZero(0));
}

TEST_CASE("a 1 kHz tone peaks where the filters say it should") {
  const AudioBuffer buf = tone(1000.0, 1.0);
  const Eigen::VectorXd centres = mel_centers(128, 0.0, 8000.0);
  const double target = 1127.0 * std::log(1.0 + 1000.0 / 700.0);
  Eigen::Index nearest = 0;
  (centres.unaryExpr([](double f) { return 1127.0 * std::log1p(f / 700.0); }).array() - target)
      .abs()
      .minCoeff(&nearest);
  const FeatureMatrix mel = melspec_features(buf);
  Eigen::Index best = 0;
  mel.data.col(mel.valid_frames / 2).maxCoeff(&best);
  CHECK(best == nearest);

  // Tone sits in FFT bin 25; the owning row is the one with the most weight on it.
  const Eigen::MatrixXd rebin = rebin_matrix(201, 128);
  Eigen::Index owner = 0;
  rebin.col(25).maxCoeff(&owner);
  const FeatureMatrix spec = spectrogram_features(buf);
  for (int t = 0; t < spec.valid_frames; t += 10) {
    Eigen::Index row = 0;
    spec.data.col(t).maxCoeff(&row);
    CHECK(row == owner);
  }
}

TEST_CASE("filterbank rows are unimodal with unit peaks") {
  const Eigen::MatrixXd fb = mel_filterbank(40, 400, 16000, 0.0, 8000.0);
  CHECK(fb.rows() == 40);
  CHECK(fb.cols() == 201);
  CHECK((fb.array() >= 0.0).all());
  const Eigen::VectorXd centres = mel_centers(40, 0.0, 8000.0);
  for (Eigen::Index j = 0; j < fb.rows(); ++j) {
    Eigen::Index peak = 0;
    fb.row(j).maxCoeff(&peak);
    for (Eigen::Index k = 1; k <= peak; ++k) CHECK(fb(j, k) >= fb(j, k - 1));
    for (Eigen::Index k = peak + 1; k < fb.cols(); ++k) CHECK(fb(j, k) <= fb(j, k - 1));
    for (Eigen::Index k = 0; k < fb.cols(); ++k) CHECK(fb(j, k) == doctest::Approx(triangle(static_cast<int>(j), 40, 40.0 * k)));
  }
  CHECK(fb.maxCoeff() <= 1.0);
  // A centre placed exactly on a bin reaches 1 there.
  const Eigen::MatrixXd on_bin = mel_filterbank(1, 400, 16000, 0.0, mel_to_hz(2 * hz_to_mel(2000.0)));
  CHECK(on_bin(0, 50) == doctest::Approx(1.0));
  CHECK(centres[0] > 0.0);
  CHECK(mel_to_hz(hz_to_mel(1234.5)) == doctest::Approx(1234.5));
}

TEST_CASE("filterbank on a flat spectrum gives each filter's response sum") {
  const Eigen::MatrixXd fb = mel_filterbank(128, 400, 16000, 0.0, 8000.0);
  const Eigen::VectorXd flat = Eigen::VectorXd::Constant(201, 2.5);
  const Eigen::VectorXd out = fb * flat;
  for (Eigen::Index j = 0; j < fb.rows(); ++j) {
    double direct = 0;
    for (Eigen::Index k = 0; k < fb.cols(); ++k) direct += 2.5 * fb(j, k);
    CHECK(out[j] == doctest::Approx(direct).epsilon(1e-12));
  }
}

TEST_CASE("DCT matrix is orthonormal") {
  for (int n : {1, 2, 13, 40, 128}) {
    const Eigen::MatrixXd d = dct_matrix(n);
    const double err = (d * d.transpose() - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff();
    CHECK(err < 1e-10);
  }
}

TEST_CASE("rebinning conserves mass per input bin") {
  const Eigen::MatrixXd r = rebin_matrix(201, 128);
  const double width = 201.0 / 128.0;
  const Eigen::VectorXd col_mass = r.colwise().sum().transpose() * width;
  CHECK((col_mass.array() - 1.0).abs().maxCoeff() < 1e-12);
  CHECK((r.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("pad_to_shape") {
  Rng rng(4);
  Eigen::MatrixXd a(128, 300);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  const FeatureMatrix p = pad_to_shape(a);
  CHECK(p.valid_frames == 300);
  CHECK(p.data.rightCols(126).isZero(0));
  const FeatureMatrix again = pad_to_shape(p.data.cast<double>());
  CHECK(again.data == p.data);
  CHECK(again.valid_frames == 426);

  const long before = log::warning_count();
  const FeatureMatrix cut = pad_to_shape(Eigen::MatrixXd::Ones(128, 500));
  CHECK(cut.valid_frames == 426);
  CHECK(log::warning_count() == before + 1);

  const FeatureMatrix small = pad_to_shape(Eigen::MatrixXd::Ones(40, 10));
  CHECK(small.data.bottomRows(88).isZero(0));
  CHECK_THROWS_AS(pad_to_shape(Eigen::MatrixXd::Ones(129, 10)), ShapeError);
}

TEST_CASE("feature files round trip") {
  testutil::TempDir dir("features");
  FeatureMatrix m = mfcc_features(noise(1.0, 5));
  m.source.label = 3;
  save_feature_file(dir / "x.feat", m);
  CHECK(std::filesystem::file_size(dir / "x.feat") == 32 + 4 * 128 * 426);
  const FeatureMatrix back = load_feature_file(dir / "x.feat");
  CHECK(back.kind == FeatureKind::kMfcc);
  CHECK(back.valid_frames == m.valid_frames);
  CHECK(back.source.label == 3);
  CHECK(back.data == m.data);

  auto bytes = testutil::read_bytes(dir / "x.feat");
  bytes[0] = 'X';
  {
    std::ofstream out(dir / "bad.feat", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_AS(load_feature_file(dir / "bad.feat"), FormatError);
  CHECK_THROWS_AS(load_feature_file(dir / "missing.feat"), DependencyError);
  CHECK(feature_kind_from_string(to_string(FeatureKind::kSpec)) == FeatureKind::kSpec);
  CHECK_THROWS_AS(feature_kind_from_string("chroma"), ArgumentError);
}
