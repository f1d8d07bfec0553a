#include "cante/audio_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <set>

#include "cante/error.hpp"

namespace cante {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t read_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t read_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

double decode_sample(const std::uint8_t* p, std::uint16_t format, int bits) {
  if (format == kFormatFloat) {
    std::uint32_t u = read_u32(p);
    float f;
    std::memcpy(&f, &u, sizeof f);
    return static_cast<double>(f);
  }
  switch (bits) {
    case 8:
      return (static_cast<int>(p[0]) - 128) / 128.0;
    case 16:
      return static_cast<std::int16_t>(read_u16(p)) / 32768.0;
    case 24: {
      std::int32_t v = static_cast<std::int32_t>(p[0] | (p[1] << 8) | (p[2] << 16));
      if (v & 0x800000) v -= 0x1000000;
      return v / 8388608.0;
    }
    case 32:
      return static_cast<std::int32_t>(read_u32(p)) / 2147483648.0;
    default:
      throw UnsupportedError("unsupported PCM bit depth " + std::to_string(bits));
  }
}

// Lowpass prototype h(d) = fc * sinc(fc * d) under a Kaiser window spanning
// |d| <= half_width.
double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  const double q = x * x / 4.0;
  for (int k = 1; k < 64; ++k) {
    term *= q / (static_cast<double>(k) * k);
    sum += term;
    if (term < 1e-17 * sum) break;
  }
  return sum;
}

}  // namespace

AudioBuffer::AudioBuffer(Eigen::VectorXd samples, int sample_rate, std::string source_id)
    : samples_(std::move(samples)), sample_rate_(sample_rate), source_id_(std::move(source_id)) {
  if (sample_rate_ <= 0) throw ArgumentError("sample_rate must be positive");
  if (!samples_.allFinite()) throw ArgumentError("audio samples must be finite");
}

AudioBuffer decode_wav(std::span<const std::uint8_t> bytes, std::string source_id) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw FormatError("not a RIFF/WAVE stream");
  }
  std::uint16_t format = 0;
  int channels = 0;
  int bits = 0;
  std::uint32_t rate = 0;
  int block_align = 0;
  const std::uint8_t* data = nullptr;
  std::size_t data_size = 0;
  bool have_fmt = false;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || body + size > bytes.size()) throw FormatError("truncated fmt chunk");
      format = read_u16(chunk + 8);
      channels = read_u16(chunk + 10);
      rate = read_u32(chunk + 12);
      block_align = read_u16(chunk + 20);
      bits = read_u16(chunk + 22);
      if (format == kFormatExtensible) {
        if (size < 40) throw FormatError("truncated WAVE_FORMAT_EXTENSIBLE header");
        format = read_u16(chunk + 8 + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = std::min<std::size_t>(size, bytes.size() - body);
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt) throw FormatError("missing fmt chunk");
  if (data == nullptr) throw FormatError("missing data chunk");
  if (rate == 0) throw FormatError("zero sample rate");
  if (channels < 1 || channels > 2) {
    throw UnsupportedError("unsupported channel count " + std::to_string(channels));
  }
  if (format == kFormatFloat) {
    if (bits != 32) throw UnsupportedError("only 32-bit float WAV is supported");
  } else if (format == kFormatPcm) {
    if (bits != 8 && bits != 16 && bits != 24 && bits != 32) {
      throw UnsupportedError("unsupported PCM bit depth " + std::to_string(bits));
    }
  } else {
    throw UnsupportedError("unsupported WAV encoding " + std::to_string(format));
  }
  const int bytes_per_sample = bits / 8;
  if (block_align != bytes_per_sample * channels) throw FormatError("inconsistent block alignment");

  const Eigen::Index frames = static_cast<Eigen::Index>(data_size / block_align);
  Eigen::VectorXd samples(frames);
  for (Eigen::Index i = 0; i < frames; ++i) {
    const std::uint8_t* frame = data + i * block_align;
    if (channels == 1) {
      samples[i] = decode_sample(frame, format, bits);
    } else {
      samples[i] = 0.5 * (decode_sample(frame, format, bits) +
                          decode_sample(frame + bytes_per_sample, format, bits));
    }
  }
  return AudioBuffer(std::move(samples), static_cast<int>(rate), std::move(source_id));
}

AudioBuffer load_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_wav(bytes, path.stem().string());
}

std::vector<std::uint8_t> encode_wav(const std::vector<Eigen::VectorXd>& channels,
                                     int sample_rate, WavEncoding encoding) {
  if (channels.empty()) throw ArgumentError("no channels to encode");
  const Eigen::Index frames = channels.front().size();
  for (const auto& c : channels) {
    if (c.size() != frames) throw ArgumentError("channels differ in length");
  }
  int bits = 16;
  std::uint16_t format = kFormatPcm;
  switch (encoding) {
    case WavEncoding::kPcm8: bits = 8; break;
    case WavEncoding::kPcm16: bits = 16; break;
    case WavEncoding::kPcm24: bits = 24; break;
    case WavEncoding::kPcm32: bits = 32; break;
    case WavEncoding::kFloat32: bits = 32; format = kFormatFloat; break;
  }
  const auto n_channels = static_cast<std::uint16_t>(channels.size());
  const std::uint16_t block_align = static_cast<std::uint16_t>(n_channels * bits / 8);
  const std::uint32_t data_size = static_cast<std::uint32_t>(frames) * block_align;

  std::vector<std::uint8_t> out;
  out.reserve(44 + data_size);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_size);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, format);
  put_u16(out, n_channels);
  put_u32(out, static_cast<std::uint32_t>(sample_rate));
  put_u32(out, static_cast<std::uint32_t>(sample_rate) * block_align);
  put_u16(out, block_align);
  put_u16(out, static_cast<std::uint16_t>(bits));
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_size);

  for (Eigen::Index i = 0; i < frames; ++i) {
    for (const auto& c : channels) {
      const double x = c[i];
      if (encoding == WavEncoding::kFloat32) {
        const float f = static_cast<float>(x);
        std::uint32_t u;
        std::memcpy(&u, &f, sizeof u);
        put_u32(out, u);
        continue;
      }
      const double clipped = std::clamp(x, -1.0, 1.0);
      switch (encoding) {
        case WavEncoding::kPcm8: {
          const long v = std::lround(clipped * 128.0) + 128;
          out.push_back(static_cast<std::uint8_t>(std::clamp(v, 0L, 255L)));
          break;
        }
        case WavEncoding::kPcm16: {
          const long v = std::clamp(std::lround(clipped * 32768.0), -32768L, 32767L);
          put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(v)));
          break;
        }
        case WavEncoding::kPcm24: {
          const long v = std::clamp(std::lround(clipped * 8388608.0), -8388608L, 8388607L);
          const auto u = static_cast<std::uint32_t>(v);
          out.push_back(static_cast<std::uint8_t>(u & 0xFF));
          out.push_back(static_cast<std::uint8_t>((u >> 8) & 0xFF));
          out.push_back(static_cast<std::uint8_t>((u >> 16) & 0xFF));
          break;
        }
        case WavEncoding::kPcm32: {
          const long long v = std::clamp(std::llround(clipped * 2147483648.0), -2147483648LL,
                                         2147483647LL);
          put_u32(out, static_cast<std::uint32_t>(static_cast<std::int32_t>(v)));
          break;
        }
        case WavEncoding::kFloat32: break;
      }
    }
  }
  return out;
}

void save_wav(const std::filesystem::path& path, const AudioBuffer& buf, WavEncoding encoding) {
  const auto bytes = encode_wav({buf.samples()}, buf.sample_rate(), encoding);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

AudioBuffer resample(const AudioBuffer& buf, int target_rate) {
  if (target_rate <= 0) throw ArgumentError("target_rate must be positive");
  const int source_rate = buf.sample_rate();
  if (target_rate == source_rate) return buf;

  const long long g = std::gcd(source_rate, target_rate);
  const long long up = target_rate / g;
  const long long down = source_rate / g;
  const Eigen::Index n_in = buf.size();
  const Eigen::Index n_out = static_cast<Eigen::Index>(
      (static_cast<long long>(n_in) * target_rate + source_rate / 2) / source_rate);

  // Cutoff relative to the input Nyquist, slightly below the lower of the two
  // Nyquist rates. The kernel spans 64 taps at the lower rate.
  constexpr double kRolloff = 0.92;
  constexpr double kBeta = 8.6;
  constexpr int kTapsPerPhase = 64;
  const double ratio = std::min(1.0, static_cast<double>(target_rate) / source_rate);
  const double fc = kRolloff * ratio;
  const double half_width = 0.5 * kTapsPerPhase / ratio;
  const int reach = static_cast<int>(std::ceil(half_width));
  const int taps = 2 * reach;
  const double i0_beta = bessel_i0(kBeta);

  Eigen::MatrixXd table(up, taps);
  for (long long p = 0; p < up; ++p) {
    const double frac = static_cast<double>(p) / up;
    double sum = 0.0;
    for (int j = 0; j < taps; ++j) {
      const double d = (j - reach + 1) - frac;
      double h = 0.0;
      if (std::abs(d) < half_width) {
        const double x = fc * d;
        const double sinc = x == 0.0 ? 1.0 : std::sin(M_PI * x) / (M_PI * x);
        const double r = d / half_width;
        h = fc * sinc * bessel_i0(kBeta * std::sqrt(1.0 - r * r)) / i0_beta;
      }
      table(p, j) = h;
      sum += h;
    }
    table.row(p) /= sum;
  }

  const Eigen::VectorXd& x = buf.samples();
  Eigen::VectorXd y(n_out);
  for (Eigen::Index n = 0; n < n_out; ++n) {
    const long long pos = static_cast<long long>(n) * down;
    const long long base = pos / up;
    const long long phase = pos % up;
    double acc = 0.0;
    const long long first = base - reach + 1;
    for (int j = 0; j < taps; ++j) {
      const long long idx = first + j;
      if (idx < 0 || idx >= n_in) continue;
      acc += table(phase, j) * x[idx];
    }
    y[n] = acc;
  }
  return AudioBuffer(std::move(y), target_rate, buf.source_id());
}

AudioBuffer slice(const AudioBuffer& buf, double start, double end) {
  const double duration = buf.duration_seconds();
  if (!(start >= 0.0) || !(start < end) || end > duration + 0.5 / buf.sample_rate()) {
    throw ArgumentError("slice bounds out of range");
  }
  return slice_padded(buf, start, end);
}

AudioBuffer slice_padded(const AudioBuffer& buf, double start, double end) {
  if (!(start < end)) throw ArgumentError("slice bounds inverted");
  const double rate = buf.sample_rate();
  const long long i0 = std::llround(start * rate);
  const long long i1 = std::llround(end * rate);
  const long long n = i1 - i0;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  const long long lo = std::max<long long>(i0, 0);
  const long long hi = std::min<long long>(i1, buf.size());
  if (hi > lo) out.segment(lo - i0, hi - lo) = buf.samples().segment(lo, hi - lo);
  return AudioBuffer(std::move(out), buf.sample_rate(), buf.source_id());
}

AudioBuffer slice_centered(const AudioBuffer& buf, double start, double end,
                           double window_seconds) {
  if (!(start <= end) || !(window_seconds > 0.0)) throw ArgumentError("invalid context window");
  const double rate = buf.sample_rate();
  const long long n = std::llround(window_seconds * rate);
  const double center = 0.5 * (start + end);
  const long long i0 = std::llround((center - 0.5 * window_seconds) * rate);
  return slice_padded(buf, i0 / rate, (i0 + n) / rate);
}

std::vector<std::string> Corpus::singers() const {
  std::set<std::string> s;
  for (const auto& r : recordings) s.insert(r.singer);
  return {s.begin(), s.end()};
}

int Corpus::singer_index(const std::string& singer) const {
  const auto all = singers();
  const auto it = std::find(all.begin(), all.end(), singer);
  if (it == all.end()) throw ArgumentError("unknown singer " + singer);
  return static_cast<int>(it - all.begin());
}

void Corpus::check_min_recordings(int min_recordings) const {
  std::map<std::string, int> count;
  for (const auto& r : recordings) ++count[r.singer];
  for (const auto& [singer, n] : count) {
    if (n < min_recordings) {
      throw ArgumentError("singer " + singer + " has " + std::to_string(n) +
                          " recordings, fewer than " + std::to_string(min_recordings));
    }
  }
}

Corpus load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DependencyError("missing manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest " + path.string() + ": " + e.what());
  }
  if (!j.is_array()) throw FormatError("manifest must be a JSON array");
  Corpus corpus;
  std::set<std::string> ids;
  for (const auto& rec : j) {
    if (!rec.is_object() || !rec.contains("path") || !rec.contains("singer")) {
      throw FormatError("manifest record needs \"path\" and \"singer\"");
    }
    Recording r;
    r.path = rec.at("path").get<std::string>();
    if (r.path.is_relative()) r.path = path.parent_path() / r.path;
    r.singer = rec.at("singer").get<std::string>();
    r.style = rec.value("style", std::string{});
    r.source_id = r.path.stem().string();
    if (!ids.insert(r.source_id).second) {
      throw FormatError("duplicate recording id " + r.source_id);
    }
    corpus.recordings.push_back(std::move(r));
  }
  return corpus;
}

void save_manifest(const std::filesystem::path& path, const Corpus& corpus) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : corpus.recordings) {
    std::filesystem::path p = r.path;
    if (p.parent_path() == path.parent_path()) p = p.filename();
    j.push_back({{"path", p.generic_string()}, {"singer", r.singer}, {"style", r.style}});
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace cante
