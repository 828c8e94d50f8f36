#pragma once

// Mono PCM16 WAV I/O, rational-factor resampling and peak normalization.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "wr/error.hpp"

namespace wr {

struct Waveform {
  std::vector<double> samples;
  int sample_rate_hz = 16000;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
  double duration_s() const noexcept {
    return sample_rate_hz > 0 ? static_cast<double>(samples.size()) / sample_rate_hz : 0.0;
  }
};

namespace detail {

inline std::uint16_t load_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline std::uint32_t load_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline void store_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>(v >> 8));
}
inline void store_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

// Write to a sibling temp file then rename, so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

}  // namespace detail

/// Parse a RIFF/WAVE PCM16 mono byte buffer. Samples are scaled by 1/32768.
inline Waveform parse_wav(std::span<const unsigned char> b) {
  if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 || std::memcmp(b.data() + 8, "WAVE", 4) != 0)
    throw FormatError("not a RIFF/WAVE file");
  std::size_t pos = 12;
  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0, format = 0;
  std::uint32_t rate = 0;
  while (pos + 8 <= b.size()) {
    const unsigned char* id = b.data() + pos;
    const std::uint32_t len = detail::load_u32(b.data() + pos + 4);
    pos += 8;
    if (len > b.size() - pos) throw FormatError("truncated WAV chunk");
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (len < 16) throw FormatError("fmt chunk too short");
      format = detail::load_u16(b.data() + pos);
      channels = detail::load_u16(b.data() + pos + 2);
      rate = detail::load_u32(b.data() + pos + 4);
      bits = detail::load_u16(b.data() + pos + 14);
      if (format == 0xFFFE && len >= 40) format = detail::load_u16(b.data() + pos + 24);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt) throw FormatError("data chunk before fmt chunk");
      if (format != 1 || bits != 16) throw UnsupportedError("only 16-bit PCM is supported");
      if (channels != 1) throw UnsupportedError("only mono audio is supported");
      if (rate == 0) throw FormatError("zero sample rate");
      Waveform w;
      w.sample_rate_hz = static_cast<int>(rate);
      w.samples.resize(len / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i) {
        const auto v = static_cast<std::int16_t>(detail::load_u16(b.data() + pos + 2 * i));
        w.samples[i] = v / 32768.0;
      }
      return w;
    }
    pos += len + (len & 1u);
  }
  throw FormatError(have_fmt ? "missing data chunk" : "missing fmt chunk");
}

inline Waveform read_wav(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  try {
    return parse_wav(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const UnsupportedError& e) {
    throw UnsupportedError(path.string() + ": " + e.what());
  }
}

/// PCM16 code for a sample: round(s * 32768) clamped to [-32768, 32767].
/// Exact inverse of the reader's scaling, so read->write is byte-identical.
inline std::int16_t encode_pcm16(double s) noexcept {
  const double v = std::round(s * 32768.0);
  return static_cast<std::int16_t>(std::clamp(v, -32768.0, 32767.0));
}

struct WavWriteReport {
  std::size_t clipped = 0;  // samples with |s| > 1
};

inline std::vector<unsigned char> encode_wav(const Waveform& w, WavWriteReport* report = nullptr) {
  if (w.sample_rate_hz <= 0) throw ArgumentError("sample rate must be positive");
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  std::vector<unsigned char> out;
  out.reserve(44 + data_bytes);
  auto put_tag = [&](const char* tag) { out.insert(out.end(), tag, tag + 4); };
  put_tag("RIFF");
  detail::store_u32(out, 36 + data_bytes);
  put_tag("WAVE");
  put_tag("fmt ");
  detail::store_u32(out, 16);
  detail::store_u16(out, 1);
  detail::store_u16(out, 1);
  detail::store_u32(out, static_cast<std::uint32_t>(w.sample_rate_hz));
  detail::store_u32(out, static_cast<std::uint32_t>(w.sample_rate_hz) * 2);
  detail::store_u16(out, 2);
  detail::store_u16(out, 16);
  put_tag("data");
  detail::store_u32(out, data_bytes);
  std::size_t clipped = 0;
  for (double s : w.samples) {
    if (!std::isfinite(s)) throw NumericError("non-finite sample in waveform");
    if (std::abs(s) > 1.0) ++clipped;
    detail::store_u16(out, static_cast<std::uint16_t>(encode_pcm16(s)));
  }
  if (report) report->clipped = clipped;
  return out;
}

/// Write PCM16 mono. Out-of-range samples are clipped; the count is returned and warned about.
inline WavWriteReport write_wav(const Waveform& w, const std::filesystem::path& path) {
  WavWriteReport report;
  const auto bytes = encode_wav(w, &report);
  detail::write_file_atomic(path, bytes);
  if (report.clipped > 0)
    warn(path.string() + ": clipped " + std::to_string(report.clipped) + " out-of-range samples");
  return report;
}

namespace detail {

inline double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  const double q = x * x / 4.0;
  for (int k = 1; k < 200; ++k) {
    term *= q / (static_cast<double>(k) * k);
    sum += term;
    if (term < 1e-17 * sum) break;
  }
  return sum;
}

// Kaiser-windowed sinc low-pass. `cutoff` is relative to the sampling rate (cycles/sample).
inline std::vector<double> kaiser_lowpass(std::size_t taps, double cutoff, double beta) {
  std::vector<double> h(taps);
  const double centre = (static_cast<double>(taps) - 1.0) / 2.0;
  const double norm = bessel_i0(beta);
  for (std::size_t n = 0; n < taps; ++n) {
    const double t = static_cast<double>(n) - centre;
    const double sinc = t == 0.0 ? 2.0 * cutoff : std::sin(2.0 * M_PI * cutoff * t) / (M_PI * t);
    const double r = centre > 0 ? t / centre : 0.0;
    h[n] = sinc * bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / norm;
  }
  return h;
}

}  // namespace detail

struct ResampleOptions {
  int taps_per_phase = 64;
  double kaiser_beta = 8.6;
  // Passband edge as a fraction of the lower Nyquist frequency.
  double rolloff = 0.92;
};

/// Polyphase FIR resampling by the reduced ratio target/source.
inline Waveform resample(const Waveform& w, int target_hz, const ResampleOptions& opt = {}) {
  if (target_hz <= 0) throw ArgumentError("target sample rate must be positive");
  if (w.sample_rate_hz <= 0) throw ArgumentError("source sample rate must be positive");
  if (target_hz == w.sample_rate_hz) return w;
  const int g = std::gcd(target_hz, w.sample_rate_hz);
  const std::size_t up = static_cast<std::size_t>(target_hz / g);
  const std::size_t down = static_cast<std::size_t>(w.sample_rate_hz / g);
  const std::size_t factor = std::max(up, down);
  if (factor > 4096) throw ArgumentError("resampling ratio too complex");

  const std::size_t taps = static_cast<std::size_t>(opt.taps_per_phase) * factor + 1;
  auto h = detail::kaiser_lowpass(taps, 0.5 * opt.rolloff / static_cast<double>(factor), opt.kaiser_beta);
  for (double& v : h) v *= static_cast<double>(up);

  const std::size_t n_in = w.samples.size();
  const std::size_t n_out = (n_in * up + down - 1) / down;
  const std::ptrdiff_t delay = static_cast<std::ptrdiff_t>((taps - 1) / 2);
  Waveform out;
  out.sample_rate_hz = target_hz;
  out.samples.assign(n_out, 0.0);
  for (std::size_t m = 0; m < n_out; ++m) {
    // Position on the upsampled grid, shifted to cancel the filter's group delay.
    const std::ptrdiff_t t = static_cast<std::ptrdiff_t>(m * down) + delay;
    // Only taps k with (t - k) divisible by `up` hit a nonzero upsampled sample.
    std::ptrdiff_t k = t % static_cast<std::ptrdiff_t>(up);
    double acc = 0.0;
    for (; k < static_cast<std::ptrdiff_t>(taps); k += static_cast<std::ptrdiff_t>(up)) {
      const std::ptrdiff_t idx = (t - k) / static_cast<std::ptrdiff_t>(up);
      if (idx < 0) break;
      if (idx < static_cast<std::ptrdiff_t>(n_in)) acc += h[static_cast<std::size_t>(k)] * w.samples[static_cast<std::size_t>(idx)];
    }
    out.samples[m] = acc;
  }
  return out;
}

/// Scale so that max |sample| == peak. All-zero input is returned unchanged with a warning.
inline Waveform normalize_peak(const Waveform& w, double peak = 1.0) {
  if (!(peak > 0.0 && peak <= 1.0)) throw ArgumentError("peak must be in (0, 1]");
  if (w.empty()) throw ArgumentError("cannot normalize an empty waveform");
  double m = 0.0;
  for (double s : w.samples) m = std::max(m, std::abs(s));
  if (m == 0.0) {
    warn("normalize_peak: all-zero input left unchanged");
    return w;
  }
  Waveform out = w;
  const double g = peak / m;
  for (double& s : out.samples) s *= g;
  return out;
}

}  // namespace wr
