#pragma once

// Pair alignment, silence trimming, chunking/stitching and the on-disk chunk cache.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "wr/audio_io.hpp"
#include "wr/error.hpp"
#include "wr/fft.hpp"

namespace wr {

struct AlignedPair {
  Waveform clean;
  Waveform degraded;
  std::size_t delay_samples = 0;
};

enum class ChunkMode { training_overlapped, inference_sequential };

struct ChunkSet {
  std::vector<std::vector<double>> chunks;
  std::size_t window_len = 0;
  std::size_t hop_len = 0;
  std::size_t original_len = 0;
  ChunkMode mode = ChunkMode::training_overlapped;
  std::size_t prepad_len = 0;  // inference mode only
  int sample_rate_hz = 16000;
};

/// Lag in [0, max_lag] maximizing sum_n reference[n] * recorded[n + lag].
inline std::size_t estimate_delay(const Waveform& reference, const Waveform& recorded, std::size_t max_lag) {
  if (reference.empty() || recorded.empty()) throw ArgumentError("estimate_delay: empty input");
  if (reference.sample_rate_hz != recorded.sample_rate_hz)
    throw ArgumentError("estimate_delay: sample rates differ");
  if (max_lag == 0 || max_lag >= recorded.size())
    throw ArgumentError("estimate_delay: max_lag must be in [1, recorded length)");

  // Linear (not circular) correlation for lags 0..max_lag needs n >= len(ref) + max_lag.
  const std::size_t n = fft::next_pow2(reference.size() + max_lag);
  std::vector<double> a(n, 0.0), b(n, 0.0);
  std::copy(reference.samples.begin(), reference.samples.end(), a.begin());
  std::copy_n(recorded.samples.begin(), std::min(recorded.size(), n), b.begin());
  auto fa = fft::rfft(a);
  const auto fb = fft::rfft(b);
  for (std::size_t k = 0; k < fa.size(); ++k) fa[k] = std::conj(fa[k]) * fb[k];
  const auto corr = fft::irfft(fa, n);

  std::size_t best = 0;
  for (std::size_t lag = 1; lag <= max_lag; ++lag)
    if (corr[lag] > corr[best]) best = lag;
  return best;
}

/// Shift `recorded` left by the estimated delay and trim both to their common length.
inline AlignedPair align(const Waveform& reference, const Waveform& recorded, std::size_t max_lag,
                         std::size_t min_len = 16384) {
  const std::size_t delay = estimate_delay(reference, recorded, max_lag);
  const std::size_t common = std::min(reference.size(), recorded.size() - delay);
  if (common < std::max<std::size_t>(min_len, 1))
    throw DataError("align: common length " + std::to_string(common) + " shorter than one window");
  AlignedPair pair;
  pair.delay_samples = delay;
  pair.clean.sample_rate_hz = reference.sample_rate_hz;
  pair.degraded.sample_rate_hz = recorded.sample_rate_hz;
  pair.clean.samples.assign(reference.samples.begin(), reference.samples.begin() + static_cast<std::ptrdiff_t>(common));
  pair.degraded.samples.assign(recorded.samples.begin() + static_cast<std::ptrdiff_t>(delay),
                               recorded.samples.begin() + static_cast<std::ptrdiff_t>(delay + common));
  return pair;
}

struct SilenceOptions {
  double energy_threshold_db = -50.0;  // frame mean-square level, dBFS
  double min_silence_ms = 200.0;
  double frame_ms = 20.0;
  double hop_ms = 10.0;
};

/// Half-open sample range [begin, end) that survives silence trimming.
struct TrimSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// Locate leading/trailing silent runs longer than min_silence_ms. Interior silence is untouched.
inline TrimSpan find_trim_span(const Waveform& w, const SilenceOptions& opt = {}) {
  if (!(opt.min_silence_ms > 0.0)) throw ArgumentError("min_silence_ms must be positive");
  const auto sr = static_cast<double>(w.sample_rate_hz);
  const auto frame = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(opt.frame_ms * sr / 1000.0)));
  const auto hop = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(opt.hop_ms * sr / 1000.0)));
  const std::size_t n = w.size();
  if (n == 0) throw DataError("trim_silence: empty input");

  const double amp_threshold = std::pow(10.0, opt.energy_threshold_db / 20.0);
  auto frame_active = [&](std::size_t start) {
    const std::size_t stop = std::min(n, start + frame);
    double e = 0.0;
    for (std::size_t i = start; i < stop; ++i) e += w.samples[i] * w.samples[i];
    e /= static_cast<double>(stop - start);
    return 10.0 * std::log10(e + 1e-300) >= opt.energy_threshold_db;
  };
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s < n; s += hop) {
    starts.push_back(s);
    if (s + frame >= n) break;
  }
  std::size_t first = starts.size(), last = starts.size();
  for (std::size_t i = 0; i < starts.size(); ++i)
    if (frame_active(starts[i])) {
      first = i;
      break;
    }
  if (first == starts.size()) throw DataError("trim_silence: entire signal is below the threshold");
  for (std::size_t i = starts.size(); i-- > 0;)
    if (frame_active(starts[i])) {
      last = i;
      break;
    }

  // Refine to the first/last sample above the amplitude equivalent of the threshold.
  std::size_t begin = starts[first];
  const std::size_t first_stop = std::min(n, starts[first] + frame);
  while (begin < first_stop && std::abs(w.samples[begin]) < amp_threshold) ++begin;
  if (begin == first_stop) begin = starts[first];
  std::size_t end = std::min(n, starts[last] + frame);
  while (end > starts[last] && std::abs(w.samples[end - 1]) < amp_threshold) --end;
  if (end == starts[last]) end = std::min(n, starts[last] + frame);

  const double ms_per_sample = 1000.0 / sr;
  TrimSpan span{0, n};
  if (static_cast<double>(begin) * ms_per_sample > opt.min_silence_ms) span.begin = begin;
  if (static_cast<double>(n - end) * ms_per_sample > opt.min_silence_ms) span.end = end;
  return span;
}

inline Waveform apply_span(const Waveform& w, TrimSpan span) {
  Waveform out;
  out.sample_rate_hz = w.sample_rate_hz;
  span.end = std::min(span.end, w.size());
  if (span.begin < span.end)
    out.samples.assign(w.samples.begin() + static_cast<std::ptrdiff_t>(span.begin),
                       w.samples.begin() + static_cast<std::ptrdiff_t>(span.end));
  return out;
}

inline Waveform trim_silence(const Waveform& w, double energy_threshold_db = -50.0, double min_silence_ms = 200.0) {
  SilenceOptions opt;
  opt.energy_threshold_db = energy_threshold_db;
  opt.min_silence_ms = min_silence_ms;
  return apply_span(w, find_trim_span(w, opt));
}

/// Overlapping training windows at offsets 0, hop, 2*hop, ...; the trailing partial window is dropped.
inline ChunkSet chunk_training(const Waveform& w, std::size_t window_len, std::size_t hop_len) {
  if (window_len == 0 || hop_len == 0) throw ArgumentError("chunk_training: window and hop must be positive");
  if ((window_len & (window_len - 1)) != 0)
    warn("chunk_training: window length " + std::to_string(window_len) + " is not a power of two");
  if (w.size() < window_len) throw DataError("chunk_training: signal shorter than one window");
  ChunkSet cs;
  cs.window_len = window_len;
  cs.hop_len = hop_len;
  cs.original_len = w.size();
  cs.mode = ChunkMode::training_overlapped;
  cs.sample_rate_hz = w.sample_rate_hz;
  const std::size_t count = (w.size() - window_len) / hop_len + 1;
  cs.chunks.reserve(count);
  for (std::size_t c = 0; c < count; ++c) {
    auto first = w.samples.begin() + static_cast<std::ptrdiff_t>(c * hop_len);
    cs.chunks.emplace_back(first, first + static_cast<std::ptrdiff_t>(window_len));
  }
  return cs;
}

/// Non-overlapping windows; a short tail is replaced by the last window_len samples of the signal.
inline ChunkSet chunk_inference(const Waveform& w, std::size_t window_len) {
  if (window_len == 0) throw ArgumentError("chunk_inference: window must be positive");
  if (w.empty()) throw ArgumentError("chunk_inference: empty input");
  ChunkSet cs;
  cs.window_len = window_len;
  cs.hop_len = window_len;
  cs.original_len = w.size();
  cs.mode = ChunkMode::inference_sequential;
  cs.sample_rate_hz = w.sample_rate_hz;
  const auto& s = w.samples;
  if (s.size() < window_len) {
    std::vector<double> c(window_len - s.size(), s.front());
    c.insert(c.end(), s.begin(), s.end());
    cs.prepad_len = window_len - s.size();
    cs.chunks.push_back(std::move(c));
    return cs;
  }
  const std::size_t full = s.size() / window_len;
  for (std::size_t c = 0; c < full; ++c) {
    auto first = s.begin() + static_cast<std::ptrdiff_t>(c * window_len);
    cs.chunks.emplace_back(first, first + static_cast<std::ptrdiff_t>(window_len));
  }
  const std::size_t rem = s.size() - full * window_len;
  if (rem > 0) {
    cs.chunks.emplace_back(s.end() - static_cast<std::ptrdiff_t>(window_len), s.end());
    cs.prepad_len = window_len - rem;
  }
  return cs;
}

/// Concatenate inference chunks, dropping the final chunk's pre-padding.
inline Waveform stitch(const ChunkSet& c) {
  if (c.mode != ChunkMode::inference_sequential) throw ArgumentError("stitch: chunk set is not in inference mode");
  if (c.chunks.empty()) throw ArgumentError("stitch: no chunks");
  Waveform out;
  out.sample_rate_hz = c.sample_rate_hz;
  out.samples.reserve(c.original_len);
  for (std::size_t i = 0; i < c.chunks.size(); ++i) {
    const auto& ch = c.chunks[i];
    if (ch.size() != c.window_len) throw ArgumentError("stitch: chunk length mismatch");
    const std::size_t skip = (i + 1 == c.chunks.size()) ? c.prepad_len : 0;
    out.samples.insert(out.samples.end(), ch.begin() + static_cast<std::ptrdiff_t>(skip), ch.end());
  }
  if (out.size() != c.original_len) throw DataError("stitch: reconstructed length does not match original");
  return out;
}

// --- corpus manifest -------------------------------------------------------

struct ManifestEntry {
  std::filesystem::path clean;
  std::filesystem::path degraded;
};

/// One pair per line: clean_path<TAB>degraded_path. Blank lines and '#' comments are ignored.
/// Relative paths resolve against the manifest's directory.
inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  const auto base = path.parent_path();
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos)
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected clean<TAB>degraded");
    ManifestEntry e{line.substr(0, tab), line.substr(tab + 1)};
    if (e.clean.is_relative()) e.clean = base / e.clean;
    if (e.degraded.is_relative()) e.degraded = base / e.degraded;
    entries.push_back(std::move(e));
  }
  return entries;
}

// --- prepared-chunk cache ----------------------------------------------------
// Layout: "WRCHNK1" (7 bytes), u32 window_len, u32 hop, u64 count,
// then count*window_len little-endian float32 samples.

inline constexpr char kChunkMagic[7] = {'W', 'R', 'C', 'H', 'N', 'K', '1'};

struct ChunkCache {
  std::uint32_t window_len = 0;
  std::uint32_t hop = 0;
  std::vector<float> samples;  // count * window_len, chunk-major

  std::size_t count() const noexcept { return window_len ? samples.size() / window_len : 0; }
  std::span<const float> chunk(std::size_t i) const {
    return std::span<const float>(samples).subspan(i * window_len, window_len);
  }
  void append(const ChunkSet& cs) {
    if (window_len == 0) {
      window_len = static_cast<std::uint32_t>(cs.window_len);
      hop = static_cast<std::uint32_t>(cs.hop_len);
    }
    if (cs.window_len != window_len) throw ArgumentError("chunk cache: window length mismatch");
    for (const auto& c : cs.chunks)
      for (double v : c) samples.push_back(static_cast<float>(v));
  }
};

inline std::vector<unsigned char> encode_chunk_cache(const ChunkCache& cache) {
  static_assert(std::endian::native == std::endian::little, "cache encoding assumes a little-endian host");
  std::vector<unsigned char> out(kChunkMagic, kChunkMagic + 7);
  detail::store_u32(out, cache.window_len);
  detail::store_u32(out, cache.hop);
  const std::uint64_t count = cache.count();
  detail::store_u32(out, static_cast<std::uint32_t>(count & 0xffffffffu));
  detail::store_u32(out, static_cast<std::uint32_t>(count >> 32));
  const auto* p = reinterpret_cast<const unsigned char*>(cache.samples.data());
  out.insert(out.end(), p, p + count * cache.window_len * sizeof(float));
  return out;
}

inline void write_chunk_cache(const ChunkCache& cache, const std::filesystem::path& path) {
  detail::write_file_atomic(path, encode_chunk_cache(cache));
}

inline ChunkCache read_chunk_cache(const std::filesystem::path& path) {
  const auto b = detail::read_file_bytes(path);
  if (b.size() < 23 || std::memcmp(b.data(), kChunkMagic, 7) != 0)
    throw FormatError(path.string() + ": not a WRCHNK1 chunk cache");
  ChunkCache cache;
  cache.window_len = detail::load_u32(b.data() + 7);
  cache.hop = detail::load_u32(b.data() + 11);
  const std::uint64_t count =
      detail::load_u32(b.data() + 15) | (static_cast<std::uint64_t>(detail::load_u32(b.data() + 19)) << 32);
  const std::uint64_t n = count * cache.window_len;
  if (b.size() != 23 + n * sizeof(float)) throw FormatError(path.string() + ": chunk cache size mismatch");
  cache.samples.resize(n);
  std::memcpy(cache.samples.data(), b.data() + 23, n * sizeof(float));
  return cache;
}

}  // namespace wr
