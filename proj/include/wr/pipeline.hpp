#pragma once

// Corpus preparation: resample, align, pre-enhance, trim and chunk each manifest
// pair, then write the three parallel chunk caches used for training.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "wr/audio_io.hpp"
#include "wr/dataset.hpp"
#include "wr/dsp_enhance.hpp"
#include "wr/parallel.hpp"
#include "wr/trainer.hpp"

namespace wr {

struct PrepareOptions {
  std::size_t window_len = 16384;
  std::size_t hop_len = 8192;
  std::size_t max_lag = 1600;  // 100 ms at 16 kHz
  SilenceOptions trim;
  EnhancerChain chain = parse_chain("wiener,hrnr");
};

struct PreparedPair {
  ChunkSet clean, noisy, pre_enhanced;
  std::size_t delay_samples = 0;
};

/// One pair through the pipeline. B(x~) is computed on the aligned but untrimmed
/// degraded signal so the noise estimator sees the leading noise, then the trim
/// span found on the clean side is applied to all three signals.
inline PreparedPair prepare_pair(const Waveform& clean_in, const Waveform& degraded_in, const PrepareOptions& opt) {
  const auto clean = resample(clean_in, kModelSampleRate);
  const auto degraded = resample(degraded_in, kModelSampleRate);
  if (degraded.size() < 2) throw DataError("degraded signal is empty");
  const auto aligned = align(clean, degraded, std::min(opt.max_lag, degraded.size() - 1), opt.window_len);
  const auto pre = pre_enhance(aligned.degraded, opt.chain);
  const auto span = find_trim_span(aligned.clean, opt.trim);
  const auto c = apply_span(aligned.clean, span);
  if (c.size() < opt.window_len)
    throw DataError("trimmed length " + std::to_string(c.size()) + " shorter than one window");
  PreparedPair out;
  out.delay_samples = aligned.delay_samples;
  out.clean = chunk_training(c, opt.window_len, opt.hop_len);
  out.noisy = chunk_training(apply_span(aligned.degraded, span), opt.window_len, opt.hop_len);
  out.pre_enhanced = chunk_training(apply_span(pre, span), opt.window_len, opt.hop_len);
  return out;
}

struct PrepareSummary {
  std::size_t pairs = 0;
  std::size_t used = 0;
  std::size_t chunks = 0;
  std::vector<std::string> rejected;  // "path: reason"
};

struct PrepareResult {
  TrainingData data;
  PrepareSummary summary;
};

/// Prepare every pair on `jobs` threads; caches are assembled in manifest order.
/// A failing pair is skipped with a warning, or aborts the run when `strict`.
inline PrepareResult prepare_corpus(const std::vector<ManifestEntry>& manifest, const PrepareOptions& opt,
                                    std::size_t jobs = 1, bool strict = false) {
  if (manifest.empty()) throw DataError("prepare: manifest is empty");
  std::vector<std::optional<PreparedPair>> done(manifest.size());
  std::vector<std::string> errors(manifest.size());
  parallel_for(manifest.size(), jobs, [&](std::size_t i) {
    try {
      done[i] = prepare_pair(read_wav(manifest[i].clean), read_wav(manifest[i].degraded), opt);
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });
  PrepareResult res;
  res.summary.pairs = manifest.size();
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    if (!done[i]) {
      const auto msg = manifest[i].degraded.string() + ": " + errors[i];
      if (strict) throw DataError("prepare: " + msg);
      warn("prepare: skipping " + msg);
      res.summary.rejected.push_back(msg);
      continue;
    }
    res.data.clean.append(done[i]->clean);
    res.data.noisy.append(done[i]->noisy);
    res.data.pre_enhanced.append(done[i]->pre_enhanced);
    ++res.summary.used;
  }
  if (res.summary.used == 0) throw DataError("prepare: no usable pairs");
  res.summary.chunks = res.data.size();
  return res;
}

inline constexpr const char* kCleanCache = "clean.wrchnk";
inline constexpr const char* kNoisyCache = "noisy.wrchnk";
inline constexpr const char* kPreEnhancedCache = "pre_enhanced.wrchnk";
inline constexpr const char* kFingerprintFile = "prepare.fingerprint";

inline void save_training_data(const TrainingData& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_chunk_cache(d.clean, dir / kCleanCache);
  write_chunk_cache(d.noisy, dir / kNoisyCache);
  write_chunk_cache(d.pre_enhanced, dir / kPreEnhancedCache);
}

inline TrainingData load_training_data(const std::filesystem::path& dir) {
  return {read_chunk_cache(dir / kCleanCache), read_chunk_cache(dir / kNoisyCache),
          read_chunk_cache(dir / kPreEnhancedCache)};
}

namespace detail {

inline void fnv1a(std::uint64_t& h, std::span<const unsigned char> bytes) {
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
}

inline void fnv1a(std::uint64_t& h, const std::string& s) {
  fnv1a(h, std::span(reinterpret_cast<const unsigned char*>(s.data()), s.size() + 1));
}

}  // namespace detail

/// Hash of the preparation options and the bytes of every input file.
inline std::string prepare_fingerprint(const std::vector<ManifestEntry>& manifest, const PrepareOptions& opt) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  std::ostringstream o;
  o << std::setprecision(17) << opt.window_len << ' ' << opt.hop_len << ' ' << opt.max_lag << ' '
    << opt.trim.energy_threshold_db << ' ' << opt.trim.min_silence_ms << ' ' << opt.trim.frame_ms << ' '
    << opt.trim.hop_ms << ' ' << chain_to_string(opt.chain);
  for (const auto& s : opt.chain.stages) {
    const auto& p = s.params;
    o << ' ' << p.frame_ms << ' ' << p.alpha_dd << ' ' << p.gain_floor_db << ' ' << p.noise_init_frames << ' '
      << p.noise_smoothing << ' ' << p.vad_threshold << ' ' << p.hrnr_rho;
  }
  detail::fnv1a(h, o.str());
  for (const auto& e : manifest) {
    for (const auto& path : {e.clean, e.degraded}) {
      detail::fnv1a(h, path.string());
      std::error_code ec;
      if (std::filesystem::exists(path, ec)) detail::fnv1a(h, detail::read_file_bytes(path));
    }
  }
  std::ostringstream hex;
  hex << std::hex << std::setw(16) << std::setfill('0') << h;
  return hex.str();
}

/// True when `dir` holds all caches and a fingerprint equal to `fp`.
inline bool cache_up_to_date(const std::filesystem::path& dir, const std::string& fp) {
  for (const char* f : {kCleanCache, kNoisyCache, kPreEnhancedCache})
    if (!std::filesystem::exists(dir / f)) return false;
  std::ifstream in(dir / kFingerprintFile);
  std::string stored;
  return in && std::getline(in, stored) && stored == fp;
}

inline void write_fingerprint(const std::filesystem::path& dir, const std::string& fp) {
  const std::string line = fp + "\n";
  detail::write_file_atomic(dir / kFingerprintFile,
                            std::span(reinterpret_cast<const unsigned char*>(line.data()), line.size()));
}

}  // namespace wr
