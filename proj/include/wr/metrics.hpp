#pragma once

// Objective evaluation: segmental SNR, STOI and log-spectral distance, plus the
// corpus-level report writer.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "wr/audio_io.hpp"
#include "wr/dataset.hpp"
#include "wr/error.hpp"
#include "wr/fft.hpp"
#include "wr/parallel.hpp"

namespace wr {

struct SsnrOptions {
  double frame_ms = 32.0;
  double min_db = -10.0;
  double max_db = 35.0;
  double silence_dbfs = -40.0;  // frames with clean level below this are excluded
};

/// Mean over non-silent frames of the per-frame SNR, each clamped to [min_db, max_db].
inline double ssnr(const Waveform& clean, const Waveform& processed, const SsnrOptions& opt = {}) {
  if (clean.size() != processed.size()) throw ArgumentError("ssnr: length mismatch");
  if (clean.sample_rate_hz != processed.sample_rate_hz) throw ArgumentError("ssnr: sample rate mismatch");
  const auto frame = static_cast<std::size_t>(std::lround(opt.frame_ms * clean.sample_rate_hz / 1000.0));
  const std::size_t hop = std::max<std::size_t>(1, frame / 2);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t start = 0; start + frame <= clean.size(); start += hop) {
    double sig = 0.0, err = 0.0;
    for (std::size_t i = start; i < start + frame; ++i) {
      const double c = clean.samples[i];
      const double d = c - processed.samples[i];
      sig += c * c;
      err += d * d;
    }
    const double level = 10.0 * std::log10(sig / static_cast<double>(frame) + 1e-300);
    if (level < opt.silence_dbfs) continue;
    const double snr = err > 0.0 ? 10.0 * std::log10(sig / err) : opt.max_db;
    total += std::clamp(snr, opt.min_db, opt.max_db);
    ++count;
  }
  if (count == 0) throw DataError("ssnr: no frames above the silence threshold");
  return total / static_cast<double>(count);
}

struct LsdOptions {
  double frame_ms = 32.0;
  double epsilon = 1e-10;
};

/// RMS over frames and bins of the dB difference between magnitude spectra.
inline double lsd(const Waveform& clean, const Waveform& processed, const LsdOptions& opt = {}) {
  if (clean.size() != processed.size()) throw ArgumentError("lsd: length mismatch");
  const auto frame = static_cast<std::size_t>(std::lround(opt.frame_ms * clean.sample_rate_hz / 1000.0));
  const std::size_t hop = frame / 2;
  std::vector<double> win(frame);
  for (std::size_t i = 0; i < frame; ++i)
    win[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(frame));
  std::vector<double> a(frame), b(frame);
  double acc = 0.0;
  std::size_t count = 0;
  auto one_frame = [&](std::size_t start) {
    for (std::size_t i = 0; i < frame; ++i) {
      const std::size_t p = start + i;
      a[i] = p < clean.size() ? clean.samples[p] * win[i] : 0.0;
      b[i] = p < processed.size() ? processed.samples[p] * win[i] : 0.0;
    }
    const auto fa = fft::rfft(a);
    const auto fb = fft::rfft(b);
    for (std::size_t k = 0; k < fa.size(); ++k) {
      const double d = 20.0 * (std::log10(std::abs(fa[k]) + opt.epsilon) - std::log10(std::abs(fb[k]) + opt.epsilon));
      acc += d * d;
      ++count;
    }
  };
  if (clean.size() < frame) {
    one_frame(0);
  } else {
    for (std::size_t start = 0; start + frame <= clean.size(); start += hop) one_frame(start);
  }
  return std::sqrt(acc / static_cast<double>(count));
}

// --- STOI --------------------------------------------------------------------

namespace detail::stoi_impl {

inline constexpr int kFs = 10000;
inline constexpr std::size_t kFrame = 256;
inline constexpr std::size_t kHop = 128;
inline constexpr std::size_t kFft = 512;
inline constexpr std::size_t kBands = 15;
inline constexpr double kMinFreq = 150.0;
inline constexpr std::size_t kSegment = 30;  // frames per analysis segment (384 ms)
inline constexpr double kBeta = -15.0;       // lower SDR bound for clipping, dB
inline constexpr double kDynRange = 40.0;

// Hann window of length n without the zero endpoints.
inline std::vector<double> hann_inner(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i + 1) / static_cast<double>(n + 1));
  return w;
}

// One-third octave band edges as inclusive-exclusive FFT bin ranges.
inline std::vector<std::pair<std::size_t, std::size_t>> third_octave_bands() {
  std::vector<std::pair<std::size_t, std::size_t>> bands;
  const std::size_t bins = kFft / 2 + 1;
  auto nearest_bin = [&](double f) {
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t k = 0; k < bins; ++k) {
      const double fk = static_cast<double>(k) * kFs / static_cast<double>(kFft);
      const double d = (fk - f) * (fk - f);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    return best;
  };
  for (std::size_t b = 0; b < kBands; ++b) {
    const double lo = kMinFreq * std::pow(2.0, (2.0 * static_cast<double>(b) - 1.0) / 6.0);
    const double hi = kMinFreq * std::pow(2.0, (2.0 * static_cast<double>(b) + 1.0) / 6.0);
    bands.emplace_back(nearest_bin(lo), nearest_bin(hi));
  }
  return bands;
}

// Drop frames more than kDynRange below the loudest clean frame, from both signals.
inline std::pair<std::vector<double>, std::vector<double>> remove_silent_frames(const std::vector<double>& x,
                                                                              const std::vector<double>& y) {
  const auto w = hann_inner(kFrame);
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + kFrame <= x.size(); s += kHop) starts.push_back(s);
  std::vector<double> energy(starts.size());
  double max_e = -1e300;
  for (std::size_t f = 0; f < starts.size(); ++f) {
    double e = 0.0;
    for (std::size_t i = 0; i < kFrame; ++i) {
      const double v = x[starts[f] + i] * w[i];
      e += v * v;
    }
    energy[f] = 20.0 * std::log10(std::sqrt(e) + 1e-300);
    max_e = std::max(max_e, energy[f]);
  }
  std::vector<std::size_t> keep;
  for (std::size_t f = 0; f < starts.size(); ++f)
    if (max_e - kDynRange - energy[f] < 0.0) keep.push_back(starts[f]);
  const std::size_t out_len = keep.empty() ? 0 : (keep.size() - 1) * kHop + kFrame;
  std::vector<double> xs(out_len, 0.0), ys(out_len, 0.0);
  for (std::size_t j = 0; j < keep.size(); ++j)
    for (std::size_t i = 0; i < kFrame; ++i) {
      xs[j * kHop + i] += x[keep[j] + i] * w[i];
      ys[j * kHop + i] += y[keep[j] + i] * w[i];
    }
  return {std::move(xs), std::move(ys)};
}

// Band envelopes: bands x frames.
inline std::vector<std::vector<double>> band_envelopes(const std::vector<double>& x) {
  static const auto bands = third_octave_bands();
  const auto w = hann_inner(kFrame);
  std::vector<std::vector<double>> env(kBands);
  std::vector<double> buf(kFft);
  for (std::size_t s = 0; s + kFrame <= x.size(); s += kHop) {
    std::fill(buf.begin(), buf.end(), 0.0);
    for (std::size_t i = 0; i < kFrame; ++i) buf[i] = x[s + i] * w[i];
    const auto spec = fft::rfft(buf);
    for (std::size_t b = 0; b < kBands; ++b) {
      double e = 0.0;
      for (std::size_t k = bands[b].first; k < bands[b].second; ++k) e += std::norm(spec[k]);
      env[b].push_back(std::sqrt(e));
    }
  }
  return env;
}

}  // namespace detail::stoi_impl

/// Short-time objective intelligibility in [0, 1].
inline double stoi(const Waveform& clean, const Waveform& processed) {
  namespace si = detail::stoi_impl;
  if (clean.size() != processed.size()) throw ArgumentError("stoi: length mismatch");
  if (clean.sample_rate_hz != processed.sample_rate_hz) throw ArgumentError("stoi: sample rate mismatch");
  const auto x10 = resample(clean, si::kFs);
  const auto y10 = resample(processed, si::kFs);
  const auto [xs, ys] = si::remove_silent_frames(x10.samples, y10.samples);
  const auto X = si::band_envelopes(xs);
  const auto Y = si::band_envelopes(ys);
  const std::size_t n_frames = X.empty() ? 0 : X[0].size();
  if (n_frames < si::kSegment) throw DataError("stoi: input shorter than one 384 ms analysis segment");
  if (x10.duration_s() < 3.0) warn("stoi: inputs shorter than 3 s give less reliable scores");

  const double clip = 1.0 + std::pow(10.0, -si::kBeta / 20.0);
  double total = 0.0;
  std::size_t count = 0;
  std::vector<double> xv(si::kSegment), yv(si::kSegment);
  for (std::size_t m = si::kSegment; m <= n_frames; ++m) {
    for (std::size_t b = 0; b < si::kBands; ++b) {
      double nx = 0.0, ny = 0.0;
      for (std::size_t j = 0; j < si::kSegment; ++j) {
        xv[j] = X[b][m - si::kSegment + j];
        yv[j] = Y[b][m - si::kSegment + j];
        nx += xv[j] * xv[j];
        ny += yv[j] * yv[j];
      }
      const double alpha = std::sqrt(nx) / (std::sqrt(ny) + 1e-300);
      for (std::size_t j = 0; j < si::kSegment; ++j) yv[j] = std::min(yv[j] * alpha, xv[j] * clip);
      const double mx = std::accumulate(xv.begin(), xv.end(), 0.0) / si::kSegment;
      const double my = std::accumulate(yv.begin(), yv.end(), 0.0) / si::kSegment;
      double sxy = 0.0, sxx = 0.0, syy = 0.0;
      for (std::size_t j = 0; j < si::kSegment; ++j) {
        const double a = xv[j] - mx, c = yv[j] - my;
        sxy += a * c;
        sxx += a * a;
        syy += c * c;
      }
      const double denom = std::sqrt(sxx) * std::sqrt(syy);
      total += denom > 0.0 ? sxy / denom : 0.0;
      ++count;
    }
  }
  return std::clamp(total / static_cast<double>(count), 0.0, 1.0);
}

// --- corpus evaluation -------------------------------------------------------

struct MetricRow {
  std::string utt_id;
  double ssnr_db = 0.0;
  double stoi = 0.0;
  double lsd_db = 0.0;
};

struct MetricStats {
  double ssnr_db = 0.0, stoi = 0.0, lsd_db = 0.0;
};

struct MetricReport {
  std::string system;
  std::vector<MetricRow> rows;
  MetricStats mean, stddev;
  std::size_t skipped = 0;

  void finalize() {
    const double n = static_cast<double>(rows.size());
    mean = stddev = {};
    if (rows.empty()) return;
    for (const auto& r : rows) {
      mean.ssnr_db += r.ssnr_db / n;
      mean.stoi += r.stoi / n;
      mean.lsd_db += r.lsd_db / n;
    }
    for (const auto& r : rows) {
      stddev.ssnr_db += (r.ssnr_db - mean.ssnr_db) * (r.ssnr_db - mean.ssnr_db) / n;
      stddev.stoi += (r.stoi - mean.stoi) * (r.stoi - mean.stoi) / n;
      stddev.lsd_db += (r.lsd_db - mean.lsd_db) * (r.lsd_db - mean.lsd_db) / n;
    }
    stddev.ssnr_db = std::sqrt(stddev.ssnr_db);
    stddev.stoi = std::sqrt(stddev.stoi);
    stddev.lsd_db = std::sqrt(stddev.lsd_db);
  }
};

inline MetricRow score_pair(std::string utt_id, const Waveform& clean, const Waveform& processed) {
  if (clean.sample_rate_hz != processed.sample_rate_hz) throw DataError(utt_id + ": sample rate mismatch");
  const std::size_t a = clean.size(), b = processed.size();
  if ((a > b ? a - b : b - a) > 1) throw DataError(utt_id + ": lengths differ by more than one sample");
  const std::size_t n = std::min(a, b);
  Waveform c = clean, p = processed;
  c.samples.resize(n);
  p.samples.resize(n);
  return MetricRow{std::move(utt_id), ssnr(c, p), stoi(c, p), lsd(c, p)};
}

struct SystemDir {
  std::string name;
  std::filesystem::path dir;  // holds files named like the manifest's degraded files
};

/// Score every system against the clean side of the manifest. Unreadable or
/// unscorable rows are skipped with a warning. Rows are scored on `jobs` threads
/// but reported in manifest order.
inline std::vector<MetricReport> evaluate_corpus(const std::vector<ManifestEntry>& manifest,
                                                 const std::vector<SystemDir>& systems, std::size_t jobs = 1) {
  if (manifest.empty()) throw DataError("evaluate_corpus: empty manifest");
  if (systems.empty()) throw ArgumentError("evaluate_corpus: no systems given");
  std::vector<MetricReport> reports;
  for (const auto& sys : systems) {
    MetricReport rep;
    rep.system = sys.name;
    std::vector<std::optional<MetricRow>> rows(manifest.size());
    parallel_for(manifest.size(), jobs, [&](std::size_t i) {
      const auto& e = manifest[i];
      const auto utt = e.degraded.stem().string();
      try {
        const auto clean = read_wav(e.clean);
        const auto proc = read_wav(sys.dir.empty() ? e.degraded : sys.dir / e.degraded.filename());
        rows[i] = score_pair(utt, clean, proc);
      } catch (const Error& err) {
        warn(sys.name + "/" + utt + ": skipped (" + err.what() + ")");
      }
    });
    for (auto& r : rows) {
      if (r)
        rep.rows.push_back(std::move(*r));
      else
        ++rep.skipped;
    }
    rep.finalize();
    reports.push_back(std::move(rep));
  }
  return reports;
}

inline std::string report_csv(const MetricReport& r) {
  std::ostringstream os;
  os << std::setprecision(6) << std::fixed;
  os << "utt_id,ssnr_db,stoi,lsd_db\n";
  for (const auto& row : r.rows) os << row.utt_id << ',' << row.ssnr_db << ',' << row.stoi << ',' << row.lsd_db << '\n';
  os << "mean," << r.mean.ssnr_db << ',' << r.mean.stoi << ',' << r.mean.lsd_db << '\n';
  os << "std," << r.stddev.ssnr_db << ',' << r.stddev.stoi << ',' << r.stddev.lsd_db << '\n';
  return os.str();
}

/// Systems as rows, metrics as columns.
inline std::string report_table(const std::vector<MetricReport>& reports) {
  std::size_t width = 6;
  for (const auto& r : reports) width = std::max(width, r.system.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(width)) << "system" << std::right << std::setw(10) << "SSNR"
     << std::setw(10) << "STOI" << std::setw(10) << "LSD" << std::setw(8) << "n" << '\n';
  os << std::fixed;
  for (const auto& r : reports)
    os << std::left << std::setw(static_cast<int>(width)) << r.system << std::right << std::setprecision(2)
       << std::setw(10) << r.mean.ssnr_db << std::setprecision(3) << std::setw(10) << r.mean.stoi
       << std::setprecision(2) << std::setw(10) << r.mean.lsd_db << std::setw(8) << r.rows.size() << '\n';
  return os.str();
}

}  // namespace wr
