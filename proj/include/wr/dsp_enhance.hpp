#pragma once

// STFT analysis/synthesis and the classical enhancers used as the baseline B(.)
// during directed-reference training: a decision-directed Wiener filter and
// harmonic regeneration noise reduction (HRNR) layered on top of it.

#include <algorithm>
#include <cmath>
#include <complex>
#include <sstream>
#include <string>
#include <vector>

#include "wr/audio_io.hpp"
#include "wr/error.hpp"
#include "wr/fft.hpp"

namespace wr {

using cplx = std::complex<double>;

enum class WindowKind { sqrt_hann };

struct StftFrames {
  std::vector<std::vector<cplx>> spectra;  // frames x (frame_len/2 + 1)
  std::size_t frame_len = 512;
  std::size_t hop = 256;
  WindowKind window = WindowKind::sqrt_hann;
  std::size_t original_len = 0;  // samples kept by istft
  std::size_t pad_front = 0;     // zeros prepended before framing
  int sample_rate_hz = 16000;

  std::size_t frames() const noexcept { return spectra.size(); }
  std::size_t bins() const noexcept { return frame_len / 2 + 1; }
};

inline std::vector<double> analysis_window(WindowKind, std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = std::sqrt(0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(n)));
  return w;
}

/// Short-time spectra. The signal is front-padded by frame_len - hop zeros and
/// back-padded so every original sample receives full window overlap.
inline StftFrames stft(const Waveform& w, std::size_t frame_len = 512, std::size_t hop = 256) {
  if (frame_len == 0 || hop == 0) throw ArgumentError("stft: frame and hop must be positive");
  if (hop > frame_len) throw ArgumentError("stft: hop larger than frame");
  StftFrames s;
  s.frame_len = frame_len;
  s.hop = hop;
  s.original_len = w.size();
  s.pad_front = frame_len - hop;
  s.sample_rate_hz = w.sample_rate_hz;
  const std::size_t span = s.pad_front + std::max<std::size_t>(w.size(), 1);
  const std::size_t n_frames = (span - 1) / hop + 1;
  const auto win = analysis_window(s.window, frame_len);
  std::vector<double> frame(frame_len);
  s.spectra.reserve(n_frames);
  for (std::size_t f = 0; f < n_frames; ++f) {
    for (std::size_t i = 0; i < frame_len; ++i) {
      const std::size_t pos = f * hop + i;
      const double v = (pos >= s.pad_front && pos - s.pad_front < w.size()) ? w.samples[pos - s.pad_front] : 0.0;
      frame[i] = v * win[i];
    }
    s.spectra.push_back(fft::rfft(frame));
  }
  return s;
}

/// Weighted overlap-add inverse, normalized by the summed squared window.
inline Waveform istft(const StftFrames& s) {
  if (s.frame_len == 0 || s.hop == 0 || s.hop > s.frame_len) throw ArgumentError("istft: bad frame geometry");
  const std::size_t n_frames = s.frames();
  const std::size_t total = n_frames == 0 ? 0 : (n_frames - 1) * s.hop + s.frame_len;
  std::vector<double> acc(total, 0.0), wsum(total, 0.0);
  const auto win = analysis_window(s.window, s.frame_len);
  for (std::size_t f = 0; f < n_frames; ++f) {
    if (s.spectra[f].size() != s.bins()) throw ArgumentError("istft: bin count mismatch");
    const auto frame = fft::irfft(s.spectra[f], s.frame_len);
    for (std::size_t i = 0; i < s.frame_len; ++i) {
      acc[f * s.hop + i] += frame[i] * win[i];
      wsum[f * s.hop + i] += win[i] * win[i];
    }
  }
  Waveform out;
  out.sample_rate_hz = s.sample_rate_hz;
  const std::size_t keep = s.original_len ? s.original_len : (total > s.pad_front ? total - s.pad_front : 0);
  out.samples.assign(keep, 0.0);
  for (std::size_t i = 0; i < keep && s.pad_front + i < total; ++i) {
    const std::size_t p = s.pad_front + i;
    out.samples[i] = wsum[p] > 1e-10 ? acc[p] / wsum[p] : acc[p];
  }
  return out;
}

struct EnhanceParams {
  double frame_ms = 32.0;
  double alpha_dd = 0.98;          // decision-directed smoothing
  double gain_floor_db = -18.0;    // G_min as an amplitude gain
  std::size_t noise_init_frames = 6;
  double noise_smoothing = 0.98;   // recursive noise PSD update in non-speech frames
  double vad_threshold = 0.15;     // mean log-likelihood ratio below which a frame is noise
  double hrnr_rho = 0.5;           // blend between step-1 and regenerated spectra

  double gain_floor() const { return std::pow(10.0, gain_floor_db / 20.0); }
  std::size_t frame_len(int sample_rate_hz) const {
    return static_cast<std::size_t>(std::lround(frame_ms * sample_rate_hz / 1000.0));
  }
  void validate() const {
    if (!(frame_ms > 0.0)) throw ArgumentError("frame_ms must be positive");
    if (!(alpha_dd >= 0.0 && alpha_dd < 1.0)) throw ArgumentError("alpha_dd must be in [0, 1)");
    if (!(gain_floor_db <= 0.0)) throw ArgumentError("gain_floor_db must be <= 0");
    if (noise_init_frames == 0) throw ArgumentError("noise_init_frames must be positive");
    if (!(noise_smoothing >= 0.0 && noise_smoothing < 1.0)) throw ArgumentError("noise_smoothing must be in [0, 1)");
    if (!(hrnr_rho >= 0.0 && hrnr_rho <= 1.0)) throw ArgumentError("hrnr_rho must be in [0, 1]");
  }
};

inline constexpr std::size_t kMinEnhanceFrames = 10;

/// Per-frame, per-bin gains and the noise PSD in force for each frame.
struct WienerTrace {
  std::vector<std::vector<double>> gain;
  std::vector<std::vector<double>> noise_psd;
};

namespace detail {
inline constexpr double kPsdFloor = 1e-12;
}

inline WienerTrace wiener_trace(const StftFrames& Y, const EnhanceParams& p) {
  p.validate();
  const std::size_t F = Y.frames(), K = Y.bins();
  if (F < std::max(kMinEnhanceFrames, p.noise_init_frames))
    throw DataError("enhancer: input shorter than " + std::to_string(kMinEnhanceFrames) + " frames");
  const double gmin = p.gain_floor();

  std::vector<double> noise(K, 0.0);
  for (std::size_t f = 0; f < p.noise_init_frames; ++f)
    for (std::size_t k = 0; k < K; ++k) noise[k] += std::norm(Y.spectra[f][k]);
  for (double& v : noise) v = std::max(v / static_cast<double>(p.noise_init_frames), detail::kPsdFloor);

  WienerTrace t;
  t.gain.assign(F, std::vector<double>(K));
  t.noise_psd.assign(F, std::vector<double>(K));
  std::vector<double> prev_clean_snr(K, 0.0);  // |S_hat(l-1)|^2 / lambda(l-1)
  std::vector<double> xi(K), gamma(K);
  for (std::size_t f = 0; f < F; ++f) {
    double llr = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      gamma[k] = std::norm(Y.spectra[f][k]) / noise[k];
      const double ml = std::max(gamma[k] - 1.0, 0.0);
      xi[k] = f == 0 ? ml : p.alpha_dd * prev_clean_snr[k] + (1.0 - p.alpha_dd) * ml;
      llr += gamma[k] * xi[k] / (1.0 + xi[k]) - std::log1p(xi[k]);
    }
    llr /= static_cast<double>(K);
    for (std::size_t k = 0; k < K; ++k) {
      const double g = std::clamp(xi[k] / (1.0 + xi[k]), gmin, 1.0);
      t.gain[f][k] = g;
      t.noise_psd[f][k] = noise[k];
      prev_clean_snr[k] = g * g * gamma[k];
    }
    if (llr < p.vad_threshold && f >= p.noise_init_frames) {
      for (std::size_t k = 0; k < K; ++k)
        noise[k] = std::max(p.noise_smoothing * noise[k] + (1.0 - p.noise_smoothing) * std::norm(Y.spectra[f][k]),
                            detail::kPsdFloor);
    }
  }
  return t;
}

inline StftFrames apply_gains(const StftFrames& Y, const std::vector<std::vector<double>>& gain) {
  StftFrames out = Y;
  for (std::size_t f = 0; f < out.frames(); ++f)
    for (std::size_t k = 0; k < out.bins(); ++k) out.spectra[f][k] *= gain[f][k];
  return out;
}

inline StftFrames enhancer_stft(const Waveform& w, const EnhanceParams& p) {
  const std::size_t n = p.frame_len(w.sample_rate_hz);
  return stft(w, n, n / 2);
}

/// Wiener gain xi/(1+xi) with a decision-directed a-priori SNR estimate, floored at G_min.
inline Waveform wiener_enhance(const Waveform& w, const EnhanceParams& p = {}) {
  const auto Y = enhancer_stft(w, p);
  const auto trace = wiener_trace(Y, p);
  return istft(apply_gains(Y, trace.gain));
}

/// Gains of the HRNR refinement step: rectify the step-1 estimate in time,
/// blend its spectrum with the step-1 spectrum and recompute a Wiener gain.
inline std::vector<std::vector<double>> hrnr_gains(const StftFrames& Y, const WienerTrace& step1, const EnhanceParams& p) {
  const std::size_t F = Y.frames(), K = Y.bins();
  const double gmin = p.gain_floor();
  std::vector<std::vector<double>> gain(F, std::vector<double>(K));
  std::vector<cplx> s_hat(K);
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t k = 0; k < K; ++k) s_hat[k] = step1.gain[f][k] * Y.spectra[f][k];
    auto frame = fft::irfft(s_hat, Y.frame_len);
    for (double& v : frame) v = std::max(v, 0.0);
    const auto harmo = fft::rfft(frame);
    for (std::size_t k = 0; k < K; ++k) {
      const double xi = (p.hrnr_rho * std::norm(s_hat[k]) + (1.0 - p.hrnr_rho) * std::norm(harmo[k])) /
                        step1.noise_psd[f][k];
      gain[f][k] = std::clamp(xi / (1.0 + xi), gmin, 1.0);
    }
  }
  return gain;
}

inline Waveform hrnr_enhance(const Waveform& w, const EnhanceParams& p = {}) {
  const auto Y = enhancer_stft(w, p);
  const auto step1 = wiener_trace(Y, p);
  return istft(apply_gains(Y, hrnr_gains(Y, step1, p)));
}

enum class StageKind { wiener, hrnr };

struct EnhancerStage {
  StageKind kind = StageKind::wiener;
  EnhanceParams params;
};

struct EnhancerChain {
  std::vector<EnhancerStage> stages;

  void validate() const {
    if (stages.empty()) throw ArgumentError("enhancer chain is empty");
    for (const auto& s : stages) s.params.validate();
  }
};

inline std::string to_string(StageKind k) { return k == StageKind::wiener ? "wiener" : "hrnr"; }

/// Parse "wiener,hrnr" style chain specs; every stage gets `params`.
inline EnhancerChain parse_chain(const std::string& spec, const EnhanceParams& params = {}) {
  EnhancerChain chain;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item == "wiener")
      chain.stages.push_back({StageKind::wiener, params});
    else if (item == "hrnr")
      chain.stages.push_back({StageKind::hrnr, params});
    else
      throw ArgumentError("unknown enhancer stage '" + item + "'");
  }
  chain.validate();
  return chain;
}

inline std::string chain_to_string(const EnhancerChain& chain) {
  std::string out;
  for (const auto& s : chain.stages) {
    if (!out.empty()) out += ',';
    out += to_string(s.kind);
  }
  return out;
}

/// Apply the stages in order. This is B(x~) for directed-reference training.
inline Waveform pre_enhance(const Waveform& w, const EnhancerChain& chain) {
  chain.validate();
  Waveform cur = w;
  for (const auto& stage : chain.stages)
    cur = stage.kind == StageKind::wiener ? wiener_enhance(cur, stage.params) : hrnr_enhance(cur, stage.params);
  return cur;
}

}  // namespace wr
