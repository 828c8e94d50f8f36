#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <random>

#include "support/synthetic.hpp"
#include "wr/dsp_enhance.hpp"
#include "wr/metrics.hpp"

using namespace wr;

namespace {

// Signal preceded by a noise-only (or silent) lead-in for the noise estimator.
Waveform with_lead_in(const Waveform& s, std::size_t lead) {
  Waveform w{std::vector<double>(lead, 0.0), s.sample_rate_hz};
  w.samples.insert(w.samples.end(), s.samples.begin(), s.samples.end());
  return w;
}

Waveform plus_noise(const Waveform& clean, double noise_std, std::uint64_t seed) {
  const auto n = synth::white_noise(clean.size(), noise_std, seed);
  Waveform out = clean;
  for (std::size_t i = 0; i < n.size(); ++i) out.samples[i] += n[i];
  return out;
}

struct NoisySine {
  Waveform clean, noisy;
};

// 1 kHz sine after 200 ms of silence; white noise at 0 dB against the sine's RMS.
NoisySine noisy_sine_0db(std::uint64_t seed = 5) {
  const auto s = synth::sine(1000.0, 0.5, 32000);
  const auto clean = with_lead_in(s, 3200);
  return {clean, plus_noise(clean, synth::rms(s.samples), seed)};
}

constexpr std::array<double, 5> kHarmonicAmps{1.0, 1.0, 1.0, 1.0, 0.2};
constexpr double kF0 = 200.0;

Waveform vowel(std::size_t n) {
  Waveform w{std::vector<double>(n), 16000};
  for (std::size_t i = 0; i < n; ++i) {
    double v = 0.0;
    for (std::size_t h = 0; h < kHarmonicAmps.size(); ++h)
      v += kHarmonicAmps[h] * std::sin(2.0 * M_PI * kF0 * static_cast<double>(h + 1) * static_cast<double>(i) / 16000.0);
    w.samples[i] = 0.2 * v;
  }
  return w;
}

// Long-term power at the STFT bin of each harmonic, accumulated over frames.
std::array<double, 5> harmonic_power(const Waveform& w, std::size_t skip) {
  Waveform seg{std::vector<double>(w.samples.begin() + static_cast<std::ptrdiff_t>(skip), w.samples.end()), w.sample_rate_hz};
  const auto S = stft(seg, 512, 256);
  std::array<double, 5> p{};
  for (std::size_t h = 0; h < 5; ++h) {
    const auto k = static_cast<std::size_t>(std::lround(kF0 * static_cast<double>(h + 1) * 512.0 / 16000.0));
    for (std::size_t f = 2; f + 2 < S.frames(); ++f) p[h] += std::norm(S.spectra[f][k]);
  }
  return p;
}

}  // namespace

TEST(Stft, SinePeaksAtExpectedBin) {
  const auto S = stft(synth::sine(1000.0, 0.5, 8000), 512, 256);
  ASSERT_EQ(S.bins(), 257u);
  const auto& frame = S.spectra[S.frames() / 2];
  std::size_t peak = 0;
  for (std::size_t k = 0; k < frame.size(); ++k)
    if (std::abs(frame[k]) > std::abs(frame[peak])) peak = k;
  EXPECT_EQ(peak, 32u);
}

TEST(Stft, ZeroSignalGivesZeroSpectra) {
  const auto S = stft(Waveform{std::vector<double>(4000, 0.0), 16000});
  for (const auto& f : S.spectra)
    for (auto c : f) EXPECT_EQ(std::abs(c), 0.0);
}

TEST(Stft, HopLargerThanFrameRejected) {
  EXPECT_THROW(stft(synth::sine(100.0, 0.1, 1000), 256, 512), ArgumentError);
}

TEST(Istft, RoundTripReconstructs) {
  for (std::size_t n : {1000u, 4097u, 16000u}) {
    const Waveform w{synth::white_noise(n, 0.3, n), 16000};
    const auto r = istft(stft(w));
    ASSERT_EQ(r.size(), n);
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) err += (r.samples[i] - w.samples[i]) * (r.samples[i] - w.samples[i]);
    EXPECT_LE(std::sqrt(err / static_cast<double>(n)), 1e-6);
  }
}

TEST(Istft, SingleZeroFrameGivesFrameOfZeros) {
  StftFrames s;
  s.frame_len = 512;
  s.hop = 256;
  s.pad_front = 0;
  s.spectra.assign(1, std::vector<cplx>(257, cplx(0.0, 0.0)));
  const auto w = istft(s);
  EXPECT_EQ(w.samples, std::vector<double>(512, 0.0));
}

TEST(Istft, ImpulseRoundTrip) {
  Waveform w{std::vector<double>(2048, 0.0), 16000};
  w.samples[700] = 1.0;
  const auto r = istft(stft(w));
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(r.samples[i], w.samples[i], 1e-6);
}

TEST(Istft, ProjectionConsistency) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0.0, 0.01);
  StftFrames s;
  s.frame_len = 512;
  s.hop = 256;
  s.pad_front = 256;
  s.spectra.assign(12, std::vector<cplx>(257));
  for (auto& f : s.spectra) {
    for (auto& c : f) c = cplx(nd(rng), nd(rng));
    f.front().imag(0.0);
    f.back().imag(0.0);
  }
  const auto a = istft(s);
  const auto b = istft(stft(a));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.samples[i], b.samples[i], 1e-6);
}

TEST(Wiener, ImprovesSsnrOnNoisySine) {
  const auto [clean, noisy] = noisy_sine_0db();
  const double before = ssnr(clean, noisy), after = ssnr(clean, wiener_enhance(noisy));
  EXPECT_GE(after - before, 3.0) << before << " -> " << after;
}

TEST(Wiener, CleanSineNearlyUntouched) {
  const auto clean = with_lead_in(synth::sine(1000.0, 0.5, 32000), 3200);
  EXPECT_NEAR(ssnr(clean, wiener_enhance(clean)), ssnr(clean, clean), 1.0);
}

TEST(Wiener, AllNoiseDrivenToFloor) {
  const Waveform noise{synth::white_noise(32000, 0.1, 7), 16000};
  const EnhanceParams p;
  const auto out = wiener_enhance(noise, p);
  EXPECT_LE(synth::rms(out.samples), 1.1 * p.gain_floor() * synth::rms(noise.samples));
}

TEST(Wiener, GainsWithinFloorAndOne) {
  const auto [clean, noisy] = noisy_sine_0db();
  const EnhanceParams p;
  const auto t = wiener_trace(enhancer_stft(noisy, p), p);
  for (const auto& f : t.gain)
    for (double g : f) {
      EXPECT_GE(g, p.gain_floor());
      EXPECT_LE(g, 1.0);
    }
}

TEST(Wiener, TooShortInputRejected) {
  EXPECT_THROW(wiener_enhance(synth::sine(500.0, 0.3, 1000)), DataError);
}

TEST(Wiener, LengthPreservingAndDeterministic) {
  const auto [clean, noisy] = noisy_sine_0db();
  const auto a = wiener_enhance(noisy), b = wiener_enhance(noisy);
  EXPECT_EQ(a.size(), noisy.size());
  EXPECT_EQ(a.samples, b.samples);
}

TEST(Hrnr, RestoresHarmonicsWienerSuppresses) {
  // Pooled over several noise realizations: the noise estimate from a short
  // lead-in varies per bin, so a single draw is a noisy magnitude estimate.
  const std::size_t lead = 16000;
  const auto clean = with_lead_in(vowel(32000), lead);
  const double noise_std = synth::rms(vowel(32000).samples);  // 0 dB
  std::array<double, 5> pc{}, pw{}, ph{};
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto noisy = plus_noise(clean, noise_std, seed);
    const auto c = harmonic_power(clean, lead), w = harmonic_power(wiener_enhance(noisy), lead),
               h = harmonic_power(hrnr_enhance(noisy), lead);
    for (std::size_t k = 0; k < 5; ++k) {
      pc[k] += c[k];
      pw[k] += w[k];
      ph[k] += h[k];
    }
  }
  double wiener_worst = 0.0;
  for (std::size_t k = 0; k < 5; ++k) {
    const double w_db = 10.0 * std::log10(pw[k] / pc[k]), h_db = 10.0 * std::log10(ph[k] / pc[k]);
    wiener_worst = std::min(wiener_worst, w_db);
    EXPECT_LE(std::abs(h_db), 3.0) << "harmonic " << k + 1 << " hrnr " << h_db << " dB";
  }
  EXPECT_LT(wiener_worst, -3.0);
}

TEST(Hrnr, ZeroSignalGivesZeroOutput) {
  const auto out = hrnr_enhance(Waveform{std::vector<double>(8000, 0.0), 16000});
  for (double v : out.samples) EXPECT_EQ(v, 0.0);
}

TEST(Hrnr, FiniteOnHostileInputs) {
  std::vector<Waveform> inputs;
  inputs.push_back({std::vector<double>(8000, 0.7), 16000});
  Waveform sq{std::vector<double>(8000), 16000};
  for (std::size_t i = 0; i < sq.size(); ++i) sq.samples[i] = (i / 40) % 2 ? 1.0 : -1.0;
  inputs.push_back(sq);
  for (std::uint64_t s = 0; s < 5; ++s) inputs.push_back({synth::white_noise(6000, 0.5, s), 16000});
  for (const auto& w : inputs) {
    const auto out = hrnr_enhance(w);
    ASSERT_EQ(out.size(), w.size());
    for (double v : out.samples) ASSERT_TRUE(std::isfinite(v));
  }
}

TEST(PreEnhance, FullChainAtLeastAsGoodAsWienerOnVowel) {
  const auto clean = with_lead_in(vowel(32000), 3200);
  const auto noisy = plus_noise(clean, synth::rms(vowel(32000).samples), 9);
  EXPECT_GE(ssnr(clean, pre_enhance(noisy, parse_chain("wiener,hrnr"))), ssnr(clean, pre_enhance(noisy, parse_chain("wiener"))));
}

TEST(PreEnhance, CleanSpeechKeepsIntelligibility) {
  std::mt19937_64 rng(21);
  const auto clean = with_lead_in(synth::multi_sine_speech(48000, rng), 3200);
  EXPECT_GE(stoi(clean, pre_enhance(clean, parse_chain("wiener,hrnr"))), 0.95);
}

TEST(PreEnhance, SingleWienerStageMatchesWienerEnhance) {
  const auto [clean, noisy] = noisy_sine_0db(11);
  EXPECT_EQ(pre_enhance(noisy, parse_chain("wiener")).samples, wiener_enhance(noisy).samples);
}

TEST(PreEnhance, LengthPreserving) {
  const Waveform w{synth::white_noise(12345, 0.2, 4), 16000};
  EXPECT_EQ(pre_enhance(w, parse_chain("wiener,hrnr")).size(), w.size());
}

TEST(Chain, ParseAndPrint) {
  const auto c = parse_chain(" wiener , hrnr ");
  ASSERT_EQ(c.stages.size(), 2u);
  EXPECT_EQ(c.stages[0].kind, StageKind::wiener);
  EXPECT_EQ(c.stages[1].kind, StageKind::hrnr);
  EXPECT_EQ(chain_to_string(c), "wiener,hrnr");
}

TEST(Chain, RejectsUnknownAndEmpty) {
  EXPECT_THROW(parse_chain("wiener,postfish"), ArgumentError);
  EXPECT_THROW(parse_chain(""), ArgumentError);
  EnhanceParams bad;
  bad.hrnr_rho = 1.5;
  EXPECT_THROW(parse_chain("hrnr", bad), ArgumentError);
}
