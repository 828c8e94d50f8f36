#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "support/synthetic.hpp"
#include "wr/metrics.hpp"

namespace fs = std::filesystem;
using namespace wr;

namespace {

Waveform speech(std::uint64_t seed, std::size_t n = 48000) {
  std::mt19937_64 rng(seed);
  return synth::multi_sine_speech(n, rng);
}

Waveform scaled(const Waveform& w, double g) {
  Waveform out = w;
  for (double& v : out.samples) v *= g;
  return out;
}

}  // namespace

TEST(Ssnr, IdenticalIsCeiling) {
  const auto c = speech(1);
  EXPECT_DOUBLE_EQ(ssnr(c, c), 35.0);
}

TEST(Ssnr, EqualEnergyErrorIsZeroDb) {
  // processed = clean - clean * random signs: the error is +-clean, so every
  // frame's error energy equals its signal energy.
  const auto c = speech(2);
  std::mt19937_64 rng(3);
  std::bernoulli_distribution coin(0.5);
  Waveform p = c;
  for (std::size_t i = 0; i < p.size(); ++i) p.samples[i] = c.samples[i] - (coin(rng) ? 1.0 : -1.0) * c.samples[i];
  EXPECT_NEAR(ssnr(c, p), 0.0, 0.01);
}

TEST(Ssnr, NegatedSignalIsMinusSixDb) {
  const auto c = speech(4);
  EXPECT_NEAR(ssnr(c, scaled(c, -1.0)), 10.0 * std::log10(0.25), 1e-9);
}

TEST(Ssnr, ClampedToFloor) {
  const auto c = speech(5);
  EXPECT_DOUBLE_EQ(ssnr(c, scaled(c, -20.0)), -10.0);
}

TEST(Ssnr, GainMismatchIsFiniteAndBelowCeiling) {
  const auto c = speech(6);
  const double v = ssnr(c, scaled(c, 0.9));
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_LT(v, 35.0);
  EXPECT_NEAR(v, 20.0, 1e-9);
}

TEST(Ssnr, SilentFramesExcluded) {
  auto c = speech(7, 16000);
  c.samples.resize(32000, 0.0);
  Waveform p = c;
  // Error only in frames that lie entirely in the silent tail.
  for (std::size_t i = 16512; i < p.size(); ++i) p.samples[i] = 0.5;
  EXPECT_DOUBLE_EQ(ssnr(c, p), 35.0);
}

TEST(Ssnr, AllSilentIsError) {
  Waveform z{std::vector<double>(8000, 0.0), 16000};
  EXPECT_THROW(ssnr(z, z), DataError);
}

TEST(Ssnr, LengthMismatchIsError) {
  EXPECT_THROW(ssnr(speech(8, 8000), speech(8, 8001)), ArgumentError);
}

TEST(Lsd, IdenticalIsZero) {
  const auto c = speech(9);
  EXPECT_DOUBLE_EQ(lsd(c, c), 0.0);
}

TEST(Lsd, ConstantGainTwo) {
  const Waveform c{synth::white_noise(16000, 0.2, 10), 16000};
  EXPECT_NEAR(lsd(c, scaled(c, 2.0)), 20.0 * std::log10(2.0), 0.01);
}

TEST(Lsd, Symmetric) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Waveform a{synth::white_noise(8000, 0.2, s), 16000}, b{synth::white_noise(8000, 0.3, s + 100), 16000};
    EXPECT_NEAR(lsd(a, b), lsd(b, a), 1e-12);
    EXPECT_GE(lsd(a, b), 0.0);
  }
}

TEST(Stoi, SelfIsNearOne) {
  const auto c = speech(11);
  EXPECT_GE(stoi(c, c), 0.99);
}

TEST(Stoi, IndependentNoiseIsLow) {
  const auto c = speech(12);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Waveform n{synth::white_noise(c.size(), 0.1, 1000 + s), 16000};
    EXPECT_LE(stoi(c, n), 0.3) << "seed " << s;
  }
}

TEST(Stoi, IncreasesWithSnr) {
  const auto c = speech(13);
  double prev = -1.0;
  for (double snr : {-10.0, 0.0, 10.0}) {
    const double v = stoi(c, synth::add_noise(c, snr, 77));
    EXPECT_GT(v, prev) << "snr " << snr;
    prev = v;
  }
}

TEST(Stoi, InRange) {
  const auto c = speech(14);
  const double v = stoi(c, synth::add_noise(c, -5.0, 3));
  EXPECT_GE(v, 0.0);
  EXPECT_LE(v, 1.0);
}

TEST(Stoi, TooShortIsError) {
  const auto c = speech(15, 3000);
  EXPECT_THROW(stoi(c, c), DataError);
}

TEST(Stoi, DeterministicAndScaleInvariant) {
  const auto c = speech(16);
  const auto p = synth::add_noise(c, 5.0, 8);
  EXPECT_EQ(stoi(c, p), stoi(c, p));
  EXPECT_NEAR(stoi(c, p), stoi(c, scaled(p, 0.5)), 1e-9);
}

namespace {

struct Corpus {
  fs::path root;
  std::vector<ManifestEntry> manifest;
};

Corpus write_corpus(const std::string& name, std::size_t n) {
  Corpus c;
  c.root = fs::temp_directory_path() / ("wr_metrics_" + name);
  fs::remove_all(c.root);
  for (const char* d : {"clean", "noisy", "noisier"}) fs::create_directories(c.root / d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto file = "u" + std::to_string(i) + ".wav";
    const auto clean = scaled(speech(100 + i, 40000), 0.8);
    write_wav(clean, c.root / "clean" / file);
    write_wav(synth::add_noise(clean, 10.0, i), c.root / "noisy" / file);
    write_wav(synth::add_noise(synth::add_noise(clean, 10.0, i), 0.0, 50 + i), c.root / "noisier" / file);
    c.manifest.push_back({c.root / "clean" / file, c.root / "noisy" / file});
  }
  return c;
}

}  // namespace

TEST(EvaluateCorpus, CleanSystemScoresCeiling) {
  const auto c = write_corpus("ceiling", 3);
  const auto reps = evaluate_corpus(c.manifest, {{"clean", c.root / "clean"}});
  ASSERT_EQ(reps.size(), 1u);
  ASSERT_EQ(reps[0].rows.size(), 3u);
  for (const auto& r : reps[0].rows) {
    EXPECT_DOUBLE_EQ(r.ssnr_db, 35.0);
    EXPECT_GE(r.stoi, 0.99);
    EXPECT_DOUBLE_EQ(r.lsd_db, 0.0);
  }
  EXPECT_DOUBLE_EQ(reps[0].stddev.ssnr_db, 0.0);
}

TEST(EvaluateCorpus, NoisierSystemScoresLower) {
  const auto c = write_corpus("dominance", 3);
  const auto reps = evaluate_corpus(c.manifest, {{"noisy", c.root / "noisy"}, {"noisier", c.root / "noisier"}});
  EXPECT_GT(reps[0].mean.ssnr_db, reps[1].mean.ssnr_db);
}

TEST(EvaluateCorpus, MissingFileSkippedWithWarning) {
  auto c = write_corpus("missing", 2);
  fs::remove(c.root / "noisy" / "u1.wav");
  int warnings = 0;
  auto prev = set_warning_sink([&](std::string_view m) { warnings += m.find("skipped") != std::string_view::npos; });
  const auto reps = evaluate_corpus(c.manifest, {{"noisy", c.root / "noisy"}});
  set_warning_sink(prev);
  EXPECT_EQ(reps[0].rows.size(), 1u);
  EXPECT_EQ(reps[0].skipped, 1u);
  EXPECT_EQ(warnings, 1);
}

TEST(EvaluateCorpus, EmptyManifestIsError) {
  EXPECT_THROW(evaluate_corpus({}, {{"x", "/tmp"}}), DataError);
}

TEST(EvaluateCorpus, MeansIndependentOfRowOrder) {
  const auto c = write_corpus("order", 3);
  auto rev = c.manifest;
  std::reverse(rev.begin(), rev.end());
  const auto a = evaluate_corpus(c.manifest, {{"noisy", c.root / "noisy"}});
  const auto b = evaluate_corpus(rev, {{"noisy", c.root / "noisy"}});
  EXPECT_NEAR(a[0].mean.ssnr_db, b[0].mean.ssnr_db, 1e-12);
  EXPECT_NEAR(a[0].mean.stoi, b[0].mean.stoi, 1e-12);
  EXPECT_NEAR(a[0].mean.lsd_db, b[0].mean.lsd_db, 1e-12);
}

TEST(ScorePair, ToleratesOneSampleLengthDifference) {
  const auto c = speech(30, 40000);
  auto p = c;
  p.samples.push_back(0.0);
  EXPECT_DOUBLE_EQ(score_pair("u", c, p).ssnr_db, 35.0);
  p.samples.push_back(0.0);
  EXPECT_THROW(score_pair("u", c, p), DataError);
}

TEST(Report, CsvSchemaAndFooter) {
  MetricReport r;
  r.system = "s";
  r.rows = {{"a", 10.0, 0.9, 2.0}, {"b", 20.0, 0.7, 4.0}};
  r.finalize();
  const auto csv = report_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "utt_id,ssnr_db,stoi,lsd_db");
  EXPECT_NE(csv.find("mean,15.000000,0.800000,3.000000"), std::string::npos);
  EXPECT_NE(csv.find("std,5.000000,0.100000,1.000000"), std::string::npos);
  const auto table = report_table({r});
  EXPECT_NE(table.find("SSNR"), std::string::npos);
  EXPECT_NE(table.find("15.00"), std::string::npos);
}
