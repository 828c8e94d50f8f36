#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "support/synthetic.hpp"
#include "wr/dataset.hpp"

namespace fs = std::filesystem;
using namespace wr;

namespace {

Waveform delayed(const Waveform& ref, std::size_t delay, std::size_t tail = 0) {
  Waveform out{std::vector<double>(delay, 0.0), ref.sample_rate_hz};
  out.samples.insert(out.samples.end(), ref.samples.begin(), ref.samples.end());
  out.samples.resize(out.samples.size() + tail, 0.0);
  return out;
}

Waveform ramp(std::size_t n) {
  Waveform w{std::vector<double>(n), 16000};
  for (std::size_t i = 0; i < n; ++i) w.samples[i] = static_cast<double>(i) / static_cast<double>(n);
  return w;
}

}  // namespace

TEST(EstimateDelay, RecoversConstructedDelay) {
  const Waveform ref{synth::white_noise(20000, 0.3, 1), 16000};
  EXPECT_EQ(estimate_delay(ref, delayed(ref, 1234), 2000), 1234u);
}

TEST(EstimateDelay, ZeroDelay) {
  const Waveform ref{synth::white_noise(20000, 0.3, 2), 16000};
  EXPECT_EQ(estimate_delay(ref, ref, 2000), 0u);
}

TEST(EstimateDelay, RecoversDelayUnderNoise) {
  const Waveform ref{synth::white_noise(20000, 0.3, 3), 16000};
  const auto rec = synth::add_noise(delayed(ref, 500), 10.0, 99);
  EXPECT_EQ(estimate_delay(ref, rec, 2000), 500u);
}

TEST(EstimateDelay, SpeechLikeReference) {
  std::mt19937_64 rng(4);
  auto ref = synth::multi_sine_speech(24000, rng);
  const auto n = synth::white_noise(ref.size(), 0.01, 5);
  for (std::size_t i = 0; i < ref.size(); ++i) ref.samples[i] += n[i];
  EXPECT_EQ(estimate_delay(ref, delayed(ref, 321), 1000), 321u);
}

TEST(EstimateDelay, MaxLagMustBeBelowRecordedLength) {
  const Waveform ref{synth::white_noise(100, 0.3, 5), 16000};
  EXPECT_THROW(estimate_delay(ref, ref, 100), ArgumentError);
  EXPECT_THROW(estimate_delay(ref, ref, 500), ArgumentError);
}

TEST(EstimateDelay, RejectsRateMismatch) {
  Waveform a{synth::white_noise(100, 0.3, 6), 16000}, b = a;
  b.sample_rate_hz = 48000;
  EXPECT_THROW(estimate_delay(a, b, 10), ArgumentError);
}

TEST(Align, ShiftsAndTrims) {
  const Waveform ref{synth::white_noise(20000, 0.3, 7), 16000};
  const auto pair = align(ref, delayed(ref, 1234, 50), 2000);
  EXPECT_EQ(pair.delay_samples, 1234u);
  ASSERT_EQ(pair.clean.size(), pair.degraded.size());
  EXPECT_EQ(pair.clean.size(), ref.size());
  EXPECT_EQ(pair.degraded.samples, ref.samples);
}

TEST(Align, ZeroDelayTrimsToCommonLength) {
  const Waveform ref{synth::white_noise(20000, 0.3, 8), 16000};
  Waveform rec = ref;
  rec.samples.resize(19000);
  const auto pair = align(ref, rec, 500);
  EXPECT_EQ(pair.delay_samples, 0u);
  EXPECT_EQ(pair.clean.size(), 19000u);
  EXPECT_TRUE(std::equal(pair.clean.samples.begin(), pair.clean.samples.end(), ref.samples.begin()));
  EXPECT_EQ(pair.degraded.samples, rec.samples);
}

TEST(Align, AlignedPairPeaksAtLagZero) {
  const Waveform ref{synth::white_noise(20000, 0.3, 9), 16000};
  const auto pair = align(ref, synth::add_noise(delayed(ref, 777), 10.0, 10), 2000);
  auto corr = [&](long lag) {
    double s = 0.0;
    for (long i = 0; i < static_cast<long>(pair.clean.size()); ++i) {
      const long j = i + lag;
      if (j >= 0 && j < static_cast<long>(pair.degraded.size())) s += pair.clean.samples[i] * pair.degraded.samples[j];
    }
    return s;
  };
  const double c0 = corr(0);
  for (long lag = -100; lag <= 100; ++lag)
    if (lag != 0) {
      EXPECT_GE(c0, corr(lag)) << "lag " << lag;
    }
}

TEST(Align, ShortOverlapIsDataError) {
  const Waveform ref{synth::white_noise(3000, 0.3, 11), 16000};
  EXPECT_THROW(align(ref, ref, 100), DataError);
  EXPECT_NO_THROW(align(ref, ref, 100, 2048));
}

TEST(TrimSilence, RemovesLongLeadingAndTrailingSilence) {
  const auto speech = synth::sine(300.0, 0.5, 16000);
  Waveform w{std::vector<double>(4800, 0.0), 16000};  // 300 ms
  w.samples.insert(w.samples.end(), speech.samples.begin(), speech.samples.end());
  w.samples.resize(w.size() + 4800, 0.0);
  const auto span = find_trim_span(w);
  // The sine starts at exactly zero, so the first kept sample is its second one.
  EXPECT_LE(span.begin - 4800, 1u);
  EXPECT_GE(span.begin, 4800u);
  EXPECT_LE(4800u + 16000u - span.end, 2u);
  const auto t = trim_silence(w, -50.0, 200.0);
  EXPECT_NEAR(static_cast<double>(t.size()), 16000.0, 3.0);
}

TEST(TrimSilence, NoSilenceIsIdentity) {
  const auto w = synth::sine(300.0, 0.5, 8000);
  EXPECT_EQ(trim_silence(w).samples, w.samples);
}

TEST(TrimSilence, ShortLeadingSilenceUntouched) {
  Waveform w{std::vector<double>(2400, 0.0), 16000};  // 150 ms
  const auto s = synth::sine(300.0, 0.5, 8000);
  w.samples.insert(w.samples.end(), s.samples.begin(), s.samples.end());
  EXPECT_EQ(trim_silence(w, -50.0, 200.0).samples, w.samples);
}

TEST(TrimSilence, InteriorSilenceUntouched) {
  auto a = synth::sine(300.0, 0.5, 8000);
  Waveform w = a;
  w.samples.resize(w.size() + 8000, 0.0);
  w.samples.insert(w.samples.end(), a.samples.begin() + 1, a.samples.end());
  EXPECT_EQ(trim_silence(w).size(), w.size());
}

TEST(TrimSilence, AllSilentIsDataError) {
  Waveform w{std::vector<double>(16000, 0.0), 16000};
  EXPECT_THROW(trim_silence(w), DataError);
}

TEST(TrimSilence, RejectsNonPositiveDuration) {
  EXPECT_THROW(trim_silence(synth::sine(300.0, 0.5, 8000), -50.0, 0.0), ArgumentError);
}

TEST(ChunkTraining, CountFollowsFormula) {
  const auto cs = chunk_training(ramp(49152), 16384, 8192);
  EXPECT_EQ(cs.chunks.size(), 5u);
  for (std::size_t len : {16384u, 20000u, 40000u, 65537u})
    EXPECT_EQ(chunk_training(ramp(len), 16384, 8192).chunks.size(), (len - 16384) / 8192 + 1);
}

TEST(ChunkTraining, ExactWindowIsSingleChunk) {
  const auto w = ramp(16384);
  const auto cs = chunk_training(w, 16384, 8192);
  ASSERT_EQ(cs.chunks.size(), 1u);
  EXPECT_EQ(cs.chunks[0], w.samples);
}

TEST(ChunkTraining, ConsecutiveChunksShareHalf) {
  const auto cs = chunk_training(ramp(49152), 16384, 8192);
  for (std::size_t i = 0; i + 1 < cs.chunks.size(); ++i)
    EXPECT_TRUE(std::equal(cs.chunks[i].begin() + 8192, cs.chunks[i].end(), cs.chunks[i + 1].begin()));
}

TEST(ChunkTraining, ShortInputIsDataError) { EXPECT_THROW(chunk_training(ramp(100), 1024, 512), DataError); }

TEST(ChunkTraining, NonPowerOfTwoWindowWarns) {
  int warnings = 0;
  auto prev = set_warning_sink([&](std::string_view) { ++warnings; });
  chunk_training(ramp(3000), 1000, 500);
  set_warning_sink(prev);
  EXPECT_EQ(warnings, 1);
}

TEST(ChunkInference, PrepadsFinalChunk) {
  const auto w = ramp(40000);
  const auto cs = chunk_inference(w, 16384);
  ASSERT_EQ(cs.chunks.size(), 3u);
  EXPECT_EQ(cs.prepad_len, 9152u);
  EXPECT_TRUE(std::equal(cs.chunks[2].begin(), cs.chunks[2].end(), w.samples.begin() + 23616));
  EXPECT_EQ(stitch(cs).samples, w.samples);
}

TEST(ChunkInference, ExactTiling) {
  const auto cs = chunk_inference(ramp(32768), 16384);
  EXPECT_EQ(cs.chunks.size(), 2u);
  EXPECT_EQ(cs.prepad_len, 0u);
}

TEST(ChunkInference, ShortInputRepeatsFirstSample) {
  Waveform w{{0.25, 0.5, 0.75}, 16000};
  const auto cs = chunk_inference(w, 8);
  ASSERT_EQ(cs.chunks.size(), 1u);
  EXPECT_EQ(cs.chunks[0], (std::vector<double>{0.25, 0.25, 0.25, 0.25, 0.25, 0.25, 0.5, 0.75}));
  EXPECT_EQ(stitch(cs).samples, w.samples);
}

TEST(ChunkInference, EmptyInputRejected) { EXPECT_THROW(chunk_inference(Waveform{}, 16), ArgumentError); }

TEST(Stitch, SingleExactChunkIsIdentity) {
  const auto w = ramp(16384);
  EXPECT_EQ(stitch(chunk_inference(w, 16384)).samples, w.samples);
}

TEST(Stitch, RandomLengthsRoundTrip) {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<std::size_t> len(16384, 100000);
  for (int k = 0; k < 50; ++k) {
    const std::size_t n = len(rng);
    const Waveform w{synth::white_noise(n, 0.2, rng()), 16000};
    EXPECT_EQ(stitch(chunk_inference(w, 16384)).samples, w.samples) << "length " << n;
  }
}

TEST(Stitch, RejectsTrainingMode) { EXPECT_THROW(stitch(chunk_training(ramp(2048), 1024, 512)), ArgumentError); }

TEST(Manifest, ParsesTabSeparatedPairsRelativeToFile) {
  const auto dir = fs::temp_directory_path() / "wr_manifest";
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "m.tsv");
    f << "# comment\nclean/a.wav\tnoisy/a.wav\n\n/abs/b.wav\t/abs/nb.wav\r\n";
  }
  const auto m = read_manifest(dir / "m.tsv");
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[0].clean, dir / "clean/a.wav");
  EXPECT_EQ(m[0].degraded, dir / "noisy/a.wav");
  EXPECT_EQ(m[1].degraded, fs::path("/abs/nb.wav"));
}

TEST(Manifest, RejectsLineWithoutTab) {
  const auto dir = fs::temp_directory_path() / "wr_manifest_bad";
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "m.tsv");
    f << "a.wav b.wav\n";
  }
  EXPECT_THROW(read_manifest(dir / "m.tsv"), FormatError);
}

TEST(ChunkCacheFile, RoundTripAndLayout) {
  ChunkCache c;
  c.append(chunk_training(ramp(4096), 1024, 512));
  EXPECT_EQ(c.count(), 7u);
  const auto path = fs::temp_directory_path() / "wr_cache_rt.wrchnk";
  write_chunk_cache(c, path);
  const auto bytes = detail::read_file_bytes(path);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 7), "WRCHNK1");
  EXPECT_EQ(detail::load_u32(bytes.data() + 7), 1024u);
  EXPECT_EQ(detail::load_u32(bytes.data() + 11), 512u);
  EXPECT_EQ(detail::load_u32(bytes.data() + 15), 7u);
  EXPECT_EQ(bytes.size(), 23u + 7u * 1024u * 4u);
  const auto back = read_chunk_cache(path);
  EXPECT_EQ(back.samples, c.samples);
  EXPECT_EQ(back.window_len, 1024u);
  EXPECT_EQ(back.hop, 512u);
}

TEST(ChunkCacheFile, TruncatedFileRejected) {
  ChunkCache c;
  c.append(chunk_training(ramp(2048), 1024, 512));
  auto bytes = encode_chunk_cache(c);
  bytes.resize(bytes.size() - 4);
  const auto path = fs::temp_directory_path() / "wr_cache_trunc.wrchnk";
  detail::write_file_atomic(path, bytes);
  EXPECT_THROW(read_chunk_cache(path), FormatError);
}
