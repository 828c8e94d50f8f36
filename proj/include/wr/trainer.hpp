#pragma once

// Least-squares GAN training with an L1 term and the directed-reference schedule,
// plus chunked inference.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "wr/audio_io.hpp"
#include "wr/checkpoint.hpp"
#include "wr/dataset.hpp"
#include "wr/nn_ops.hpp"
#include "wr/optim.hpp"
#include "wr/segan.hpp"

namespace wr {

inline constexpr int kModelSampleRate = 16000;

// --- losses --------------------------------------------------------------------

/// 1/2 (d_real - 1)^2 + 1/2 d_fake^2.
inline double d_loss(double d_real, double d_fake) {
  return 0.5 * (d_real - 1.0) * (d_real - 1.0) + 0.5 * d_fake * d_fake;
}

/// (d_fake - 1)^2 + lambda * mean|generated - reference|.
template <class T>
double g_loss(double d_fake, std::span<const T> generated, std::span<const T> reference, double lambda) {
  if (generated.size() != reference.size()) throw ArgumentError("g_loss: shape mismatch");
  double l1 = 0.0;
  for (std::size_t i = 0; i < generated.size(); ++i)
    l1 += std::abs(static_cast<double>(generated[i]) - static_cast<double>(reference[i]));
  if (!generated.empty()) l1 /= static_cast<double>(generated.size());
  return (d_fake - 1.0) * (d_fake - 1.0) + lambda * l1;
}

/// Batch-mean discriminator loss on [batch x 1] score tensors.
template <class T>
ag::Tensor<T> d_loss(const ag::Tensor<T>& d_real, const ag::Tensor<T>& d_fake) {
  const auto real_term = ag::mean(ag::square(ag::affine(d_real, T(1), T(-1))));
  const auto fake_term = ag::mean(ag::square(d_fake));
  return ag::affine(ag::add(real_term, fake_term), T(0.5));
}

/// Adversarial and L1 parts of the generator loss, kept separate for logging.
template <class T>
struct GLossParts {
  ag::Tensor<T> adversarial;
  ag::Tensor<T> l1;
  ag::Tensor<T> total;
};

template <class T>
GLossParts<T> g_loss(const ag::Tensor<T>& d_fake, const ag::Tensor<T>& generated, const ag::Tensor<T>& reference,
                     double lambda) {
  GLossParts<T> p;
  p.adversarial = ag::mean(ag::square(ag::affine(d_fake, T(1), T(-1))));
  p.l1 = ag::mean_abs_diff(generated, reference);
  p.total = ag::add(p.adversarial, ag::affine(p.l1, static_cast<T>(lambda)));
  return p;
}

// --- directed-reference schedule ----------------------------------------------

struct TrainSchedule {
  std::size_t J = 2;
  double P_J = 0.5;
  std::size_t warmup_epochs = 50;
  std::size_t d_iters_K = 1;
  bool stochastic = false;

  static TrainSchedule from(const SeganConfig& c) {
    return {c.J, c.P_J, c.warmup_epochs, c.d_iters_K, c.stochastic_schedule};
  }
  void validate() const {
    if (J < 1) throw ArgumentError("schedule: J must be >= 1");
    if (!(P_J >= 0.0 && P_J <= 1.0)) throw ArgumentError("schedule: P_J must be in [0, 1]");
    if (d_iters_K < 1) throw ArgumentError("schedule: K must be >= 1");
  }
};

/// True when generator iteration i of an epoch uses the pre-enhanced reference:
/// inside the warm-up epochs and 1 - i/J <= P_J.
inline bool uses_pre_enhanced(std::size_t i, std::size_t epoch, const TrainSchedule& s) {
  s.validate();
  if (i >= s.J) throw ArgumentError("select_reference: iteration index out of range");
  if (epoch >= s.warmup_epochs) return false;
  return static_cast<double>(s.J - i) <= s.P_J * static_cast<double>(s.J);
}

template <class R>
const R& select_reference(std::size_t i, std::size_t epoch, const TrainSchedule& s, const R& clean, const R& pre_enhanced) {
  return uses_pre_enhanced(i, epoch, s) ? pre_enhanced : clean;
}

// --- training data and state ----------------------------------------------------

/// Parallel chunk caches: clean x, degraded x~ and pre-enhanced B(x~).
struct TrainingData {
  ChunkCache clean;
  ChunkCache noisy;
  ChunkCache pre_enhanced;

  std::size_t size() const { return clean.count(); }
  void validate(std::size_t window_len) const {
    if (clean.window_len != window_len || noisy.window_len != window_len || pre_enhanced.window_len != window_len)
      throw DataError("training data window length does not match the model window");
    if (noisy.count() != clean.count() || pre_enhanced.count() != clean.count())
      throw DataError("training caches have different chunk counts");
    if (clean.count() == 0) throw DataError("training data is empty");
  }
};

template <class T>
ag::Tensor<T> gather_batch(const ChunkCache& cache, std::span<const std::size_t> idx) {
  const std::size_t L = cache.window_len;
  std::vector<T> v(idx.size() * L);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto c = cache.chunk(idx[b]);
    std::transform(c.begin(), c.end(), v.begin() + static_cast<std::ptrdiff_t>(b * L), [](float x) { return static_cast<T>(x); });
  }
  return ag::Tensor<T>::from({idx.size(), L, 1}, std::move(v));
}

template <class T>
struct Batch {
  ag::Tensor<T> clean, noisy, pre_enhanced;
};

template <class T>
Batch<T> make_batch(const TrainingData& d, std::span<const std::size_t> idx) {
  return {gather_batch<T>(d.clean, idx), gather_batch<T>(d.noisy, idx), gather_batch<T>(d.pre_enhanced, idx)};
}

template <class T>
struct TrainState {
  std::size_t epoch = 0;         // completed epochs
  std::uint64_t step = 0;        // completed train steps
  std::uint64_t g_updates = 0;
  std::uint64_t d_updates = 0;
  GeneratorParams<T> gen;
  DiscriminatorParams<T> disc;
  ag::RmspropState<T> gen_opt;
  ag::RmspropState<T> disc_opt;
  VbnReference<T> vbn_ref;
  std::mt19937_64 rng;
};

struct StepLosses {
  double d_loss = 0.0;
  double g_adv = 0.0;
  double g_l1 = 0.0;
  double ref_pre_enhanced_frac = 0.0;
};

namespace detail {

template <class T>
void set_trainable(ag::ParamSet<T>& p, bool on) {
  for (auto& [_, t] : p) t.node()->requires_grad = on;
}

inline void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + what);
}

}  // namespace detail

template <class T>
TrainState<T> init_train_state(const SeganConfig& cfg, const TrainingData& data, std::uint64_t seed) {
  cfg.validate();
  data.validate(cfg.window_len);
  TrainState<T> s;
  s.gen = build_generator<T>(cfg, seed);
  s.disc = build_discriminator<T>(cfg, seed + 1);
  s.rng.seed(seed + 2);
  s.gen_opt.options = {cfg.learning_rate, 0.9, 1e-8};
  s.disc_opt.options = {cfg.learning_rate, 0.9, 1e-8};
  // Fixed VBN reference batch of real (clean, degraded) pairs, drawn once.
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), s.rng);
  order.resize(std::min(cfg.ref_batch(), order.size()));
  try {
    s.vbn_ref = compute_vbn_reference(s.disc, gather_batch<T>(data.clean, order), gather_batch<T>(data.noisy, order), cfg);
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + " in the VBN reference batch, before epoch 0, step 0");
  }
  return s;
}

/// K discriminator updates on real (x, x~) and fake (G(x~, z), x~) pairs.
template <class T>
double discriminator_phase(const Batch<T>& batch, TrainState<T>& s, const SeganConfig& cfg) {
  const std::size_t B = batch.noisy.dim(0);
  double total = 0.0;
  detail::set_trainable(s.disc, true);
  for (std::size_t k = 0; k < cfg.d_iters_K; ++k) {
    ag::Tensor<T> fake;
    {
      ag::NoGradGuard no_grad;
      fake = generator_forward(s.gen, batch.noisy, sample_latent<T>(cfg, B, s.rng), cfg);
    }
    const auto d_real = discriminator_forward(s.disc, batch.clean, batch.noisy, s.vbn_ref, cfg);
    const auto d_fake = discriminator_forward(s.disc, fake, batch.noisy, s.vbn_ref, cfg);
    const auto loss = d_loss(d_real, d_fake);
    detail::require_finite(loss.item(), "discriminator loss");
    ag::backward(loss);
    ag::rmsprop_step(s.disc, s.disc_opt);
    ++s.d_updates;
    total += loss.item();
  }
  return total / static_cast<double>(cfg.d_iters_K);
}

/// J generator updates, each with the reference chosen by the schedule.
template <class T>
StepLosses generator_phase(const Batch<T>& batch, TrainState<T>& s, const SeganConfig& cfg, std::size_t epoch) {
  const auto sched = TrainSchedule::from(cfg);
  const std::size_t B = batch.noisy.dim(0);
  StepLosses out;
  detail::set_trainable(s.disc, false);
  std::size_t pre_count = 0;
  for (std::size_t i = 0; i < sched.J; ++i) {
    bool pre;
    if (sched.stochastic) {
      pre = epoch < sched.warmup_epochs && std::bernoulli_distribution(sched.P_J)(s.rng);
    } else {
      pre = uses_pre_enhanced(i, epoch, sched);
    }
    pre_count += pre ? 1 : 0;
    const auto& ref = pre ? batch.pre_enhanced : batch.clean;
    const auto gen = generator_forward(s.gen, batch.noisy, sample_latent<T>(cfg, B, s.rng), cfg);
    const auto d_fake = discriminator_forward(s.disc, gen, batch.noisy, s.vbn_ref, cfg);
    const auto parts = g_loss(d_fake, gen, ref, cfg.lambda_l1);
    detail::require_finite(parts.total.item(), "generator loss");
    ag::backward(parts.total);
    ag::rmsprop_step(s.gen, s.gen_opt);
    ++s.g_updates;
    out.g_adv += parts.adversarial.item();
    out.g_l1 += parts.l1.item();
  }
  detail::set_trainable(s.disc, true);
  out.g_adv /= static_cast<double>(sched.J);
  out.g_l1 /= static_cast<double>(sched.J);
  out.ref_pre_enhanced_frac = static_cast<double>(pre_count) / static_cast<double>(sched.J);
  return out;
}

/// One step: K discriminator updates then J generator updates.
template <class T>
StepLosses train_step(const Batch<T>& batch, TrainState<T>& s, const SeganConfig& cfg, std::size_t epoch) {
  if (batch.noisy.rank() != 3 || batch.noisy.dim(1) != cfg.window_len)
    throw ArgumentError("train_step: batch chunk length does not match window_len");
  try {
    const double dl = discriminator_phase(batch, s, cfg);
    auto losses = generator_phase(batch, s, cfg, epoch);
    losses.d_loss = dl;
    ++s.step;
    return losses;
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", step " + std::to_string(s.step));
  }
}

// --- checkpoints ----------------------------------------------------------------

template <class T>
Checkpoint to_checkpoint(const TrainState<T>& s, const SeganConfig& cfg) {
  Checkpoint c;
  c.meta["epoch"] = std::to_string(s.epoch);
  c.meta["step"] = std::to_string(s.step);
  c.meta["g_updates"] = std::to_string(s.g_updates);
  c.meta["d_updates"] = std::to_string(s.d_updates);
  std::ostringstream rng;
  rng << s.rng;
  c.meta["rng"] = rng.str();
  c.meta["window_len"] = std::to_string(cfg.window_len);
  std::string ch;
  for (auto v : cfg.enc_channels) ch += (ch.empty() ? "" : ",") + std::to_string(v);
  c.meta["enc_channels"] = ch;
  c.meta["residual_skip"] = cfg.residual_skip ? "1" : "0";
  c.put_params("g/", s.gen);
  c.put_params("d/", s.disc);
  c.put_rmsprop("opt_g/", s.gen_opt);
  c.put_rmsprop("opt_d/", s.disc_opt);
  for (std::size_t i = 0; i < s.vbn_ref.size(); ++i) {
    const auto& r = s.vbn_ref[i];
    const auto p = "vbn_ref/" + std::to_string(i);
    c.put<T>(p + ".mean", {r.mean.size()}, r.mean);
    c.put<T>(p + ".mean_sq", {r.mean_sq.size()}, r.mean_sq);
    const std::vector<T> bs{static_cast<T>(r.batch_size)};
    c.put<T>(p + ".batch", {1}, bs);
  }
  return c;
}

template <class T>
TrainState<T> from_checkpoint(const Checkpoint& c, const SeganConfig& cfg) {
  TrainState<T> s;
  auto meta = [&](const char* k) -> const std::string& {
    auto it = c.meta.find(k);
    if (it == c.meta.end()) throw FormatError(std::string("checkpoint missing metadata ") + k);
    return it->second;
  };
  if (std::stoull(meta("window_len")) != cfg.window_len) throw DataError("checkpoint window_len differs from config");
  s.epoch = std::stoull(meta("epoch"));
  s.step = std::stoull(meta("step"));
  s.g_updates = std::stoull(meta("g_updates"));
  s.d_updates = std::stoull(meta("d_updates"));
  std::istringstream rng(meta("rng"));
  rng >> s.rng;
  s.gen = build_generator<T>(cfg, 0);
  s.disc = build_discriminator<T>(cfg, 0);
  c.load_params("g/", s.gen);
  c.load_params("d/", s.disc);
  s.gen_opt.options = s.disc_opt.options = {cfg.learning_rate, 0.9, 1e-8};
  c.load_rmsprop("opt_g/", s.gen_opt);
  c.load_rmsprop("opt_d/", s.disc_opt);
  for (std::size_t i = 0; c.has("vbn_ref/" + std::to_string(i) + ".mean"); ++i) {
    const auto p = "vbn_ref/" + std::to_string(i);
    ag::VbnStats<T> r;
    r.mean = c.get(p + ".mean").template as<T>();
    r.mean_sq = c.get(p + ".mean_sq").template as<T>();
    r.batch_size = static_cast<std::size_t>(c.get(p + ".batch").template as<T>().at(0));
    s.vbn_ref.push_back(std::move(r));
  }
  return s;
}

/// Generator weights only, for inference.
template <class T>
GeneratorParams<T> load_generator(const Checkpoint& c, const SeganConfig& cfg) {
  auto g = build_generator<T>(cfg, 0);
  c.load_params("g/", g);
  return g;
}

// --- training loop ----------------------------------------------------------------

struct LossLogRow {
  std::size_t epoch = 0;
  std::uint64_t step = 0;
  StepLosses losses;
};

inline constexpr const char* kLossLogHeader = "epoch,step,d_loss,g_adv,g_l1,ref_pre_enhanced_frac";

inline std::string format_log_row(const LossLogRow& r) {
  std::ostringstream os;
  os << std::setprecision(9) << r.epoch << ',' << r.step << ',' << r.losses.d_loss << ',' << r.losses.g_adv << ','
     << r.losses.g_l1 << ',' << r.losses.ref_pre_enhanced_frac;
  return os.str();
}

struct TrainOptions {
  std::filesystem::path output_dir;  // empty: keep everything in memory
  std::filesystem::path resume_from;  // checkpoint to continue from
  std::uint64_t seed = 1234;
  std::size_t stop_after_epoch = 0;  // 0: run to total_epochs
  std::function<void(const LossLogRow&)> on_step;
};

template <class T>
struct TrainResult {
  TrainState<T> state;
  std::vector<LossLogRow> log;
  std::filesystem::path final_checkpoint;
};

inline std::size_t steps_per_epoch(const SeganConfig& cfg, std::size_t chunks) {
  std::size_t n = chunks / cfg.batch_size;
  if (cfg.max_steps_per_epoch) n = std::min(n, cfg.max_steps_per_epoch);
  return n;
}

inline std::filesystem::path epoch_checkpoint_path(const std::filesystem::path& dir, std::size_t epoch) {
  std::ostringstream name;
  name << "epoch_" << std::setw(4) << std::setfill('0') << epoch << ".wrckpt";
  return dir / name.str();
}

namespace detail {

// Keep log rows from epochs before `epoch` so a resumed run continues one log.
inline void truncate_log(const std::filesystem::path& path, std::size_t epoch) {
  std::vector<std::string> keep;
  if (std::ifstream in(path); in) {
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line))
      if (!line.empty() && std::stoull(line.substr(0, line.find(','))) < epoch) keep.push_back(line);
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << kLossLogHeader << '\n';
  for (const auto& l : keep) out << l << '\n';
}

}  // namespace detail

/// Full training run. Checkpoints after every epoch when output_dir is set.
template <class T>
TrainResult<T> train(const TrainingData& data, const SeganConfig& cfg, const TrainOptions& opt) {
  cfg.validate();
  data.validate(cfg.window_len);
  const std::size_t steps = steps_per_epoch(cfg, data.size());
  if (steps == 0) throw DataError("fewer chunks than one batch");

  TrainResult<T> res;
  res.state = opt.resume_from.empty() ? init_train_state<T>(cfg, data, opt.seed)
                                      : from_checkpoint<T>(Checkpoint::load(opt.resume_from), cfg);
  auto& s = res.state;
  std::ofstream log;
  if (!opt.output_dir.empty()) {
    std::filesystem::create_directories(opt.output_dir);
    const auto log_path = opt.output_dir / "loss_log.csv";
    detail::truncate_log(log_path, s.epoch);
    log.open(log_path, std::ios::app);
  }
  const std::size_t last_epoch = opt.stop_after_epoch ? std::min(opt.stop_after_epoch, cfg.total_epochs) : cfg.total_epochs;
  std::vector<std::size_t> order(data.size());
  while (s.epoch < last_epoch) {
    const std::size_t epoch = s.epoch;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), s.rng);
    for (std::size_t k = 0; k < steps; ++k) {
      const auto idx = std::span<const std::size_t>(order).subspan(k * cfg.batch_size, cfg.batch_size);
      const auto losses = train_step(make_batch<T>(data, idx), s, cfg, epoch);
      LossLogRow row{epoch, s.step, losses};
      res.log.push_back(row);
      if (log.is_open()) log << format_log_row(row) << '\n';
      if (opt.on_step) opt.on_step(row);
    }
    ++s.epoch;
    if (!opt.output_dir.empty()) {
      log.flush();
      const auto ckpt = to_checkpoint(s, cfg);
      res.final_checkpoint = epoch_checkpoint_path(opt.output_dir, s.epoch);
      ckpt.save(res.final_checkpoint);
      ckpt.save(opt.output_dir / "latest.wrckpt");
    }
  }
  return res;
}

// --- inference --------------------------------------------------------------------

enum class LatentPolicy { per_chunk, fixed };

struct EnhanceOptions {
  LatentPolicy latent = LatentPolicy::per_chunk;
  std::uint64_t seed = 1234;
  std::size_t chunks_per_batch = 8;
};

/// Chunk, run the generator on each chunk, stitch. The outer residual is added in
/// double precision so a zero generator reproduces the input exactly.
template <class T>
Waveform enhance(const Waveform& input, const GeneratorParams<T>& gen, const SeganConfig& cfg, const EnhanceOptions& opt = {}) {
  if (input.sample_rate_hz != kModelSampleRate)
    throw DataError("enhance: expected " + std::to_string(kModelSampleRate) + " Hz input, got " +
                    std::to_string(input.sample_rate_hz));
  auto chunks = chunk_inference(input, cfg.window_len);
  SeganConfig raw_cfg = cfg;
  raw_cfg.residual_skip = false;
  std::mt19937_64 rng(opt.seed);
  ag::Tensor<T> fixed_z;
  if (opt.latent == LatentPolicy::fixed) fixed_z = sample_latent<T>(cfg, 1, rng);
  ag::NoGradGuard no_grad;
  const std::size_t L = cfg.window_len;
  for (std::size_t first = 0; first < chunks.chunks.size(); first += opt.chunks_per_batch) {
    const std::size_t n = std::min(opt.chunks_per_batch, chunks.chunks.size() - first);
    std::vector<T> v(n * L);
    for (std::size_t b = 0; b < n; ++b)
      std::transform(chunks.chunks[first + b].begin(), chunks.chunks[first + b].end(), v.begin() + static_cast<std::ptrdiff_t>(b * L),
                     [](double x) { return static_cast<T>(x); });
    ag::Tensor<T> z;
    if (opt.latent == LatentPolicy::fixed) {
      std::vector<T> zv;
      for (std::size_t b = 0; b < n; ++b) zv.insert(zv.end(), fixed_z.values().begin(), fixed_z.values().end());
      z = ag::Tensor<T>::from({n, cfg.bottleneck_len(), cfg.z_channels()}, std::move(zv));
    } else {
      z = sample_latent<T>(cfg, n, rng);
    }
    const auto raw = generator_forward(gen, ag::Tensor<T>::from({n, L, 1}, std::move(v)), z, raw_cfg);
    for (std::size_t b = 0; b < n; ++b) {
      auto& c = chunks.chunks[first + b];
      for (std::size_t i = 0; i < L; ++i) {
        const double r = static_cast<double>(raw.values()[b * L + i]);
        c[i] = cfg.residual_skip ? c[i] + r : r;
      }
    }
  }
  return stitch(chunks);
}

}  // namespace wr
