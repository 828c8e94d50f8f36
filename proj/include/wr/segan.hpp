#pragma once

// Generator (strided-conv encoder, latent concat at the bottleneck, transposed-conv
// decoder with per-level skips, optional outer residual skip) and the
// conditional least-squares discriminator.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "wr/nn_ops.hpp"
#include "wr/optim.hpp"
#include "wr/tensor.hpp"

namespace wr {

struct SeganConfig {
  // architecture
  std::size_t window_len = 16384;
  std::vector<std::size_t> enc_channels{16, 32, 32, 64, 64, 128, 128, 256, 256, 512, 1024};
  std::size_t filter_width = 31;
  std::size_t stride = 2;
  std::size_t latent_channels = 0;  // 0: same as the last encoder layer (8x1024 for the default)
  double d_alpha = 0.3;
  bool residual_skip = true;
  double init_std = 0.02;
  double prelu_init = 0.0;
  double vbn_eps = 1e-5;
  bool vbn_include_current = true;  // blend the current example into VBN stats with weight 1/(B_ref+1)
  std::size_t vbn_ref_batch = 0;    // 0: batch_size

  // training
  double lambda_l1 = 100.0;
  std::size_t J = 2;
  double P_J = 0.5;
  std::size_t warmup_epochs = 50;
  std::size_t total_epochs = 120;
  std::size_t batch_size = 100;
  double learning_rate = 0.0002;
  std::size_t d_iters_K = 1;
  bool stochastic_schedule = false;  // Bernoulli(P_J) reference choice instead of the threshold rule
  std::size_t max_steps_per_epoch = 0;  // 0: floor(chunks / batch)

  /// Window 1024 with four encoder layers, for desk-scale runs.
  static SeganConfig toy() {
    SeganConfig c;
    c.window_len = 1024;
    c.enc_channels = {16, 32, 64, 128};
    c.batch_size = 16;
    return c;
  }

  std::size_t layers() const noexcept { return enc_channels.size(); }
  std::size_t bottleneck_len() const {
    std::size_t n = window_len;
    for (std::size_t i = 0; i < layers(); ++i) n /= stride;
    return n;
  }
  std::size_t z_channels() const { return latent_channels ? latent_channels : enc_channels.back(); }
  std::size_t ref_batch() const { return vbn_ref_batch ? vbn_ref_batch : batch_size; }

  void validate() const {
    if (enc_channels.empty()) throw ArgumentError("enc_channels must not be empty");
    if (stride < 1) throw ArgumentError("stride must be positive");
    if (filter_width % 2 == 0) throw ArgumentError("filter_width must be odd");
    std::size_t n = window_len;
    for (std::size_t i = 0; i < layers(); ++i) {
      if (n % stride != 0)
        throw ArgumentError("window_len " + std::to_string(window_len) + " not divisible by stride^" + std::to_string(layers()));
      n /= stride;
    }
    if (n == 0) throw ArgumentError("bottleneck length is zero");
    if (J < 1) throw ArgumentError("J must be >= 1");
    if (!(P_J >= 0.0 && P_J <= 1.0)) throw ArgumentError("P_J must be in [0, 1]");
    if (batch_size < 1 || d_iters_K < 1) throw ArgumentError("batch_size and d_iters_K must be >= 1");
    if (!(learning_rate > 0.0)) throw ArgumentError("learning_rate must be positive");
    if (!(lambda_l1 >= 0.0)) throw ArgumentError("lambda_l1 must be >= 0");
  }
};

template <class T>
using GeneratorParams = ag::ParamSet<T>;
template <class T>
using DiscriminatorParams = ag::ParamSet<T>;
template <class T>
using VbnReference = std::vector<ag::VbnStats<T>>;  // one entry per discriminator conv layer

namespace detail {

template <class T>
ag::Tensor<T> truncated_normal(ag::Shape shape, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<T> v(ag::numel(shape));
  for (auto& x : v) {
    double s;
    do s = dist(rng);
    while (std::abs(s) > 2.0);
    x = static_cast<T>(s * std);
  }
  return ag::Tensor<T>::from(std::move(shape), std::move(v), true);
}

inline std::string idx(const char* prefix, std::size_t i, const char* suffix) {
  return std::string(prefix) + std::to_string(i) + suffix;
}

// Output channels of decoder layer j (mirror of the encoder, single channel out).
inline std::size_t dec_out_channels(const SeganConfig& c, std::size_t j) {
  const std::size_t n = c.layers();
  return j + 1 == n ? 1 : c.enc_channels[n - 2 - j];
}

}  // namespace detail

template <class T>
GeneratorParams<T> build_generator(const SeganConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  GeneratorParams<T> p;
  const std::size_t n = cfg.layers(), w = cfg.filter_width;
  std::size_t cin = 1;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cout = cfg.enc_channels[i];
    p.add(detail::idx("enc", i, ".w"), detail::truncated_normal<T>({w, cin, cout}, cfg.init_std, rng));
    p.add(detail::idx("enc", i, ".b"), ag::Tensor<T>::zeros({cout}, true));
    p.add(detail::idx("enc", i, ".prelu"), ag::Tensor<T>::full({cout}, static_cast<T>(cfg.prelu_init), true));
    cin = cout;
  }
  cin = cfg.enc_channels.back() + cfg.z_channels();
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t cout = detail::dec_out_channels(cfg, j);
    p.add(detail::idx("dec", j, ".w"), detail::truncated_normal<T>({w, cout, cin}, cfg.init_std, rng));
    p.add(detail::idx("dec", j, ".b"), ag::Tensor<T>::zeros({cout}, true));
    if (j + 1 < n) p.add(detail::idx("dec", j, ".prelu"), ag::Tensor<T>::full({cout}, static_cast<T>(cfg.prelu_init), true));
    cin = 2 * cout;
  }
  return p;
}

/// Zero the last decoder layer; with the residual skip the generator is then the identity.
template <class T>
void zero_final_decoder_layer(GeneratorParams<T>& p, const SeganConfig& cfg) {
  const std::size_t last = cfg.layers() - 1;
  for (const char* s : {".w", ".b"})
    for (auto& v : p.at(detail::idx("dec", last, s)).mutable_values()) v = T(0);
}

/// Standard-normal latent of shape [batch x bottleneck_len x z_channels].
template <class T>
ag::Tensor<T> sample_latent(const SeganConfig& cfg, std::size_t batch, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<T> v(batch * cfg.bottleneck_len() * cfg.z_channels());
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return ag::Tensor<T>::from({batch, cfg.bottleneck_len(), cfg.z_channels()}, std::move(v));
}

/// Shapes observed during a generator forward pass (per example, batch dim dropped).
struct GeneratorTrace {
  std::vector<ag::Shape> encoder;
  ag::Shape bottleneck;  // after concatenating z
  std::vector<ag::Shape> decoder;
  ag::Shape output;
};

namespace detail {
inline ag::Shape per_example(const ag::Shape& s) { return ag::Shape(s.begin() + 1, s.end()); }
}  // namespace detail

/// noisy: [batch x window_len x 1], z: [batch x bottleneck_len x z_channels].
template <class T>
ag::Tensor<T> generator_forward(const GeneratorParams<T>& p, const ag::Tensor<T>& noisy, const ag::Tensor<T>& z,
                                const SeganConfig& cfg, GeneratorTrace* trace = nullptr) {
  if (noisy.rank() != 3 || noisy.dim(1) != cfg.window_len || noisy.dim(2) != 1)
    throw ArgumentError("generator_forward: input " + ag::shape_str(noisy.shape()) + ", expected [batch x " +
                        std::to_string(cfg.window_len) + " x 1]");
  const std::size_t batch = noisy.dim(0);
  if (z.shape() != ag::Shape{batch, cfg.bottleneck_len(), cfg.z_channels()})
    throw ArgumentError("generator_forward: latent shape " + ag::shape_str(z.shape()) + " does not match the bottleneck");
  const std::size_t n = cfg.layers();
  std::vector<ag::Tensor<T>> skips;
  ag::Tensor<T> h = noisy;
  for (std::size_t i = 0; i < n; ++i) {
    h = ag::conv1d(h, p.at(detail::idx("enc", i, ".w")), p.at(detail::idx("enc", i, ".b")), cfg.stride);
    h = ag::prelu(h, p.at(detail::idx("enc", i, ".prelu")));
    if (trace) trace->encoder.push_back(detail::per_example(h.shape()));
    skips.push_back(h);
  }
  h = ag::concat_channels(h, z);
  if (trace) trace->bottleneck = detail::per_example(h.shape());
  for (std::size_t j = 0; j < n; ++j) {
    h = ag::tconv1d(h, p.at(detail::idx("dec", j, ".w")), p.at(detail::idx("dec", j, ".b")), cfg.stride);
    if (j + 1 < n) {
      h = ag::prelu(h, p.at(detail::idx("dec", j, ".prelu")));
      h = ag::concat_channels(h, skips[n - 2 - j]);
    } else {
      h = ag::tanh(h);
    }
    if (trace) trace->decoder.push_back(detail::per_example(h.shape()));
  }
  if (cfg.residual_skip) h = ag::add(h, noisy);
  if (trace) trace->output = detail::per_example(h.shape());
  return h;
}

template <class T>
DiscriminatorParams<T> build_discriminator(const SeganConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  DiscriminatorParams<T> p;
  const std::size_t n = cfg.layers(), w = cfg.filter_width;
  std::size_t cin = 2;  // candidate stacked with the condition
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cout = cfg.enc_channels[i];
    p.add(detail::idx("conv", i, ".w"), detail::truncated_normal<T>({w, cin, cout}, cfg.init_std, rng));
    p.add(detail::idx("conv", i, ".b"), ag::Tensor<T>::zeros({cout}, true));
    p.add(detail::idx("vbn", i, ".gain"), ag::Tensor<T>::full({cout}, T(1), true));
    p.add(detail::idx("vbn", i, ".bias"), ag::Tensor<T>::zeros({cout}, true));
    cin = cout;
  }
  p.add("out_conv.w", detail::truncated_normal<T>({1, cin, 1}, cfg.init_std, rng));
  p.add("out_conv.b", ag::Tensor<T>::zeros({1}, true));
  p.add("fc.w", detail::truncated_normal<T>({cfg.bottleneck_len(), 1}, cfg.init_std, rng));
  p.add("fc.b", ag::Tensor<T>::zeros({1}, true));
  return p;
}

namespace detail {

template <class T>
ag::Tensor<T> disc_conv_stack(const DiscriminatorParams<T>& p, ag::Tensor<T> h, const SeganConfig& cfg,
                              VbnReference<T>* collect, const VbnReference<T>* ref) {
  const T alpha = static_cast<T>(cfg.d_alpha);
  for (std::size_t i = 0; i < cfg.layers(); ++i) {
    h = ag::conv1d(h, p.at(idx("conv", i, ".w")), p.at(idx("conv", i, ".b")), cfg.stride);
    const auto& gain = p.at(idx("vbn", i, ".gain"));
    const auto& bias = p.at(idx("vbn", i, ".bias"));
    if (collect) {
      // Reference pass: normalize the reference batch by its own moments.
      collect->push_back(ag::batch_moments(h));
      h = ag::virtual_batch_norm(h, collect->back(), gain, bias, T(0), static_cast<T>(cfg.vbn_eps));
    } else {
      const auto& stats = (*ref)[i];
      const T w = cfg.vbn_include_current ? T(1) / static_cast<T>(stats.batch_size + 1) : T(0);
      h = ag::virtual_batch_norm(h, stats, gain, bias, w, static_cast<T>(cfg.vbn_eps));
    }
    h = ag::leaky_relu(h, alpha);
  }
  return h;
}

template <class T>
ag::Tensor<T> stack_pair(const ag::Tensor<T>& candidate, const ag::Tensor<T>& condition, const SeganConfig& cfg) {
  const ag::Shape want{candidate.rank() == 3 ? candidate.dim(0) : 0, cfg.window_len, 1};
  if (candidate.shape() != want || condition.shape() != want)
    throw ArgumentError("discriminator: inputs must both be [batch x " + std::to_string(cfg.window_len) + " x 1]");
  return ag::concat_channels(candidate, condition);
}

}  // namespace detail

/// Per-layer moments of a fixed reference batch of (candidate, condition) pairs.
template <class T>
VbnReference<T> compute_vbn_reference(const DiscriminatorParams<T>& p, const ag::Tensor<T>& candidate,
                                      const ag::Tensor<T>& condition, const SeganConfig& cfg) {
  ag::NoGradGuard no_grad;
  VbnReference<T> ref;
  detail::disc_conv_stack(p, detail::stack_pair(candidate, condition, cfg), cfg, &ref, static_cast<const VbnReference<T>*>(nullptr));
  return ref;
}

/// Real-valued score per example, shape [batch x 1]; no output nonlinearity.
template <class T>
ag::Tensor<T> discriminator_forward(const DiscriminatorParams<T>& p, const ag::Tensor<T>& candidate,
                                    const ag::Tensor<T>& condition, const VbnReference<T>& vbn_ref,
                                    const SeganConfig& cfg) {
  if (vbn_ref.size() != cfg.layers()) throw ArgumentError("discriminator_forward: missing VBN reference statistics");
  auto h = detail::disc_conv_stack(p, detail::stack_pair(candidate, condition, cfg), cfg, static_cast<VbnReference<T>*>(nullptr), &vbn_ref);
  h = ag::conv1d(h, p.at("out_conv.w"), p.at("out_conv.b"), 1);
  return ag::dense(h, p.at("fc.w"), p.at("fc.b"), candidate.dim(0));
}

}  // namespace wr
