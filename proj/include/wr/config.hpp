#pragma once

// Flat run configuration: `key = value` lines with `#` comments. Every key has a
// parser, a printer and the list of subcommands that read it.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "wr/dsp_enhance.hpp"
#include "wr/error.hpp"
#include "wr/metrics.hpp"
#include "wr/pipeline.hpp"
#include "wr/segan.hpp"
#include "wr/trainer.hpp"

namespace wr {

struct RunConfig {
  SeganConfig model;
  EnhanceParams dsp;
  std::string chain = "wiener,hrnr";

  // preparation
  std::size_t chunk_hop = 0;  // 0: window_len / 2
  std::size_t max_lag = 1600;
  double trim_db = -50.0;
  double trim_ms = 200.0;

  // paths
  std::filesystem::path manifest;
  std::filesystem::path eval_manifest;
  std::filesystem::path cache_dir = "cache";
  std::filesystem::path checkpoint_dir = "checkpoints";
  std::filesystem::path checkpoint;
  std::filesystem::path input_dir;
  std::filesystem::path output_dir;
  std::filesystem::path report_dir = "reports";
  std::string systems;  // name=dir,name=dir
  std::string pre_enhance_suffix = "_pre";
  std::filesystem::path pre_enhance_dir;

  // run
  std::uint64_t seed = 1234;
  std::string latent = "per_chunk";
  std::size_t chunks_per_batch = 8;

  EnhancerChain enhancer_chain() const { return parse_chain(chain, dsp); }

  PrepareOptions prepare_options() const {
    PrepareOptions o;
    o.window_len = model.window_len;
    o.hop_len = chunk_hop ? chunk_hop : model.window_len / 2;
    o.max_lag = max_lag;
    o.trim.energy_threshold_db = trim_db;
    o.trim.min_silence_ms = trim_ms;
    o.chain = enhancer_chain();
    return o;
  }

  EnhanceOptions enhance_options() const {
    EnhanceOptions o;
    o.latent = latent == "fixed" ? LatentPolicy::fixed : LatentPolicy::per_chunk;
    o.seed = seed;
    o.chunks_per_batch = chunks_per_batch;
    return o;
  }

  std::filesystem::path resolved_checkpoint() const {
    return checkpoint.empty() ? checkpoint_dir / "latest.wrckpt" : checkpoint;
  }

  // Commands that never build a network only need a usable window length.
  void validate(bool with_model = true) const {
    if (with_model)
      model.validate();
    else if (model.window_len == 0)
      throw ArgumentError("window_len must be positive");
    dsp.validate();
    enhancer_chain();
    if (latent != "per_chunk" && latent != "fixed") throw ArgumentError("latent must be per_chunk or fixed");
    if (chunks_per_batch == 0) throw ArgumentError("chunks_per_batch must be positive");
    if (!(trim_ms > 0.0)) throw ArgumentError("trim_ms must be positive");
    if (max_lag == 0) throw ArgumentError("max_lag must be positive");
  }
};

struct ConfigKey {
  std::string name;
  std::string help;
  std::vector<std::string> commands;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

namespace detail {

inline std::string trimmed(std::string s) {
  s.erase(0, s.find_first_not_of(" \t\r"));
  s.erase(s.find_last_not_of(" \t\r") + 1);
  return s;
}

inline std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw ArgumentError(key + ": expected a nonnegative integer, got '" + v + "'");
  return out;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw ArgumentError(key + ": expected a nonnegative integer, got '" + v + "'");
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(out))
    throw ArgumentError(key + ": expected a real number, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ArgumentError(key + ": expected true or false, got '" + v + "'");
}

inline std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_size(key, trimmed(item)));
  if (out.empty()) throw ArgumentError(key + ": expected a comma-separated list");
  return out;
}

// Shortest text that parses back to the same double.
inline std::string real_str(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string bool_str(bool v) { return v ? "true" : "false"; }

}  // namespace detail

/// The complete key table, in print order.
inline const std::vector<ConfigKey>& config_keys() {
  using namespace detail;
  static const std::vector<std::string> model_cmds{"prepare", "train", "enhance"};
  static const std::vector<std::string> arch_cmds{"train", "enhance"};
  static const std::vector<std::string> train_cmds{"train"};
  static const std::vector<std::string> dsp_cmds{"prepare", "pre-enhance"};

  auto size_key = [](std::string name, std::string help, std::vector<std::string> cmds, auto member) {
    return ConfigKey{name, std::move(help), std::move(cmds),
                     [name, member](RunConfig& c, const std::string& v) { member(c) = parse_size(name, v); },
                     [member](const RunConfig& c) { return std::to_string(member(c)); }};
  };
  auto real_key = [](std::string name, std::string help, std::vector<std::string> cmds, auto member) {
    return ConfigKey{name, std::move(help), std::move(cmds),
                     [name, member](RunConfig& c, const std::string& v) { member(c) = parse_real(name, v); },
                     [member](const RunConfig& c) { return real_str(member(c)); }};
  };
  auto bool_key = [](std::string name, std::string help, std::vector<std::string> cmds, auto member) {
    return ConfigKey{name, std::move(help), std::move(cmds),
                     [name, member](RunConfig& c, const std::string& v) { member(c) = parse_bool(name, v); },
                     [member](const RunConfig& c) { return bool_str(member(c)); }};
  };
  auto str_key = [](std::string name, std::string help, std::vector<std::string> cmds, auto member) {
    return ConfigKey{name, std::move(help), std::move(cmds),
                     [member](RunConfig& c, const std::string& v) { member(c) = v; },
                     [member](const RunConfig& c) { return std::string(member(c)); }};
  };
  auto path_key = [](std::string name, std::string help, std::vector<std::string> cmds, auto member) {
    return ConfigKey{name, std::move(help), std::move(cmds),
                     [member](RunConfig& c, const std::string& v) { member(c) = std::filesystem::path(v); },
                     [member](const RunConfig& c) { return member(c).string(); }};
  };

  static const std::vector<ConfigKey> keys = [&] {
    std::vector<ConfigKey> k;
    // model
    k.push_back(size_key("window_len", "samples per chunk; must be divisible by stride^layers", model_cmds,
                         [](auto& c) -> auto& { return c.model.window_len; }));
    k.push_back(ConfigKey{
        "enc_channels", "comma-separated encoder output channels, one per layer", arch_cmds,
        [](RunConfig& c, const std::string& v) { c.model.enc_channels = parse_size_list("enc_channels", v); },
        [](const RunConfig& c) {
          std::string s;
          for (auto v : c.model.enc_channels) s += (s.empty() ? "" : ",") + std::to_string(v);
          return s;
        }});
    k.push_back(size_key("filter_width", "convolution width (odd)", arch_cmds,
                         [](auto& c) -> auto& { return c.model.filter_width; }));
    k.push_back(size_key("stride", "convolution stride", arch_cmds,
                         [](auto& c) -> auto& { return c.model.stride; }));
    k.push_back(size_key("latent_channels", "channels of z at the bottleneck; 0 = last encoder width", arch_cmds,
                         [](auto& c) -> auto& { return c.model.latent_channels; }));
    k.push_back(real_key("d_alpha", "discriminator LeakyReLU slope", train_cmds,
                         [](auto& c) -> auto& { return c.model.d_alpha; }));
    k.push_back(bool_key("residual_skip", "add the input waveform to the generator output", arch_cmds,
                         [](auto& c) -> auto& { return c.model.residual_skip; }));
    k.push_back(real_key("init_std", "std of the truncated-normal weight init", train_cmds,
                         [](auto& c) -> auto& { return c.model.init_std; }));
    k.push_back(real_key("prelu_init", "initial PReLU slope", train_cmds,
                         [](auto& c) -> auto& { return c.model.prelu_init; }));
    k.push_back(real_key("vbn_eps", "virtual batch norm epsilon", train_cmds,
                         [](auto& c) -> auto& { return c.model.vbn_eps; }));
    k.push_back(bool_key("vbn_include_current", "blend each example into the VBN reference statistics", train_cmds,
                         [](auto& c) -> auto& { return c.model.vbn_include_current; }));
    k.push_back(size_key("vbn_ref_batch", "VBN reference batch size; 0 = batch_size", train_cmds,
                         [](auto& c) -> auto& { return c.model.vbn_ref_batch; }));
    // training
    k.push_back(real_key("lambda_l1", "weight of the L1 term in the generator loss", train_cmds,
                         [](auto& c) -> auto& { return c.model.lambda_l1; }));
    k.push_back(size_key("J", "generator iterations per step", train_cmds,
                         [](auto& c) -> auto& { return c.model.J; }));
    k.push_back(real_key("P_J", "share of generator iterations using the pre-enhanced reference", train_cmds,
                         [](auto& c) -> auto& { return c.model.P_J; }));
    k.push_back(size_key("warmup_epochs", "epochs during which the pre-enhanced reference is used", train_cmds,
                         [](auto& c) -> auto& { return c.model.warmup_epochs; }));
    k.push_back(size_key("total_epochs", "training epochs", train_cmds,
                         [](auto& c) -> auto& { return c.model.total_epochs; }));
    k.push_back(size_key("batch_size", "chunks per batch", train_cmds,
                         [](auto& c) -> auto& { return c.model.batch_size; }));
    k.push_back(real_key("learning_rate", "RMSprop learning rate", train_cmds,
                         [](auto& c) -> auto& { return c.model.learning_rate; }));
    k.push_back(size_key("d_iters_K", "discriminator iterations per step", train_cmds,
                         [](auto& c) -> auto& { return c.model.d_iters_K; }));
    k.push_back(bool_key("stochastic_schedule", "draw the reference per iteration with probability P_J", train_cmds,
                         [](auto& c) -> auto& { return c.model.stochastic_schedule; }));
    k.push_back(size_key("max_steps_per_epoch", "cap on steps per epoch; 0 = chunks / batch_size", train_cmds,
                         [](auto& c) -> auto& { return c.model.max_steps_per_epoch; }));
    // preparation and pre-enhancement
    k.push_back(str_key("chain", "pre-enhancement stages, comma-separated from {wiener, hrnr}", dsp_cmds,
                        [](auto& c) -> auto& { return c.chain; }));
    k.push_back(size_key("chunk_hop", "training chunk hop in samples; 0 = window_len / 2", {"prepare"},
                         [](auto& c) -> auto& { return c.chunk_hop; }));
    k.push_back(size_key("max_lag", "largest delay searched when aligning pairs, samples", {"prepare"},
                         [](auto& c) -> auto& { return c.max_lag; }));
    k.push_back(real_key("trim_db", "silence threshold, dBFS frame energy", {"prepare"},
                         [](auto& c) -> auto& { return c.trim_db; }));
    k.push_back(real_key("trim_ms", "leading/trailing silence longer than this is trimmed", {"prepare"},
                         [](auto& c) -> auto& { return c.trim_ms; }));
    k.push_back(real_key("dsp_frame_ms", "enhancer STFT frame length, ms", dsp_cmds,
                         [](auto& c) -> auto& { return c.dsp.frame_ms; }));
    k.push_back(real_key("alpha_dd", "decision-directed smoothing factor", dsp_cmds,
                         [](auto& c) -> auto& { return c.dsp.alpha_dd; }));
    k.push_back(real_key("gain_floor_db", "lowest enhancer gain, dB", dsp_cmds,
                         [](auto& c) -> auto& { return c.dsp.gain_floor_db; }));
    k.push_back(size_key("noise_init_frames", "leading frames used for the initial noise estimate", dsp_cmds,
                         [](auto& c) -> auto& { return c.dsp.noise_init_frames; }));
    k.push_back(real_key("noise_smoothing", "recursive noise PSD smoothing in non-speech frames", dsp_cmds,
                         [](auto& c) -> auto& { return c.dsp.noise_smoothing; }));
    k.push_back(real_key("vad_threshold", "mean log-likelihood ratio below which a frame counts as noise", dsp_cmds,
                         [](auto& c) -> auto& { return c.dsp.vad_threshold; }));
    k.push_back(real_key("hrnr_rho", "blend of step-1 and regenerated spectra", dsp_cmds,
                         [](auto& c) -> auto& { return c.dsp.hrnr_rho; }));
    // paths
    k.push_back(path_key("manifest", "clean<TAB>degraded pair list", {"prepare", "pre-enhance", "evaluate"},
                         [](auto& c) -> auto& { return c.manifest; }));
    k.push_back(path_key("eval_manifest", "pair list scored by evaluate; empty = manifest", {"evaluate"},
                         [](auto& c) -> auto& { return c.eval_manifest; }));
    k.push_back(path_key("cache_dir", "prepared chunk caches", {"prepare", "train"},
                         [](auto& c) -> auto& { return c.cache_dir; }));
    k.push_back(path_key("checkpoint_dir", "training checkpoints and loss log", {"train", "enhance"},
                         [](auto& c) -> auto& { return c.checkpoint_dir; }));
    k.push_back(path_key("checkpoint", "checkpoint used by enhance; empty = checkpoint_dir/latest.wrckpt",
                         {"enhance"}, [](auto& c) -> auto& { return c.checkpoint; }));
    k.push_back(path_key("input_dir", "directory of 16 kHz WAVs to enhance", {"enhance"},
                         [](auto& c) -> auto& { return c.input_dir; }));
    k.push_back(path_key("output_dir", "where enhanced WAVs are written", {"enhance"},
                         [](auto& c) -> auto& { return c.output_dir; }));
    k.push_back(path_key("report_dir", "evaluation CSVs and table", {"evaluate"},
                         [](auto& c) -> auto& { return c.report_dir; }));
    k.push_back(str_key("systems", "systems to score as name=dir,name=dir; name= with no dir scores the degraded files",
                        {"evaluate"}, [](auto& c) -> auto& { return c.systems; }));
    k.push_back(str_key("pre_enhance_suffix", "appended to the file stem when writing beside the originals", {"pre-enhance"},
                        [](auto& c) -> auto& { return c.pre_enhance_suffix; }));
    k.push_back(path_key("pre_enhance_dir", "output directory for pre-enhance (original file names); empty = beside the originals",
                         {"pre-enhance"}, [](auto& c) -> auto& { return c.pre_enhance_dir; }));
    // run
    k.push_back(ConfigKey{"seed", "RNG seed; falls back to WR_SEED, then 1234", {"train", "enhance"},
                          [](RunConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); },
                          [](const RunConfig& c) { return std::to_string(c.seed); }});
    k.push_back(str_key("latent", "z at inference: per_chunk or fixed", {"enhance"},
                        [](auto& c) -> auto& { return c.latent; }));
    k.push_back(size_key("chunks_per_batch", "chunks per generator call at inference", {"enhance"},
                         [](auto& c) -> auto& { return c.chunks_per_batch; }));
    return k;
  }();
  return keys;
}

inline const ConfigKey& config_key(const std::string& name) {
  for (const auto& k : config_keys())
    if (k.name == name) return k;
  throw ArgumentError("unknown config key '" + name + "'");
}

/// Set one key; unknown keys and malformed values throw ArgumentError.
inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  config_key(key).set(cfg, value);
}

/// Parse `key = value` text. Returns the keys that were set, in order.
inline std::vector<std::string> parse_config_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
  std::vector<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trimmed(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const auto where = origin + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw ArgumentError(where + "expected key = value");
    const auto key = detail::trimmed(line.substr(0, eq));
    try {
      set_config_value(cfg, key, detail::trimmed(line.substr(eq + 1)));
    } catch (const ArgumentError& e) {
      throw ArgumentError(where + e.what());
    }
    seen.push_back(key);
  }
  return seen;
}

inline std::vector<std::string> parse_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(cfg, ss.str(), path.string());
}

/// Every key as `key = value`, loadable by parse_config_text.
inline std::string dump_config(const RunConfig& cfg) {
  std::ostringstream o;
  for (const auto& k : config_keys()) o << k.name << " = " << k.get(cfg) << '\n';
  return o.str();
}

/// "a=dir1,b=dir2" into named system directories.
inline std::vector<SystemDir> parse_systems(const std::string& spec) {
  std::vector<SystemDir> out;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = detail::trimmed(item);
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ArgumentError("systems: expected name=dir, got '" + item + "'");
    out.push_back({item.substr(0, eq), item.substr(eq + 1)});
  }
  if (out.empty()) throw ArgumentError("systems: no systems given");
  return out;
}

}  // namespace wr
