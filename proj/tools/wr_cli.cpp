// wr: prepare / pre-enhance / train / enhance / evaluate / print-config.
// Exit codes: 0 ok, 1 usage, 2 data, 3 numeric failure.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "wr/audio_io.hpp"
#include "wr/checkpoint.hpp"
#include "wr/config.hpp"
#include "wr/dataset.hpp"
#include "wr/dsp_enhance.hpp"
#include "wr/metrics.hpp"
#include "wr/parallel.hpp"
#include "wr/pipeline.hpp"
#include "wr/trainer.hpp"

namespace fs = std::filesystem;
using namespace wr;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct CommonFlags {
  std::string config_file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> keys;  // --<key> value
  std::size_t jobs = 1;
  bool strict = false;
  bool resume = false;
};

bool reads_key(const ConfigKey& k, const std::string& cmd) {
  return cmd == "print-config" || std::find(k.commands.begin(), k.commands.end(), cmd) != k.commands.end();
}

CLI::App* add_command(CLI::App& app, const std::string& name, const std::string& about, CommonFlags& f) {
  auto* sub = app.add_subcommand(name, about);
  sub->add_option("-c,--config", f.config_file, "key = value config file; # starts a comment");
  sub->add_option("--set", f.sets, "override any key as key=value (repeatable)");
  const RunConfig defaults;
  for (const auto& k : config_keys()) {
    if (!reads_key(k, name)) continue;
    sub->add_option_function<std::string>("--" + k.name, [&f, n = k.name](const std::string& v) { f.keys[n] = v; },
                                          k.help + " [default: " + k.get(defaults) + "]")
        ->group("Config keys")
        ->type_name("VALUE");
  }
  return sub;
}

RunConfig resolve_config(const CommonFlags& f, const std::string& cmd) {
  RunConfig cfg;
  std::vector<std::string> set_keys;
  if (!f.config_file.empty()) set_keys = parse_config_file(cfg, f.config_file);
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ArgumentError("--set expects key=value, got '" + s + "'");
    const auto key = detail::trimmed(s.substr(0, eq));
    set_config_value(cfg, key, detail::trimmed(s.substr(eq + 1)));
    set_keys.push_back(key);
  }
  for (const auto& [k, v] : f.keys) {
    set_config_value(cfg, k, v);
    set_keys.push_back(k);
  }
  if (std::find(set_keys.begin(), set_keys.end(), "seed") == set_keys.end()) {
    if (const char* env = std::getenv("WR_SEED"); env && *env) {
      try {
        set_config_value(cfg, "seed", env);
      } catch (const ArgumentError& e) {
        throw ArgumentError(std::string("WR_SEED: ") + e.what());
      }
    }
  }
  cfg.validate(reads_key(config_key("enc_channels"), cmd));
  return cfg;
}

std::size_t effective_jobs(std::size_t jobs) {
  return jobs ? jobs : std::max(1u, std::thread::hardware_concurrency());
}

const fs::path& require_path(const fs::path& p, const char* key) {
  if (p.empty()) throw ArgumentError(std::string("missing required key '") + key + "'");
  return p;
}

void require_exists(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw IoError(std::string(what) + " not found: " + p.string());
}

int cmd_prepare(const RunConfig& cfg, const CommonFlags& f) {
  const auto& manifest_path = require_path(cfg.manifest, "manifest");
  require_exists(manifest_path, "manifest");
  const auto manifest = read_manifest(manifest_path);
  const auto opt = cfg.prepare_options();
  const auto fp = prepare_fingerprint(manifest, opt);
  if (cache_up_to_date(cfg.cache_dir, fp)) {
    std::cout << "cache " << cfg.cache_dir.string() << " is up to date (" << fp << "); nothing to do\n";
    return kOk;
  }
  const auto res = prepare_corpus(manifest, opt, effective_jobs(f.jobs), f.strict);
  save_training_data(res.data, cfg.cache_dir);
  write_fingerprint(cfg.cache_dir, fp);
  std::cout << "pairs " << res.summary.pairs << ", used " << res.summary.used << ", rejected "
            << res.summary.rejected.size() << ", chunks " << res.summary.chunks << " (window " << opt.window_len
            << ", hop " << opt.hop_len << ")\n";
  return kOk;
}

int cmd_pre_enhance(const RunConfig& cfg, const CommonFlags& f) {
  const auto& manifest_path = require_path(cfg.manifest, "manifest");
  require_exists(manifest_path, "manifest");
  if (cfg.pre_enhance_dir.empty() && cfg.pre_enhance_suffix.empty())
    throw ArgumentError("pre_enhance_suffix is empty and no pre_enhance_dir is set; refusing to overwrite inputs");
  const auto manifest = read_manifest(manifest_path);
  const auto chain = cfg.enhancer_chain();
  if (!cfg.pre_enhance_dir.empty()) fs::create_directories(cfg.pre_enhance_dir);
  std::vector<std::string> errors(manifest.size());
  parallel_for(manifest.size(), effective_jobs(f.jobs), [&](std::size_t i) {
    const auto& in = manifest[i].degraded;
    // Beside the originals the suffix avoids overwriting; a separate dir keeps names so it can be evaluated.
    const auto out = cfg.pre_enhance_dir.empty()
                         ? in.parent_path() / (in.stem().string() + cfg.pre_enhance_suffix + ".wav")
                         : cfg.pre_enhance_dir / in.filename();
    try {
      write_wav(pre_enhance(read_wav(in), chain), out);
    } catch (const Error& e) {
      errors[i] = in.string() + ": " + e.what();
    }
  });
  std::size_t failed = 0;
  for (const auto& e : errors) {
    if (e.empty()) continue;
    if (f.strict) throw DataError("pre-enhance: " + e);
    warn("pre-enhance: skipping " + e);
    ++failed;
  }
  std::cout << "pre-enhanced " << manifest.size() - failed << " of " << manifest.size() << " files with "
            << chain_to_string(chain) << '\n';
  return kOk;
}

int cmd_train(const RunConfig& cfg, const CommonFlags& f) {
  require_exists(cfg.cache_dir, "cache_dir");
  const auto data = load_training_data(cfg.cache_dir);
  data.validate(cfg.model.window_len);
  TrainOptions opt;
  opt.output_dir = cfg.checkpoint_dir;
  opt.seed = cfg.seed;
  if (f.resume) {
    opt.resume_from = cfg.checkpoint_dir / "latest.wrckpt";
    require_exists(opt.resume_from, "checkpoint to resume from");
  }
  const std::size_t steps = steps_per_epoch(cfg.model, data.size());
  StepLosses sum;
  std::size_t in_epoch = 0;
  opt.on_step = [&](const LossLogRow& r) {
    sum.d_loss += r.losses.d_loss;
    sum.g_adv += r.losses.g_adv;
    sum.g_l1 += r.losses.g_l1;
    sum.ref_pre_enhanced_frac += r.losses.ref_pre_enhanced_frac;
    if (++in_epoch < steps) return;
    const double n = static_cast<double>(in_epoch);
    std::cout << "epoch " << r.epoch + 1 << '/' << cfg.model.total_epochs << "  step " << r.step << "  d_loss "
              << sum.d_loss / n << "  g_adv " << sum.g_adv / n << "  g_l1 " << sum.g_l1 / n << "  ref_pre "
              << sum.ref_pre_enhanced_frac / n << std::endl;
    sum = {};
    in_epoch = 0;
  };
  std::cout << "chunks " << data.size() << ", steps/epoch " << steps << ", seed " << cfg.seed
            << (f.resume ? ", resuming from " + opt.resume_from.string() : std::string()) << std::endl;
  const auto res = train<float>(data, cfg.model, opt);
  std::cout << "generator parameters " << res.state.gen.parameter_count() << ", discriminator parameters "
            << res.state.disc.parameter_count() << "\nfinal checkpoint "
            << (res.final_checkpoint.empty() ? std::string("(none; already at total_epochs)") : res.final_checkpoint.string())
            << '\n';
  return kOk;
}

void check_checkpoint_matches(const Checkpoint& c, const SeganConfig& m, const fs::path& path) {
  auto expect = [&](const char* key, const std::string& want) {
    auto it = c.meta.find(key);
    if (it != c.meta.end() && it->second != want)
      throw ArgumentError(path.string() + " was trained with " + key + "=" + it->second + " but the config has " + want);
  };
  expect("window_len", std::to_string(m.window_len));
  std::string ch;
  for (auto v : m.enc_channels) ch += (ch.empty() ? "" : ",") + std::to_string(v);
  expect("enc_channels", ch);
  expect("residual_skip", m.residual_skip ? "1" : "0");
}

int cmd_enhance(const RunConfig& cfg, const CommonFlags& f) {
  const auto& in_dir = require_path(cfg.input_dir, "input_dir");
  const auto& out_dir = require_path(cfg.output_dir, "output_dir");
  require_exists(in_dir, "input_dir");
  const auto ckpt_path = cfg.resolved_checkpoint();
  require_exists(ckpt_path, "checkpoint");
  if (fs::exists(out_dir) && fs::equivalent(in_dir, out_dir)) throw ArgumentError("output_dir must differ from input_dir");
  const auto ckpt = Checkpoint::load(ckpt_path);
  check_checkpoint_matches(ckpt, cfg.model, ckpt_path);
  const auto gen = load_generator<float>(ckpt, cfg.model);

  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(in_dir))
    if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no .wav files in " + in_dir.string());
  fs::create_directories(out_dir);

  const auto opt = cfg.enhance_options();
  std::vector<std::string> errors(files.size());
  parallel_for(files.size(), effective_jobs(f.jobs), [&](std::size_t i) {
    try {
      write_wav(enhance<float>(read_wav(files[i]), gen, cfg.model, opt), out_dir / files[i].filename());
    } catch (const DataError& e) {
      errors[i] = files[i].string() + ": " + e.what();
    } catch (const FormatError& e) {
      errors[i] = files[i].string() + ": " + e.what();
    } catch (const UnsupportedError& e) {
      errors[i] = files[i].string() + ": " + e.what();
    }
  });
  std::size_t failed = 0;
  for (const auto& e : errors)
    if (!e.empty()) {
      std::cerr << "error: " << e << '\n';
      ++failed;
    }
  std::cout << "enhanced " << files.size() - failed << " of " << files.size() << " files into " << out_dir.string() << '\n';
  return failed ? kData : kOk;
}

int cmd_evaluate(const RunConfig& cfg, const CommonFlags& f) {
  const auto manifest_path = cfg.eval_manifest.empty() ? cfg.manifest : cfg.eval_manifest;
  require_path(manifest_path, "eval_manifest or manifest");
  require_exists(manifest_path, "manifest");
  if (cfg.systems.empty()) throw ArgumentError("missing required key 'systems'");
  const auto systems = parse_systems(cfg.systems);
  for (const auto& s : systems)
    if (!s.dir.empty()) require_exists(s.dir, ("system directory for " + s.name).c_str());
  const auto reports = evaluate_corpus(read_manifest(manifest_path), systems, effective_jobs(f.jobs));
  fs::create_directories(cfg.report_dir);
  for (const auto& r : reports) {
    std::ofstream(cfg.report_dir / (r.system + ".csv")) << report_csv(r);
    if (r.skipped) std::cerr << "warning: " << r.system << ": " << r.skipped << " rows skipped\n";
  }
  const auto table = report_table(reports);
  std::ofstream(cfg.report_dir / "table.txt") << table;
  std::cout << table;
  return kOk;
}

int run(const std::string& cmd, const CommonFlags& f) {
  const auto cfg = resolve_config(f, cmd);
  if (cmd == "print-config") {
    std::cout << dump_config(cfg);
    return kOk;
  }
  if (cmd == "prepare") return cmd_prepare(cfg, f);
  if (cmd == "pre-enhance") return cmd_pre_enhance(cfg, f);
  if (cmd == "train") return cmd_train(cfg, f);
  if (cmd == "enhance") return cmd_enhance(cfg, f);
  return cmd_evaluate(cfg, f);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GAN speech enhancement with a residual skip and directed-reference training"};
  app.name("wr");
  app.require_subcommand(1);
  app.footer("Exit codes: 0 ok, 1 usage error, 2 data error, 3 non-finite loss or value.\n"
             "Config precedence: --<key> and --set flags, then the config file, then defaults; "
             "seed falls back to $WR_SEED.");
  CommonFlags f;
  std::vector<std::pair<std::string, CLI::App*>> cmds;
  cmds.emplace_back("prepare", add_command(app, "prepare", "align, trim, pre-enhance and chunk a manifest into the training cache", f));
  cmds.emplace_back("pre-enhance", add_command(app, "pre-enhance", "run the classical enhancer chain over the degraded files of a manifest", f));
  cmds.emplace_back("train", add_command(app, "train", "train generator and discriminator from the prepared cache", f));
  cmds.emplace_back("enhance", add_command(app, "enhance", "enhance every WAV in input_dir with a trained generator", f));
  cmds.emplace_back("evaluate", add_command(app, "evaluate", "score system output directories (SSNR, STOI, LSD)", f));
  cmds.emplace_back("print-config", add_command(app, "print-config", "print the fully resolved configuration", f));
  for (const auto& [name, sub] : cmds) {
    if (name == "prepare" || name == "pre-enhance" || name == "evaluate" || name == "enhance")
      sub->add_option("-j,--jobs", f.jobs, "worker threads; 0 = all cores")->capture_default_str();
    if (name == "prepare" || name == "pre-enhance") sub->add_flag("--strict", f.strict, "fail on the first bad pair instead of skipping it");
    if (name == "train") sub->add_flag("--resume", f.resume, "continue from checkpoint_dir/latest.wrckpt");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  std::string cmd;
  for (const auto& [name, sub] : cmds)
    if (sub->parsed()) cmd = name;
  try {
    return run(cmd, f);
  } catch (const ArgumentError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
}
