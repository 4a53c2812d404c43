// deltadiff command-line tool: train, infer, eval, trajectory, ablate.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "deltadiff/checkpoint.hpp"
#include "deltadiff/config.hpp"
#include "deltadiff/data.hpp"
#include "deltadiff/diffusion.hpp"
#include "deltadiff/image_io.hpp"
#include "deltadiff/metrics.hpp"
#include "deltadiff/trainer.hpp"

namespace fs = std::filesystem;
using namespace deltadiff;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

/// Thrown for problems the user can fix on the command line.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// config plumbing: defaults < config file < flags

struct ConfigFlags {
  std::string config_path;
  std::map<std::string, std::string> values;
  std::vector<std::pair<std::string, CLI::Option*>> options;
};

std::string flag_name(const std::string& key) {
  std::string f = "--" + key;
  for (char& ch : f)
    if (ch == '_') ch = '-';
  return f;
}

void add_config_flags(CLI::App* cmd, ConfigFlags& flags, const std::vector<std::string>& keys) {
  cmd->add_option("--config", flags.config_path, "key = value config file; flags override its values");
  for (const auto& key : keys) {
    std::string desc;
    for (const auto& [k, d] : config_keys())
      if (k == key) desc = d;
    flags.options.emplace_back(key, cmd->add_option(flag_name(key), flags.values[key], desc));
  }
}

RunConfig resolve_config(const ConfigFlags& flags, RunConfig cfg) {
  if (!flags.config_path.empty()) {
    if (!fs::exists(flags.config_path)) throw UsageError("config file not found: " + flags.config_path);
    for (const auto& [k, v] : load_kv_file(flags.config_path)) apply_setting(cfg, k, v);
  }
  for (const auto& [key, opt] : flags.options)
    if (opt->count() > 0) apply_setting(cfg, key, flags.values.at(key));
  validate(cfg);
  return cfg;
}

void echo_config(const RunConfig& cfg, std::ostream& os) {
  os << "# effective config\n";
  std::istringstream lines(describe(cfg));
  for (std::string line; std::getline(lines, line);) os << "#   " << line << '\n';
  os.flush();
}

const std::vector<std::string> kScheduleKeys = {"steps", "eta_start", "eta_end", "curvature_p"};
const std::vector<std::string> kDenoiserKeys = {"base_channels", "depth", "time_embed_dim", "image_channels"};
const std::vector<std::string> kTrainKeys = {"lr",         "batch_size", "max_steps",  "seed",      "checkpoint_every",
                                             "log_every",  "adam_beta1", "adam_beta2", "adam_eps",  "clip_grad",
                                             "clip_threshold", "patch_size", "scale",  "data",      "toy",
                                             "toy_size",   "val_count",  "out"};

std::vector<std::string> concat(std::initializer_list<std::vector<std::string>> parts) {
  std::vector<std::string> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

// ---------------------------------------------------------------------------
// shared helpers

/// Held-out toy split: generated from a seed disjoint from the training pool.
std::vector<LrHrPair> toy_heldout(const RunConfig& cfg) {
  std::vector<LrHrPair> pairs;
  if (cfg.val_count < 1) return pairs;
  for (const auto& img : toy_dataset(cfg.val_count, cfg.data.patch_size, cfg.train.seed ^ 0x9e3779b97f4a7c15ULL))
    pairs.push_back(make_pair(img, cfg.data.scale));
  return pairs;
}

struct TrainingData {
  std::vector<ImagePlane> pool;
  std::vector<LrHrPair> val;
};

TrainingData load_training_data(const RunConfig& cfg) {
  TrainingData d;
  if (cfg.toy_count > 0) {
    d.pool = toy_dataset(cfg.toy_count, cfg.toy_size, cfg.train.seed);
    d.val = toy_heldout(cfg);
    return d;
  }
  if (cfg.data.root.empty()) throw UsageError("no training data: pass --data <dir> or --toy <n>");
  if (!fs::is_directory(cfg.data.root)) throw UsageError("data directory not found: " + cfg.data.root.string());
  const auto files = list_png_files(cfg.data.root);
  if (files.empty()) throw UsageError("no images: " + cfg.data.root.string() + " contains no PNG files");
  std::vector<ImagePlane> images;
  for (const auto& f : files) {
    ImagePlane img = load_image(f);
    if (img.channels() != cfg.denoiser.image_channels) {
      throw ConfigError("image_channels", f.string() + " has " + std::to_string(img.channels()) +
                                              " channel(s), image_channels = " +
                                              std::to_string(cfg.denoiser.image_channels));
    }
    if (img.height() < cfg.data.patch_size || img.width() < cfg.data.patch_size) {
      throw ConfigError("patch_size", f.string() + " (" + img.shape_string() + ") is smaller than patch_size " +
                                          std::to_string(cfg.data.patch_size));
    }
    images.push_back(std::move(img));
  }
  // hold out the last val_count files when there are enough to spare
  const std::size_t n_val = images.size() > static_cast<std::size_t>(cfg.val_count)
                                ? static_cast<std::size_t>(cfg.val_count)
                                : 0;
  for (std::size_t i = images.size() - n_val; i < images.size(); ++i)
    d.val.push_back(make_pair(normalize_size(images[i], cfg.data.patch_size), cfg.data.scale));
  images.resize(images.size() - n_val);
  d.pool = std::move(images);
  return d;
}

double val_psnr(const TrainState& st, const std::vector<LrHrPair>& val, const EtaSchedule& s) {
  if (val.empty()) return std::numeric_limits<double>::quiet_NaN();
  return evaluate_samples(st.params, val, s).psnr;
}

std::string fmt_num(double v, int precision = 6) {
  if (std::isnan(v)) return "nan";
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

/// Trains from `state` to cfg.train.max_steps, writing log lines to `log`.
void run_training(TrainState& state, const RunConfig& cfg, const TrainingData& data, const EtaSchedule& s,
                  std::ostream& log, const std::function<void(const TrainState&)>& on_checkpoint) {
  TrainHooks hooks;
  hooks.on_log = [&](std::int64_t step, double l) {
    log << "step=" << step << " loss=" << fmt_num(l, 8) << " psnr_val=" << fmt_num(val_psnr(state, data.val, s))
        << '\n';
    log.flush();
  };
  hooks.on_checkpoint = on_checkpoint;
  train(state, data.pool, cfg.data, s, cfg.train, hooks);
}

/// Mirrors stream output to two sinks.
class TeeBuf : public std::streambuf {
 public:
  TeeBuf(std::streambuf* a, std::streambuf* b) : a_(a), b_(b) {}

 protected:
  int overflow(int ch) override {
    if (ch == EOF) return !EOF;
    const int r1 = a_->sputc(static_cast<char>(ch));
    const int r2 = b_->sputc(static_cast<char>(ch));
    return r1 == EOF || r2 == EOF ? EOF : ch;
  }
  int sync() override { return (a_->pubsync() == 0 && b_->pubsync() == 0) ? 0 : -1; }

 private:
  std::streambuf* a_;
  std::streambuf* b_;
};

// ---------------------------------------------------------------------------
// train

int cmd_train(const RunConfig& cfg, const std::string& resume) {
  const TrainingData data = load_training_data(cfg);
  const EtaSchedule s = build_schedule(cfg.schedule);
  ensure_dir(cfg.out_dir);

  std::ofstream log_file(cfg.out_dir / "train_log.txt");
  if (!log_file) throw IoError("cannot write " + (cfg.out_dir / "train_log.txt").string());
  TeeBuf tee(std::cout.rdbuf(), log_file.rdbuf());
  std::ostream log(&tee);
  echo_config(cfg, log);

  TrainState state;
  if (!resume.empty()) {
    Checkpoint ck = load_checkpoint(resume, cfg.denoiser);
    if (ck.schedule.steps != cfg.schedule.steps || ck.schedule.eta_start != cfg.schedule.eta_start ||
        ck.schedule.eta_end != cfg.schedule.eta_end || ck.schedule.curvature_p != cfg.schedule.curvature_p) {
      throw ConfigMismatchError("schedule", "resume: checkpoint schedule differs from the configured one");
    }
    state = std::move(ck.state);
    log << "# resumed from " << resume << " at step " << state.step << '\n';
  } else {
    state = make_train_state(init_params<float>(cfg.denoiser, cfg.train.seed));
  }
  log << "# parameters " << state.params.parameter_count() << ", training images " << data.pool.size()
      << ", validation images " << data.val.size() << '\n';

  const fs::path ckpt_path = cfg.out_dir / "checkpoint.ddif";
  auto write_ckpt = [&](const TrainState& st) {
    save_checkpoint(Checkpoint{cfg.denoiser, cfg.schedule, cfg.data.scale, st}, ckpt_path);
  };
  run_training(state, cfg, data, s, log, write_ckpt);

  const SampleEval e = evaluate_samples(state.params, data.val, s);
  std::ofstream summary(cfg.out_dir / "summary.txt");
  summary << std::setprecision(8) << "steps = " << state.step << '\n'
          << "final_loss = " << (state.loss_history.empty() ? 0.0 : state.loss_history.back().second) << '\n'
          << "val_images = " << data.val.size() << '\n'
          << "val_psnr = " << e.psnr << '\n'
          << "val_ssim = " << e.ssim << '\n'
          << "bicubic_psnr = " << e.baseline_psnr << '\n'
          << "bicubic_ssim = " << e.baseline_ssim << '\n';
  if (!summary) throw IoError("cannot write " + (cfg.out_dir / "summary.txt").string());
  log << "# final val psnr " << fmt_num(e.psnr) << " ssim " << fmt_num(e.ssim) << " (bicubic "
      << fmt_num(e.baseline_psnr) << " / " << fmt_num(e.baseline_ssim) << ")\n"
      << "# checkpoint " << ckpt_path.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// infer

std::vector<fs::path> expand_inputs(const std::vector<std::string>& inputs) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      for (auto& f : list_png_files(in)) files.push_back(f);
    } else {
      files.emplace_back(in);
    }
  }
  return files;
}

int cmd_infer(const fs::path& checkpoint, const std::vector<std::string>& inputs, const fs::path& out_dir) {
  if (!fs::exists(checkpoint)) throw UsageError("checkpoint not found: " + checkpoint.string());
  const Checkpoint ck = load_checkpoint(checkpoint);
  const EtaSchedule s = build_schedule(ck.schedule);
  const DenoiserPredictor<float> predictor{&ck.state.params};
  const int mult = 1 << ck.denoiser.depth;
  const auto files = expand_inputs(inputs);
  if (files.empty()) throw UsageError("no input images");
  ensure_dir(out_dir);

  int failures = 0;
  for (const auto& f : files) {
    try {
      const auto t0 = std::chrono::steady_clock::now();
      const ImagePlane lr = load_image(f);
      if (lr.channels() != ck.denoiser.image_channels) {
        throw ArgumentError("has " + std::to_string(lr.channels()) + " channel(s), model expects " +
                            std::to_string(ck.denoiser.image_channels));
      }
      const ImagePlane lr_up = upscale_lr(lr, ck.scale);
      if (lr_up.height() % mult != 0 || lr_up.width() % mult != 0) {
        throw ArgumentError("upscaled shape " + lr_up.shape_string() + " is not divisible by 2^depth = " +
                            std::to_string(mult));
      }
      const ImagePlane sr = sample(lr_up, predictor, s).first;
      const fs::path dst = out_dir / (f.stem().string() + ".png");
      save_image(sr, dst);
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      std::cout << f.filename().string() << ": " << lr.shape_string() << " -> " << sr.shape_string() << " in "
                << std::fixed << std::setprecision(1) << ms << " ms -> " << dst.string() << '\n';
    } catch (const std::exception& e) {
      ++failures;
      std::cerr << "error: " << f.string() << ": " << e.what() << '\n';
    }
  }
  if (failures > 0) {
    std::cerr << failures << " of " << files.size() << " input(s) failed\n";
    return kExitRuntime;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

int cmd_eval(const fs::path& pred, const fs::path& ref, const fs::path& csv) {
  for (const auto& d : {pred, ref})
    if (!fs::is_directory(d)) throw UsageError("directory not found: " + d.string());
  if (list_png_files(pred).empty() && list_png_files(ref).empty()) {
    throw UsageError("no images in " + pred.string() + " or " + ref.string());
  }
  MetricReport r;
  try {
    r = evaluate_dir(pred, ref);
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  print_report(r, std::cout);
  if (!csv.empty()) {
    if (csv.has_parent_path()) ensure_dir(csv.parent_path());
    write_csv(r, csv);
    std::cout << "wrote " << csv.string() << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// trajectory

int cmd_trajectory(RunConfig cfg, const fs::path& hr_path, const fs::path& checkpoint, double kappa) {
  if (!(kappa >= 0.0)) throw ConfigError("kappa", "kappa must be >= 0, got " + fmt_num(kappa));
  if (!fs::exists(hr_path)) throw UsageError("HR image not found: " + hr_path.string());
  std::optional<Checkpoint> ck;
  if (!checkpoint.empty()) {
    if (!fs::exists(checkpoint)) throw UsageError("checkpoint not found: " + checkpoint.string());
    ck = load_checkpoint(checkpoint);
    cfg.schedule = ck->schedule;
    cfg.data.scale = ck->scale;
    cfg.denoiser = ck->denoiser;
  }
  const ImagePlane hr = load_image(hr_path);
  if (hr.height() % cfg.data.scale != 0 || hr.width() % cfg.data.scale != 0) {
    throw ConfigError("scale", hr_path.string() + " (" + hr.shape_string() + ") is not divisible by scale " +
                                   std::to_string(cfg.data.scale));
  }
  if (ck) {
    const int mult = 1 << cfg.denoiser.depth;
    if (hr.height() % mult != 0 || hr.width() % mult != 0 || hr.channels() != cfg.denoiser.image_channels) {
      throw ConfigError("depth", hr_path.string() + " (" + hr.shape_string() +
                                     ") does not fit the checkpoint network (2^depth = " + std::to_string(mult) +
                                     ", channels = " + std::to_string(cfg.denoiser.image_channels) + ")");
    }
  }
  echo_config(cfg, std::cout);
  const EtaSchedule s = build_schedule(cfg.schedule);
  const LrHrPair pair = make_pair(hr, cfg.data.scale);
  const int T = s.steps();
  ensure_dir(cfg.out_dir);

  // forward strips: HR, y_1..y_T, lr_up
  std::vector<StripTile> fwd{{pair.hr, "0", 0.0}};
  std::vector<StripTile> noisy{{pair.hr, "0", 0.0}};
  for (int t = 1; t <= T; ++t) {
    fwd.push_back({forward_state(pair.hr, pair.lr_up, s, t).image, std::to_string(t), s.eta(t)});
    const std::uint64_t tile_seed = cfg.train.seed * 1000003ULL + static_cast<std::uint64_t>(t);
    noisy.push_back(
        {noisy_forward_state(pair.hr, pair.lr_up, s, t, kappa, tile_seed).image, std::to_string(t), s.eta(t)});
  }
  fwd.push_back({pair.lr_up, "lr", 1.0});
  noisy.push_back({pair.lr_up, "lr", 1.0});
  export_strip(fwd, cfg.out_dir / "forward_strip.png", cfg.out_dir / "forward_strip.txt");
  export_strip(noisy, cfg.out_dir / "noisy_strip.png", cfg.out_dir / "noisy_strip.txt");

  // reverse strip from lr_up: trained predictor if given, else the HR oracle
  Trajectory traj;
  std::string mode;
  if (ck) {
    traj = sample(pair.lr_up, DenoiserPredictor<float>{&ck->state.params}, s).second;
    mode = "checkpoint";
  } else {
    const auto oracle = [&](const ImagePlane&, int, const ImagePlane&) { return pair.hr; };
    traj = sample(pair.lr_up, oracle, s).second;
    mode = "oracle";
  }
  std::vector<StripTile> rev;
  for (const auto& st : traj.states) rev.push_back({st.image, std::to_string(st.t), s.eta_or_zero(st.t)});
  export_strip(rev, cfg.out_dir / "reverse_strip.png", cfg.out_dir / "reverse_strip.txt");

  std::cout << "forward strip: " << (cfg.out_dir / "forward_strip.png").string() << '\n'
            << "noisy strip (kappa " << fmt_num(kappa) << "): " << (cfg.out_dir / "noisy_strip.png").string() << '\n'
            << "reverse strip (" << mode << "): " << (cfg.out_dir / "reverse_strip.png").string()
            << ", final psnr vs HR " << format_psnr(psnr(traj.states.back().image, pair.hr)) << " dB\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// ablate

struct GridPoint {
  double eta_start;
  double eta_end;
  std::string text;
};

std::vector<GridPoint> parse_grid(const std::string& spec) {
  std::vector<GridPoint> grid;
  std::istringstream in(spec);
  for (std::string item; std::getline(in, item, ',');) {
    item = trim(item);
    if (item.empty()) continue;
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("grid", "grid entry '" + item + "' is not eta_start:eta_end");
    grid.push_back({detail::parse_number<double>("grid", trim(item.substr(0, colon))),
                    detail::parse_number<double>("grid", trim(item.substr(colon + 1))), item});
  }
  if (grid.empty()) throw ConfigError("grid", "empty grid");
  return grid;
}

int cmd_ablate(RunConfig cfg, const std::string& grid_spec) {
  const auto grid = parse_grid(grid_spec);
  if (cfg.toy_count == 0) cfg.toy_count = 32;
  validate(cfg);
  echo_config(cfg, std::cout);
  ensure_dir(cfg.out_dir);
  const std::vector<ImagePlane> pool = toy_dataset(cfg.toy_count, cfg.toy_size, cfg.train.seed);
  const std::vector<LrHrPair> val = toy_heldout(cfg);
  if (val.empty()) throw ConfigError("val_count", "ablate needs val_count >= 1");

  std::ostringstream csv;
  csv << "eta_start,eta_end,psnr_db,ssim,status\n" << std::setprecision(10);
  int failures = 0;
  for (const auto& g : grid) {
    RunConfig row = cfg;
    row.schedule.eta_start = g.eta_start;
    row.schedule.eta_end = g.eta_end;
    try {
      validate(row.schedule);
    } catch (const std::exception& e) {
      std::cerr << "warning: skipping grid point " << g.text << ": " << e.what() << '\n';
      csv << g.eta_start << ',' << g.eta_end << ",,,skipped: " << e.what() << '\n';
      continue;
    }
    try {
      const EtaSchedule s = build_schedule(row.schedule);
      TrainState state = make_train_state(init_params<float>(row.denoiser, row.train.seed));
      TrainingData data{pool, val};
      std::cout << "# grid point eta_start=" << g.eta_start << " eta_end=" << g.eta_end << '\n';
      run_training(state, row, data, s, std::cout, {});
      const SampleEval e = evaluate_samples(state.params, val, s);
      std::cout << "# eta_start=" << g.eta_start << " eta_end=" << g.eta_end << " psnr=" << fmt_num(e.psnr)
                << " ssim=" << fmt_num(e.ssim) << " (bicubic " << fmt_num(e.baseline_psnr) << " / "
                << fmt_num(e.baseline_ssim) << ")\n";
      csv << g.eta_start << ',' << g.eta_end << ',' << e.psnr << ',' << e.ssim << ",ok\n";
    } catch (const std::exception& e) {
      ++failures;
      std::cerr << "error: grid point " << g.text << ": " << e.what() << '\n';
      csv << g.eta_start << ',' << g.eta_end << ",,,failed: " << e.what() << '\n';
    }
  }
  const fs::path csv_path = cfg.out_dir / "ablation.csv";
  std::ofstream out(csv_path);
  out << csv.str();
  if (!out) throw IoError("cannot write " + csv_path.string());
  std::cout << "wrote " << csv_path.string() << '\n';
  return failures > 0 ? kExitRuntime : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deltadiff: residual diffusion super-resolution"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "train a denoiser on a PNG directory or generated toy images");
  ConfigFlags train_flags;
  add_config_flags(train_cmd, train_flags, concat({kScheduleKeys, kDenoiserKeys, kTrainKeys}));
  std::string resume;
  train_cmd->add_option("--resume", resume, "continue from this checkpoint");

  // infer
  auto* infer_cmd = app.add_subcommand("infer", "upscale LR images with a trained checkpoint");
  std::string infer_ckpt;
  std::vector<std::string> infer_inputs;
  std::string infer_out = "out";
  std::uint64_t infer_seed = 0;
  infer_cmd->add_option("--checkpoint", infer_ckpt, "checkpoint file")->required();
  infer_cmd->add_option("inputs", infer_inputs, "LR PNG files or directories")->required();
  infer_cmd->add_option("--out", infer_out, "output directory")->capture_default_str();
  infer_cmd->add_option("--seed", infer_seed, "accepted for uniformity; sampling draws no random numbers");
  std::string infer_config;
  infer_cmd->add_option("--config", infer_config, "key = value file; only 'checkpoint' and 'out' are read");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "score predicted PNGs against references on luma PSNR / SSIM");
  std::string eval_pred;
  std::string eval_ref;
  std::string eval_csv;
  std::string eval_out;
  std::uint64_t eval_seed = 0;
  eval_cmd->add_option("--pred", eval_pred, "directory of predicted images")->required();
  eval_cmd->add_option("--ref", eval_ref, "directory of reference images")->required();
  eval_cmd->add_option("--csv", eval_csv, "CSV output path (default <out>/metrics.csv when --out is given)");
  eval_cmd->add_option("--out", eval_out, "output directory for metrics.csv");
  eval_cmd->add_option("--seed", eval_seed, "accepted for uniformity; evaluation draws no random numbers");
  std::string eval_config;
  eval_cmd->add_option("--config", eval_config, "accepted for uniformity; evaluation has no config keys");

  // trajectory
  auto* traj_cmd = app.add_subcommand("trajectory", "render forward, noisy-baseline and reverse strips");
  ConfigFlags traj_flags;
  add_config_flags(traj_cmd, traj_flags, concat({kScheduleKeys, {"scale", "seed", "out"}}));
  std::string traj_hr;
  std::string traj_ckpt;
  double kappa = 0.1;
  traj_cmd->add_option("--hr", traj_hr, "HR image")->required();
  traj_cmd->add_option("--checkpoint", traj_ckpt, "checkpoint for the reverse strip; oracle predictor if omitted");
  traj_cmd->add_option("--kappa", kappa, "noise scale of the noisy baseline (>= 0)")->capture_default_str();

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "train one toy model per (eta_start, eta_end) grid point");
  ConfigFlags ablate_flags;
  add_config_flags(ablate_cmd, ablate_flags, concat({{"steps", "curvature_p"}, kDenoiserKeys, kTrainKeys}));
  std::string grid = "0.01:0.8,0.01:0.99,0.2:0.99,0.5:0.999";
  ablate_cmd->add_option("--grid", grid, "comma-separated eta_start:eta_end pairs")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train_cmd) {
      return cmd_train(resolve_config(train_flags, RunConfig{}), resume);
    }
    if (*infer_cmd) {
      if (!infer_config.empty()) {
        if (!fs::exists(infer_config)) throw UsageError("config file not found: " + infer_config);
        const auto kv = load_kv_file(infer_config);
        if (infer_cmd->count("--checkpoint") == 0 && kv.count("checkpoint")) infer_ckpt = kv.at("checkpoint");
        if (infer_cmd->count("--out") == 0 && kv.count("out")) infer_out = kv.at("out");
      }
      return cmd_infer(infer_ckpt, infer_inputs, infer_out);
    }
    if (*eval_cmd) {
      if (eval_csv.empty() && !eval_out.empty()) eval_csv = (fs::path(eval_out) / "metrics.csv").string();
      return cmd_eval(eval_pred, eval_ref, eval_csv);
    }
    if (*traj_cmd) {
      RunConfig base;
      if (!traj_flags.config_path.empty()) {
        // trajectory reads only its own keys from a shared config file
        if (!fs::exists(traj_flags.config_path)) throw UsageError("config file not found: " + traj_flags.config_path);
        const auto kv = load_kv_file(traj_flags.config_path);
        for (const auto& key : concat({kScheduleKeys, {"scale", "seed", "out"}}))
          if (kv.count(key)) apply_setting(base, key, kv.at(key));
        if (kv.count("kappa") && traj_cmd->count("--kappa") == 0) kappa = detail::parse_number<double>("kappa", kv.at("kappa"));
      }
      for (const auto& [key, opt] : traj_flags.options)
        if (opt->count() > 0) apply_setting(base, key, traj_flags.values.at(key));
      validate(base.schedule);
      if (base.data.scale < 1) throw ConfigError("scale", "scale must be >= 1");
      return cmd_trajectory(base, traj_hr, traj_ckpt, kappa);
    }
    if (*ablate_cmd) {
      RunConfig base;
      if (!ablate_flags.config_path.empty()) {
        if (!fs::exists(ablate_flags.config_path))
          throw UsageError("config file not found: " + ablate_flags.config_path);
        for (const auto& [k, v] : load_kv_file(ablate_flags.config_path)) {
          if (k == "grid") {
            if (ablate_cmd->count("--grid") == 0) grid = v;
          } else {
            apply_setting(base, k, v);
          }
        }
      }
      for (const auto& [key, opt] : ablate_flags.options)
        if (opt->count() > 0) apply_setting(base, key, ablate_flags.values.at(key));
      return cmd_ablate(base, grid);
    }
  } catch (const ConfigMismatchError& e) {
    std::cerr << "config error (" << e.field() << "): " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error";
    if (!e.key().empty()) std::cerr << " (" << e.key() << ")";
    std::cerr << ": " << e.what() << '\n';
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
