#pragma once

// Flat `key = value` run configuration shared by the command-line tool.
// One key per line, `#` starts a comment, blank lines are ignored.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "deltadiff/data.hpp"
#include "deltadiff/denoiser.hpp"
#include "deltadiff/errors.hpp"
#include "deltadiff/schedule.hpp"
#include "deltadiff/trainer.hpp"

namespace deltadiff {

/// Bad configuration value or inconsistent combination; carries the key.
class ConfigError : public ArgumentError {
 public:
  ConfigError(std::string key, const std::string& what) : ArgumentError(what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

struct RunConfig {
  ScheduleConfig schedule;
  DenoiserConfig denoiser;
  TrainConfig train;
  DatasetSpec data;
  int toy_count = 0;  ///< > 0 replaces the data directory with generated images
  int toy_size = 128;
  int val_count = 8;
  std::filesystem::path checkpoint;
  std::filesystem::path out_dir = "out";
};

inline std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

/// Parses `key = value` lines. Later duplicates override earlier ones.
inline std::map<std::string, std::string> parse_kv(std::istream& in, const std::string& source = "config") {
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("", source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("", source + ":" + std::to_string(lineno) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline std::map<std::string, std::string> load_kv_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot read config file " + path.string());
  return parse_kv(in, path.string());
}

namespace detail {

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  if constexpr (std::is_floating_point_v<T>) {
    try {
      std::size_t used = 0;
      value = static_cast<T>(std::stod(text, &used));
      if (used != text.size()) throw std::invalid_argument(text);
    } catch (const std::exception&) {
      throw ConfigError(key, key + ": expected a number, got '" + text + "'");
    }
  } else {
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
      throw ConfigError(key, key + ": expected an integer, got '" + text + "'");
    }
  }
  return value;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "1" || text == "true" || text == "yes" || text == "on") return true;
  if (text == "0" || text == "false" || text == "no" || text == "off") return false;
  throw ConfigError(key, key + ": expected a boolean, got '" + text + "'");
}

}  // namespace detail

/// Every key accepted by apply_setting, in documentation order.
inline const std::vector<std::pair<std::string, std::string>>& config_keys() {
  static const std::vector<std::pair<std::string, std::string>> keys = {
      {"steps", "number of diffusion steps T"},
      {"eta_start", "residual weight at t=1 (near HR)"},
      {"eta_end", "residual weight at t=T (near LR)"},
      {"curvature_p", "schedule exponent p"},
      {"base_channels", "denoiser width at full resolution"},
      {"depth", "number of down/up levels"},
      {"time_embed_dim", "time embedding width (even)"},
      {"image_channels", "1 (gray) or 3 (RGB)"},
      {"lr", "Adam learning rate"},
      {"batch_size", "pairs per optimizer step"},
      {"max_steps", "total optimizer steps"},
      {"seed", "seed for init, batches and timesteps"},
      {"checkpoint_every", "steps between checkpoints (0 = only at the end)"},
      {"log_every", "steps between log lines"},
      {"adam_beta1", "Adam beta1"},
      {"adam_beta2", "Adam beta2"},
      {"adam_eps", "Adam epsilon"},
      {"clip_grad", "clip gradient global norm (true/false)"},
      {"clip_threshold", "gradient norm limit when clip_grad is on"},
      {"patch_size", "training crop size"},
      {"scale", "super-resolution factor"},
      {"data", "directory of HR PNG files"},
      {"toy", "generate this many toy images instead of --data"},
      {"toy_size", "side length of generated toy images"},
      {"val_count", "held-out images used for validation"},
      {"checkpoint", "checkpoint path"},
      {"out", "output directory"},
  };
  return keys;
}

inline void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  using detail::parse_number;
  if (key == "steps") cfg.schedule.steps = parse_number<int>(key, value);
  else if (key == "eta_start") cfg.schedule.eta_start = parse_number<double>(key, value);
  else if (key == "eta_end") cfg.schedule.eta_end = parse_number<double>(key, value);
  else if (key == "curvature_p") cfg.schedule.curvature_p = parse_number<double>(key, value);
  else if (key == "base_channels") cfg.denoiser.base_channels = parse_number<int>(key, value);
  else if (key == "depth") cfg.denoiser.depth = parse_number<int>(key, value);
  else if (key == "time_embed_dim") cfg.denoiser.time_embed_dim = parse_number<int>(key, value);
  else if (key == "image_channels") cfg.denoiser.image_channels = parse_number<int>(key, value);
  else if (key == "lr") cfg.train.lr = parse_number<double>(key, value);
  else if (key == "batch_size") cfg.train.batch_size = parse_number<int>(key, value);
  else if (key == "max_steps") cfg.train.max_steps = parse_number<std::int64_t>(key, value);
  else if (key == "seed") {
    cfg.train.seed = parse_number<std::uint64_t>(key, value);
    cfg.data.seed = cfg.train.seed;
  } else if (key == "checkpoint_every") cfg.train.checkpoint_every = parse_number<std::int64_t>(key, value);
  else if (key == "log_every") cfg.train.log_every = parse_number<std::int64_t>(key, value);
  else if (key == "adam_beta1") cfg.train.adam_beta1 = parse_number<double>(key, value);
  else if (key == "adam_beta2") cfg.train.adam_beta2 = parse_number<double>(key, value);
  else if (key == "adam_eps") cfg.train.adam_eps = parse_number<double>(key, value);
  else if (key == "clip_grad") cfg.train.clip_grad = detail::parse_bool(key, value);
  else if (key == "clip_threshold") cfg.train.clip_threshold = parse_number<double>(key, value);
  else if (key == "patch_size") cfg.data.patch_size = parse_number<int>(key, value);
  else if (key == "scale") cfg.data.scale = parse_number<int>(key, value);
  else if (key == "data") cfg.data.root = value;
  else if (key == "toy") cfg.toy_count = parse_number<int>(key, value);
  else if (key == "toy_size") cfg.toy_size = parse_number<int>(key, value);
  else if (key == "val_count") cfg.val_count = parse_number<int>(key, value);
  else if (key == "checkpoint") cfg.checkpoint = value;
  else if (key == "out") cfg.out_dir = value;
  else throw ConfigError(key, "unknown config key '" + key + "'");
}

/// Field-level and cross-field checks. Throws ConfigError naming the key.
inline void validate(const RunConfig& cfg) {
  auto wrap = [](const char* key, auto&& fn) {
    try {
      fn();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(key, e.what());
    }
  };
  wrap("steps/eta_start/eta_end/curvature_p", [&] { validate(cfg.schedule); });
  wrap("base_channels/depth/time_embed_dim/image_channels", [&] { validate(cfg.denoiser); });
  wrap("lr/batch_size/max_steps/adam_*", [&] { validate(cfg.train); });
  wrap("patch_size", [&] { validate(cfg.data, cfg.denoiser.depth); });
  if (cfg.toy_count < 0) throw ConfigError("toy", "toy: must be >= 0");
  if (cfg.toy_count > 0 && cfg.toy_size < cfg.data.patch_size) {
    throw ConfigError("toy_size", "toy_size " + std::to_string(cfg.toy_size) + " is smaller than patch_size " +
                                      std::to_string(cfg.data.patch_size));
  }
  if (cfg.toy_count > 0 && cfg.denoiser.image_channels != 3) {
    throw ConfigError("image_channels", "image_channels: toy images are RGB, set image_channels = 3");
  }
  if (cfg.val_count < 0) throw ConfigError("val_count", "val_count: must be >= 0");
}

inline std::string describe(const RunConfig& cfg) {
  std::ostringstream s;
  s << std::setprecision(10);
  s << "steps = " << cfg.schedule.steps << '\n'
    << "eta_start = " << cfg.schedule.eta_start << '\n'
    << "eta_end = " << cfg.schedule.eta_end << '\n'
    << "curvature_p = " << cfg.schedule.curvature_p << '\n'
    << "base_channels = " << cfg.denoiser.base_channels << '\n'
    << "depth = " << cfg.denoiser.depth << '\n'
    << "time_embed_dim = " << cfg.denoiser.time_embed_dim << '\n'
    << "image_channels = " << cfg.denoiser.image_channels << '\n'
    << "lr = " << cfg.train.lr << '\n'
    << "batch_size = " << cfg.train.batch_size << '\n'
    << "max_steps = " << cfg.train.max_steps << '\n'
    << "seed = " << cfg.train.seed << '\n'
    << "checkpoint_every = " << cfg.train.checkpoint_every << '\n'
    << "log_every = " << cfg.train.log_every << '\n'
    << "adam_beta1 = " << cfg.train.adam_beta1 << '\n'
    << "adam_beta2 = " << cfg.train.adam_beta2 << '\n'
    << "adam_eps = " << cfg.train.adam_eps << '\n'
    << "clip_grad = " << (cfg.train.clip_grad ? "true" : "false") << '\n'
    << "clip_threshold = " << cfg.train.clip_threshold << '\n'
    << "patch_size = " << cfg.data.patch_size << '\n'
    << "scale = " << cfg.data.scale << '\n'
    << "data = " << cfg.data.root.string() << '\n'
    << "toy = " << cfg.toy_count << '\n'
    << "toy_size = " << cfg.toy_size << '\n'
    << "val_count = " << cfg.val_count << '\n'
    << "checkpoint = " << cfg.checkpoint.string() << '\n'
    << "out = " << cfg.out_dir.string() << '\n';
  return s.str();
}

}  // namespace deltadiff
