#include "rvd/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "rvd/errors.hpp"

namespace rvd::cli {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

int parse_int(const std::string& key, const std::string& v) {
  int out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
  return out;
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("config: bad unsigned integer for " + key + ": '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size() || v.empty())
    throw ConfigError("config: bad number for " + key + ": '" + v + "'");
  return out;
}

}  // namespace

void RunConfig::validate() const {
  model_config().validate();  // profile name checked by model_config()
  if (dataset != "ball" && dataset != "drift" &&
      !(dataset.rfind("dir:", 0) == 0 && dataset.size() > 4))
    throw ConfigError("config: dataset must be ball, drift, or dir:<path>");
  if (n_steps < 1) throw ConfigError("config: N must be >= 1");
  if (sigma <= 0.0) throw ConfigError("config: sigma must be positive");
  if (context_len < 1) throw ConfigError("config: context_len must be >= 1");
  if (future_len < 1) throw ConfigError("config: future_len must be >= 1");
  if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
  if (max_steps < 1) throw ConfigError("config: max_steps must be >= 1");
  if (ensemble_size < 1) throw ConfigError("config: ensemble_size must be >= 1");
  if (lr_initial <= 0.0 || lr_final <= 0.0)
    throw ConfigError("config: learning rates must be positive");
  if (lr_final > lr_initial)
    throw ConfigError("config: lr_final must not exceed lr_initial");
}

model::ModelConfig RunConfig::model_config() const {
  try {
    return model::ModelConfig::profile(profile);
  } catch (const ConfigError&) {
    throw ConfigError("config: unknown profile '" + profile +
                      "' (expected desk|64|128)");
  }
}

train::TrainConfig RunConfig::train_config() const {
  train::TrainConfig tc;
  tc.context_len = context_len;
  tc.future_len = future_len;
  tc.batch_size = batch_size;
  tc.lr_initial = lr_initial;
  tc.lr_final = lr_final;
  tc.n_steps = n_steps;
  tc.sigma = sigma;
  tc.mode = mode;
  tc.max_steps = max_steps;
  tc.seed = seed;
  tc.variance_mode = variance_mode;
  return tc;
}

int RunConfig::frame_size() const {
  if (profile == "desk") return 16;
  if (profile == "64") return 64;
  if (profile == "128") return 128;
  throw ConfigError("config: unknown profile '" + profile + "'");
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(lineno) +
                        " is not key=value: '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config: line " + std::to_string(lineno) +
                        " has an empty key");
    if (!seen.insert(key).second)
      throw ConfigError("config: duplicate key '" + key + "'");

    if (key == "profile") {
      cfg.profile = value;
    } else if (key == "dataset") {
      cfg.dataset = value;
    } else if (key == "mode") {
      cfg.mode = flow::parse_mode(value);
    } else if (key == "N") {
      cfg.n_steps = parse_int(key, value);
    } else if (key == "sigma") {
      cfg.sigma = parse_double(key, value);
    } else if (key == "context_len") {
      cfg.context_len = parse_int(key, value);
    } else if (key == "future_len") {
      cfg.future_len = parse_int(key, value);
    } else if (key == "batch_size") {
      cfg.batch_size = parse_int(key, value);
    } else if (key == "max_steps") {
      cfg.max_steps = parse_int(key, value);
    } else if (key == "lr_initial") {
      cfg.lr_initial = parse_double(key, value);
    } else if (key == "lr_final") {
      cfg.lr_final = parse_double(key, value);
    } else if (key == "seed") {
      cfg.seed = parse_u64(key, value);
    } else if (key == "ensemble_size") {
      cfg.ensemble_size = parse_int(key, value);
    } else if (key == "variance_mode") {
      cfg.variance_mode = diffusion::parse_variance_mode(value);
    } else if (key == "out_dir") {
      cfg.out_dir = value;
    } else {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError(IoErrorCode::kOpenFailed, "cannot open config " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

}  // namespace rvd::cli
