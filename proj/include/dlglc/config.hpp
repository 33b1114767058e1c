#pragma once

// Flat key=value configuration files. '#' starts a comment; unknown keys
// are rejected. Command-line flags override file values.

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "dlglc/pipeline.hpp"

namespace dlglc {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw std::invalid_argument("config key " + key + ": expected true/false, got " + value);
}

inline double parse_double(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double out;
  try {
    out = std::stod(value, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config key " + key + ": bad number " + value);
  }
  if (pos != value.size())
    throw std::invalid_argument("config key " + key + ": bad number " + value);
  return out;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  std::uint64_t out;
  try {
    out = std::stoull(value, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config key " + key + ": bad integer " + value);
  }
  if (pos != value.size())
    throw std::invalid_argument("config key " + key + ": bad integer " + value);
  return out;
}

}  // namespace detail

inline std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                  ": expected key=value");
    kv[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
  }
  return kv;
}

// Applies one key to the config; throws on unknown keys or bad values.
inline void apply_config_key(PipelineConfig& cfg, const std::string& key,
                             const std::string& value) {
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_u64;
  auto as_size = [&](const std::string& v) { return static_cast<std::size_t>(parse_u64(key, v)); };

  if (key == "seed") cfg.seed = parse_u64(key, value);
  else if (key == "n_speakers") cfg.corpus.n_speakers = as_size(value);
  else if (key == "utts_per_speaker") cfg.corpus.utts_per_speaker = as_size(value);
  else if (key == "dim") cfg.corpus.dim = as_size(value);
  else if (key == "within_speaker_noise") cfg.corpus.within_speaker_noise = parse_double(key, value);
  else if (key == "augment_noise") cfg.corpus.augment_noise = parse_double(key, value);
  else if (key == "dino_epochs") cfg.dino.epochs = as_size(value);
  else if (key == "dino_batch_size") cfg.dino.batch_size = as_size(value);
  else if (key == "dino_learning_rate") cfg.dino.learning_rate = parse_double(key, value);
  else if (key == "teacher_temp") cfg.dino.teacher_temp = parse_double(key, value);
  else if (key == "student_temp") cfg.dino.student_temp = parse_double(key, value);
  else if (key == "alpha") cfg.dino.alpha = parse_double(key, value);
  else if (key == "lambda_start") cfg.dino.lambda_start = parse_double(key, value);
  else if (key == "lambda_end") cfg.dino.lambda_end = parse_double(key, value);
  else if (key == "center_momentum") cfg.dino.center_momentum = parse_double(key, value);
  else if (key == "n_outputs") cfg.dino.n_outputs = as_size(value);
  else if (key == "emb_dim") cfg.dino.emb_dim = as_size(value);
  else if (key == "enc_hidden") cfg.dino.enc_hidden = as_size(value);
  else if (key == "enc_hidden_layers") cfg.dino.enc_hidden_layers = as_size(value);
  else if (key == "head_hidden") cfg.dino.head_hidden = as_size(value);
  else if (key == "head_bottleneck") cfg.dino.head_bottleneck = as_size(value);
  else if (key == "mask_fraction") cfg.dino.mask_fraction = parse_double(key, value);
  else if (key == "short_noise_factor") cfg.dino.short_noise_factor = parse_double(key, value);
  else if (key == "dino_average_pairs") cfg.dino.average_pairs = parse_bool(key, value);
  else if (key == "dino_disable_ema") cfg.dino.disable_ema = parse_bool(key, value);
  else if (key == "extract_with_teacher") cfg.dino.extract_with_teacher = parse_bool(key, value);
  else if (key == "stage2_epochs") cfg.stage2.epochs = as_size(value);
  else if (key == "stage2_batch_size") cfg.stage2.batch_size = as_size(value);
  else if (key == "stage2_learning_rate") cfg.stage2.learning_rate = parse_double(key, value);
  else if (key == "warmup_epochs") cfg.stage2.warmup_epochs = as_size(value);
  else if (key == "gate_mode") cfg.stage2.gate_mode = gate_mode_from_string(value);
  else if (key == "fixed_tau") cfg.stage2.fixed_tau = parse_double(key, value);
  else if (key == "margin") cfg.stage2.objective.margin = parse_double(key, value);
  else if (key == "scale") cfg.stage2.objective.scale = parse_double(key, value);
  else if (key == "tau2") cfg.stage2.objective.tau2 = parse_double(key, value);
  else if (key == "sharpen_eps") cfg.stage2.objective.sharpen_eps = parse_double(key, value);
  else if (key == "sum_reduction") cfg.stage2.objective.sum_reduction = parse_bool(key, value);
  else if (key == "clusters") cfg.clusters = as_size(value);
  else if (key == "kmeans_restarts") cfg.kmeans_restarts = as_size(value);
  else if (key == "iterations") cfg.n_iterations = as_size(value);
  else if (key == "warm_start") cfg.warm_start = parse_bool(key, value);
  else if (key == "widen_final") cfg.widen_final = parse_bool(key, value);
  else if (key == "widen_factor") cfg.widen_factor = parse_double(key, value);
  else if (key == "trials_pos") cfg.trials_pos = as_size(value);
  else if (key == "trials_neg") cfg.trials_neg = as_size(value);
  else if (key == "dcf_p_target") cfg.dcf_p_target = parse_double(key, value);
  else if (key == "dcf_c_miss") cfg.dcf_c_miss = parse_double(key, value);
  else if (key == "dcf_c_fa") cfg.dcf_c_fa = parse_double(key, value);
  else throw std::invalid_argument("unknown config key: " + key);
}

inline PipelineConfig load_config(const std::string& path) {
  PipelineConfig cfg;
  for (const auto& [key, value] : parse_config_file(path))
    apply_config_key(cfg, key, value);
  return cfg;
}

}  // namespace dlglc
