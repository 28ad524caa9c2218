#pragma once

// Training configuration and its flat `key = value` file format.
// Blank lines and anything after '#' are ignored.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "naf/radiance/renderer.hpp"

namespace naf {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TrainConfig {
  std::string data;  // dataset directory
  std::string out;   // run directory (metrics, checkpoints)
  long iterations = 20000;
  std::size_t batch_rays = 1024;
  std::size_t samples = 128;
  double lambda_lpips = 0;
  double theta = 0.05;
  double lr_deformation = 5e-6;
  double lr_rest = 5e-5;
  bool no_consis = false;
  bool no_feat = false;
  bool nonrigid = true;
  long nonrigid_warmup = 5000;
  bool stop_consistency_backward = false;
  std::uint64_t seed = 0;
  std::size_t sample_rate = 1;
  double fg_fraction = 0.8;
  int mask_dilation = 4;
  long log_every = 1;
  long checkpoint_every = 0;
  // Architecture.
  std::size_t width = 64;
  std::size_t layers = 8;
  int frequencies = 10;
  std::size_t feature_channels = 16;
  std::size_t feature_base = 16;
  std::size_t blend_hidden = 32;
  std::size_t decoder_latent = 64;
  std::size_t decoder_channels = 16;
  std::size_t decoder_stages = 3;
  std::size_t nonrigid_width = 64;
  bool use_prior = true;
  double prior_sigma = 0.08;
  double box_padding = 0.12;

  void validate() const {
    if (!(lr_deformation > 0) || !(lr_rest > 0)) throw ConfigError("learning rates must be positive");
    if (batch_rays < 1) throw ConfigError("batch_rays must be at least 1");
    if (samples < 2) throw ConfigError("samples must be at least 2");
    if (iterations < 0) throw ConfigError("iterations must be non-negative");
    if (sample_rate < 1) throw ConfigError("sample_rate must be at least 1");
    if (!(fg_fraction >= 0 && fg_fraction <= 1)) throw ConfigError("fg_fraction must lie in [0, 1]");
    if (!(theta > 0)) throw ConfigError("theta must be positive");
    if (lambda_lpips < 0) throw ConfigError("lambda_lpips must be non-negative");
  }

  ModelConfig model_config() const {
    ModelConfig m;
    m.deformation.decoder = {decoder_latent, 4, decoder_stages, decoder_channels};
    m.deformation.use_prior = use_prior;
    m.deformation.prior_sigma = prior_sigma;
    m.deformation.nonrigid_width = nonrigid_width;
    m.deformation.nonrigid_warmup = nonrigid_warmup;
    m.deformation.theta = theta;
    m.features = {feature_channels, feature_base};
    m.radiance.width = width;
    m.radiance.layers = layers;
    m.radiance.frequencies = frequencies;
    m.blend_hidden = blend_hidden;
    m.no_feat = no_feat;
    m.samples = samples;
    m.box_padding = box_padding;
    return m;
  }
};

struct ConfigField {
  std::string key;
  std::string help;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

namespace detail {

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream is(v);
  T out{};
  if (!(is >> out) || !(is >> std::ws).eof())
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "'");
  if constexpr (std::is_unsigned_v<T>)
    if (!v.empty() && v[0] == '-') throw ConfigError("config key '" + key + "': must be non-negative");
  return out;
}

template <typename T>
std::string show(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else {
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
  }
}

template <typename T>
ConfigField field(std::string key, std::string help, T TrainConfig::*member) {
  return {key, std::move(help), [member](const TrainConfig& c) { return show(c.*member); },
          [member, key](TrainConfig& c, const std::string& v) {
            if constexpr (std::is_same_v<T, bool>)
              c.*member = parse_bool(key, v);
            else if constexpr (std::is_same_v<T, std::string>)
              c.*member = v;
            else
              c.*member = parse_number<T>(key, v);
          }};
}

}  // namespace detail

inline const std::vector<ConfigField>& config_fields() {
  using detail::field;
  static const std::vector<ConfigField> fields{
      field("data", "dataset directory", &TrainConfig::data),
      field("out", "run directory", &TrainConfig::out),
      field("iterations", "optimisation steps", &TrainConfig::iterations),
      field("batch_rays", "rays per step", &TrainConfig::batch_rays),
      field("samples", "samples per ray", &TrainConfig::samples),
      field("lambda_lpips", "perceptual loss weight (hook; 0 disables)", &TrainConfig::lambda_lpips),
      field("theta", "cycle error threshold", &TrainConfig::theta),
      field("lr_deformation", "learning rate of the deformation group", &TrainConfig::lr_deformation),
      field("lr_rest", "learning rate of every other group", &TrainConfig::lr_rest),
      field("no_consis", "drop the consistency loss", &TrainConfig::no_consis),
      field("no_feat", "replace keyframe features with zeros", &TrainConfig::no_feat),
      field("nonrigid", "enable the non-rigid offset networks", &TrainConfig::nonrigid),
      field("nonrigid_warmup", "iterations before non-rigid offsets switch on", &TrainConfig::nonrigid_warmup),
      field("stop_consistency_backward", "consistency gradient reaches the forward map only",
            &TrainConfig::stop_consistency_backward),
      field("seed", "random seed", &TrainConfig::seed),
      field("sample_rate", "keep every N-th training frame", &TrainConfig::sample_rate),
      field("fg_fraction", "share of rays drawn from the dilated mask", &TrainConfig::fg_fraction),
      field("mask_dilation", "mask dilation radius in pixels", &TrainConfig::mask_dilation),
      field("log_every", "metrics record interval", &TrainConfig::log_every),
      field("checkpoint_every", "checkpoint interval (0: only at the end)", &TrainConfig::checkpoint_every),
      field("width", "radiance MLP width", &TrainConfig::width),
      field("layers", "radiance MLP layers per stage", &TrainConfig::layers),
      field("frequencies", "positional encoding frequencies", &TrainConfig::frequencies),
      field("feature_channels", "keyframe feature channels", &TrainConfig::feature_channels),
      field("feature_base", "feature extractor base width", &TrainConfig::feature_base),
      field("blend_hidden", "blend MLP hidden width", &TrainConfig::blend_hidden),
      field("decoder_latent", "weight volume latent size", &TrainConfig::decoder_latent),
      field("decoder_channels", "weight volume decoder channels", &TrainConfig::decoder_channels),
      field("decoder_stages", "weight volume upsampling stages", &TrainConfig::decoder_stages),
      field("nonrigid_width", "non-rigid MLP width", &TrainConfig::nonrigid_width),
      field("use_prior", "add the skeleton prior to the weight volume", &TrainConfig::use_prior),
      field("prior_sigma", "skeleton prior falloff (m)", &TrainConfig::prior_sigma),
      field("box_padding", "sampling box padding, fraction of extent", &TrainConfig::box_padding),
  };
  return fields;
}

inline const ConfigField& config_field(const std::string& key) {
  for (const auto& f : config_fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

inline void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
  config_field(key).set(cfg, value);
}

inline std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r"), b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    config_field(key);
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline std::map<std::string, std::string> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

inline void apply_config(TrainConfig& cfg, const std::map<std::string, std::string>& kv) {
  for (const auto& [k, v] : kv) set_config_value(cfg, k, v);
}

inline std::map<std::string, std::string> config_values(const TrainConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const auto& f : config_fields()) out[f.key] = f.get(cfg);
  return out;
}

inline std::string config_text(const TrainConfig& cfg) {
  std::string s;
  for (const auto& f : config_fields()) s += f.key + " = " + f.get(cfg) + "  # " + f.help + "\n";
  return s;
}

}  // namespace naf
