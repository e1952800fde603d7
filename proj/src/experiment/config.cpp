#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include <openssl/evp.h>

#include "qad/error.hpp"
#include "qad/experiment.hpp"

namespace qad::exp {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

[[noreturn]] void config_error(const std::string& path, const std::string& what) {
  fail(ErrorKind::invalid_config, (path.empty() ? std::string("config") : path) + ": " + what);
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Rejects keys outside `allowed` so typos surface instead of being ignored.
void check_keys(const json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) config_error(path, "expected an object");
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      config_error(join(path, key), "unknown key");
    }
  }
}

double get_double(const json& obj, const std::string& path, const char* key, double fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number()) config_error(join(path, key), "expected a number");
  return v.get<double>();
}

std::uint64_t get_u64(const json& obj, const std::string& path, const char* key, std::uint64_t fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
  config_error(join(path, key), "expected a non-negative integer");
}

std::size_t get_size(const json& obj, const std::string& path, const char* key, std::size_t fallback) {
  return static_cast<std::size_t>(get_u64(obj, path, key, fallback));
}

bool get_bool(const json& obj, const std::string& path, const char* key, bool fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_boolean()) config_error(join(path, key), "expected true or false");
  return v.get<bool>();
}

std::string get_string(const json& obj, const std::string& path, const char* key, const std::string& fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_string()) config_error(join(path, key), "expected a string");
  return v.get<std::string>();
}

// Re-labels errors raised by the domain parsers with the offending key path.
template <typename Fn>
auto keyed(const std::string& path, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    const std::string what = e.what();
    const std::string prefix = std::string(to_string(e.kind())) + ": ";
    config_error(path, what.rfind(prefix, 0) == 0 ? what.substr(prefix.size()) : what);
  }
}

std::size_t parse_count(const std::string& text, const std::string& whole) {
  std::size_t value = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    fail(ErrorKind::invalid_config, "bad number '" + text + "' in layer '" + whole + "'");
  }
  return value;
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::string part;
  std::istringstream in(text);
  while (std::getline(in, part, sep)) parts.push_back(part);
  if (!text.empty() && text.back() == sep) parts.emplace_back();
  return parts;
}

const std::pair<const char*, const char*> kAliases[] = {
    {"alpha", "loss.alpha"},   {"gamma", "awp.gamma"},   {"eta", "awp.eta"},
    {"sigma", "loss.kernel.sigma"}, {"variant", "loss.variant"}, {"epochs", "train.epochs"},
    {"seed", "train.seed"},
};

}  // namespace

std::string layer_to_string(const nn::LayerSpec& layer) {
  switch (layer.kind) {
    case nn::LayerKind::conv2d: {
      std::string s = "conv2d:" + std::to_string(layer.units) + ":" + std::to_string(layer.kernel);
      if (layer.stride != 1) s += ":" + std::to_string(layer.stride);
      return s;
    }
    case nn::LayerKind::dense: return "dense:" + std::to_string(layer.units);
    case nn::LayerKind::relu: return "relu";
    case nn::LayerKind::max_pool: return "max-pool:" + std::to_string(layer.kernel);
    case nn::LayerKind::flatten: return "flatten";
  }
  return "?";
}

nn::LayerSpec parse_layer(const std::string& text) {
  const auto parts = split(text, ':');
  if (parts.empty()) fail(ErrorKind::invalid_config, "empty layer");
  const auto kind = nn::parse_layer_kind(parts[0]);
  auto expect = [&](std::size_t lo, std::size_t hi) {
    if (parts.size() < lo || parts.size() > hi) fail(ErrorKind::invalid_config, "malformed layer '" + text + "'");
  };
  switch (kind) {
    case nn::LayerKind::conv2d:
      expect(3, 4);
      return nn::LayerSpec::conv(parse_count(parts[1], text), parse_count(parts[2], text),
                                 parts.size() == 4 ? parse_count(parts[3], text) : 1);
    case nn::LayerKind::dense:
      expect(2, 2);
      return nn::LayerSpec::dense(parse_count(parts[1], text));
    case nn::LayerKind::max_pool:
      expect(1, 2);
      return nn::LayerSpec::max_pool(parts.size() == 2 ? parse_count(parts[1], text) : 2);
    case nn::LayerKind::relu:
      expect(1, 1);
      return nn::LayerSpec::relu();
    case nn::LayerKind::flatten:
      expect(1, 1);
      return nn::LayerSpec::flatten();
  }
  fail(ErrorKind::invalid_config, "malformed layer '" + text + "'");
}

void ExperimentConfig::validate() const {
  if (name.empty()) fail(ErrorKind::invalid_config, "name: must not be empty");
  keyed("data", [&] { data.validate(); return 0; });
  keyed("data.modalities", [&] { quality::validate_modalities(modalities); return 0; });
  keyed("model", [&] { model.validate(); return 0; });
  if (model.input.channels != data.channels || model.input.height != data.image_size ||
      model.input.width != data.image_size) {
    fail(ErrorKind::invalid_config, "model: input shape does not match the data");
  }
  keyed("train", [&] { train.validate(); return 0; });
  keyed("loss", [&] { loss.validate(); return 0; });
  if (!(bound_temperature > 0.0) || !std::isfinite(bound_temperature)) {
    fail(ErrorKind::invalid_config, "eval.bound_temperature: must be positive");
  }
  if (random_quality.enabled &&
      !(random_quality.lo > 0.0 && random_quality.lo <= random_quality.hi && std::isfinite(random_quality.hi))) {
    fail(ErrorKind::invalid_config, "eval.random_quality: need 0 < lo <= hi");
  }
  if (train.awp.enabled() && train.awp.objective == awp::Objective::kl &&
      (!train.all_modalities || modalities.size() < 2)) {
    fail(ErrorKind::invalid_config, "awp.objective: kl needs a degraded training modality");
  }
}

ordered_json to_json(const ExperimentConfig& cfg) {
  ordered_json j;
  j["name"] = cfg.name;
  auto& d = j["data"];
  d["channels"] = cfg.data.channels;
  d["image_size"] = cfg.data.image_size;
  d["background_amplitude"] = cfg.data.background_amplitude;
  d["texture_amplitude"] = cfg.data.texture_amplitude;
  d["mid_amplitude"] = cfg.data.mid_amplitude;
  d["noise"] = cfg.data.noise;
  d["train_size"] = cfg.data.train_size;
  d["val_size"] = cfg.data.val_size;
  d["test_size"] = cfg.data.test_size;
  d["seed"] = cfg.data.seed;
  d["modalities"] = ordered_json::array();
  for (const auto& m : cfg.modalities) d["modalities"].push_back(m.name());
  d["path"] = cfg.data_path;

  auto& m = j["model"];
  m["layers"] = ordered_json::array();
  for (const auto& layer : cfg.model.layers) m["layers"].push_back(layer_to_string(layer));
  m["taps"] = cfg.model.tap_layers;
  m["num_classes"] = cfg.model.num_classes;

  auto& t = j["train"];
  t["epochs"] = cfg.train.epochs;
  t["batch_size"] = cfg.train.batch_size;
  t["lr"] = cfg.train.adam.lr;
  t["beta1"] = cfg.train.adam.beta1;
  t["beta2"] = cfg.train.adam.beta2;
  t["eps"] = cfg.train.adam.eps;
  t["pct_start"] = cfg.train.schedule.pct_start;
  t["div_factor"] = cfg.train.schedule.div_factor;
  t["final_div_factor"] = cfg.train.schedule.final_div_factor;
  t["evals_per_epoch"] = cfg.train.evals_per_epoch;
  t["all_modalities"] = cfg.train.all_modalities;
  t["seed"] = cfg.train.seed;
  t["threads"] = cfg.train.threads;

  auto& a = j["awp"];
  a["gamma"] = cfg.train.awp.gamma;
  a["eta"] = cfg.train.awp.eta;
  a["steps"] = cfg.train.awp.steps;
  a["global_norm"] = cfg.train.awp.global_norm;
  a["objective"] = std::string(awp::to_string(cfg.train.awp.objective));

  auto& l = j["loss"];
  l["alpha"] = cfg.loss.alpha;
  l["variant"] = std::string(train::to_string(cfg.loss.variant));
  l["kernel"]["family"] = std::string(kernels::to_string(cfg.loss.kernel.family));
  l["kernel"]["sigma"] = cfg.loss.kernel.sigma;
  l["kernel"]["bandwidth"] = std::string(kernels::to_string(cfg.loss.kernel.bandwidth_mode));
  l["kernel"]["dim_normalize"] = cfg.loss.kernel.dim_normalize;
  l["pool_taps"] = cfg.loss.pool_taps;
  l["soft_label_mix"] = cfg.loss.soft_label_mix;
  l["soft_label_temperature"] = cfg.loss.soft_label_temperature;

  auto& e = j["eval"];
  e["bound_temperature"] = cfg.bound_temperature;
  e["random_quality"]["enabled"] = cfg.random_quality.enabled;
  e["random_quality"]["lo"] = cfg.random_quality.lo;
  e["random_quality"]["hi"] = cfg.random_quality.hi;
  e["random_quality"]["seed"] = cfg.random_quality.seed;
  return j;
}

ExperimentConfig from_json(const json& doc) {
  ExperimentConfig cfg;
  check_keys(doc, "", {"name", "data", "model", "train", "awp", "loss", "eval"});
  cfg.name = get_string(doc, "", "name", cfg.name);

  if (doc.contains("data")) {
    const auto& d = doc.at("data");
    const std::string p = "data";
    check_keys(d, p, {"channels", "image_size", "background_amplitude", "texture_amplitude", "mid_amplitude",
                      "noise", "train_size", "val_size", "test_size", "seed", "modalities", "path"});
    auto& s = cfg.data;
    s.channels = get_size(d, p, "channels", s.channels);
    s.image_size = get_size(d, p, "image_size", s.image_size);
    s.background_amplitude = get_double(d, p, "background_amplitude", s.background_amplitude);
    s.texture_amplitude = get_double(d, p, "texture_amplitude", s.texture_amplitude);
    s.mid_amplitude = get_double(d, p, "mid_amplitude", s.mid_amplitude);
    s.noise = get_double(d, p, "noise", s.noise);
    s.train_size = get_size(d, p, "train_size", s.train_size);
    s.val_size = get_size(d, p, "val_size", s.val_size);
    s.test_size = get_size(d, p, "test_size", s.test_size);
    s.seed = get_u64(d, p, "seed", s.seed);
    cfg.data_path = get_string(d, p, "path", cfg.data_path);
    if (d.contains("modalities")) {
      const auto& list = d.at("modalities");
      if (!list.is_array()) config_error("data.modalities", "expected an array of names");
      cfg.modalities.clear();
      for (std::size_t i = 0; i < list.size(); ++i) {
        const std::string ip = "data.modalities[" + std::to_string(i) + "]";
        if (!list[i].is_string()) config_error(ip, "expected a modality name");
        cfg.modalities.push_back(keyed(ip, [&] { return quality::parse_modality(list[i].get<std::string>()); }));
      }
    }
  }
  cfg.model.input = {cfg.data.channels, cfg.data.image_size, cfg.data.image_size};

  if (doc.contains("model")) {
    const auto& m = doc.at("model");
    check_keys(m, "model", {"layers", "taps", "num_classes"});
    if (m.contains("layers")) {
      const auto& list = m.at("layers");
      if (!list.is_array()) config_error("model.layers", "expected an array of layer strings");
      cfg.model.layers.clear();
      for (std::size_t i = 0; i < list.size(); ++i) {
        const std::string ip = "model.layers[" + std::to_string(i) + "]";
        if (!list[i].is_string()) config_error(ip, "expected a layer string");
        cfg.model.layers.push_back(keyed(ip, [&] { return parse_layer(list[i].get<std::string>()); }));
      }
    }
    if (m.contains("taps")) {
      const auto& list = m.at("taps");
      if (!list.is_array()) config_error("model.taps", "expected an array of layer indices");
      cfg.model.tap_layers.clear();
      for (std::size_t i = 0; i < list.size(); ++i) {
        if (!list[i].is_number_unsigned()) config_error("model.taps[" + std::to_string(i) + "]", "expected an index");
        cfg.model.tap_layers.push_back(list[i].get<std::size_t>());
      }
    }
    cfg.model.num_classes = get_size(m, "model", "num_classes", cfg.model.num_classes);
  }

  if (doc.contains("train")) {
    const auto& t = doc.at("train");
    const std::string p = "train";
    check_keys(t, p, {"epochs", "batch_size", "lr", "beta1", "beta2", "eps", "pct_start", "div_factor",
                      "final_div_factor", "evals_per_epoch", "all_modalities", "seed", "threads"});
    auto& c = cfg.train;
    c.epochs = get_size(t, p, "epochs", c.epochs);
    c.batch_size = get_size(t, p, "batch_size", c.batch_size);
    c.adam.lr = get_double(t, p, "lr", c.adam.lr);
    c.adam.beta1 = get_double(t, p, "beta1", c.adam.beta1);
    c.adam.beta2 = get_double(t, p, "beta2", c.adam.beta2);
    c.adam.eps = get_double(t, p, "eps", c.adam.eps);
    c.schedule.pct_start = get_double(t, p, "pct_start", c.schedule.pct_start);
    c.schedule.div_factor = get_double(t, p, "div_factor", c.schedule.div_factor);
    c.schedule.final_div_factor = get_double(t, p, "final_div_factor", c.schedule.final_div_factor);
    c.evals_per_epoch = get_size(t, p, "evals_per_epoch", c.evals_per_epoch);
    c.all_modalities = get_bool(t, p, "all_modalities", c.all_modalities);
    c.seed = get_u64(t, p, "seed", c.seed);
    const auto threads = get_u64(t, p, "threads", c.threads);
    if (threads == 0 || threads > 256) config_error("train.threads", "must be in [1, 256]");
    c.threads = static_cast<unsigned>(threads);
  }

  if (doc.contains("awp")) {
    const auto& a = doc.at("awp");
    const std::string p = "awp";
    check_keys(a, p, {"gamma", "eta", "steps", "global_norm", "objective"});
    auto& c = cfg.train.awp;
    c.gamma = get_double(a, p, "gamma", c.gamma);
    c.eta = get_double(a, p, "eta", c.eta);
    c.steps = get_size(a, p, "steps", c.steps);
    c.global_norm = get_bool(a, p, "global_norm", c.global_norm);
    if (a.contains("objective")) {
      const auto text = get_string(a, p, "objective", "");
      c.objective = keyed("awp.objective", [&] { return awp::parse_objective(text); });
    }
  }

  if (doc.contains("loss")) {
    const auto& l = doc.at("loss");
    const std::string p = "loss";
    check_keys(l, p, {"alpha", "variant", "kernel", "pool_taps", "soft_label_mix", "soft_label_temperature"});
    auto& c = cfg.loss;
    c.alpha = get_double(l, p, "alpha", c.alpha);
    if (l.contains("variant")) {
      const auto text = get_string(l, p, "variant", "");
      c.variant = keyed("loss.variant", [&] { return train::parse_variant(text); });
    }
    if (l.contains("kernel")) {
      const auto& k = l.at("kernel");
      const std::string kp = "loss.kernel";
      check_keys(k, kp, {"family", "sigma", "bandwidth", "dim_normalize"});
      if (k.contains("family")) {
        const auto text = get_string(k, kp, "family", "");
        c.kernel.family = keyed("loss.kernel.family", [&] { return kernels::parse_family(text); });
      }
      c.kernel.sigma = get_double(k, kp, "sigma", c.kernel.sigma);
      if (k.contains("bandwidth")) {
        const auto text = get_string(k, kp, "bandwidth", "");
        c.kernel.bandwidth_mode = keyed("loss.kernel.bandwidth", [&] { return kernels::parse_bandwidth_mode(text); });
      }
      c.kernel.dim_normalize = get_bool(k, kp, "dim_normalize", c.kernel.dim_normalize);
    }
    c.pool_taps = get_bool(l, p, "pool_taps", c.pool_taps);
    c.soft_label_mix = get_double(l, p, "soft_label_mix", c.soft_label_mix);
    c.soft_label_temperature = get_double(l, p, "soft_label_temperature", c.soft_label_temperature);
  }

  if (doc.contains("eval")) {
    const auto& e = doc.at("eval");
    check_keys(e, "eval", {"bound_temperature", "random_quality"});
    cfg.bound_temperature = get_double(e, "eval", "bound_temperature", cfg.bound_temperature);
    if (e.contains("random_quality")) {
      const auto& r = e.at("random_quality");
      const std::string p = "eval.random_quality";
      check_keys(r, p, {"enabled", "lo", "hi", "seed"});
      auto& c = cfg.random_quality;
      c.enabled = get_bool(r, p, "enabled", c.enabled);
      c.lo = get_double(r, p, "lo", c.lo);
      c.hi = get_double(r, p, "hi", c.hi);
      c.seed = get_u64(r, p, "seed", c.seed);
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::invalid_config, "cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::invalid_config, path.string() + ": " + e.what());
  }
  // A run manifest carries the resolved config under "config".
  if (doc.is_object() && doc.contains("config") && doc.contains("config_hash")) return from_json(doc.at("config"));
  return from_json(doc);
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    fail(ErrorKind::invalid_config, "override '" + assignment + "' is not of the form key=value");
  }
  std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  for (const auto& [alias, full] : kAliases) {
    if (key == alias) key = full;
  }
  json* node = &doc;
  const auto parts = split(key, '.');
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i])) {
      fail(ErrorKind::invalid_config, key + ": unknown key");
    }
    node = &(*node)[parts[i]];
  }
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  *node = std::move(value);
}

ExperimentConfig with_overrides(const ExperimentConfig& base, const std::vector<std::string>& assignments) {
  json doc = json::parse(to_json(base).dump());
  for (const auto& a : assignments) apply_override(doc, a);
  return from_json(doc);
}

std::string git_blob_sha1(const std::string& content) {
  const std::string blob = "blob " + std::to_string(content.size()) + std::string(1, '\0') + content;
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(blob.data(), blob.size(), digest, &length, EVP_sha1(), nullptr) != 1) {
    fail(ErrorKind::io, "SHA-1 digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < length; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::string config_hash(const ExperimentConfig& cfg) {
  // Sorted keys, compact separators: independent of field order in the file.
  return git_blob_sha1(json::parse(to_json(cfg).dump()).dump());
}

std::string format_number(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  (void)ec;
  return std::string(buf, ptr);
}

GridAxis parse_grid_axis(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == text.size()) {
    fail(ErrorKind::invalid_config, "grid axis '" + text + "' is not of the form key=v1,v2");
  }
  GridAxis axis;
  axis.key = text.substr(0, eq);
  axis.values = split(text.substr(eq + 1), ',');
  for (const auto& v : axis.values) {
    if (v.empty()) fail(ErrorKind::invalid_config, "grid axis '" + text + "' has an empty value");
  }
  return axis;
}

std::vector<AblationCell> expand_grid(const ExperimentConfig& base, const std::vector<GridAxis>& grid) {
  if (grid.empty()) fail(ErrorKind::invalid_config, "ablation grid is empty");
  std::size_t total = 1;
  for (const auto& axis : grid) {
    if (axis.values.empty()) fail(ErrorKind::invalid_config, "grid axis " + axis.key + " has no values");
    total *= axis.values.size();
  }
  std::vector<AblationCell> cells;
  for (std::size_t c = 0; c < total; ++c) {
    AblationCell cell;
    std::size_t rest = c;
    std::vector<std::size_t> pick(grid.size());
    for (std::size_t a = grid.size(); a-- > 0;) {
      pick[a] = rest % grid[a].values.size();
      rest /= grid[a].values.size();
    }
    for (std::size_t a = 0; a < grid.size(); ++a) cell.assignments.push_back(grid[a].key + "=" + grid[a].values[pick[a]]);
    char id[32];
    std::snprintf(id, sizeof id, "cell-%03zu", c);
    cell.id = id;
    cell.config = with_overrides(base, cell.assignments);
    if (cell.config.loss.alpha == 0.0 && cell.config.train.awp.gamma == 0.0) {
      cell.label = "baseline";
    } else {
      for (const auto& a : cell.assignments) cell.label += (cell.label.empty() ? "" : " ") + a;
    }
    cells.push_back(std::move(cell));
  }
  return cells;
}

}  // namespace qad::exp
