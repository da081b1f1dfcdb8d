#include "forms/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "forms/errors.hpp"
#include "forms/rng.hpp"

namespace forms {

namespace {

using nlohmann::json;

void expect_object(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError("'" + where + "' must be an object");
}

// Calls f(key, value) for each entry; rethrows json type errors as ConfigError.
template <typename F>
void each_key(const json& j, const std::string& where, F&& f) {
  expect_object(j, where);
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string path = where.empty() ? it.key() : where + "." + it.key();
    try {
      if (!f(it.key(), it.value())) throw ConfigError("unknown config key '" + path + "'");
    } catch (const json::exception& e) {
      throw ConfigError("bad value for '" + path + "': " + e.what());
    }
  }
}

json knobs_json(const LayerKnobs& k) { return {{"alpha", k.alpha}, {"beta", k.beta}, {"rho", k.rho}}; }

LayerKnobs knobs_from(const json& j, const std::string& where, LayerKnobs k) {
  each_key(j, where, [&](const std::string& key, const json& v) {
    if (key == "alpha") k.alpha = v.get<double>();
    else if (key == "beta") k.beta = v.get<double>();
    else if (key == "rho") k.rho = v.get<double>();
    else return false;
    return true;
  });
  return k;
}

std::uint64_t get_u64(const json& v) {
  if (!v.is_number_unsigned()) throw ConfigError("expected an unsigned integer, got " + v.dump());
  return v.get<std::uint64_t>();
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  compression.defaults = {0.5, 0.5, 0.1};
  compression.layers["fc"] = {1.0, 0.5, 0.1};
  compression.fragment_size = 4;
  compression.epochs = 12;
  sync();
}

void ExperimentConfig::sync() {
  data.seed = seed;
  compression.seed = seed;
  crossbar.subarray_rows = compression.fragment_size;
  crossbar.cell_bits = compression.cell_bits;
  crossbar.adc_bits = simulate.adc_bits;
  data.shape = model.input;
  data.classes = model.classes;
}

void ExperimentConfig::validate() const {
  if (model.kind != "toy_cnn" && model.kind != "mlp")
    throw ConfigError("model.kind must be 'toy_cnn' or 'mlp'");
  if (model.input.size() == 0) throw ConfigError("model.input must be non-empty");
  if (model.classes < 2) throw ConfigError("model.classes must be >= 2");
  if (model.kind == "toy_cnn" && (model.conv1 == 0 || model.conv2 == 0))
    throw ConfigError("model.conv1 and model.conv2 must be >= 1");
  if (model.kind == "toy_cnn" && (model.input.h < 6 || model.input.w < 6))
    throw ConfigError("model.input must be at least 6x6 for the toy CNN");
  if (model.kind == "mlp" && model.hidden == 0) throw ConfigError("model.hidden must be >= 1");
  if (data.train == 0 || data.test == 0) throw ConfigError("data.train and data.test must be >= 1");
  if (!(data.noise >= 0.0)) throw ConfigError("data.noise must be >= 0");
  if (data.max_shift < 0) throw ConfigError("data.max_shift must be >= 0");
  if (!(pretrain.lr > 0.0)) throw ConfigError("pretrain.lr must be positive");
  if (pretrain.batch_size == 0) throw ConfigError("pretrain.batch_size must be >= 1");
  compression.validate();
  crossbar.validate();
  if (!(simulate.sigma >= 0.0) || !std::isfinite(simulate.sigma)) throw ConfigError("simulate.sigma must be >= 0");
  if (!std::isfinite(simulate.mu)) throw ConfigError("simulate.mu must be finite");
  if (simulate.adc_bits > 16) throw ConfigError("simulate.adc_bits must be in [0, 16]");
  if (simulate.images == 0) throw ConfigError("simulate.images must be >= 1");
  if (simulate.calibration == 0) throw ConfigError("simulate.calibration must be >= 1");
  if (eic.fragment_sizes.empty()) throw ConfigError("eic.fragment_sizes must be non-empty");
  for (auto m : eic.fragment_sizes)
    if (m == 0) throw ConfigError("eic.fragment_sizes entries must be >= 1");
  if (eic.images == 0) throw ConfigError("eic.images must be >= 1");
  arch_by_name(report.baseline);
  for (const auto& f : report.formats)
    if (f != "json" && f != "csv" && f != "text") throw ConfigError("report.formats: unknown format '" + f + "'");
  if (report.hardware) report.hardware->validate();
}

void to_json(json& j, const ExperimentConfig& c) {
  json layers = json::object();
  for (const auto& [name, k] : c.compression.layers) layers[name] = knobs_json(k);
  const auto& cc = c.compression;
  j = {{"seed", c.seed},
       {"model",
        {{"kind", c.model.kind},
         {"input", {c.model.input.c, c.model.input.h, c.model.input.w}},
         {"conv1", c.model.conv1},
         {"conv2", c.model.conv2},
         {"hidden", c.model.hidden},
         {"classes", c.model.classes},
         {"weights", c.model.weights}}},
       {"data",
        {{"train", c.data.train}, {"test", c.data.test}, {"noise", c.data.noise}, {"max_shift", c.data.max_shift}}},
       {"pretrain", {{"epochs", c.pretrain.epochs}, {"lr", c.pretrain.lr}, {"batch_size", c.pretrain.batch_size}}},
       {"compression",
        {{"defaults", knobs_json(cc.defaults)},
         {"layers", layers},
         {"fragment_size", cc.fragment_size},
         {"polarization_order", to_string(cc.polarization_order)},
         {"quant_bits", cc.quant_bits},
         {"cell_bits", cc.cell_bits},
         {"epochs", cc.epochs},
         {"sign_update_interval", cc.sign_update_interval},
         {"lr", cc.lr},
         {"batch_size", cc.batch_size},
         {"crossbar_aware", cc.crossbar_aware},
         {"polarize", cc.polarize},
         {"quantize", cc.quantize}}},
       {"crossbar", c.crossbar},
       {"simulate",
        {{"sigma", c.simulate.sigma},
         {"mu", c.simulate.mu},
         {"zero_skip", c.simulate.zero_skip},
         {"adc_bits", c.simulate.adc_bits},
         {"images", c.simulate.images},
         {"calibration", c.simulate.calibration},
         {"trace", c.simulate.trace},
         {"variation_runs", c.simulate.variation_runs}}},
       {"eic", {{"fragment_sizes", c.eic.fragment_sizes}, {"images", c.eic.images}}},
       {"report", {{"baseline", c.report.baseline}, {"formats", c.report.formats}}}};
  if (c.report.hardware) j["report"]["hardware"] = *c.report.hardware;
}

void from_json(const json& j, ExperimentConfig& c) {
  json crossbar_overrides;
  each_key(j, "", [&](const std::string& key, const json& v) {
    if (key == "seed") c.seed = get_u64(v);
    else if (key == "model") {
      each_key(v, "model", [&](const std::string& k, const json& x) {
        if (k == "kind") c.model.kind = x.get<std::string>();
        else if (k == "input") {
          const auto d = x.get<std::vector<std::size_t>>();
          if (d.size() != 3) throw ConfigError("model.input must be [channels, height, width]");
          c.model.input = {d[0], d[1], d[2]};
        } else if (k == "conv1") c.model.conv1 = x.get<std::size_t>();
        else if (k == "conv2") c.model.conv2 = x.get<std::size_t>();
        else if (k == "hidden") c.model.hidden = x.get<std::size_t>();
        else if (k == "classes") c.model.classes = x.get<std::size_t>();
        else if (k == "weights") c.model.weights = x.get<std::string>();
        else return false;
        return true;
      });
    } else if (key == "data") {
      each_key(v, "data", [&](const std::string& k, const json& x) {
        if (k == "train") c.data.train = x.get<std::size_t>();
        else if (k == "test") c.data.test = x.get<std::size_t>();
        else if (k == "noise") c.data.noise = x.get<double>();
        else if (k == "max_shift") c.data.max_shift = x.get<int>();
        else return false;
        return true;
      });
    } else if (key == "pretrain") {
      each_key(v, "pretrain", [&](const std::string& k, const json& x) {
        if (k == "epochs") c.pretrain.epochs = x.get<std::size_t>();
        else if (k == "lr") c.pretrain.lr = x.get<double>();
        else if (k == "batch_size") c.pretrain.batch_size = x.get<std::size_t>();
        else return false;
        return true;
      });
    } else if (key == "compression") {
      auto& cc = c.compression;
      each_key(v, "compression", [&](const std::string& k, const json& x) {
        if (k == "defaults") cc.defaults = knobs_from(x, "compression.defaults", cc.defaults);
        else if (k == "layers") {
          expect_object(x, "compression.layers");
          cc.layers.clear();
          for (auto it = x.begin(); it != x.end(); ++it)
            cc.layers[it.key()] = knobs_from(it.value(), "compression.layers." + it.key(), cc.defaults);
        } else if (k == "fragment_size") cc.fragment_size = x.get<std::size_t>();
        else if (k == "polarization_order") cc.polarization_order = parse_polarization_order(x.get<std::string>());
        else if (k == "quant_bits") cc.quant_bits = x.get<unsigned>();
        else if (k == "cell_bits") cc.cell_bits = x.get<unsigned>();
        else if (k == "epochs") cc.epochs = x.get<std::size_t>();
        else if (k == "sign_update_interval") cc.sign_update_interval = x.get<std::size_t>();
        else if (k == "lr") cc.lr = x.get<double>();
        else if (k == "batch_size") cc.batch_size = x.get<std::size_t>();
        else if (k == "crossbar_aware") cc.crossbar_aware = x.get<bool>();
        else if (k == "polarize") cc.polarize = x.get<bool>();
        else if (k == "quantize") cc.quantize = x.get<bool>();
        else if (k == "seed") throw ConfigError("compression.seed is taken from the top-level 'seed'");
        else return false;
        return true;
      });
    } else if (key == "crossbar") {
      expect_object(v, "crossbar");
      crossbar_overrides = v;
      from_json(v, c.crossbar);
    } else if (key == "simulate") {
      auto& s = c.simulate;
      each_key(v, "simulate", [&](const std::string& k, const json& x) {
        if (k == "sigma") s.sigma = x.get<double>();
        else if (k == "mu") s.mu = x.get<double>();
        else if (k == "zero_skip") s.zero_skip = x.get<bool>();
        else if (k == "adc_bits") s.adc_bits = x.get<unsigned>();
        else if (k == "images") s.images = x.get<std::size_t>();
        else if (k == "calibration") s.calibration = x.get<std::size_t>();
        else if (k == "trace") s.trace = x.get<bool>();
        else if (k == "variation_runs") s.variation_runs = x.get<std::size_t>();
        else return false;
        return true;
      });
    } else if (key == "eic") {
      each_key(v, "eic", [&](const std::string& k, const json& x) {
        if (k == "fragment_sizes") c.eic.fragment_sizes = x.get<std::vector<std::size_t>>();
        else if (k == "images") c.eic.images = x.get<std::size_t>();
        else return false;
        return true;
      });
    } else if (key == "report") {
      each_key(v, "report", [&](const std::string& k, const json& x) {
        if (k == "baseline") c.report.baseline = x.get<std::string>();
        else if (k == "formats") c.report.formats = x.get<std::vector<std::string>>();
        else if (k == "hardware") {
          if (x.is_null()) c.report.hardware.reset();
          else if (x.is_string()) c.report.hardware = hardware_by_name(x.get<std::string>());
          else {
            HardwareSpec hw = forms_hardware(8);
            from_json(x, hw);
            c.report.hardware = hw;
          }
        } else return false;
        return true;
      });
    } else {
      return false;
    }
    return true;
  });
  // Mirrored knobs have a single owner; a conflicting crossbar entry is an error.
  auto check_mirror = [&](const char* key, std::size_t owner, const char* owner_key) {
    if (crossbar_overrides.contains(key) && crossbar_overrides[key].get<std::size_t>() != owner)
      throw ConfigError(std::string("crossbar.") + key + " conflicts with " + owner_key);
  };
  check_mirror("subarray_rows", c.compression.fragment_size, "compression.fragment_size");
  check_mirror("cell_bits", c.compression.cell_bits, "compression.cell_bits");
  check_mirror("adc_bits", c.simulate.adc_bits, "simulate.adc_bits");
  c.sync();
}

ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  from_json(j, c);
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& c) {
  json j = c;
  return j.dump(2);
}

std::uint64_t config_hash(const ExperimentConfig& c) {
  const std::string s = json(c).dump();
  return fnv1a(s.data(), s.size());
}

std::string config_hash_hex(const ExperimentConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(config_hash(c)));
  return buf;
}

void apply_override(ExperimentConfig& c, const std::string& key, const std::string& value) {
  auto to_u64 = [&](const std::string& s) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      if (!s.empty() && s[0] == '-') throw std::invalid_argument("negative");
      v = std::stoull(s, &pos);
    } catch (const std::exception&) {
      throw ConfigError("--" + key + " expects an unsigned integer, got '" + s + "'");
    }
    if (pos != s.size()) throw ConfigError("--" + key + " expects an unsigned integer, got '" + s + "'");
    return static_cast<std::uint64_t>(v);
  };
  if (key == "seed") c.seed = to_u64(value);
  else if (key == "fragment-size") c.compression.fragment_size = to_u64(value);
  else if (key == "quant-bits") c.compression.quant_bits = static_cast<unsigned>(to_u64(value));
  else if (key == "adc-bits") c.simulate.adc_bits = static_cast<unsigned>(to_u64(value));
  else if (key == "no-skip") c.simulate.zero_skip = false;
  else if (key == "sigma") {
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(value, &pos);
    } catch (const std::exception&) {
      pos = std::string::npos;
    }
    if (pos != value.size()) throw ConfigError("--sigma expects a number, got '" + value + "'");
    c.simulate.sigma = v;
  } else if (key == "baseline") c.report.baseline = value;
  else throw ConfigError("unknown option '" + key + "'");
  c.sync();
  c.validate();
}

ModelGraph build_model(const ExperimentConfig& c) {
  const std::uint64_t seed = derive_seed(c.seed, fnv1a("model", 5));
  if (c.model.kind == "mlp") return make_mlp(c.model.input, c.model.hidden, c.model.classes, seed);
  return make_toy_cnn(c.model.input, c.model.conv1, c.model.conv2, c.model.classes, seed);
}

ArchConfig arch_by_name(const std::string& name) {
  if (name == "isaac") return isaac_baseline();
  if (name == "isaac-pq") {
    ArchConfig a = isaac_baseline();
    a.name = "PQ-ISAAC (8-bit, pruned)";
    a.pruned = true;
    a.weight_bits = 8;
    return a;
  }
  if (name == "forms4") return forms_full(4);
  if (name == "forms8" || name == "forms") return forms_full(8);
  if (name == "forms16") return forms_full(16);
  throw ConfigError("unknown baseline '" + name + "' (expected isaac, isaac-pq, forms4, forms8 or forms16)");
}

}  // namespace forms
