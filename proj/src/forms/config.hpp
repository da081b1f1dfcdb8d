#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "forms/admm.hpp"
#include "forms/dataset.hpp"
#include "forms/mapper.hpp"
#include "forms/perf_model.hpp"

namespace forms {

struct ModelSpec {
  std::string kind = "toy_cnn";  // "toy_cnn" or "mlp"
  Shape3 input{1, 8, 8};
  std::size_t conv1 = 16;
  std::size_t conv2 = 32;
  std::size_t hidden = 64;  // mlp only
  std::size_t classes = 10;
  std::string weights;      // optional pretrained container; empty = train from scratch
  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct PretrainSpec {
  std::size_t epochs = 20;
  double lr = 0.05;
  std::size_t batch_size = 32;
  friend bool operator==(const PretrainSpec&, const PretrainSpec&) = default;
};

struct SimulateSpec {
  double sigma = 0.0;
  double mu = 0.0;
  bool zero_skip = true;
  unsigned adc_bits = 0;           // 0 = non-saturating for the fragment size
  std::size_t images = 300;        // test images run through the crossbar engine
  std::size_t calibration = 256;   // training images used to pick activation exponents
  bool trace = false;              // write the per-fragment trace of the first image
  std::size_t variation_runs = 0;  // extra seeded runs at `sigma` for the degradation CI
  friend bool operator==(const SimulateSpec&, const SimulateSpec&) = default;
};

struct EicSpec {
  std::vector<std::size_t> fragment_sizes{4, 8, 16, 128};
  std::size_t images = 100;
  friend bool operator==(const EicSpec&, const EicSpec&) = default;
};

struct ReportSpec {
  std::string baseline = "isaac";  // see arch_by_name
  std::vector<std::string> formats{"json", "csv", "text"};
  std::optional<HardwareSpec> hardware;  // replaces the FORMS hardware constants
  friend bool operator==(const ReportSpec&, const ReportSpec&) = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  ModelSpec model;
  SyntheticSpec data;
  PretrainSpec pretrain;
  CompressionConfig compression;
  CrossbarSpec crossbar;
  SimulateSpec simulate;
  EicSpec eic;
  ReportSpec report;

  ExperimentConfig();
  // Copies seed and fragment size into the sub-configs that depend on them.
  void sync();
  void validate() const;
  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
// Unknown keys and type mismatches throw ConfigError naming the key.
void from_json(const nlohmann::json& j, ExperimentConfig& c);

ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const ExperimentConfig& c);

// FNV-1a over the canonical serialisation.
std::uint64_t config_hash(const ExperimentConfig& c);
std::string config_hash_hex(const ExperimentConfig& c);

// Command-line style override: key in {seed, fragment-size, quant-bits,
// adc-bits, no-skip, sigma, baseline}.
void apply_override(ExperimentConfig& c, const std::string& key, const std::string& value);

ModelGraph build_model(const ExperimentConfig& c);

// "isaac", "isaac-pq" (pruned, quantized, polarized ISAAC), "forms4", "forms8", "forms16".
ArchConfig arch_by_name(const std::string& name);

}  // namespace forms
