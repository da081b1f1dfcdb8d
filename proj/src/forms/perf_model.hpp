#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"

#include "forms/mapper.hpp"
#include "forms/zero_skip.hpp"

namespace forms {

struct Component {
  std::string name;
  std::string spec;  // e.g. "4-bit / 2.1GHz / 32"
  double power_mw = 0.0;
  double area_mm2 = 0.0;
  friend bool operator==(const Component&, const Component&) = default;
};

struct Block {
  double power_mw = 0.0;
  double area_mm2 = 0.0;
  friend bool operator==(const Block&, const Block&) = default;
};

enum class ArchKind { forms, isaac };
const char* to_string(ArchKind k);

struct HardwareSpec {
  std::string name;
  ArchKind arch = ArchKind::forms;
  CrossbarSpec crossbar;
  std::vector<Component> mcu_components;  // one MCU's peripherals and arrays
  Block digital_unit;                     // per tile
  Block mcus_per_tile;                    // all MCUs of one tile
  Block tiles_total;                      // all tiles
  Block links;                            // off-chip links
  std::size_t edram_kb_per_tile = 128;
  double static_fraction = 0.5;           // share of power drawn regardless of activity
  std::size_t pipeline_stages = 22;
  std::size_t pooling_stages = 4;

  Block tile() const { return {digital_unit.power_mw + mcus_per_tile.power_mw, tiles_total.area_mm2 / crossbar.tiles}; }
  Block chip() const { return {tiles_total.power_mw + links.power_mw, tiles_total.area_mm2 + links.area_mm2}; }
  double mcu_component_power_mw() const;
  double mcu_component_area_mm2() const;
  // Cycle time of one input bit-plane on one sub-array row band.
  double cycle_time_ns() const;
  // Rows summed by one ADC conversion: m for FORMS, the full crossbar for ISAAC.
  std::size_t rows_per_conversion() const;
  void validate() const;
  friend bool operator==(const HardwareSpec&, const HardwareSpec&) = default;
};

// FORMS with fragment size 4, 8 or 16 (3-, 4- and 5-bit ADCs).
HardwareSpec forms_hardware(std::size_t fragment_size = 8);
HardwareSpec isaac_hardware();
// "isaac", "forms4", "forms8", "forms16".
HardwareSpec hardware_by_name(const std::string& name);

void to_json(nlohmann::json& j, const HardwareSpec& s);
void from_json(const nlohmann::json& j, HardwareSpec& s);

// cols_per_adc / freq, in ns.
double cycle_time(double cols_per_adc, double adc_freq_ghz);

struct LayerLatency {
  std::size_t compute_cycles = 0;
  std::size_t pipeline_stages = 0;
  double compute_ns = 0.0;
  double fill_ns = 0.0;
  double total_ns() const { return compute_ns + fill_ns; }
};

// Compute cycles are the summed per-wave cycles.
LayerLatency layer_latency(const std::vector<std::size_t>& wave_cycles, bool pooled, const HardwareSpec& hw);
// Waves taken from the EIC statistics of the same activation stream.
LayerLatency layer_latency(const EicStats& stats, bool zero_skip, bool pooled, const HardwareSpec& hw);

struct ComponentActivity {
  std::string name;
  double power_mw = 0.0;      // per instance
  double instances = 1.0;
  double active_seconds = 0.0;  // summed over instances
};

struct EnergyBreakdown {
  double static_j = 0.0;
  double dynamic_j = 0.0;
  double total_j() const { return static_j + dynamic_j; }
};

// static_fraction * P * instances * wall + (1 - static_fraction) * P * active.
EnergyBreakdown energy_estimate(const std::vector<ComponentActivity>& activity, double wall_seconds,
                                double static_fraction = 0.5);

struct SimReport {
  std::string config;
  double total_cycles = 0.0;      // bit-serial crossbar cycles per frame
  double crossbar_seconds = 0.0;  // crossbar-time per frame
  double frame_time_s = 0.0;      // steady state, = 1 / fps
  double fill_latency_s = 0.0;    // pipeline fill of one frame
  double wall_time_s = 0.0;       // for `frames` frames
  double frames = 1.0;
  double energy_j = 0.0;
  double power_w = 0.0;
  double area_mm2 = 0.0;
  double ops_per_frame = 0.0;
  double gops = 0.0;
  double gops_per_mm2 = 0.0;
  double gops_per_w = 0.0;
  double fps = 0.0;
  double speedup = 1.0;
  std::string baseline;
  std::size_t crossbars_mapped = 0;
  bool constant_driven = false;
};

void to_json(nlohmann::json& j, const SimReport& r);

struct Throughput {
  double gops = 0.0;
  double gops_per_mm2 = 0.0;
  double gops_per_w = 0.0;
};

// Straight ratios; throws ShapeError for a non-positive op count, area or power.
Throughput throughput_metrics(double ops, double seconds, double area_mm2, double power_w);

// One weighted layer as seen by the performance model.
struct LayerWorkload {
  std::string name;
  std::size_t rows = 0, filters = 0;            // dense shape
  std::size_t kept_rows = 0, kept_filters = 0;  // after structured pruning
  std::size_t waves = 1;                        // input vectors per frame
  bool pooled = false;
  std::size_t fragment_size = 8;                // partition the EIC sums refer to
  double slot_eic_dense = 0.0;  // per frame: sum over waves and rows of covering-fragment EIC
  double slot_eic_kept = 0.0;   // same over retained rows only
  EicStats eic;                 // kept-row fragment statistics over all measured frames
  double macs() const { return static_cast<double>(rows) * filters * waves; }
};

struct Workload {
  std::string name;
  std::vector<LayerWorkload> layers;
  double frames_measured = 1.0;
  double ops_per_frame() const;  // 2 * dense MACs
};

struct ArchConfig {
  std::string name;
  HardwareSpec hw;
  bool pruned = false;
  unsigned weight_bits = 32;
  bool polarized = false;  // false: two columns per weight (split / offset)
  bool zero_skip = false;
  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

ArchConfig isaac_baseline();
ArchConfig forms_full(std::size_t fragment_size = 8);

SimReport evaluate(const ArchConfig& config, const Workload& workload, double frames = 1.0);

struct SpeedupBreakdown {
  double total = 1.0;
  double pruning = 1.0;
  double quantization = 1.0;
  double polarization = 1.0;
  double zero_skip = 1.0;
  double product() const { return pruning * quantization * polarization * zero_skip; }
  SimReport a, b;
};

// fps(a) / fps(b), with each factor measured by toggling one optimisation.
SpeedupBreakdown speedup_compare(const ArchConfig& a, const ArchConfig& b, const Workload& workload);

struct ThroughputRow {
  std::string architecture;
  double area_efficiency = 0.0;   // GOPs/(s*mm^2), normalised to ISAAC
  double power_efficiency = 0.0;  // GOPs/W, normalised to ISAAC
  double published_area = 0.0;
  double published_power = 0.0;
  bool modelled = false;          // false: published constant carried through
  double throughput_factor = 1.0;
  double power_factor = 1.0;
};

// Throughput table, normalised to ISAAC. Rows marked modelled are computed
// through throughput_metrics from the chip constants and per-profile
// effective-throughput / power factors; all of it is constant-driven.
std::vector<ThroughputRow> throughput_comparison();

}  // namespace forms
