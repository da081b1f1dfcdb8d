#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "forms/config.hpp"
#include "forms/perf_model.hpp"

namespace forms {

inline constexpr const char* tool_version = "0.3.1";

enum class Stage { compress, map, simulate, eic, report };
const char* to_string(Stage s);
Stage parse_stage(const std::string& s);
// Stages whose artifacts `s` reads.
std::vector<Stage> upstream(Stage s);

struct StageResult {
  Stage stage = Stage::compress;
  std::filesystem::path dir;
  std::vector<std::string> artifacts;  // relative to dir
  double seconds = 0.0;
};

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
};

void write_csv(std::ostream& out, const Table& t);
// Fixed-width, right-aligned, one header rule.
void write_text_table(std::ostream& out, const Table& t, const std::string& title = {});

// Every SimReport field, one row per report.
Table sim_report_table(const std::vector<SimReport>& reports);

struct ReportData {
  std::vector<SimReport> sims;
  Table reduction;   // layer, prune_ratio, fragment_size, crossbar_reduction, ...
  Table throughput;  // architecture, area/power efficiency, ...
  Table speedup;     // factor, ratio
  nlohmann::json extra = nlohmann::json::object();
};

// Writes report.json / *.csv / report.txt under `dir` for the requested
// formats and returns the file names. Throws IoError when `dir` is unwritable.
std::vector<std::string> emit_report(const ReportData& data, const std::vector<std::string>& formats,
                                     const std::filesystem::path& dir);

Table reduction_table_header();
Table throughput_table(const std::vector<ThroughputRow>& rows);

// Artifacts live in <out_root>/<config hash>/ next to manifest.json.
class Pipeline {
 public:
  using Logger = std::function<void(const std::string&)>;

  Pipeline(ExperimentConfig config, std::filesystem::path out_root, Logger log = {});

  const ExperimentConfig& config() const { return config_; }
  std::string hash() const { return hash_; }
  std::filesystem::path artifact_dir() const { return dir_; }

  // Throws Error(stage_order) when an upstream stage has not run, and
  // Error(corrupt_artifact) when one of its artifacts fails its checksum.
  // A compress run that fails verification still writes its artifacts and
  // then throws Error(constraint_violation).
  StageResult run(Stage stage);
  std::vector<StageResult> run_all();

  nlohmann::json manifest() const;

 private:
  void check_upstream(Stage stage) const;
  void record(const StageResult& r);
  std::vector<std::string> stage_compress();
  std::vector<std::string> stage_map();
  std::vector<std::string> stage_simulate();
  std::vector<std::string> stage_eic();
  std::vector<std::string> stage_report();
  void say(const std::string& msg) const;

  ExperimentConfig config_;
  std::filesystem::path dir_;
  std::string hash_;
  Logger log_;
};

}  // namespace forms
