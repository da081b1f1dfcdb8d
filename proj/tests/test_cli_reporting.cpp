#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "forms/config.hpp"
#include "forms/container.hpp"
#include "forms/errors.hpp"
#include "forms/pipeline.hpp"

using namespace forms;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ExperimentConfig small_config(std::uint64_t seed = 3) {
  ExperimentConfig c;
  c.seed = seed;
  c.model.kind = "mlp";
  c.model.hidden = 24;
  c.data.train = 300;
  c.data.test = 60;
  c.pretrain.epochs = 3;
  c.compression.epochs = 3;
  c.compression.layers.clear();
  c.simulate.images = 20;
  c.simulate.calibration = 64;
  c.eic.fragment_sizes = {4, 8};
  c.eic.images = 10;
  c.sync();
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("forms_cli_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string config_error(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("defaults validate and round trip") {
    const ExperimentConfig c;
    CHECK_NOTHROW(c.validate());
    const ExperimentConfig back = parse_config(serialize_config(c));
    CHECK(back == c);
    CHECK(serialize_config(back) == serialize_config(c));
    CHECK(config_hash(back) == config_hash(c));
  }

  TEST_CASE("a modified config round trips") {
    ExperimentConfig c = small_config();
    c.compression.layers["fc1"] = {0.25, 0.75, 0.2};
    c.report.formats = {"csv"};
    c.simulate.sigma = 0.1;
    c.sync();
    CHECK(parse_config(serialize_config(c)) == c);
  }

  TEST_CASE("hash is stable and sensitive") {
    const ExperimentConfig a = small_config();
    CHECK(config_hash(a) == config_hash(small_config()));
    CHECK(config_hash_hex(a).size() == 16);
    ExperimentConfig b = a;
    b.seed = 4;
    b.sync();
    CHECK(config_hash(b) != config_hash(a));
    b = a;
    b.simulate.sigma = 0.05;
    CHECK(config_hash(b) != config_hash(a));
    b = a;
    b.compression.layers["fc1"] = {0.5, 0.5, 0.1};
    CHECK(config_hash(b) != config_hash(a));
  }

  TEST_CASE("unknown keys name their path") {
    CHECK(config_error(R"({"simulate": {"sigmaa": 0.1}})").find("simulate.sigmaa") != std::string::npos);
    CHECK(config_error(R"({"bogus": 1})").find("bogus") != std::string::npos);
    CHECK(config_error(R"({"compression": {"layers": {"fc": {"gamma": 1}}}})").find("compression.layers.fc.gamma") !=
          std::string::npos);
  }

  TEST_CASE("type mismatches and bad values") {
    CHECK(config_error(R"({"simulate": {"sigma": "high"}})").find("simulate.sigma") != std::string::npos);
    CHECK(config_error(R"({"seed": -1})") != "");
    CHECK(config_error(R"({"model": {"input": [1, 8]}})") != "");
    CHECK(config_error(R"({"model": {"kind": "resnet"}})") != "");
    CHECK(config_error(R"({"simulate": {"sigma": -0.1}})") != "");
    CHECK(config_error(R"({"report": {"formats": ["pdf"]}})") != "");
    CHECK(config_error(R"({"report": {"baseline": "tpu"}})") != "");
    CHECK(config_error("{not json") != "");
  }

  TEST_CASE("compression seed comes from the top level") {
    CHECK(config_error(R"({"compression": {"seed": 5}})").find("seed") != std::string::npos);
    const ExperimentConfig c = parse_config(R"({"seed": 9})");
    CHECK(c.compression.seed == 9);
    CHECK(c.data.seed == 9);
  }

  TEST_CASE("mirrored crossbar knobs must agree") {
    CHECK(config_error(R"({"compression": {"fragment_size": 8}, "crossbar": {"subarray_rows": 4}})")
              .find("conflicts") != std::string::npos);
    const ExperimentConfig c = parse_config(R"({"compression": {"fragment_size": 8}, "crossbar": {"subarray_rows": 8}})");
    CHECK(c.crossbar.subarray_rows == 8);
    CHECK(parse_config(R"({"compression": {"fragment_size": 16}})").crossbar.subarray_rows == 16);
  }

  TEST_CASE("overrides") {
    ExperimentConfig c = small_config();
    apply_override(c, "seed", "11");
    CHECK(c.seed == 11);
    CHECK(c.compression.seed == 11);
    apply_override(c, "fragment-size", "8");
    CHECK(c.compression.fragment_size == 8);
    CHECK(c.crossbar.subarray_rows == 8);
    apply_override(c, "quant-bits", "4");
    CHECK(c.compression.quant_bits == 4);
    apply_override(c, "adc-bits", "6");
    CHECK(c.crossbar.adc_bits == 6);
    apply_override(c, "no-skip", "");
    CHECK_FALSE(c.simulate.zero_skip);
    apply_override(c, "sigma", "0.25");
    CHECK(c.simulate.sigma == 0.25);
    apply_override(c, "baseline", "forms16");
    CHECK(c.report.baseline == "forms16");
    CHECK_THROWS_AS(apply_override(c, "seed", "-3"), ConfigError);
    CHECK_THROWS_AS(apply_override(c, "seed", "12abc"), ConfigError);
    CHECK_THROWS_AS(apply_override(c, "sigma", "x"), ConfigError);
    CHECK_THROWS_AS(apply_override(c, "baseline", "gpu"), ConfigError);
    CHECK_THROWS_AS(apply_override(c, "colour", "blue"), ConfigError);
  }

  TEST_CASE("missing config file") {
    CHECK_THROWS_AS(load_config("/nonexistent/forms/config.json"), ConfigError);
    const fs::path p = scratch("load") / "c.json";
    fs::create_directories(p.parent_path());
    std::ofstream(p) << serialize_config(small_config());
    CHECK(load_config(p) == small_config());
  }

  TEST_CASE("baselines by name") {
    CHECK(arch_by_name("isaac").weight_bits == 32);
    CHECK(arch_by_name("isaac").hw.arch == ArchKind::isaac);
    CHECK(arch_by_name("isaac-pq").pruned);
    CHECK(arch_by_name("isaac-pq").weight_bits == 8);
    CHECK(arch_by_name("forms8").hw.crossbar.subarray_rows == 8);
    CHECK(arch_by_name("forms16").hw.crossbar.subarray_rows == 16);
    CHECK_THROWS_AS(arch_by_name("nope"), ConfigError);
  }
}

TEST_SUITE("stages") {
  TEST_CASE("names and dependencies") {
    for (Stage s : {Stage::compress, Stage::map, Stage::simulate, Stage::eic, Stage::report})
      CHECK(parse_stage(to_string(s)) == s);
    try {
      parse_stage("train");
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.status() == Status::invalid_argument);
    }
    CHECK(upstream(Stage::compress).empty());
    CHECK(upstream(Stage::map) == std::vector<Stage>{Stage::compress});
    CHECK(upstream(Stage::eic) == std::vector<Stage>{Stage::compress});
    CHECK(upstream(Stage::report).size() == 3);
  }
}

TEST_SUITE("pipeline") {
  TEST_CASE("stage order is enforced") {
    const fs::path out = scratch("order");
    Pipeline p(small_config(), out);
    CHECK(p.artifact_dir() == out / p.hash());
    for (Stage s : {Stage::map, Stage::simulate, Stage::eic, Stage::report}) {
      try {
        p.run(s);
        FAIL("expected stage_order");
      } catch (const Error& e) {
        CHECK(e.status() == Status::stage_order);
      }
    }
  }

  TEST_CASE("full run, determinism and tamper detection") {
    const fs::path out_a = scratch("run_a"), out_b = scratch("run_b");
    std::vector<std::string> log;
    Pipeline a(small_config(), out_a, [&](const std::string& m) { log.push_back(m); });
    const auto results = a.run_all();
    REQUIRE(results.size() == 5);
    CHECK_FALSE(log.empty());
    const json m = a.manifest();
    CHECK(m["config_hash"] == a.hash());
    for (const char* s : {"compress", "map", "simulate", "eic", "report"}) CHECK(m["stages"].contains(s));
    for (const auto& r : results)
      for (const auto& f : r.artifacts) CHECK(fs::exists(a.artifact_dir() / f));
    for (const char* f : {"report.json", "summary.csv", "reduction.csv", "throughput.csv", "speedup.csv", "report.txt",
                          "eic.csv", "eic.json", "config.json"})
      CHECK(fs::exists(a.artifact_dir() / f));

    const json comp = json::parse(slurp(a.artifact_dir() / "compress.json"));
    CHECK(comp["violation_count"] == 0);
    const json report = json::parse(slurp(a.artifact_dir() / "report.json"));
    CHECK(report["config_hash"] == a.hash());
    CHECK(report["sim_reports"].size() == 2);
    CHECK(report["tables"]["speedup"].size() == 6);
    CHECK(report["speedup"]["total"].get<double>() > 0.0);
    CHECK(report["speedup"]["product"].get<double>() == doctest::Approx(report["speedup"]["total"].get<double>()).epsilon(0.01));
    CHECK(parse_config(slurp(a.artifact_dir() / "config.json")) == small_config());

    Pipeline b(small_config(), out_b);
    b.run_all();
    CHECK(b.hash() == a.hash());
    const json mb = b.manifest();
    for (auto it = m["stages"].begin(); it != m["stages"].end(); ++it) {
      CHECK(it.value()["artifacts"] == mb["stages"][it.key()]["artifacts"]);
      for (auto f = it.value()["artifacts"].begin(); f != it.value()["artifacts"].end(); ++f)
        CHECK(slurp(a.artifact_dir() / f.key()) == slurp(b.artifact_dir() / f.key()));
    }

    // a different seed lands in a different directory
    Pipeline other(small_config(4), out_a);
    CHECK(other.artifact_dir() != a.artifact_dir());

    // flip a byte in the compressed model; anything downstream must refuse it
    const fs::path model = a.artifact_dir() / "model.frms";
    std::string bytes = slurp(model);
    bytes[bytes.size() / 2] ^= 0x40;
    std::ofstream(model, std::ios::binary | std::ios::trunc) << bytes;
    try {
      a.run(Stage::map);
      FAIL("expected corrupt_artifact");
    } catch (const Error& e) {
      CHECK(e.status() == Status::corrupt_artifact);
    }
    fs::remove(b.artifact_dir() / "map.json");
    try {
      b.run(Stage::simulate);
      FAIL("expected corrupt_artifact");
    } catch (const Error& e) {
      CHECK(e.status() == Status::corrupt_artifact);
    }
  }

  TEST_CASE("a foreign manifest is rejected") {
    const fs::path out = scratch("foreign");
    Pipeline p(small_config(), out);
    fs::create_directories(p.artifact_dir());
    std::ofstream(p.artifact_dir() / "manifest.json") << R"({"config_hash": "0000000000000000", "stages": {}})";
    try {
      p.manifest();
      FAIL("expected corrupt_artifact");
    } catch (const Error& e) {
      CHECK(e.status() == Status::corrupt_artifact);
    }
  }
}

TEST_SUITE("reporting") {
  TEST_CASE("empty sims give a header-only summary") {
    const fs::path dir = scratch("empty_report");
    ReportData d;
    d.reduction = reduction_table_header();
    const auto files = emit_report(d, {"csv"}, dir);
    CHECK(files.size() == 4);
    const std::string csv = slurp(dir / "summary.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1);
    CHECK(csv.rfind("config,total_cycles", 0) == 0);
  }

  TEST_CASE("reduction columns") {
    const Table t = reduction_table_header();
    for (const char* c : {"prune_ratio", "fragment_size", "crossbar_reduction"})
      CHECK(std::find(t.columns.begin(), t.columns.end(), c) != t.columns.end());
  }

  TEST_CASE("text table renders every report field") {
    SimReport r;
    r.config = "FORMS-8";
    r.total_cycles = 1234;
    r.baseline = "ISAAC";
    r.crossbars_mapped = 17;
    const Table t = sim_report_table({r});
    CHECK(t.columns.size() == 19);
    REQUIRE(t.rows.size() == 1);
    CHECK(t.rows[0].size() == t.columns.size());
    std::ostringstream os;
    write_text_table(os, t, "Simulation reports");
    const std::string s = os.str();
    for (const auto& c : t.columns) CHECK(s.find(c) != std::string::npos);
    CHECK(s.find("FORMS-8") != std::string::npos);
    CHECK(s.find("1234") != std::string::npos);
    CHECK(s.find("17") != std::string::npos);
    CHECK(s.rfind("Simulation reports\n", 0) == 0);
  }

  TEST_CASE("csv quoting") {
    Table t;
    t.columns = {"a", "b"};
    t.rows = {{"x,y", "say \"hi\""}};
    std::ostringstream os;
    write_csv(os, t);
    CHECK(os.str() == "a,b\n\"x,y\",\"say \"\"hi\"\"\"\n");
  }

  TEST_CASE("all formats and failures") {
    const fs::path dir = scratch("formats");
    ReportData d;
    d.sims = {SimReport{}};
    const auto files = emit_report(d, {"json", "csv", "text"}, dir);
    CHECK(files.size() == 6);
    CHECK(json::parse(slurp(dir / "report.json"))["sim_reports"].size() == 1);
    CHECK_THROWS_AS(emit_report(d, {"xml"}, dir), ConfigError);
    const fs::path file = dir / "plain";
    std::ofstream(file) << "x";
    CHECK_THROWS_AS(emit_report(d, {"csv"}, file / "sub"), IoError);
  }
}
