// forms: compress -> map -> simulate -> eic -> report, plus selftest.
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "forms/forms.h"

namespace {

void log_line(const char* msg, void*) { std::fprintf(stderr, "[forms] %s\n", msg); }

int report_error(forms_status s) {
  std::fprintf(stderr, "forms: %s: %s\n", forms_status_name(s), forms_last_error());
  return static_cast<int>(s);
}

std::string get_string(forms_status (*fn)(const forms_pipeline*, char*, size_t, size_t*), const forms_pipeline* p) {
  size_t need = 0;
  if (fn(p, nullptr, 0, &need) != FORMS_OK) return {};
  std::string s(need, '\0');
  if (fn(p, s.data(), s.size(), nullptr) != FORMS_OK) return {};
  s.resize(need - 1);
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FORMS compression and polarized-crossbar simulation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", forms_version());

  std::string config, out = "out", baseline;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> fragment_size, quant_bits, adc_bits;
  std::optional<double> sigma;
  bool no_skip = false, quiet = false, show_config = false;

  app.add_option("--config", config, "experiment config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--out", out, "artifact root; results go to <out>/<config hash>/");
  app.add_option("--seed", seed, "top-level seed");
  app.add_option("--fragment-size", fragment_size, "fragment size m (sub-array rows)");
  app.add_option("--quant-bits", quant_bits, "weight magnitude bits");
  app.add_option("--adc-bits", adc_bits, "ADC resolution (0 = non-saturating)");
  app.add_flag("--no-skip", no_skip, "disable zero-skipping");
  app.add_option("--sigma", sigma, "lognormal device variation sigma");
  app.add_option("--baseline", baseline, "isaac, isaac-pq, forms4, forms8 or forms16");
  app.add_flag("-q,--quiet", quiet, "no progress messages");
  app.add_flag("--print-config", show_config, "print the effective config before running");

  const std::vector<std::pair<std::string, std::string>> stages = {
      {"compress", "pretrain and run ADMM prune/polarize/quantize"},
      {"map", "map the compressed model onto crossbars"},
      {"simulate", "run test images through the crossbar simulator"},
      {"eic", "effective-input-cycle histograms per fragment size"},
      {"report", "performance model, speedup breakdown and tables"},
      {"all", "every stage in order"},
  };
  for (const auto& [name, help] : stages) app.add_subcommand(name, help);
  auto* hash_cmd = app.add_subcommand("hash", "print the config hash and artifact directory");
  auto* selftest = app.add_subcommand("selftest", "run the invariant suites");

  CLI11_PARSE(app, argc, argv);

  if (selftest->parsed()) {
    size_t need = 0;
    forms_status s = forms_selftest(seed.value_or(1), nullptr, 0, &need);
    std::string text(need, '\0');
    s = forms_selftest(seed.value_or(1), text.data(), text.size(), nullptr);
    std::fputs(text.c_str(), stdout);
    if (s == FORMS_ORACLE_MISMATCH) std::fprintf(stderr, "forms: self-test failed\n");
    else if (s != FORMS_OK) return report_error(s);
    return static_cast<int>(s);
  }

  forms_pipeline* p = nullptr;
  forms_status s = forms_pipeline_create(config.empty() ? nullptr : config.c_str(), out.c_str(), &p);
  if (s != FORMS_OK) return report_error(s);

  auto set = [&](const char* key, const std::string& value) {
    if (s == FORMS_OK) s = forms_pipeline_set_option(p, key, value.c_str());
  };
  if (seed) set("seed", std::to_string(*seed));
  if (fragment_size) set("fragment-size", std::to_string(*fragment_size));
  if (quant_bits) set("quant-bits", std::to_string(*quant_bits));
  if (adc_bits) set("adc-bits", std::to_string(*adc_bits));
  if (no_skip) set("no-skip", "");
  if (sigma) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", *sigma);
    set("sigma", buf);
  }
  if (!baseline.empty()) set("baseline", baseline);
  if (s != FORMS_OK) {
    const int rc = report_error(s);
    forms_pipeline_destroy(p);
    return rc;
  }
  if (!quiet) forms_pipeline_set_logger(p, log_line, nullptr);
  if (show_config) std::cout << get_string(forms_pipeline_config_json, p) << "\n";

  if (hash_cmd->parsed()) {
    std::cout << get_string(forms_pipeline_config_hash, p) << " " << get_string(forms_pipeline_artifact_dir, p)
              << "\n";
    forms_pipeline_destroy(p);
    return 0;
  }

  for (auto* sub : app.get_subcommands()) {
    s = forms_pipeline_run_stage(p, sub->get_name().c_str());
    if (s != FORMS_OK) break;
  }
  int rc = 0;
  if (s != FORMS_OK) rc = report_error(s);
  else std::cout << get_string(forms_pipeline_artifact_dir, p) << "\n";
  forms_pipeline_destroy(p);
  return rc;
}
