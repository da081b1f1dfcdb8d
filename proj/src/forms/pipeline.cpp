#include "forms/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "forms/container.hpp"
#include "forms/crossbar_sim.hpp"
#include "forms/errors.hpp"
#include "forms/rng.hpp"

namespace forms {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(Stage s) {
  switch (s) {
    case Stage::compress: return "compress";
    case Stage::map: return "map";
    case Stage::simulate: return "simulate";
    case Stage::eic: return "eic";
    case Stage::report: return "report";
  }
  return "?";
}

Stage parse_stage(const std::string& s) {
  for (Stage st : {Stage::compress, Stage::map, Stage::simulate, Stage::eic, Stage::report})
    if (s == to_string(st)) return st;
  throw Error(Status::invalid_argument, "unknown stage '" + s + "' (expected compress, map, simulate, eic or report)");
}

std::vector<Stage> upstream(Stage s) {
  switch (s) {
    case Stage::compress: return {};
    case Stage::map: return {Stage::compress};
    case Stage::simulate: return {Stage::compress, Stage::map};
    case Stage::eic: return {Stage::compress};
    case Stage::report: return {Stage::compress, Stage::map, Stage::simulate};
  }
  return {};
}

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_checksum(const fs::path& p) {
  const auto bytes = read_file(p);
  return hex64(fnv1a(bytes.data(), bytes.size()));
}

void write_text(const fs::path& p, const std::string& text) {
  write_file(p, std::vector<std::uint8_t>(text.begin(), text.end()));
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

json read_json(const fs::path& p) {
  const auto bytes = read_file(p);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw Error(Status::corrupt_artifact, p.filename().string() + " is not valid JSON: " + e.what());
  }
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::size_t> dense_row_order(const Layer& l, PolarizationOrder order) {
  const auto& sh = l.weight.shape;
  if (sh.size() == 4) return traversal_order(sh[1], sh[2], sh[3], order);
  return traversal_order(sh[1], 1, 1, order);
}

json eic_json(const EicStats& s) {
  return {{"fragment_size", s.fragment_size}, {"fragments", s.fragments}, {"average", s.average()},
          {"slot_average", s.slot_average()},  {"savings", s.savings()},   {"cycles_saved", s.cycles_saved()},
          {"histogram", s.histogram}};
}

json stats_json(const SimStats& s) {
  return {{"fragment_waves", s.fragment_waves},
          {"cycles", s.cycles},
          {"cycles_no_skip", s.cycles_no_skip},
          {"adc_conversions", s.adc_conversions},
          {"saturation_events", s.saturation_events}};
}

json workload_json(const Workload& w) {
  json layers = json::array();
  for (const auto& l : w.layers)
    layers.push_back({{"name", l.name},
                      {"rows", l.rows},
                      {"filters", l.filters},
                      {"kept_rows", l.kept_rows},
                      {"kept_filters", l.kept_filters},
                      {"waves", l.waves},
                      {"pooled", l.pooled},
                      {"fragment_size", l.fragment_size},
                      {"slot_eic_dense", l.slot_eic_dense},
                      {"slot_eic_kept", l.slot_eic_kept},
                      {"eic", eic_json(l.eic)}});
  return {{"name", w.name}, {"frames_measured", w.frames_measured}, {"layers", layers}};
}

Workload workload_from_json(const json& j) {
  Workload w;
  try {
    w.name = j.at("name").get<std::string>();
    w.frames_measured = j.at("frames_measured").get<double>();
    for (const auto& l : j.at("layers")) {
      LayerWorkload lw;
      lw.name = l.at("name").get<std::string>();
      lw.rows = l.at("rows").get<std::size_t>();
      lw.filters = l.at("filters").get<std::size_t>();
      lw.kept_rows = l.at("kept_rows").get<std::size_t>();
      lw.kept_filters = l.at("kept_filters").get<std::size_t>();
      lw.waves = l.at("waves").get<std::size_t>();
      lw.pooled = l.at("pooled").get<bool>();
      lw.fragment_size = l.at("fragment_size").get<std::size_t>();
      lw.slot_eic_dense = l.at("slot_eic_dense").get<double>();
      lw.slot_eic_kept = l.at("slot_eic_kept").get<double>();
      w.layers.push_back(lw);
    }
  } catch (const json::exception& e) {
    throw Error(Status::corrupt_artifact, std::string("workload.json: ") + e.what());
  }
  return w;
}

struct MeanCi {
  double mean = 0.0, stddev = 0.0, lo = 0.0, hi = 0.0;
};

MeanCi mean_ci95(const std::vector<double>& x) {
  MeanCi r;
  if (x.empty()) return r;
  double s = 0.0;
  for (double v : x) s += v;
  r.mean = s / static_cast<double>(x.size());
  r.lo = r.hi = r.mean;
  if (x.size() < 2) return r;
  double ss = 0.0;
  for (double v : x) ss += (v - r.mean) * (v - r.mean);
  r.stddev = std::sqrt(ss / static_cast<double>(x.size() - 1));
  boost::math::students_t t(static_cast<double>(x.size() - 1));
  const double half = boost::math::quantile(boost::math::complement(t, 0.025)) * r.stddev /
                      std::sqrt(static_cast<double>(x.size()));
  r.lo = r.mean - half;
  r.hi = r.mean + half;
  return r;
}

}  // namespace

void write_csv(std::ostream& out, const Table& t) {
  for (std::size_t i = 0; i < t.columns.size(); ++i) out << (i ? "," : "") << csv_field(t.columns[i]);
  out << "\n";
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << csv_field(row[i]);
    out << "\n";
  }
}

void write_text_table(std::ostream& out, const Table& t, const std::string& title) {
  std::vector<std::size_t> width(t.columns.size(), 0);
  for (std::size_t i = 0; i < t.columns.size(); ++i) width[i] = t.columns[i].size();
  for (const auto& row : t.rows)
    for (std::size_t i = 0; i < row.size() && i < width.size(); ++i) width[i] = std::max(width[i], row[i].size());
  if (!title.empty()) out << title << "\n";
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < width.size(); ++i) {
      const std::string c = i < cells.size() ? cells[i] : "";
      out << (i ? "  " : "") << std::setw(static_cast<int>(width[i])) << c;
    }
    out << "\n";
  };
  line(t.columns);
  std::size_t total = 0;
  for (auto w : width) total += w;
  total += width.empty() ? 0 : 2 * (width.size() - 1);
  out << std::string(total, '-') << "\n";
  for (const auto& row : t.rows) line(row);
}

Table sim_report_table(const std::vector<SimReport>& reports) {
  Table t;
  t.columns = {"config",       "total_cycles", "crossbar_seconds", "frame_time_s", "fill_latency_s",
               "wall_time_s",  "frames",       "energy_j",         "power_w",      "area_mm2",
               "ops_per_frame", "gops",        "gops_per_mm2",     "gops_per_w",   "fps",
               "speedup",      "baseline",     "crossbars_mapped", "constant_driven"};
  for (const auto& r : reports)
    t.rows.push_back({r.config, fmt(r.total_cycles), fmt(r.crossbar_seconds), fmt(r.frame_time_s),
                      fmt(r.fill_latency_s), fmt(r.wall_time_s), fmt(r.frames), fmt(r.energy_j), fmt(r.power_w),
                      fmt(r.area_mm2), fmt(r.ops_per_frame), fmt(r.gops), fmt(r.gops_per_mm2), fmt(r.gops_per_w),
                      fmt(r.fps), fmt(r.speedup), r.baseline, std::to_string(r.crossbars_mapped),
                      r.constant_driven ? "true" : "false"});
  return t;
}

Table reduction_table_header() {
  Table t;
  t.columns = {"layer", "prune_ratio", "fragment_size", "crossbar_reduction", "baseline_crossbars",
               "compressed_crossbars"};
  return t;
}

Table throughput_table(const std::vector<ThroughputRow>& rows) {
  Table t;
  t.columns = {"architecture", "area_efficiency", "power_efficiency", "published_area_efficiency",
               "published_power_efficiency", "modelled", "constant_driven"};
  for (const auto& r : rows)
    t.rows.push_back({r.architecture, fmt(r.area_efficiency), fmt(r.power_efficiency), fmt(r.published_area),
                      fmt(r.published_power), r.modelled ? "true" : "false", "true"});
  return t;
}

std::vector<std::string> emit_report(const ReportData& data, const std::vector<std::string>& formats,
                                     const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create report directory " + dir.string() + ": " + ec.message());
  std::vector<std::string> written;
  auto put = [&](const std::string& name, const std::string& text) {
    try {
      write_text(dir / name, text);
    } catch (const Error& e) {
      throw IoError(e.what());
    }
    written.push_back(name);
  };
  const Table sims = sim_report_table(data.sims);
  for (const auto& f : formats) {
    if (f == "json") {
      json j = data.extra;
      json sims_j = json::array();
      for (const auto& s : data.sims) sims_j.push_back(s);
      j["sim_reports"] = sims_j;
      auto table_j = [](const Table& t) {
        json rows = json::array();
        for (const auto& r : t.rows) {
          json o = json::object();
          for (std::size_t i = 0; i < t.columns.size() && i < r.size(); ++i) o[t.columns[i]] = r[i];
          rows.push_back(o);
        }
        return rows;
      };
      j["tables"] = {{"reduction", table_j(data.reduction)},
                     {"throughput", table_j(data.throughput)},
                     {"speedup", table_j(data.speedup)}};
      put("report.json", j.dump(2) + "\n");
    } else if (f == "csv") {
      auto csv = [](const Table& t) {
        std::ostringstream os;
        write_csv(os, t);
        return os.str();
      };
      put("summary.csv", csv(sims));
      put("reduction.csv", csv(data.reduction));
      put("throughput.csv", csv(data.throughput));
      put("speedup.csv", csv(data.speedup));
    } else if (f == "text") {
      std::ostringstream os;
      write_text_table(os, sims, "Simulation reports");
      os << "\n";
      write_text_table(os, data.speedup, "Speedup breakdown");
      os << "\n";
      write_text_table(os, data.reduction, "Crossbar reduction");
      os << "\n";
      write_text_table(os, data.throughput, "Throughput, normalised to ISAAC (constant-driven)");
      put("report.txt", os.str());
    } else {
      throw ConfigError("unknown report format '" + f + "'");
    }
  }
  return written;
}

// ---------------------------------------------------------------------------

Pipeline::Pipeline(ExperimentConfig config, fs::path out_root, Logger log)
    : config_(std::move(config)), log_(std::move(log)) {
  config_.sync();
  config_.validate();
  hash_ = config_hash_hex(config_);
  dir_ = out_root / hash_;
}

void Pipeline::say(const std::string& msg) const {
  if (log_) log_(msg);
}

json Pipeline::manifest() const {
  const fs::path p = dir_ / "manifest.json";
  if (!fs::exists(p))
    return {{"tool", "forms"},
            {"version", tool_version},
            {"config_hash", hash_},
            {"seed", config_.seed},
            {"input_model", config_.model.weights},
            {"stages", json::object()}};
  json m = read_json(p);
  if (!m.contains("config_hash") || m["config_hash"] != hash_ || !m.contains("stages"))
    throw Error(Status::corrupt_artifact, "manifest in " + dir_.string() + " does not belong to this config");
  return m;
}

void Pipeline::check_upstream(Stage stage) const {
  const json m = manifest();
  for (Stage up : upstream(stage)) {
    const std::string name = to_string(up);
    if (!m["stages"].contains(name))
      throw Error(Status::stage_order,
                  std::string("stage '") + to_string(stage) + "' needs '" + name + "' to have run first");
    for (auto it = m["stages"][name]["artifacts"].begin(); it != m["stages"][name]["artifacts"].end(); ++it) {
      const fs::path p = dir_ / it.key();
      if (!fs::exists(p)) throw Error(Status::corrupt_artifact, "missing artifact " + it.key());
      if (file_checksum(p) != it.value().get<std::string>())
        throw Error(Status::corrupt_artifact, "checksum mismatch for artifact " + it.key());
    }
  }
}

void Pipeline::record(const StageResult& r) {
  json m = manifest();
  json arts = json::object();
  for (const auto& a : r.artifacts) arts[a] = file_checksum(dir_ / a);
  m["stages"][to_string(r.stage)] = {{"seconds", r.seconds}, {"artifacts", arts}};
  m["version"] = tool_version;
  write_json(dir_ / "manifest.json", m);
}

StageResult Pipeline::run(Stage stage) {
  check_upstream(stage);
  fs::create_directories(dir_);
  write_text(dir_ / "config.json", serialize_config(config_) + "\n");
  say(std::string("stage ") + to_string(stage) + " -> " + dir_.string());
  const auto t0 = std::chrono::steady_clock::now();
  StageResult r;
  r.stage = stage;
  r.dir = dir_;
  auto finish = [&] {
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    record(r);
  };
  try {
    switch (stage) {
      case Stage::compress: r.artifacts = stage_compress(); break;
      case Stage::map: r.artifacts = stage_map(); break;
      case Stage::simulate: r.artifacts = stage_simulate(); break;
      case Stage::eic: r.artifacts = stage_eic(); break;
      case Stage::report: r.artifacts = stage_report(); break;
    }
  } catch (const Error& e) {
    if (e.status() == Status::constraint_violation && stage == Stage::compress) {
      r.artifacts = {"dense.frms", "model.frms", "admm_state.frms", "signs.fsgn", "compress.json"};
      finish();
    }
    throw;
  }
  finish();
  return r;
}

std::vector<StageResult> Pipeline::run_all() {
  std::vector<StageResult> out;
  for (Stage s : {Stage::compress, Stage::map, Stage::simulate, Stage::eic, Stage::report}) out.push_back(run(s));
  return out;
}

namespace {

CompressedModel load_compressed(const fs::path& dir, const ExperimentConfig& c) {
  const auto tensors = decode_container(read_file(dir / "model.frms"));
  CompressedModel cm =
      model_from_tensors(tensors, build_model(c), c.compression, c.compression.polarize, c.compression.quantize);
  decode_signs(read_file(dir / "signs.fsgn"), cm);
  return cm;
}

}  // namespace

std::vector<std::string> Pipeline::stage_compress() {
  const auto& c = config_;
  const auto data = make_synthetic(c.data);
  CompressedModel dense;
  if (!c.model.weights.empty()) {
    const auto tensors = decode_container(read_file(c.model.weights));
    dense = model_from_tensors(tensors, build_model(c), c.compression, false, false);
    say("loaded pretrained weights from " + c.model.weights);
  } else {
    ModelGraph g = build_model(c);
    train_sgd(g, data.train, c.pretrain.epochs, c.pretrain.lr, c.pretrain.batch_size,
              derive_seed(c.seed, fnv1a("pretrain", 8)));
    dense = CompressedModel::identity(g, c.compression);
  }
  snap_to_float32(dense);
  const double dense_acc = accuracy(dense.graph, data.test);
  say("dense accuracy " + fmt(dense_acc));

  json history = json::array();
  const AdmmResult r = admm_train(dense.graph, data.train, c.compression, [&](const PhaseLog& l) {
    history.push_back({{"phase", l.phase},
                       {"epoch", l.epoch},
                       {"loss", l.loss},
                       {"penalty", l.penalty},
                       {"primal_residual", l.primal_residual}});
  });
  const ConstraintReport rep = verify_constraints(r.model, c.compression);
  const double comp_acc = accuracy(r.model.graph, data.test);
  say("compressed accuracy " + fmt(comp_acc) + ", " + std::to_string(rep.violations.size()) + " violations");

  write_file(dir_ / "dense.frms", encode_container(model_tensors(dense)));
  write_file(dir_ / "model.frms", encode_container(model_tensors(r.model)));
  write_file(dir_ / "admm_state.frms", encode_container(state_tensors(r.state, r.model.graph)));
  write_file(dir_ / "signs.fsgn", encode_signs(r.model));

  json layers = json::array();
  for (const auto& l : rep.layers) {
    std::size_t pol = 0;
    for (bool b : l.polarized) pol += b ? 1 : 0;
    layers.push_back({{"name", l.name},
                      {"filters", l.filters},
                      {"shapes", l.shapes},
                      {"nonzero_filters", l.nonzero_filters},
                      {"nonzero_shapes", l.nonzero_shapes},
                      {"target_filters", l.target_filters},
                      {"target_shapes", l.target_shapes},
                      {"filter_sparsity", l.filter_sparsity},
                      {"shape_sparsity", l.shape_sparsity},
                      {"fragments", l.polarized.size()},
                      {"polarized_fragments", pol},
                      {"quantized", l.quantized}});
  }
  json viol = json::array();
  for (std::size_t i = 0; i < rep.violations.size() && i < 100; ++i) {
    const auto& v = rep.violations[i];
    viol.push_back({{"layer", v.layer}, {"kind", to_string(v.kind)}, {"row", v.row}, {"col", v.col}, {"detail", v.detail}});
  }
  write_json(dir_ / "compress.json", {{"dense_accuracy", dense_acc},
                                      {"compressed_accuracy", comp_acc},
                                      {"accuracy_drop", dense_acc - comp_acc},
                                      {"sign_updates", r.sign_updates},
                                      {"violation_count", rep.violations.size()},
                                      {"violations", viol},
                                      {"layers", layers},
                                      {"history", history}});
  if (!rep.ok())
    throw Error(Status::constraint_violation,
                "constraint verification failed: " + std::to_string(rep.violations.size()) + " violations, first: " +
                    rep.violations.front().layer + " " + to_string(rep.violations.front().kind) + " " +
                    rep.violations.front().detail);
  return {"dense.frms", "model.frms", "admm_state.frms", "signs.fsgn", "compress.json"};
}

std::vector<std::string> Pipeline::stage_map() {
  const auto& c = config_;
  const CompressedModel cm = load_compressed(dir_, c);
  const auto mapped = map_model(cm, c.crossbar);
  const fs::path mdir = dir_ / "mapped";
  fs::remove_all(mdir);
  write_mapped(mdir, mapped, c.crossbar);

  const ModelGraph base = build_model(c);
  const ReductionResult total = crossbar_reduction(mapped, base, c.crossbar, 32);
  json layers = json::array();
  const auto wl = base.weighted_layers();
  for (std::size_t i = 0; i < mapped.size(); ++i) {
    const auto& l = base.layers[wl[i]];
    const auto& ml = mapped[i];
    const std::size_t bx = count_split_crossbars(l.weight.filter_size(), l.weight.filters(), 32, c.crossbar);
    const std::size_t kept = ml.filters.size() * ml.input_rows.size();
    layers.push_back({{"name", ml.name},
                      {"rows", ml.input_size},
                      {"filters", ml.output_channels},
                      {"kept_rows", ml.input_rows.size()},
                      {"kept_filters", ml.filters.size()},
                      {"prune_ratio", kept ? static_cast<double>(l.weight.values.size()) / kept : 0.0},
                      {"baseline_crossbars", bx},
                      {"compressed_crossbars", ml.crossbar_count()},
                      {"crossbar_reduction",
                       ml.crossbar_count() ? static_cast<double>(bx) / ml.crossbar_count() : 0.0}});
  }
  write_json(dir_ / "map.json", {{"fragment_size", c.compression.fragment_size},
                                  {"layers", layers},
                                  {"total",
                                   {{"prune_ratio", total.prune_ratio},
                                    {"baseline_crossbars", total.baseline_crossbars},
                                    {"compressed_crossbars", total.compressed_crossbars},
                                    {"crossbar_reduction", total.ratio}}}});
  std::vector<std::string> arts = {"map.json"};
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(mdir)) files.push_back("mapped/" + e.path().filename().string());
  std::sort(files.begin(), files.end());
  arts.insert(arts.end(), files.begin(), files.end());
  return arts;
}

std::vector<std::string> Pipeline::stage_simulate() {
  const auto& c = config_;
  CompressedModel cm = load_compressed(dir_, c);
  CrossbarSpec spec;
  const auto mapped = read_mapped(dir_ / "mapped", &spec);
  const auto data = make_synthetic(c.data);
  calibrate_activations(cm.graph, data.train, c.simulate.calibration, spec.input_bits);
  const Dataset test = head(data.test, c.simulate.images);

  SimOptions opts;
  opts.zero_skip = c.simulate.zero_skip;
  opts.adc_bits = c.simulate.adc_bits;
  opts.variation = {0.0, c.simulate.mu, derive_seed(c.seed, fnv1a("variation", 9))};
  const Accelerator ideal(cm, mapped, spec, opts);

  const auto wl = cm.graph.weighted_layers();
  std::vector<SimStats> stats(wl.size());
  Workload w;
  w.name = c.model.kind;
  for (std::size_t i = 0; i < wl.size(); ++i) {
    const Layer& l = cm.graph.layers[wl[i]];
    LayerWorkload lw;
    lw.name = l.name;
    lw.rows = l.weight.filter_size();
    lw.filters = l.weight.filters();
    lw.kept_rows = mapped[i].input_rows.size();
    lw.kept_filters = mapped[i].filters.size();
    lw.pooled = cm.graph.pooled_after(wl[i]);
    lw.fragment_size = c.compression.fragment_size;
    lw.eic.fragment_size = c.compression.fragment_size;
    w.layers.push_back(lw);
  }
  std::vector<std::vector<std::size_t>> dense_rows;
  for (std::size_t li : wl) dense_rows.push_back(dense_row_order(cm.graph.layers[li], c.compression.polarization_order));

  std::size_t correct = 0, ref_correct = 0, float_correct = 0, agree = 0;
  for (std::size_t n = 0; n < test.size(); ++n) {
    const auto img = test.image(n);
    const NetworkRun run = ideal.run(img, Engine::crossbar);
    const int p = static_cast<int>(std::max_element(run.logits.begin(), run.logits.end()) - run.logits.begin());
    const int pr = ideal.predict(img, Engine::reference);
    if (p == test.labels[n]) ++correct;
    if (pr == test.labels[n]) ++ref_correct;
    if (p == pr) ++agree;
    if (forms::predict(cm.graph, img) == test.labels[n]) ++float_correct;
    for (std::size_t i = 0; i < wl.size(); ++i) stats[i].merge(run.layer_stats[i]);

    const auto codes = layer_input_codes(cm.graph, img, spec.input_bits);
    for (std::size_t i = 0; i < wl.size(); ++i) {
      const auto& lc = codes[i];
      auto& lw = w.layers[i];
      lw.waves = lc.vectors;
      const EicStats dense = eic_stats(lc.codes, lc.rows, lc.vectors, dense_rows[i], lw.fragment_size, spec.input_bits);
      const EicStats kept =
          eic_stats(lc.codes, lc.rows, lc.vectors, mapped[i].input_rows, lw.fragment_size, spec.input_bits);
      lw.slot_eic_dense += static_cast<double>(dense.slot_eic_sum);
      lw.slot_eic_kept += static_cast<double>(kept.slot_eic_sum);
      if (lw.eic.histogram.empty()) lw.eic = kept;
      else lw.eic.merge(kept);
    }
  }
  const double frames = static_cast<double>(test.size());
  w.frames_measured = frames;
  for (auto& lw : w.layers) {
    lw.slot_eic_dense /= frames;
    lw.slot_eic_kept /= frames;
  }
  const double acc = correct / frames;

  std::vector<std::string> arts = {"simulate.json", "workload.json"};
  if (c.simulate.trace && test.size() > 0) {
    std::vector<TraceRow> trace;
    SimOptions topts = opts;
    topts.trace = &trace;
    const Accelerator traced(cm, mapped, spec, topts);
    traced.run(test.image(0), Engine::crossbar);
    std::ostringstream os;
    write_trace_csv(os, trace);
    write_text(dir_ / "trace.csv", os.str());
    arts.push_back("trace.csv");
  }

  json variation = nullptr;
  if (c.simulate.sigma > 0.0) {
    const std::size_t runs = std::max<std::size_t>(1, c.simulate.variation_runs);
    std::vector<double> accs, drops;
    for (std::size_t k = 0; k < runs; ++k) {
      SimOptions vo = opts;
      vo.variation = {c.simulate.sigma, c.simulate.mu, derive_seed(c.seed, {fnv1a("variation", 9), k + 1})};
      const Accelerator noisy(cm, mapped, spec, vo);
      const double a = noisy.accuracy(test, Engine::crossbar);
      accs.push_back(a);
      drops.push_back(acc - a);
    }
    const MeanCi ci = mean_ci95(drops);
    say("variation sigma " + fmt(c.simulate.sigma) + ": degradation " + fmt(ci.mean) + " [" + fmt(ci.lo) + ", " +
        fmt(ci.hi) + "]");
    variation = {{"sigma", c.simulate.sigma},
                 {"mu", c.simulate.mu},
                 {"runs", runs},
                 {"accuracies", accs},
                 {"degradation_mean", ci.mean},
                 {"degradation_stddev", ci.stddev},
                 {"degradation_ci95", {ci.lo, ci.hi}}};
  }

  json layers = json::array();
  for (std::size_t i = 0; i < wl.size(); ++i)
    layers.push_back({{"name", w.layers[i].name}, {"stats", stats_json(stats[i])}, {"eic", eic_json(w.layers[i].eic)}});
  say("crossbar accuracy " + fmt(acc) + " on " + std::to_string(test.size()) + " images");
  write_json(dir_ / "simulate.json", {{"images", test.size()},
                                       {"float_accuracy", float_correct / frames},
                                       {"reference_accuracy", ref_correct / frames},
                                       {"crossbar_accuracy", acc},
                                       {"engine_agreement", agree / frames},
                                       {"zero_skip", c.simulate.zero_skip},
                                       {"adc_bits", spec.resolved_adc_bits()},
                                       {"layers", layers},
                                       {"variation", variation}});
  write_json(dir_ / "workload.json", workload_json(w));
  return arts;
}

std::vector<std::string> Pipeline::stage_eic() {
  const auto& c = config_;
  CompressedModel cm = load_compressed(dir_, c);
  const auto data = make_synthetic(c.data);
  const unsigned bits = c.crossbar.input_bits;
  calibrate_activations(cm.graph, data.train, c.simulate.calibration, bits);
  const Dataset test = head(data.test, c.eic.images);
  const auto wl = cm.graph.weighted_layers();
  std::vector<std::vector<std::size_t>> rows;
  for (std::size_t li : wl) rows.push_back(dense_row_order(cm.graph.layers[li], c.compression.polarization_order));

  const auto& sizes = c.eic.fragment_sizes;
  // stats[m][layer]
  std::vector<std::vector<EicStats>> stats(sizes.size(), std::vector<EicStats>(wl.size()));
  for (std::size_t n = 0; n < test.size(); ++n) {
    const auto codes = layer_input_codes(cm.graph, test.image(n), bits);
    for (std::size_t k = 0; k < sizes.size(); ++k)
      for (std::size_t i = 0; i < wl.size(); ++i) {
        const EicStats s = eic_stats(codes[i].codes, codes[i].rows, codes[i].vectors, rows[i], sizes[k], bits);
        if (stats[k][i].histogram.empty()) stats[k][i] = s;
        else stats[k][i].merge(s);
      }
  }
  Table t;
  t.columns = {"layer", "fragment_size", "eic", "count"};
  json by_size = json::array();
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    EicStats all;
    json layers = json::array();
    for (std::size_t i = 0; i < wl.size(); ++i) {
      const EicStats& s = stats[k][i];
      if (all.histogram.empty()) all = s;
      else all.merge(s);
      json e = eic_json(s);
      e["layer"] = cm.graph.layers[wl[i]].name;
      e["post_relu"] = i > 0;
      layers.push_back(e);
      for (std::size_t b = 0; b < s.histogram.size(); ++b)
        t.rows.push_back({cm.graph.layers[wl[i]].name, std::to_string(sizes[k]), std::to_string(b),
                          std::to_string(s.histogram[b])});
    }
    // Hidden layers only: their inputs are post-ReLU activations.
    EicStats hidden;
    for (std::size_t i = 1; i < wl.size(); ++i) {
      if (hidden.histogram.empty()) hidden = stats[k][i];
      else hidden.merge(stats[k][i]);
    }
    for (std::size_t b = 0; b < all.histogram.size(); ++b)
      t.rows.push_back({"all", std::to_string(sizes[k]), std::to_string(b), std::to_string(all.histogram[b])});
    json entry = {{"fragment_size", sizes[k]}, {"all", eic_json(all)}, {"layers", layers}};
    if (!hidden.histogram.empty()) entry["post_relu"] = eic_json(hidden);
    by_size.push_back(entry);
  }
  std::ostringstream os;
  write_csv(os, t);
  write_text(dir_ / "eic.csv", os.str());
  write_json(dir_ / "eic.json", {{"images", test.size()}, {"input_bits", bits}, {"fragment_sizes", by_size}});
  return {"eic.csv", "eic.json"};
}

std::vector<std::string> Pipeline::stage_report() {
  const auto& c = config_;
  const Workload w = workload_from_json(read_json(dir_ / "workload.json"));
  const json map = read_json(dir_ / "map.json");
  const json sim = read_json(dir_ / "simulate.json");
  const json comp = read_json(dir_ / "compress.json");

  ArchConfig forms = forms_full(c.compression.fragment_size);
  if (c.report.hardware) {
    forms.hw = *c.report.hardware;
    forms.name = "FORMS (" + forms.hw.name + ")";
  }
  const ArchConfig base = arch_by_name(c.report.baseline);
  const SpeedupBreakdown sb = speedup_compare(forms, base, w);

  ReportData d;
  d.sims = {sb.a, sb.b};
  d.speedup.columns = {"factor", "ratio"};
  d.speedup.rows = {{"pruning", fmt(sb.pruning)},
                    {"quantization", fmt(sb.quantization)},
                    {"polarization", fmt(sb.polarization)},
                    {"zero_skip", fmt(sb.zero_skip)},
                    {"product", fmt(sb.product())},
                    {"total", fmt(sb.total)}};
  d.reduction = reduction_table_header();
  try {
    const std::string m = std::to_string(map.at("fragment_size").get<std::size_t>());
    for (const auto& l : map.at("layers"))
      d.reduction.rows.push_back({l.at("name").get<std::string>(), fmt(l.at("prune_ratio").get<double>()), m,
                                  fmt(l.at("crossbar_reduction").get<double>()),
                                  std::to_string(l.at("baseline_crossbars").get<std::size_t>()),
                                  std::to_string(l.at("compressed_crossbars").get<std::size_t>())});
    const auto& t = map.at("total");
    d.reduction.rows.push_back({"total", fmt(t.at("prune_ratio").get<double>()), m,
                                fmt(t.at("crossbar_reduction").get<double>()),
                                std::to_string(t.at("baseline_crossbars").get<std::size_t>()),
                                std::to_string(t.at("compressed_crossbars").get<std::size_t>())});
  } catch (const json::exception& e) {
    throw Error(Status::corrupt_artifact, std::string("map.json: ") + e.what());
  }
  const auto t5 = throughput_comparison();
  d.throughput = throughput_table(t5);
  d.extra = {{"config_hash", hash_},
             {"seed", c.seed},
             {"baseline", base.name},
             {"forms", forms.name},
             {"speedup",
              {{"total", sb.total},
               {"pruning", sb.pruning},
               {"quantization", sb.quantization},
               {"polarization", sb.polarization},
               {"zero_skip", sb.zero_skip},
               {"product", sb.product()}}},
             {"accuracy",
              {{"dense", comp.value("dense_accuracy", 0.0)},
               {"compressed", comp.value("compressed_accuracy", 0.0)},
               {"crossbar", sim.value("crossbar_accuracy", 0.0)}}},
             {"variation", sim.value("variation", json(nullptr))},
             {"throughput_note", "constant-driven: component constants and workload factors, not measured"}};
  const auto files = emit_report(d, c.report.formats, dir_);
  say("speedup over " + base.name + ": " + fmt(sb.total) + "x");
  return files;
}

}  // namespace forms
