#include "forms/forms.h"

#include <cstring>
#include <exception>
#include <memory>
#include <new>
#include <sstream>
#include <string>

#include "forms/config.hpp"
#include "forms/errors.hpp"
#include "forms/layout.hpp"
#include "forms/mapper.hpp"
#include "forms/perf_model.hpp"
#include "forms/pipeline.hpp"
#include "forms/selftest.hpp"
#include "forms/zero_skip.hpp"

struct forms_pipeline {
  forms::ExperimentConfig config;
  std::string out_dir;
  forms_log_fn log = nullptr;
  void* log_user = nullptr;

  forms::Pipeline make() const {
    forms::Pipeline::Logger logger;
    if (log) logger = [fn = log, user = log_user](const std::string& m) { fn(m.c_str(), user); };
    return forms::Pipeline(config, out_dir, logger);
  }
};

namespace {

thread_local std::string last_error;

forms_status fail(forms_status s, const std::string& msg) {
  last_error = msg;
  return s;
}

template <typename F>
forms_status guarded(F&& f) {
  try {
    last_error.clear();
    return f();
  } catch (const forms::Error& e) {
    return fail(static_cast<forms_status>(e.status()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(FORMS_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(FORMS_INTERNAL, e.what());
  } catch (...) {
    return fail(FORMS_INTERNAL, "unknown error");
  }
}

forms_status copy_out(const std::string& s, char* buf, std::size_t len, std::size_t* needed) {
  if (needed) *needed = s.size() + 1;
  if (!buf) return needed ? FORMS_OK : fail(FORMS_INVALID_ARGUMENT, "null output buffer");
  if (len < s.size() + 1) {
    if (len > 0) buf[0] = '\0';
    return fail(FORMS_INVALID_ARGUMENT, "buffer too small: need " + std::to_string(s.size() + 1) + " bytes");
  }
  std::memcpy(buf, s.c_str(), s.size() + 1);
  return FORMS_OK;
}

forms_status create(forms::ExperimentConfig cfg, const char* out_dir, forms_pipeline** out) {
  auto p = std::make_unique<forms_pipeline>();
  p->config = std::move(cfg);
  p->out_dir = out_dir ? out_dir : "out";
  p->make();  // validates
  *out = p.release();
  return FORMS_OK;
}

}  // namespace

extern "C" {

const char* forms_last_error(void) { return last_error.c_str(); }

const char* forms_version(void) { return forms::tool_version; }

const char* forms_status_name(forms_status s) {
  switch (s) {
    case FORMS_OK: return "ok";
    case FORMS_INVALID_ARGUMENT: return "invalid argument";
    case FORMS_CONFIG_ERROR: return "config error";
    case FORMS_CONSTRAINT_VIOLATION: return "constraint violation";
    case FORMS_ORACLE_MISMATCH: return "oracle mismatch";
    case FORMS_IO_ERROR: return "i/o error";
    case FORMS_STAGE_ORDER: return "stage order";
    case FORMS_CORRUPT_ARTIFACT: return "corrupt artifact";
    case FORMS_DIVERGENCE: return "divergence";
    case FORMS_INTERNAL: return "internal error";
  }
  return "unknown";
}

forms_status forms_pipeline_create(const char* config_path, const char* out_dir, forms_pipeline** out) {
  if (!out) return fail(FORMS_INVALID_ARGUMENT, "null output handle");
  *out = nullptr;
  return guarded([&] {
    return create(config_path ? forms::load_config(config_path) : forms::ExperimentConfig{}, out_dir, out);
  });
}

forms_status forms_pipeline_create_from_json(const char* config_json, const char* out_dir, forms_pipeline** out) {
  if (!out || !config_json) return fail(FORMS_INVALID_ARGUMENT, "null argument");
  *out = nullptr;
  return guarded([&] { return create(forms::parse_config(config_json), out_dir, out); });
}

void forms_pipeline_destroy(forms_pipeline* p) { delete p; }

forms_status forms_pipeline_set_option(forms_pipeline* p, const char* key, const char* value) {
  if (!p || !key) return fail(FORMS_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    forms::ExperimentConfig c = p->config;
    forms::apply_override(c, key, value ? value : "");
    p->config = std::move(c);
    return FORMS_OK;
  });
}

forms_status forms_pipeline_set_logger(forms_pipeline* p, forms_log_fn fn, void* user) {
  if (!p) return fail(FORMS_INVALID_ARGUMENT, "null handle");
  p->log = fn;
  p->log_user = user;
  return FORMS_OK;
}

forms_status forms_pipeline_run_stage(forms_pipeline* p, const char* stage) {
  if (!p || !stage) return fail(FORMS_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    forms::Pipeline pl = p->make();
    if (std::string(stage) == "all") pl.run_all();
    else pl.run(forms::parse_stage(stage));
    return FORMS_OK;
  });
}

forms_status forms_pipeline_config_hash(const forms_pipeline* p, char* buf, size_t len, size_t* needed) {
  if (!p) return fail(FORMS_INVALID_ARGUMENT, "null handle");
  return guarded([&] { return copy_out(forms::config_hash_hex(p->config), buf, len, needed); });
}

forms_status forms_pipeline_artifact_dir(const forms_pipeline* p, char* buf, size_t len, size_t* needed) {
  if (!p) return fail(FORMS_INVALID_ARGUMENT, "null handle");
  return guarded([&] { return copy_out(p->make().artifact_dir().string(), buf, len, needed); });
}

forms_status forms_pipeline_config_json(const forms_pipeline* p, char* buf, size_t len, size_t* needed) {
  if (!p) return fail(FORMS_INVALID_ARGUMENT, "null handle");
  return guarded([&] { return copy_out(forms::serialize_config(p->config), buf, len, needed); });
}

forms_status forms_selftest(uint64_t seed, char* report, size_t len, size_t* needed) {
  return guarded([&] {
    const forms::SelftestReport r = forms::run_selftest(seed);
    std::ostringstream os;
    for (const auto& c : r.checks) os << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
    if (report || needed) {
      const forms_status s = copy_out(os.str(), report, len, needed);
      if (s != FORMS_OK) return s;
    }
    if (!r.ok()) return fail(FORMS_ORACLE_MISMATCH, "self-test failed");
    return FORMS_OK;
  });
}

double forms_cycle_time_ns(double cols_per_adc, double adc_freq_ghz) {
  try {
    return forms::cycle_time(cols_per_adc, adc_freq_ghz);
  } catch (const std::exception& e) {
    last_error = e.what();
    return 0.0;
  }
}

unsigned forms_effective_bits(uint32_t x) { return forms::effective_bits(x); }

unsigned forms_fragment_eic(const uint16_t* inputs, size_t n) {
  if (!inputs) return 0;
  return forms::fragment_eic({inputs, n});
}

int forms_fragment_sign(const double* weights, size_t n) {
  if (!weights) return 1;
  return forms::fragment_sign({weights, n}) == forms::Sign::positive ? 1 : -1;
}

forms_status forms_bit_slice(uint32_t magnitude, unsigned quant_bits, unsigned cell_bits, uint8_t* out, size_t len) {
  if (!out) return fail(FORMS_INVALID_ARGUMENT, "null output buffer");
  return guarded([&] {
    const auto d = forms::bit_slice(magnitude, quant_bits, cell_bits);
    if (len < d.size()) return fail(FORMS_INVALID_ARGUMENT, "need " + std::to_string(d.size()) + " digits");
    std::memcpy(out, d.data(), d.size());
    return FORMS_OK;
  });
}

}  // extern "C"
