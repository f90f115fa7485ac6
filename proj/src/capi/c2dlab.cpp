#include "c2dlab/c2dlab.h"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <new>
#include <string>

#include "c2d/error.hpp"
#include "c2d/io.hpp"
#include "c2d/metrics.hpp"
#include "c2d/runner.hpp"

struct c2d_config {
  c2d::runner::ExperimentConfig cfg;
};

namespace {

thread_local std::string g_last_error;

c2d_status fail(c2d_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

template <typename Fn>
c2d_status guarded(Fn&& fn) {
  try {
    g_last_error.clear();
    fn();
    return C2D_OK;
  } catch (const c2d::Error& e) {
    return fail(static_cast<c2d_status>(e.kind()), e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(C2D_ERR_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(C2D_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(C2D_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(C2D_ERR_INTERNAL, "unknown error");
  }
}

void require(const void* p, const char* what) {
  if (!p) throw c2d::ConfigError(std::string(what) + " must not be NULL");
}

void copy_out(const std::string& value, char* buf, std::size_t buf_len, std::size_t* needed) {
  if (needed) *needed = value.size() + 1;
  if (buf && buf_len > 0) {
    const std::size_t n = std::min(value.size(), buf_len - 1);
    std::memcpy(buf, value.data(), n);
    buf[n] = '\0';
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

}  // namespace

extern "C" {

const char* c2d_last_error(void) { return g_last_error.c_str(); }

const char* c2d_version(void) { return "0.1.0"; }

c2d_status c2d_config_new(c2d_config** out) {
  return guarded([&] {
    require(out, "out");
    *out = new c2d_config();
  });
}

void c2d_config_free(c2d_config* cfg) { delete cfg; }

c2d_status c2d_config_load(c2d_config* cfg, const char* path) {
  return guarded([&] {
    require(cfg, "cfg");
    require(path, "path");
    cfg->cfg = c2d::runner::load_config(path);
  });
}

c2d_status c2d_config_save(const c2d_config* cfg, const char* path) {
  return guarded([&] {
    require(cfg, "cfg");
    require(path, "path");
    c2d::runner::save_config(cfg->cfg, path);
  });
}

c2d_status c2d_config_set(c2d_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    require(cfg, "cfg");
    require(key, "key");
    require(value, "value");
    c2d::runner::set_value(cfg->cfg, key, value);
  });
}

c2d_status c2d_config_get(const c2d_config* cfg, const char* key, char* buf, size_t buf_len, size_t* needed) {
  return guarded([&] {
    require(cfg, "cfg");
    require(key, "key");
    copy_out(c2d::runner::get_value(cfg->cfg, key), buf, buf_len, needed);
  });
}

c2d_status c2d_config_validate(const c2d_config* cfg) {
  return guarded([&] {
    require(cfg, "cfg");
    cfg->cfg.validate();
  });
}

size_t c2d_config_key_count(void) { return c2d::runner::config_keys().size(); }

const char* c2d_config_key(size_t i) {
  const auto& keys = c2d::runner::config_keys();
  return i < keys.size() ? keys[i].c_str() : nullptr;
}

c2d_status c2d_run_path(const c2d_config* cfg, const char* artifact, char* buf, size_t buf_len, size_t* needed) {
  return guarded([&] {
    require(cfg, "cfg");
    require(artifact, "artifact");
    using P = c2d::runner::RunPaths;
    static const std::map<std::string, std::function<std::filesystem::path(const P&)>> table = {
        {"config", [](const P& p) { return p.config(); }},
        {"runlog", [](const P& p) { return p.runlog(); }},
        {"train_log", [](const P& p) { return p.train_log(); }},
        {"encoder", [](const P& p) { return p.encoder(); }},
        {"warmup_a", [](const P& p) { return p.warmup_model(0); }},
        {"warmup_b", [](const P& p) { return p.warmup_model(1); }},
        {"final_a", [](const P& p) { return p.final_model(0); }},
        {"final_b", [](const P& p) { return p.final_model(1); }},
        {"per_sample_a", [](const P& p) { return p.per_sample(0); }},
        {"per_sample_b", [](const P& p) { return p.per_sample(1); }},
        {"divide_a", [](const P& p) { return p.division(0); }},
        {"divide_b", [](const P& p) { return p.division(1); }},
        {"histogram", [](const P& p) { return p.histogram(); }},
        {"features", [](const P& p) { return p.features(); }},
        {"summary", [](const P& p) { return p.summary(); }},
        {"train_data", [](const P& p) { return p.train_data(); }},
        {"test_data", [](const P& p) { return p.test_data(); }},
        {"proxy_data", [](const P& p) { return p.proxy_data(); }},
    };
    const auto it = table.find(artifact);
    if (it == table.end()) throw c2d::ConfigError(std::string("unknown artifact '") + artifact + "'");
    copy_out(it->second(P{cfg->cfg.output_dir}).string(), buf, buf_len, needed);
  });
}

c2d_status c2d_run_stage(const c2d_config* cfg, const char* stage) {
  return guarded([&] {
    require(cfg, "cfg");
    require(stage, "stage");
    const auto r = cfg->cfg.resolved();
    r.validate();
    const c2d::runner::RunPaths run{r.output_dir};
    c2d::runner::save_config(r, run.config());
    c2d::runner::run_stage(stage, r, run);
  });
}

c2d_status c2d_run_pipeline(const c2d_config* cfg) {
  return guarded([&] {
    require(cfg, "cfg");
    c2d::runner::run_pipeline(cfg->cfg);
  });
}

c2d_status c2d_divide_file(const char* losses_csv, double tau, const char* out_csv, double* roc_auc,
                           double* labeled_frac) {
  return guarded([&] {
    require(losses_csv, "losses_csv");
    require(out_csv, "out_csv");
    const auto ps = c2d::runner::load_per_sample(losses_csv);
    const auto d = c2d::divide::divide_losses(ps.losses, tau);
    c2d::io::write_file_atomic(out_csv, c2d::runner::encode_division(d));
    if (labeled_frac) *labeled_frac = d.labeled_fraction();
    if (roc_auc) *roc_auc = c2d::warmup::assess_losses(ps.losses, ps.noise_flags, tau).roc_auc;
  });
}

c2d_status c2d_report(const char* const* run_dirs, size_t n, const char* out_csv, char** table, char** warnings) {
  char* t = nullptr;
  const c2d_status s = guarded([&] {
    if (n > 0) require(run_dirs, "run_dirs");
    std::vector<std::filesystem::path> dirs;
    for (size_t i = 0; i < n; ++i) {
      require(run_dirs[i], "run_dirs[i]");
      dirs.emplace_back(run_dirs[i]);
    }
    const auto rep = c2d::runner::compare_report(dirs);
    if (out_csv) c2d::io::write_file_atomic(out_csv, rep.csv);
    std::string w;
    for (const auto& line : rep.warnings) w += line + "\n";
    if (table) t = dup_string(rep.table);
    if (warnings) *warnings = dup_string(w);
    if (table) *table = t;
  });
  if (s != C2D_OK) std::free(t);
  return s;
}

c2d_status c2d_sweep(const c2d_config* base, const double* rates, size_t n_rates, const char* const* inits,
                     size_t n_inits, const char* root) {
  return guarded([&] {
    require(base, "base");
    require(root, "root");
    if (n_rates) require(rates, "rates");
    if (n_inits) require(inits, "inits");
    std::vector<double> r(rates, rates + n_rates);
    std::vector<c2d::warmup::InitKind> k;
    for (size_t i = 0; i < n_inits; ++i) {
      require(inits[i], "inits[i]");
      k.push_back(c2d::warmup::parse_init_kind(inits[i]));
    }
    c2d::runner::sweep(base->cfg, r, k, root);
  });
}

c2d_status c2d_roc_auc(const double* scores, const unsigned char* is_noisy, size_t n, double* out) {
  return guarded([&] {
    require(out, "out");
    if (n) {
      require(scores, "scores");
      require(is_noisy, "is_noisy");
    }
    *out = c2d::metrics::roc_auc(std::span<const double>(scores, n), std::span<const std::uint8_t>(is_noisy, n));
  });
}

void c2d_string_free(char* s) { std::free(s); }

}  // extern "C"
