// c2d-lab: command-line front end over the c2dlab C API.
#include <c2dlab/c2dlab.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

namespace fs = std::filesystem;

namespace {

// Status carried out of a failed C call.
struct Failure {
  c2d_status status;
  std::string message;
};

void check(c2d_status s) {
  if (s != C2D_OK) throw Failure{s, c2d_last_error()};
}

class Config {
 public:
  Config() { check(c2d_config_new(&cfg_)); }
  ~Config() { c2d_config_free(cfg_); }
  Config(const Config&) = delete;
  Config& operator=(const Config&) = delete;

  c2d_config* get() const { return cfg_; }
  void set(const std::string& key, const std::string& value) { check(c2d_config_set(cfg_, key.c_str(), value.c_str())); }
  void load(const std::string& path) { check(c2d_config_load(cfg_, path.c_str())); }
  std::string path(const std::string& artifact) const {
    std::size_t needed = 0;
    check(c2d_run_path(cfg_, artifact.c_str(), nullptr, 0, &needed));
    std::string buf(needed, '\0');
    check(c2d_run_path(cfg_, artifact.c_str(), buf.data(), buf.size(), nullptr));
    buf.resize(needed - 1);
    return buf;
  }

 private:
  c2d_config* cfg_ = nullptr;
};

struct Common {
  std::string config;
  std::string run_dir;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "Config file (section.key = value lines)");
  sub->add_option("--run-dir", c.run_dir, "Run directory (overrides output_dir)");
  sub->add_option("--seed", c.seed, "Master seed");
  sub->add_option("--set", c.sets, "Override any config key: key=value")->allow_extra_args(false);
}

// Precedence: defaults < config file (or the run directory's config) <
// --set < dedicated flags applied by the caller.
void prepare(Config& cfg, const Common& c, bool reuse_run_config) {
  if (!c.config.empty()) {
    cfg.load(c.config);
  } else if (reuse_run_config && !c.run_dir.empty()) {
    Config probe;
    probe.set("output_dir", c.run_dir);
    const std::string existing = probe.path("config");
    if (fs::exists(existing)) cfg.load(existing);
  }
  if (!c.run_dir.empty()) cfg.set("output_dir", c.run_dir);
  if (c.seed) cfg.set("seed", std::to_string(*c.seed));
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Failure{C2D_ERR_CONFIG, "--set expects key=value, got '" + kv + "'"};
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
}

template <typename T>
void set_if(Config& cfg, const std::string& key, const std::optional<T>& v) {
  if (!v) return;
  std::ostringstream s;
  s.precision(17);
  s << *v;
  cfg.set(key, s.str());
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void print_file(const std::string& path) {
  std::ifstream in(path);
  if (in) std::cout << in.rdbuf();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale noisy-label lab: contrastive pre-training, warm-up, divide and co-training"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(c2d_version()));

  // gen-data
  Common gen_c;
  std::optional<double> gen_rate;
  std::optional<std::string> gen_kind, gen_init;
  std::optional<int> gen_classes;
  std::optional<std::size_t> gen_per_class, gen_dim;
  std::optional<double> gen_sep;
  auto* gen = app.add_subcommand("gen-data", "Generate the blob benchmark and inject label noise");
  add_common(gen, gen_c);
  gen->add_option("--noise-rate", gen_rate, "Noise rate r in [0,1]");
  gen->add_option("--noise-kind", gen_kind, "symmetric|asymmetric");
  gen->add_option("--classes", gen_classes, "Number of classes");
  gen->add_option("--per-class", gen_per_class, "Training samples per class");
  gen->add_option("--dim", gen_dim, "Feature dimension");
  gen->add_option("--separation", gen_sep, "Distance between class means");
  gen->add_option("--init", gen_init, "random|ssl|proxy (proxy also writes the proxy set)");

  // pretrain
  Common pre_c;
  std::optional<std::string> pre_method, pre_init, pre_out;
  std::optional<int> pre_epochs;
  std::optional<double> pre_temp;
  auto* pre = app.add_subcommand("pretrain", "Self-supervised (or proxy) encoder pre-training");
  add_common(pre, pre_c);
  pre->add_option("--method", pre_method, "simclr|barlow");
  pre->add_option("--init", pre_init, "ssl|proxy");
  pre->add_option("--epochs", pre_epochs, "Pre-training epochs");
  pre->add_option("--temperature", pre_temp, "NT-Xent temperature");
  pre->add_option("--out", pre_out, "Also copy the encoder checkpoint here");

  // warmup
  Common wu_c;
  std::optional<std::string> wu_init, wu_ckpt;
  std::optional<std::string> wu_epochs;
  std::optional<double> wu_alpha;
  bool wu_freeze = false, wu_no_probe = false;
  auto* wu = app.add_subcommand("warmup", "Cross-entropy warm-up of both networks");
  add_common(wu, wu_c);
  wu->add_option("--init", wu_init, "random|ssl|proxy");
  wu->add_option("--epochs", wu_epochs, "Warm-up epochs or 'auto'");
  wu->add_option("--mixup-alpha", wu_alpha, "Mixup Beta(alpha, alpha); 0 disables");
  wu->add_option("--checkpoint", wu_ckpt, "Encoder checkpoint to start from");
  wu->add_flag("--freeze-encoder", wu_freeze, "Train only the classifier");
  wu->add_flag("--no-probe", wu_no_probe, "Skip the per-epoch linear probe");

  // divide
  Common div_c;
  std::optional<std::string> div_losses, div_out, div_tau;
  auto* dv = app.add_subcommand("divide", "GMM clean/noisy division of per-sample losses");
  add_common(dv, div_c);
  dv->add_option("--tau", div_tau, "Threshold on the clean posterior, or 'auto'");
  dv->add_option("--losses", div_losses, "Per-sample loss CSV (standalone mode)");
  dv->add_option("--out", div_out, "Division CSV to write (standalone mode)");

  // train
  Common tr_c;
  std::optional<std::string> tr_method, tr_tau;
  std::optional<double> tr_lu, tr_t;
  std::optional<int> tr_epochs;
  auto* tr = app.add_subcommand("train", "Noise-aware training after the divide");
  add_common(tr, tr_c);
  tr->add_option("--method", tr_method, "dividemix|elr|oracle|ce");
  tr->add_option("--lambda-u", tr_lu, "Unlabeled loss weight");
  tr->add_option("--tau", tr_tau, "Clean-posterior threshold or 'auto'");
  tr->add_option("--sharpen-t", tr_t, "Sharpening temperature");
  tr->add_option("--epochs", tr_epochs, "Training epochs");

  // probe
  Common pr_c;
  auto* pr = app.add_subcommand("probe", "Linear probe, feature export and summary");
  add_common(pr, pr_c);

  // report
  std::vector<std::string> rep_dirs;
  std::string rep_out;
  auto* rep = app.add_subcommand("report", "Compare run directories epoch by epoch");
  rep->add_option("runs", rep_dirs, "Run directories")->required()->expected(2, -1);
  rep->add_option("--out", rep_out, "Summary CSV path");

  // sweep
  Common sw_c;
  std::string sw_noise = "0.2,0.5,0.8", sw_inits = "random,proxy,ssl", sw_root = "runs/sweep";
  auto* sw = app.add_subcommand("sweep", "Full pipeline over a noise x init grid");
  add_common(sw, sw_c);
  sw->add_option("--noise", sw_noise, "Comma-separated noise rates")->capture_default_str();
  sw->add_option("--init", sw_inits, "Comma-separated inits")->capture_default_str();
  sw->add_option("--root", sw_root, "Parent directory of the run directories")->capture_default_str();

  // run
  Common run_c;
  std::optional<std::string> run_init, run_method;
  std::optional<double> run_rate;
  auto* rn = app.add_subcommand("run", "Whole pipeline: gen-data, pretrain, warmup, divide, train, probe");
  add_common(rn, run_c);
  rn->add_option("--init", run_init, "random|ssl|proxy");
  rn->add_option("--method", run_method, "dividemix|elr|oracle|ce");
  rn->add_option("--noise-rate", run_rate, "Noise rate r in [0,1]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    Config cfg;
    if (gen->parsed()) {
      prepare(cfg, gen_c, false);
      set_if(cfg, "noise.rate", gen_rate);
      set_if(cfg, "noise.kind", gen_kind);
      set_if(cfg, "data.num_classes", gen_classes);
      set_if(cfg, "data.train_per_class", gen_per_class);
      set_if(cfg, "data.dim", gen_dim);
      set_if(cfg, "data.separation", gen_sep);
      set_if(cfg, "warmup.init", gen_init);
      check(c2d_run_stage(cfg.get(), "gen-data"));
      std::cout << "wrote " << cfg.path("train_data") << "\n";
    } else if (pre->parsed()) {
      prepare(cfg, pre_c, true);
      set_if(cfg, "ssl.method", pre_method);
      set_if(cfg, "warmup.init", pre_init);
      set_if(cfg, "ssl.epochs", pre_epochs);
      set_if(cfg, "ssl.temperature", pre_temp);
      check(c2d_run_stage(cfg.get(), "pretrain"));
      if (pre_out) fs::copy_file(cfg.path("encoder"), *pre_out, fs::copy_options::overwrite_existing);
      std::cout << "wrote " << (pre_out ? *pre_out : cfg.path("encoder")) << "\n";
    } else if (wu->parsed()) {
      prepare(cfg, wu_c, true);
      set_if(cfg, "warmup.init", wu_init);
      set_if(cfg, "warmup.epochs", wu_epochs);
      set_if(cfg, "warmup.mixup_alpha", wu_alpha);
      if (wu_freeze) cfg.set("warmup.freeze_encoder", "true");
      if (wu_no_probe) cfg.set("warmup.probe", "false");
      if (wu_ckpt) {
        const fs::path dst = cfg.path("encoder");
        fs::create_directories(dst.parent_path());
        if (!fs::exists(dst) || !fs::equivalent(*wu_ckpt, dst))
          fs::copy_file(*wu_ckpt, dst, fs::copy_options::overwrite_existing);
      }
      check(c2d_run_stage(cfg.get(), "warmup"));
      std::cout << "wrote " << cfg.path("per_sample_a") << "\n";
    } else if (dv->parsed()) {
      if (div_losses || div_out) {
        if (!div_losses || !div_out) throw Failure{C2D_ERR_CONFIG, "divide: --losses and --out go together"};
        double tau = 0.5;
        if (div_tau && *div_tau != "auto") {
          try {
            tau = std::stod(*div_tau);
          } catch (const std::exception&) {
            throw Failure{C2D_ERR_CONFIG, "divide: bad --tau '" + *div_tau + "'"};
          }
        }
        double auc = 0.0, frac = 0.0;
        check(c2d_divide_file(div_losses->c_str(), tau, div_out->c_str(), &auc, &frac));
        std::cout << "labeled_frac " << frac;
        if (auc == auc) std::cout << " roc_auc " << auc;
        std::cout << "\n";
      } else {
        prepare(cfg, div_c, true);
        set_if(cfg, "lnl.tau", div_tau);
        check(c2d_run_stage(cfg.get(), "divide"));
        std::cout << "wrote " << cfg.path("divide_a") << "\n";
      }
    } else if (tr->parsed()) {
      prepare(cfg, tr_c, true);
      set_if(cfg, "lnl.method", tr_method);
      set_if(cfg, "lnl.lambda_u", tr_lu);
      set_if(cfg, "lnl.tau", tr_tau);
      set_if(cfg, "lnl.sharpen_t", tr_t);
      set_if(cfg, "lnl.epochs", tr_epochs);
      check(c2d_run_stage(cfg.get(), "train"));
      std::cout << "wrote " << cfg.path("train_log") << "\n";
    } else if (pr->parsed()) {
      prepare(cfg, pr_c, true);
      check(c2d_run_stage(cfg.get(), "probe"));
      print_file(cfg.path("summary"));
    } else if (rep->parsed()) {
      std::vector<const char*> dirs;
      for (const auto& d : rep_dirs) dirs.push_back(d.c_str());
      char* table = nullptr;
      char* warnings = nullptr;
      check(c2d_report(dirs.data(), dirs.size(), rep_out.empty() ? nullptr : rep_out.c_str(), &table, &warnings));
      std::cerr << warnings;
      std::cout << table;
      c2d_string_free(table);
      c2d_string_free(warnings);
    } else if (sw->parsed()) {
      prepare(cfg, sw_c, false);
      std::vector<double> rates;
      for (const auto& r : split_list(sw_noise)) {
        try {
          rates.push_back(std::stod(r));
        } catch (const std::exception&) {
          throw Failure{C2D_ERR_CONFIG, "sweep: bad noise rate '" + r + "'"};
        }
      }
      const auto inits = split_list(sw_inits);
      std::vector<const char*> init_ptrs;
      for (const auto& i : inits) init_ptrs.push_back(i.c_str());
      check(c2d_sweep(cfg.get(), rates.data(), rates.size(), init_ptrs.data(), init_ptrs.size(), sw_root.c_str()));
      std::cout << "wrote " << rates.size() * inits.size() << " runs under " << sw_root << "\n";
    } else if (rn->parsed()) {
      prepare(cfg, run_c, false);
      set_if(cfg, "warmup.init", run_init);
      set_if(cfg, "lnl.method", run_method);
      set_if(cfg, "noise.rate", run_rate);
      check(c2d_run_pipeline(cfg.get()));
      print_file(cfg.path("summary"));
    }
  } catch (const Failure& f) {
    std::cerr << "c2d-lab: error: " << f.message << "\n";
    return static_cast<int>(f.status);
  } catch (const fs::filesystem_error& e) {
    std::cerr << "c2d-lab: error: " << e.what() << "\n";
    return C2D_ERR_IO;
  }
  return 0;
}
