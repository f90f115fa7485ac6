#include "c2d/runner.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "c2d/error.hpp"
#include "c2d/io.hpp"
#include "c2d/random.hpp"

namespace c2d::runner {

using metrics::MetricRow;

namespace {

std::string fmt(double v) { return io::format_double(v); }

double to_double(const std::string& key, const std::string& v) {
  try {
    return io::parse_double(v, key);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    return io::parse_int(v, key);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
}

std::size_t to_size(const std::string& key, const std::string& v) {
  const long long n = to_int(key, v);
  if (n < 0) throw ConfigError(key + ": expected a nonnegative integer, got '" + v + "'");
  return static_cast<std::size_t>(n);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

template <typename T>
std::string fmt_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::vector<std::size_t> to_size_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (io::trim(v).empty()) return out;
  for (const auto& part : io::split(v, ',')) out.push_back(to_size(key, std::string(io::trim(part))));
  return out;
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  if (io::trim(v).empty()) return out;
  for (const auto& part : io::split(v, ',')) out.push_back(static_cast<int>(to_int(key, std::string(io::trim(part)))));
  return out;
}

const char* noise_name(data::NoiseKind k) { return k == data::NoiseKind::Symmetric ? "symmetric" : "asymmetric"; }

data::NoiseKind parse_noise_kind(const std::string& v) {
  if (v == "symmetric" || v == "sym") return data::NoiseKind::Symmetric;
  if (v == "asymmetric" || v == "asym") return data::NoiseKind::Asymmetric;
  throw ConfigError("noise.kind: expected symmetric or asymmetric, got '" + v + "'");
}

struct Binding {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define C2D_DOUBLE(name, field)                                              \
  Binding {                                                                  \
    name, [](const ExperimentConfig& c) { return fmt(c.field); },            \
        [](ExperimentConfig& c, const std::string& v) { c.field = to_double(name, v); } \
  }
#define C2D_SIZE(name, field)                                                \
  Binding {                                                                  \
    name, [](const ExperimentConfig& c) { return std::to_string(c.field); }, \
        [](ExperimentConfig& c, const std::string& v) { c.field = to_size(name, v); } \
  }
#define C2D_INT(name, field)                                                 \
  Binding {                                                                  \
    name, [](const ExperimentConfig& c) { return std::to_string(c.field); }, \
        [](ExperimentConfig& c, const std::string& v) { c.field = static_cast<int>(to_int(name, v)); } \
  }
#define C2D_BOOL(name, field)                                                \
  Binding {                                                                  \
    name, [](const ExperimentConfig& c) { return fmt_bool(c.field); },       \
        [](ExperimentConfig& c, const std::string& v) { c.field = to_bool(name, v); } \
  }

const std::vector<Binding>& bindings() {
  static const std::vector<Binding> table = {
      {"seed", [](const ExperimentConfig& c) { return std::to_string(c.seed); },
       [](ExperimentConfig& c, const std::string& v) {
         if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
           throw ConfigError("seed: expected an unsigned integer, got '" + v + "'");
         try {
           c.seed = std::stoull(v);
         } catch (const std::exception&) {
           throw ConfigError("seed: out of range '" + v + "'");
         }
       }},
      {"output_dir", [](const ExperimentConfig& c) { return c.output_dir; },
       [](ExperimentConfig& c, const std::string& v) {
         if (v.empty()) throw ConfigError("output_dir: must not be empty");
         c.output_dir = v;
       }},
      C2D_INT("data.num_classes", data.num_classes),
      C2D_SIZE("data.train_per_class", data.train_per_class),
      C2D_SIZE("data.test_per_class", data.test_per_class),
      C2D_SIZE("data.dim", data.dim),
      C2D_DOUBLE("data.separation", data.separation),
      C2D_DOUBLE("data.sigma", data.sigma),
      C2D_DOUBLE("data.proxy_shift", data.proxy_shift),
      C2D_SIZE("data.proxy_per_class", data.proxy_per_class),
      {"noise.kind", [](const ExperimentConfig& c) { return std::string(noise_name(c.noise.kind)); },
       [](ExperimentConfig& c, const std::string& v) { c.noise.kind = parse_noise_kind(v); }},
      C2D_DOUBLE("noise.rate", noise.rate),
      {"noise.flip_map", [](const ExperimentConfig& c) { return fmt_list(c.noise.flip_map); },
       [](ExperimentConfig& c, const std::string& v) { c.noise.flip_map = to_int_list("noise.flip_map", v); }},
      {"model.hidden", [](const ExperimentConfig& c) { return fmt_list(c.model.hidden); },
       [](ExperimentConfig& c, const std::string& v) { c.model.hidden = to_size_list("model.hidden", v); }},
      C2D_SIZE("model.feature_dim", model.feature_dim),
      {"model.proj_hidden", [](const ExperimentConfig& c) { return fmt_list(c.model.proj_hidden); },
       [](ExperimentConfig& c, const std::string& v) { c.model.proj_hidden = to_size_list("model.proj_hidden", v); }},
      C2D_SIZE("model.proj_dim", model.proj_dim),
      C2D_DOUBLE("aug.jitter_sigma", aug.jitter_sigma),
      C2D_DOUBLE("aug.scale_lo", aug.scale_lo),
      C2D_DOUBLE("aug.scale_hi", aug.scale_hi),
      C2D_DOUBLE("aug.mask_fraction", aug.mask_fraction),
      {"ssl.method", [](const ExperimentConfig& c) { return std::string(contrast::to_string(c.ssl.method)); },
       [](ExperimentConfig& c, const std::string& v) { c.ssl.method = contrast::parse_ssl_method(v); }},
      C2D_DOUBLE("ssl.temperature", ssl.temperature),
      C2D_DOUBLE("ssl.barlow_lambda", ssl.barlow_lambda),
      C2D_INT("ssl.epochs", ssl.epochs),
      C2D_SIZE("ssl.batch_size", ssl.batch_size),
      C2D_DOUBLE("ssl.lr", ssl.sgd.lr),
      C2D_DOUBLE("ssl.momentum", ssl.sgd.momentum),
      C2D_DOUBLE("ssl.weight_decay", ssl.sgd.weight_decay),
      C2D_INT("proxy.epochs", proxy.epochs),
      C2D_SIZE("proxy.batch_size", proxy.batch_size),
      C2D_DOUBLE("proxy.lr", proxy.sgd.lr),
      C2D_DOUBLE("proxy.momentum", proxy.sgd.momentum),
      C2D_DOUBLE("proxy.weight_decay", proxy.sgd.weight_decay),
      {"warmup.init", [](const ExperimentConfig& c) { return std::string(warmup::to_string(c.warmup.init)); },
       [](ExperimentConfig& c, const std::string& v) { c.warmup.init = warmup::parse_init_kind(v); }},
      {"warmup.epochs",
       [](const ExperimentConfig& c) { return c.warmup_epochs ? std::to_string(*c.warmup_epochs) : "auto"; },
       [](ExperimentConfig& c, const std::string& v) {
         if (v == "auto") c.warmup_epochs.reset();
         else c.warmup_epochs = static_cast<int>(to_int("warmup.epochs", v));
       }},
      C2D_DOUBLE("warmup.mixup_alpha", warmup.mixup_alpha),
      C2D_SIZE("warmup.batch_size", warmup.batch_size),
      C2D_DOUBLE("warmup.lr", warmup.sgd.lr),
      C2D_DOUBLE("warmup.momentum", warmup.sgd.momentum),
      C2D_DOUBLE("warmup.weight_decay", warmup.sgd.weight_decay),
      C2D_BOOL("warmup.freeze_encoder", warmup.freeze_encoder),
      C2D_BOOL("warmup.probe", warmup.probe),
      {"lnl.method", [](const ExperimentConfig& c) { return std::string(mixtrain::to_string(c.lnl.method)); },
       [](ExperimentConfig& c, const std::string& v) { c.lnl.method = mixtrain::parse_lnl_method(v); }},
      {"lnl.tau", [](const ExperimentConfig& c) { return c.tau ? fmt(*c.tau) : "auto"; },
       [](ExperimentConfig& c, const std::string& v) {
         if (v == "auto") c.tau.reset();
         else c.tau = to_double("lnl.tau", v);
       }},
      C2D_DOUBLE("lnl.lambda_u", lnl.lambda_u),
      C2D_DOUBLE("lnl.sharpen_t", lnl.sharpen_t),
      C2D_DOUBLE("lnl.mixup_alpha", lnl.mixup_alpha),
      C2D_INT("lnl.epochs", lnl.epochs),
      C2D_DOUBLE("lnl.elr_lambda", lnl.elr_lambda),
      C2D_DOUBLE("lnl.elr_beta", lnl.elr_beta),
      C2D_SIZE("lnl.batch_size", lnl.batch_size),
      C2D_DOUBLE("lnl.lr", lnl.sgd.lr),
      C2D_DOUBLE("lnl.momentum", lnl.sgd.momentum),
      C2D_DOUBLE("lnl.weight_decay", lnl.sgd.weight_decay),
      C2D_SIZE("lnl.views", lnl.views),
      C2D_BOOL("lnl.co_guess", lnl.co_guess),
      C2D_DOUBLE("lnl.prior_weight", lnl.prior_weight),
      C2D_SIZE("report.histogram_bins", histogram_bins),
  };
  return table;
}

#undef C2D_DOUBLE
#undef C2D_SIZE
#undef C2D_INT
#undef C2D_BOOL

const Binding& find_binding(const std::string& key) {
  for (const auto& b : bindings())
    if (b.key == key) return b;
  throw ConfigError("unknown config key '" + key + "'");
}

[[noreturn]] void rethrow_with_prefix(const Error& e, const std::string& prefix) {
  const std::string msg = prefix + e.what();
  switch (e.kind()) {
    case ErrorKind::Config: throw ConfigError(msg);
    case ErrorKind::Numerical: throw NumericalError(msg);
    case ErrorKind::Io: throw IoError(msg);
  }
  throw Error(e.kind(), msg);
}

}  // namespace

ExperimentConfig ExperimentConfig::resolved() const {
  ExperimentConfig r = *this;
  const bool pretrained = warmup.init != warmup::InitKind::Random;
  r.warmup_epochs = warmup_epochs.value_or(pretrained ? 5 : 15);
  r.tau = tau.value_or(pretrained ? 0.03 : 0.5);
  r.warmup.epochs = *r.warmup_epochs;
  r.warmup.tau = *r.tau;
  r.lnl.tau = *r.tau;
  r.lnl.aug = aug;
  r.model.input_dim = data.dim;
  r.model.num_classes = data.num_classes > 0 ? static_cast<std::size_t>(data.num_classes) : 0;
  return r;
}

void ExperimentConfig::validate() const {
  if (data.num_classes < 2) throw ConfigError("data.num_classes must be >= 2");
  if (data.train_per_class < 1 || data.test_per_class < 1) throw ConfigError("data: per-class counts must be positive");
  if (data.dim < 1) throw ConfigError("data.dim must be positive");
  if (!(data.separation > 0.0) || !(data.sigma > 0.0)) throw ConfigError("data: separation and sigma must be > 0");
  if (!(data.proxy_shift >= 0.0) || data.proxy_per_class < 1) throw ConfigError("data: invalid proxy settings");
  if (!(noise.rate >= 0.0 && noise.rate <= 1.0)) throw ConfigError("noise.rate must lie in [0,1]");
  if (model.hidden.empty() && model.feature_dim < 1) throw ConfigError("model: empty encoder");
  if (model.feature_dim < 1 || model.proj_dim < 1) throw ConfigError("model: dimensions must be positive");
  if (std::find(model.hidden.begin(), model.hidden.end(), 0u) != model.hidden.end() ||
      std::find(model.proj_hidden.begin(), model.proj_hidden.end(), 0u) != model.proj_hidden.end())
    throw ConfigError("model: layer widths must be positive");
  if (proxy.epochs < 1 || proxy.batch_size < 1) throw ConfigError("proxy: epochs and batch_size must be positive");
  if (histogram_bins < 1) throw ConfigError("report.histogram_bins must be positive");
  if (warmup_epochs && *warmup_epochs < 1) throw ConfigError("warmup.epochs must be positive");
  if (tau && !(*tau > 0.0 && *tau < 1.0)) throw ConfigError("lnl.tau must lie in (0,1)");
  aug.validate();
  ssl.validate();
  const ExperimentConfig r = resolved();
  r.warmup.validate();
  r.lnl.validate();
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& b : bindings()) k.push_back(b.key);
    return k;
  }();
  return keys;
}

void set_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  find_binding(key).set(cfg, std::string(io::trim(value)));
}

std::string get_value(const ExperimentConfig& cfg, const std::string& key) { return find_binding(key).get(cfg); }

std::string encode_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& b : bindings()) out += b.key + " = " + b.get(cfg) + "\n";
  return out;
}

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto body = io::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string_view::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key(io::trim(body.substr(0, eq)));
    const std::string value(io::trim(body.substr(eq + 1)));
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      set_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) { return parse_config(io::read_file(path), path.string()); }

void save_config(const ExperimentConfig& cfg, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  io::write_file_atomic(path, encode_config(cfg));
}

std::uint64_t stage_seed(const ExperimentConfig& cfg, const std::string& stage) {
  return derive_seed(cfg.seed, stage);
}

// ---- RunLog -------------------------------------------------------------

namespace {

std::string cell(double v) { return std::isnan(v) ? std::string() : fmt(v); }

double parse_cell(const std::string& s, const std::string& ctx) {
  return s.empty() ? metrics::kMissing : io::parse_double(s, ctx);
}

}  // namespace

void RunLog::append(const MetricRow& row) {
  if (row.stage.empty()) throw ConfigError("RunLog: row without stage");
  for (auto it = rows_.rbegin(); it != rows_.rend(); ++it) {
    if (it->stage != row.stage) continue;
    if (row.epoch <= it->epoch) {
      throw ConfigError("RunLog: epoch " + std::to_string(row.epoch) + " of stage '" + row.stage +
                        "' does not follow epoch " + std::to_string(it->epoch));
    }
    break;
  }
  rows_.push_back(row);
}

void RunLog::drop_stage(const std::string& stage) {
  std::erase_if(rows_, [&](const MetricRow& r) { return r.stage == stage; });
}

std::vector<MetricRow> RunLog::stage_rows(const std::string& stage) const {
  std::vector<MetricRow> out;
  for (const auto& r : rows_)
    if (r.stage == stage) out.push_back(r);
  return out;
}

std::string RunLog::to_csv() const {
  std::string out = std::string(kRunLogHeader) + "\n";
  for (const auto& r : rows_) {
    out += r.stage + "," + std::to_string(r.epoch) + "," + r.method + "," + cell(r.test_acc) + "," +
           cell(r.train_loss) + "," + cell(r.roc_auc) + "," + cell(r.eff_noise_rate) + "," +
           cell(r.labeled_frac) + "," + cell(r.probe_acc) + "," + r.note + "\n";
  }
  return out;
}

std::string RunLog::train_csv() const {
  std::string out = std::string(kTrainLogHeader) + "\n";
  for (const auto& r : rows_) {
    if (r.stage != "train") continue;
    out += std::to_string(r.epoch) + "," + r.method + "," + cell(r.test_acc) + "," + cell(r.train_loss) + "," +
           cell(r.roc_auc) + "," + cell(r.eff_noise_rate) + "," + cell(r.labeled_frac) + "\n";
  }
  return out;
}

RunLog RunLog::from_csv(const std::vector<std::string>& lines, const std::string& origin) {
  if (lines.empty() || lines.front() != kRunLogHeader) throw IoError(origin + ": missing run log header");
  RunLog log;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::string ctx = origin + ":" + std::to_string(i + 1);
    const auto f = io::split(lines[i], ',');
    if (f.size() != 10) throw IoError(ctx + ": expected 10 fields, got " + std::to_string(f.size()));
    MetricRow r;
    r.stage = f[0];
    r.epoch = static_cast<int>(io::parse_int(f[1], ctx));
    r.method = f[2];
    r.test_acc = parse_cell(f[3], ctx);
    r.train_loss = parse_cell(f[4], ctx);
    r.roc_auc = parse_cell(f[5], ctx);
    r.eff_noise_rate = parse_cell(f[6], ctx);
    r.labeled_frac = parse_cell(f[7], ctx);
    r.probe_acc = parse_cell(f[8], ctx);
    r.note = f[9];
    try {
      log.append(r);
    } catch (const ConfigError& e) {
      throw IoError(ctx + ": " + e.what());
    }
  }
  return log;
}

RunLog RunLog::load(const fs::path& path) { return from_csv(io::read_lines(path), path.string()); }

void RunLog::save(const fs::path& path) const { io::write_file_atomic(path, to_csv()); }

// ---- Artifacts ------------------------------------------------------------

namespace {
const char* net_name(int k) { return k == 0 ? "a" : "b"; }
}  // namespace

fs::path RunPaths::warmup_model(int k) const {
  return dir / "checkpoints" / (std::string("warmup_") + net_name(k) + ".ckpt");
}
fs::path RunPaths::final_model(int k) const {
  return dir / "checkpoints" / (std::string("final_") + net_name(k) + ".ckpt");
}
fs::path RunPaths::per_sample(int k) const { return dir / (std::string("per_sample_") + net_name(k) + ".csv"); }
fs::path RunPaths::division(int k) const { return dir / (std::string("divide_") + net_name(k) + ".csv"); }

std::string encode_per_sample(const data::LabeledDataset& ds, std::span<const double> losses) {
  if (losses.size() != ds.size()) throw ConfigError("per-sample dump: loss count does not match dataset");
  std::string out = "index,true_label,observed_label,is_noisy,loss_epoch_final\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out += std::to_string(i) + "," + std::to_string(ds.true_labels[i]) + "," + std::to_string(ds.observed_labels[i]) +
           "," + (ds.noise_flags[i] ? "1" : "0") + "," + fmt(losses[i]) + "\n";
  }
  return out;
}

PerSample load_per_sample(const fs::path& path) {
  const auto lines = io::read_lines(path);
  if (lines.empty() || lines.front() != "index,true_label,observed_label,is_noisy,loss_epoch_final")
    throw IoError(path.string() + ": missing per-sample header");
  PerSample ps;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::string ctx = path.string() + ":" + std::to_string(i + 1);
    const auto f = io::split(lines[i], ',');
    if (f.size() != 5) throw IoError(ctx + ": expected 5 fields");
    if (io::parse_int(f[0], ctx) != static_cast<long long>(ps.losses.size()))
      throw IoError(ctx + ": indices must be consecutive from 0");
    ps.true_labels.push_back(static_cast<int>(io::parse_int(f[1], ctx)));
    ps.observed_labels.push_back(static_cast<int>(io::parse_int(f[2], ctx)));
    ps.noise_flags.push_back(io::parse_int(f[3], ctx) != 0 ? 1 : 0);
    ps.losses.push_back(io::parse_double(f[4], ctx));
  }
  return ps;
}

std::string encode_division(const divide::DivideResult& d) {
  std::vector<char> labeled(d.w.size(), 0);
  for (std::size_t i : d.labeled_idx) labeled.at(i) = 1;
  std::string out = "index,w_clean,assigned\n";
  for (std::size_t i = 0; i < d.w.size(); ++i) {
    out += std::to_string(i) + "," + fmt(d.w[i]) + "," + (labeled[i] ? "labeled" : "unlabeled") + "\n";
  }
  return out;
}

divide::DivideResult load_division(const fs::path& path, double tau) {
  const auto lines = io::read_lines(path);
  if (lines.empty() || lines.front() != "index,w_clean,assigned") throw IoError(path.string() + ": missing division header");
  divide::DivideResult d;
  d.tau = tau;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::string ctx = path.string() + ":" + std::to_string(i + 1);
    const auto f = io::split(lines[i], ',');
    if (f.size() != 3) throw IoError(ctx + ": expected 3 fields");
    const std::size_t idx = d.w.size();
    if (io::parse_int(f[0], ctx) != static_cast<long long>(idx)) throw IoError(ctx + ": indices must be consecutive from 0");
    d.w.push_back(io::parse_double(f[1], ctx));
    if (f[2] == "labeled") d.labeled_idx.push_back(idx);
    else if (f[2] == "unlabeled") d.unlabeled_idx.push_back(idx);
    else throw IoError(ctx + ": assigned must be labeled or unlabeled");
  }
  return d;
}

// ---- Stages -------------------------------------------------------------

namespace {

RunLog open_log(const RunPaths& run) { return fs::exists(run.runlog()) ? RunLog::load(run.runlog()) : RunLog{}; }

void write_rows(const RunPaths& run, const std::string& stage, const std::vector<MetricRow>& rows) {
  RunLog log = open_log(run);
  log.drop_stage(stage);
  for (const auto& r : rows) log.append(r);
  // Keep pipeline order so re-running a stage leaves the file as a full run would.
  static const std::vector<std::string> order{"gen-data", "pretrain", "warmup", "divide", "train", "probe"};
  RunLog sorted;
  for (const auto& s : order)
    for (const auto& r : log.stage_rows(s)) sorted.append(r);
  for (const auto& r : log.rows())
    if (std::find(order.begin(), order.end(), r.stage) == order.end()) sorted.append(r);
  sorted.save(run.runlog());
}

data::LabeledDataset load_train(const RunPaths& run) { return data::load_dataset(run.train_data()); }
data::LabeledDataset load_test(const RunPaths& run) { return data::load_dataset(run.test_data()); }

void require_file(const fs::path& p, const std::string& producer) {
  if (!fs::exists(p)) throw IoError("missing " + p.string() + " (run the " + producer + " stage first)");
}

Model initial_model(const ExperimentConfig& cfg) { return Model(cfg.model, stage_seed(cfg, "model-init")); }

}  // namespace

void stage_gen_data(const ExperimentConfig& cfg, const RunPaths& run) {
  const auto bench = data::make_benchmark(cfg.data, stage_seed(cfg, "gen-data"));
  const auto train = data::inject_noise(bench.train, cfg.noise, stage_seed(cfg, "noise"));
  fs::create_directories(run.train_data().parent_path());
  data::save_dataset(train, run.train_data());
  data::save_dataset(bench.test, run.test_data());
  if (cfg.warmup.init == warmup::InitKind::SupervisedProxy) data::save_dataset(bench.proxy, run.proxy_data());
  MetricRow row;
  row.stage = "gen-data";
  row.method = noise_name(cfg.noise.kind);
  row.eff_noise_rate = train.noisy_fraction();
  row.labeled_frac = 1.0;
  write_rows(run, row.stage, {row});
}

void stage_pretrain(const ExperimentConfig& cfg, const RunPaths& run) {
  std::vector<MetricRow> rows;
  Model model = initial_model(cfg);
  switch (cfg.warmup.init) {
    case warmup::InitKind::Random:
      throw ConfigError("pretrain is not used with warmup.init = random");
    case warmup::InitKind::Ssl: {
      require_file(run.train_data(), "gen-data");
      const auto train = load_train(run);
      model = contrast::pretrain_ssl(train.features, model, cfg.ssl, cfg.aug, stage_seed(cfg, "pretrain"), &rows);
      break;
    }
    case warmup::InitKind::SupervisedProxy: {
      require_file(run.proxy_data(), "gen-data");
      const auto proxy = data::load_dataset(run.proxy_data());
      model = contrast::pretrain_supervised_proxy(proxy, model, cfg.proxy, stage_seed(cfg, "pretrain"),
                                                  cfg.data.dim, &rows);
      break;
    }
  }
  fs::create_directories(run.encoder().parent_path());
  model.save(run.encoder());
  write_rows(run, "pretrain", rows);
}

void stage_warmup(const ExperimentConfig& cfg, const RunPaths& run) {
  require_file(run.train_data(), "gen-data");
  const auto train = load_train(run);
  const auto test = load_test(run);
  Model encoder = initial_model(cfg);
  if (cfg.warmup.init != warmup::InitKind::Random) {
    require_file(run.encoder(), "pretrain");
    encoder = Model::load(run.encoder());
    if (!(encoder.shape() == cfg.model)) throw ConfigError("encoder checkpoint does not match model.* settings");
  }
  fs::create_directories(run.encoder().parent_path());
  std::vector<MetricRow> rows;
  for (int k = 0; k < 2; ++k) {
    Model m = encoder;
    m.reset_classifier(stage_seed(cfg, std::string("classifier-") + net_name(k)));
    warmup::WarmupConfig wc = cfg.warmup;
    // Only network a is instrumented; b is its independently seeded twin.
    if (k == 1) wc.probe = false;
    auto res = warmup::run_warmup(train, test, std::move(m), wc, stage_seed(cfg, std::string("warmup-") + net_name(k)));
    res.model.save(run.warmup_model(k));
    const auto& losses = res.trace.final_losses();
    io::write_file_atomic(run.per_sample(k), encode_per_sample(train, losses));
    if (k == 0) {
      rows = res.rows;
      io::write_file_atomic(run.histogram(),
                            metrics::loss_histogram(losses, train.noise_flags, cfg.histogram_bins).to_csv());
    }
  }
  write_rows(run, "warmup", rows);
}

void stage_divide(const ExperimentConfig& cfg, const RunPaths& run) {
  require_file(run.per_sample(0), "warmup");
  require_file(run.per_sample(1), "warmup");
  const auto a = load_per_sample(run.per_sample(0));
  const auto b = load_per_sample(run.per_sample(1));
  if (a.losses.size() != b.losses.size()) throw IoError("per-sample dumps differ in length");
  const auto co = mixtrain::co_divide(a.losses, b.losses, cfg.lnl.tau, cfg.lnl.gmm);
  io::write_file_atomic(run.division(0), encode_division(co.for_a));
  io::write_file_atomic(run.division(1), encode_division(co.for_b));

  const auto sa = warmup::assess_losses(a.losses, a.noise_flags, cfg.lnl.tau);
  const auto sb = warmup::assess_losses(b.losses, b.noise_flags, cfg.lnl.tau);
  MetricRow row;
  row.stage = "divide";
  row.method = "gmm";
  if (std::isfinite(sa.roc_auc) && std::isfinite(sb.roc_auc)) row.roc_auc = 0.5 * (sa.roc_auc + sb.roc_auc);
  row.eff_noise_rate = 0.5 * (metrics::effective_noise_rate(co.for_a.labeled_idx, a.noise_flags) +
                              metrics::effective_noise_rate(co.for_b.labeled_idx, a.noise_flags));
  row.labeled_frac = 0.5 * (co.for_a.labeled_fraction() + co.for_b.labeled_fraction());
  write_rows(run, row.stage, {row});
}

void stage_train(const ExperimentConfig& cfg, const RunPaths& run) {
  require_file(run.train_data(), "gen-data");
  require_file(run.warmup_model(0), "warmup");
  const auto train = load_train(run);
  const auto test = load_test(run);
  const std::uint64_t seed = stage_seed(cfg, "train");
  const auto two = [&] {
    require_file(run.warmup_model(1), "warmup");
    return std::array<Model, 2>{Model::load(run.warmup_model(0)), Model::load(run.warmup_model(1))};
  };
  mixtrain::TrainResult res;
  switch (cfg.lnl.method) {
    case mixtrain::LnlMethod::DivideMix: {
      require_file(run.division(0), "divide");
      require_file(run.division(1), "divide");
      std::array<divide::DivideResult, 2> divisions{load_division(run.division(0), cfg.lnl.tau),
                                                    load_division(run.division(1), cfg.lnl.tau)};
      for (const auto& d : divisions)
        if (d.w.size() != train.size()) throw IoError("division does not match the training set");
      res = mixtrain::run_dividemix(train, test, two(), std::move(divisions), cfg.lnl, seed);
      break;
    }
    case mixtrain::LnlMethod::OracleMixMatch:
      res = mixtrain::oracle_split_train(train, test, two(), cfg.lnl, seed);
      break;
    case mixtrain::LnlMethod::Elr:
      res = mixtrain::run_elr(train, test, Model::load(run.warmup_model(0)), cfg.lnl, seed);
      break;
    case mixtrain::LnlMethod::CrossEntropy:
      res = mixtrain::run_cross_entropy(train, test, Model::load(run.warmup_model(0)), cfg.lnl, seed);
      break;
  }
  fs::remove(run.final_model(1));
  for (std::size_t k = 0; k < res.models.size(); ++k) res.models[k].save(run.final_model(static_cast<int>(k)));
  write_rows(run, "train", res.rows);
  io::write_file_atomic(run.train_log(), open_log(run).train_csv());
}

void stage_probe(const ExperimentConfig& cfg, const RunPaths& run) {
  require_file(run.final_model(0), "train");
  const auto train = load_train(run);
  const auto test = load_test(run);
  std::vector<Model> models{Model::load(run.final_model(0))};
  if (fs::exists(run.final_model(1))) models.push_back(Model::load(run.final_model(1)));
  const Model& m = models.front();
  const auto probe = metrics::linear_probe(m.features(train.features), train.true_labels, m.features(test.features),
                                           test.true_labels, train.num_classes);
  MetricRow row;
  row.stage = "probe";
  row.method = "linear";
  row.test_acc = mixtrain::ensemble_accuracy(models, test);
  row.probe_acc = probe.test_acc;
  if (!probe.converged) row.note = "probe-not-converged";
  write_rows(run, row.stage, {row});
  metrics::export_features(train, m, run.features());

  const RunLog log = open_log(run);
  std::ostringstream s;
  s << "method " << mixtrain::to_string(cfg.lnl.method) << ", init " << warmup::to_string(cfg.warmup.init)
    << ", noise " << noise_name(cfg.noise.kind) << " " << fmt(cfg.noise.rate) << "\n";
  for (const char* stage : {"warmup", "train"}) {
    const auto rows = log.stage_rows(stage);
    if (rows.empty()) continue;
    double peak = metrics::kMissing;
    for (const auto& r : rows)
      if (std::isfinite(r.test_acc) && !(r.test_acc <= peak)) peak = r.test_acc;
    s << stage << ": peak test_acc " << cell(peak) << ", final test_acc " << cell(rows.back().test_acc)
      << ", final roc_auc " << cell(rows.back().roc_auc) << "\n";
  }
  s << "probe: test_acc " << cell(row.test_acc) << ", probe_acc " << cell(row.probe_acc) << "\n";
  io::write_file_atomic(run.summary(), s.str());
}

void run_stage(const std::string& stage, const ExperimentConfig& cfg, const RunPaths& run) {
  static const std::map<std::string, void (*)(const ExperimentConfig&, const RunPaths&)> stages = {
      {"gen-data", stage_gen_data}, {"pretrain", stage_pretrain}, {"warmup", stage_warmup},
      {"divide", stage_divide},     {"train", stage_train},       {"probe", stage_probe},
  };
  const auto it = stages.find(stage);
  if (it == stages.end()) throw ConfigError("unknown stage '" + stage + "'");
  try {
    fs::create_directories(run.dir);
    it->second(cfg.resolved(), run);
  } catch (const Error& e) {
    rethrow_with_prefix(e, "stage " + stage + ": ");
  } catch (const fs::filesystem_error& e) {
    throw IoError("stage " + stage + ": " + e.what());
  }
}

fs::path run_pipeline(const ExperimentConfig& cfg) {
  const ExperimentConfig r = cfg.resolved();
  r.validate();
  const RunPaths run{r.output_dir};
  fs::create_directories(run.dir);
  // A rerun starts from a clean log so the CSVs depend only on the config.
  fs::remove(run.runlog());
  save_config(r, run.config());
  run_stage("gen-data", r, run);
  if (r.warmup.init != warmup::InitKind::Random) run_stage("pretrain", r, run);
  run_stage("warmup", r, run);
  run_stage("divide", r, run);
  run_stage("train", r, run);
  run_stage("probe", r, run);
  return run.dir;
}

// ---- Reports ------------------------------------------------------------

Report compare_report(const std::vector<fs::path>& run_dirs) {
  if (run_dirs.size() < 2) throw ConfigError("report needs at least two run directories");
  std::vector<std::string> labels;
  std::vector<RunLog> logs;
  for (const auto& d : run_dirs) {
    const RunPaths run{d};
    require_file(run.runlog(), "pipeline");
    logs.push_back(RunLog::load(run.runlog()));
    std::string label = fs::path(d).lexically_normal().filename().string();
    if (label.empty()) label = fs::path(d).lexically_normal().parent_path().filename().string();
    if (label.empty()) label = "run";
    std::string unique = label;
    for (int n = 2; std::find(labels.begin(), labels.end(), unique) != labels.end(); ++n)
      unique = label + "#" + std::to_string(n);
    labels.push_back(unique);
  }

  Report rep;
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"stage", "epoch"};
  for (const auto& l : labels)
    for (const char* col : {"test_acc", "roc_auc", "probe_acc"}) header.push_back(l + "." + col);
  cells.push_back(header);

  using Getter = double MetricRow::*;
  const Getter cols[] = {&MetricRow::test_acc, &MetricRow::roc_auc, &MetricRow::probe_acc};
  for (const char* stage : {"warmup", "train"}) {
    std::vector<std::map<int, MetricRow>> by_epoch;
    std::set<int> common;
    bool first = true, any = false;
    for (const auto& log : logs) {
      std::map<int, MetricRow> m;
      for (const auto& r : log.stage_rows(stage)) m[r.epoch] = r;
      any = any || !m.empty();
      std::set<int> epochs;
      for (const auto& [e, _] : m) epochs.insert(e);
      if (first) {
        common = epochs;
        first = false;
      } else {
        std::set<int> both;
        std::set_intersection(common.begin(), common.end(), epochs.begin(), epochs.end(),
                              std::inserter(both, both.begin()));
        common = std::move(both);
      }
      by_epoch.push_back(std::move(m));
    }
    if (!any) continue;
    for (std::size_t k = 0; k < by_epoch.size(); ++k) {
      if (by_epoch[k].size() != common.size()) {
        rep.warnings.push_back(std::string("stage ") + stage + ": epoch grid of " + labels[k] +
                               " differs; aligned on " + std::to_string(common.size()) + " common epochs");
      }
    }
    if (common.empty()) continue;
    for (int e : common) {
      std::vector<std::string> line{stage, std::to_string(e)};
      for (const auto& m : by_epoch)
        for (Getter g : cols) line.push_back(cell(m.at(e).*g));
      cells.push_back(line);
    }
    std::vector<std::string> peak{std::string(stage) + ":peak", ""};
    std::vector<std::string> final{std::string(stage) + ":final", ""};
    for (const auto& m : by_epoch)
      for (Getter g : cols) {
        double best = metrics::kMissing;
        for (int e : common) {
          const double v = m.at(e).*g;
          if (std::isfinite(v) && !(v <= best)) best = v;
        }
        peak.push_back(cell(best));
        final.push_back(cell(m.at(*common.rbegin()).*g));
      }
    cells.push_back(peak);
    cells.push_back(final);
  }

  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : cells)
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  for (const auto& line : cells) {
    for (std::size_t c = 0; c < line.size(); ++c) {
      rep.csv += (c ? "," : "") + line[c];
      std::string padded = line[c];
      padded.resize(width[c], ' ');
      rep.table += (c ? "  " : "") + padded;
    }
    while (!rep.table.empty() && rep.table.back() == ' ') rep.table.pop_back();
    rep.csv += "\n";
    rep.table += "\n";
  }
  return rep;
}

std::vector<fs::path> sweep(const ExperimentConfig& base, const std::vector<double>& noise_rates,
                            const std::vector<warmup::InitKind>& inits, const fs::path& root) {
  if (noise_rates.empty() || inits.empty()) throw ConfigError("sweep: empty grid");
  std::vector<fs::path> dirs;
  for (double rate : noise_rates)
    for (auto init : inits) {
      ExperimentConfig c = base;
      c.noise.rate = rate;
      c.warmup.init = init;
      c.output_dir = (root / ("noise" + fmt(rate) + "_" + warmup::to_string(init))).string();
      dirs.push_back(run_pipeline(c));
    }
  return dirs;
}

}  // namespace c2d::runner
