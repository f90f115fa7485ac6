#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "c2d/contrast.hpp"
#include "c2d/data.hpp"
#include "c2d/divide.hpp"
#include "c2d/metrics.hpp"
#include "c2d/mixtrain.hpp"
#include "c2d/model.hpp"
#include "c2d/warmup.hpp"

namespace c2d::runner {

namespace fs = std::filesystem;

struct ExperimentConfig {
  std::uint64_t seed = 1;
  data::BenchmarkSpec data{};
  data::NoiseSpec noise{data::NoiseKind::Symmetric, 0.8, {}};
  ModelShape model{};
  contrast::SslConfig ssl{};
  data::AugmentationSpec aug{};
  contrast::ProxyConfig proxy{};
  warmup::WarmupConfig warmup{};
  mixtrain::LnlConfig lnl{};
  /// Unset means "auto": resolved from warmup.init.
  std::optional<int> warmup_epochs;
  std::optional<double> tau;
  std::size_t histogram_bins = 20;
  std::string output_dir = "runs/default";

  /// Fills the auto fields and copies shared values (input dim, classes,
  /// augmentation, tau) into the stage configs.
  ExperimentConfig resolved() const;
  void validate() const;
};

/// Every key accepted in a config file, in file order.
const std::vector<std::string>& config_keys();
void set_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::string get_value(const ExperimentConfig& cfg, const std::string& key);

/// `section.key = value` lines; '#' starts a comment.
std::string encode_config(const ExperimentConfig& cfg);
ExperimentConfig parse_config(const std::string& text, const std::string& origin);
ExperimentConfig load_config(const fs::path& path);
void save_config(const ExperimentConfig& cfg, const fs::path& path);

/// Seed of one pipeline stage; stages never share a random stream.
std::uint64_t stage_seed(const ExperimentConfig& cfg, const std::string& stage);

inline constexpr const char* kRunLogHeader =
    "stage,epoch,method,test_acc,train_loss,roc_auc,eff_noise_rate,labeled_frac,probe_acc,note";
inline constexpr const char* kTrainLogHeader =
    "epoch,method,test_acc,train_loss,roc_auc,eff_noise_rate,labeled_frac";

/// Append-only metric rows. Within a stage epochs must increase.
class RunLog {
 public:
  void append(const metrics::MetricRow& row);
  /// Drops every row of the stage (used when a stage is re-run).
  void drop_stage(const std::string& stage);
  const std::vector<metrics::MetricRow>& rows() const noexcept { return rows_; }
  std::vector<metrics::MetricRow> stage_rows(const std::string& stage) const;

  std::string to_csv() const;
  /// The train stage in the per-epoch training format.
  std::string train_csv() const;
  static RunLog from_csv(const std::vector<std::string>& lines, const std::string& origin);
  static RunLog load(const fs::path& path);
  void save(const fs::path& path) const;

 private:
  std::vector<metrics::MetricRow> rows_;
};

/// File layout of a run directory.
struct RunPaths {
  fs::path dir;

  fs::path config() const { return dir / "config.txt"; }
  fs::path train_data() const { return dir / "data" / "train.csv"; }
  fs::path test_data() const { return dir / "data" / "test.csv"; }
  fs::path proxy_data() const { return dir / "data" / "proxy.csv"; }
  fs::path encoder() const { return dir / "checkpoints" / "encoder.ckpt"; }
  fs::path warmup_model(int k) const;
  fs::path final_model(int k) const;
  fs::path runlog() const { return dir / "runlog.csv"; }
  fs::path train_log() const { return dir / "train_log.csv"; }
  fs::path per_sample(int k) const;
  fs::path division(int k) const;
  fs::path histogram() const { return dir / "loss_histogram.csv"; }
  fs::path features() const { return dir / "features.csv"; }
  fs::path summary() const { return dir / "summary.txt"; }
};

/// index,true_label,observed_label,is_noisy,loss_epoch_final
std::string encode_per_sample(const data::LabeledDataset& ds, std::span<const double> losses);
struct PerSample {
  std::vector<int> true_labels;
  std::vector<int> observed_labels;
  std::vector<std::uint8_t> noise_flags;
  std::vector<double> losses;
};
PerSample load_per_sample(const fs::path& path);

/// index,w_clean,assigned
std::string encode_division(const divide::DivideResult& d);
divide::DivideResult load_division(const fs::path& path, double tau);

// Pipeline stages. Each reads its inputs from the run directory written by
// the previous stages, appends its rows to runlog.csv and checkpoints its
// outputs. cfg must be resolved.
void stage_gen_data(const ExperimentConfig& cfg, const RunPaths& run);
void stage_pretrain(const ExperimentConfig& cfg, const RunPaths& run);
void stage_warmup(const ExperimentConfig& cfg, const RunPaths& run);
void stage_divide(const ExperimentConfig& cfg, const RunPaths& run);
void stage_train(const ExperimentConfig& cfg, const RunPaths& run);
void stage_probe(const ExperimentConfig& cfg, const RunPaths& run);

/// Runs a named stage; errors are re-thrown with the stage name prepended.
void run_stage(const std::string& stage, const ExperimentConfig& cfg, const RunPaths& run);

/// Resolves cfg, writes it to the run directory and runs every stage.
fs::path run_pipeline(const ExperimentConfig& cfg);

struct Report {
  std::string csv;
  std::string table;
  std::vector<std::string> warnings;
};

/// Per-epoch test_acc/roc_auc/probe_acc of several runs side by side, plus
/// peak and final rows for every stage.
Report compare_report(const std::vector<fs::path>& run_dirs);

/// One run directory per (noise rate, init) pair under root.
std::vector<fs::path> sweep(const ExperimentConfig& base, const std::vector<double>& noise_rates,
                            const std::vector<warmup::InitKind>& inits, const fs::path& root);

}  // namespace c2d::runner
