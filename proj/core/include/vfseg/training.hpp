#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <vector>

#include "vfseg/config.hpp"
#include "vfseg/fusion.hpp"
#include "vfseg/losses.hpp"
#include "vfseg/models/model_config.hpp"

namespace vfseg {

struct TrainConfig {
  int batch_size = 4;
  double initial_lr = 1e-3;
  double weight_decay = 1e-5;
  int64_t lr_halve_every = 500;
  int64_t max_iterations = 2000;
  uint64_t seed = 0;
  int64_t checkpoint_every = 500;
  int64_t eval_every = 100;
  int heldout_samples = 8;          // pretext evaluation set size
  Shape3 crop_shape{16, 32, 32};    // fine-tuning crops
  Shape3 inference_window{16, 32, 32};
  double inference_overlap = 0.25;
  bool deterministic = true;
  int workers = 0;  // background batch producers; results do not depend on it
  FusionParams fusion;
  LossConfig loss;

  void validate() const;

  /// initial_lr * 2^-floor((step - 1) / lr_halve_every), steps counted from 1.
  double lr_at(int64_t step) const;

  /// Full-scale pretraining preset (100k iterations, halving every 20k).
  static TrainConfig full_scale_pretrain();
};

void to_json(Json& j, const TrainConfig& c);
void from_json(const Json& j, TrainConfig& c);

/// A complete run description: {"model": ..., "train": ..., "fusion": ..., "loss": ...}.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

RunConfig load_run_config(const std::filesystem::path& path);
Json to_json(const RunConfig& rc);
RunConfig run_config_from_json(const Json& j);

struct IterationRecord {
  int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

struct EvalRecord {
  int64_t step = 0;
  std::vector<double> dice;  // per class, class 0 first
  double mean_foreground = 0.0;
};

/// Line-delimited JSON: {"kind":"iter",...} / {"kind":"eval",...}.
class RunLog {
 public:
  RunLog() = default;
  explicit RunLog(std::filesystem::path path) : path_(std::move(path)) {}

  void add(const IterationRecord& r);
  void add(const EvalRecord& r);

  const std::vector<IterationRecord>& iterations() const noexcept { return iters_; }
  const std::vector<EvalRecord>& evals() const noexcept { return evals_; }
  std::vector<double> loss_trace() const;

  /// Drops records after `step` (used when resuming).
  void truncate(int64_t step);
  void rewrite() const;

  static RunLog read(const std::filesystem::path& path);
  const std::filesystem::path& path() const noexcept { return path_; }
  void set_path(std::filesystem::path p) { path_ = std::move(p); }

 private:
  void append_line(const Json& j) const;

  std::filesystem::path path_;
  std::vector<IterationRecord> iters_;
  std::vector<EvalRecord> evals_;
};

/// Stacks volumes into (N, 1, D, H, W) float32.
torch::Tensor to_image_batch(const std::vector<const Volume*>& volumes);
/// Stacks label maps into (N, D, H, W) int64.
torch::Tensor to_label_batch(const std::vector<const LabelVolume*>& labels);

/// Two-panel PNG: training loss and evaluation mean foreground Dice vs step.
void save_run_summary(const RunLog& log, const std::filesystem::path& path, const std::string& title);

void set_learning_rate(torch::optim::Optimizer& opt, double lr);

/// Configures torch for reproducible CPU execution (single intra-op thread,
/// deterministic kernels).
void configure_determinism(bool deterministic);

}  // namespace vfseg
