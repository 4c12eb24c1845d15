#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vfseg/evaluation.hpp"
#include "vfseg/finetune.hpp"
#include "vfseg/pretrain.hpp"

namespace vfseg {

struct DownstreamData {
  LabeledCorpus train, val, test;
};

struct DownstreamRun {
  std::string label;
  uint64_t seed = 0;
  double best_val_dice = 0.0;
  double test_mean_dice = 0.0;
  MetricsReport report;
};

/// Fine-tunes from `init` (or from scratch when empty) and evaluates on the
/// test cases. `arch` is used only when starting from scratch.
DownstreamRun run_downstream(const std::optional<Checkpoint>& init, const ModelConfig& arch, int num_classes,
                             const DownstreamData& data, const TrainConfig& cfg, const std::string& label,
                             const std::filesystem::path& out_dir = {});

struct AblationConfig {
  std::vector<int> ks{1, 2, 4, 8, 16};
  ModelConfig model = ModelConfig::reduced(Architecture::UNet3d, 5);
  TrainConfig pretrain;
  TrainConfig finetune;
  int downstream_classes = 3;
  bool include_scratch = true;
};

struct AblationRow {
  std::string label;  // "K=4" or "SCRATCH"
  int K = 0;          // 0 for the from-scratch control
  double pretext_dice = 0.0;
  double test_mean_dice = 0.0;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::filesystem::path plot;
  std::filesystem::path table;
};

/// For each K: pretrain on `corpus`, fine-tune on the downstream split,
/// evaluate on its test cases. Emits k_ablation.tsv and k_ablation.png.
AblationResult run_k_ablation(const Corpus& corpus, const Corpus& heldout, const DownstreamData& data,
                              const AblationConfig& cfg, const std::filesystem::path& out_dir,
                              const std::function<void(const std::string&)>& progress = {});

}  // namespace vfseg
