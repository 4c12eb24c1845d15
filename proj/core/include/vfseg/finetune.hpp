#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "vfseg/checkpoint.hpp"
#include "vfseg/training.hpp"
#include "vfseg/volume_io.hpp"

namespace vfseg {

struct LabeledCase {
  Volume image;
  LabelVolume labels;
  const std::string& id() const noexcept { return image.id; }
};

using LabeledCorpus = std::vector<LabeledCase>;

/// Loads (image, label) pairs from a manifest with a label column; images are
/// normalized with `window` unless already in [0, 1].
LabeledCorpus load_labeled_corpus(const std::filesystem::path& manifest, const IntensityWindow& window = {});

/// Case-id lists, read from JSON {"train": [...], "val": [...], "test": [...]}.
struct Split {
  std::vector<std::string> train, val, test;
};

Split read_split(const std::filesystem::path& path);
void write_split(const Split& split, const std::filesystem::path& path);
/// Cases of `corpus` whose ids appear in `ids`, in the order of `ids`.
LabeledCorpus select_cases(const LabeledCorpus& corpus, const std::vector<std::string>& ids);

struct TransferReport {
  std::vector<std::string> transferred;
  std::vector<std::string> reinitialized;
};

struct TransferResult {
  SegmentationModelPtr model;
  TransferReport report;
};

/// Copies every non-head tensor from `ckpt` into a fresh model with
/// `num_classes` outputs; the four prediction heads are always re-initialized.
/// When `target` is given its architecture must equal the checkpoint's apart
/// from num_classes.
TransferResult load_for_transfer(const Checkpoint& ckpt, int64_t num_classes, uint64_t seed,
                                 const ModelConfig* target = nullptr);
TransferResult load_for_transfer(const std::filesystem::path& checkpoint, int64_t num_classes, uint64_t seed,
                                 const ModelConfig* target = nullptr);

struct SlidingWindowOptions {
  Shape3 window{16, 32, 32};
  double overlap = 0.25;
  bool pad = true;  // zero-pad volumes smaller than the window instead of failing
};

/// Maps a (1, 1, d, h, w) tile to (1, C, d, h, w) probabilities.
using TilePredictor = std::function<torch::Tensor(const torch::Tensor&)>;

/// Tile start offsets along one axis: stride floor(window * (1 - overlap)),
/// last tile flush with the end.
std::vector<int64_t> tile_starts(int64_t extent, int64_t window, double overlap);

/// (C, D, H, W) probabilities averaged uniformly over overlapping tiles.
torch::Tensor sliding_window_probabilities(const TilePredictor& predict, const Volume& v, int64_t num_classes,
                                           const SlidingWindowOptions& opts);

LabelVolume sliding_window_predict(SegmentationModel& model, const Volume& v, const SlidingWindowOptions& opts);

struct FinetuneOptions {
  std::filesystem::path out_dir;  // empty disables files
  std::function<void(const IterationRecord&)> on_iteration;
  std::function<void(const EvalRecord&)> on_eval;
};

struct FinetuneResult {
  SegmentationModelPtr model;  // carries the best-on-validation weights
  RunLog log;
  int64_t best_step = 0;
  double best_val_dice = -1.0;
  std::filesystem::path best_checkpoint;
};

/// Supervised training on random paired crops with deep supervision. The
/// validation mean foreground Dice (sliding-window, per case then averaged)
/// is computed every `eval_every` steps and the best state is retained.
FinetuneResult finetune(SegmentationModelPtr model, const LabeledCorpus& train, const LabeledCorpus& val,
                        const TrainConfig& cfg, const FinetuneOptions& options = {});

/// Mean over foreground classes of per-case Dice, averaged over cases.
double validation_dice(SegmentationModel& model, const LabeledCorpus& cases, const SlidingWindowOptions& opts);

}  // namespace vfseg
