#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "vfseg/checkpoint.hpp"
#include "vfseg/fusion.hpp"
#include "vfseg/training.hpp"
#include "vfseg/volume_io.hpp"

namespace vfseg {

/// Loads every volume listed in a manifest. Volumes whose intensities fall
/// outside [0, 1] are normalized with `window`.
Corpus load_corpus(const std::filesystem::path& manifest, const IntensityWindow& window = {});

struct PretextReport {
  std::vector<double> dice;  // per class, class 0 first
  double mean_foreground = 0.0;
};

/// Dice of predicted label maps against the samples' Y, pooled over all samples.
PretextReport pretext_dice(const std::vector<std::vector<int32_t>>& predictions,
                           const std::vector<FusedSample>& samples, int num_classes);

/// Argmax of the full-resolution head, evaluated in eval mode.
std::vector<int32_t> predict_labels(SegmentationModel& model, const Volume& x);

PretextReport eval_pretext(SegmentationModel& model, const std::vector<FusedSample>& samples);
PretextReport eval_pretext(const std::filesystem::path& checkpoint, const std::vector<FusedSample>& samples);

/// Fixed evaluation set of `n` fused samples drawn from a held-out corpus.
std::vector<FusedSample> make_heldout_samples(const Corpus& corpus, const FusionParams& params, int n,
                                              uint64_t seed);

struct PretrainOptions {
  std::filesystem::path out_dir;                   // checkpoints, run log, plot; empty disables all files
  std::optional<std::filesystem::path> resume;     // checkpoint to continue from
  std::vector<FusedSample> heldout;                // pretext evaluation set (may be empty)
  std::function<void(const IterationRecord&)> on_iteration;
  std::function<void(const EvalRecord&)> on_eval;
};

struct PretrainResult {
  SegmentationModelPtr model;
  RunLog log;
  std::filesystem::path final_checkpoint;  // empty when out_dir is empty
};

/// Online volume-fusion pretraining. Each iteration draws a fresh fused batch
/// from seed-derived indices, so the trajectory depends only on the configs.
PretrainResult pretrain(const Corpus& corpus, const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                        const PretrainOptions& options = {});

/// Batch producer that synthesizes batches for upcoming steps on background
/// threads. Batch contents depend only on (seed, step).
class BatchPrefetcher {
 public:
  using Producer = std::function<std::vector<FusedSample>(int64_t step)>;

  BatchPrefetcher(Producer producer, int workers, int64_t first_step, int64_t last_step);
  ~BatchPrefetcher();
  BatchPrefetcher(const BatchPrefetcher&) = delete;
  BatchPrefetcher& operator=(const BatchPrefetcher&) = delete;

  /// Blocks until the batch for `step` is ready. Steps must be requested in order.
  std::vector<FusedSample> take(int64_t step);

 private:
  struct State;
  std::unique_ptr<State> state_;
};

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, int64_t step);

}  // namespace vfseg
