#pragma once

#include <filesystem>

#include "vfseg/finetune.hpp"
#include "vfseg/metrics.hpp"

namespace vfseg {

/// Sliding-window prediction and per-class Dice/ASSD for every case, ordered by case id.
MetricsReport evaluate_corpus(SegmentationModel& model, const LabeledCorpus& test, const SlidingWindowOptions& opts);
MetricsReport evaluate_corpus(const std::filesystem::path& checkpoint, const LabeledCorpus& test,
                              const SlidingWindowOptions& opts);

/// Scores precomputed predictions (paired with `test` by case id).
MetricsReport evaluate_predictions(const std::vector<LabelVolume>& predictions, const LabeledCorpus& test);

}  // namespace vfseg
