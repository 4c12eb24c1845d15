#pragma once

#include <torch/torch.h>

#include <array>
#include <vector>

namespace vfseg {

enum class DiceForm {
  Aggregated,       // 1 - mean_c (2 sum p*y + eps) / (sum p + sum y + eps)
  LiteralPerVoxel,  // 1 - 1/(C V) sum_c sum_i 2 p*y / (p + y + eps)
};

struct LossConfig {
  double epsilon = 1e-5;
  DiceForm dice_form = DiceForm::Aggregated;
  std::array<double, 4> deep_supervision_weights{8.0 / 15.0, 4.0 / 15.0, 2.0 / 15.0, 1.0 / 15.0};

  void validate() const;
};

/// Probability maps are (N, C, D, H, W) tensors; label maps are (N, D, H, W) int64.
torch::Tensor one_hot(const torch::Tensor& labels, int64_t num_classes,
                      torch::ScalarType dtype = torch::kFloat32);

torch::Tensor dice_loss(const torch::Tensor& probs, const torch::Tensor& target_one_hot, const LossConfig& cfg = {});

/// Mean over voxels of -sum_c y log(max(p, 1e-12)).
torch::Tensor ce_loss(const torch::Tensor& probs, const torch::Tensor& target_one_hot);

/// 0.5 * dice + 0.5 * ce against integer labels.
torch::Tensor supervised_loss(const torch::Tensor& probs, const torch::Tensor& labels, const LossConfig& cfg = {});

/// Nearest-neighbour label decimation by integer per-axis factors (d, h, w).
torch::Tensor downsample_labels(const torch::Tensor& labels, std::array<int64_t, 3> factors);

/// Weighted sum of supervised_loss over the four scales. Each prediction's
/// spatial extent must divide the label extent exactly.
torch::Tensor deep_supervision_loss(const std::vector<torch::Tensor>& preds, const torch::Tensor& labels,
                                    const LossConfig& cfg = {});

}  // namespace vfseg
