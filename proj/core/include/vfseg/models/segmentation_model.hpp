#pragma once

#include <torch/torch.h>

#include <memory>
#include <vector>

#include "vfseg/models/blocks.hpp"
#include "vfseg/models/model_config.hpp"

namespace vfseg {

/// Four softmax maps at the level-1..level-4 resolutions (see kLevelStrides).
struct MultiScalePrediction {
  std::vector<torch::Tensor> probs;
};

/// Shared interface for PCT-Net and the 3D U-Net baseline. Both use the same
/// embedding ladder and the same four pointwise heads (`head1`..`head4`), and
/// differ only in the block used at pyramid levels 3-5.
class SegmentationModel : public torch::nn::Module {
 public:
  explicit SegmentationModel(ModelConfig cfg);

  /// x: (N, in_channels, D, H, W) with D % 8 == 0 and H, W % 16 == 0.
  std::vector<torch::Tensor> forward_logits(const torch::Tensor& x);
  MultiScalePrediction forward(const torch::Tensor& x);

  /// Level-1 and level-2 features of the embedding module.
  std::pair<torch::Tensor, torch::Tensor> embed(const torch::Tensor& x);

  const ModelConfig& config() const noexcept { return cfg_; }
  void check_input(const torch::Tensor& x) const;
  int64_t parameter_count() const;

  /// Prediction-head parameter names (re-initialized on transfer).
  static bool is_head_parameter(const std::string& name);
  void reset_heads(int64_t num_classes);

 protected:
  torch::Tensor pyramid_block(size_t index, const torch::Tensor& x);

  ModelConfig cfg_;
  torch::nn::Conv3d project_{nullptr};
  ConvBlock enc1_{nullptr}, enc2_{nullptr}, dec2_{nullptr}, dec1_{nullptr};
  torch::nn::Conv3d down1_{nullptr}, down2_{nullptr}, down3_{nullptr}, down4_{nullptr};
  torch::nn::ConvTranspose3d up4_{nullptr}, up3_{nullptr}, up2_{nullptr}, up1_{nullptr};
  torch::nn::Conv3d fuse4_{nullptr}, fuse3_{nullptr}, fuse2_{nullptr}, fuse1_{nullptr};
  torch::nn::Conv3d head1_{nullptr}, head2_{nullptr}, head3_{nullptr}, head4_{nullptr};
  // enc3, enc4, bottleneck, dec4, dec3
  std::vector<torch::nn::AnyModule> pyramid_;
};

using SegmentationModelPtr = std::shared_ptr<SegmentationModel>;

/// Builds the configured architecture with deterministic initialization:
/// truncated normal (0.02) for linear layers and position bias, He fan-in for
/// convolutions, unit scale / zero shift for norms.
SegmentationModelPtr build_model(const ModelConfig& cfg, uint64_t seed);

void initialize_parameters(torch::nn::Module& module);
void trunc_normal_(torch::Tensor& t, double std);

}  // namespace vfseg
