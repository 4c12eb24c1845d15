#pragma once

#include <torch/torch.h>

#include <array>

namespace vfseg {

using Triple = std::array<int64_t, 3>;

/// Two [BN -> PReLU -> conv] layers. A kernel of {1,3,3} gives the 2D
/// (in-plane) variant; dropout, when non-zero, sits before the second conv.
class ConvBlockImpl : public torch::nn::Module {
 public:
  ConvBlockImpl(int64_t in_channels, int64_t out_channels, Triple kernel, double dropout = 0.0);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv3d& last_conv() { return conv2_; }

 private:
  torch::nn::BatchNorm3d bn1_{nullptr}, bn2_{nullptr};
  torch::nn::PReLU act1_{nullptr}, act2_{nullptr};
  torch::nn::Conv3d conv1_{nullptr}, conv2_{nullptr};
  torch::nn::Dropout drop_{nullptr};
};
TORCH_MODULE(ConvBlock);

/// Multi-head self-attention restricted to non-overlapping 3D windows, with a
/// learned relative position bias. With a non-zero shift the feature map is
/// cyclically rolled by -shift before partitioning and rolled back afterwards;
/// tokens that were not contiguous before the roll are masked from each other.
/// Extents are zero-padded up to window multiples and padded tokens are masked
/// as keys for real tokens.
class WindowAttentionImpl : public torch::nn::Module {
 public:
  WindowAttentionImpl(int64_t dim, int64_t heads, Triple window);

  /// x: (B, D, H, W, C) channels-last.
  torch::Tensor forward(const torch::Tensor& x, Triple shift);

  /// Softmax weights, shape (B * num_windows, heads, N, N) with N = window volume.
  torch::Tensor attention_weights(const torch::Tensor& x, Triple shift);

  /// Additive mask (num_windows, N, N): 0 where attention is allowed, -1e9 elsewhere.
  /// Undefined tensor when nothing needs masking.
  torch::Tensor window_mask(Triple extent, Triple shift) const;

  /// (heads, N, N) bias gathered from the relative position table.
  torch::Tensor relative_bias() const;

  const Triple& window() const noexcept { return window_; }
  int64_t heads() const noexcept { return heads_; }
  torch::nn::Linear& qkv() { return qkv_; }
  torch::nn::Linear& proj() { return proj_; }

 private:
  struct Result {
    torch::Tensor out;
    torch::Tensor weights;
  };
  Result run(const torch::Tensor& x, Triple shift, bool keep_weights);

  int64_t dim_;
  int64_t heads_;
  Triple window_;
  torch::nn::Linear qkv_{nullptr}, proj_{nullptr};
  torch::Tensor bias_table_;
  torch::Tensor bias_index_;
};
TORCH_MODULE(WindowAttention);

/// x + attn(LN(x)), then x + MLP(LN(x)); MLP is linear -> GELU -> linear.
class AttentionSubBlockImpl : public torch::nn::Module {
 public:
  AttentionSubBlockImpl(int64_t dim, int64_t heads, Triple window, Triple shift, double mlp_ratio);
  torch::Tensor forward(const torch::Tensor& x);  // channels-last

  WindowAttention& attention() { return attn_; }
  torch::nn::Linear& mlp_out() { return fc2_; }
  Triple& shift() { return shift_; }

 private:
  Triple shift_;
  torch::nn::LayerNorm norm1_{nullptr}, norm2_{nullptr};
  WindowAttention attn_{nullptr};
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
  torch::nn::GELU gelu_{nullptr};
};
TORCH_MODULE(AttentionSubBlock);

struct PctBlockOptions {
  int64_t channels = 32;
  int64_t heads = 4;
  Triple window{4, 4, 4};
  Triple shift{2, 2, 2};
  double mlp_ratio = 4.0;
  double dropout = 0.1;
};

/// Parallel convolution and windowed-attention branches whose outputs are summed.
class PctBlockImpl : public torch::nn::Module {
 public:
  explicit PctBlockImpl(const PctBlockOptions& opts);
  torch::Tensor forward(const torch::Tensor& x);  // (N, C, D, H, W)

  torch::Tensor conv_branch(const torch::Tensor& x);
  torch::Tensor attention_branch(const torch::Tensor& x);

  ConvBlock& conv() { return conv_; }
  AttentionSubBlock& plain_attention() { return attn1_; }
  AttentionSubBlock& shifted_attention() { return attn2_; }

 private:
  ConvBlock conv_{nullptr};
  AttentionSubBlock attn1_{nullptr}, attn2_{nullptr};
};
TORCH_MODULE(PctBlock);

}  // namespace vfseg
