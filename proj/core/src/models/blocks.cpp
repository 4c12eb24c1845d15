#include "vfseg/models/blocks.hpp"

#include <cmath>

namespace vfseg {

namespace F = torch::nn::functional;
using torch::indexing::Slice;

namespace {

torch::nn::Conv3dOptions conv_options(int64_t in, int64_t out, Triple kernel) {
  return torch::nn::Conv3dOptions(in, out, {kernel[0], kernel[1], kernel[2]})
      .padding({kernel[0] / 2, kernel[1] / 2, kernel[2] / 2});
}

int64_t volume_of(const Triple& t) { return t[0] * t[1] * t[2]; }

}  // namespace

ConvBlockImpl::ConvBlockImpl(int64_t in_channels, int64_t out_channels, Triple kernel, double dropout) {
  bn1_ = register_module("bn1", torch::nn::BatchNorm3d(in_channels));
  act1_ = register_module("act1", torch::nn::PReLU());
  conv1_ = register_module("conv1", torch::nn::Conv3d(conv_options(in_channels, out_channels, kernel)));
  bn2_ = register_module("bn2", torch::nn::BatchNorm3d(out_channels));
  act2_ = register_module("act2", torch::nn::PReLU());
  drop_ = register_module("drop", torch::nn::Dropout(dropout));
  conv2_ = register_module("conv2", torch::nn::Conv3d(conv_options(out_channels, out_channels, kernel)));
}

torch::Tensor ConvBlockImpl::forward(const torch::Tensor& x) {
  auto y = conv1_(act1_(bn1_(x)));
  return conv2_(drop_(act2_(bn2_(y))));
}

// ------------------------------------------------------------ attention

WindowAttentionImpl::WindowAttentionImpl(int64_t dim, int64_t heads, Triple window)
    : dim_(dim), heads_(heads), window_(window) {
  TORCH_CHECK(dim % heads == 0, "attention dim ", dim, " not divisible by ", heads, " heads");
  qkv_ = register_module("qkv", torch::nn::Linear(dim, 3 * dim));
  proj_ = register_module("proj", torch::nn::Linear(dim, dim));
  const int64_t table = (2 * window[0] - 1) * (2 * window[1] - 1) * (2 * window[2] - 1);
  bias_table_ = register_parameter("relative_position_bias", torch::zeros({table, heads}));

  // Pairwise relative offsets inside one window, flattened into table rows.
  auto coords = torch::stack(torch::meshgrid({torch::arange(window[0]), torch::arange(window[1]),
                                              torch::arange(window[2])},
                                             "ij"))
                    .flatten(1);  // (3, N)
  auto rel = (coords.unsqueeze(2) - coords.unsqueeze(1)).permute({1, 2, 0});  // (N, N, 3)
  rel = rel + torch::tensor({window[0] - 1, window[1] - 1, window[2] - 1});
  auto index = rel.select(2, 0) * ((2 * window[1] - 1) * (2 * window[2] - 1)) + rel.select(2, 1) * (2 * window[2] - 1) +
               rel.select(2, 2);
  bias_index_ = register_buffer("relative_position_index", index.contiguous());
}

torch::Tensor WindowAttentionImpl::relative_bias() const {
  const int64_t n = volume_of(window_);
  return bias_table_.index_select(0, bias_index_.reshape({-1})).reshape({n, n, heads_}).permute({2, 0, 1});
}

torch::Tensor WindowAttentionImpl::window_mask(Triple extent, Triple shift) const {
  Triple padded{};
  bool needs_pad = false;
  for (int a = 0; a < 3; ++a) {
    padded[a] = (extent[a] + window_[a] - 1) / window_[a] * window_[a];
    needs_pad = needs_pad || padded[a] != extent[a];
  }
  const bool shifted = shift[0] > 0 || shift[1] > 0 || shift[2] > 0;
  if (!needs_pad && !shifted) return {};

  // Region id per axis on the rolled grid; tokens attend only within one region.
  auto axis_region = [&](int a) {
    std::vector<int64_t> r(static_cast<size_t>(padded[a]), 0);
    if (shift[a] > 0) {
      for (int64_t i = 0; i < padded[a]; ++i) {
        r[static_cast<size_t>(i)] = i < padded[a] - window_[a] ? 0 : (i < padded[a] - shift[a] ? 1 : 2);
      }
    }
    return r;
  };
  const auto rd = axis_region(0), rh = axis_region(1), rw = axis_region(2);
  auto region = torch::empty({padded[0], padded[1], padded[2]}, torch::kLong);
  auto acc = region.accessor<int64_t, 3>();
  for (int64_t z = 0; z < padded[0]; ++z) {
    for (int64_t y = 0; y < padded[1]; ++y) {
      for (int64_t x = 0; x < padded[2]; ++x) {
        // Position before the roll; padded positions form their own region.
        const int64_t oz = (z + shift[0]) % padded[0];
        const int64_t oy = (y + shift[1]) % padded[1];
        const int64_t ox = (x + shift[2]) % padded[2];
        const bool valid = oz < extent[0] && oy < extent[1] && ox < extent[2];
        acc[z][y][x] = valid ? (rd[static_cast<size_t>(z)] * 9 + rh[static_cast<size_t>(y)] * 3 +
                                rw[static_cast<size_t>(x)])
                             : -1;
      }
    }
  }
  const Triple nw{padded[0] / window_[0], padded[1] / window_[1], padded[2] / window_[2]};
  auto windows = region.reshape({nw[0], window_[0], nw[1], window_[1], nw[2], window_[2]})
                     .permute({0, 2, 4, 1, 3, 5})
                     .reshape({nw[0] * nw[1] * nw[2], volume_of(window_)});
  auto differs = windows.unsqueeze(2) != windows.unsqueeze(1);
  return torch::zeros(differs.sizes(), torch::kFloat32).masked_fill(differs, -1e9);
}

WindowAttentionImpl::Result WindowAttentionImpl::run(const torch::Tensor& x, Triple shift, bool keep_weights) {
  TORCH_CHECK(x.dim() == 5 && x.size(4) == dim_, "window attention expects (B, D, H, W, C=", dim_, ")");
  const int64_t B = x.size(0);
  const Triple extent{x.size(1), x.size(2), x.size(3)};
  Triple padded{};
  for (int a = 0; a < 3; ++a) padded[a] = (extent[a] + window_[a] - 1) / window_[a] * window_[a];
  auto h = x;
  if (padded != extent) {
    h = F::pad(h, F::PadFuncOptions({0, 0, 0, padded[2] - extent[2], 0, padded[1] - extent[1], 0,
                                     padded[0] - extent[0]}));
  }
  const bool shifted = shift[0] > 0 || shift[1] > 0 || shift[2] > 0;
  if (shifted) h = torch::roll(h, {-shift[0], -shift[1], -shift[2]}, {1, 2, 3});

  const Triple nw{padded[0] / window_[0], padded[1] / window_[1], padded[2] / window_[2]};
  const int64_t num_windows = nw[0] * nw[1] * nw[2];
  const int64_t n = volume_of(window_);
  const int64_t head_dim = dim_ / heads_;

  auto tokens = h.reshape({B, nw[0], window_[0], nw[1], window_[1], nw[2], window_[2], dim_})
                    .permute({0, 1, 3, 5, 2, 4, 6, 7})
                    .reshape({B * num_windows, n, dim_});
  auto qkv = qkv_(tokens).reshape({B * num_windows, n, 3, heads_, head_dim}).permute({2, 0, 3, 1, 4});
  auto q = qkv[0] * (1.0 / std::sqrt(static_cast<double>(head_dim)));
  auto k = qkv[1];
  auto v = qkv[2];
  auto logits = torch::matmul(q, k.transpose(-2, -1)) + relative_bias().unsqueeze(0);
  auto mask = window_mask(extent, shift);
  if (mask.defined()) {
    logits = logits.view({B, num_windows, heads_, n, n}) + mask.to(logits.dtype()).unsqueeze(1).unsqueeze(0);
    logits = logits.view({B * num_windows, heads_, n, n});
  }
  auto weights = torch::softmax(logits, -1);
  auto out = torch::matmul(weights, v).transpose(1, 2).reshape({B * num_windows, n, dim_});
  out = proj_(out);
  out = out.reshape({B, nw[0], nw[1], nw[2], window_[0], window_[1], window_[2], dim_})
            .permute({0, 1, 4, 2, 5, 3, 6, 7})
            .reshape({B, padded[0], padded[1], padded[2], dim_});
  if (shifted) out = torch::roll(out, {shift[0], shift[1], shift[2]}, {1, 2, 3});
  if (padded != extent) {
    out = out.index({Slice(), Slice(0, extent[0]), Slice(0, extent[1]), Slice(0, extent[2])}).contiguous();
  }
  return {out, keep_weights ? weights : torch::Tensor{}};
}

torch::Tensor WindowAttentionImpl::forward(const torch::Tensor& x, Triple shift) { return run(x, shift, false).out; }

torch::Tensor WindowAttentionImpl::attention_weights(const torch::Tensor& x, Triple shift) {
  return run(x, shift, true).weights;
}

AttentionSubBlockImpl::AttentionSubBlockImpl(int64_t dim, int64_t heads, Triple window, Triple shift,
                                             double mlp_ratio)
    : shift_(shift) {
  const auto hidden = static_cast<int64_t>(std::llround(dim * mlp_ratio));
  norm1_ = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  attn_ = register_module("attn", WindowAttention(dim, heads, window));
  norm2_ = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  fc1_ = register_module("fc1", torch::nn::Linear(dim, hidden));
  gelu_ = register_module("gelu", torch::nn::GELU());
  fc2_ = register_module("fc2", torch::nn::Linear(hidden, dim));
}

torch::Tensor AttentionSubBlockImpl::forward(const torch::Tensor& x) {
  auto h = x + attn_(norm1_(x), shift_);
  return h + fc2_(gelu_(fc1_(norm2_(h))));
}

PctBlockImpl::PctBlockImpl(const PctBlockOptions& o) {
  conv_ = register_module("conv", ConvBlock(o.channels, o.channels, Triple{3, 3, 3}, o.dropout));
  attn1_ = register_module("attn1", AttentionSubBlock(o.channels, o.heads, o.window, Triple{0, 0, 0}, o.mlp_ratio));
  attn2_ = register_module("attn2", AttentionSubBlock(o.channels, o.heads, o.window, o.shift, o.mlp_ratio));
}

torch::Tensor PctBlockImpl::conv_branch(const torch::Tensor& x) { return conv_(x); }

torch::Tensor PctBlockImpl::attention_branch(const torch::Tensor& x) {
  auto t = x.permute({0, 2, 3, 4, 1});
  t = attn2_(attn1_(t));
  return t.permute({0, 4, 1, 2, 3}).contiguous();
}

torch::Tensor PctBlockImpl::forward(const torch::Tensor& x) { return conv_branch(x) + attention_branch(x); }

}  // namespace vfseg
