#include "vfseg/models/segmentation_model.hpp"

#include <cmath>

#include "vfseg/error.hpp"

namespace vfseg {

namespace {

torch::nn::Conv3dOptions same_conv(int64_t in, int64_t out, Triple k) {
  return torch::nn::Conv3dOptions(in, out, {k[0], k[1], k[2]}).padding({k[0] / 2, k[1] / 2, k[2] / 2});
}

constexpr Triple kPlanar{1, 3, 3};
constexpr Triple kCubic{3, 3, 3};

}  // namespace

std::string_view to_string(Architecture arch) noexcept {
  return arch == Architecture::PctNet ? "pctnet" : "unet3d";
}

Architecture architecture_from_string(std::string_view name) {
  if (name == "pctnet") return Architecture::PctNet;
  if (name == "unet3d") return Architecture::UNet3d;
  throw Error(ErrorCode::InvalidConfig, "unknown architecture '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  if (in_channels < 1) throw Error(ErrorCode::InvalidConfig, "in_channels must be >= 1");
  if (num_classes < 2) throw Error(ErrorCode::InvalidConfig, "num_classes must be >= 2");
  for (size_t i = 0; i < level_channels.size(); ++i) {
    if (level_channels[i] < 1 || (i > 0 && level_channels[i] <= level_channels[i - 1])) {
      throw Error(ErrorCode::InvalidConfig, "level channels must be positive and strictly increasing");
    }
  }
  for (int a = 0; a < 3; ++a) {
    if (window_size[a] < 1) throw Error(ErrorCode::InvalidConfig, "window size must be positive");
    if (shift_size[a] != window_size[a] / 2) {
      throw Error(ErrorCode::InvalidConfig, "shift size must be half the window size on every axis");
    }
  }
  for (int i = 0; i < 3; ++i) {
    if (num_heads[i] < 1 || level_channels[static_cast<size_t>(i) + 2] % num_heads[i] != 0) {
      throw Error(ErrorCode::InvalidConfig, "pyramid level " + std::to_string(i + 3) + " channels (" +
                                                std::to_string(level_channels[static_cast<size_t>(i) + 2]) +
                                                ") must be divisible by its head count");
    }
  }
  if (!(mlp_ratio > 0.0)) throw Error(ErrorCode::InvalidConfig, "mlp_ratio must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw Error(ErrorCode::InvalidConfig, "dropout must be in [0,1)");
}

ModelConfig ModelConfig::reduced(Architecture arch, int64_t num_classes) {
  ModelConfig c;
  c.arch = arch;
  c.num_classes = num_classes;
  c.level_channels = {8, 16, 32, 64, 128};
  return c;
}

SegmentationModel::SegmentationModel(ModelConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const auto& ch = cfg_.level_channels;
  const int64_t C = cfg_.num_classes;
  const double drop = cfg_.dropout_rate;

  project_ = register_module("project", torch::nn::Conv3d(same_conv(cfg_.in_channels, ch[0], kPlanar)));
  enc1_ = register_module("enc1", ConvBlock(ch[0], ch[0], kPlanar));
  down1_ = register_module("down1", torch::nn::Conv3d(torch::nn::Conv3dOptions(ch[0], ch[1], {1, 2, 2}).stride({1, 2, 2})));
  enc2_ = register_module("enc2", ConvBlock(ch[1], ch[1], kCubic));
  down2_ = register_module("down2", torch::nn::Conv3d(torch::nn::Conv3dOptions(ch[1], ch[2], 2).stride(2)));
  down3_ = register_module("down3", torch::nn::Conv3d(torch::nn::Conv3dOptions(ch[2], ch[3], 2).stride(2)));
  down4_ = register_module("down4", torch::nn::Conv3d(torch::nn::Conv3dOptions(ch[3], ch[4], 2).stride(2)));

  auto make_block = [&](int64_t channels, int64_t heads) -> torch::nn::AnyModule {
    if (cfg_.arch == Architecture::PctNet) {
      PctBlockOptions o;
      o.channels = channels;
      o.heads = heads;
      o.window = cfg_.window_size;
      o.shift = cfg_.shift_size;
      o.mlp_ratio = cfg_.mlp_ratio;
      o.dropout = drop;
      return torch::nn::AnyModule(PctBlock(o));
    }
    return torch::nn::AnyModule(ConvBlock(channels, channels, kCubic, drop));
  };
  const std::pair<const char*, std::pair<int64_t, int64_t>> pyramid[] = {
      {"enc3", {ch[2], cfg_.num_heads[0]}},       {"enc4", {ch[3], cfg_.num_heads[1]}},
      {"bottleneck", {ch[4], cfg_.num_heads[2]}}, {"dec4", {ch[3], cfg_.num_heads[1]}},
      {"dec3", {ch[2], cfg_.num_heads[0]}},
  };
  for (const auto& [name, spec] : pyramid) {
    auto block = make_block(spec.first, spec.second);
    register_module(name, block.ptr());
    pyramid_.push_back(std::move(block));
  }

  auto up = [](int64_t in, int64_t out, Triple k) {
    return torch::nn::ConvTranspose3d(torch::nn::ConvTranspose3dOptions(in, out, {k[0], k[1], k[2]}).stride({k[0], k[1], k[2]}));
  };
  up4_ = register_module("up4", up(ch[4], ch[3], {2, 2, 2}));
  fuse4_ = register_module("fuse4", torch::nn::Conv3d(same_conv(2 * ch[3], ch[3], kCubic)));
  up3_ = register_module("up3", up(ch[3], ch[2], {2, 2, 2}));
  fuse3_ = register_module("fuse3", torch::nn::Conv3d(same_conv(2 * ch[2], ch[2], kCubic)));
  up2_ = register_module("up2", up(ch[2], ch[1], {2, 2, 2}));
  fuse2_ = register_module("fuse2", torch::nn::Conv3d(same_conv(2 * ch[1], ch[1], kCubic)));
  dec2_ = register_module("dec2", ConvBlock(ch[1], ch[1], kCubic));
  up1_ = register_module("up1", up(ch[1], ch[0], {1, 2, 2}));
  fuse1_ = register_module("fuse1", torch::nn::Conv3d(same_conv(2 * ch[0], ch[0], kPlanar)));
  dec1_ = register_module("dec1", ConvBlock(ch[0], ch[0], kPlanar));

  head1_ = register_module("head1", torch::nn::Conv3d(torch::nn::Conv3dOptions(ch[0], C, 1)));
  head2_ = register_module("head2", torch::nn::Conv3d(torch::nn::Conv3dOptions(ch[1], C, 1)));
  head3_ = register_module("head3", torch::nn::Conv3d(torch::nn::Conv3dOptions(ch[2], C, 1)));
  head4_ = register_module("head4", torch::nn::Conv3d(torch::nn::Conv3dOptions(ch[3], C, 1)));
}

void SegmentationModel::check_input(const torch::Tensor& x) const {
  if (x.dim() != 5 || x.size(1) != cfg_.in_channels) {
    throw Error(ErrorCode::ShapeIncompatible, "input must be (N, " + std::to_string(cfg_.in_channels) + ", D, H, W)");
  }
  const auto& deepest = kLevelStrides.back();
  for (int a = 0; a < 3; ++a) {
    if (x.size(a + 2) % deepest[static_cast<size_t>(a)] != 0 || x.size(a + 2) == 0) {
      throw Error(ErrorCode::ShapeIncompatible,
                  "spatial extent " + std::to_string(x.size(a + 2)) + " on axis " + std::to_string(a) +
                      " is not a multiple of " + std::to_string(deepest[static_cast<size_t>(a)]));
    }
  }
}

torch::Tensor SegmentationModel::pyramid_block(size_t index, const torch::Tensor& x) {
  return pyramid_[index].forward(x);
}

std::pair<torch::Tensor, torch::Tensor> SegmentationModel::embed(const torch::Tensor& x) {
  check_input(x);
  auto l1 = enc1_(project_(x));
  auto l2 = enc2_(down1_(l1));
  return {l1, l2};
}

std::vector<torch::Tensor> SegmentationModel::forward_logits(const torch::Tensor& x) {
  auto [l1, l2] = embed(x);
  auto l3 = pyramid_block(0, down2_(l2));
  auto l4 = pyramid_block(1, down3_(l3));
  auto l5 = pyramid_block(2, down4_(l4));

  auto d4 = pyramid_block(3, fuse4_(torch::cat({l4, up4_(l5)}, 1)));
  auto d3 = pyramid_block(4, fuse3_(torch::cat({l3, up3_(d4)}, 1)));
  auto d2 = dec2_(fuse2_(torch::cat({l2, up2_(d3)}, 1)));
  auto d1 = dec1_(fuse1_(torch::cat({l1, up1_(d2)}, 1)));
  return {head1_(d1), head2_(d2), head3_(d3), head4_(d4)};
}

MultiScalePrediction SegmentationModel::forward(const torch::Tensor& x) {
  MultiScalePrediction p;
  for (auto& logits : forward_logits(x)) p.probs.push_back(torch::softmax(logits, 1));
  return p;
}

int64_t SegmentationModel::parameter_count() const {
  int64_t n = 0;
  for (const auto& p : parameters()) n += p.numel();
  return n;
}

bool SegmentationModel::is_head_parameter(const std::string& name) {
  return name.rfind("head", 0) == 0;
}

void SegmentationModel::reset_heads(int64_t num_classes) {
  cfg_.num_classes = num_classes;
  const auto& ch = cfg_.level_channels;
  head1_ = replace_module("head1", torch::nn::Conv3d(torch::nn::Conv3dOptions(ch[0], num_classes, 1)));
  head2_ = replace_module("head2", torch::nn::Conv3d(torch::nn::Conv3dOptions(ch[1], num_classes, 1)));
  head3_ = replace_module("head3", torch::nn::Conv3d(torch::nn::Conv3dOptions(ch[2], num_classes, 1)));
  head4_ = replace_module("head4", torch::nn::Conv3d(torch::nn::Conv3dOptions(ch[3], num_classes, 1)));
  for (auto* head : {&head1_, &head2_, &head3_, &head4_}) initialize_parameters(**head);
}

void trunc_normal_(torch::Tensor& t, double std) {
  torch::NoGradGuard guard;
  t.normal_(0.0, std);
  // Redraw anything outside two standard deviations.
  for (int round = 0; round < 100; ++round) {
    auto outside = t.abs() > 2.0 * std;
    if (!outside.any().item<bool>()) return;
    t.masked_scatter_(outside, torch::empty_like(t).normal_(0.0, std).masked_select(outside));
  }
  t.clamp_(-2.0 * std, 2.0 * std);
}

void initialize_parameters(torch::nn::Module& module) {
  torch::NoGradGuard guard;
  // Weights: kaiming-uniform with a = sqrt(5); biases: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  auto fan_in_uniform = [](torch::Tensor& w, torch::Tensor& b) {
    torch::nn::init::kaiming_uniform_(w, std::sqrt(5.0));
    if (b.defined()) {
      const auto fan_in = std::get<0>(torch::nn::init::_calculate_fan_in_and_fan_out(w));
      const double bound = fan_in > 0 ? 1.0 / std::sqrt(static_cast<double>(fan_in)) : 0.0;
      b.uniform_(-bound, bound);
    }
  };
  auto init_one = [&](torch::nn::Module& m) {
    if (auto* conv = m.as<torch::nn::Conv3d>()) {
      fan_in_uniform(conv->weight, conv->bias);
    } else if (auto* tconv = m.as<torch::nn::ConvTranspose3d>()) {
      fan_in_uniform(tconv->weight, tconv->bias);
    } else if (auto* lin = m.as<torch::nn::Linear>()) {
      fan_in_uniform(lin->weight, lin->bias);
    } else if (auto* ln = m.as<torch::nn::LayerNorm>()) {
      ln->weight.fill_(1.0);
      ln->bias.zero_();
    } else if (auto* bn = m.as<torch::nn::BatchNorm3d>()) {
      bn->weight.fill_(1.0);
      bn->bias.zero_();
    } else if (auto* wa = m.as<WindowAttention>()) {
      for (auto& p : wa->named_parameters(false)) {
        if (p.key() == "relative_position_bias") trunc_normal_(p.value(), 0.02);
      }
    }
  };
  init_one(module);
  for (auto& child : module.modules(false)) init_one(*child);
}

SegmentationModelPtr build_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  torch::manual_seed(seed);
  auto model = std::make_shared<SegmentationModel>(cfg);
  initialize_parameters(*model);
  return model;
}

}  // namespace vfseg
