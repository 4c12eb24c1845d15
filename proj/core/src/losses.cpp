#include "vfseg/losses.hpp"

#include <cmath>

#include "vfseg/error.hpp"

namespace vfseg {

void LossConfig::validate() const {
  if (!(epsilon > 0.0)) throw Error(ErrorCode::InvalidConfig, "loss.epsilon must be positive");
  double sum = 0.0;
  for (double w : deep_supervision_weights) {
    if (!(w >= 0.0)) throw Error(ErrorCode::InvalidConfig, "deep supervision weights must be non-negative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw Error(ErrorCode::InvalidConfig, "deep supervision weights must sum to 1");
}

torch::Tensor one_hot(const torch::Tensor& labels, int64_t num_classes, torch::ScalarType dtype) {
  if (labels.numel() > 0) {
    const auto lo = labels.min().item<int64_t>();
    const auto hi = labels.max().item<int64_t>();
    if (lo < 0 || hi >= num_classes) {
      throw Error(ErrorCode::LabelOutOfRange, "labels span [" + std::to_string(lo) + ", " + std::to_string(hi) +
                                                  "] but C = " + std::to_string(num_classes));
    }
  }
  // (N, D, H, W) -> (N, D, H, W, C) -> (N, C, D, H, W)
  auto oh = torch::nn::functional::one_hot(labels.to(torch::kLong), num_classes).to(dtype);
  return oh.movedim(-1, 1).contiguous();
}

namespace {

void check_same(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) {
    throw Error(ErrorCode::ShapeMismatch, "prediction and target shapes differ");
  }
}

std::vector<int64_t> reduce_dims(const torch::Tensor& t) {
  std::vector<int64_t> dims{0};
  for (int64_t d = 2; d < t.dim(); ++d) dims.push_back(d);
  return dims;
}

}  // namespace

torch::Tensor dice_loss(const torch::Tensor& probs, const torch::Tensor& target, const LossConfig& cfg) {
  check_same(probs, target);
  const double eps = cfg.epsilon;
  if (cfg.dice_form == DiceForm::Aggregated) {
    const auto dims = reduce_dims(probs);
    auto inter = (probs * target).sum(dims);
    auto denom = probs.sum(dims) + target.sum(dims);
    auto per_class = (2.0 * inter + eps) / (denom + eps);
    return 1.0 - per_class.mean();
  }
  auto ratio = 2.0 * probs * target / (probs + target + eps);
  return 1.0 - ratio.mean();
}

torch::Tensor ce_loss(const torch::Tensor& probs, const torch::Tensor& target) {
  check_same(probs, target);
  auto logp = torch::log(probs.clamp_min(1e-12));
  return -(target * logp).sum(1).mean();
}

torch::Tensor supervised_loss(const torch::Tensor& probs, const torch::Tensor& labels, const LossConfig& cfg) {
  if (probs.dim() != labels.dim() + 1 || probs.size(0) != labels.size(0) ||
      probs.sizes().slice(2) != labels.sizes().slice(1)) {
    throw Error(ErrorCode::ShapeMismatch, "probability map and label map shapes differ");
  }
  auto target = one_hot(labels, probs.size(1), probs.scalar_type());
  return 0.5 * dice_loss(probs, target, cfg) + 0.5 * ce_loss(probs, target);
}

torch::Tensor downsample_labels(const torch::Tensor& labels, std::array<int64_t, 3> factors) {
  using torch::indexing::Slice;
  return labels.index({Slice(), Slice(0, torch::indexing::None, factors[0]), Slice(0, torch::indexing::None, factors[1]),
                       Slice(0, torch::indexing::None, factors[2])})
      .contiguous();
}

torch::Tensor deep_supervision_loss(const std::vector<torch::Tensor>& preds, const torch::Tensor& labels,
                                    const LossConfig& cfg) {
  if (preds.size() != cfg.deep_supervision_weights.size()) {
    throw Error(ErrorCode::ScaleMismatch, "expected four prediction scales, got " + std::to_string(preds.size()));
  }
  torch::Tensor total;
  for (size_t s = 0; s < preds.size(); ++s) {
    const auto& p = preds[s];
    if (p.dim() != 5 || labels.dim() != 4) throw Error(ErrorCode::ScaleMismatch, "bad prediction rank");
    std::array<int64_t, 3> factors{};
    for (int a = 0; a < 3; ++a) {
      const int64_t full = labels.size(a + 1);
      const int64_t small = p.size(a + 2);
      if (small <= 0 || full % small != 0) {
        throw Error(ErrorCode::ScaleMismatch, "prediction " + std::to_string(s) + " extent " + std::to_string(small) +
                                                  " does not divide label extent " + std::to_string(full));
      }
      factors[a] = full / small;
    }
    const double w = cfg.deep_supervision_weights[s];
    if (w == 0.0) continue;
    auto term = w * supervised_loss(p, downsample_labels(labels, factors), cfg);
    total = total.defined() ? total + term : term;
  }
  if (!total.defined()) total = torch::zeros({}, preds.front().options());
  return total;
}

}  // namespace vfseg
