#pragma once

// Reference implementations used as test oracles. They are deliberately
// naive (explicit loops, double precision) and share no code with the
// library routines they check.

#include <torch/torch.h>

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "vfseg/volume.hpp"

namespace vfseg::oracle {

/// probs, onehot: (N, C, D, H, W) float64 contiguous.
inline double dice_aggregated(const torch::Tensor& probs, const torch::Tensor& onehot, double eps) {
  const auto p = probs.contiguous(), y = onehot.contiguous();
  const int64_t N = p.size(0), C = p.size(1), V = p[0][0].numel();
  const double* pp = p.data_ptr<double>();
  const double* yy = y.data_ptr<double>();
  double total = 0.0;
  for (int64_t c = 0; c < C; ++c) {
    double inter = 0.0, sp = 0.0, sy = 0.0;
    for (int64_t n = 0; n < N; ++n)
      for (int64_t i = 0; i < V; ++i) {
        const int64_t k = (n * C + c) * V + i;
        inter += pp[k] * yy[k];
        sp += pp[k];
        sy += yy[k];
      }
    total += (2.0 * inter + eps) / (sp + sy + eps);
  }
  return 1.0 - total / static_cast<double>(C);
}

inline double dice_literal(const torch::Tensor& probs, const torch::Tensor& onehot, double eps) {
  const auto p = probs.contiguous(), y = onehot.contiguous();
  const int64_t N = p.size(0), C = p.size(1), V = p[0][0].numel();
  const double* pp = p.data_ptr<double>();
  const double* yy = y.data_ptr<double>();
  double total = 0.0;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t i = 0; i < V; ++i) {
        const int64_t k = (n * C + c) * V + i;
        total += 2.0 * pp[k] * yy[k] / (pp[k] + yy[k] + eps);
      }
  return 1.0 - total / static_cast<double>(C * V * N);
}

inline double cross_entropy(const torch::Tensor& probs, const torch::Tensor& onehot) {
  const auto p = probs.contiguous(), y = onehot.contiguous();
  const int64_t N = p.size(0), C = p.size(1), V = p[0][0].numel();
  const double* pp = p.data_ptr<double>();
  const double* yy = y.data_ptr<double>();
  double total = 0.0;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t i = 0; i < V; ++i)
      for (int64_t c = 0; c < C; ++c) {
        const int64_t k = (n * C + c) * V + i;
        if (yy[k] != 0.0) total -= yy[k] * std::log(std::max(pp[k], 1e-12));
      }
  return total / static_cast<double>(N * V);
}

/// Relative error ||a - b|| / max(||a||, ||b||) between analytic and numeric gradients.
inline double relative_error(const torch::Tensor& a, const torch::Tensor& b) {
  const double num = (a - b).norm().item<double>();
  const double den = std::max({a.norm().item<double>(), b.norm().item<double>(), 1e-30});
  return num / den;
}

/// Central finite differences of scalar f at x (float64), step h.
inline torch::Tensor numeric_gradient(const std::function<double(const torch::Tensor&)>& f, const torch::Tensor& x,
                                      double h = 1e-6) {
  auto base = x.detach().clone().contiguous();
  auto grad = torch::zeros_like(base);
  auto* g = grad.data_ptr<double>();
  auto* v = base.data_ptr<double>();
  for (int64_t i = 0; i < base.numel(); ++i) {
    const double keep = v[i];
    v[i] = keep + h;
    const double up = f(base);
    v[i] = keep - h;
    const double down = f(base);
    v[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

/// Surface voxels: foreground with a 6-neighbour that is background or outside the grid.
inline std::vector<std::array<int64_t, 3>> surface_points(const LabelVolume& l, int32_t c) {
  std::vector<std::array<int64_t, 3>> pts;
  const Shape3 s = l.shape;
  auto fg = [&](int64_t z, int64_t y, int64_t x) {
    if (z < 0 || y < 0 || x < 0 || z >= s.d || y >= s.h || x >= s.w) return false;
    return l.at(z, y, x) == c;
  };
  for (int64_t z = 0; z < s.d; ++z)
    for (int64_t y = 0; y < s.h; ++y)
      for (int64_t x = 0; x < s.w; ++x) {
        if (!fg(z, y, x)) continue;
        if (!fg(z - 1, y, x) || !fg(z + 1, y, x) || !fg(z, y - 1, x) || !fg(z, y + 1, x) || !fg(z, y, x - 1) ||
            !fg(z, y, x + 1)) {
          pts.push_back({z, y, x});
        }
      }
  return pts;
}

/// All-pairs average symmetric surface distance; nullopt when a surface is empty.
inline std::optional<double> assd_bruteforce(const LabelVolume& a, const LabelVolume& b, int32_t c,
                                             const Spacing& sp) {
  const auto sa = surface_points(a, c), sb = surface_points(b, c);
  if (sa.empty() || sb.empty()) return std::nullopt;
  auto nearest = [&](const std::array<int64_t, 3>& p, const std::vector<std::array<int64_t, 3>>& set) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : set) {
      double d2 = 0.0;
      for (int k = 0; k < 3; ++k) {
        const double t = static_cast<double>(p[k] - q[k]) * sp[k];
        d2 += t * t;
      }
      best = std::min(best, d2);
    }
    return std::sqrt(best);
  };
  double total = 0.0;
  for (const auto& p : sa) total += nearest(p, sb);
  for (const auto& p : sb) total += nearest(p, sa);
  return total / static_cast<double>(sa.size() + sb.size());
}

inline double dice_count(const LabelVolume& a, const LabelVolume& b, int32_t c) {
  int64_t inter = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.labels.size(); ++i) {
    const bool x = a.labels[i] == c, y = b.labels[i] == c;
    na += x;
    nb += y;
    inter += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

}  // namespace vfseg::oracle
