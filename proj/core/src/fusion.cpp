#include "vfseg/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "vfseg/error.hpp"

namespace vfseg {

void FusionParams::validate() const {
  if (K < 1) throw Error(ErrorCode::InvalidParams, "K must be >= 1");
  if (m0 < 1 || m0 > m1) throw Error(ErrorCode::InvalidParams, "patch count range needs 1 <= m0 <= m1");
  const IntRange ranges[3] = {patch_depth, patch_height, patch_width};
  for (int a = 0; a < 3; ++a) {
    if (ranges[a].lo < 1 || ranges[a].lo > ranges[a].hi || ranges[a].hi > subvolume_shape[a]) {
      throw Error(ErrorCode::InvalidParams, "patch size range on axis " + std::to_string(a) +
                                                " must satisfy 1 <= lo <= hi <= " +
                                                std::to_string(subvolume_shape[a]));
    }
  }
}

FusionParams FusionParams::scaled_to(Shape3 sub, int K) {
  FusionParams p;
  p.K = K;
  p.subvolume_shape = sub;
  auto scale = [](IntRange r, int64_t full, int64_t target) {
    const double f = static_cast<double>(target) / static_cast<double>(full);
    IntRange out{std::max<int64_t>(2, std::llround(r.lo * f)), std::max<int64_t>(2, std::llround(r.hi * f))};
    out.hi = std::min(out.hi, target);
    out.lo = std::min(out.lo, out.hi);
    return out;
  };
  p.patch_depth = scale({8, 40}, 64, sub.d);
  p.patch_height = scale({8, 80}, 128, sub.h);
  p.patch_width = scale({8, 80}, 128, sub.w);
  return p;
}

Volume crop_at(const Volume& v, Shape3 shape, std::array<int64_t, 3> origin) {
  Volume out(shape, v.spacing, v.id);
  for (int64_t z = 0; z < shape.d; ++z) {
    for (int64_t y = 0; y < shape.h; ++y) {
      const float* src = &v.voxels[static_cast<size_t>(v.shape.index(origin[0] + z, origin[1] + y, origin[2]))];
      std::copy_n(src, shape.w, &out.voxels[static_cast<size_t>(shape.index(z, y, 0))]);
    }
  }
  return out;
}

LabelVolume crop_at(const LabelVolume& v, Shape3 shape, std::array<int64_t, 3> origin) {
  LabelVolume out(shape, v.num_classes, v.spacing);
  for (int64_t z = 0; z < shape.d; ++z) {
    for (int64_t y = 0; y < shape.h; ++y) {
      const int32_t* src = &v.labels[static_cast<size_t>(v.shape.index(origin[0] + z, origin[1] + y, origin[2]))];
      std::copy_n(src, shape.w, &out.labels[static_cast<size_t>(shape.index(z, y, 0))]);
    }
  }
  return out;
}

namespace {

Volume pad_to(const Volume& v, Shape3 target) {
  Shape3 padded = v.shape;
  std::array<int64_t, 3> before{};
  for (int a = 0; a < 3; ++a) {
    if (v.shape[a] < target[a]) {
      padded[a] = target[a];
      before[a] = (target[a] - v.shape[a]) / 2;
    }
  }
  if (padded == v.shape) return v;
  Volume out(padded, v.spacing, v.id, 0.0f);
  for (int64_t z = 0; z < v.shape.d; ++z) {
    for (int64_t y = 0; y < v.shape.h; ++y) {
      std::copy_n(&v.voxels[static_cast<size_t>(v.shape.index(z, y, 0))], v.shape.w,
                  &out.voxels[static_cast<size_t>(padded.index(z + before[0], y + before[1], before[2]))]);
    }
  }
  return out;
}

}  // namespace

Crop crop_subvolume(const Volume& v, Shape3 shape, Rng& rng, bool pad_undersized) {
  if (shape.d < 1 || shape.h < 1 || shape.w < 1) throw Error(ErrorCode::InvalidParams, "empty crop shape");
  const bool undersized = v.shape.d < shape.d || v.shape.h < shape.h || v.shape.w < shape.w;
  if (undersized && !pad_undersized) {
    throw Error(ErrorCode::VolumeTooSmall, "volume " + v.shape.str() + " smaller than crop " + shape.str());
  }
  const Volume& src = v;
  Volume padded;
  if (undersized) padded = pad_to(v, shape);
  const Volume& base = undersized ? padded : src;
  Crop c;
  for (int a = 0; a < 3; ++a) c.origin[a] = rng.uniform_int(0, base.shape[a] - shape[a]);
  c.volume = crop_at(base, shape, c.origin);
  return c;
}

std::vector<Patch> sample_patches(const FusionParams& params, Rng& rng) {
  params.validate();
  const auto count = rng.uniform_int(params.m0, params.m1);
  const IntRange ranges[3] = {params.patch_depth, params.patch_height, params.patch_width};
  std::vector<Patch> patches(static_cast<size_t>(count));
  for (auto& p : patches) {
    for (int a = 0; a < 3; ++a) {
      p.size[a] = rng.uniform_int(ranges[a].lo, ranges[a].hi);
      p.origin[a] = rng.uniform_int(0, params.subvolume_shape[a] - p.size[a]);
    }
    p.cls = static_cast<int32_t>(rng.uniform_int(1, params.K));
  }
  return patches;
}

CoefficientMap paint_patches(Shape3 shape, int K, const std::vector<Patch>& patches) {
  CoefficientMap m{shape, K, std::vector<int32_t>(static_cast<size_t>(shape.numel()), 0)};
  for (const auto& p : patches) {
    if (p.cls < 0 || p.cls > K) throw Error(ErrorCode::InvalidParams, "patch class outside [0, K]");
    for (int a = 0; a < 3; ++a) {
      if (p.origin[a] < 0 || p.size[a] < 0 || p.origin[a] + p.size[a] > shape[a]) {
        throw Error(ErrorCode::InvalidParams, "patch extends outside the grid");
      }
    }
    for (int64_t z = p.origin[0]; z < p.origin[0] + p.size[0]; ++z) {
      for (int64_t y = p.origin[1]; y < p.origin[1] + p.size[1]; ++y) {
        std::fill_n(&m.classes[static_cast<size_t>(shape.index(z, y, p.origin[2]))], p.size[2], p.cls);
      }
    }
  }
  return m;
}

CoefficientMap generate_coefficient_map(const FusionParams& params, Rng& rng) {
  return paint_patches(params.subvolume_shape, params.K, sample_patches(params, rng));
}

FusedSample fuse(const Volume& background, const Volume& foreground, const CoefficientMap& cmap,
                 bool allow_same_scan) {
  if (background.shape != foreground.shape || background.shape != cmap.shape) {
    throw Error(ErrorCode::ShapeMismatch, "fusion inputs differ in shape: " + background.shape.str() + ", " +
                                              foreground.shape.str() + ", " + cmap.shape.str());
  }
  if (!allow_same_scan && background.id == foreground.id) {
    throw Error(ErrorCode::SameScanViolation, "background and foreground both come from '" + background.id + "'");
  }
  FusedSample s;
  s.X = Volume(background.shape, background.spacing, "fused:" + background.id + "+" + foreground.id);
  s.Y = LabelVolume(background.shape, cmap.K + 1, background.spacing);
  s.background_id = background.id;
  s.foreground_id = foreground.id;
  const double K = cmap.K;
  for (size_t i = 0; i < s.X.voxels.size(); ++i) {
    const double alpha = cmap.classes[i] / K;
    const double x = alpha * foreground.voxels[i] + (1.0 - alpha) * background.voxels[i];
    s.X.voxels[i] = static_cast<float>(x);
    s.Y.labels[i] = cmap.classes[i];
  }
  return s;
}

FusedSample make_pretrain_sample(const Corpus& corpus, const FusionParams& params, uint64_t seed) {
  if (corpus.size() < 2 && !params.allow_same_scan) {
    throw Error(ErrorCode::CorpusTooSmall, "pretraining needs at least two scans");
  }
  if (corpus.empty()) throw Error(ErrorCode::CorpusTooSmall, "empty corpus");
  Rng rng(seed);
  const auto n = static_cast<int64_t>(corpus.size());
  const auto bi = rng.uniform_int(0, n - 1);
  auto fi = bi;
  if (n >= 2) {
    fi = rng.uniform_int(0, n - 2);
    if (fi >= bi) ++fi;
  }
  const auto& bsrc = corpus[static_cast<size_t>(bi)];
  const auto& fsrc = corpus[static_cast<size_t>(fi)];
  Crop bcrop = crop_subvolume(bsrc, params.subvolume_shape, rng, params.pad_undersized);
  Crop fcrop = crop_subvolume(fsrc, params.subvolume_shape, rng, params.pad_undersized);
  const CoefficientMap cmap = generate_coefficient_map(params, rng);
  FusedSample s = fuse(bcrop.volume, fcrop.volume, cmap, params.allow_same_scan || bi != fi);
  s.seed = seed;
  return s;
}

std::vector<FusedSample> make_pretrain_batch(const Corpus& corpus, const FusionParams& params, int batch_size,
                                             uint64_t seed) {
  if (batch_size < 1) throw Error(ErrorCode::InvalidParams, "batch size must be >= 1");
  params.validate();
  std::vector<FusedSample> batch;
  batch.reserve(static_cast<size_t>(batch_size));
  for (int j = 0; j < batch_size; ++j) {
    batch.push_back(make_pretrain_sample(corpus, params, derive_seed(seed, static_cast<uint64_t>(j))));
  }
  return batch;
}

std::vector<int32_t> recover_labels_oracle(const Volume& X, const Volume& background, const Volume& foreground, int K,
                                           double tau) {
  if (X.shape != background.shape || X.shape != foreground.shape) {
    throw Error(ErrorCode::ShapeMismatch, "oracle inputs differ in shape");
  }
  std::vector<int32_t> out(X.voxels.size(), kIndeterminate);
  for (size_t i = 0; i < out.size(); ++i) {
    const double diff = static_cast<double>(foreground.voxels[i]) - background.voxels[i];
    if (std::abs(diff) <= tau) continue;
    const double alpha = (static_cast<double>(X.voxels[i]) - background.voxels[i]) / diff;
    out[i] = static_cast<int32_t>(std::lround(K * alpha));
  }
  return out;
}

}  // namespace vfseg
