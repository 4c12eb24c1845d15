#include "vfseg/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "vfseg/error.hpp"

namespace fs = std::filesystem;

namespace vfseg {

std::string_view to_string(ShapeKind kind) noexcept {
  switch (kind) {
    case ShapeKind::Ellipsoid: return "ellipsoid";
    case ShapeKind::Box: return "box";
    case ShapeKind::Tube: return "tube";
  }
  return "unknown";
}

ShapeKind shape_kind_from_string(std::string_view name) {
  if (name == "ellipsoid") return ShapeKind::Ellipsoid;
  if (name == "box") return ShapeKind::Box;
  if (name == "tube") return ShapeKind::Tube;
  throw Error(ErrorCode::InvalidSpec, "unknown shape kind '" + std::string(name) + "'");
}

void PhantomSpec::validate() const {
  if (shape.d < 16 || shape.h < 16 || shape.w < 16) {
    throw Error(ErrorCode::InvalidSpec, "phantom shape components must be >= 16, got " + shape.str());
  }
  if (num_shapes_min < 0 || num_shapes_min > num_shapes_max) {
    throw Error(ErrorCode::InvalidSpec, "num_shapes range is empty");
  }
  if (kinds.empty() && num_shapes_max > 0) throw Error(ErrorCode::InvalidSpec, "no shape kinds given");
  if (intensity.size() != kinds.size()) {
    throw Error(ErrorCode::InvalidSpec, "need one intensity interval per shape kind");
  }
  auto unit = [](const Interval& r) { return r.lo >= 0.0 && r.hi <= 1.0 && r.lo <= r.hi; };
  for (const auto& r : intensity) {
    if (!unit(r)) throw Error(ErrorCode::InvalidSpec, "intensity intervals must be non-empty subsets of [0,1]");
  }
  if (!unit(background_range)) throw Error(ErrorCode::InvalidSpec, "background range must lie in [0,1]");
  if (!(correlation_length > 0.0)) throw Error(ErrorCode::InvalidSpec, "correlation length must be positive");
  if (shape_texture < 0.0) throw Error(ErrorCode::InvalidSpec, "shape texture amplitude must be >= 0");
  if (!(size_fraction > 0.0 && size_fraction <= 1.0)) throw Error(ErrorCode::InvalidSpec, "size fraction must lie in (0,1]");
  for (double s : spacing) {
    if (!(s > 0.0)) throw Error(ErrorCode::InvalidSpec, "spacing must be positive");
  }
}

bool inside(const ShapeInstance& s, double z, double y, double x) noexcept {
  const std::array<double, 3> p{z, y, x};
  switch (s.kind) {
    case ShapeKind::Ellipsoid: {
      double acc = 0.0;
      for (int a = 0; a < 3; ++a) {
        const double t = (p[a] - s.center[a]) / s.radii[a];
        acc += t * t;
      }
      return acc <= 1.0;
    }
    case ShapeKind::Box:
      for (int a = 0; a < 3; ++a) {
        if (std::abs(p[a] - s.center[a]) > s.radii[a]) return false;
      }
      return true;
    case ShapeKind::Tube: {
      double acc = 0.0;
      for (int a = 0; a < 3; ++a) {
        if (a == s.axis) continue;
        const double t = p[a] - s.center[a];
        acc += t * t;
      }
      return acc <= s.radii[0] * s.radii[0];
    }
  }
  return false;
}

std::vector<float> value_noise(const Shape3& shape, double correlation_length, Rng& rng) {
  const auto lattice = [&](int64_t n) { return static_cast<int64_t>(std::ceil(n / correlation_length)) + 2; };
  const Shape3 lat{lattice(shape.d), lattice(shape.h), lattice(shape.w)};
  std::vector<float> knots(static_cast<size_t>(lat.numel()));
  for (float& k : knots) k = static_cast<float>(rng.uniform());

  std::vector<float> out(static_cast<size_t>(shape.numel()));
  for (int64_t z = 0; z < shape.d; ++z) {
    const double fz = z / correlation_length;
    const auto z0 = static_cast<int64_t>(fz);
    const double tz = fz - z0;
    for (int64_t y = 0; y < shape.h; ++y) {
      const double fy = y / correlation_length;
      const auto y0 = static_cast<int64_t>(fy);
      const double ty = fy - y0;
      for (int64_t x = 0; x < shape.w; ++x) {
        const double fx = x / correlation_length;
        const auto x0 = static_cast<int64_t>(fx);
        const double tx = fx - x0;
        double acc = 0.0;
        for (int dz = 0; dz < 2; ++dz) {
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const double wgt = (dz ? tz : 1 - tz) * (dy ? ty : 1 - ty) * (dx ? tx : 1 - tx);
              acc += wgt * knots[static_cast<size_t>(lat.index(z0 + dz, y0 + dy, x0 + dx))];
            }
          }
        }
        out[static_cast<size_t>(shape.index(z, y, x))] = static_cast<float>(acc);
      }
    }
  }
  return out;
}

std::vector<ShapeInstance> sample_shapes(const PhantomSpec& spec, Rng& rng) {
  const auto count = rng.uniform_int(spec.num_shapes_min, spec.num_shapes_max);
  std::vector<ShapeInstance> shapes;
  shapes.reserve(static_cast<size_t>(count));
  const std::array<double, 3> extent{static_cast<double>(spec.shape.d), static_cast<double>(spec.shape.h),
                                     static_cast<double>(spec.shape.w)};
  for (int64_t i = 0; i < count; ++i) {
    ShapeInstance s;
    const auto k = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(spec.kinds.size()) - 1));
    s.kind = spec.kinds[k];
    for (int a = 0; a < 3; ++a) s.center[a] = rng.uniform(0.0, extent[a]);
    switch (s.kind) {
      case ShapeKind::Ellipsoid:
        for (int a = 0; a < 3; ++a) s.radii[a] = rng.uniform(1.5, std::max(2.0, extent[a] * spec.size_fraction));
        break;
      case ShapeKind::Box:
        for (int a = 0; a < 3; ++a) s.radii[a] = rng.uniform(1.0, std::max(1.5, extent[a] * spec.size_fraction * 2.0 / 3.0));
        break;
      case ShapeKind::Tube:
        s.axis = static_cast<int>(rng.uniform_int(0, 2));
        s.radii[0] = rng.uniform(1.0, 3.0);
        break;
    }
    s.intensity = rng.uniform(spec.intensity[k].lo, spec.intensity[k].hi);
    shapes.push_back(s);
  }
  return shapes;
}

Phantom render_phantom(const PhantomSpec& spec, const std::vector<ShapeInstance>& shapes, Rng& rng) {
  spec.validate();
  Phantom p;
  p.volume = Volume(spec.shape, spec.spacing);
  p.labels = LabelVolume(spec.shape, spec.num_label_classes(), spec.spacing);
  p.shapes = shapes;

  const auto& bg = spec.background_range;
  if (spec.background == BackgroundTexture::Constant) {
    std::fill(p.volume.voxels.begin(), p.volume.voxels.end(), static_cast<float>(bg.lo));
  } else {
    const auto noise = value_noise(spec.shape, spec.correlation_length, rng);
    for (size_t i = 0; i < noise.size(); ++i) {
      p.volume.voxels[i] = static_cast<float>(bg.lo + (bg.hi - bg.lo) * noise[i]);
    }
  }

  for (const auto& s : shapes) {
    const auto kind_it = std::find(spec.kinds.begin(), spec.kinds.end(), s.kind);
    if (kind_it == spec.kinds.end()) throw Error(ErrorCode::InvalidSpec, "shape kind not listed in spec");
    const auto label = static_cast<int32_t>(kind_it - spec.kinds.begin()) + 1;
    std::vector<float> texture;
    if (spec.shape_texture > 0.0) texture = value_noise(spec.shape, 3.0, rng);
    for (int64_t z = 0; z < spec.shape.d; ++z) {
      for (int64_t y = 0; y < spec.shape.h; ++y) {
        for (int64_t x = 0; x < spec.shape.w; ++x) {
          if (!inside(s, static_cast<double>(z), static_cast<double>(y), static_cast<double>(x))) continue;
          const auto idx = static_cast<size_t>(spec.shape.index(z, y, x));
          double v = s.intensity;
          if (!texture.empty()) v += spec.shape_texture * (texture[idx] - 0.5);
          p.volume.voxels[idx] = static_cast<float>(std::clamp(v, 0.0, 1.0));
          p.labels.labels[idx] = label;
        }
      }
    }
  }
  return p;
}

Phantom generate_phantom(const PhantomSpec& spec, Rng& rng) {
  spec.validate();
  const auto shapes = sample_shapes(spec, rng);
  return render_phantom(spec, shapes, rng);
}

Manifest generate_corpus(const PhantomSpec& spec, int n, const fs::path& out_dir, VolumeFormat format,
                         bool with_labels) {
  if (n < 1) throw Error(ErrorCode::InvalidSpec, "corpus size must be >= 1");
  spec.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + out_dir.string() + ": " + ec.message());

  const std::string ext = format == VolumeFormat::Nifti ? ".nii.gz" : ".raw";
  Manifest manifest;
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(spec.seed, static_cast<uint64_t>(i)));
    Phantom p = generate_phantom(spec, rng);
    char name[32];
    std::snprintf(name, sizeof(name), "phantom_%04d", i);
    p.volume.id = name;
    ManifestEntry e{name, fs::path(std::string(name) + ext), {}};
    save_volume(p.volume, out_dir / e.path, format);
    if (with_labels) {
      e.label_path = fs::path(std::string(name) + "_seg" + ext);
      save_labels(p.labels, out_dir / e.label_path, format);
    }
    manifest.push_back(std::move(e));
  }
  write_manifest(manifest, out_dir / "manifest.tsv");
  for (auto& e : manifest) {
    e.path = out_dir / e.path;
    if (!e.label_path.empty()) e.label_path = out_dir / e.label_path;
  }
  return manifest;
}

Manifest read_manifest(const fs::path& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw Error(ErrorCode::FileMissing, manifest_path.string());
  const fs::path base = manifest_path.parent_path();
  Manifest m;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    if (cols.size() < 2) throw Error(ErrorCode::MalformedHeader, "manifest line needs id<TAB>path: " + line);
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
    ManifestEntry e{cols[0], resolve(cols[1]), {}};
    if (cols.size() >= 3 && !cols[2].empty()) e.label_path = resolve(cols[2]);
    m.push_back(std::move(e));
  }
  return m;
}

void write_manifest(const Manifest& manifest, const fs::path& manifest_path) {
  std::ostringstream os;
  for (const auto& e : manifest) {
    os << e.id << '\t' << e.path.generic_string();
    if (!e.label_path.empty()) os << '\t' << e.label_path.generic_string();
    os << '\n';
  }
  const fs::path tmp = manifest_path.string() + ".tmp";
  {
    std::ofstream f(tmp);
    if (!f) throw Error(ErrorCode::IoFailure, "cannot write " + manifest_path.string());
    f << os.str();
  }
  fs::rename(tmp, manifest_path);
}

}  // namespace vfseg
