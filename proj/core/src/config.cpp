#include "vfseg/config.hpp"

#include <fstream>
#include <set>

#include "vfseg/error.hpp"

namespace fs = std::filesystem;

namespace vfseg {
namespace {

void reject_unknown(const Json& j, std::initializer_list<const char*> known, const char* where) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, std::string(where) + " must be a JSON object");
  const std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) throw Error(ErrorCode::InvalidConfig, "unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read_opt(const Json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      out = it->get<T>();
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::InvalidConfig, std::string("bad value for '") + key + "': " + e.what());
    }
  }
}

void read_range(const Json& j, const char* key, IntRange& r) {
  if (auto it = j.find(key); it != j.end()) {
    if (!it->is_array() || it->size() != 2) throw Error(ErrorCode::InvalidConfig, std::string(key) + " needs [lo, hi]");
    r = IntRange{(*it)[0].get<int64_t>(), (*it)[1].get<int64_t>()};
  }
}

void read_interval(const Json& j, Interval& r) {
  if (!j.is_array() || j.size() != 2) throw Error(ErrorCode::InvalidConfig, "interval needs [lo, hi]");
  r = Interval{j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

void to_json(Json& j, const Shape3& s) { j = Json::array({s.d, s.h, s.w}); }

void from_json(const Json& j, Shape3& s) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::InvalidConfig, "shape needs [D, H, W]");
  s = Shape3{j[0].get<int64_t>(), j[1].get<int64_t>(), j[2].get<int64_t>()};
}

void to_json(Json& j, const FusionParams& p) {
  j = Json{{"K", p.K},
           {"m0", p.m0},
           {"m1", p.m1},
           {"patch_range_d", {p.patch_depth.lo, p.patch_depth.hi}},
           {"patch_range_h", {p.patch_height.lo, p.patch_height.hi}},
           {"patch_range_w", {p.patch_width.lo, p.patch_width.hi}},
           {"subvolume_shape", p.subvolume_shape},
           {"tau", p.tau},
           {"allow_same_scan", p.allow_same_scan},
           {"pad_undersized", p.pad_undersized}};
}

void from_json(const Json& j, FusionParams& p) {
  reject_unknown(j,
                 {"K", "m0", "m1", "patch_range_d", "patch_range_h", "patch_range_w", "subvolume_shape", "tau",
                  "allow_same_scan", "pad_undersized"},
                 "fusion");
  read_opt(j, "K", p.K);
  read_opt(j, "m0", p.m0);
  read_opt(j, "m1", p.m1);
  read_range(j, "patch_range_d", p.patch_depth);
  read_range(j, "patch_range_h", p.patch_height);
  read_range(j, "patch_range_w", p.patch_width);
  if (j.contains("subvolume_shape")) p.subvolume_shape = j.at("subvolume_shape").get<Shape3>();
  read_opt(j, "tau", p.tau);
  read_opt(j, "allow_same_scan", p.allow_same_scan);
  read_opt(j, "pad_undersized", p.pad_undersized);
}

void to_json(Json& j, const LossConfig& c) {
  j = Json{{"epsilon", c.epsilon},
           {"dice_form", c.dice_form == DiceForm::Aggregated ? "aggregated" : "literal-per-voxel"},
           {"ds_weights", c.deep_supervision_weights}};
}

void from_json(const Json& j, LossConfig& c) {
  reject_unknown(j, {"epsilon", "dice_form", "ds_weights"}, "loss");
  read_opt(j, "epsilon", c.epsilon);
  if (j.contains("dice_form")) {
    const auto form = j.at("dice_form").get<std::string>();
    if (form == "aggregated") {
      c.dice_form = DiceForm::Aggregated;
    } else if (form == "literal-per-voxel") {
      c.dice_form = DiceForm::LiteralPerVoxel;
    } else {
      throw Error(ErrorCode::InvalidConfig, "unknown dice_form '" + form + "'");
    }
  }
  read_opt(j, "ds_weights", c.deep_supervision_weights);
  c.validate();
}

void to_json(Json& j, const ModelConfig& c) {
  j = Json{{"arch", std::string(to_string(c.arch))},
           {"in_channels", c.in_channels},
           {"num_classes", c.num_classes},
           {"level_channels", c.level_channels},
           {"window_size", c.window_size},
           {"shift_size", c.shift_size},
           {"num_heads", c.num_heads},
           {"mlp_ratio", c.mlp_ratio},
           {"dropout_rate", c.dropout_rate}};
}

void from_json(const Json& j, ModelConfig& c) {
  reject_unknown(j,
                 {"arch", "in_channels", "num_classes", "level_channels", "window_size", "shift_size", "num_heads",
                  "mlp_ratio", "dropout_rate"},
                 "model");
  if (j.contains("arch")) c.arch = architecture_from_string(j.at("arch").get<std::string>());
  read_opt(j, "in_channels", c.in_channels);
  read_opt(j, "num_classes", c.num_classes);
  read_opt(j, "level_channels", c.level_channels);
  read_opt(j, "window_size", c.window_size);
  if (j.contains("shift_size")) {
    read_opt(j, "shift_size", c.shift_size);
  } else {
    for (int a = 0; a < 3; ++a) c.shift_size[static_cast<size_t>(a)] = c.window_size[static_cast<size_t>(a)] / 2;
  }
  read_opt(j, "num_heads", c.num_heads);
  read_opt(j, "mlp_ratio", c.mlp_ratio);
  read_opt(j, "dropout_rate", c.dropout_rate);
  c.validate();
}

void to_json(Json& j, const PhantomSpec& s) {
  Json kinds = Json::array();
  Json intensity = Json::array();
  for (size_t i = 0; i < s.kinds.size(); ++i) {
    kinds.push_back(std::string(to_string(s.kinds[i])));
    intensity.push_back({s.intensity[i].lo, s.intensity[i].hi});
  }
  j = Json{{"shape", s.shape},
           {"spacing", s.spacing},
           {"num_shapes", {s.num_shapes_min, s.num_shapes_max}},
           {"shape_kinds", kinds},
           {"intensity", intensity},
           {"background_texture", s.background == BackgroundTexture::Constant ? "constant" : "smooth-noise"},
           {"background_range", {s.background_range.lo, s.background_range.hi}},
           {"correlation_length", s.correlation_length},
           {"shape_texture", s.shape_texture},
           {"size_fraction", s.size_fraction},
           {"seed", s.seed}};
}

void from_json(const Json& j, PhantomSpec& s) {
  reject_unknown(j,
                 {"shape", "spacing", "num_shapes", "shape_kinds", "intensity", "background_texture",
                  "background_range", "correlation_length", "shape_texture", "size_fraction", "seed"},
                 "phantom spec");
  if (j.contains("shape")) s.shape = j.at("shape").get<Shape3>();
  read_opt(j, "spacing", s.spacing);
  if (j.contains("num_shapes")) {
    const auto& r = j.at("num_shapes");
    if (!r.is_array() || r.size() != 2) throw Error(ErrorCode::InvalidSpec, "num_shapes needs [min, max]");
    s.num_shapes_min = r[0].get<int>();
    s.num_shapes_max = r[1].get<int>();
  }
  if (j.contains("shape_kinds")) {
    s.kinds.clear();
    for (const auto& k : j.at("shape_kinds")) s.kinds.push_back(shape_kind_from_string(k.get<std::string>()));
    if (!j.contains("intensity")) s.intensity.assign(s.kinds.size(), Interval{0.5, 1.0});
  }
  if (j.contains("intensity")) {
    s.intensity.clear();
    for (const auto& r : j.at("intensity")) {
      Interval iv;
      read_interval(r, iv);
      s.intensity.push_back(iv);
    }
  }
  if (j.contains("background_texture")) {
    const auto t = j.at("background_texture").get<std::string>();
    if (t == "constant") {
      s.background = BackgroundTexture::Constant;
    } else if (t == "smooth-noise") {
      s.background = BackgroundTexture::SmoothNoise;
    } else {
      throw Error(ErrorCode::InvalidSpec, "unknown background_texture '" + t + "'");
    }
  }
  if (j.contains("background_range")) read_interval(j.at("background_range"), s.background_range);
  read_opt(j, "correlation_length", s.correlation_length);
  read_opt(j, "shape_texture", s.shape_texture);
  read_opt(j, "size_fraction", s.size_fraction);
  read_opt(j, "seed", s.seed);
  s.validate();
}

void to_json(Json& j, const IntensityWindow& w) { j = Json::array({w.low, w.high}); }

void from_json(const Json& j, IntensityWindow& w) {
  if (!j.is_array() || j.size() != 2) throw Error(ErrorCode::InvalidConfig, "window needs [low, high]");
  w = IntensityWindow{j[0].get<double>(), j[1].get<double>()};
}

Json read_json_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::FileMissing, path.string());
  try {
    return Json::parse(is);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
}

void write_json_file(const Json& j, const fs::path& path) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
    os << j.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

}  // namespace vfseg
