#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>

#include "vfseg/fusion.hpp"
#include "vfseg/losses.hpp"
#include "vfseg/models/model_config.hpp"
#include "vfseg/synthetic.hpp"
#include "vfseg/volume_io.hpp"

namespace vfseg {

using Json = nlohmann::json;

// Config files are JSON objects whose dotted key paths (fusion.K,
// loss.ds_weights, ...) mirror the struct fields below. Missing keys keep
// their defaults; unknown keys are rejected so typos do not pass silently.

void to_json(Json& j, const Shape3& s);
void from_json(const Json& j, Shape3& s);
void to_json(Json& j, const FusionParams& p);
void from_json(const Json& j, FusionParams& p);
void to_json(Json& j, const LossConfig& c);
void from_json(const Json& j, LossConfig& c);
void to_json(Json& j, const ModelConfig& c);
void from_json(const Json& j, ModelConfig& c);
void to_json(Json& j, const PhantomSpec& s);
void from_json(const Json& j, PhantomSpec& s);
void to_json(Json& j, const IntensityWindow& w);
void from_json(const Json& j, IntensityWindow& w);

Json read_json_file(const std::filesystem::path& path);
void write_json_file(const Json& j, const std::filesystem::path& path);

}  // namespace vfseg
