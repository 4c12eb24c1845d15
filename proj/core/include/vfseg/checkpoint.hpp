#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vfseg/config.hpp"
#include "vfseg/models/segmentation_model.hpp"

namespace vfseg {

/// Single-file archive:
///   8 bytes  magic "VFSEGCK1"
///   8 bytes  little-endian header length L
///   L bytes  JSON header {model_config, step, extra, tensors[], blobs[]}
///   payload  tensors and opaque blobs at the offsets listed in the header
///
/// Tensor entries hold parameters and buffers under their module path
/// (e.g. "enc3.attn1.attn.qkv.weight"); blobs carry optimizer state.
struct Checkpoint {
  ModelConfig model_config;
  int64_t step = 0;
  Json extra = Json::object();
  std::vector<std::pair<std::string, torch::Tensor>> tensors;
  std::map<std::string, std::string> blobs;

  const torch::Tensor* find(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Parameters then buffers, in registration order.
Checkpoint snapshot(SegmentationModel& model, int64_t step);

/// Copies every tensor in `ckpt` into `model`; shapes and names must match exactly.
void restore(SegmentationModel& model, const Checkpoint& ckpt);

SegmentationModelPtr model_from_checkpoint(const Checkpoint& ckpt);

std::string serialize_optimizer(torch::optim::Optimizer& opt);
void deserialize_optimizer(torch::optim::Optimizer& opt, const std::string& bytes);

}  // namespace vfseg
