#include "vfseg/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "vfseg/error.hpp"

namespace fs = std::filesystem;

namespace vfseg {
namespace {

constexpr char kMagic[8] = {'V', 'F', 'S', 'E', 'G', 'C', 'K', '1'};

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    default: throw Error(ErrorCode::IoFailure, "unsupported tensor dtype in checkpoint");
  }
}

torch::ScalarType dtype_from(const std::string& name) {
  if (name == "f32") return torch::kFloat32;
  if (name == "f64") return torch::kFloat64;
  if (name == "i64") return torch::kInt64;
  throw Error(ErrorCode::MalformedHeader, "unknown tensor dtype '" + name + "'");
}

}  // namespace

const torch::Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  Json header;
  header["format"] = 1;
  header["model_config"] = ckpt.model_config;
  header["step"] = ckpt.step;
  header["extra"] = ckpt.extra;
  header["tensors"] = Json::array();
  header["blobs"] = Json::array();

  std::string payload;
  for (const auto& [name, tensor] : ckpt.tensors) {
    auto t = tensor.detach().contiguous().cpu();
    const size_t nbytes = static_cast<size_t>(t.numel()) * t.element_size();
    header["tensors"].push_back(
        {{"name", name}, {"dtype", dtype_name(t.scalar_type())}, {"shape", t.sizes().vec()}, {"offset", payload.size()},
         {"nbytes", nbytes}});
    payload.append(static_cast<const char*>(t.data_ptr()), nbytes);
  }
  for (const auto& [name, bytes] : ckpt.blobs) {
    header["blobs"].push_back({{"name", name}, {"offset", payload.size()}, {"nbytes", bytes.size()}});
    payload.append(bytes);
  }
  const std::string text = header.dump();
  const uint64_t len = text.size();

  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
    os.write(kMagic, sizeof(kMagic));
    os.write(reinterpret_cast<const char*>(&len), sizeof(len));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!os) throw Error(ErrorCode::IoFailure, "short write to " + path.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::FileMissing, path.string());
  char magic[8];
  uint64_t len = 0;
  is.read(magic, sizeof(magic));
  is.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorCode::MalformedHeader, path.string() + " is not a vfseg checkpoint");
  }
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  std::string payload((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  Json header;
  try {
    header = Json::parse(text);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::MalformedHeader, "checkpoint header: " + std::string(e.what()));
  }

  Checkpoint ckpt;
  ckpt.model_config = header.at("model_config").get<ModelConfig>();
  ckpt.step = header.at("step").get<int64_t>();
  ckpt.extra = header.value("extra", Json::object());
  for (const auto& e : header.at("tensors")) {
    const auto offset = e.at("offset").get<size_t>();
    const auto nbytes = e.at("nbytes").get<size_t>();
    if (offset + nbytes > payload.size()) throw Error(ErrorCode::MalformedHeader, "tensor extends past end of file");
    auto t = torch::empty(e.at("shape").get<std::vector<int64_t>>(),
                          torch::TensorOptions().dtype(dtype_from(e.at("dtype").get<std::string>())));
    if (static_cast<size_t>(t.numel()) * t.element_size() != nbytes) {
      throw Error(ErrorCode::MalformedHeader, "tensor size disagrees with its shape");
    }
    std::memcpy(t.data_ptr(), payload.data() + offset, nbytes);
    ckpt.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
  }
  for (const auto& e : header.at("blobs")) {
    const auto offset = e.at("offset").get<size_t>();
    const auto nbytes = e.at("nbytes").get<size_t>();
    if (offset + nbytes > payload.size()) throw Error(ErrorCode::MalformedHeader, "blob extends past end of file");
    ckpt.blobs[e.at("name").get<std::string>()] = payload.substr(offset, nbytes);
  }
  return ckpt;
}

Checkpoint snapshot(SegmentationModel& model, int64_t step) {
  Checkpoint c;
  c.model_config = model.config();
  c.step = step;
  for (const auto& p : model.named_parameters()) c.tensors.emplace_back(p.key(), p.value().detach().clone());
  for (const auto& b : model.named_buffers()) c.tensors.emplace_back(b.key(), b.value().detach().clone());
  return c;
}

void restore(SegmentationModel& model, const Checkpoint& ckpt) {
  torch::NoGradGuard guard;
  auto copy_into = [&](const std::string& name, torch::Tensor& dst) {
    const auto* src = ckpt.find(name);
    if (src == nullptr) throw Error(ErrorCode::ArchitectureMismatch, "checkpoint lacks '" + name + "'");
    if (src->sizes() != dst.sizes()) {
      throw Error(ErrorCode::ArchitectureMismatch, "shape mismatch for '" + name + "'");
    }
    dst.copy_(*src);
  };
  for (auto& p : model.named_parameters()) copy_into(p.key(), p.value());
  for (auto& b : model.named_buffers()) copy_into(b.key(), b.value());
}

SegmentationModelPtr model_from_checkpoint(const Checkpoint& ckpt) {
  auto model = build_model(ckpt.model_config, 0);
  restore(*model, ckpt);
  return model;
}

std::string serialize_optimizer(torch::optim::Optimizer& opt) {
  std::ostringstream os(std::ios::binary);
  torch::serialize::OutputArchive archive;
  opt.save(archive);
  archive.save_to(os);
  return os.str();
}

void deserialize_optimizer(torch::optim::Optimizer& opt, const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  torch::serialize::InputArchive archive;
  archive.load_from(is);
  opt.load(archive);
}

}  // namespace vfseg
