#include "vfseg/training.hpp"

#include <cmath>
#include <fstream>

#include "vfseg/error.hpp"
#include "vfseg/plot.hpp"

namespace fs = std::filesystem;

namespace vfseg {

void TrainConfig::validate() const {
  if (batch_size < 1) throw Error(ErrorCode::InvalidConfig, "batch_size must be >= 1");
  if (!(initial_lr > 0.0)) throw Error(ErrorCode::InvalidConfig, "initial_lr must be positive");
  if (weight_decay < 0.0) throw Error(ErrorCode::InvalidConfig, "weight_decay must be >= 0");
  if (lr_halve_every < 1) throw Error(ErrorCode::InvalidConfig, "lr_halve_every must be >= 1");
  if (max_iterations < 1) throw Error(ErrorCode::InvalidConfig, "max_iterations must be >= 1");
  if (checkpoint_every < 1 || eval_every < 1) throw Error(ErrorCode::InvalidConfig, "cadences must be >= 1");
  if (!(inference_overlap >= 0.0 && inference_overlap <= 0.9)) {
    throw Error(ErrorCode::InvalidConfig, "inference_overlap must be in [0, 0.9]");
  }
  fusion.validate();
  loss.validate();
}

double TrainConfig::lr_at(int64_t step) const {
  const int64_t halvings = (step - 1) / lr_halve_every;
  return std::ldexp(initial_lr, -static_cast<int>(halvings));
}

TrainConfig TrainConfig::full_scale_pretrain() {
  TrainConfig c;
  c.max_iterations = 100000;
  c.lr_halve_every = 20000;
  c.checkpoint_every = 5000;
  c.eval_every = 1000;
  c.fusion = FusionParams{};
  return c;
}

void to_json(Json& j, const TrainConfig& c) {
  j = Json{{"batch_size", c.batch_size},
           {"initial_lr", c.initial_lr},
           {"weight_decay", c.weight_decay},
           {"lr_halve_every", c.lr_halve_every},
           {"max_iterations", c.max_iterations},
           {"seed", c.seed},
           {"checkpoint_every", c.checkpoint_every},
           {"eval_every", c.eval_every},
           {"heldout_samples", c.heldout_samples},
           {"crop_shape", c.crop_shape},
           {"inference_window", c.inference_window},
           {"inference_overlap", c.inference_overlap},
           {"deterministic", c.deterministic},
           {"workers", c.workers}};
}

void from_json(const Json& j, TrainConfig& c) {
  static const std::vector<std::string> known{
      "batch_size", "initial_lr", "weight_decay",     "lr_halve_every",    "max_iterations",    "seed",
      "checkpoint_every", "eval_every", "heldout_samples", "crop_shape", "inference_window", "inference_overlap",
      "deterministic", "workers"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw Error(ErrorCode::InvalidConfig, "unknown key '" + key + "' in train");
    }
  }
  auto opt = [&](const char* key, auto& out) {
    if (j.contains(key)) out = j.at(key).get<std::decay_t<decltype(out)>>();
  };
  opt("batch_size", c.batch_size);
  opt("initial_lr", c.initial_lr);
  opt("weight_decay", c.weight_decay);
  opt("lr_halve_every", c.lr_halve_every);
  opt("max_iterations", c.max_iterations);
  opt("seed", c.seed);
  opt("checkpoint_every", c.checkpoint_every);
  opt("eval_every", c.eval_every);
  opt("heldout_samples", c.heldout_samples);
  opt("crop_shape", c.crop_shape);
  opt("inference_window", c.inference_window);
  opt("inference_overlap", c.inference_overlap);
  opt("deterministic", c.deterministic);
  opt("workers", c.workers);
}

Json to_json(const RunConfig& rc) {
  return Json{{"model", rc.model}, {"train", rc.train}, {"fusion", rc.train.fusion}, {"loss", rc.train.loss}};
}

RunConfig run_config_from_json(const Json& j) {
  for (const auto& [key, _] : j.items()) {
    if (key != "model" && key != "train" && key != "fusion" && key != "loss") {
      throw Error(ErrorCode::InvalidConfig, "unknown top-level key '" + key + "'");
    }
  }
  RunConfig rc;
  if (j.contains("model")) rc.model = j.at("model").get<ModelConfig>();
  if (j.contains("train")) rc.train = j.at("train").get<TrainConfig>();
  if (j.contains("fusion")) rc.train.fusion = j.at("fusion").get<FusionParams>();
  if (j.contains("loss")) rc.train.loss = j.at("loss").get<LossConfig>();
  rc.model.validate();
  rc.train.validate();
  return rc;
}

RunConfig load_run_config(const fs::path& path) { return run_config_from_json(read_json_file(path)); }

// ------------------------------------------------------------------ RunLog

void RunLog::append_line(const Json& j) const {
  if (path_.empty()) return;
  std::ofstream os(path_, std::ios::app);
  if (!os) throw Error(ErrorCode::IoFailure, "cannot append to " + path_.string());
  os << j.dump() << '\n';
}

namespace {

Json iter_json(const IterationRecord& r) {
  return Json{{"kind", "iter"}, {"step", r.step}, {"loss", r.loss}, {"lr", r.lr}, {"wall", r.wall_seconds}};
}

Json eval_json(const EvalRecord& r) {
  return Json{{"kind", "eval"}, {"step", r.step}, {"dice", r.dice}, {"mean_foreground", r.mean_foreground}};
}

}  // namespace

void RunLog::add(const IterationRecord& r) {
  if (!iters_.empty() && r.step <= iters_.back().step) {
    throw Error(ErrorCode::InvalidConfig, "run log steps must increase strictly");
  }
  iters_.push_back(r);
  append_line(iter_json(r));
}

void RunLog::add(const EvalRecord& r) {
  evals_.push_back(r);
  append_line(eval_json(r));
}

std::vector<double> RunLog::loss_trace() const {
  std::vector<double> out;
  out.reserve(iters_.size());
  for (const auto& r : iters_) out.push_back(r.loss);
  return out;
}

void RunLog::truncate(int64_t step) {
  std::erase_if(iters_, [&](const IterationRecord& r) { return r.step > step; });
  std::erase_if(evals_, [&](const EvalRecord& r) { return r.step > step; });
}

void RunLog::rewrite() const {
  if (path_.empty()) return;
  const fs::path tmp = path_.string() + ".tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw Error(ErrorCode::IoFailure, "cannot write " + path_.string());
    // Interleave by step so the file reads chronologically.
    size_t e = 0;
    for (const auto& r : iters_) {
      os << iter_json(r).dump() << '\n';
      while (e < evals_.size() && evals_[e].step <= r.step) os << eval_json(evals_[e++]).dump() << '\n';
    }
    while (e < evals_.size()) os << eval_json(evals_[e++]).dump() << '\n';
  }
  fs::rename(tmp, path_);
}

RunLog RunLog::read(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::FileMissing, path.string());
  RunLog log;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const Json j = Json::parse(line);
    if (j.at("kind") == "iter") {
      log.iters_.push_back(IterationRecord{j.at("step").get<int64_t>(), j.at("loss").get<double>(),
                                           j.at("lr").get<double>(), j.value("wall", 0.0)});
    } else if (j.at("kind") == "eval") {
      log.evals_.push_back(EvalRecord{j.at("step").get<int64_t>(), j.at("dice").get<std::vector<double>>(),
                                      j.at("mean_foreground").get<double>()});
    }
  }
  log.path_ = path;
  return log;
}

torch::Tensor to_image_batch(const std::vector<const Volume*>& volumes) {
  if (volumes.empty()) throw Error(ErrorCode::EmptyCorpus, "empty batch");
  const Shape3 s = volumes.front()->shape;
  auto out = torch::empty({static_cast<int64_t>(volumes.size()), 1, s.d, s.h, s.w}, torch::kFloat32);
  auto* dst = out.data_ptr<float>();
  for (const auto* v : volumes) {
    if (v->shape != s) throw Error(ErrorCode::ShapeMismatch, "batch volumes differ in shape");
    dst = std::copy(v->voxels.begin(), v->voxels.end(), dst);
  }
  return out;
}

torch::Tensor to_label_batch(const std::vector<const LabelVolume*>& labels) {
  if (labels.empty()) throw Error(ErrorCode::EmptyCorpus, "empty batch");
  const Shape3 s = labels.front()->shape;
  auto out = torch::empty({static_cast<int64_t>(labels.size()), s.d, s.h, s.w}, torch::kInt64);
  auto* dst = out.data_ptr<int64_t>();
  for (const auto* l : labels) {
    if (l->shape != s) throw Error(ErrorCode::ShapeMismatch, "batch label maps differ in shape");
    dst = std::copy(l->labels.begin(), l->labels.end(), dst);
  }
  return out;
}

void save_run_summary(const RunLog& log, const fs::path& path, const std::string& title) {
  Series loss{"LOSS", {}, {}};
  for (const auto& r : log.iterations()) {
    loss.x.push_back(static_cast<double>(r.step));
    loss.y.push_back(r.loss);
  }
  Series dice{"MEAN FG DICE", {}, {}};
  for (const auto& r : log.evals()) {
    dice.x.push_back(static_cast<double>(r.step));
    dice.y.push_back(r.mean_foreground);
  }
  Canvas c(1280, 400);
  draw_line_chart(c, 0, 0, 640, 400, {loss}, Axes{title + " LOSS", "STEP", "", true});
  draw_line_chart(c, 640, 0, 640, 400, {dice}, Axes{title + " DICE", "STEP", "", false});
  c.save_png(path);
}

void set_learning_rate(torch::optim::Optimizer& opt, double lr) {
  for (auto& group : opt.param_groups()) group.options().set_lr(lr);
}

void configure_determinism(bool deterministic) {
  if (deterministic) {
    torch::set_num_threads(1);
    at::globalContext().setDeterministicAlgorithms(true, false);
  }
}

}  // namespace vfseg
