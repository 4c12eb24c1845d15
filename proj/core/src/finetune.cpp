#include "vfseg/finetune.hpp"

#include <chrono>
#include <cmath>
#include <unordered_map>

#include "vfseg/error.hpp"
#include "vfseg/fusion.hpp"
#include "vfseg/metrics.hpp"
#include "vfseg/random.hpp"
#include "vfseg/synthetic.hpp"

namespace fs = std::filesystem;

namespace vfseg {

namespace {

constexpr uint64_t kBatchStream = 1;
constexpr uint64_t kDropoutStream = 2;

}  // namespace

LabeledCorpus load_labeled_corpus(const fs::path& manifest, const IntensityWindow& window) {
  LabeledCorpus corpus;
  for (const auto& entry : read_manifest(manifest)) {
    if (entry.label_path.empty()) {
      throw Error(ErrorCode::MalformedHeader, "manifest entry '" + entry.id + "' has no label path");
    }
    LabeledCase c{load_volume(entry.path), load_labels(entry.label_path)};
    if (!c.image.is_normalized()) c.image = normalize_intensity(c.image, window);
    c.image.id = entry.id;
    if (c.image.shape != c.labels.shape) {
      throw Error(ErrorCode::ShapeMismatch, "image and labels of '" + entry.id + "' differ in shape");
    }
    corpus.push_back(std::move(c));
  }
  return corpus;
}

Split read_split(const fs::path& path) {
  const Json j = read_json_file(path);
  Split s;
  s.train = j.value("train", std::vector<std::string>{});
  s.val = j.value("val", std::vector<std::string>{});
  s.test = j.value("test", std::vector<std::string>{});
  return s;
}

void write_split(const Split& split, const fs::path& path) {
  write_json_file(Json{{"train", split.train}, {"val", split.val}, {"test", split.test}}, path);
}

LabeledCorpus select_cases(const LabeledCorpus& corpus, const std::vector<std::string>& ids) {
  std::unordered_map<std::string, const LabeledCase*> by_id;
  for (const auto& c : corpus) by_id[c.id()] = &c;
  LabeledCorpus out;
  for (const auto& id : ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw Error(ErrorCode::FileMissing, "split names unknown case '" + id + "'");
    out.push_back(*it->second);
  }
  return out;
}

// ------------------------------------------------------------ transfer

TransferResult load_for_transfer(const Checkpoint& ckpt, int64_t num_classes, uint64_t seed,
                                 const ModelConfig* target) {
  ModelConfig cfg = ckpt.model_config;
  if (target != nullptr) {
    ModelConfig a = *target, b = cfg;
    a.num_classes = b.num_classes = 0;
    if (Json(a) != Json(b)) {
      throw Error(ErrorCode::ArchitectureMismatch, "checkpoint architecture differs from the target config");
    }
  }
  cfg.num_classes = num_classes;
  TransferResult result;
  result.model = build_model(cfg, seed);
  torch::NoGradGuard guard;
  auto copy = [&](const std::string& name, torch::Tensor& dst) {
    if (SegmentationModel::is_head_parameter(name)) {
      result.report.reinitialized.push_back(name);
      return;
    }
    const auto* src = ckpt.find(name);
    if (src == nullptr) throw Error(ErrorCode::ArchitectureMismatch, "checkpoint lacks '" + name + "'");
    if (src->sizes() != dst.sizes()) {
      throw Error(ErrorCode::ArchitectureMismatch, "shape mismatch for '" + name + "'");
    }
    dst.copy_(*src);
    result.report.transferred.push_back(name);
  };
  for (auto& p : result.model->named_parameters()) copy(p.key(), p.value());
  for (auto& b : result.model->named_buffers()) copy(b.key(), b.value());
  return result;
}

TransferResult load_for_transfer(const fs::path& checkpoint, int64_t num_classes, uint64_t seed,
                                 const ModelConfig* target) {
  return load_for_transfer(load_checkpoint(checkpoint), num_classes, seed, target);
}

// ------------------------------------------------------------ sliding window

std::vector<int64_t> tile_starts(int64_t extent, int64_t window, double overlap) {
  if (window >= extent) return {0};
  const auto stride = std::max<int64_t>(1, static_cast<int64_t>(std::floor(window * (1.0 - overlap) + 1e-9)));
  std::vector<int64_t> starts;
  for (int64_t s = 0; s + window < extent; s += stride) starts.push_back(s);
  starts.push_back(extent - window);
  return starts;
}

torch::Tensor sliding_window_probabilities(const TilePredictor& predict, const Volume& v, int64_t num_classes,
                                           const SlidingWindowOptions& opts) {
  if (!(opts.overlap >= 0.0 && opts.overlap <= 0.9)) {
    throw Error(ErrorCode::InvalidParams, "overlap must be in [0, 0.9]");
  }
  const Shape3 win = opts.window;
  if (win.d < 1 || win.h < 1 || win.w < 1) throw Error(ErrorCode::InvalidParams, "empty window");
  const bool too_small = v.shape.d < win.d || v.shape.h < win.h || v.shape.w < win.w;
  if (too_small && !opts.pad) {
    throw Error(ErrorCode::WindowLargerThanVolume,
                "window " + win.str() + " larger than volume " + v.shape.str());
  }
  const Shape3 grid{std::max(v.shape.d, win.d), std::max(v.shape.h, win.h), std::max(v.shape.w, win.w)};
  auto image = torch::from_blob(const_cast<float*>(v.voxels.data()), {v.shape.d, v.shape.h, v.shape.w},
                                torch::kFloat32);
  auto padded = torch::zeros({1, 1, grid.d, grid.h, grid.w}, torch::kFloat32);
  padded.index({0, 0})
      .slice(0, 0, v.shape.d)
      .slice(1, 0, v.shape.h)
      .slice(2, 0, v.shape.w)
      .copy_(image);

  auto sum = torch::zeros({num_classes, grid.d, grid.h, grid.w}, torch::kFloat32);
  auto count = torch::zeros({1, grid.d, grid.h, grid.w}, torch::kFloat32);
  // Tiles are visited in a fixed lexicographic order so the accumulation is reproducible.
  for (const int64_t z : tile_starts(grid.d, win.d, opts.overlap))
    for (const int64_t y : tile_starts(grid.h, win.h, opts.overlap))
      for (const int64_t x : tile_starts(grid.w, win.w, opts.overlap)) {
        const auto tile = padded.slice(2, z, z + win.d).slice(3, y, y + win.h).slice(4, x, x + win.w).contiguous();
        const auto probs = predict(tile);
        if (probs.dim() != 5 || probs.size(1) != num_classes) {
          throw Error(ErrorCode::ShapeMismatch, "tile predictor returned unexpected shape");
        }
        sum.slice(1, z, z + win.d).slice(2, y, y + win.h).slice(3, x, x + win.w) += probs[0];
        count.slice(1, z, z + win.d).slice(2, y, y + win.h).slice(3, x, x + win.w) += 1.0f;
      }
  return (sum / count).slice(1, 0, v.shape.d).slice(2, 0, v.shape.h).slice(3, 0, v.shape.w).contiguous();
}

LabelVolume sliding_window_predict(SegmentationModel& model, const Volume& v, const SlidingWindowOptions& opts) {
  torch::NoGradGuard guard;
  const bool was_training = model.is_training();
  model.eval();
  const TilePredictor predict = [&](const torch::Tensor& tile) {
    return torch::softmax(model.forward_logits(tile).front(), 1);
  };
  const auto probs = sliding_window_probabilities(predict, v, model.config().num_classes, opts);
  model.train(was_training);
  const auto arg = probs.argmax(0).to(torch::kInt32).contiguous();
  LabelVolume out;
  out.shape = v.shape;
  out.spacing = v.spacing;
  out.num_classes = static_cast<int32_t>(model.config().num_classes);
  out.labels.assign(arg.data_ptr<int32_t>(), arg.data_ptr<int32_t>() + arg.numel());
  return out;
}

double validation_dice(SegmentationModel& model, const LabeledCorpus& cases, const SlidingWindowOptions& opts) {
  if (cases.empty()) throw Error(ErrorCode::EmptyCorpus, "no validation cases");
  const auto C = static_cast<int32_t>(model.config().num_classes);
  double total = 0.0;
  for (const auto& c : cases) {
    const auto pred = sliding_window_predict(model, c.image, opts);
    double sum = 0.0;
    for (int32_t k = 1; k < C; ++k) sum += dice_coefficient(pred, c.labels, k);
    total += C > 1 ? sum / (C - 1) : 0.0;
  }
  return total / static_cast<double>(cases.size());
}

// ------------------------------------------------------------ training loop

FinetuneResult finetune(SegmentationModelPtr model, const LabeledCorpus& train, const LabeledCorpus& val,
                        const TrainConfig& cfg, const FinetuneOptions& options) {
  if (train.empty()) throw Error(ErrorCode::EmptyCorpus, "fine-tuning needs at least one labeled case");
  cfg.validate();
  for (const auto& c : train) {
    for (int a = 0; a < 3; ++a) {
      if (c.image.shape[a] < cfg.crop_shape[a]) {
        throw Error(ErrorCode::VolumeTooSmall,
                    "case '" + c.id() + "' " + c.image.shape.str() + " smaller than crop " + cfg.crop_shape.str());
      }
    }
  }
  configure_determinism(cfg.deterministic);
  const bool write_files = !options.out_dir.empty();
  if (write_files) {
    fs::create_directories(options.out_dir);
    fs::remove(options.out_dir / "runlog.jsonl");
  }

  FinetuneResult result;
  result.model = std::move(model);
  auto& net = *result.model;
  result.log.set_path(write_files ? options.out_dir / "runlog.jsonl" : fs::path{});
  torch::optim::Adam optimizer(net.parameters(),
                               torch::optim::AdamOptions(cfg.initial_lr).weight_decay(cfg.weight_decay));
  const SlidingWindowOptions window{cfg.inference_window, cfg.inference_overlap, true};

  Checkpoint best;
  const auto t0 = std::chrono::steady_clock::now();
  net.train();
  for (int64_t step = 1; step <= cfg.max_iterations; ++step) {
    const double lr = cfg.lr_at(step);
    set_learning_rate(optimizer, lr);

    Rng rng(derive_seed(cfg.seed, kBatchStream, step));
    std::vector<Volume> images;
    std::vector<LabelVolume> labels;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& c = train[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(train.size()) - 1))];
      std::array<int64_t, 3> origin{};
      for (int a = 0; a < 3; ++a) origin[a] = rng.uniform_int(0, c.image.shape[a] - cfg.crop_shape[a]);
      images.push_back(crop_at(c.image, cfg.crop_shape, origin));
      labels.push_back(crop_at(c.labels, cfg.crop_shape, origin));
    }
    std::vector<const Volume*> xs;
    std::vector<const LabelVolume*> ys;
    for (size_t b = 0; b < images.size(); ++b) {
      xs.push_back(&images[b]);
      ys.push_back(&labels[b]);
    }

    torch::manual_seed(derive_seed(cfg.seed, kDropoutStream, step));
    optimizer.zero_grad();
    const auto pred = net.forward(to_image_batch(xs));
    const auto loss = deep_supervision_loss(pred.probs, to_label_batch(ys), cfg.loss);
    const double loss_value = loss.item<double>();
    if (!std::isfinite(loss_value)) {
      throw Error(ErrorCode::DivergenceDetected, "non-finite loss at step " + std::to_string(step));
    }
    loss.backward();
    optimizer.step();

    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const IterationRecord rec{step, loss_value, lr, wall};
    result.log.add(rec);
    if (options.on_iteration) options.on_iteration(rec);

    if (!val.empty() && (step % cfg.eval_every == 0 || step == cfg.max_iterations)) {
      const double d = validation_dice(net, val, window);
      const EvalRecord ev{step, {}, d};
      result.log.add(ev);
      if (options.on_eval) options.on_eval(ev);
      if (d > result.best_val_dice) {
        result.best_val_dice = d;
        result.best_step = step;
        best = snapshot(net, step);
        best.extra = Json{{"val_dice", d}, {"train", cfg}};
      }
    }
  }
  if (val.empty()) {
    result.best_step = cfg.max_iterations;
    best = snapshot(net, cfg.max_iterations);
    best.extra = Json{{"train", cfg}};
  }
  if (write_files) {
    Checkpoint last = snapshot(net, cfg.max_iterations);
    last.extra = Json{{"train", cfg}};
    save_checkpoint(last, options.out_dir / "final.ckpt");
    result.best_checkpoint = options.out_dir / "best.ckpt";
    save_checkpoint(best, result.best_checkpoint);
    save_run_summary(result.log, options.out_dir / "summary.png", "FINETUNE");
  }
  restore(net, best);
  return result;
}

}  // namespace vfseg
