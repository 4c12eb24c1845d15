#include "vfseg/pretrain.hpp"

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <future>

#include "vfseg/error.hpp"
#include "vfseg/random.hpp"
#include "vfseg/synthetic.hpp"

namespace fs = std::filesystem;

namespace vfseg {

namespace {

// Seed streams derived from TrainConfig::seed.
constexpr uint64_t kInitStream = 0;
constexpr uint64_t kBatchStream = 1;
constexpr uint64_t kDropoutStream = 2;

}  // namespace

Corpus load_corpus(const fs::path& manifest, const IntensityWindow& window) {
  Corpus corpus;
  for (const auto& entry : read_manifest(manifest)) {
    Volume v = load_volume(entry.path);
    if (!v.is_normalized()) v = normalize_intensity(v, window);
    if (v.id.empty()) v.id = entry.id;
    corpus.push_back(std::move(v));
  }
  return corpus;
}

PretextReport pretext_dice(const std::vector<std::vector<int32_t>>& predictions,
                           const std::vector<FusedSample>& samples, int num_classes) {
  if (predictions.size() != samples.size()) {
    throw Error(ErrorCode::ShapeMismatch, "prediction count differs from sample count");
  }
  std::vector<double> inter(num_classes, 0.0), pred_n(num_classes, 0.0), gt_n(num_classes, 0.0);
  for (size_t s = 0; s < samples.size(); ++s) {
    const auto& y = samples[s].Y.labels;
    const auto& p = predictions[s];
    if (p.size() != y.size()) throw Error(ErrorCode::ShapeMismatch, "prediction size differs from label size");
    for (size_t i = 0; i < y.size(); ++i) {
      if (y[i] < 0 || y[i] >= num_classes || p[i] < 0 || p[i] >= num_classes) {
        throw Error(ErrorCode::ClassMismatch, "label outside [0, " + std::to_string(num_classes) + ")");
      }
      gt_n[y[i]] += 1.0;
      pred_n[p[i]] += 1.0;
      if (p[i] == y[i]) inter[y[i]] += 1.0;
    }
  }
  PretextReport report;
  double fg = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    const double denom = pred_n[c] + gt_n[c];
    const double d = denom == 0.0 ? 1.0 : 2.0 * inter[c] / denom;
    report.dice.push_back(d);
    if (c > 0) fg += d;
  }
  report.mean_foreground = num_classes > 1 ? fg / (num_classes - 1) : 0.0;
  return report;
}

std::vector<int32_t> predict_labels(SegmentationModel& model, const Volume& x) {
  torch::NoGradGuard guard;
  const bool was_training = model.is_training();
  model.eval();
  const auto logits = model.forward_logits(to_image_batch({&x})).front();
  model.train(was_training);
  const auto arg = logits.argmax(1).to(torch::kInt32).contiguous();
  const auto* p = arg.data_ptr<int32_t>();
  return {p, p + arg.numel()};
}

PretextReport eval_pretext(SegmentationModel& model, const std::vector<FusedSample>& samples) {
  const int C = static_cast<int>(model.config().num_classes);
  std::vector<std::vector<int32_t>> preds;
  preds.reserve(samples.size());
  for (const auto& s : samples) {
    if (s.Y.num_classes != C) {
      throw Error(ErrorCode::ClassMismatch, "model predicts " + std::to_string(C) + " classes, samples carry " +
                                                std::to_string(s.Y.num_classes));
    }
    preds.push_back(predict_labels(model, s.X));
  }
  return pretext_dice(preds, samples, C);
}

PretextReport eval_pretext(const fs::path& checkpoint, const std::vector<FusedSample>& samples) {
  auto model = model_from_checkpoint(load_checkpoint(checkpoint));
  return eval_pretext(*model, samples);
}

std::vector<FusedSample> make_heldout_samples(const Corpus& corpus, const FusionParams& params, int n,
                                              uint64_t seed) {
  return make_pretrain_batch(corpus, params, n, seed);
}

fs::path checkpoint_path(const fs::path& out_dir, int64_t step) {
  char name[32];
  std::snprintf(name, sizeof name, "step_%07lld.ckpt", static_cast<long long>(step));
  return out_dir / name;
}

// ------------------------------------------------------------ prefetcher

struct BatchPrefetcher::State {
  Producer producer;
  int workers = 0;
  int64_t next_launch = 0;
  int64_t last = 0;
  std::deque<std::pair<int64_t, std::future<std::vector<FusedSample>>>> pending;

  void fill() {
    while (static_cast<int>(pending.size()) < workers && next_launch <= last) {
      const int64_t step = next_launch++;
      pending.emplace_back(step, std::async(std::launch::async, producer, step));
    }
  }
};

BatchPrefetcher::BatchPrefetcher(Producer producer, int workers, int64_t first_step, int64_t last_step)
    : state_(std::make_unique<State>()) {
  state_->producer = std::move(producer);
  state_->workers = std::max(0, workers);
  state_->next_launch = first_step;
  state_->last = last_step;
  state_->fill();
}

BatchPrefetcher::~BatchPrefetcher() {
  for (auto& [_, f] : state_->pending) {
    if (f.valid()) f.wait();
  }
}

std::vector<FusedSample> BatchPrefetcher::take(int64_t step) {
  if (state_->workers == 0) return state_->producer(step);
  if (state_->pending.empty() || state_->pending.front().first != step) {
    throw Error(ErrorCode::InvalidParams, "prefetcher steps must be taken in order");
  }
  auto fut = std::move(state_->pending.front().second);
  state_->pending.pop_front();
  state_->fill();
  return fut.get();
}

// ------------------------------------------------------------ training loop

PretrainResult pretrain(const Corpus& corpus, const ModelConfig& model_cfg, const TrainConfig& cfg,
                        const PretrainOptions& options) {
  if (corpus.size() < 2) {
    throw Error(ErrorCode::CorpusTooSmall, "pretraining needs at least 2 scans, got " + std::to_string(corpus.size()));
  }
  model_cfg.validate();
  cfg.validate();
  if (model_cfg.num_classes != cfg.fusion.num_classes()) {
    throw Error(ErrorCode::ClassMismatch, "model has " + std::to_string(model_cfg.num_classes) +
                                              " classes but fusion K=" + std::to_string(cfg.fusion.K) + " needs " +
                                              std::to_string(cfg.fusion.num_classes()));
  }
  configure_determinism(cfg.deterministic);

  const bool write_files = !options.out_dir.empty();
  if (write_files) fs::create_directories(options.out_dir);

  PretrainResult result;
  result.model = build_model(model_cfg, derive_seed(cfg.seed, kInitStream));
  auto& model = *result.model;
  torch::optim::Adam optimizer(model.parameters(),
                               torch::optim::AdamOptions(cfg.initial_lr).weight_decay(cfg.weight_decay));

  const fs::path log_path = write_files ? options.out_dir / "runlog.jsonl" : fs::path{};
  int64_t start = 0;
  if (options.resume) {
    const Checkpoint ckpt = load_checkpoint(*options.resume);
    if (Json(ckpt.model_config) != Json(model_cfg)) {
      throw Error(ErrorCode::ArchitectureMismatch, "resume checkpoint was trained with a different model config");
    }
    restore(model, ckpt);
    const auto it = ckpt.blobs.find("optimizer");
    if (it == ckpt.blobs.end()) throw Error(ErrorCode::MalformedHeader, "checkpoint has no optimizer state");
    deserialize_optimizer(optimizer, it->second);
    start = ckpt.step;
    if (write_files && fs::exists(log_path)) {
      result.log = RunLog::read(log_path);
      result.log.truncate(start);
      result.log.rewrite();
    }
  } else if (write_files) {
    fs::remove(log_path);
  }
  result.log.set_path(log_path);

  auto save = [&](const fs::path& path, int64_t step, const Json& extra) {
    Checkpoint ckpt = snapshot(model, step);
    ckpt.extra = extra;
    ckpt.extra["train"] = cfg;
    ckpt.extra["fusion"] = cfg.fusion;
    ckpt.blobs["optimizer"] = serialize_optimizer(optimizer);
    save_checkpoint(ckpt, path);
  };

  BatchPrefetcher prefetch(
      [&](int64_t step) {
        return make_pretrain_batch(corpus, cfg.fusion, cfg.batch_size, derive_seed(cfg.seed, kBatchStream, step));
      },
      cfg.workers, start + 1, cfg.max_iterations);

  const auto t0 = std::chrono::steady_clock::now();
  model.train();
  for (int64_t step = start + 1; step <= cfg.max_iterations; ++step) {
    const double lr = cfg.lr_at(step);
    set_learning_rate(optimizer, lr);

    const auto batch = prefetch.take(step);
    std::vector<const Volume*> xs;
    std::vector<const LabelVolume*> ys;
    for (const auto& s : batch) {
      xs.push_back(&s.X);
      ys.push_back(&s.Y);
    }
    const auto x = to_image_batch(xs);
    const auto y = to_label_batch(ys);

    torch::manual_seed(derive_seed(cfg.seed, kDropoutStream, step));
    optimizer.zero_grad();
    const auto pred = model.forward(x);
    const auto loss = deep_supervision_loss(pred.probs, y, cfg.loss);
    const double loss_value = loss.item<double>();
    if (!std::isfinite(loss_value)) {
      if (write_files) {
        save(options.out_dir / "diverged.ckpt", step - 1, Json{{"diverged_at", step}, {"loss", loss_value}});
      }
      throw Error(ErrorCode::DivergenceDetected, "non-finite loss at step " + std::to_string(step));
    }
    loss.backward();
    optimizer.step();

    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const IterationRecord rec{step, loss_value, lr, wall};
    result.log.add(rec);
    if (options.on_iteration) options.on_iteration(rec);

    if (!options.heldout.empty() && (step % cfg.eval_every == 0 || step == cfg.max_iterations)) {
      const auto report = eval_pretext(model, options.heldout);
      const EvalRecord ev{step, report.dice, report.mean_foreground};
      result.log.add(ev);
      if (options.on_eval) options.on_eval(ev);
    }
    if (write_files && step % cfg.checkpoint_every == 0) {
      save(checkpoint_path(options.out_dir, step), step, Json::object());
    }
  }

  if (write_files) {
    result.final_checkpoint = options.out_dir / "final.ckpt";
    save(result.final_checkpoint, cfg.max_iterations, Json::object());
    save_run_summary(result.log, options.out_dir / "summary.png", "PRETRAIN");
  }
  return result;
}

}  // namespace vfseg
