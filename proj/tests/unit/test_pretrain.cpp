#include "doctest_torch.hpp"

#include <cmath>

#include "test_support.hpp"
#include "vfseg/error.hpp"
#include "vfseg/pretrain.hpp"
#include "vfseg/synthetic.hpp"

using namespace vfseg;

namespace {

template <class Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::IoFailure;
}

Corpus small_corpus(int n, uint64_t seed) {
  PhantomSpec spec;
  spec.shape = {16, 32, 32};
  Rng rng(seed);
  Corpus corpus;
  for (int i = 0; i < n; ++i) {
    auto p = generate_phantom(spec, rng);
    p.volume.id = "p" + std::to_string(i);
    corpus.push_back(std::move(p.volume));
  }
  return corpus;
}

TrainConfig small_config(int64_t iterations) {
  TrainConfig cfg;
  cfg.batch_size = 1;
  cfg.max_iterations = iterations;
  cfg.lr_halve_every = 4;
  cfg.checkpoint_every = 3;
  cfg.eval_every = 5;
  cfg.seed = 7;
  cfg.fusion = FusionParams::scaled_to({16, 32, 32});
  return cfg;
}

const ModelConfig kModel = ModelConfig::reduced();

}  // namespace

TEST_CASE("learning rate halves on schedule") {
  TrainConfig cfg;
  cfg.initial_lr = 1e-3;
  cfg.lr_halve_every = 4;
  const double expected[] = {1e-3, 1e-3, 1e-3, 1e-3, 5e-4, 5e-4, 5e-4, 5e-4, 2.5e-4, 2.5e-4};
  for (int64_t s = 1; s <= 10; ++s) CHECK(cfg.lr_at(s) == expected[s - 1]);
  CHECK(TrainConfig::full_scale_pretrain().lr_at(20001) == 5e-4);
}

TEST_CASE("train config validation and json") {
  auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    return code_of([&] { c.validate(); });
  };
  CHECK(bad([](TrainConfig& c) { c.batch_size = 0; }) == ErrorCode::InvalidConfig);
  CHECK(bad([](TrainConfig& c) { c.initial_lr = 0.0; }) == ErrorCode::InvalidConfig);
  CHECK(bad([](TrainConfig& c) { c.lr_halve_every = 0; }) == ErrorCode::InvalidConfig);
  CHECK(bad([](TrainConfig& c) { c.max_iterations = 0; }) == ErrorCode::InvalidConfig);

  auto cfg = small_config(10);
  cfg.loss.dice_form = DiceForm::LiteralPerVoxel;
  const Json j = cfg;
  const TrainConfig back = j.get<TrainConfig>();
  CHECK(Json(back) == j);

  Json extra = j;
  extra["learning_rate"] = 1.0;
  CHECK(code_of([&] { (void)extra.get<TrainConfig>(); }) == ErrorCode::InvalidConfig);

  const RunConfig rc{kModel, cfg};
  const auto rc_back = run_config_from_json(to_json(rc));
  CHECK(to_json(rc_back) == to_json(rc));
}

TEST_CASE("run log keeps strictly increasing steps and round-trips") {
  testing::TempDir dir("runlog");
  RunLog log(dir / "log.jsonl");
  log.add(IterationRecord{1, 0.9, 1e-3, 0.1});
  log.add(IterationRecord{2, 0.8, 1e-3, 0.2});
  log.add(EvalRecord{2, {0.9, 0.1, 0.2, 0.3, 0.4}, 0.25});
  log.add(IterationRecord{3, 0.7, 5e-4, 0.3});
  CHECK((code_of([&] { log.add(IterationRecord{3, 0.6, 5e-4, 0.4}); }) == ErrorCode::InvalidConfig));

  const auto back = RunLog::read(dir / "log.jsonl");
  CHECK((back.loss_trace() == std::vector<double>{0.9, 0.8, 0.7}));
  REQUIRE(back.evals().size() == 1);
  CHECK(back.evals()[0].dice == log.evals()[0].dice);

  auto cut = back;
  cut.truncate(1);
  CHECK(cut.loss_trace() == std::vector<double>{0.9});
  CHECK(cut.evals().empty());
}

TEST_CASE("pretext dice is one for perfect predictions") {
  const auto corpus = small_corpus(2, 1);
  const auto samples = make_heldout_samples(corpus, FusionParams::scaled_to({16, 32, 32}), 3, 2);
  std::vector<std::vector<int32_t>> preds;
  for (const auto& s : samples) preds.push_back(s.Y.labels);
  const auto r = pretext_dice(preds, samples, 5);
  for (double d : r.dice) CHECK(d == 1.0);
  CHECK(r.mean_foreground == 1.0);

  auto wrong = preds;
  for (auto& p : wrong)
    for (auto& v : p) v = (v + 1) % 5;
  CHECK(pretext_dice(wrong, samples, 5).mean_foreground == 0.0);

  auto model = build_model(kModel, 0);
  const auto baseline = eval_pretext(*model, samples);
  MESSAGE("untrained pretext mean foreground dice " << baseline.mean_foreground);
  auto k2 = FusionParams::scaled_to({16, 32, 32}, 2);
  CHECK((code_of([&] { eval_pretext(*model, make_heldout_samples(corpus, k2, 1, 3)); }) == ErrorCode::ClassMismatch));
}

TEST_CASE("pretrain logs the schedule and writes its artifacts") {
  testing::TempDir dir("pretrain");
  const auto corpus = small_corpus(3, 2);
  auto cfg = small_config(10);
  PretrainOptions opts;
  opts.out_dir = dir.path();
  opts.heldout = make_heldout_samples(corpus, cfg.fusion, 2, 99);
  int callbacks = 0;
  opts.on_iteration = [&](const IterationRecord&) { ++callbacks; };
  const auto result = pretrain(corpus, kModel, cfg, opts);

  REQUIRE(result.log.iterations().size() == 10);
  CHECK(callbacks == 10);
  const double expected[] = {1e-3, 1e-3, 1e-3, 1e-3, 5e-4, 5e-4, 5e-4, 5e-4, 2.5e-4, 2.5e-4};
  for (size_t i = 0; i < 10; ++i) {
    CHECK(result.log.iterations()[i].step == static_cast<int64_t>(i + 1));
    CHECK(result.log.iterations()[i].lr == expected[i]);
    CHECK(std::isfinite(result.log.iterations()[i].loss));
  }
  REQUIRE(result.log.evals().size() == 2);
  CHECK(result.log.evals()[0].step == 5);
  CHECK(result.log.evals()[1].step == 10);

  for (int64_t s : {3, 6, 9}) CHECK(std::filesystem::exists(checkpoint_path(dir.path(), s)));
  CHECK(std::filesystem::exists(dir / "final.ckpt"));
  CHECK(std::filesystem::exists(dir / "summary.png"));
  CHECK(load_checkpoint(dir / "final.ckpt").step == 10);
  CHECK(RunLog::read(dir / "runlog.jsonl").loss_trace() == result.log.loss_trace());

  const auto from_file = eval_pretext(dir / "final.ckpt", opts.heldout);
  CHECK(from_file.mean_foreground == result.log.evals().back().mean_foreground);
}

TEST_CASE("same seed gives the same loss trace and resume continues it exactly") {
  testing::TempDir dir("pretrain");
  const auto corpus = small_corpus(3, 3);
  auto cfg = small_config(6);
  const auto a = pretrain(corpus, kModel, cfg).log.loss_trace();
  cfg.workers = 2;
  PretrainOptions opts;
  opts.out_dir = dir.path();
  const auto b = pretrain(corpus, kModel, cfg, opts).log.loss_trace();
  CHECK(a == b);

  opts.resume = checkpoint_path(dir.path(), 3);
  const auto resumed = pretrain(corpus, kModel, cfg, opts);
  CHECK(resumed.log.loss_trace() == a);
  CHECK(RunLog::read(dir / "runlog.jsonl").loss_trace() == a);

  auto other = kModel;
  other.level_channels = {8, 16, 32, 64, 256};
  CHECK((code_of([&] { pretrain(corpus, other, cfg, opts); }) == ErrorCode::ArchitectureMismatch));
}

TEST_CASE("prefetching does not change the batches") {
  const auto corpus = small_corpus(3, 4);
  const auto params = FusionParams::scaled_to({16, 32, 32});
  auto producer = [&](int64_t step) { return make_pretrain_batch(corpus, params, 2, derive_seed(5, 1, step)); };
  BatchPrefetcher inline_p(producer, 0, 1, 4);
  BatchPrefetcher async_p(producer, 3, 1, 4);
  for (int64_t s = 1; s <= 4; ++s) {
    const auto x = inline_p.take(s), y = async_p.take(s);
    REQUIRE(x.size() == y.size());
    for (size_t i = 0; i < x.size(); ++i) {
      CHECK(x[i].X.voxels == y[i].X.voxels);
      CHECK(x[i].Y.labels == y[i].Y.labels);
    }
  }
  BatchPrefetcher skip(producer, 2, 1, 4);
  CHECK(code_of([&] { skip.take(2); }) == ErrorCode::InvalidParams);
}

TEST_CASE("pretrain rejects bad inputs") {
  const auto corpus = small_corpus(2, 5);
  auto cfg = small_config(2);
  CHECK(code_of([&] { pretrain(Corpus{corpus[0]}, kModel, cfg); }) == ErrorCode::CorpusTooSmall);
  auto three = ModelConfig::reduced(Architecture::PctNet, 3);
  CHECK((code_of([&] { pretrain(corpus, three, cfg); }) == ErrorCode::ClassMismatch));
}

TEST_CASE("non-finite loss aborts with a diagnostic checkpoint") {
  testing::TempDir dir("pretrain");
  auto corpus = small_corpus(2, 6);
  for (auto& v : corpus) std::fill(v.voxels.begin(), v.voxels.end(), NAN);
  PretrainOptions opts;
  opts.out_dir = dir.path();
  CHECK((code_of([&] { pretrain(corpus, kModel, small_config(3), opts); }) == ErrorCode::DivergenceDetected));
  const auto ck = load_checkpoint(dir / "diverged.ckpt");
  CHECK(ck.step == 0);
  CHECK(ck.extra["diverged_at"] == 1);
}

TEST_CASE("a single fused sample can be memorized") {
  configure_determinism(true);
  const auto corpus = small_corpus(2, 7);
  const auto sample = make_pretrain_sample(corpus, FusionParams::scaled_to({16, 32, 32}), 8);
  auto model = build_model(kModel, 9);
  torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(1e-3).weight_decay(1e-5));
  const auto x = to_image_batch({&sample.X});
  const auto y = to_label_batch({&sample.Y});
  model->train();
  double loss_value = 0.0;
  for (int step = 1; step <= 500; ++step) {
    opt.zero_grad();
    auto loss = deep_supervision_loss(model->forward(x).probs, y, LossConfig{});
    loss.backward();
    opt.step();
    loss_value = loss.item<double>();
  }
  MESSAGE("loss after 500 steps on one sample: " << loss_value);
  CHECK(loss_value < 0.1);
}
