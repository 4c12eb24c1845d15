// vfseg: command-line front end for corpus synthesis, volume-fusion
// pretraining, fine-tuning, inference and evaluation.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

#include "vfseg/config.hpp"
#include "vfseg/error.hpp"
#include "vfseg/evaluation.hpp"
#include "vfseg/experiment.hpp"
#include "vfseg/finetune.hpp"
#include "vfseg/preview.hpp"
#include "vfseg/pretrain.hpp"
#include "vfseg/random.hpp"
#include "vfseg/synthetic.hpp"

namespace fs = std::filesystem;
using namespace vfseg;

namespace {

Shape3 parse_shape(const std::string& s) {
  Shape3 out;
  if (std::sscanf(s.c_str(), "%ld,%ld,%ld", &out.d, &out.h, &out.w) != 3) {
    throw Error(ErrorCode::InvalidConfig, "expected D,H,W but got '" + s + "'");
  }
  return out;
}

RunConfig run_config_or_default(const std::string& path) {
  return path.empty() ? RunConfig{} : load_run_config(path);
}

void print_progress(const IterationRecord& r, int64_t every) {
  if (r.step % every == 0) {
    std::printf("step %lld  loss %.5f  lr %.3g  %.1fs\n", static_cast<long long>(r.step), r.loss, r.lr,
                r.wall_seconds);
    std::fflush(stdout);
  }
}

void print_eval(const EvalRecord& r) {
  std::printf("step %lld  eval mean foreground dice %.4f\n", static_cast<long long>(r.step), r.mean_foreground);
  std::fflush(stdout);
}

struct SynthArgs {
  std::string spec, out, format = "nifti";
  int n = 10;
  std::optional<uint64_t> seed;
  bool no_labels = false;
};

int cmd_synth(const SynthArgs& a) {
  PhantomSpec spec = a.spec.empty() ? PhantomSpec{} : read_json_file(a.spec).get<PhantomSpec>();
  if (a.seed) spec.seed = *a.seed;
  const auto format = a.format == "raw" ? VolumeFormat::RawMeta : VolumeFormat::Nifti;
  const auto manifest = generate_corpus(spec, a.n, a.out, format, !a.no_labels);
  std::printf("wrote %zu phantoms to %s\n", manifest.size(), a.out.c_str());
  return 0;
}

struct PreviewArgs {
  std::string corpus, config, out = "fusion_preview.png";
  std::vector<int> ks{1, 2, 4};
  uint64_t seed = 0;
};

int cmd_preview(const PreviewArgs& a) {
  const Corpus corpus = load_corpus(a.corpus);
  if (corpus.size() < 2) throw Error(ErrorCode::CorpusTooSmall, "preview needs two volumes");
  const RunConfig rc = run_config_or_default(a.config);
  Rng rng(a.seed);
  const auto i = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(corpus.size()) - 1));
  auto j = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(corpus.size()) - 2));
  if (j >= i) ++j;
  render_fusion_preview(corpus[i], corpus[j], rc.train.fusion, a.ks, a.seed, a.out);
  std::printf("background %s, foreground %s -> %s\n", corpus[i].id.c_str(), corpus[j].id.c_str(), a.out.c_str());
  return 0;
}

struct PretrainArgs {
  std::string config, corpus, heldout, out = "runs/pretrain", resume;
  bool deterministic = false;
  int64_t print_every = 10;
};

int cmd_pretrain(const PretrainArgs& a) {
  RunConfig rc = run_config_or_default(a.config);
  if (a.deterministic) rc.train.deterministic = true;
  const Corpus corpus = load_corpus(a.corpus);
  PretrainOptions opts;
  opts.out_dir = a.out;
  if (!a.resume.empty()) opts.resume = a.resume;
  if (!a.heldout.empty()) {
    opts.heldout = make_heldout_samples(load_corpus(a.heldout), rc.train.fusion, rc.train.heldout_samples,
                                        derive_seed(rc.train.seed, 99));
  }
  opts.on_iteration = [&](const IterationRecord& r) { print_progress(r, a.print_every); };
  opts.on_eval = print_eval;
  fs::create_directories(a.out);
  write_json_file(to_json(rc), fs::path(a.out) / "config.json");
  const auto result = pretrain(corpus, rc.model, rc.train, opts);
  std::printf("final checkpoint %s\n", result.final_checkpoint.c_str());
  return 0;
}

struct FinetuneArgs {
  std::string config, init = "scratch", corpus, split, out = "runs/finetune";
  int64_t print_every = 10;
};

int cmd_finetune(const FinetuneArgs& a) {
  const RunConfig rc = run_config_or_default(a.config);
  const LabeledCorpus corpus = load_labeled_corpus(a.corpus);
  const Split split = read_split(a.split);
  const uint64_t init_seed = derive_seed(rc.train.seed, 0);
  SegmentationModelPtr model;
  if (a.init == "scratch") {
    model = build_model(rc.model, init_seed);
  } else {
    auto transfer = load_for_transfer(fs::path(a.init), rc.model.num_classes, init_seed, &rc.model);
    std::printf("transferred %zu tensors, re-initialized %zu head tensors\n", transfer.report.transferred.size(),
                transfer.report.reinitialized.size());
    model = transfer.model;
  }
  FinetuneOptions opts;
  opts.out_dir = a.out;
  opts.on_iteration = [&](const IterationRecord& r) { print_progress(r, a.print_every); };
  opts.on_eval = print_eval;
  fs::create_directories(a.out);
  write_json_file(to_json(rc), fs::path(a.out) / "config.json");
  const auto result =
      finetune(model, select_cases(corpus, split.train), select_cases(corpus, split.val), rc.train, opts);
  std::printf("best validation dice %.4f at step %lld -> %s\n", result.best_val_dice,
              static_cast<long long>(result.best_step), result.best_checkpoint.c_str());
  if (!split.test.empty()) {
    const auto report = evaluate_corpus(*result.model, select_cases(corpus, split.test),
                                        {rc.train.inference_window, rc.train.inference_overlap, true});
    report.save(fs::path(a.out) / "test_metrics.tsv");
    std::cout << report.to_text_table();
  }
  return 0;
}

struct PredictArgs {
  std::string checkpoint, in, out, window = "16,32,32";
  double overlap = 0.25;
  bool no_pad = false;
};

int cmd_predict(const PredictArgs& a) {
  auto model = model_from_checkpoint(load_checkpoint(a.checkpoint));
  Volume v = load_volume(a.in);
  if (!v.is_normalized()) v = normalize_intensity(v);
  const auto labels = sliding_window_predict(*model, v, {parse_shape(a.window), a.overlap, !a.no_pad});
  save_labels(labels, a.out);
  std::printf("wrote %s\n", a.out.c_str());
  return 0;
}

struct EvaluateArgs {
  std::string checkpoint, corpus, split, out = "metrics.tsv", window = "16,32,32";
  double overlap = 0.25;
};

int cmd_evaluate(const EvaluateArgs& a) {
  LabeledCorpus corpus = load_labeled_corpus(a.corpus);
  if (!a.split.empty()) corpus = select_cases(corpus, read_split(a.split).test);
  const auto report = evaluate_corpus(fs::path(a.checkpoint), corpus, {parse_shape(a.window), a.overlap, true});
  report.save(a.out);
  std::cout << report.to_text_table();
  return 0;
}

struct AblationArgs {
  std::string pretrain_config, finetune_config, corpus, heldout, downstream, split, out = "runs/k_ablation";
  std::vector<int> ks{1, 2, 4, 8, 16};
};

int cmd_ablation(const AblationArgs& a) {
  const RunConfig pre = run_config_or_default(a.pretrain_config);
  const RunConfig ft = run_config_or_default(a.finetune_config);
  AblationConfig cfg;
  cfg.ks = a.ks;
  cfg.model = pre.model;
  cfg.pretrain = pre.train;
  cfg.finetune = ft.train;
  cfg.downstream_classes = static_cast<int>(ft.model.num_classes);
  const LabeledCorpus labeled = load_labeled_corpus(a.downstream);
  const Split split = read_split(a.split);
  const DownstreamData data{select_cases(labeled, split.train), select_cases(labeled, split.val),
                            select_cases(labeled, split.test)};
  const Corpus heldout = a.heldout.empty() ? Corpus{} : load_corpus(a.heldout);
  const auto result = run_k_ablation(load_corpus(a.corpus), heldout, data, cfg, a.out,
                                     [](const std::string& s) { std::printf("%s\n", s.c_str()); });
  std::printf("table %s\nplot %s\n", result.table.c_str(), result.plot.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Volume-fusion pretraining and PCT-Net segmentation"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth-data", "Generate a synthetic phantom corpus");
  s->add_option("--spec", synth.spec, "PhantomSpec JSON");
  s->add_option("--n", synth.n, "Number of phantoms")->check(CLI::PositiveNumber);
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--seed", synth.seed, "Top-level seed (overrides the spec)");
  s->add_option("--format", synth.format, "nifti or raw")->check(CLI::IsMember({"nifti", "raw"}));
  s->add_flag("--no-labels", synth.no_labels, "Skip label maps");

  PreviewArgs preview;
  auto* fp = app.add_subcommand("fuse-preview", "Render fused samples for several K");
  fp->add_option("--corpus", preview.corpus, "Manifest")->required();
  fp->add_option("--config", preview.config, "Run config (fusion section used)");
  fp->add_option("--ks", preview.ks, "Foreground class counts");
  fp->add_option("--seed", preview.seed);
  fp->add_option("--out", preview.out, "PNG path");

  PretrainArgs pre;
  auto* p = app.add_subcommand("pretrain", "Volume-fusion self-supervised pretraining");
  p->add_option("--config", pre.config, "Run config JSON");
  p->add_option("--corpus", pre.corpus, "Manifest of unlabeled volumes")->required();
  p->add_option("--heldout", pre.heldout, "Manifest for pretext evaluation");
  p->add_option("--out", pre.out, "Output directory");
  p->add_option("--resume", pre.resume, "Checkpoint to resume from");
  p->add_flag("--deterministic", pre.deterministic, "Bit-reproducible execution");
  p->add_option("--print-every", pre.print_every);

  FinetuneArgs ft;
  auto* f = app.add_subcommand("finetune", "Supervised fine-tuning on a labeled corpus");
  f->add_option("--config", ft.config, "Run config JSON");
  f->add_option("--init", ft.init, "'scratch' or a pretrained checkpoint");
  f->add_option("--corpus", ft.corpus, "Manifest with label paths")->required();
  f->add_option("--split", ft.split, "Split JSON")->required();
  f->add_option("--out", ft.out, "Output directory");
  f->add_option("--print-every", ft.print_every);

  PredictArgs pr;
  auto* pd = app.add_subcommand("predict", "Sliding-window segmentation of one volume");
  pd->add_option("--checkpoint", pr.checkpoint)->required();
  pd->add_option("--in", pr.in)->required();
  pd->add_option("--out", pr.out)->required();
  pd->add_option("--window", pr.window, "D,H,W");
  pd->add_option("--overlap", pr.overlap)->check(CLI::Range(0.0, 0.9));
  pd->add_flag("--no-pad", pr.no_pad, "Fail instead of padding volumes smaller than the window");

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Dice and ASSD on a labeled corpus");
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--corpus", ev.corpus, "Manifest with label paths")->required();
  e->add_option("--split", ev.split, "Split JSON (test ids used)");
  e->add_option("--out", ev.out, "TSV report path");
  e->add_option("--window", ev.window, "D,H,W");
  e->add_option("--overlap", ev.overlap)->check(CLI::Range(0.0, 0.9));

  AblationArgs ab;
  auto* k = app.add_subcommand("k-ablation", "Pretrain/fine-tune/evaluate for several K");
  k->add_option("--pretrain-config", ab.pretrain_config);
  k->add_option("--finetune-config", ab.finetune_config);
  k->add_option("--corpus", ab.corpus, "Unlabeled pretraining manifest")->required();
  k->add_option("--heldout", ab.heldout, "Manifest for pretext evaluation");
  k->add_option("--downstream", ab.downstream, "Labeled manifest")->required();
  k->add_option("--split", ab.split, "Split JSON")->required();
  k->add_option("--ks", ab.ks);
  k->add_option("--out", ab.out);

  CLI11_PARSE(app, argc, argv);
  try {
    if (s->parsed()) return cmd_synth(synth);
    if (fp->parsed()) return cmd_preview(preview);
    if (p->parsed()) return cmd_pretrain(pre);
    if (f->parsed()) return cmd_finetune(ft);
    if (pd->parsed()) return cmd_predict(pr);
    if (e->parsed()) return cmd_evaluate(ev);
    if (k->parsed()) return cmd_ablation(ab);
  } catch (const Error& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 2;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 1;
  }
  return 0;
}
