#include "vfseg/experiment.hpp"

#include <fstream>

#include "vfseg/error.hpp"
#include "vfseg/plot.hpp"
#include "vfseg/random.hpp"

namespace fs = std::filesystem;

namespace vfseg {

DownstreamRun run_downstream(const std::optional<Checkpoint>& init, const ModelConfig& arch, int num_classes,
                             const DownstreamData& data, const TrainConfig& cfg, const std::string& label,
                             const fs::path& out_dir) {
  SegmentationModelPtr model;
  const uint64_t init_seed = derive_seed(cfg.seed, 0);
  if (init) {
    model = load_for_transfer(*init, num_classes, init_seed).model;
  } else {
    ModelConfig m = arch;
    m.num_classes = num_classes;
    model = build_model(m, init_seed);
  }
  FinetuneOptions opts;
  opts.out_dir = out_dir;
  auto ft = finetune(model, data.train, data.val, cfg, opts);
  DownstreamRun run;
  run.label = label;
  run.seed = cfg.seed;
  run.best_val_dice = ft.best_val_dice;
  run.report = evaluate_corpus(*ft.model, data.test, {cfg.inference_window, cfg.inference_overlap, true});
  run.test_mean_dice = run.report.mean_dice_summary().mean;
  if (!out_dir.empty()) run.report.save(out_dir / "test_metrics.tsv");
  return run;
}

AblationResult run_k_ablation(const Corpus& corpus, const Corpus& heldout, const DownstreamData& data,
                              const AblationConfig& cfg, const fs::path& out_dir,
                              const std::function<void(const std::string&)>& progress) {
  if (cfg.ks.empty()) throw Error(ErrorCode::InvalidConfig, "ablation needs at least one K");
  fs::create_directories(out_dir);
  auto say = [&](const std::string& s) {
    if (progress) progress(s);
  };
  AblationResult result;
  for (const int K : cfg.ks) {
    const std::string tag = "K=" + std::to_string(K);
    TrainConfig pt = cfg.pretrain;
    pt.fusion.K = K;
    ModelConfig m = cfg.model;
    m.num_classes = K + 1;
    PretrainOptions popts;
    popts.out_dir = out_dir / ("pretrain_k" + std::to_string(K));
    if (!heldout.empty()) {
      popts.heldout = make_heldout_samples(heldout, pt.fusion, pt.heldout_samples, derive_seed(pt.seed, 99));
    }
    say(tag + ": pretraining");
    auto pre = pretrain(corpus, m, pt, popts);
    const double pretext = pre.log.evals().empty() ? 0.0 : pre.log.evals().back().mean_foreground;
    say(tag + ": fine-tuning");
    const auto run = run_downstream(load_checkpoint(pre.final_checkpoint), m, cfg.downstream_classes, data,
                                    cfg.finetune, tag, out_dir / ("finetune_k" + std::to_string(K)));
    result.rows.push_back({tag, K, pretext, run.test_mean_dice});
    say(tag + ": test mean Dice " + std::to_string(run.test_mean_dice));
  }
  if (cfg.include_scratch) {
    say("SCRATCH: fine-tuning");
    const auto run = run_downstream(std::nullopt, cfg.model, cfg.downstream_classes, data, cfg.finetune, "SCRATCH",
                                    out_dir / "finetune_scratch");
    result.rows.push_back({"SCRATCH", 0, 0.0, run.test_mean_dice});
  }

  result.table = out_dir / "k_ablation.tsv";
  {
    std::ofstream os(result.table);
    if (!os) throw Error(ErrorCode::IoFailure, "cannot write " + result.table.string());
    os << "label\tK\tpretext_dice\ttest_mean_dice\n";
    for (const auto& r : result.rows) {
      os << r.label << '\t' << r.K << '\t' << r.pretext_dice << '\t' << r.test_mean_dice << '\n';
    }
  }
  std::vector<std::string> labels;
  std::vector<double> values;
  for (const auto& r : result.rows) {
    labels.push_back(r.label);
    values.push_back(100.0 * r.test_mean_dice);
  }
  result.plot = out_dir / "k_ablation.png";
  save_bar_chart(result.plot, labels, values, {}, Axes{"DICE VS K", "PRETRAINING", "DICE (%)", false});
  return result;
}

}  // namespace vfseg
