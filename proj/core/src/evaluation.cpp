#include "vfseg/evaluation.hpp"

#include <algorithm>
#include <numeric>

#include "vfseg/error.hpp"

namespace vfseg {

namespace {

std::vector<size_t> order_by_id(const LabeledCorpus& test) {
  std::vector<size_t> order(test.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return test[a].id() < test[b].id(); });
  return order;
}

}  // namespace

MetricsReport evaluate_predictions(const std::vector<LabelVolume>& predictions, const LabeledCorpus& test) {
  if (predictions.size() != test.size()) {
    throw Error(ErrorCode::ShapeMismatch, "prediction count differs from test case count");
  }
  if (test.empty()) throw Error(ErrorCode::EmptyCorpus, "no test cases");
  MetricsReport report;
  report.num_classes = test.front().labels.num_classes;
  for (const size_t i : order_by_id(test)) {
    report.cases.push_back(evaluate_case(test[i].id(), predictions[i], test[i].labels));
  }
  return report;
}

MetricsReport evaluate_corpus(SegmentationModel& model, const LabeledCorpus& test, const SlidingWindowOptions& opts) {
  if (test.empty()) throw Error(ErrorCode::EmptyCorpus, "no test cases");
  std::vector<LabelVolume> preds;
  preds.reserve(test.size());
  for (const auto& c : test) preds.push_back(sliding_window_predict(model, c.image, opts));
  return evaluate_predictions(preds, test);
}

MetricsReport evaluate_corpus(const std::filesystem::path& checkpoint, const LabeledCorpus& test,
                              const SlidingWindowOptions& opts) {
  auto model = model_from_checkpoint(load_checkpoint(checkpoint));
  return evaluate_corpus(*model, test, opts);
}

}  // namespace vfseg
