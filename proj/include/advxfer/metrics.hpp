#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "advxfer/dataset.hpp"
#include "advxfer/model.hpp"
#include "advxfer/trainer.hpp"

namespace advxfer {

struct MetricsReport {
  int num_classes = 0;
  int64_t total = 0;
  std::vector<int64_t> confusion;  // K*K, [true * K + predicted]
  double overall_accuracy = 0.0;
  std::vector<int64_t> per_class_counts;
  std::vector<double> per_class_accuracy;  // meaningful where count > 0
  std::vector<std::string> containers;     // sorted ids
  std::vector<int64_t> per_container_counts;
  std::vector<double> per_container_accuracy;

  int64_t confusion_at(int truth, int pred) const {
    return confusion[static_cast<size_t>(truth) * num_classes + pred];
  }

  // Fixed header "metric,key,value"; doubles printed with %.17g so reruns are
  // byte-identical.
  std::string to_csv() const {
    char buf[64];
    auto fmt = [&buf](double v) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      return std::string(buf);
    };
    std::string out = "metric,key,value\n";
    out += "overall,," + fmt(overall_accuracy) + "\n";
    out += "total,," + std::to_string(total) + "\n";
    for (int c = 0; c < num_classes; ++c) {
      out += "class_count," + std::to_string(c) + "," + std::to_string(per_class_counts[c]) + "\n";
      if (per_class_counts[c] > 0)
        out += "class_acc," + std::to_string(c) + "," + fmt(per_class_accuracy[c]) + "\n";
    }
    for (size_t i = 0; i < containers.size(); ++i) {
      out += "container_count," + containers[i] + "," + std::to_string(per_container_counts[i]) +
             "\n";
      out += "container_acc," + containers[i] + "," + fmt(per_container_accuracy[i]) + "\n";
    }
    for (int t = 0; t < num_classes; ++t)
      for (int p = 0; p < num_classes; ++p)
        out += "confusion," + std::to_string(t) + ":" + std::to_string(p) + "," +
               std::to_string(confusion_at(t, p)) + "\n";
    return out;
  }
};

// Deterministic eval-mode pass over the whole test set; argmax predictions
// with ties broken toward the lowest class index.
template <typename S>
MetricsReport evaluate(MicroResNet<S>& model, const Dataset& test, int batch_size = 64) {
  if (test.samples.empty()) throw DataError("evaluate: empty test set");
  if (test.num_classes != model.num_classes())
    throw ConfigError("evaluate: dataset has " + std::to_string(test.num_classes) +
                      " classes but model head has " + std::to_string(model.num_classes()));
  const int K = model.num_classes();
  const int N = static_cast<int>(test.samples.size());

  MetricsReport r;
  r.num_classes = K;
  r.total = N;
  r.confusion.assign(static_cast<size_t>(K) * K, 0);
  r.per_class_counts.assign(static_cast<size_t>(K), 0);
  r.per_class_accuracy.assign(static_cast<size_t>(K), 0.0);

  std::map<std::string, std::pair<int64_t, int64_t>> by_container;  // id -> (correct, count)
  std::vector<int64_t> class_correct(static_cast<size_t>(K), 0);
  int64_t correct = 0;

  for (int start = 0; start < N; start += batch_size) {
    int stop = std::min(N, start + batch_size);
    std::vector<int> indices(static_cast<size_t>(stop - start));
    for (int i = start; i < stop; ++i) indices[static_cast<size_t>(i - start)] = i;
    std::vector<int> labels;
    Tensor<S> x = detail::assemble_batch<S>(test, indices, &labels);
    std::vector<int> pred = argmax_rows(model.forward(x, /*train_mode=*/false));
    for (size_t i = 0; i < pred.size(); ++i) {
      int y = labels[i], p = pred[i];
      const ImageSample& s = test.samples[static_cast<size_t>(start) + i];
      r.confusion[static_cast<size_t>(y) * K + p] += 1;
      r.per_class_counts[static_cast<size_t>(y)] += 1;
      auto& [cc, cn] = by_container[s.meta.container_id];
      cn += 1;
      if (p == y) {
        ++correct;
        ++class_correct[static_cast<size_t>(y)];
        ++cc;
      }
    }
  }

  r.overall_accuracy = static_cast<double>(correct) / static_cast<double>(N);
  for (int c = 0; c < K; ++c)
    if (r.per_class_counts[c] > 0)
      r.per_class_accuracy[c] =
          static_cast<double>(class_correct[c]) / static_cast<double>(r.per_class_counts[c]);
  for (const auto& [id, cc] : by_container) {
    r.containers.push_back(id);
    r.per_container_counts.push_back(cc.second);
    r.per_container_accuracy.push_back(static_cast<double>(cc.first) /
                                       static_cast<double>(cc.second));
  }
  return r;
}

}  // namespace advxfer
