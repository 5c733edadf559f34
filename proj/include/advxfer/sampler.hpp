#pragma once

#include <vector>

#include "advxfer/errors.hpp"
#include "advxfer/rng.hpp"

namespace advxfer {

// With-replacement sampler whose per-sample probability is inversely
// proportional to its class count: p_i = (1/K) / count(class(i)). Drawing
// picks a class uniformly and then a member uniformly, so each class carries
// total probability exactly 1/K by construction.
class BalancedSampler {
 public:
  BalancedSampler(const std::vector<int>& labels, uint64_t seed) : rng_(seed) {
    if (labels.empty()) throw ConfigError("balanced sampler: empty label set");
    int K = 0;
    for (int y : labels) {
      if (y < 0) throw DataError("balanced sampler: negative label " + std::to_string(y));
      K = std::max(K, y + 1);
    }
    by_class_.resize(static_cast<size_t>(K));
    for (size_t i = 0; i < labels.size(); ++i)
      by_class_[static_cast<size_t>(labels[i])].push_back(static_cast<int>(i));
    for (int c = 0; c < K; ++c)
      if (by_class_[static_cast<size_t>(c)].empty())
        throw ConfigError("balanced sampler: class " + std::to_string(c) +
                          " has no training samples");
    probs_.resize(labels.size());
    double class_mass = 1.0 / K;
    for (int c = 0; c < K; ++c) {
      double p = class_mass / static_cast<double>(by_class_[static_cast<size_t>(c)].size());
      for (int i : by_class_[static_cast<size_t>(c)]) probs_[static_cast<size_t>(i)] = p;
    }
  }

  int num_classes() const { return static_cast<int>(by_class_.size()); }

  // Per-sample probabilities p_i; sums to 1, and to 1/K within each class.
  const std::vector<double>& probabilities() const { return probs_; }

  int draw() {
    int c = static_cast<int>(rng_.uniform_int(0, num_classes() - 1));
    const auto& members = by_class_[static_cast<size_t>(c)];
    return members[static_cast<size_t>(rng_.uniform_int(0, static_cast<int64_t>(members.size()) - 1))];
  }

  std::vector<int> draw_batch(int n) {
    std::vector<int> out(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) out[static_cast<size_t>(i)] = draw();
    return out;
  }

 private:
  std::vector<std::vector<int>> by_class_;
  std::vector<double> probs_;
  Rng rng_;
};

}  // namespace advxfer
