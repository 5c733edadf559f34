#pragma once

#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "advxfer/attack.hpp"
#include "advxfer/dataset.hpp"
#include "advxfer/model.hpp"
#include "advxfer/sampler.hpp"

namespace advxfer {

struct TrainConfig {
  int epochs = 30;
  double lr0 = 0.1;  // 0.1 when training directly on a dataset, 0.005 when fine-tuning
  int batch_size = 32;
  uint64_t seed = 0;
  ScalarMode precision = ScalarMode::Single;

  void validate() const {
    if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
    if (lr0 <= 0) throw ConfigError("train config: lr0 must be > 0");
    if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  }
};

// Linear decay: full lr0 at epoch 0, lr0/E in the final epoch.
inline double lr_at(double lr0, int epoch, int total_epochs) {
  if (epoch < 0 || epoch >= total_epochs)
    throw ConfigError("lr_at: epoch " + std::to_string(epoch) + " outside [0," +
                      std::to_string(total_epochs) + ")");
  return lr0 * (1.0 - static_cast<double>(epoch) / static_cast<double>(total_epochs));
}

struct PhaseRecord {
  std::string phase;   // Train | AdvTrain | Finetune | AdvFinetune
  std::string domain;  // source | target
  bool adversarial = false;
  double epsilon = 0.0;
  int frozen_prefix = 0;
  int epochs = 0;
  double final_loss = 0.0;
  double final_acc = 0.0;
};

// Ordered record of the phases a strategy executed, one line per phase.
struct RunTrace {
  std::vector<PhaseRecord> phases;

  static constexpr const char* kHeader =
      "phase\tdomain\tadversarial\tepsilon\tL\tepochs\tfinal_loss\tfinal_acc";

  std::string serialize() const {
    std::string out = std::string(kHeader) + "\n";
    char buf[256];
    for (const auto& p : phases) {
      std::snprintf(buf, sizeof(buf), "%s\t%s\t%d\t%.6g\t%d\t%d\t%.6f\t%.6f", p.phase.c_str(),
                    p.domain.c_str(), p.adversarial ? 1 : 0, p.epsilon, p.frozen_prefix, p.epochs,
                    p.final_loss, p.final_acc);
      out += buf;
      out += '\n';
    }
    return out;
  }
};

// One tensor per entry; frozen tensors (requires_grad off) are skipped even
// if a gradient buffer is present.
template <typename S>
void sgd_step(std::vector<std::pair<std::string, Tensor<S>*>>& params, double lr) {
  for (auto& [name, t] : params) {
    if (!t->requires_grad() || !t->has_grad()) continue;
    auto& v = t->values();
    const auto& g = t->grad();
    for (size_t i = 0; i < v.size(); ++i) {
      if (!std::isfinite(static_cast<double>(g[i])))
        throw DivergenceError("non-finite gradient in tensor '" + name + "'");
      v[i] -= static_cast<S>(lr) * g[i];
    }
  }
}

template <typename S>
void sgd_step(MicroResNet<S>& model, double lr) {
  auto params = model.parameters();
  sgd_step(params, lr);
}

namespace detail {

template <typename S>
Tensor<S> assemble_batch(const Dataset& ds, const std::vector<int>& indices,
                         std::vector<int>* labels) {
  const int B = static_cast<int>(indices.size());
  Tensor<S> x = Tensor<S>::zeros({B, kImageC, kImageH, kImageW});
  labels->resize(static_cast<size_t>(B));
  for (int b = 0; b < B; ++b) {
    const ImageSample& s = ds.samples[static_cast<size_t>(indices[static_cast<size_t>(b)])];
    for (int i = 0; i < kImagePixels; ++i)
      x.values()[static_cast<size_t>(b) * kImagePixels + i] = static_cast<S>(s.pixels[i]);
    (*labels)[static_cast<size_t>(b)] = s.label;
  }
  return x;
}

}  // namespace detail

// Balanced-sampled minibatch SGD with linear lr decay and no early stopping.
// When a budget is given, every batch is replaced by its PGD perturbation
// before the train-mode loss. Returns the final-epoch mean loss/accuracy.
template <typename S>
PhaseRecord train(MicroResNet<S>& model, const Dataset& ds, const TrainConfig& cfg,
                  const std::optional<PerturbationBudget>& adversarial = std::nullopt,
                  const std::string& phase_name = "Train", const std::string& domain = "target") {
  cfg.validate();
  if (adversarial) adversarial->validate();
  if (ds.num_classes != model.num_classes())
    throw ConfigError("train: dataset has " + std::to_string(ds.num_classes) +
                      " classes but model head has " + std::to_string(model.num_classes()));

  BalancedSampler sampler(ds.labels(), mix_seed(cfg.seed, stream_tag("sampler")));
  const int N = static_cast<int>(ds.samples.size());
  const int steps = (N + cfg.batch_size - 1) / cfg.batch_size;

  PhaseRecord rec;
  rec.phase = phase_name;
  rec.domain = domain;
  rec.adversarial = adversarial.has_value();
  rec.epsilon = adversarial ? adversarial->epsilon : 0.0;
  rec.frozen_prefix = model.frozen_prefix();
  rec.epochs = cfg.epochs;

  double last_loss_sum = 0.0;
  int64_t last_correct = 0, last_total = 0;
  for (int e = 0; e < cfg.epochs; ++e) {
    double lr = lr_at(cfg.lr0, e, cfg.epochs);
    bool final_epoch = e == cfg.epochs - 1;
    for (int s = 0; s < steps; ++s) {
      std::vector<int> labels;
      Tensor<S> x = detail::assemble_batch<S>(ds, sampler.draw_batch(cfg.batch_size), &labels);
      if (adversarial)
        x = pgd_perturb(model, x, labels, *adversarial,
                        mix_seed(cfg.seed, stream_tag("attack"), static_cast<uint64_t>(e),
                                 static_cast<uint64_t>(s)));
      model.zero_grads();
      Tensor<S> logits = model.forward(x, /*train_mode=*/true);
      Tensor<S> loss = softmax_cross_entropy(logits, labels);
      double lv = static_cast<double>(loss.item());
      if (!std::isfinite(lv)) {
        RunTrace t;
        rec.final_loss = lv;
        t.phases.push_back(rec);
        throw DivergenceError("training diverged (non-finite loss) at epoch " +
                                  std::to_string(e) + " step " + std::to_string(s),
                              t.serialize());
      }
      if (final_epoch) {
        last_loss_sum += lv;
        auto pred = argmax_rows(logits);
        for (size_t i = 0; i < pred.size(); ++i)
          if (pred[i] == labels[i]) ++last_correct;
        last_total += static_cast<int64_t>(pred.size());
      }
      loss.backward();
      sgd_step(model, lr);
    }
  }
  rec.final_loss = last_loss_sum / steps;
  rec.final_acc = static_cast<double>(last_correct) / static_cast<double>(last_total);
  return rec;
}

}  // namespace advxfer
