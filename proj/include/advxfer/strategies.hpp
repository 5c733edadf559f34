#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "advxfer/checkpoint.hpp"
#include "advxfer/trainer.hpp"

namespace advxfer {

// The six training strategies: standalone standard/adversarial training on
// the target domain, and the four source->target transfer combinations.
enum class StrategyKind { ST, AT, ST_FT, ST_AFT, AT_FT, AT_AFT };

inline const char* to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::ST: return "st";
    case StrategyKind::AT: return "at";
    case StrategyKind::ST_FT: return "st-ft";
    case StrategyKind::ST_AFT: return "st-aft";
    case StrategyKind::AT_FT: return "at-ft";
    case StrategyKind::AT_AFT: return "at-aft";
  }
  return "?";
}

inline StrategyKind strategy_from_string(const std::string& s) {
  if (s == "st") return StrategyKind::ST;
  if (s == "at") return StrategyKind::AT;
  if (s == "st-ft") return StrategyKind::ST_FT;
  if (s == "st-aft") return StrategyKind::ST_AFT;
  if (s == "at-ft") return StrategyKind::AT_FT;
  if (s == "at-aft") return StrategyKind::AT_AFT;
  throw ConfigError("unknown strategy '" + s +
                    "' (expected st, at, st-ft, st-aft, at-ft or at-aft)");
}

inline bool strategy_is_transfer(StrategyKind k) {
  return k == StrategyKind::ST_FT || k == StrategyKind::ST_AFT || k == StrategyKind::AT_FT ||
         k == StrategyKind::AT_AFT;
}

inline bool strategy_adversarial_source(StrategyKind k) {
  return k == StrategyKind::AT_FT || k == StrategyKind::AT_AFT;
}

inline bool strategy_adversarial_target(StrategyKind k) {
  return k == StrategyKind::AT || k == StrategyKind::ST_AFT || k == StrategyKind::AT_AFT;
}

struct StrategySpec {
  StrategyKind kind = StrategyKind::ST;
  std::optional<PerturbationBudget> source_budget;  // eps^s
  std::optional<PerturbationBudget> target_budget;  // eps^t
  int frozen_prefix = 1;                            // L, used by transfer kinds only

  void validate() const {
    if (strategy_adversarial_source(kind) && !source_budget)
      throw ConfigError(std::string("strategy ") + to_string(kind) +
                        " needs a source perturbation budget (eps-s)");
    if (strategy_adversarial_target(kind) && !target_budget)
      throw ConfigError(std::string("strategy ") + to_string(kind) +
                        " needs a target perturbation budget (eps-t)");
    if (source_budget) source_budget->validate();
    if (target_budget) target_budget->validate();
    if (strategy_is_transfer(kind) && (frozen_prefix < 0 || frozen_prefix > 4))
      throw ConfigError("frozen prefix L must be in [0,4], got " +
                        std::to_string(frozen_prefix));
  }
};

struct StrategyConfig {
  int epochs = 30;          // target phase
  int source_epochs = 30;   // source pre-training phase
  int batch_size = 32;
  double lr_direct = 0.1;
  double lr_finetune = 0.005;
  uint64_t seed = 0;         // model init and target-phase streams
  uint64_t source_seed = 0;  // source-phase streams; fixed across sweep seeds
  ScalarMode precision = ScalarMode::Single;
  std::array<int, 4> widths = {16, 32, 64, 128};
  int source_classes = 10;
};

namespace detail {

inline std::string format_eps(double eps) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", eps);
  return buf;
}

template <typename S>
PhaseRecord run_source_phase(MicroResNet<S>& model, const Dataset& source, bool adversarial,
                             const std::optional<PerturbationBudget>& budget,
                             const StrategyConfig& cfg) {
  TrainConfig tc;
  tc.epochs = cfg.source_epochs;
  tc.lr0 = cfg.lr_direct;
  tc.batch_size = cfg.batch_size;
  tc.seed = mix_seed(cfg.source_seed, stream_tag("source-phase"));
  tc.precision = cfg.precision;
  return train(model, source, tc, adversarial ? budget : std::nullopt,
               adversarial ? "AdvTrain" : "Train", "source");
}

}  // namespace detail

// Disk cache of source-phase models keyed by (kind, eps^s, source seed).
// Entries carry their full training provenance; a key hit whose provenance
// disagrees with the request is refused rather than overwritten.
template <typename S>
class PretrainCache {
 public:
  explicit PretrainCache(std::string dir) : dir_(std::move(dir)) {}

  const std::string& dir() const { return dir_; }

  struct Entry {
    MicroResNet<S> model;
    PhaseRecord phase;
    bool cache_hit = false;
    std::string path;
  };

  std::string key_path(StrategyKind kind, double eps, uint64_t seed) const {
    bool adv = kind == StrategyKind::AT;
    return (std::filesystem::path(dir_) /
            ("src_" + std::string(adv ? "at" : "st") + "_eps" + detail::format_eps(eps) +
             "_seed" + std::to_string(seed) + ".ckpt"))
        .string();
  }

  Entry get_or_train(StrategyKind kind, const std::optional<PerturbationBudget>& budget,
                     const Dataset& source, const StrategyConfig& cfg) {
    if (kind != StrategyKind::ST && kind != StrategyKind::AT)
      throw ConfigError("pretrain cache: source phase kind must be st or at");
    bool adversarial = kind == StrategyKind::AT;
    if (adversarial && !budget)
      throw ConfigError("pretrain cache: adversarial source phase needs a budget");
    double eps = adversarial ? budget->epsilon : 0.0;

    Provenance want;
    want.set("cache.kind", std::string(to_string(kind)));
    want.set("cache.eps", detail::format_eps(eps));
    want.set("cache.seed", cfg.source_seed);
    want.set("cache.epochs", static_cast<int64_t>(cfg.source_epochs));
    want.set("cache.lr0", detail::format_eps(cfg.lr_direct));
    want.set("cache.batch_size", static_cast<int64_t>(cfg.batch_size));
    want.set("cache.dataset_hash", std::to_string(dataset_fingerprint(source)));
    if (adversarial) {
      want.set("cache.attack_norm", std::string(to_string(budget->p)));
      want.set("cache.attack_iters", static_cast<int64_t>(budget->iters));
      want.set("cache.attack_step", detail::format_eps(budget->resolved_step()));
    }

    std::lock_guard<std::mutex> lock(mu_);
    std::string path = key_path(kind, eps, cfg.source_seed);
    if (std::filesystem::exists(path)) {
      auto [model, prov] = load_checkpoint<S>(path);
      for (const auto& [k, v] : want.entries())
        if (prov.get_or(k, "") != v)
          throw ConfigError("pretrain cache collision on " + path + ": stored " + k + "=" +
                            prov.get_or(k, "<missing>") + ", requested " + v +
                            "; refusing to overwrite");
      Entry e{std::move(model), phase_from(prov), true, path};
      return e;
    }

    MicroResNet<S> model = MicroResNet<S>::build(cfg.widths, cfg.source_classes,
                                                 mix_seed(cfg.source_seed, stream_tag("src-init")));
    PhaseRecord rec = detail::run_source_phase(model, source, adversarial, budget, cfg);
    Provenance prov = want;
    prov.set("strategy", std::string(to_string(kind)));
    prov.set("epsilon", detail::format_eps(eps));
    prov.set("seed", cfg.source_seed);
    prov.set("epochs", static_cast<int64_t>(cfg.source_epochs));
    store_phase(prov, rec);
    save_checkpoint(model, prov, path);
    return Entry{std::move(model), rec, false, path};
  }

 private:
  static void store_phase(Provenance& prov, const PhaseRecord& rec) {
    char buf[64];
    prov.set("phase.name", rec.phase);
    prov.set("phase.domain", rec.domain);
    prov.set("phase.adversarial", std::string(rec.adversarial ? "1" : "0"));
    prov.set("phase.epsilon", detail::format_eps(rec.epsilon));
    prov.set("phase.epochs", static_cast<int64_t>(rec.epochs));
    std::snprintf(buf, sizeof(buf), "%.6f", rec.final_loss);
    prov.set("phase.final_loss", std::string(buf));
    std::snprintf(buf, sizeof(buf), "%.6f", rec.final_acc);
    prov.set("phase.final_acc", std::string(buf));
  }

  static PhaseRecord phase_from(const Provenance& prov) {
    PhaseRecord rec;
    rec.phase = prov.get_or("phase.name", "Train");
    rec.domain = prov.get_or("phase.domain", "source");
    rec.adversarial = prov.get_or("phase.adversarial", "0") == "1";
    rec.epsilon = std::stod(prov.get_or("phase.epsilon", "0"));
    rec.epochs = std::stoi(prov.get_or("phase.epochs", "0"));
    rec.final_loss = std::stod(prov.get_or("phase.final_loss", "0"));
    rec.final_acc = std::stod(prov.get_or("phase.final_acc", "0"));
    return rec;
  }

  std::string dir_;
  std::mutex mu_;
};

template <typename S>
struct StrategyResult {
  MicroResNet<S> model;
  RunTrace trace;
};

// Executes the spec's phase sequence: direct kinds train once on the target;
// transfer kinds pre-train on the source (optionally via cache), freeze the
// prefix, swap the head for the target classes, and fine-tune at the
// fine-tuning learning rate.
template <typename S>
StrategyResult<S> run_strategy(const StrategySpec& spec, const Dataset* source,
                               const Dataset& target, const StrategyConfig& cfg,
                               PretrainCache<S>* cache = nullptr) {
  spec.validate();
  RunTrace trace;

  if (!strategy_is_transfer(spec.kind)) {
    MicroResNet<S> model = MicroResNet<S>::build(cfg.widths, target.num_classes,
                                                 mix_seed(cfg.seed, stream_tag("init")));
    TrainConfig tc;
    tc.epochs = cfg.epochs;
    tc.lr0 = cfg.lr_direct;
    tc.batch_size = cfg.batch_size;
    tc.seed = mix_seed(cfg.seed, stream_tag("target-phase"));
    tc.precision = cfg.precision;
    bool adv = spec.kind == StrategyKind::AT;
    trace.phases.push_back(train(model, target, tc, adv ? spec.target_budget : std::nullopt,
                                 adv ? "AdvTrain" : "Train", "target"));
    return {std::move(model), std::move(trace)};
  }

  bool adv_source = strategy_adversarial_source(spec.kind);
  StrategyKind source_kind = adv_source ? StrategyKind::AT : StrategyKind::ST;

  MicroResNet<S> model;
  if (cache) {
    if (!source) throw ConfigError("transfer strategy needs a source dataset");
    auto entry = cache->get_or_train(source_kind, spec.source_budget, *source, cfg);
    model = std::move(entry.model);
    trace.phases.push_back(entry.phase);
  } else {
    if (!source) throw ConfigError("transfer strategy needs a source dataset");
    model = MicroResNet<S>::build(cfg.widths, source->num_classes,
                                  mix_seed(cfg.source_seed, stream_tag("src-init")));
    trace.phases.push_back(
        detail::run_source_phase(model, *source, adv_source, spec.source_budget, cfg));
  }

  model.set_frozen_prefix(spec.frozen_prefix);
  model.replace_head(target.num_classes, mix_seed(cfg.seed, stream_tag("head")));

  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.lr0 = cfg.lr_finetune;
  tc.batch_size = cfg.batch_size;
  tc.seed = mix_seed(cfg.seed, stream_tag("target-phase"));
  tc.precision = cfg.precision;
  bool adv_target = strategy_adversarial_target(spec.kind);
  trace.phases.push_back(train(model, target, tc, adv_target ? spec.target_budget : std::nullopt,
                               adv_target ? "AdvFinetune" : "Finetune", "target"));
  return {std::move(model), std::move(trace)};
}

}  // namespace advxfer
