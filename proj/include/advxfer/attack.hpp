#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "advxfer/model.hpp"
#include "advxfer/nn_ops.hpp"
#include "advxfer/rng.hpp"
#include "advxfer/tensor.hpp"

namespace advxfer {

enum class NormOrder { L2, LInf };

inline const char* to_string(NormOrder p) { return p == NormOrder::L2 ? "l2" : "linf"; }

inline NormOrder norm_order_from_string(const std::string& s) {
  if (s == "l2" || s == "2") return NormOrder::L2;
  if (s == "linf" || s == "inf") return NormOrder::LInf;
  throw ConfigError("unknown norm order '" + s + "' (expected l2 or linf)");
}

// Constraint set and schedule for crafting one perturbation: an lp ball of
// radius epsilon around the clean image, intersected with the [0,1] pixel box.
struct PerturbationBudget {
  enum class Init { Zero, RandomInBall };
  enum class ReturnMode { LastIterate, BestOf };

  NormOrder p = NormOrder::L2;
  double epsilon = 0.0;
  int iters = 10;
  double step = -1.0;  // <= 0 picks the default 2.5 * epsilon / iters
  Init init = Init::RandomInBall;
  ReturnMode return_mode = ReturnMode::LastIterate;

  double resolved_step() const { return step > 0 ? step : 2.5 * epsilon / iters; }

  void validate() const {
    if (epsilon < 0) throw ConfigError("perturbation budget: epsilon must be >= 0");
    if (iters < 1) throw ConfigError("perturbation budget: iters must be >= 1");
  }
};

namespace detail {

template <typename S>
double lp_norm(const S* d, size_t n, NormOrder p) {
  if (p == NormOrder::L2) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += static_cast<double>(d[i]) * static_cast<double>(d[i]);
    return std::sqrt(acc);
  }
  double m = 0.0;
  for (size_t i = 0; i < n; ++i) m = std::max(m, std::abs(static_cast<double>(d[i])));
  return m;
}

// Projects in place; no-op when already feasible.
template <typename S>
void project_ball_inplace(S* d, size_t n, NormOrder p, double epsilon) {
  if (p == NormOrder::L2) {
    double nrm = lp_norm(d, n, NormOrder::L2);
    if (nrm > epsilon) {
      S scale = static_cast<S>(epsilon / nrm);
      for (size_t i = 0; i < n; ++i) d[i] *= scale;
    }
  } else {
    S e = static_cast<S>(epsilon);
    for (size_t i = 0; i < n; ++i) d[i] = std::clamp(d[i], -e, e);
  }
}

}  // namespace detail

// Projection of a perturbation onto the lp ball of radius epsilon.
template <typename S>
Tensor<S> project_ball(const Tensor<S>& delta, NormOrder p, double epsilon) {
  Tensor<S> out = delta.clone_detached();
  detail::project_ball_inplace(out.values().data(), out.values().size(), p, epsilon);
  return out;
}

// Graph-building eval forward: batch in, logits out.
template <typename S>
using ForwardFn = std::function<Tensor<S>(const Tensor<S>&)>;

namespace detail {

// Per-row cross-entropy values, no graph. Used for best-of candidate scoring.
template <typename S>
std::vector<double> ce_rows(const Tensor<S>& logits, const std::vector<int>& labels) {
  const int N = logits.dim(0), K = logits.dim(1);
  std::vector<double> out(static_cast<size_t>(N));
  const S* z = logits.values().data();
  for (int n = 0; n < N; ++n) {
    const S* row = z + static_cast<size_t>(n) * K;
    double m = row[0];
    for (int k = 1; k < K; ++k) m = std::max(m, static_cast<double>(row[k]));
    double se = 0.0;
    for (int k = 0; k < K; ++k) se += std::exp(static_cast<double>(row[k]) - m);
    out[n] = m + std::log(se) - static_cast<double>(row[labels[n]]);
  }
  return out;
}

}  // namespace detail

// Projected gradient ascent on the cross-entropy loss inside the budget's
// ball, with the pixel box enforced after every step. The returned batch is a
// plain leaf tensor; delta is a constant with respect to later training.
template <typename S>
Tensor<S> pgd_perturb(const ForwardFn<S>& forward, const Tensor<S>& x,
                      const std::vector<int>& labels, const PerturbationBudget& budget,
                      uint64_t seed) {
  budget.validate();
  if (x.rank() < 2) throw ShapeError("pgd_perturb: batched input expected, got " +
                                     dims_to_string(x.dims()));
  for (S v : x.values())
    if (v < S(0) || v > S(1))
      throw DataError("pgd_perturb: input pixels must lie in [0,1]");
  if (budget.epsilon == 0.0) return x.clone_detached();

  const int B = x.dim(0);
  const size_t D = static_cast<size_t>(x.size() / B);
  const double eps = budget.epsilon;
  const double step = budget.resolved_step();
  const S* xv = x.values().data();

  std::vector<S> delta(static_cast<size_t>(x.size()), S(0));
  if (budget.init == PerturbationBudget::Init::RandomInBall) {
    Rng rng(seed);
    for (int b = 0; b < B; ++b) {
      S* d = delta.data() + D * b;
      if (budget.p == NormOrder::L2) {
        double nrm2 = 0.0;
        for (size_t i = 0; i < D; ++i) {
          d[i] = static_cast<S>(rng.normal());
          nrm2 += static_cast<double>(d[i]) * static_cast<double>(d[i]);
        }
        double nrm = std::sqrt(nrm2);
        double radius = eps * std::pow(rng.uniform(), 1.0 / static_cast<double>(D));
        S scale = nrm > 0 ? static_cast<S>(radius / nrm) : S(0);
        for (size_t i = 0; i < D; ++i) d[i] *= scale;
      } else {
        for (size_t i = 0; i < D; ++i) d[i] = static_cast<S>(rng.uniform(-eps, eps));
      }
    }
  }

  // Clamp to the box and re-derive delta so x + delta is always feasible.
  auto clamp_box = [&](std::vector<S>& d) {
    for (size_t i = 0; i < d.size(); ++i) {
      S v = std::clamp(static_cast<S>(xv[i] + d[i]), S(0), S(1));
      d[i] = v - xv[i];
    }
  };
  clamp_box(delta);

  const bool best_of = budget.return_mode == PerturbationBudget::ReturnMode::BestOf;
  std::vector<S> best_delta;
  std::vector<double> best_loss;
  if (best_of) {
    // The clean point is always a candidate.
    best_delta.assign(static_cast<size_t>(x.size()), S(0));
    Tensor<S> clean_logits = forward(x.clone_detached());
    best_loss = detail::ce_rows(clean_logits, labels);
  }

  auto make_adv = [&](const std::vector<S>& d, bool needs_grad) {
    Tensor<S> adv = x.clone_detached();
    S* av = adv.values().data();
    for (size_t i = 0; i < d.size(); ++i) av[i] = xv[i] + d[i];
    if (needs_grad) adv.set_requires_grad(true);
    return adv;
  };

  auto consider = [&](const std::vector<S>& d, const std::vector<double>& losses) {
    for (int b = 0; b < B; ++b)
      if (losses[b] > best_loss[b]) {
        best_loss[b] = losses[b];
        std::copy(d.begin() + D * b, d.begin() + D * (b + 1), best_delta.begin() + D * b);
      }
  };

  for (int t = 0; t < budget.iters; ++t) {
    Tensor<S> adv = make_adv(delta, /*needs_grad=*/true);
    Tensor<S> logits = forward(adv);
    if (best_of) consider(delta, detail::ce_rows(logits, labels));
    Tensor<S> loss = softmax_cross_entropy(logits, labels);
    loss.backward();
    const auto& g = adv.grad();

    for (int b = 0; b < B; ++b) {
      S* d = delta.data() + D * b;
      const S* gb = g.data() + D * b;
      if (budget.p == NormOrder::L2) {
        double gnorm = detail::lp_norm(gb, D, NormOrder::L2);
        if (gnorm == 0.0) continue;  // stationary sample: leave delta unchanged this step
        S scale = static_cast<S>(step / gnorm);
        for (size_t i = 0; i < D; ++i) d[i] += scale * gb[i];
      } else {
        S st = static_cast<S>(step);
        for (size_t i = 0; i < D; ++i)
          d[i] += gb[i] > S(0) ? st : (gb[i] < S(0) ? -st : S(0));
      }
      detail::project_ball_inplace(d, D, budget.p, eps);
    }
    clamp_box(delta);
  }

  if (best_of) {
    Tensor<S> final_adv = make_adv(delta, false);
    consider(delta, detail::ce_rows(forward(final_adv), labels));
    return make_adv(best_delta, false);
  }
  return make_adv(delta, false);
}

// Model overload: attacks run against eval-mode batchnorm and leave parameter
// gradients, values, and running stats untouched.
template <typename S>
Tensor<S> pgd_perturb(MicroResNet<S>& model, const Tensor<S>& x, const std::vector<int>& labels,
                      const PerturbationBudget& budget, uint64_t seed) {
  ParamGradGuard<S> guard(model);
  ForwardFn<S> fwd = [&model](const Tensor<S>& in) { return model.forward(in, false); };
  return pgd_perturb(fwd, x, labels, budget, seed);
}

// Loss at the crafted perturbation. Gradients flow to the parameters through
// the loss at the perturbed point only; the perturbation itself is a constant.
// Training uses train_mode=true (batch statistics at the perturbed batch).
template <typename S>
Tensor<S> adversarial_loss(MicroResNet<S>& model, const Tensor<S>& x,
                           const std::vector<int>& labels, const PerturbationBudget& budget,
                           uint64_t seed, bool train_mode = true) {
  Tensor<S> adv = pgd_perturb(model, x, labels, budget, seed);
  return softmax_cross_entropy(model.forward(adv, train_mode), labels);
}

}  // namespace advxfer
