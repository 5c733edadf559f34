#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include "advxfer/nn_ops.hpp"
#include "advxfer/rng.hpp"
#include "advxfer/tensor.hpp"

namespace advxfer {

template <typename S>
struct Conv2dLayer {
  Tensor<S> weight;  // OIKK
  int stride = 1;
  int pad = 1;
};

template <typename S>
struct BatchNorm2dLayer {
  Tensor<S> gamma, beta;
  Tensor<S> running_mean, running_var;  // buffers, never differentiated
};

template <typename S>
struct LinearHead {
  Tensor<S> weight;  // K x F
  Tensor<S> bias;    // K
};

namespace detail {

template <typename S>
Conv2dLayer<S> make_conv(int out_ch, int in_ch, int k, int stride, int pad, Rng& rng) {
  Conv2dLayer<S> c;
  double stddev = std::sqrt(2.0 / (static_cast<double>(in_ch) * k * k));
  c.weight = Tensor<S>::randn({out_ch, in_ch, k, k}, rng, stddev);
  c.weight.set_requires_grad(true);
  c.stride = stride;
  c.pad = pad;
  return c;
}

template <typename S>
BatchNorm2dLayer<S> make_bn(int ch) {
  BatchNorm2dLayer<S> b;
  b.gamma = Tensor<S>::full({ch}, S(1));
  b.gamma.set_requires_grad(true);
  b.beta = Tensor<S>::zeros({ch});
  b.beta.set_requires_grad(true);
  b.running_mean = Tensor<S>::zeros({ch});
  b.running_var = Tensor<S>::full({ch}, S(1));
  return b;
}

}  // namespace detail

// One residual unit: conv-bn-relu-conv-bn plus an identity or 1x1-projection
// shortcut, then relu.
template <typename S>
struct ResidualBlock {
  Conv2dLayer<S> conv1;
  BatchNorm2dLayer<S> bn1;
  Conv2dLayer<S> conv2;
  BatchNorm2dLayer<S> bn2;
  bool has_projection = false;
  Conv2dLayer<S> proj;
  BatchNorm2dLayer<S> proj_bn;

  static ResidualBlock make(int in_ch, int out_ch, int stride, Rng& rng) {
    ResidualBlock b;
    b.conv1 = detail::make_conv<S>(out_ch, in_ch, 3, stride, 1, rng);
    b.bn1 = detail::make_bn<S>(out_ch);
    b.conv2 = detail::make_conv<S>(out_ch, out_ch, 3, 1, 1, rng);
    b.bn2 = detail::make_bn<S>(out_ch);
    b.has_projection = (in_ch != out_ch || stride != 1);
    if (b.has_projection) {
      b.proj = detail::make_conv<S>(out_ch, in_ch, 1, stride, 0, rng);
      b.proj_bn = detail::make_bn<S>(out_ch);
    }
    return b;
  }

  Tensor<S> forward(const Tensor<S>& x, bool train) {
    auto h = relu(batchnorm2d(conv2d(x, conv1.weight, conv1.stride, conv1.pad), bn1.gamma,
                              bn1.beta, bn1.running_mean, bn1.running_var, train));
    h = batchnorm2d(conv2d(h, conv2.weight, conv2.stride, conv2.pad), bn2.gamma, bn2.beta,
                    bn2.running_mean, bn2.running_var, train);
    Tensor<S> shortcut =
        has_projection
            ? batchnorm2d(conv2d(x, proj.weight, proj.stride, proj.pad), proj_bn.gamma,
                          proj_bn.beta, proj_bn.running_mean, proj_bn.running_var, train)
            : x;
    return relu(residual_add(h, shortcut));
  }
};

// Four-block residual classifier. The freezable granularity matches the
// block structure: frozen_prefix L in [0,4] freezes the stem (for L >= 1)
// and blocks 1..L; frozen parameters get no gradients and frozen batchnorms
// run in eval mode so their running statistics stay fixed.
template <typename S>
class MicroResNet {
 public:
  static constexpr int kNumBlocks = 4;

  MicroResNet() = default;
  MicroResNet(const MicroResNet&) = delete;  // tensors are shared handles; use clone()
  MicroResNet& operator=(const MicroResNet&) = delete;
  MicroResNet(MicroResNet&&) = default;
  MicroResNet& operator=(MicroResNet&&) = default;

  static MicroResNet build(const std::array<int, 4>& widths, int num_classes, uint64_t seed) {
    for (int w : widths)
      if (w <= 0) throw ConfigError("build_model: widths must be positive");
    if (num_classes < 2) throw ConfigError("build_model: num_classes must be >= 2");
    MicroResNet m;
    m.widths_ = widths;
    m.num_classes_ = num_classes;
    Rng rng(seed);
    m.stem_conv_ = detail::make_conv<S>(widths[0], 3, 3, /*stride=*/2, /*pad=*/1, rng);
    m.stem_bn_ = detail::make_bn<S>(widths[0]);
    int in_ch = widths[0];
    for (int i = 0; i < kNumBlocks; ++i) {
      int stride = i == 0 ? 1 : 2;
      m.blocks_[i] = ResidualBlock<S>::make(in_ch, widths[i], stride, rng);
      in_ch = widths[i];
    }
    m.head_ = m.make_head(num_classes, rng);
    return m;
  }

  Tensor<S> forward(const Tensor<S>& x, bool train_mode) {
    bool stem_train = train_mode && frozen_prefix_ < 1;
    auto h = relu(batchnorm2d(conv2d(x, stem_conv_.weight, stem_conv_.stride, stem_conv_.pad),
                              stem_bn_.gamma, stem_bn_.beta, stem_bn_.running_mean,
                              stem_bn_.running_var, stem_train));
    for (int i = 0; i < kNumBlocks; ++i)
      h = blocks_[i].forward(h, train_mode && i >= frozen_prefix_);
    return linear(global_avg_pool(h), head_.weight, head_.bias);
  }

  int num_classes() const { return num_classes_; }
  const std::array<int, 4>& widths() const { return widths_; }
  int frozen_prefix() const { return frozen_prefix_; }

  void set_frozen_prefix(int L) {
    if (L < 0 || L > kNumBlocks)
      throw ConfigError("freeze_prefix: L must be in [0," + std::to_string(kNumBlocks) +
                        "], got " + std::to_string(L));
    frozen_prefix_ = L;
    bool stem_trainable = L < 1;
    stem_conv_.weight.set_requires_grad(stem_trainable);
    stem_bn_.gamma.set_requires_grad(stem_trainable);
    stem_bn_.beta.set_requires_grad(stem_trainable);
    for (int i = 0; i < kNumBlocks; ++i) {
      bool t = i >= L;
      for (Tensor<S>* p : block_params(i)) p->set_requires_grad(t);
    }
    head_.weight.set_requires_grad(true);
    head_.bias.set_requires_grad(true);
  }

  void replace_head(int new_num_classes, uint64_t seed) {
    if (new_num_classes < 2) throw ConfigError("replace_head: num_classes must be >= 2");
    Rng rng(mix_seed(seed, stream_tag("head")));
    num_classes_ = new_num_classes;
    head_ = make_head(new_num_classes, rng);
  }

  // Parameters plus batchnorm running stats, in a fixed order shared with the
  // checkpoint format.
  std::vector<std::pair<std::string, Tensor<S>*>> named_tensors() {
    std::vector<std::pair<std::string, Tensor<S>*>> out;
    auto add_bn = [&](const std::string& prefix, BatchNorm2dLayer<S>& bn) {
      out.emplace_back(prefix + ".gamma", &bn.gamma);
      out.emplace_back(prefix + ".beta", &bn.beta);
      out.emplace_back(prefix + ".running_mean", &bn.running_mean);
      out.emplace_back(prefix + ".running_var", &bn.running_var);
    };
    out.emplace_back("stem.conv.weight", &stem_conv_.weight);
    add_bn("stem.bn", stem_bn_);
    for (int i = 0; i < kNumBlocks; ++i) {
      std::string p = "block" + std::to_string(i + 1);
      out.emplace_back(p + ".conv1.weight", &blocks_[i].conv1.weight);
      add_bn(p + ".bn1", blocks_[i].bn1);
      out.emplace_back(p + ".conv2.weight", &blocks_[i].conv2.weight);
      add_bn(p + ".bn2", blocks_[i].bn2);
      if (blocks_[i].has_projection) {
        out.emplace_back(p + ".proj.weight", &blocks_[i].proj.weight);
        add_bn(p + ".proj_bn", blocks_[i].proj_bn);
      }
    }
    out.emplace_back("head.weight", &head_.weight);
    out.emplace_back("head.bias", &head_.bias);
    return out;
  }

  // Learnable parameters only (no running stats), with names.
  std::vector<std::pair<std::string, Tensor<S>*>> parameters() {
    std::vector<std::pair<std::string, Tensor<S>*>> out;
    for (auto& [name, t] : named_tensors())
      if (name.find("running_") == std::string::npos) out.emplace_back(name, t);
    return out;
  }

  int64_t parameter_count() {
    int64_t n = 0;
    for (auto& [name, t] : parameters()) n += t->size();
    return n;
  }

  void zero_grads() {
    for (auto& [name, t] : parameters()) t->zero_grad();
  }

  MicroResNet clone() const {
    MicroResNet m;
    m.widths_ = widths_;
    m.num_classes_ = num_classes_;
    m.frozen_prefix_ = frozen_prefix_;
    m.stem_conv_ = clone_conv(stem_conv_);
    m.stem_bn_ = clone_bn(stem_bn_);
    for (int i = 0; i < kNumBlocks; ++i) {
      const ResidualBlock<S>& src = blocks_[i];
      ResidualBlock<S>& dst = m.blocks_[i];
      dst.conv1 = clone_conv(src.conv1);
      dst.bn1 = clone_bn(src.bn1);
      dst.conv2 = clone_conv(src.conv2);
      dst.bn2 = clone_bn(src.bn2);
      dst.has_projection = src.has_projection;
      if (src.has_projection) {
        dst.proj = clone_conv(src.proj);
        dst.proj_bn = clone_bn(src.proj_bn);
      }
    }
    m.head_.weight = head_.weight.clone_detached();
    m.head_.bias = head_.bias.clone_detached();
    return m;
  }

  ResidualBlock<S>& block(int i) { return blocks_[i]; }
  LinearHead<S>& head() { return head_; }

 private:
  std::vector<Tensor<S>*> block_params(int i) {
    ResidualBlock<S>& b = blocks_[i];
    std::vector<Tensor<S>*> out = {&b.conv1.weight, &b.bn1.gamma, &b.bn1.beta,
                                   &b.conv2.weight, &b.bn2.gamma, &b.bn2.beta};
    if (b.has_projection) {
      out.push_back(&b.proj.weight);
      out.push_back(&b.proj_bn.gamma);
      out.push_back(&b.proj_bn.beta);
    }
    return out;
  }

  LinearHead<S> make_head(int num_classes, Rng& rng) {
    LinearHead<S> h;
    double stddev = std::sqrt(2.0 / static_cast<double>(widths_[3]));
    h.weight = Tensor<S>::randn({num_classes, widths_[3]}, rng, stddev);
    h.weight.set_requires_grad(true);
    h.bias = Tensor<S>::zeros({num_classes});
    h.bias.set_requires_grad(true);
    return h;
  }

  static Conv2dLayer<S> clone_conv(const Conv2dLayer<S>& c) {
    Conv2dLayer<S> out;
    out.weight = c.weight.clone_detached();
    out.stride = c.stride;
    out.pad = c.pad;
    return out;
  }

  static BatchNorm2dLayer<S> clone_bn(const BatchNorm2dLayer<S>& b) {
    BatchNorm2dLayer<S> out;
    out.gamma = b.gamma.clone_detached();
    out.beta = b.beta.clone_detached();
    out.running_mean = b.running_mean.clone_detached();
    out.running_var = b.running_var.clone_detached();
    return out;
  }

  std::array<int, 4> widths_{16, 32, 64, 128};
  int num_classes_ = 4;
  int frozen_prefix_ = 0;
  Conv2dLayer<S> stem_conv_;
  BatchNorm2dLayer<S> stem_bn_;
  std::array<ResidualBlock<S>, kNumBlocks> blocks_;
  LinearHead<S> head_;
};

template <typename S>
MicroResNet<S> build_model(const std::array<int, 4>& widths, int num_classes, uint64_t seed) {
  return MicroResNet<S>::build(widths, num_classes, seed);
}

template <typename S>
void freeze_prefix(MicroResNet<S>& model, int L) {
  model.set_frozen_prefix(L);
}

template <typename S>
void replace_head(MicroResNet<S>& model, int new_num_classes, uint64_t seed) {
  model.replace_head(new_num_classes, seed);
}

// Bitwise equality over every named tensor, running stats included.
template <typename S>
bool models_bitwise_equal(MicroResNet<S>& a, MicroResNet<S>& b) {
  auto ta = a.named_tensors();
  auto tb = b.named_tensors();
  if (ta.size() != tb.size()) return false;
  for (size_t i = 0; i < ta.size(); ++i) {
    if (ta[i].first != tb[i].first) return false;
    if (ta[i].second->dims() != tb[i].second->dims()) return false;
    const auto& va = ta[i].second->values();
    const auto& vb = tb[i].second->values();
    if (std::memcmp(va.data(), vb.data(), va.size() * sizeof(S)) != 0) return false;
  }
  return true;
}

// Restores parameter requires_grad flags on scope exit. Attacks use this to
// keep backward passes from touching parameter gradients.
template <typename S>
class ParamGradGuard {
 public:
  explicit ParamGradGuard(MicroResNet<S>& model) {
    for (auto& [name, t] : model.parameters()) {
      saved_.emplace_back(t, t->requires_grad());
      t->set_requires_grad(false);
    }
  }
  ~ParamGradGuard() {
    for (auto& [t, flag] : saved_) t->set_requires_grad(flag);
  }
  ParamGradGuard(const ParamGradGuard&) = delete;
  ParamGradGuard& operator=(const ParamGradGuard&) = delete;

 private:
  std::vector<std::pair<Tensor<S>*, bool>> saved_;
};

}  // namespace advxfer
