#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include "advxfer/errors.hpp"
#include "advxfer/rng.hpp"

namespace advxfer {

enum class ScalarMode { Single, Double };

inline const char* to_string(ScalarMode m) { return m == ScalarMode::Single ? "single" : "double"; }

inline std::string dims_to_string(const std::vector<int>& d) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < d.size(); ++i) os << (i ? "x" : "") << d[i];
  os << ']';
  return os.str();
}

namespace detail {

template <typename S>
struct Node {
  std::vector<int> dims;
  std::vector<S> values;
  std::vector<S> grad;  // allocated lazily
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), S(0));
  }
};

inline int64_t dims_product(const std::vector<int>& dims) {
  int64_t n = 1;
  for (int d : dims) {
    if (d <= 0) throw ShapeError("tensor dims must be positive, got " + dims_to_string(dims));
    n *= d;
  }
  return n;
}

}  // namespace detail

// Dense row-major tensor participating in reverse-mode differentiation.
// Copying a Tensor copies a handle to the same node; use clone_detached()
// for an independent leaf copy.
template <typename S>
class Tensor {
  static_assert(std::is_floating_point_v<S>, "Tensor scalar must be float or double");

 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> dims) { return full(std::move(dims), S(0)); }

  static Tensor full(std::vector<int> dims, S v) {
    auto n = std::make_shared<detail::Node<S>>();
    int64_t count = detail::dims_product(dims);
    n->dims = std::move(dims);
    n->values.assign(static_cast<size_t>(count), v);
    return Tensor(std::move(n));
  }

  static Tensor from(std::vector<int> dims, std::vector<S> values) {
    int64_t count = detail::dims_product(dims);
    if (static_cast<size_t>(count) != values.size())
      throw ShapeError("value count " + std::to_string(values.size()) + " does not match dims " +
                       dims_to_string(dims));
    auto n = std::make_shared<detail::Node<S>>();
    n->dims = std::move(dims);
    n->values = std::move(values);
    return Tensor(std::move(n));
  }

  static Tensor scalar(S v) { return full({1}, v); }

  static Tensor randn(std::vector<int> dims, Rng& rng, double stddev = 1.0) {
    Tensor t = zeros(std::move(dims));
    for (auto& v : t.values()) v = static_cast<S>(rng.normal(0.0, stddev));
    return t;
  }

  static Tensor rand_uniform(std::vector<int> dims, Rng& rng, double lo, double hi) {
    Tensor t = zeros(std::move(dims));
    for (auto& v : t.values()) v = static_cast<S>(rng.uniform(lo, hi));
    return t;
  }

  bool defined() const { return n_ != nullptr; }
  const std::vector<int>& dims() const { return n_->dims; }
  int dim(int i) const { return n_->dims.at(static_cast<size_t>(i)); }
  int rank() const { return static_cast<int>(n_->dims.size()); }
  int64_t size() const { return static_cast<int64_t>(n_->values.size()); }

  std::vector<S>& values() { return n_->values; }
  const std::vector<S>& values() const { return n_->values; }

  bool requires_grad() const { return n_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    if (!n_->leaf) throw ConfigError("requires_grad can only be toggled on leaf tensors");
    n_->requires_grad = b;
    return *this;
  }
  bool is_leaf() const { return n_->leaf; }

  bool has_grad() const { return !n_->grad.empty(); }
  const std::vector<S>& grad() const { return n_->grad; }
  std::vector<S>& grad_mut() { return n_->grad; }
  void zero_grad() { n_->grad.clear(); }

  S item() const {
    if (size() != 1) throw ShapeError("item() on tensor of size " + std::to_string(size()));
    return n_->values[0];
  }

  // Independent leaf copy of the values. Drops graph edges and gradient.
  Tensor clone_detached() const {
    auto n = std::make_shared<detail::Node<S>>();
    n->dims = n_->dims;
    n->values = n_->values;
    n->requires_grad = n_->leaf ? n_->requires_grad : false;
    return Tensor(std::move(n));
  }

  // Reverse-mode sweep from a scalar root. Gradients accumulate into every
  // reachable tensor whose requires_grad flag was set when the graph was built.
  void backward() const {
    if (size() != 1) throw ShapeError("backward() requires a scalar, got " + dims_to_string(dims()));
    detail::Node<S>* root = n_.get();
    if (!root->requires_grad) return;

    std::vector<detail::Node<S>*> order;
    std::unordered_set<detail::Node<S>*> visited;
    std::vector<std::pair<detail::Node<S>*, size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        detail::Node<S>* p = node->parents[next++].get();
        if (p->requires_grad && !visited.count(p)) {
          visited.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    root->ensure_grad();
    root->grad[0] += S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
      if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }

  detail::Node<S>* node() const { return n_.get(); }
  const std::shared_ptr<detail::Node<S>>& node_ptr() const { return n_; }
  static Tensor wrap(std::shared_ptr<detail::Node<S>> n) { return Tensor(std::move(n)); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node<S>> n) : n_(std::move(n)) {}
  std::shared_ptr<detail::Node<S>> n_;
};

namespace detail {

// Interior graph node. Parent edges are kept only when some parent needs a
// gradient, so inference-only forwards retain nothing.
template <typename S>
std::shared_ptr<Node<S>> make_interior(std::vector<int> dims,
                                       std::vector<std::shared_ptr<Node<S>>> parents) {
  auto n = std::make_shared<Node<S>>();
  int64_t count = dims_product(dims);
  n->dims = std::move(dims);
  n->values.resize(static_cast<size_t>(count));
  n->leaf = false;
  bool needs = false;
  for (const auto& p : parents) needs = needs || p->requires_grad;
  n->requires_grad = needs;
  if (needs) n->parents = std::move(parents);
  return n;
}

}  // namespace detail

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  auto out = detail::make_interior<S>(x.dims(), {x.node_ptr()});
  const auto& xv = x.values();
  for (size_t i = 0; i < xv.size(); ++i) out->values[i] = xv[i] > S(0) ? xv[i] : S(0);
  if (out->requires_grad)
    out->backward_fn = [](detail::Node<S>& self) {
      auto& p = *self.parents[0];
      if (!p.requires_grad) return;
      p.ensure_grad();
      for (size_t i = 0; i < p.values.size(); ++i)
        if (p.values[i] > S(0)) p.grad[i] += self.grad[i];
    };
  return Tensor<S>::wrap(out);
}

template <typename S>
Tensor<S> residual_add(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.dims() != b.dims())
    throw ShapeError("residual_add: shapes differ, " + dims_to_string(a.dims()) + " vs " +
                     dims_to_string(b.dims()));
  auto out = detail::make_interior<S>(a.dims(), {a.node_ptr(), b.node_ptr()});
  const auto& av = a.values();
  const auto& bv = b.values();
  for (size_t i = 0; i < av.size(); ++i) out->values[i] = av[i] + bv[i];
  if (out->requires_grad)
    out->backward_fn = [](detail::Node<S>& self) {
      for (int side = 0; side < 2; ++side) {
        auto& p = *self.parents[side];
        if (!p.requires_grad) continue;
        p.ensure_grad();
        for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += self.grad[i];
      }
    };
  return Tensor<S>::wrap(out);
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.dims() != b.dims())
    throw ShapeError("mul: shapes differ, " + dims_to_string(a.dims()) + " vs " +
                     dims_to_string(b.dims()));
  auto out = detail::make_interior<S>(a.dims(), {a.node_ptr(), b.node_ptr()});
  const auto& av = a.values();
  const auto& bv = b.values();
  for (size_t i = 0; i < av.size(); ++i) out->values[i] = av[i] * bv[i];
  if (out->requires_grad)
    out->backward_fn = [](detail::Node<S>& self) {
      auto& a = *self.parents[0];
      auto& b = *self.parents[1];
      if (a.requires_grad) {
        a.ensure_grad();
        for (size_t i = 0; i < a.grad.size(); ++i) a.grad[i] += self.grad[i] * b.values[i];
      }
      if (b.requires_grad) {
        b.ensure_grad();
        for (size_t i = 0; i < b.grad.size(); ++i) b.grad[i] += self.grad[i] * a.values[i];
      }
    };
  return Tensor<S>::wrap(out);
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  auto out = detail::make_interior<S>({1}, {x.node_ptr()});
  S acc = S(0);
  for (S v : x.values()) acc += v;
  out->values[0] = acc;
  if (out->requires_grad)
    out->backward_fn = [](detail::Node<S>& self) {
      auto& p = *self.parents[0];
      if (!p.requires_grad) return;
      p.ensure_grad();
      S g = self.grad[0];
      for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g;
    };
  return Tensor<S>::wrap(out);
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, std::vector<int> dims) {
  int64_t count = detail::dims_product(dims);
  if (count != x.size())
    throw ShapeError("reshape: " + dims_to_string(x.dims()) + " has " + std::to_string(x.size()) +
                     " elements, target " + dims_to_string(dims) + " has " + std::to_string(count));
  auto out = detail::make_interior<S>(std::move(dims), {x.node_ptr()});
  out->values = x.values();
  if (out->requires_grad)
    out->backward_fn = [](detail::Node<S>& self) {
      auto& p = *self.parents[0];
      if (!p.requires_grad) return;
      p.ensure_grad();
      for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += self.grad[i];
    };
  return Tensor<S>::wrap(out);
}

}  // namespace advxfer
