#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace bestow {

using Shape = std::vector<std::size_t>;

/// Raised when operand shapes are incompatible.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

/// Process-wide accounting of bytes held by tensor buffers (data + grad).
/// The benchmark resets the peak before a run and reads it afterwards.
class MemoryMeter {
 public:
  static void add(std::int64_t bytes) {
    const auto now = live().fetch_add(bytes) + bytes;
    auto prev = peak().load();
    while (now > prev && !peak().compare_exchange_weak(prev, now)) {
    }
  }
  static void sub(std::int64_t bytes) { live().fetch_sub(bytes); }
  static std::int64_t live_bytes() { return live().load(); }
  static std::int64_t peak_bytes() { return peak().load(); }
  static void reset_peak() { peak().store(live().load()); }

 private:
  static std::atomic<std::int64_t>& live() {
    static std::atomic<std::int64_t> v{0};
    return v;
  }
  static std::atomic<std::int64_t>& peak() {
    static std::atomic<std::int64_t> v{0};
    return v;
  }
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Node(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    MemoryMeter::add(static_cast<std::int64_t>(data.size() * sizeof(double)));
  }
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;
  ~Node() {
    MemoryMeter::sub(static_cast<std::int64_t>((data.size() + grad.size()) * sizeof(double)));
  }

  std::vector<double>& ensure_grad() {
    if (grad.empty() && !data.empty()) {
      grad.assign(data.size(), 0.0);
      MemoryMeter::add(static_cast<std::int64_t>(grad.size() * sizeof(double)));
    }
    return grad;
  }
};

}  // namespace detail

/// Dense row-major float64 array with optional reverse-mode gradient.
///
/// A Tensor is a shared handle: copies alias the same buffer. Results of
/// operations on inputs that require gradients record their parents and a
/// backward closure (define-by-run); everything else is a plain value.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from_data(Shape shape, std::vector<double> data) {
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    }
    for (auto d : shape) {
      if (d == 0) throw DimensionError("zero-sized dimension in shape " + shape_str(shape));
    }
    return Tensor(std::make_shared<detail::Node>(std::move(shape), std::move(data)));
  }
  static Tensor zeros(Shape shape) {
    const auto n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<double>(n, 0.0));
  }
  static Tensor full(Shape shape, double v) {
    const auto n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<double>(n, v));
  }
  static Tensor scalar(double v) { return from_data({}, {v}); }
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    std::vector<double> d;
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix literal");
      d.insert(d.end(), row.begin(), row.end());
    }
    return from_data({r, c}, std::move(d));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return node().shape.size(); }
  std::size_t numel() const { return node().data.size(); }
  std::size_t rows() const { return rank() == 2 ? shape()[0] : 1; }
  std::size_t cols() const { return rank() == 2 ? shape()[1] : numel(); }

  std::span<const double> data() const { return node().data; }
  /// Mutable view of the buffer. Only meaningful for leaves (parameters,
  /// inputs); mutating an interior graph value invalidates its backward.
  std::span<double> data_mut() { return node().data; }
  double operator[](std::size_t i) const { return node().data[i]; }
  double at(std::size_t r, std::size_t c) const { return node().data[r * cols() + c]; }
  double item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return node().data[0];
  }

  bool requires_grad() const { return node().requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node().requires_grad = on;
    return *this;
  }
  bool has_grad() const { return !node().grad.empty(); }
  std::span<const double> grad() const { return node().grad; }
  std::span<double> grad_mut() { return node().ensure_grad(); }
  void zero_grad() {
    auto& g = node().grad;
    std::fill(g.begin(), g.end(), 0.0);
  }

  /// Copy of the values with no graph attached.
  Tensor detach() const { return from_data(shape(), node().data); }

  /// Reverse pass from a scalar. Populates grad on every requires_grad
  /// node reachable from this one; leaf grads accumulate across calls.
  void backward() const {
    if (numel() != 1) throw DimensionError("backward() requires a scalar, got " + shape_str(shape()));
    if (!requires_grad()) return;
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    // iterative post-order DFS so deep graphs do not blow the stack
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, idx] = stack.back();
      if (idx < n->parents.size()) {
        auto* p = n->parents[idx++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backward) (*it)->backward(**it);
    }
  }

  /// Builds an operation result. Parents and the backward closure are only
  /// retained when at least one parent participates in a graph.
  static Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                            std::function<void(detail::Node&)> backward) {
    auto out = from_data(std::move(shape), std::move(data));
    const bool track = std::any_of(parents.begin(), parents.end(),
                                   [](const Tensor& t) { return t.defined() && t.requires_grad(); });
    if (track) {
      auto& n = out.node();
      n.requires_grad = true;
      n.parents.reserve(parents.size());
      for (auto& p : parents) n.parents.push_back(p.node_);
      n.backward = std::move(backward);
    }
    return out;
  }

  detail::Node& node() const {
    if (!node_) throw std::logic_error("use of undefined tensor");
    return *node_;
  }
  bool same_storage(const Tensor& o) const { return node_ == o.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Accumulates into a parent's gradient if that parent is tracked.
inline double* grad_sink(detail::Node& self, std::size_t parent) {
  auto& p = *self.parents[parent];
  return p.requires_grad ? p.ensure_grad().data() : nullptr;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace bestow
