#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rcnet/count.hpp"
#include "rcnet/error.hpp"

namespace rcnet {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  bool is_leaf = true;
  std::optional<std::vector<double>> grad;
  std::string param_name;  // non-empty for learnable parameters

  void accumulate_grad(std::size_t i, double g) {
    if (!grad) grad.emplace(data.size(), 0.0);
    (*grad)[i] += g;
  }
};

/// Shared handle to a dense row-major float64 array.
///
/// Copies alias the same storage. Op outputs are never written after
/// construction; only leaves may be edited (fixtures, perturbation probes,
/// finite differences), and only while no tape references them.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data)
      : impl_(std::make_shared<TensorImpl>()) {
    for (auto e : shape)
      if (e <= 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
    if (rcnet::numel(shape) != static_cast<std::int64_t>(data.size()))
      throw ShapeError("shape " + to_string(shape) + " needs " +
                       std::to_string(rcnet::numel(shape)) + " values, got " +
                       std::to_string(data.size()));
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }

  static Tensor full(Shape shape, double value) {
    const auto n = static_cast<std::size_t>(std::max<std::int64_t>(rcnet::numel(shape), 0));
    return Tensor(std::move(shape), std::vector<double>(n, value));
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::int64_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }

  double item() const {
    if (impl_->data.size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return impl_->data[0];
  }

  double at(std::initializer_list<std::int64_t> index) const {
    if (index.size() != rank()) throw ShapeError("index rank mismatch");
    std::int64_t off = 0;
    std::size_t a = 0;
    for (auto i : index) {
      if (i < 0 || i >= impl_->shape[a]) throw ShapeError("index out of range");
      off = off * impl_->shape[a] + i;
      ++a;
    }
    return impl_->data[static_cast<std::size_t>(off)];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    impl_->requires_grad = on;
    return *this;
  }
  bool is_leaf() const { return impl_->is_leaf; }

  bool has_grad() const { return impl_->grad.has_value(); }
  std::span<const double> grad() const {
    if (!impl_->grad) throw AutogradError("tensor has no gradient");
    return *impl_->grad;
  }
  void zero_grad() { impl_->grad.reset(); }

  const std::string& param_name() const { return impl_->param_name; }
  void mark_param(std::string name) { impl_->param_name = std::move(name); }

  /// Detached leaf copy with its own storage.
  Tensor clone() const { return Tensor(shape(), impl_->data); }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  auto x = a.data();
  auto y = b.data();
  return std::equal(x.begin(), x.end(), y.begin(), [](double p, double q) {
    return std::bit_cast<std::uint64_t>(p) == std::bit_cast<std::uint64_t>(q);
  });
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("max_abs_diff: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  double m = 0.0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

// ---------------------------------------------------------------------------
// Tape

using BackwardFn = std::function<void(std::span<const double> grad_out)>;

struct TapeNode {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::shared_ptr<TensorImpl> output;
  BackwardFn backward;
};

class Tape;

namespace detail {
inline Tape*& active_tape() {
  thread_local Tape* tape = nullptr;
  return tape;
}
}  // namespace detail

/// Ordered record of differentiable ops. Nodes are appended as ops execute,
/// so every node's inputs precede it.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(TapeNode node) { nodes_.push_back(std::move(node)); }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<TapeNode>& nodes() const { return nodes_; }

  /// Drops recorded nodes so the tape can be reused.
  void reset() {
    nodes_.clear();
    consumed_ = false;
  }

  /// Reverse-mode accumulation from a scalar loss. Leaves that require grad
  /// and are reachable from the loss end up holding dLoss/dLeaf.
  void backward(const Tensor& loss) {
    if (consumed_) throw AutogradError("backward already ran on this tape; call reset()");
    if (!loss.defined() || loss.numel() != 1)
      throw AutogradError("loss must be a scalar tensor");
    const auto& target = loss.impl();
    auto it = std::find_if(nodes_.rbegin(), nodes_.rend(),
                           [&](const TapeNode& n) { return n.output == target; });
    if (it == nodes_.rend()) throw AutogradError("loss is not on the tape (detached graph)");
    consumed_ = true;
    target->grad.emplace(1, 1.0);
    for (; it != nodes_.rend(); ++it) {
      if (!it->output->grad) continue;
      it->backward(*it->output->grad);
    }
  }

 private:
  std::vector<TapeNode> nodes_;
  bool consumed_ = false;
};

/// Makes `tape` the recording target on this thread while alive.
class TapeGuard {
 public:
  explicit TapeGuard(Tape& tape) : prev_(detail::active_tape()) { detail::active_tape() = &tape; }
  ~TapeGuard() { detail::active_tape() = prev_; }
  TapeGuard(const TapeGuard&) = delete;
  TapeGuard& operator=(const TapeGuard&) = delete;

 private:
  Tape* prev_;
};

namespace detail {

/// Builds an op result: checks finiteness, reports cost to any active
/// counter, and records a tape node when an input requires grad.
/// `make_backward` is only invoked when a node is recorded; it receives the
/// output impl so closures can read saved activations.
template <class MakeBackward>
Tensor make_result(const std::string& op, Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& inputs, std::int64_t macs,
                   MakeBackward&& make_backward) {
  for (double v : data)
    if (!std::isfinite(v)) throw NonFiniteError(op + " produced a non-finite value");
  Tensor out(std::move(shape), std::move(data));

  std::int64_t params = 0;
  for (const auto& t : inputs)
    if (!t.param_name().empty()) params += t.numel();
  record_op(op, params, macs);

  Tape* tape = active_tape();
  bool needs_grad = false;
  for (const auto& t : inputs) needs_grad = needs_grad || t.requires_grad();
  if (tape && needs_grad) {
    out.impl()->requires_grad = true;
    out.impl()->is_leaf = false;
    TapeNode node;
    node.op = op;
    for (const auto& t : inputs) node.inputs.push_back(t.impl());
    node.output = out.impl();
    node.backward = make_backward(out.impl());
    tape->record(std::move(node));
  }
  return out;
}

inline void accumulate(const Tensor& t, std::size_t i, double g) {
  if (t.requires_grad()) t.impl()->accumulate_grad(i, g);
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

}  // namespace detail
}  // namespace rcnet
