#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "rcnet/ops.hpp"
#include "rcnet/rng.hpp"

namespace rcnet::gradcheck {

struct Options {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Entries checked per leaf; <= 0 checks every entry.
  std::int64_t max_per_tensor = 0;
  std::uint64_t seed = 1;
};

struct Result {
  std::string name;
  double max_error = 0.0;  // max |analytic - numeric| / max(1, |numeric|)
  std::int64_t checked = 0;
  std::string worst;  // "leaf[index]" of the largest error
  bool pass = true;
};

/// Compares tape gradients of `loss_fn` against central differences for
/// every leaf in `leaves`. Leaves are edited in place and restored.
inline Result check(const std::string& name, const std::function<Tensor()>& loss_fn,
                    std::vector<Tensor> leaves, const Options& opt = {}) {
  for (auto& t : leaves) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tape tape;
  Tensor loss;
  {
    TapeGuard guard(tape);
    loss = loss_fn();
  }
  tape.backward(loss);

  Result r;
  r.name = name;
  Rng rng(opt.seed);
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    auto& t = leaves[k];
    std::vector<double> analytic(static_cast<std::size_t>(t.numel()), 0.0);
    if (t.has_grad()) std::ranges::copy(t.grad(), analytic.begin());

    std::vector<std::size_t> idx(analytic.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (opt.max_per_tensor > 0 && static_cast<std::int64_t>(idx.size()) > opt.max_per_tensor) {
      for (std::size_t i = 0; i < static_cast<std::size_t>(opt.max_per_tensor); ++i)
        std::swap(idx[i], idx[i + rng.next_u64() % (idx.size() - i)]);
      idx.resize(static_cast<std::size_t>(opt.max_per_tensor));
    }

    auto data = t.mutable_data();
    for (auto i : idx) {
      const double saved = data[i];
      data[i] = saved + opt.step;
      const double up = loss_fn().item();
      data[i] = saved - opt.step;
      const double down = loss_fn().item();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
      ++r.checked;
      if (err > r.max_error) {
        r.max_error = err;
        const std::string label = t.param_name().empty() ? "leaf" + std::to_string(k) : t.param_name();
        r.worst = label + "[" + std::to_string(i) + "]";
      }
    }
  }
  r.pass = r.max_error <= opt.tolerance;
  for (auto& t : leaves) t.zero_grad();
  return r;
}

/// Fixed random weights R_k; loss = sum_k sum(out_k * R_k). Weights are
/// drawn on first use so both the taped and the perturbed passes share them.
class RandomProjection {
 public:
  explicit RandomProjection(std::uint64_t seed) : rng_(seed) {}

  Tensor operator()(const std::vector<Tensor>& outputs) {
    while (weights_.size() < outputs.size()) {
      const auto& shape = outputs[weights_.size()].shape();
      Tensor w = Tensor::zeros(shape);
      for (auto& v : w.mutable_data()) v = rng_.normal();
      weights_.push_back(w);
    }
    Tensor total;
    for (std::size_t k = 0; k < outputs.size(); ++k) {
      Tensor term = ops::sum(ops::mul(outputs[k], weights_[k]));
      total = total.defined() ? ops::add(total, term) : term;
    }
    return total;
  }

 private:
  Rng rng_;
  std::vector<Tensor> weights_;
};

}  // namespace rcnet::gradcheck
