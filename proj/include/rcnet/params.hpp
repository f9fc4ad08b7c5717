#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <type_traits>
#include <string>
#include <variant>
#include <vector>

#include "rcnet/rng.hpp"
#include "rcnet/tensor.hpp"

namespace rcnet {

namespace init {
struct Zeros {};
struct Constant {
  double value;
};
/// U(-bound, bound).
struct Uniform {
  double bound;
};
/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
struct FanIn {
  std::int64_t fan_in;
};
}  // namespace init

using Initializer = std::variant<init::Zeros, init::Constant, init::Uniform, init::FanIn>;

/// Named learnable tensors. Names are slash-separated paths
/// ("revfp/l3/pre/conv/weight"). Each tensor is drawn from its own stream
/// seeded by (store seed, name), so values do not depend on creation order.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

  Tensor add(const std::string& name, const Shape& shape, const Initializer& how) {
    if (params_.contains(name)) throw Error("duplicate parameter '" + name + "'");
    Tensor t = Tensor::zeros(shape);
    Rng rng(fnv1a(name, seed_ ^ 0x9e3779b97f4a7c15ull));
    auto d = t.mutable_data();
    std::visit(
        [&](const auto& spec) {
          using T = std::decay_t<decltype(spec)>;
          if constexpr (std::is_same_v<T, init::Constant>) {
            std::fill(d.begin(), d.end(), spec.value);
          } else if constexpr (std::is_same_v<T, init::Uniform>) {
            for (auto& v : d) v = rng.uniform(-spec.bound, spec.bound);
          } else if constexpr (std::is_same_v<T, init::FanIn>) {
            const double b = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
            for (auto& v : d) v = rng.uniform(-b, b);
          }
        },
        how);
    t.mark_param(name);
    params_.emplace(name, t);
    return t;
  }

  const Tensor& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second;
  }
  Tensor& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.contains(name); }
  std::size_t size() const { return params_.size(); }

  /// Total element count of parameters whose name starts with `prefix`.
  std::int64_t count(const std::string& prefix = "") const {
    std::int64_t n = 0;
    for (const auto& [name, t] : params_)
      if (name.starts_with(prefix)) n += t.numel();
    return n;
  }

  std::vector<Tensor> tensors(const std::string& prefix = "") const {
    std::vector<Tensor> out;
    for (const auto& [name, t] : params_)
      if (name.starts_with(prefix)) out.push_back(t);
    return out;
  }

  const std::map<std::string, Tensor>& all() const { return params_; }

  void set_requires_grad(bool on) {
    for (auto& [_, t] : params_) t.set_requires_grad(on);
  }
  void zero_grad() {
    for (auto& [_, t] : params_) t.zero_grad();
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::map<std::string, Tensor> params_;
};

struct ConvParams {
  Tensor weight;
  Tensor bias;

  /// kernel == 0 means a pointwise conv with a [Cout, Cin] weight.
  static ConvParams make(ParamStore& store, const std::string& name, std::int64_t cin,
                         std::int64_t cout, std::int64_t kernel, bool zero = false) {
    const Shape wshape = kernel == 0 ? Shape{cout, cin} : Shape{cout, cin, kernel, kernel};
    const std::int64_t fan_in = cin * std::max<std::int64_t>(kernel * kernel, 1);
    const Initializer how = zero ? Initializer{init::Zeros{}} : Initializer{init::FanIn{fan_in}};
    return {store.add(name + "/weight", wshape, how), store.add(name + "/bias", {cout}, how)};
  }
};

struct NormParams {
  Tensor gamma;
  Tensor beta;

  static NormParams make(ParamStore& store, const std::string& name, std::int64_t channels) {
    return {store.add(name + "/gamma", {channels}, init::Constant{1.0}),
            store.add(name + "/beta", {channels}, init::Zeros{})};
  }
};

}  // namespace rcnet
