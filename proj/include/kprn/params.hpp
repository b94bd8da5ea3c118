#pragma once

#include <map>
#include <string>

#include "kprn/common.hpp"
#include "kprn/tape.hpp"
#include "kprn/tensor.hpp"

namespace kprn::diff {

// Named trainable tensors. std::map keeps iteration order deterministic,
// which checkpointing and the optimizer rely on.
class ParamStore {
 public:
  Tensor& add(const std::string& name, std::vector<std::int64_t> shape) {
    KPRN_REQUIRE(!params_.count(name), "duplicate parameter name: ", name);
    Tensor t = Tensor::zeros(std::move(shape));
    t.requires_grad = true;
    return params_.emplace(name, std::move(t)).first->second;
  }

  // uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], fan_in = leading extent
  Tensor& add_uniform(const std::string& name, std::vector<std::int64_t> shape, Rng& rng) {
    Tensor& t = add(name, std::move(shape));
    double fan_in = t.shape.empty() ? 1.0 : static_cast<double>(t.shape[0]);
    double bound = 1.0 / std::sqrt(fan_in);
    for (double& x : t.v) x = rng.uniform(-bound, bound);
    return t;
  }

  Tensor& at(const std::string& name) {
    auto it = params_.find(name);
    KPRN_REQUIRE(it != params_.end(), "unknown parameter: ", name);
    return it->second;
  }
  const Tensor& at(const std::string& name) const {
    auto it = params_.find(name);
    KPRN_REQUIRE(it != params_.end(), "unknown parameter: ", name);
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  std::size_t size() const { return params_.size(); }

  void set_trainable(bool trainable) {
    for (auto& [name, t] : params_) t.requires_grad = trainable;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Tensor> params_;
};

// Registers parameters on a tape lazily, one leaf per name per tape.
class TapeParams {
 public:
  TapeParams(Tape& tape, const ParamStore& store) : tape_(tape), store_(store) {}

  Var operator()(const std::string& name) {
    auto it = cache_.find(name);
    if (it != cache_.end()) return it->second;
    Var v = tape_.leaf(name, store_.at(name));
    cache_.emplace(name, v);
    return v;
  }

  Tape& tape() { return tape_; }
  const ParamStore& store() { return store_; }

 private:
  Tape& tape_;
  const ParamStore& store_;
  std::map<std::string, Var> cache_;
};

}  // namespace kprn::diff
