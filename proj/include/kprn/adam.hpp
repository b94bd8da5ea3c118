#pragma once

#include <map>
#include <string>

#include "kprn/params.hpp"
#include "kprn/tensor.hpp"

namespace kprn::diff {

struct AdamHyper {
  double lr = 4e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::map<std::string, Tensor> m;  // first moments
  std::map<std::string, Tensor> v;  // second moments
  std::int64_t step = 0;
  AdamHyper hyper;
};

// One Adam update with bias correction. Parameters absent from `grads` are
// left untouched (their moments included).
inline void adam_step(ParamStore& params, const GradMap& grads, AdamState& st) {
  st.step += 1;
  double bc1 = 1.0 - std::pow(st.hyper.beta1, static_cast<double>(st.step));
  double bc2 = 1.0 - std::pow(st.hyper.beta2, static_cast<double>(st.step));
  for (const auto& [name, g] : grads) {
    Tensor& p = params.at(name);
    KPRN_REQUIRE(p.same_shape(g), "adam_step: gradient shape mismatch for ", name);
    auto mit = st.m.find(name);
    if (mit == st.m.end()) {
      mit = st.m.emplace(name, Tensor::zeros(p.shape)).first;
      st.v.emplace(name, Tensor::zeros(p.shape));
    }
    Tensor& m = mit->second;
    Tensor& v = st.v.at(name);
    KPRN_REQUIRE(m.same_shape(p) && v.same_shape(p), "adam_step: moment shape drift for ", name);
    for (std::int64_t i = 0; i < p.size(); ++i) {
      double gi = g.at(i);
      m.at(i) = st.hyper.beta1 * m.at(i) + (1.0 - st.hyper.beta1) * gi;
      v.at(i) = st.hyper.beta2 * v.at(i) + (1.0 - st.hyper.beta2) * gi * gi;
      double mhat = m.at(i) / bc1;
      double vhat = v.at(i) / bc2;
      p.at(i) -= st.hyper.lr * mhat / (std::sqrt(vhat) + st.hyper.eps);
    }
  }
}

}  // namespace kprn::diff
