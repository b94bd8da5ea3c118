#pragma once

#include <string>

#include "kprn/params.hpp"
#include "kprn/tape.hpp"

namespace kprn::diff {

// Standard LSTM cell with per-gate weight matrices, expressed in tape ops so
// lstm_step stays differentiable end to end.
struct LstmVars {
  Var wxi, whi, bi;
  Var wxf, whf, bf;
  Var wxo, who, bo;
  Var wxg, whg, bg;
};

struct LstmState {
  Var h, c;
};

inline void add_lstm_params(ParamStore& store, const std::string& prefix,
                            std::int64_t in_dim, std::int64_t hidden, Rng& rng) {
  for (const char* gate : {"i", "f", "o", "g"}) {
    store.add_uniform(prefix + ".wx" + gate, {in_dim, hidden}, rng);
    store.add_uniform(prefix + ".wh" + gate, {hidden, hidden}, rng);
    store.add_uniform(prefix + ".b" + gate, {hidden}, rng);
  }
}

inline LstmVars lstm_vars(TapeParams& tp, const std::string& prefix) {
  LstmVars w;
  w.wxi = tp(prefix + ".wxi");
  w.whi = tp(prefix + ".whi");
  w.bi = tp(prefix + ".bi");
  w.wxf = tp(prefix + ".wxf");
  w.whf = tp(prefix + ".whf");
  w.bf = tp(prefix + ".bf");
  w.wxo = tp(prefix + ".wxo");
  w.who = tp(prefix + ".who");
  w.bo = tp(prefix + ".bo");
  w.wxg = tp(prefix + ".wxg");
  w.whg = tp(prefix + ".whg");
  w.bg = tp(prefix + ".bg");
  return w;
}

inline LstmState lstm_step(Var x, LstmState s, const LstmVars& w) {
  Var gi = sigmoid(add(add(matmul(x, w.wxi), matmul(s.h, w.whi)), w.bi));
  Var gf = sigmoid(add(add(matmul(x, w.wxf), matmul(s.h, w.whf)), w.bf));
  Var go = sigmoid(add(add(matmul(x, w.wxo), matmul(s.h, w.who)), w.bo));
  Var gg = tanh_op(add(add(matmul(x, w.wxg), matmul(s.h, w.whg)), w.bg));
  LstmState out;
  out.c = add(mul(gf, s.c), mul(gi, gg));
  out.h = mul(go, tanh_op(out.c));
  return out;
}

}  // namespace kprn::diff
