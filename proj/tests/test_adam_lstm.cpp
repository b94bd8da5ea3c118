#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "kprn/adam.hpp"
#include "kprn/checkpoint.hpp"
#include "kprn/lstm.hpp"
#include "oracle_utils.hpp"

using namespace kprn;
using namespace kprn::diff;

namespace {

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("adam: zero gradients leave parameters unchanged") {
  ParamStore ps;
  ps.add("w", {3}).v = {1.0, -2.0, 0.5};
  AdamState st;
  GradMap grads;
  grads.emplace("w", Tensor::zeros({3}));
  std::vector<double> before = ps.at("w").v;
  for (int i = 0; i < 5; ++i) adam_step(ps, grads, st);
  CHECK(ps.at("w").v == before);
  for (int i = 0; i < 3; ++i) {
    CHECK(st.m.at("w").at(i) == 0.0);
    CHECK(st.v.at("w").at(i) == 0.0);
  }
}

TEST_CASE("adam: matches the hand-computed recurrence") {
  // independent recurrence on a scalar with constant gradient 1
  double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double m = 0.0, v = 0.0, x_ref = 2.0;
  std::vector<double> expected;
  for (int t = 1; t <= 10; ++t) {
    m = b1 * m + (1 - b1) * 1.0;
    v = b2 * v + (1 - b2) * 1.0;
    double mh = m / (1 - std::pow(b1, t));
    double vh = v / (1 - std::pow(b2, t));
    x_ref -= lr * mh / (std::sqrt(vh) + eps);
    expected.push_back(x_ref);
  }

  ParamStore ps;
  ps.add("x", {}).v = {2.0};
  AdamState st;
  st.hyper.lr = lr;
  GradMap grads;
  grads.emplace("x", Tensor::scalar(1.0));
  for (int t = 0; t < 10; ++t) {
    adam_step(ps, grads, st);
    CHECK(ps.at("x").at(0) == Catch::Approx(expected[static_cast<std::size_t>(t)]).epsilon(1e-15));
  }
  // first update magnitude is ~lr once bias-corrected
  CHECK(std::abs(2.0 - expected[0]) == Catch::Approx(0.1).epsilon(1e-6));
}

TEST_CASE("adam: deterministic given identical state") {
  auto run = []() {
    ParamStore ps;
    ps.add("w", {4}).v = {0.1, 0.2, 0.3, 0.4};
    AdamState st;
    GradMap grads;
    grads.emplace("w", Tensor::vec({0.5, -0.25, 1.0, -1.0}));
    for (int i = 0; i < 7; ++i) adam_step(ps, grads, st);
    return ps.at("w").v;
  };
  CHECK(run() == run());
}

TEST_CASE("adam: gradient shape mismatch is a contract violation") {
  ParamStore ps;
  ps.add("w", {4});
  AdamState st;
  GradMap grads;
  grads.emplace("w", Tensor::vec({1.0, 2.0}));
  CHECK_THROWS_AS(adam_step(ps, grads, st), ContractViolation);
}

TEST_CASE("adam: parameters not covered by the gradient map stay put") {
  ParamStore ps;
  ps.add("a", {2}).v = {1.0, 1.0};
  ps.add("b", {2}).v = {5.0, 5.0};
  AdamState st;
  GradMap grads;
  grads.emplace("a", Tensor::vec({1.0, 1.0}));
  adam_step(ps, grads, st);
  CHECK(ps.at("b").v == std::vector<double>{5.0, 5.0});
  CHECK(ps.at("a").at(0) != 1.0);
}

TEST_CASE("lstm: zero weights and state give zero outputs") {
  ParamStore ps;
  Rng rng(5);
  add_lstm_params(ps, "cell", 3, 4, rng);
  for (auto& [name, t] : ps)
    for (double& x : t.v) x = 0.0;

  Tape tape;
  TapeParams tp(tape, ps);
  LstmVars w = lstm_vars(tp, "cell");
  Var x = tape.constant(Tensor::vec({0.7, -0.3, 0.2}));
  Var zero = tape.constant(Tensor::zeros({4}));
  LstmState out = lstm_step(x, {zero, zero}, w);
  for (int i = 0; i < 4; ++i) {
    CHECK(out.h.val().at(i) == 0.0);
    CHECK(out.c.val().at(i) == 0.0);
  }
}

TEST_CASE("lstm: hidden outputs bounded by 1") {
  Rng rng(17);
  ParamStore ps;
  add_lstm_params(ps, "cell", 5, 6, rng);
  for (auto& [name, t] : ps) oracle::fill_tensor(t, rng, 3.0);

  Tape tape;
  TapeParams tp(tape, ps);
  LstmVars w = lstm_vars(tp, "cell");
  Var h = tape.constant(Tensor::zeros({6}));
  Var c = tape.constant(Tensor::zeros({6}));
  LstmState s{h, c};
  for (int t = 0; t < 4; ++t) {
    Tensor xt = Tensor::zeros({5});
    for (double& v : xt.v) v = rng.uniform(-5.0, 5.0);
    s = lstm_step(tape.constant(xt), s, w);
    for (int i = 0; i < 6; ++i) CHECK(std::abs(s.h.val().at(i)) <= 1.0);
  }
}

TEST_CASE("lstm: gradients match finite differences") {
  Rng rng(23);
  ParamStore ps;
  add_lstm_params(ps, "cell", 3, 4, rng);
  for (auto& [name, t] : ps) oracle::fill_tensor(t, rng, 0.6);

  auto build = [](TapeParams& tp) {
    Tape& tape = tp.tape();
    LstmVars w = lstm_vars(tp, "cell");
    Var zero = tape.constant(Tensor::zeros({4}));
    LstmState s{zero, zero};
    Var x1 = tape.constant(Tensor::vec({0.3, -0.4, 0.8}));
    Var x2 = tape.constant(Tensor::vec({-0.2, 0.5, 0.1}));
    s = lstm_step(x1, s, w);
    s = lstm_step(x2, s, w);
    return mean(concat_last({s.h, s.c}));
  };
  auto rep = oracle::gradient_report(ps, build);
  INFO("worst: " << rep.worst);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("checkpoint: save/load/save produces identical bytes") {
  Rng rng(77);
  ParamStore ps;
  oracle::fill_tensor(ps.add("layer.w", {3, 4}), rng, 2.5);
  oracle::fill_tensor(ps.add("layer.b", {4}), rng, 1e-7);
  ps.add("scalar", {}).v = {0x1.fffffffffffffp-3};
  AdamState st;
  GradMap grads;
  grads.emplace("layer.w", Tensor::zeros({3, 4}));
  for (auto& [k, g] : grads) oracle::fill_tensor(g, rng);
  adam_step(ps, grads, st);

  std::string p1 = temp_path("kprn_ck_a.txt");
  std::string p2 = temp_path("kprn_ck_b.txt");
  save_checkpoint(p1, ps, st, 42);
  Checkpoint ck = load_checkpoint(p1);
  CHECK(ck.iteration == 42);
  CHECK(ck.adam.step == st.step);
  save_checkpoint(p2, ck.params, ck.adam, ck.iteration);

  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);

  // exact value round trip
  for (const auto& [name, t] : ps) {
    const Tensor& r = ck.params.at(name);
    REQUIRE(r.same_shape(t));
    for (std::int64_t i = 0; i < t.size(); ++i) CHECK(r.at(i) == t.at(i));
  }
  CHECK(ck.adam.m.at("layer.w").v == st.m.at("layer.w").v);
}

TEST_CASE("checkpoint: version mismatch and corruption are clean errors") {
  std::string p = temp_path("kprn_ck_bad.txt");
  {
    std::ofstream f(p);
    f << "kprn-checkpoint v9\niteration 3\nend\n";
  }
  CHECK_THROWS_AS(load_checkpoint(p), DataError);
  {
    std::ofstream f(p);
    f << "kprn-checkpoint v1\niteration 3\nparam w 1 4\n1.0 2.0\n";  // truncated values + no end
  }
  CHECK_THROWS_AS(load_checkpoint(p), DataError);
  {
    std::ofstream f(p);
    f << "kprn-checkpoint v1\niteration banana\nend\n";
  }
  CHECK_THROWS_AS(load_checkpoint(p), DataError);
  CHECK_THROWS_AS(load_checkpoint(temp_path("kprn_no_such_file.txt")), DataError);
}
