#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "kprn/common.hpp"
#include "kprn/tensor.hpp"

namespace kprn::diff {

// Reverse-mode tape. Nodes are appended in evaluation order, so node ids are
// already a topological order; backward walks them once in reverse.
enum class Op {
  Leaf,
  Matmul,
  Add,
  ConcatLast,
  Relu,
  Sigmoid,
  Tanh,
  Mul,
  RowSoftmax,
  Mean,
  Mse,
  WeightedBce,
  LogSoftmaxNll,
  EmbedLookup,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Matmul: return "matmul";
    case Op::Add: return "add";
    case Op::ConcatLast: return "concat-last-axis";
    case Op::Relu: return "relu";
    case Op::Sigmoid: return "sigmoid";
    case Op::Tanh: return "tanh";
    case Op::Mul: return "elementwise-mul";
    case Op::RowSoftmax: return "row-softmax";
    case Op::Mean: return "mean";
    case Op::Mse: return "mse";
    case Op::WeightedBce: return "weighted-bce";
    case Op::LogSoftmaxNll: return "log-softmax-nll";
    case Op::EmbedLookup: return "embedding-lookup";
  }
  return "?";
}

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& val() const;
};

using GradMap = std::map<std::string, Tensor>;

namespace fmath {

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) {
  if (x > 34.0) return x;
  if (x < -34.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

// softmax of src[0..n) into dst, max-subtracted for stability
inline void softmax_row(const double* src, double* dst, std::int64_t n) {
  double m = src[0];
  for (std::int64_t i = 1; i < n; ++i) m = std::max(m, src[i]);
  double sum = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    dst[i] = std::exp(src[i] - m);
    sum += dst[i];
  }
  for (std::int64_t i = 0; i < n; ++i) dst[i] /= sum;
}

inline double log_sum_exp(const double* src, std::int64_t n) {
  double m = src[0];
  for (std::int64_t i = 1; i < n; ++i) m = std::max(m, src[i]);
  double sum = 0.0;
  for (std::int64_t i = 0; i < n; ++i) sum += std::exp(src[i] - m);
  return m + std::log(sum);
}

}  // namespace fmath

class Tape {
 public:
  struct Node {
    Op op = Op::Leaf;
    std::vector<int> ins;
    Tensor val;
    bool needs_grad = false;
    std::vector<std::int64_t> idx;  // targets (nll) or lookup ids
    int flag = 0;                   // EmbedLookup: 1 = single-id vector output
    std::string name;               // named leaf (parameter)
  };

  Var constant(Tensor t) {
    check_input_finite(t, "constant");
    t.requires_grad = false;
    return push(Op::Leaf, {}, std::move(t), /*needs_grad=*/false);
  }

  Var leaf(const std::string& name, const Tensor& t) {
    check_input_finite(t, name.empty() ? "leaf" : name.c_str());
    Var v = push(Op::Leaf, {}, t, t.requires_grad);
    nodes_[static_cast<std::size_t>(v.id)].name = name;
    return v;
  }

  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].val; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  std::size_t size() const { return nodes_.size(); }

  Var record(Op op, std::vector<int> ins, std::vector<std::int64_t> idx = {}, int flag = 0) {
    Node n;
    n.op = op;
    n.ins = std::move(ins);
    n.idx = std::move(idx);
    n.flag = flag;
    for (int in : n.ins)
      if (nodes_[static_cast<std::size_t>(in)].needs_grad) n.needs_grad = true;
    n.val = compute(n);
    if (!n.val.all_finite())
      throw NumericError(std::string("non-finite output of ") + op_name(op));
    nodes_.push_back(std::move(n));
    Var v;
    v.tape = this;
    v.id = static_cast<int>(nodes_.size()) - 1;
    return v;
  }

  // Recompute every non-leaf node from the current leaf values, in the
  // original order. Deterministic: identical leaves give identical values.
  void replay() {
    for (auto& n : nodes_)
      if (n.op != Op::Leaf) n.val = compute(n);
  }

  // Gradients of a scalar loss w.r.t. every named grad-required leaf.
  // Leaves that the loss does not reach get zero gradients.
  GradMap backward(Var loss) {
    KPRN_REQUIRE(loss.tape == this, "backward: var from another tape");
    const Tensor& lv = value(loss.id);
    KPRN_REQUIRE(lv.is_scalar(), "backward: loss must be scalar, got rank ", lv.rank());

    std::vector<Tensor> grads(nodes_.size());
    std::vector<char> seen(nodes_.size(), 0);
    auto accum = [&](int id) -> Tensor& {
      if (!seen[static_cast<std::size_t>(id)]) {
        grads[static_cast<std::size_t>(id)] = Tensor::zeros(nodes_[static_cast<std::size_t>(id)].val.shape);
        seen[static_cast<std::size_t>(id)] = 1;
      }
      return grads[static_cast<std::size_t>(id)];
    };

    if (nodes_[static_cast<std::size_t>(loss.id)].needs_grad)
      accum(loss.id).v[0] = 1.0;

    for (int id = loss.id; id >= 0; --id) {
      const Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.needs_grad || !seen[static_cast<std::size_t>(id)]) continue;
      if (n.op != Op::Leaf) propagate(n, grads[static_cast<std::size_t>(id)], accum);
    }

    GradMap out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      if (n.op != Op::Leaf || n.name.empty() || !n.val.requires_grad) continue;
      Tensor g = seen[i] ? grads[i] : Tensor::zeros(n.val.shape);
      auto it = out.find(n.name);
      if (it == out.end()) {
        out.emplace(n.name, std::move(g));
      } else {
        for (std::int64_t k = 0; k < g.size(); ++k) it->second.at(k) += g.at(k);
      }
    }
    return out;
  }

 private:
  std::vector<Node> nodes_;

  static void check_input_finite(const Tensor& t, const char* what) {
    if (!t.all_finite())
      throw NumericError(std::string("non-finite input tensor: ") + what);
    KPRN_REQUIRE(Tensor::num_elements(t.shape) == t.size(),
                 "tensor shape/value count mismatch");
  }

  Var push(Op op, std::vector<int> ins, Tensor val, bool needs_grad) {
    Node n;
    n.op = op;
    n.ins = std::move(ins);
    n.val = std::move(val);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    Var v;
    v.tape = this;
    v.id = static_cast<int>(nodes_.size()) - 1;
    return v;
  }

  const Tensor& in(const Node& n, std::size_t k) const {
    return nodes_[static_cast<std::size_t>(n.ins[k])].val;
  }

  // ---- forward computation, shared by record() and replay() ----

  Tensor compute(const Node& n) const {
    switch (n.op) {
      case Op::Leaf: return n.val;
      case Op::Matmul: return fwd_matmul(in(n, 0), in(n, 1));
      case Op::Add: return fwd_add(in(n, 0), in(n, 1));
      case Op::ConcatLast: return fwd_concat(n);
      case Op::Relu: return fwd_unary(in(n, 0), [](double x) { return x > 0.0 ? x : 0.0; });
      case Op::Sigmoid: return fwd_unary(in(n, 0), [](double x) { return fmath::sigmoid(x); });
      case Op::Tanh: return fwd_unary(in(n, 0), [](double x) { return std::tanh(x); });
      case Op::Mul: return fwd_mul(in(n, 0), in(n, 1));
      case Op::RowSoftmax: return fwd_row_softmax(in(n, 0));
      case Op::Mean: return fwd_mean(in(n, 0));
      case Op::Mse: return fwd_mse(in(n, 0), in(n, 1));
      case Op::WeightedBce: return fwd_weighted_bce(in(n, 0), in(n, 1), in(n, 2));
      case Op::LogSoftmaxNll: return fwd_nll(in(n, 0), n.idx);
      case Op::EmbedLookup: return fwd_embed(in(n, 0), n.idx, n.flag);
    }
    throw ContractViolation("unknown op");
  }

  // lift: rank-1 on the left acts as a row vector, on the right as a column
  static void matmul_dims(const Tensor& a, const Tensor& b, std::int64_t& nn,
                          std::int64_t& kk, std::int64_t& mm) {
    KPRN_REQUIRE(a.rank() >= 1 && a.rank() <= 2 && b.rank() >= 1 && b.rank() <= 2,
                 "matmul: rank-1/2 operands required");
    nn = a.rank() == 2 ? a.shape[0] : 1;
    kk = a.rank() == 2 ? a.shape[1] : a.shape[0];
    std::int64_t kb = b.rank() == 2 ? b.shape[0] : b.shape[0];
    mm = b.rank() == 2 ? b.shape[1] : 1;
    KPRN_REQUIRE(kk == kb, "matmul: inner dims ", kk, " vs ", kb);
  }

  static Tensor fwd_matmul(const Tensor& a, const Tensor& b) {
    std::int64_t nn, kk, mm;
    matmul_dims(a, b, nn, kk, mm);
    Tensor out;
    if (a.rank() == 2 && b.rank() == 2) out.shape = {nn, mm};
    else if (a.rank() == 1 && b.rank() == 2) out.shape = {mm};
    else if (a.rank() == 2 && b.rank() == 1) out.shape = {nn};
    // rank-1 x rank-1 -> scalar (shape stays empty)
    out.v.assign(static_cast<std::size_t>(nn * mm), 0.0);
    const double* pa = a.v.data();
    const double* pb = b.v.data();
    double* pc = out.v.data();
    for (std::int64_t i = 0; i < nn; ++i) {
      const double* arow = pa + i * kk;
      double* crow = pc + i * mm;
      for (std::int64_t k = 0; k < kk; ++k) {
        double av = arow[k];
        if (av == 0.0) continue;
        const double* brow = pb + k * mm;
        for (std::int64_t j = 0; j < mm; ++j) crow[j] += av * brow[j];
      }
    }
    return out;
  }

  // broadcast classification for Add/Mul
  enum class Bcast { Same, RowRight, RowLeft, ScalarRight, ScalarLeft };

  static Bcast bcast_kind(const Tensor& a, const Tensor& b, const char* what) {
    if (a.same_shape(b)) return Bcast::Same;
    if (b.is_scalar()) return Bcast::ScalarRight;
    if (a.is_scalar()) return Bcast::ScalarLeft;
    if (a.rank() == 2 && b.rank() == 1 && a.shape[1] == b.shape[0]) return Bcast::RowRight;
    if (b.rank() == 2 && a.rank() == 1 && b.shape[1] == a.shape[0]) return Bcast::RowLeft;
    throw ContractViolation(detail::concat_msg(what, ": shape mismatch"));
  }

  template <typename F>
  static Tensor fwd_bcast(const Tensor& a, const Tensor& b, const char* what, F f) {
    Bcast k = bcast_kind(a, b, what);
    const Tensor& big = (k == Bcast::RowLeft || k == Bcast::ScalarLeft) ? b : a;
    Tensor out = Tensor::zeros(big.shape);
    std::int64_t n = big.size();
    switch (k) {
      case Bcast::Same:
        for (std::int64_t i = 0; i < n; ++i) out.at(i) = f(a.at(i), b.at(i));
        break;
      case Bcast::ScalarRight:
        for (std::int64_t i = 0; i < n; ++i) out.at(i) = f(a.at(i), b.at(0));
        break;
      case Bcast::ScalarLeft:
        for (std::int64_t i = 0; i < n; ++i) out.at(i) = f(a.at(0), b.at(i));
        break;
      case Bcast::RowRight: {
        std::int64_t m = a.shape[1];
        for (std::int64_t i = 0; i < n; ++i) out.at(i) = f(a.at(i), b.at(i % m));
        break;
      }
      case Bcast::RowLeft: {
        std::int64_t m = b.shape[1];
        for (std::int64_t i = 0; i < n; ++i) out.at(i) = f(a.at(i % m), b.at(i));
        break;
      }
    }
    return out;
  }

  static Tensor fwd_add(const Tensor& a, const Tensor& b) {
    return fwd_bcast(a, b, "add", [](double x, double y) { return x + y; });
  }

  static Tensor fwd_mul(const Tensor& a, const Tensor& b) {
    return fwd_bcast(a, b, "elementwise-mul", [](double x, double y) { return x * y; });
  }

  Tensor fwd_concat(const Node& n) const {
    KPRN_REQUIRE(!n.ins.empty(), "concat: needs at least one input");
    const Tensor& first = in(n, 0);
    int rank = first.rank();
    KPRN_REQUIRE(rank == 1 || rank == 2, "concat: rank-1/2 inputs required");
    std::int64_t rows = rank == 2 ? first.shape[0] : 1;
    std::int64_t total_cols = 0;
    for (std::size_t k = 0; k < n.ins.size(); ++k) {
      const Tensor& t = in(n, k);
      KPRN_REQUIRE(t.rank() == rank, "concat: mixed ranks");
      KPRN_REQUIRE((rank == 1 ? 1 : t.shape[0]) == rows, "concat: leading dims differ");
      total_cols += rank == 2 ? t.shape[1] : t.shape[0];
    }
    Tensor out = rank == 2 ? Tensor::zeros({rows, total_cols}) : Tensor::zeros({total_cols});
    std::int64_t off = 0;
    for (std::size_t k = 0; k < n.ins.size(); ++k) {
      const Tensor& t = in(n, k);
      std::int64_t c = rank == 2 ? t.shape[1] : t.shape[0];
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < c; ++j)
          out.v[static_cast<std::size_t>(r * total_cols + off + j)] =
              t.v[static_cast<std::size_t>(r * c + j)];
      off += c;
    }
    return out;
  }

  template <typename F>
  static Tensor fwd_unary(const Tensor& a, F f) {
    Tensor out = a;
    out.requires_grad = false;
    for (double& x : out.v) x = f(x);
    return out;
  }

  static Tensor fwd_row_softmax(const Tensor& a) {
    KPRN_REQUIRE(a.rank() == 1 || a.rank() == 2, "row-softmax: rank-1/2 input");
    std::int64_t rows = a.rank() == 2 ? a.shape[0] : 1;
    std::int64_t cols = a.rank() == 2 ? a.shape[1] : a.shape[0];
    Tensor out = Tensor::zeros(a.shape);
    for (std::int64_t r = 0; r < rows; ++r)
      fmath::softmax_row(a.v.data() + r * cols, out.v.data() + r * cols, cols);
    return out;
  }

  static Tensor fwd_mean(const Tensor& a) {
    double s = 0.0;
    for (double x : a.v) s += x;
    return Tensor::scalar(s / static_cast<double>(a.size()));
  }

  static Tensor fwd_mse(const Tensor& a, const Tensor& b) {
    KPRN_REQUIRE(a.same_shape(b), "mse: shape mismatch");
    double s = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) {
      double d = a.at(i) - b.at(i);
      s += d * d;
    }
    return Tensor::scalar(s / static_cast<double>(a.size()));
  }

  static Tensor fwd_weighted_bce(const Tensor& z, const Tensor& y, const Tensor& w) {
    KPRN_REQUIRE(z.same_shape(y) && z.same_shape(w), "weighted-bce: shape mismatch");
    double s = 0.0;
    for (std::int64_t i = 0; i < z.size(); ++i)
      s += w.at(i) * (fmath::softplus(z.at(i)) - y.at(i) * z.at(i));
    return Tensor::scalar(s / static_cast<double>(z.size()));
  }

  static Tensor fwd_nll(const Tensor& z, const std::vector<std::int64_t>& targets) {
    std::int64_t rows = z.rank() == 2 ? z.shape[0] : 1;
    std::int64_t cols = z.rank() == 2 ? z.shape[1] : z.shape[0];
    KPRN_REQUIRE(z.rank() == 1 || z.rank() == 2, "log-softmax-nll: rank-1/2 logits");
    KPRN_REQUIRE(static_cast<std::int64_t>(targets.size()) == rows,
                 "log-softmax-nll: ", targets.size(), " targets for ", rows, " rows");
    double s = 0.0;
    for (std::int64_t r = 0; r < rows; ++r) {
      std::int64_t t = targets[static_cast<std::size_t>(r)];
      KPRN_REQUIRE(t >= 0 && t < cols, "log-softmax-nll: target out of range");
      const double* row = z.v.data() + r * cols;
      s += fmath::log_sum_exp(row, cols) - row[t];
    }
    return Tensor::scalar(s / static_cast<double>(rows));
  }

  static Tensor fwd_embed(const Tensor& table, const std::vector<std::int64_t>& ids, int flag) {
    KPRN_REQUIRE(table.rank() == 2, "embedding-lookup: table must be rank-2");
    std::int64_t v = table.shape[0], e = table.shape[1];
    KPRN_REQUIRE(flag == 0 || ids.size() == 1, "embedding-lookup: single-id flag with multiple ids");
    Tensor out = flag ? Tensor::zeros({e})
                      : Tensor::zeros({static_cast<std::int64_t>(ids.size()), e});
    for (std::size_t r = 0; r < ids.size(); ++r) {
      std::int64_t id = ids[r];
      KPRN_REQUIRE(id >= 0 && id < v, "embedding-lookup: id ", id, " out of range ", v);
      for (std::int64_t j = 0; j < e; ++j)
        out.v[r * static_cast<std::size_t>(e) + static_cast<std::size_t>(j)] = table.at(id, j);
    }
    return out;
  }

  // ---- backward rules ----

  template <typename AccumFn>
  void propagate(const Node& n, const Tensor& gy, AccumFn accum) {
    auto wants = [&](std::size_t k) {
      return nodes_[static_cast<std::size_t>(n.ins[k])].needs_grad;
    };
    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::Matmul: {
        const Tensor& a = in(n, 0);
        const Tensor& b = in(n, 1);
        std::int64_t nn, kk, mm;
        matmul_dims(a, b, nn, kk, mm);
        if (wants(0)) {
          Tensor& ga = accum(n.ins[0]);  // ga[i,k] += sum_j gy[i,j] * b[k,j]
          for (std::int64_t i = 0; i < nn; ++i)
            for (std::int64_t k = 0; k < kk; ++k) {
              double s = 0.0;
              for (std::int64_t j = 0; j < mm; ++j)
                s += gy.v[static_cast<std::size_t>(i * mm + j)] * b.v[static_cast<std::size_t>(k * mm + j)];
              ga.v[static_cast<std::size_t>(i * kk + k)] += s;
            }
        }
        if (wants(1)) {
          Tensor& gb = accum(n.ins[1]);  // gb[k,j] += sum_i a[i,k] * gy[i,j]
          for (std::int64_t i = 0; i < nn; ++i)
            for (std::int64_t k = 0; k < kk; ++k) {
              double av = a.v[static_cast<std::size_t>(i * kk + k)];
              if (av == 0.0) continue;
              for (std::int64_t j = 0; j < mm; ++j)
                gb.v[static_cast<std::size_t>(k * mm + j)] += av * gy.v[static_cast<std::size_t>(i * mm + j)];
            }
        }
        break;
      }
      case Op::Add: {
        const Tensor& a = in(n, 0);
        const Tensor& b = in(n, 1);
        if (wants(0)) reduce_into(accum(n.ins[0]), gy, a);
        if (wants(1)) reduce_into(accum(n.ins[1]), gy, b);
        break;
      }
      case Op::Mul: {
        const Tensor& a = in(n, 0);
        const Tensor& b = in(n, 1);
        if (wants(0)) {
          Tensor scaled = fwd_mul(expand_like(b, n.val), gy);
          reduce_into(accum(n.ins[0]), scaled, a);
        }
        if (wants(1)) {
          Tensor scaled = fwd_mul(expand_like(a, n.val), gy);
          reduce_into(accum(n.ins[1]), scaled, b);
        }
        break;
      }
      case Op::ConcatLast: {
        const Tensor& out = n.val;
        int rank = out.rank();
        std::int64_t rows = rank == 2 ? out.shape[0] : 1;
        std::int64_t total_cols = rank == 2 ? out.shape[1] : out.shape[0];
        std::int64_t off = 0;
        for (std::size_t k = 0; k < n.ins.size(); ++k) {
          const Tensor& t = in(n, k);
          std::int64_t c = rank == 2 ? t.shape[1] : t.shape[0];
          if (wants(k)) {
            Tensor& g = accum(n.ins[k]);
            for (std::int64_t r = 0; r < rows; ++r)
              for (std::int64_t j = 0; j < c; ++j)
                g.v[static_cast<std::size_t>(r * c + j)] +=
                    gy.v[static_cast<std::size_t>(r * total_cols + off + j)];
          }
          off += c;
        }
        break;
      }
      case Op::Relu: {
        if (!wants(0)) break;
        Tensor& g = accum(n.ins[0]);
        const Tensor& x = in(n, 0);
        for (std::int64_t i = 0; i < x.size(); ++i)
          if (x.at(i) > 0.0) g.at(i) += gy.at(i);
        break;
      }
      case Op::Sigmoid: {
        if (!wants(0)) break;
        Tensor& g = accum(n.ins[0]);
        for (std::int64_t i = 0; i < n.val.size(); ++i) {
          double s = n.val.at(i);
          g.at(i) += gy.at(i) * s * (1.0 - s);
        }
        break;
      }
      case Op::Tanh: {
        if (!wants(0)) break;
        Tensor& g = accum(n.ins[0]);
        for (std::int64_t i = 0; i < n.val.size(); ++i) {
          double t = n.val.at(i);
          g.at(i) += gy.at(i) * (1.0 - t * t);
        }
        break;
      }
      case Op::RowSoftmax: {
        if (!wants(0)) break;
        Tensor& g = accum(n.ins[0]);
        const Tensor& y = n.val;
        std::int64_t rows = y.rank() == 2 ? y.shape[0] : 1;
        std::int64_t cols = y.rank() == 2 ? y.shape[1] : y.shape[0];
        for (std::int64_t r = 0; r < rows; ++r) {
          const double* yr = y.v.data() + r * cols;
          const double* gr = gy.v.data() + r * cols;
          double dotv = 0.0;
          for (std::int64_t j = 0; j < cols; ++j) dotv += yr[j] * gr[j];
          double* out = g.v.data() + r * cols;
          for (std::int64_t j = 0; j < cols; ++j) out[j] += yr[j] * (gr[j] - dotv);
        }
        break;
      }
      case Op::Mean: {
        if (!wants(0)) break;
        Tensor& g = accum(n.ins[0]);
        double c = gy.at(0) / static_cast<double>(in(n, 0).size());
        for (std::int64_t i = 0; i < g.size(); ++i) g.at(i) += c;
        break;
      }
      case Op::Mse: {
        const Tensor& a = in(n, 0);
        const Tensor& b = in(n, 1);
        double c = gy.at(0) * 2.0 / static_cast<double>(a.size());
        if (wants(0)) {
          Tensor& g = accum(n.ins[0]);
          for (std::int64_t i = 0; i < a.size(); ++i) g.at(i) += c * (a.at(i) - b.at(i));
        }
        if (wants(1)) {
          Tensor& g = accum(n.ins[1]);
          for (std::int64_t i = 0; i < a.size(); ++i) g.at(i) -= c * (a.at(i) - b.at(i));
        }
        break;
      }
      case Op::WeightedBce: {
        KPRN_REQUIRE(!wants(1) && !wants(2),
                     "weighted-bce: gradients for targets/weights unsupported");
        if (!wants(0)) break;
        const Tensor& z = in(n, 0);
        const Tensor& y = in(n, 1);
        const Tensor& w = in(n, 2);
        Tensor& g = accum(n.ins[0]);
        double c = gy.at(0) / static_cast<double>(z.size());
        for (std::int64_t i = 0; i < z.size(); ++i)
          g.at(i) += c * w.at(i) * (fmath::sigmoid(z.at(i)) - y.at(i));
        break;
      }
      case Op::LogSoftmaxNll: {
        if (!wants(0)) break;
        const Tensor& z = in(n, 0);
        Tensor& g = accum(n.ins[0]);
        std::int64_t rows = z.rank() == 2 ? z.shape[0] : 1;
        std::int64_t cols = z.rank() == 2 ? z.shape[1] : z.shape[0];
        double c = gy.at(0) / static_cast<double>(rows);
        std::vector<double> p(static_cast<std::size_t>(cols));
        for (std::int64_t r = 0; r < rows; ++r) {
          fmath::softmax_row(z.v.data() + r * cols, p.data(), cols);
          double* gr = g.v.data() + r * cols;
          for (std::int64_t j = 0; j < cols; ++j) gr[j] += c * p[static_cast<std::size_t>(j)];
          gr[n.idx[static_cast<std::size_t>(r)]] -= c;
        }
        break;
      }
      case Op::EmbedLookup: {
        if (!wants(0)) break;
        Tensor& g = accum(n.ins[0]);
        std::int64_t e = in(n, 0).shape[1];
        for (std::size_t r = 0; r < n.idx.size(); ++r) {
          std::int64_t id = n.idx[r];
          for (std::int64_t j = 0; j < e; ++j)
            g.at(id, j) += gy.v[r * static_cast<std::size_t>(e) + static_cast<std::size_t>(j)];
        }
        break;
      }
    }
  }

  // upstream gradient `g` (shaped like the op output) folded back into the
  // shape of operand `ref`, summing over broadcast positions
  static void reduce_into(Tensor& dst, const Tensor& g, const Tensor& ref) {
    if (ref.same_shape(g)) {
      for (std::int64_t i = 0; i < g.size(); ++i) dst.at(i) += g.at(i);
      return;
    }
    if (ref.is_scalar()) {
      double s = 0.0;
      for (double x : g.v) s += x;
      dst.at(0) += s;
      return;
    }
    // row broadcast: ref is rank-1 of length cols(g)
    std::int64_t m = ref.shape[0];
    for (std::int64_t i = 0; i < g.size(); ++i) dst.at(i % m) += g.at(i);
  }

  // operand expanded to the op's output shape (for Mul backward)
  static Tensor expand_like(const Tensor& t, const Tensor& like) {
    if (t.same_shape(like)) return t;
    Tensor out = Tensor::zeros(like.shape);
    if (t.is_scalar()) {
      for (double& x : out.v) x = t.at(0);
      return out;
    }
    std::int64_t m = t.shape[0];
    for (std::int64_t i = 0; i < out.size(); ++i) out.at(i) = t.at(i % m);
    return out;
  }
};

inline const Tensor& Var::val() const { return tape->value(id); }

// ---- op surface ----

inline void same_tape(Var a, Var b) {
  KPRN_REQUIRE(a.tape == b.tape, "operands from different tapes");
}

inline Var matmul(Var a, Var b) {
  same_tape(a, b);
  return a.tape->record(Op::Matmul, {a.id, b.id});
}
inline Var add(Var a, Var b) {
  same_tape(a, b);
  return a.tape->record(Op::Add, {a.id, b.id});
}
inline Var mul(Var a, Var b) {
  same_tape(a, b);
  return a.tape->record(Op::Mul, {a.id, b.id});
}
inline Var concat_last(const std::vector<Var>& parts) {
  KPRN_REQUIRE(!parts.empty(), "concat: empty input list");
  std::vector<int> ids;
  for (Var p : parts) {
    same_tape(parts[0], p);
    ids.push_back(p.id);
  }
  return parts[0].tape->record(Op::ConcatLast, std::move(ids));
}
inline Var relu(Var a) { return a.tape->record(Op::Relu, {a.id}); }
inline Var sigmoid(Var a) { return a.tape->record(Op::Sigmoid, {a.id}); }
inline Var tanh_op(Var a) { return a.tape->record(Op::Tanh, {a.id}); }
inline Var row_softmax(Var a) { return a.tape->record(Op::RowSoftmax, {a.id}); }
inline Var mean(Var a) { return a.tape->record(Op::Mean, {a.id}); }
inline Var mse(Var a, Var b) {
  same_tape(a, b);
  return a.tape->record(Op::Mse, {a.id, b.id});
}
inline Var weighted_bce(Var logits, Var targets, Var weights) {
  same_tape(logits, targets);
  same_tape(logits, weights);
  return logits.tape->record(Op::WeightedBce, {logits.id, targets.id, weights.id});
}
inline Var log_softmax_nll(Var logits, std::vector<std::int64_t> targets) {
  return logits.tape->record(Op::LogSoftmaxNll, {logits.id}, std::move(targets));
}
inline Var embed_lookup(Var table, std::vector<std::int64_t> ids) {
  return table.tape->record(Op::EmbedLookup, {table.id}, std::move(ids), 0);
}
inline Var embed_row(Var table, std::int64_t id) {
  return table.tape->record(Op::EmbedLookup, {table.id}, {id}, 1);
}

inline std::size_t argmax(const std::vector<double>& v) {
  KPRN_REQUIRE(!v.empty(), "argmax on empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace kprn::diff
