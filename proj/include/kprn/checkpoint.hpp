#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "kprn/adam.hpp"
#include "kprn/params.hpp"

namespace kprn::diff {

// Plain-text checkpoint. Values are written as C hexfloats, which round-trip
// 64-bit doubles exactly. Layout:
//
//   kprn-checkpoint v1
//   iteration <n>
//   adam_step <n>
//   adam_lr <hexfloat>
//   param <name> <rank> <extents...>
//   <values, space separated, one line>
//   adam_m <name> ... / adam_v <name> ...   (same two-line form)
//   end

namespace ckptio {

inline std::string hex_double(double x) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%a", x);
  return buf;
}

inline void write_tensor(std::ostream& os, const std::string& tag,
                         const std::string& name, const Tensor& t) {
  os << tag << ' ' << name << ' ' << t.rank();
  for (auto d : t.shape) os << ' ' << d;
  os << '\n';
  for (std::int64_t i = 0; i < t.size(); ++i) {
    if (i) os << ' ';
    os << hex_double(t.at(i));
  }
  os << '\n';
}

inline Tensor read_tensor_body(std::istream& is, const std::string& head_rest,
                               std::string* name_out) {
  std::istringstream hs(head_rest);
  std::string name;
  int rank = -1;
  hs >> name >> rank;
  KPRN_DATA_REQUIRE(!name.empty() && rank >= 0 && rank <= 2, "checkpoint: bad tensor header");
  std::vector<std::int64_t> shape;
  for (int i = 0; i < rank; ++i) {
    std::int64_t d = 0;
    hs >> d;
    KPRN_DATA_REQUIRE(d > 0, "checkpoint: bad extent");
    shape.push_back(d);
  }
  Tensor t = Tensor::zeros(shape);
  std::string line;
  KPRN_DATA_REQUIRE(static_cast<bool>(std::getline(is, line)), "checkpoint: missing value line");
  const char* p = line.c_str();
  for (std::int64_t i = 0; i < t.size(); ++i) {
    char* end = nullptr;
    double x = std::strtod(p, &end);
    KPRN_DATA_REQUIRE(end != p, "checkpoint: value parse failure at element ", i);
    t.at(i) = x;
    p = end;
  }
  *name_out = name;
  return t;
}

}  // namespace ckptio

struct Checkpoint {
  std::int64_t iteration = 0;
  ParamStore params;
  AdamState adam;
};

inline void save_checkpoint(const std::string& path, const ParamStore& params,
                            const AdamState& adam, std::int64_t iteration) {
  std::ostringstream os;
  os << "kprn-checkpoint v1\n";
  os << "iteration " << iteration << '\n';
  os << "adam_step " << adam.step << '\n';
  os << "adam_lr " << ckptio::hex_double(adam.hyper.lr) << '\n';
  for (const auto& [name, t] : params) ckptio::write_tensor(os, "param", name, t);
  for (const auto& [name, t] : adam.m) ckptio::write_tensor(os, "adam_m", name, t);
  for (const auto& [name, t] : adam.v) ckptio::write_tensor(os, "adam_v", name, t);
  os << "end\n";
  std::ofstream f(path, std::ios::binary);
  KPRN_DATA_REQUIRE(f.good(), "cannot open checkpoint for writing: ", path);
  f << os.str();
  KPRN_DATA_REQUIRE(f.good(), "checkpoint write failed: ", path);
}

// Parses the whole file before touching any state, so a corrupt checkpoint
// never leaves a partially applied result.
inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  KPRN_DATA_REQUIRE(f.good(), "cannot open checkpoint: ", path);
  std::string line;
  KPRN_DATA_REQUIRE(static_cast<bool>(std::getline(f, line)), "checkpoint: empty file: ", path);
  KPRN_DATA_REQUIRE(line == "kprn-checkpoint v1",
                    "checkpoint: unsupported version header '", line, "' in ", path);

  Checkpoint ck;
  bool saw_end = false;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::size_t sp = line.find(' ');
    std::string key = line.substr(0, sp);
    std::string rest = sp == std::string::npos ? "" : line.substr(sp + 1);
    auto parse_count = [&](const std::string& v) {
      char* end = nullptr;
      long long x = std::strtoll(v.c_str(), &end, 10);
      KPRN_DATA_REQUIRE(end != v.c_str() && x >= 0, "checkpoint: bad counter '", v, "' in ", path);
      return static_cast<std::int64_t>(x);
    };
    if (key == "end") {
      saw_end = true;
      break;
    } else if (key == "iteration") {
      ck.iteration = parse_count(rest);
    } else if (key == "adam_step") {
      ck.adam.step = parse_count(rest);
    } else if (key == "adam_lr") {
      char* end = nullptr;
      ck.adam.hyper.lr = std::strtod(rest.c_str(), &end);
      KPRN_DATA_REQUIRE(end != rest.c_str(), "checkpoint: bad adam_lr in ", path);
    } else if (key == "param" || key == "adam_m" || key == "adam_v") {
      std::string name;
      Tensor t = ckptio::read_tensor_body(f, rest, &name);
      if (key == "param") {
        Tensor& dst = ck.params.add(name, t.shape);
        dst.v = t.v;
      } else if (key == "adam_m") {
        ck.adam.m.emplace(name, std::move(t));
      } else {
        ck.adam.v.emplace(name, std::move(t));
      }
    } else {
      throw DataError("checkpoint: unknown record '" + key + "' in " + path);
    }
  }
  KPRN_DATA_REQUIRE(saw_end, "checkpoint: truncated file (no end marker): ", path);
  return ck;
}

}  // namespace kprn::diff
