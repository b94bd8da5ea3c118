#pragma once

#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "kprn/common.hpp"

namespace kprn::wordvec {

// Word out of vocabulary falls back to this entry; it always exists.
inline constexpr const char* kUnknownWord = "unk";

struct ParseError : DataError {
  using DataError::DataError;
};

// Immutable after load; shareable across threads.
class EmbeddingTable {
 public:
  EmbeddingTable(int dim, std::unordered_map<std::string, std::vector<double>> vectors)
      : dim_(dim), vectors_(std::move(vectors)) {
    if (!vectors_.count(kUnknownWord))
      vectors_.emplace(kUnknownWord, std::vector<double>(static_cast<std::size_t>(dim_), 0.0));
  }

  int dim() const { return dim_; }
  std::size_t size() const { return vectors_.size(); }
  bool contains(const std::string& word) const { return vectors_.count(lowercase(word)) > 0; }

  // Total: unknown words map to "unk". Tokens are case-folded first.
  const std::vector<double>& lookup(const std::string& word) const {
    auto it = vectors_.find(lowercase(word));
    if (it == vectors_.end()) it = vectors_.find(kUnknownWord);
    return it->second;
  }

  // Multi-word phrases average their word vectors.
  std::vector<double> lookup_phrase(const std::string& phrase) const {
    std::istringstream is(phrase);
    std::string word;
    std::vector<double> acc(static_cast<std::size_t>(dim_), 0.0);
    int n = 0;
    while (is >> word) {
      const auto& v = lookup(word);
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
      ++n;
    }
    if (n > 1)
      for (double& x : acc) x /= static_cast<double>(n);
    return acc;
  }

 private:
  int dim_;
  std::unordered_map<std::string, std::vector<double>> vectors_;
};

// GloVe text layout: `word v1 v2 ... vd`, one entry per line. The first line
// fixes d. Duplicate words: last occurrence wins, with a warning.
inline EmbeddingTable load_embeddings(std::istream& in,
                                      std::vector<std::string>* warnings = nullptr) {
  std::unordered_map<std::string, std::vector<double>> vectors;
  std::string line;
  int dim = -1;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    std::vector<double> vec;
    double x;
    while (ls >> x) vec.push_back(x);
    if (word.empty() && vec.empty()) continue;
    if (dim < 0) {
      if (vec.empty())
        throw ParseError("embedding line " + std::to_string(line_no) + ": no values");
      dim = static_cast<int>(vec.size());
    }
    if (static_cast<int>(vec.size()) != dim)
      throw ParseError("embedding line " + std::to_string(line_no) + ": expected " +
                       std::to_string(dim) + " values, got " + std::to_string(vec.size()));
    std::string folded = lowercase(word);
    if (vectors.count(folded) && warnings)
      warnings->push_back("duplicate embedding entry '" + folded + "' at line " +
                          std::to_string(line_no) + "; last occurrence wins");
    vectors[folded] = std::move(vec);
  }
  if (dim < 0) throw ParseError("embedding stream is empty");
  return EmbeddingTable(dim, std::move(vectors));
}

inline EmbeddingTable load_embeddings_file(const std::string& path,
                                           std::vector<std::string>* warnings = nullptr) {
  std::ifstream f(path);
  KPRN_DATA_REQUIRE(f.good(), "cannot open embedding file: ", path);
  return load_embeddings(f, warnings);
}

// cos(a, b); zero-norm arguments give 0 so degenerate "unk" entries stay legal.
inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  KPRN_REQUIRE(a.size() == b.size(), "cosine: dimension mismatch ", a.size(), " vs ", b.size());
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

// Per-proposal semantic similarity of the detector category to the query's
// subject and (optional) object words.
struct KnowledgePriors {
  std::vector<double> sim_subject;
  std::vector<double> sim_object;
};

inline KnowledgePriors knowledge_priors(const EmbeddingTable& table,
                                        const std::vector<std::string>& categories,
                                        const std::string& subject,
                                        const std::string& object = "") {
  KPRN_REQUIRE(!categories.empty(), "knowledge_priors: no categories");
  KnowledgePriors out;
  out.sim_subject.reserve(categories.size());
  out.sim_object.assign(categories.size(), 0.0);
  std::vector<double> emb_s = table.lookup_phrase(subject);
  std::vector<double> emb_o;
  if (!object.empty()) emb_o = table.lookup_phrase(object);
  // sqrt rounding can push a same-word cosine one ulp past 1; the priors are
  // contractually inside [-1, 1]
  auto clamp1 = [](double x) { return std::clamp(x, -1.0, 1.0); };
  for (std::size_t i = 0; i < categories.size(); ++i) {
    std::vector<double> emb_c = table.lookup_phrase(categories[i]);
    out.sim_subject.push_back(clamp1(cosine(emb_c, emb_s)));
    if (!object.empty()) out.sim_object[i] = clamp1(cosine(emb_c, emb_o));
  }
  return out;
}

}  // namespace kprn::wordvec
