#pragma once

#include <fstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "kprn/common.hpp"
#include "kprn/lstm.hpp"
#include "kprn/params.hpp"
#include "kprn/tape.hpp"

namespace kprn::querylang {

// Queries longer than this are truncated (with a warning count).
inline constexpr std::size_t kMaxQueryLen = 20;

inline std::vector<std::string> tokenize(const std::string& text) {
  KPRN_REQUIRE(!text.empty(), "tokenize: empty text");
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(cur);
  return tokens;
}

// The seven attribute slots parsed from a query.
struct ParsedSlots {
  std::string category;   // subject head noun
  std::string color;
  std::string size;
  std::string abs_loc;
  std::string rel_loc;    // canonical relation, e.g. "left-of"
  std::string rel_obj;    // landmark head noun
  std::string generic;
};

struct QueryRecord {
  std::vector<std::string> tokens;
  ParsedSlots parsed;
  std::vector<std::string> attr_labels;  // color/size/generic words of the subject part

  bool has_object() const { return !parsed.rel_obj.empty(); }
  bool has_attribute_words() const { return !attr_labels.empty(); }
};

// Closed word lists driving the template parser.
struct Lexicons {
  std::unordered_set<std::string> colors;
  std::unordered_set<std::string> sizes;
  std::unordered_set<std::string> locations;
  std::unordered_set<std::string> nouns;

  static std::unordered_set<std::string> load_wordlist(const std::string& path) {
    std::ifstream f(path);
    KPRN_DATA_REQUIRE(f.good(), "cannot open lexicon file: ", path);
    std::unordered_set<std::string> out;
    std::string word;
    while (f >> word) out.insert(lowercase(word));
    return out;
  }

  static Lexicons load(const std::string& colors_path, const std::string& sizes_path,
                       const std::string& locations_path, const std::string& nouns_path) {
    Lexicons lx;
    lx.colors = load_wordlist(colors_path);
    lx.sizes = load_wordlist(sizes_path);
    lx.locations = load_wordlist(locations_path);
    lx.nouns = load_wordlist(nouns_path);
    return lx;
  }
};

namespace parsedetail {

// Returns the relation length in tokens (0 = no relation starting at i) and
// fills the canonical relation name.
inline std::size_t match_relation(const std::vector<std::string>& t, std::size_t i,
                                  const Lexicons& lx, std::string* name) {
  const std::string& w = t[i];
  if ((w == "left" || w == "right") && i + 1 < t.size() && t[i + 1] == "of") {
    *name = w + "-of";
    return 2;
  }
  if (w == "above" || w == "below" || w == "near") {
    *name = w;
    return 1;
  }
  if (w == "next" && i + 1 < t.size() && t[i + 1] == "to") {
    *name = "next-to";
    return 2;
  }
  // "on" is relational only when what follows is not a bare location word
  // ("man on right" keeps "right" as an absolute location).
  if (w == "on" && i + 1 < t.size() && !lx.locations.count(t[i + 1])) {
    *name = "on";
    return 1;
  }
  return 0;
}

inline bool is_function_word(const std::string& w) {
  static const std::unordered_set<std::string> kFn = {"the", "a", "an", "of", "to", "on", "in", "at"};
  return kFn.count(w) > 0;
}

}  // namespace parsedetail

// Deterministic lexicon/template parse. The first noun before any relation is
// the subject; the first noun after the relation is the landmark object.
// Color/size/location words before the relation describe the subject; any
// remaining descriptive word there lands in the generic slot.
inline QueryRecord parse_attributes(const std::vector<std::string>& tokens, const Lexicons& lx,
                                    std::size_t* warnings = nullptr) {
  QueryRecord q;
  q.tokens = tokens;

  std::size_t rel_at = tokens.size();
  std::size_t rel_len = 0;
  std::string rel_name;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    std::string name;
    std::size_t len = parsedetail::match_relation(tokens, i, lx, &name);
    if (len > 0) {
      rel_at = i;
      rel_len = len;
      rel_name = name;
      break;
    }
  }

  auto classify_subject_part = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const std::string& w = tokens[i];
      if (lx.nouns.count(w)) {
        if (q.parsed.category.empty()) q.parsed.category = w;
      } else if (lx.colors.count(w)) {
        if (q.parsed.color.empty()) q.parsed.color = w;
        q.attr_labels.push_back(w);
      } else if (lx.sizes.count(w)) {
        if (q.parsed.size.empty()) q.parsed.size = w;
        q.attr_labels.push_back(w);
      } else if (lx.locations.count(w)) {
        if (q.parsed.abs_loc.empty()) q.parsed.abs_loc = w;
      } else if (!parsedetail::is_function_word(w)) {
        if (q.parsed.generic.empty()) q.parsed.generic = w;
        q.attr_labels.push_back(w);
      }
    }
  };

  classify_subject_part(0, rel_at);
  if (rel_len > 0) {
    q.parsed.rel_loc = rel_name;
    for (std::size_t i = rel_at + rel_len; i < tokens.size(); ++i) {
      if (lx.nouns.count(tokens[i])) {
        q.parsed.rel_obj = tokens[i];
        break;
      }
    }
  }
  if (q.parsed.category.empty()) {
    q.parsed.category = "unk";
    if (warnings) ++*warnings;
  }
  return q;
}

// Token-to-index map with reserved entries. Assigned tokens keep their first
// occurrence order, so the same corpus always yields the same vocabulary.
class Vocab {
 public:
  static constexpr std::int64_t kPad = 0;
  static constexpr std::int64_t kStart = 1;
  static constexpr std::int64_t kEnd = 2;
  static constexpr std::int64_t kUnk = 3;

  Vocab() {
    for (const char* w : {"<pad>", "<start>", "<end>", "<unk>"}) add(w);
  }

  std::int64_t add(const std::string& token) {
    auto it = index_.find(token);
    if (it != index_.end()) return it->second;
    std::int64_t id = static_cast<std::int64_t>(tokens_.size());
    index_.emplace(token, id);
    tokens_.push_back(token);
    return id;
  }

  std::int64_t index_or_unk(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }

  bool contains(const std::string& token) const { return index_.count(token) > 0; }

  const std::string& token(std::int64_t id) const {
    KPRN_REQUIRE(id >= 0 && id < size(), "vocab index out of range: ", id);
    return tokens_[static_cast<std::size_t>(id)];
  }

  std::int64_t size() const { return static_cast<std::int64_t>(tokens_.size()); }

 private:
  std::unordered_map<std::string, std::int64_t> index_;
  std::vector<std::string> tokens_;
};

// Bi-directional LSTM encoding of a query. h_states[t] is the concatenation
// of the forward and backward hidden states at token t; pooled is the final
// forward state concatenated with the final backward state.
struct EncodedQuery {
  std::vector<diff::Var> h_states;
  diff::Var pooled;
};

inline void add_encoder_params(diff::ParamStore& store, std::int64_t vocab_size,
                               std::int64_t embed_dim, std::int64_t hidden, Rng& rng) {
  store.add_uniform("enc.embed", {vocab_size, embed_dim}, rng);
  diff::add_lstm_params(store, "enc.fwd", embed_dim, hidden, rng);
  diff::add_lstm_params(store, "enc.bwd", embed_dim, hidden, rng);
}

inline EncodedQuery encode_query(diff::TapeParams& tp, const std::vector<std::string>& tokens,
                                 const Vocab& vocab, std::int64_t hidden,
                                 std::size_t* truncation_warnings = nullptr) {
  KPRN_REQUIRE(!tokens.empty(), "encode_query: empty token list");
  std::size_t T = tokens.size();
  if (T > kMaxQueryLen) {
    T = kMaxQueryLen;
    if (truncation_warnings) ++*truncation_warnings;
  }

  diff::Tape& tape = tp.tape();
  diff::Var table = tp("enc.embed");
  std::vector<diff::Var> emb(T);
  for (std::size_t t = 0; t < T; ++t)
    emb[t] = diff::embed_row(table, vocab.index_or_unk(tokens[t]));

  diff::LstmVars fwd = diff::lstm_vars(tp, "enc.fwd");
  diff::LstmVars bwd = diff::lstm_vars(tp, "enc.bwd");
  diff::Var zero = tape.constant(diff::Tensor::zeros({hidden}));

  std::vector<diff::Var> fh(T), bh(T);
  diff::LstmState s{zero, zero};
  for (std::size_t t = 0; t < T; ++t) {
    s = diff::lstm_step(emb[t], s, fwd);
    fh[t] = s.h;
  }
  diff::Var f_final = s.h;
  s = {zero, zero};
  for (std::size_t t = T; t-- > 0;) {
    s = diff::lstm_step(emb[t], s, bwd);
    bh[t] = s.h;
  }
  diff::Var b_final = s.h;

  EncodedQuery out;
  out.h_states.reserve(T);
  for (std::size_t t = 0; t < T; ++t) out.h_states.push_back(diff::concat_last({fh[t], bh[t]}));
  out.pooled = diff::concat_last({f_final, b_final});
  return out;
}

}  // namespace kprn::querylang
