#pragma once

#include <cstdint>
#include <string>

#include "kprn/adam.hpp"
#include "kprn/lstm.hpp"
#include "kprn/params.hpp"
#include "kprn/querylang.hpp"

namespace kprn::model {

struct ModelDims {
  std::int64_t embed_dim = 64;      // encoder word embeddings
  std::int64_t lstm_hidden = 64;    // per direction; query vector is 2x this
  std::int64_t att_hidden = 128;    // hidden width of the three attention MLPs
  std::int64_t decoder_hidden = 256;
  std::int64_t rvis_dim = 256;      // fused pair feature = decoder input width
};

// Dimensions fixed by the dataset rather than the config.
struct FeatureDims {
  std::int64_t c3 = 0;
  std::int64_t c4 = 0;
  std::int64_t know_dim = 0;  // knowledge embedding table dimension

  std::int64_t cnn() const { return c3 + c4; }
  std::int64_t subject_full() const { return cnn() + 30; }
  std::int64_t object_feat() const { return c4 + 5; }
};

inline void add_attention_mlp(diff::ParamStore& store, const std::string& prefix,
                              std::int64_t in_dim, std::int64_t hidden, Rng& rng) {
  store.add_uniform(prefix + ".w1", {in_dim, hidden}, rng);
  store.add_uniform(prefix + ".b1", {hidden}, rng);
  store.add_uniform(prefix + ".w2", {hidden}, rng);
  store.add_uniform(prefix + ".b2", {}, rng);
}

// All trainable tensors of the network, in a fixed creation order so a seed
// pins the whole initialization.
inline diff::ParamStore init_params(const ModelDims& dims, const FeatureDims& f,
                                    std::int64_t vocab_size, std::int64_t label_count,
                                    std::uint64_t seed) {
  KPRN_REQUIRE(f.c3 > 0 && f.c4 > 0 && f.know_dim > 0, "init_params: feature dims unset");
  diff::ParamStore store;
  Rng rng(seed_stream(seed, 0xA11));

  querylang::add_encoder_params(store, vocab_size, dims.embed_dim, dims.lstm_hidden, rng);

  add_attention_mlp(store, "att.sub", f.cnn() + f.know_dim, dims.att_hidden, rng);
  add_attention_mlp(store, "att.obj", f.c4 + f.know_dim, dims.att_hidden, rng);
  add_attention_mlp(store, "att.pair", 2 * dims.lstm_hidden + f.subject_full() + f.object_feat(),
                    dims.att_hidden, rng);

  // placeholder object feature for relation-free queries; starts at zero
  store.add("null_obj", {f.object_feat()});

  store.add_uniform("rec.wv", {f.subject_full() + f.object_feat(), dims.rvis_dim}, rng);
  store.add_uniform("rec.bv", {dims.rvis_dim}, rng);
  store.add_uniform("dec.embed", {vocab_size, dims.rvis_dim}, rng);
  diff::add_lstm_params(store, "dec", dims.rvis_dim, dims.decoder_hidden, rng);
  store.add_uniform("dec.proj.w", {dims.decoder_hidden, vocab_size}, rng);
  store.add_uniform("dec.proj.b", {vocab_size}, rng);

  if (label_count > 0) {
    store.add_uniform("attr.w", {f.cnn(), label_count}, rng);
    store.add_uniform("attr.b", {label_count}, rng);
  }
  return store;
}

}  // namespace kprn::model
