#include "dact/extensions.h"

#include <cmath>
#include <stdexcept>

namespace dact {

AttentionOut intra_attention(Tape& t, const std::vector<Value>& gs, int window,
                             bool scaled) {
  if (window < 1) {
    throw std::invalid_argument("attention window must be >= 1");
  }
  if (gs.empty()) {
    throw std::invalid_argument("attention needs at least one vector");
  }
  int r = static_cast<int>(gs.size());
  int dim = static_cast<int>(t.value(gs[0]).numel());
  double sim_scale = scaled ? 1.0 / std::sqrt(static_cast<double>(dim)) : 1.0;

  AttentionOut out;
  for (int j = 0; j < r; ++j) {
    int lo = std::max(0, j - window);
    if (lo == j) {
      out.context.push_back(t.input(Tensor::zeros({dim})));
      out.weights.emplace_back();
    } else {
      std::vector<Value> sims;
      for (int m = lo; m < j; ++m) {
        Value dot = t.sum(t.mul(gs[j], gs[m]));
        sims.push_back(scaled ? t.scale(dot, sim_scale) : dot);
      }
      Value w = t.softmax(t.concat(sims, 0));
      std::vector<Value> terms;
      for (int m = lo; m < j; ++m) {
        terms.push_back(t.mul_scalar(gs[m], t.slice(w, m - lo, 1)));
      }
      out.context.push_back(terms.size() == 1 ? terms[0] : t.add_n(terms));
      const Tensor& wv = t.value(w);
      out.weights.emplace_back(wv.data.begin(), wv.data.end());
    }
    out.augmented.push_back(t.concat({gs[j], out.context.back()}, 0));
  }
  return out;
}

PosEncoderParams make_pos_encoder(ParameterStore& store, int num_tags, int dim,
                                  int hidden_size, Rng& rng) {
  if (dim < 1 || hidden_size < 1) {
    throw std::invalid_argument("tag encoder needs positive sizes");
  }
  PosEncoderParams enc;
  enc.embedding = make_embedding(store, "pos.embed", num_tags, dim, rng);
  enc.layer = make_bilstm(store, "pos.word", dim, hidden_size, rng);
  return enc;
}

Value encode_pos(Tape& t, const std::vector<int>& pos_ids,
                 const PosEncoderParams& enc, Rng& rng, bool training) {
  std::vector<int> kept;
  for (int id : pos_ids) {
    if (id != EmbeddingTable::kPad) kept.push_back(id);
  }
  if (kept.empty()) {
    throw std::invalid_argument("tag sequence has no non-padding entries");
  }
  double embed_rate = enc.dropout_on_embeddings ? enc.dropout_rate : 0.0;
  std::vector<Value> xs =
      embed_utterance(t, kept, enc.embedding, embed_rate, rng, training);
  std::vector<Value> states = bilstm_run(t, enc.layer, xs);
  Value p = pool(t, states, enc.pooling);
  return t.dropout(p, enc.dropout_rate, rng, training);
}

Value fuse(Tape& t, Value g, std::optional<Value> context,
           std::optional<Value> pos) {
  std::vector<Value> parts{g};
  if (context) parts.push_back(*context);
  if (pos) parts.push_back(*pos);
  if (parts.size() == 1) return g;
  return t.concat(parts, 0);
}

}  // namespace dact
