#include "dact/encoder.h"

#include <algorithm>
#include <stdexcept>

namespace dact {

EmbeddingTable make_embedding(ParameterStore& store, const std::string& prefix,
                              int vocab_size, int dim, Rng& rng) {
  if (vocab_size < 2 || dim < 1) {
    throw std::invalid_argument(
        "embedding table needs at least pad+unk rows and one dimension");
  }
  EmbeddingTable e;
  e.table = &store.add(prefix + ".table", {vocab_size, dim},
                       InitSpec::uniform(-0.05, 0.05), rng);
  for (int j = 0; j < dim; ++j) e.table->value.at(EmbeddingTable::kPad, j) = 0.0;
  return e;
}

LstmCellParams make_lstm_cell(ParameterStore& store, const std::string& prefix,
                              int input_dim, int hidden_size, Rng& rng) {
  if (input_dim < 1 || hidden_size < 1) {
    throw std::invalid_argument("lstm cell needs positive dimensions");
  }
  LstmCellParams cell;
  cell.w = &store.add(prefix + ".w", {4 * hidden_size, input_dim},
                      InitSpec::glorot(), rng);
  cell.u = &store.add(prefix + ".u", {4 * hidden_size, hidden_size},
                      InitSpec::glorot(), rng);
  cell.b = &store.add(prefix + ".b", {4 * hidden_size}, InitSpec::zeros(), rng);
  for (int i = hidden_size; i < 2 * hidden_size; ++i) cell.b->value.at(i) = 1.0;
  return cell;
}

BiLstm make_bilstm(ParameterStore& store, const std::string& prefix,
                   int input_dim, int hidden_size, Rng& rng) {
  BiLstm pair;
  pair.fwd = make_lstm_cell(store, prefix + ".fwd", input_dim, hidden_size, rng);
  pair.bwd = make_lstm_cell(store, prefix + ".bwd", input_dim, hidden_size, rng);
  return pair;
}

LstmStepOut lstm_step_detail(Tape& t, const LstmCellParams& cell, Value h_prev,
                             Value c_prev, Value x) {
  int h = cell.hidden_size();
  if (t.value(x).rank() != 1 || t.value(x).shape[0] != cell.input_dim()) {
    throw std::invalid_argument("lstm input has shape " +
                                shape_str(t.value(x).shape) + ", cell expects [" +
                                std::to_string(cell.input_dim()) + "]");
  }
  if (t.value(h_prev).shape != std::vector<int>{h} ||
      t.value(c_prev).shape != std::vector<int>{h}) {
    throw std::invalid_argument("lstm state size does not match hidden size " +
                                std::to_string(h));
  }
  Value z = t.add(t.add(t.matmul(t.param(*cell.w), x),
                        t.matmul(t.param(*cell.u), h_prev)),
                  t.param(*cell.b));
  LstmStepOut out;
  out.gate_i = t.sigmoid(t.slice(z, 0, h));
  out.gate_f = t.sigmoid(t.slice(z, h, h));
  out.gate_o = t.sigmoid(t.slice(z, 2 * h, h));
  out.candidate = t.tanh(t.slice(z, 3 * h, h));
  out.c = t.add(t.mul(out.gate_f, c_prev), t.mul(out.gate_i, out.candidate));
  out.h = t.mul(out.gate_o, t.tanh(out.c));
  return out;
}

std::pair<Value, Value> lstm_step(Tape& t, const LstmCellParams& cell,
                                  Value h_prev, Value c_prev, Value x) {
  LstmStepOut out = lstm_step_detail(t, cell, h_prev, c_prev, x);
  return {out.h, out.c};
}

std::vector<Value> bilstm_run(Tape& t, const BiLstm& pair,
                              const std::vector<Value>& inputs) {
  if (inputs.empty()) {
    throw std::invalid_argument("bilstm_run needs at least one input");
  }
  int n = static_cast<int>(inputs.size());
  int h = pair.fwd.hidden_size();

  std::vector<Value> fwd_states(static_cast<size_t>(n));
  Value hs = t.input(Tensor::zeros({h}));
  Value cs = t.input(Tensor::zeros({h}));
  for (int k = 0; k < n; ++k) {
    auto [nh, nc] = lstm_step(t, pair.fwd, hs, cs, inputs[static_cast<size_t>(k)]);
    fwd_states[static_cast<size_t>(k)] = nh;
    hs = nh;
    cs = nc;
  }

  std::vector<Value> bwd_states(static_cast<size_t>(n));
  hs = t.input(Tensor::zeros({h}));
  cs = t.input(Tensor::zeros({h}));
  for (int k = n - 1; k >= 0; --k) {
    auto [nh, nc] = lstm_step(t, pair.bwd, hs, cs, inputs[static_cast<size_t>(k)]);
    bwd_states[static_cast<size_t>(k)] = nh;
    hs = nh;
    cs = nc;
  }

  std::vector<Value> out(static_cast<size_t>(n));
  for (int k = 0; k < n; ++k) {
    out[static_cast<size_t>(k)] = t.concat(
        {fwd_states[static_cast<size_t>(k)], bwd_states[static_cast<size_t>(k)]}, 0);
  }
  return out;
}

Value pool(Tape& t, const std::vector<Value>& states, Pooling mode) {
  if (states.empty()) throw std::invalid_argument("pool of empty sequence");
  int dim = t.value(states[0]).shape[0];
  if (mode == Pooling::Mean) {
    return t.scale(t.add_n(states), 1.0 / static_cast<double>(states.size()));
  }
  if (dim % 2 != 0) {
    throw std::invalid_argument("last pooling needs an even state size");
  }
  int h = dim / 2;
  return t.concat({t.slice(states.back(), 0, h), t.slice(states.front(), h, h)},
                  0);
}

HierEncoderParams make_hier_encoder(ParameterStore& store,
                                    const HierEncoderConfig& config,
                                    int vocab_size, int embed_dim, Rng& rng,
                                    int conv_input_extra) {
  if (config.hidden_size < 1 || config.num_stacked_layers < 1) {
    throw std::invalid_argument("encoder needs positive sizes");
  }
  if (config.dropout_rate < 0.0 || config.dropout_rate >= 1.0) {
    throw std::invalid_argument("dropout rate must be in [0,1)");
  }
  if (conv_input_extra < 0) {
    throw std::invalid_argument("conversation input extra must be >= 0");
  }
  HierEncoderParams enc;
  enc.config = config;
  enc.embedding = make_embedding(store, "embed", vocab_size, embed_dim, rng);
  int h = config.hidden_size;
  for (int l = 0; l < config.num_stacked_layers; ++l) {
    int in_dim = l == 0 ? embed_dim : 2 * h;
    enc.word_layers.push_back(
        make_bilstm(store, "word" + std::to_string(l), in_dim, h, rng));
  }
  for (int l = 0; l < config.num_stacked_layers; ++l) {
    int in_dim = l == 0 ? 2 * h + conv_input_extra : 2 * h;
    enc.conv_layers.push_back(
        make_bilstm(store, "conv" + std::to_string(l), in_dim, h, rng));
  }
  return enc;
}

std::vector<Value> embed_utterance(Tape& t, const std::vector<int>& tokens,
                                   const EmbeddingTable& table,
                                   double dropout_rate, Rng& rng,
                                   bool training) {
  if (tokens.empty()) {
    throw std::invalid_argument("embed_utterance needs at least one token");
  }
  int v = table.vocab_size();
  Value tab = t.param(*table.table);
  std::vector<Value> out;
  out.reserve(tokens.size());
  for (int idx : tokens) {
    if (idx < 0 || idx >= v) {
      throw std::invalid_argument("token index " + std::to_string(idx) +
                                  " outside vocabulary of size " +
                                  std::to_string(v));
    }
    Value e = idx == EmbeddingTable::kPad
                  ? t.input(Tensor::zeros({table.dim()}))
                  : t.select_row(tab, idx);
    out.push_back(t.dropout(e, dropout_rate, rng, training));
  }
  return out;
}

Value encode_utterance(Tape& t, const std::vector<int>& tokens,
                       const HierEncoderParams& enc, Rng& rng, bool training) {
  std::vector<int> kept;
  kept.reserve(tokens.size());
  for (int idx : tokens) {
    if (idx != EmbeddingTable::kPad) kept.push_back(idx);
  }
  if (kept.empty()) {
    throw std::invalid_argument(
        "utterance has no tokens besides padding; nothing to encode");
  }
  double embed_rate =
      enc.config.dropout_on_embeddings ? enc.config.dropout_rate : 0.0;
  std::vector<Value> seq =
      embed_utterance(t, kept, enc.embedding, embed_rate, rng, training);
  for (const BiLstm& layer : enc.word_layers) {
    seq = bilstm_run(t, layer, seq);
  }
  Value v = pool(t, seq, enc.config.pooling);
  return t.dropout(v, enc.config.dropout_rate, rng, training);
}

std::vector<Value> encode_conversation(Tape& t, const std::vector<Value>& vs,
                                       const HierEncoderParams& enc, Rng& rng,
                                       bool training) {
  if (vs.empty()) {
    throw std::invalid_argument("encode_conversation needs >= 1 utterance");
  }
  std::vector<Value> seq = vs;
  for (const BiLstm& layer : enc.conv_layers) {
    seq = bilstm_run(t, layer, seq);
  }
  for (Value& g : seq) {
    g = t.dropout(g, enc.config.dropout_rate, rng, training);
  }
  return seq;
}

}  // namespace dact
