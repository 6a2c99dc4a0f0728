#ifndef DACT_ENCODER_H
#define DACT_ENCODER_H

#include <string>
#include <utility>
#include <vector>

#include "dact/tape.h"
#include "dact/tensor.h"

namespace dact {

// Token embedding matrix. Index 0 is reserved padding (always the zero
// vector, never updated), index 1 the unknown-word bucket.
struct EmbeddingTable {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Parameter* table = nullptr;  // [V, d]

  int vocab_size() const { return table->value.shape[0]; }
  int dim() const { return table->value.shape[1]; }
};

EmbeddingTable make_embedding(ParameterStore& store, const std::string& prefix,
                              int vocab_size, int dim, Rng& rng);

// Gate order in the stacked weight matrices: input, forget, output, candidate.
struct LstmCellParams {
  Parameter* w = nullptr;  // [4H, in_dim]
  Parameter* u = nullptr;  // [4H, H]
  Parameter* b = nullptr;  // [4H]

  int hidden_size() const { return u->value.shape[1]; }
  int input_dim() const { return w->value.shape[1]; }
};

// Glorot weights, zero bias except the forget-gate slice, which starts at 1
// so memory is carried through early in training.
LstmCellParams make_lstm_cell(ParameterStore& store, const std::string& prefix,
                              int input_dim, int hidden_size, Rng& rng);

struct BiLstm {
  LstmCellParams fwd;
  LstmCellParams bwd;
};

BiLstm make_bilstm(ParameterStore& store, const std::string& prefix,
                   int input_dim, int hidden_size, Rng& rng);

struct LstmStepOut {
  Value h;
  Value c;
  Value gate_i;
  Value gate_f;
  Value gate_o;
  Value candidate;
};

LstmStepOut lstm_step_detail(Tape& t, const LstmCellParams& cell, Value h_prev,
                             Value c_prev, Value x);

std::pair<Value, Value> lstm_step(Tape& t, const LstmCellParams& cell,
                                  Value h_prev, Value c_prev, Value x);

// One output per input position: the forward state at that position
// concatenated with the backward state aligned to it. Initial states are
// zero vectors.
std::vector<Value> bilstm_run(Tape& t, const BiLstm& pair,
                              const std::vector<Value>& inputs);

enum class Pooling { Last, Mean };

// Last: each direction's own final state, i.e. the forward half of the final
// position and the backward half of the first. Mean: elementwise average.
Value pool(Tape& t, const std::vector<Value>& states, Pooling mode);

struct HierEncoderConfig {
  int hidden_size = 300;
  Pooling pooling = Pooling::Last;
  double dropout_rate = 0.2;
  int num_stacked_layers = 1;
  bool dropout_on_embeddings = true;
};

struct HierEncoderParams {
  EmbeddingTable embedding;
  std::vector<BiLstm> word_layers;
  std::vector<BiLstm> conv_layers;
  HierEncoderConfig config;

  int output_dim() const { return 2 * config.hidden_size; }
};

// conv_input_extra widens the conversation layer's input beyond the pooled
// utterance vector, for callers that concatenate side features onto it.
HierEncoderParams make_hier_encoder(ParameterStore& store,
                                    const HierEncoderConfig& config,
                                    int vocab_size, int embed_dim, Rng& rng,
                                    int conv_input_extra = 0);

// One embedding vector per token; padding indices give a constant zero leaf
// detached from the table. Dropout applies in training mode only.
std::vector<Value> embed_utterance(Tape& t, const std::vector<int>& tokens,
                                   const EmbeddingTable& table,
                                   double dropout_rate, Rng& rng,
                                   bool training);

// Utterance vector: padding tokens are skipped entirely (mask semantics), the
// rest are embedded, run through the stacked word-level BiLSTM and pooled.
// At least one non-padding token is required.
Value encode_utterance(Tape& t, const std::vector<int>& tokens,
                       const HierEncoderParams& enc, Rng& rng, bool training);

// Conversation-level BiLSTM over utterance vectors; one contextual vector
// per utterance.
std::vector<Value> encode_conversation(Tape& t, const std::vector<Value>& vs,
                                       const HierEncoderParams& enc, Rng& rng,
                                       bool training);

}  // namespace dact

#endif  // DACT_ENCODER_H
