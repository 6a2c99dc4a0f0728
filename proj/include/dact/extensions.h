#ifndef DACT_EXTENSIONS_H
#define DACT_EXTENSIONS_H

#include <optional>
#include <string>
#include <vector>

#include "dact/encoder.h"
#include "dact/tape.h"

namespace dact {

struct AttentionConfig {
  bool enabled = false;
  int window = 3;      // how many preceding utterances are attended to
  bool scaled = false;  // divide similarities by sqrt(dim)
};

enum class PosFusion { PreClassifier, PreConversation };

struct PosConfig {
  bool enabled = false;
  int dim = 32;
  PosFusion fusion = PosFusion::PreClassifier;
};

struct AttentionOut {
  std::vector<Value> augmented;  // [g_j ; c_j], one per utterance
  std::vector<Value> context;    // c_j alone; c of the first utterance is zero
  // realized weight rows, one distribution per utterance over its window,
  // ordered oldest predecessor first; empty row for the first utterance
  std::vector<std::vector<double>> weights;
};

// Context vector per utterance: a softmax over dot-product similarities with
// the `window` preceding utterance states, applied to those same states.
AttentionOut intra_attention(Tape& t, const std::vector<Value>& gs, int window,
                             bool scaled = false);

// Tag-sequence encoder running beside the word-level one: its own embedding
// table and a single bidirectional layer over the tag embeddings.
struct PosEncoderParams {
  EmbeddingTable embedding;
  BiLstm layer;
  Pooling pooling = Pooling::Last;
  double dropout_rate = 0.2;
  bool dropout_on_embeddings = true;

  int hidden_size() const { return layer.fwd.hidden_size(); }
  int output_dim() const { return 2 * hidden_size(); }
};

PosEncoderParams make_pos_encoder(ParameterStore& store, int num_tags, int dim,
                                  int hidden_size, Rng& rng);

// Same pipeline as encode_utterance, over tag ids: padding filtered out,
// embedded, run bidirectionally, pooled. At least one non-padding tag.
Value encode_pos(Tape& t, const std::vector<int>& pos_ids,
                 const PosEncoderParams& enc, Rng& rng, bool training);

// Classifier input assembly, fixed order [g ; c ; p]. With neither extra the
// input is g itself, same node.
Value fuse(Tape& t, Value g, std::optional<Value> context,
           std::optional<Value> pos);

}  // namespace dact

#endif  // DACT_EXTENSIONS_H
