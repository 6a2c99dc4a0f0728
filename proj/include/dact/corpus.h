#ifndef DACT_CORPUS_H
#define DACT_CORPUS_H

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "dact/tensor.h"

namespace dact {

struct Utterance {
  std::vector<std::string> tokens;
  std::string label;
  std::vector<std::string> pos;  // empty when absent; else one tag per token

  bool operator==(const Utterance&) const = default;
};

struct Conversation {
  std::string id;
  std::vector<Utterance> utterances;

  bool operator==(const Conversation&) const = default;
};

enum class Split { Train, Valid, Test };

struct Corpus {
  std::vector<Conversation> conversations;
  std::vector<std::string> label_set;  // index order = first appearance
  Split split = Split::Train;

  int utterance_count() const;
};

// Lower-cases, strips '!' and ',', splits on whitespace. An utterance that
// ends up empty becomes the single unknown-word token.
std::vector<std::string> preprocess(const std::string& text);

// One conversation per line: {"id": str, "utterances": [{"tokens": [str],
// "label": str, "pos": [str] optional}]}. Unknown fields are rejected;
// errors carry the line number.
Corpus load_corpus(const std::string& path);
void save_corpus(const Corpus& corpus, const std::string& path);

struct Vocab {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr const char* kPadToken = "<pad>";
  static constexpr const char* kUnkToken = "<unk>";

  std::vector<std::string> tokens;  // id -> token
  std::unordered_map<std::string, int> index;
  int min_count = 1;

  int size() const { return static_cast<int>(tokens.size()); }
  int lookup(const std::string& tok) const;  // unknown -> kUnk
};

// Word types with frequency >= min_count get indices, in first-appearance
// order after the reserved pad/unk slots. Build from the training split only.
Vocab build_vocab(const Corpus& corpus, int min_count);

// Same construction over the POS tag arrays.
Vocab build_pos_vocab(const Corpus& corpus);

struct PretrainedLoad {
  Tensor matrix;        // [|V|, dim]
  int found = 0;        // vocabulary words present in the file
  double coverage = 0;  // found / (|V| - 2), the reserved rows excluded
};

// Embedding text format: "token v1 v2 ... vdim" per line. Rows for vocabulary
// words are copied from the file; everything else (unknown bucket included)
// is sampled uniform in +-0.05; the padding row stays zero.
PretrainedLoad load_pretrained(const std::string& path, const Vocab& vocab,
                               int dim, Rng& rng);

struct Batch {
  int r = 0;        // utterances per conversation, equal across the batch
  int max_len = 0;  // token padding length, one value per batch
  std::vector<int> conversation_index;                  // into the corpus
  std::vector<std::vector<std::vector<int>>> tokens;    // [B][r][max_len]
  std::vector<std::vector<std::vector<int>>> pos_tags;  // empty if unused
  std::vector<std::vector<int>> labels;                 // [B][r]

  int size() const { return static_cast<int>(conversation_index.size()); }
};

// Conversations grouped by utterance count, groups chunked to max_batch,
// batch order shuffled with the caller's rng. Utterances are padded to the
// batch-wide maximum token count. Labels are indexed against label_set;
// pos_tags are filled only when pos_vocab is given.
std::vector<Batch> make_batches(const Corpus& corpus, const Vocab& vocab,
                                const std::vector<std::string>& label_set,
                                const Vocab* pos_vocab, int max_batch,
                                Rng& rng);

enum class SynthScheme { MarkovLabels, LexicalLabels, Mixed };

SynthScheme parse_synth_scheme(const std::string& name);
std::string synth_scheme_name(SynthScheme scheme);

struct SynthSpec {
  SynthScheme scheme = SynthScheme::Mixed;
  int num_conversations = 100;
  int min_utterances = 8;
  int max_utterances = 12;
  int min_tokens = 3;
  int max_tokens = 8;
  // markov_labels: probability mass on the designated successor label, and
  // the chance that a token is drawn from the label's keyword set rather
  // than filler.
  double successor_mass = 0.85;
  double keyword_prob = 0.2;
  // first num_labels rows of the built-in label/keyword tables (2..10)
  int num_labels = 4;
};

// Deterministic per (spec, seed). Every utterance carries POS tags ("kw"
// for keywords, "fill" otherwise).
// - markov_labels: labels follow a first-order chain where (a+1) mod
//   num_labels receives successor_mass; tokens only weakly indicate the
//   label.
// - lexical_labels: labels i.i.d.; exactly one keyword determines the label.
// - mixed: lexical utterances (some of which hide the label in keyword
//   order) interleaved with utterances whose label is only inferable from
//   the previous utterance.
Corpus synth_corpus(const SynthSpec& spec, uint64_t seed);

}  // namespace dact

#endif  // DACT_CORPUS_H
