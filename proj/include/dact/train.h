#ifndef DACT_TRAIN_H
#define DACT_TRAIN_H

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dact/corpus.h"
#include "dact/crf.h"
#include "dact/encoder.h"
#include "dact/extensions.h"
#include "dact/tensor.h"

namespace dact {

// Ablation axes: which encoder stages run, and which classifier sits on top.
// WE feeds mean word embeddings straight to the classifier, WE_UL adds the
// word-level recurrent encoder, WE_UL_CL adds the conversation-level one.
enum class Variant { WE, WE_UL, WE_UL_CL };
// LR scores utterances independently (softmax cross-entropy), CRF couples
// adjacent labels through the chain scorer.
enum class Classifier { LR, CRF };

std::string variant_name(Variant v);
std::string classifier_name(Classifier c);
Variant parse_variant(const std::string& s);        // ConfigError on junk
Classifier parse_classifier(const std::string& s);  // ConfigError on junk

struct TrainConfig {
  Variant variant = Variant::WE_UL_CL;
  Classifier classifier = Classifier::CRF;
  double learning_rate = 1.0;
  int lr_halving_period = 5;
  double weight_decay = 1e-4;
  // decay all parameters instead of weight matrices only (default excludes
  // biases and the chain transition/start scores)
  bool decay_all = false;
  double dropout = 0.2;
  bool dropout_on_embeddings = true;
  int max_batch = 64;
  int early_stop_patience = 5;
  int max_epochs = 30;
  uint64_t seed = 1;
  int hidden_size = 300;
  int embed_dim = 300;
  Pooling pooling = Pooling::Last;
  int min_count = 1;
  double clip_norm = 5.0;
  bool clip_enabled = true;
  AttentionConfig attention;
  PosConfig pos;
};

// Flat key=value view of the config: the config-file format, the manifest
// entry, and the effective-config echo are all this map.
std::map<std::string, std::string> config_to_map(const TrainConfig& c);
// Applies entries onto `base`; unknown keys or unparsable values raise
// ConfigError naming the key.
TrainConfig config_from_map(const std::map<std::string, std::string>& m,
                            const TrainConfig& base = TrainConfig());
void validate_config(const TrainConfig& c);  // ConfigError on bad combos

struct Model {
  TrainConfig config;
  ParameterStore store;
  Vocab vocab;
  Vocab pos_vocab;  // empty unless config.pos.enabled
  std::vector<std::string> labels;

  HierEncoderParams encoder;     // stages present depend on the variant
  PosEncoderParams pos_encoder;  // only wired when config.pos.enabled
  CrfParams head;  // trans/start null under the LR classifier

  Model() = default;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  int num_labels() const { return static_cast<int>(labels.size()); }
  int classifier_input_dim() const;
};

Model build_model(const TrainConfig& config, Vocab vocab,
                  std::vector<std::string> labels, Vocab pos_vocab = Vocab());

// Token/tag/label ids for one conversation, unpadded.
struct EncodedConversation {
  std::vector<std::vector<int>> tokens;
  std::vector<std::vector<int>> pos;
  std::vector<int> labels;
};

EncodedConversation encode_conversation_ids(
    const Conversation& conv, const Vocab& vocab, const Vocab* pos_vocab,
    const std::vector<std::string>& labels);

// Unary score matrix [R, K] for one conversation under the model's variant
// and extensions. The rng drives dropout in training mode.
Value model_unary(Tape& t, const Model& m, const EncodedConversation& conv,
                  Rng& rng, bool training);

// Classifier loss for one conversation given its unary matrix: chain NLL or
// the sum of per-utterance softmax cross-entropies.
Value model_loss(Tape& t, const Model& m, Value unary,
                 const std::vector<int>& labels);

// Independent per-row argmax with lowest-index tie break.
std::vector<int> argmax_rows(const Tensor& unary);

// Viterbi under CRF, per-row argmax under LR.
std::vector<int> predict_labels(const Model& m, const Tensor& unary);

struct AdadeltaState {
  double rho = 0.95;
  double eps = 1e-6;
  std::vector<Tensor> sq_grad;   // running mean of g^2
  std::vector<Tensor> sq_delta;  // running mean of update^2
};

AdadeltaState make_adadelta(const std::vector<Parameter*>& params,
                            double rho = 0.95, double eps = 1e-6);

// One update over all parameters: g = grad + weight_decay * value (where the
// mask allows decay), accumulator-scaled step, value += lr * delta. Returns
// false and leaves everything untouched when any gradient is non-finite.
bool adadelta_step(const std::vector<Parameter*>& params, AdadeltaState& state,
                   double lr, double weight_decay,
                   const std::vector<bool>& decay_mask);

// Which parameters weight decay touches under this config.
std::vector<bool> decay_mask_for(const Model& m);

double lr_at(int epoch, const TrainConfig& c);  // halves every period

// Scales all gradients so their global norm is at most max_norm; returns the
// norm before clipping.
double clip_gradients(const std::vector<Parameter*>& params, double max_norm);

// Patience rule: track the best validation accuracy seen so far (strict
// improvement resets the counter) and stop after `patience` epochs without
// a new best.
struct EarlyStopper {
  int patience = 5;
  double best = -1.0;
  int best_epoch = 0;
  int bad_epochs = 0;

  explicit EarlyStopper(int patience_) : patience(patience_) {}
  bool observe(int epoch, double acc);  // true when this epoch is a new best
  bool should_stop() const { return bad_epochs >= patience; }
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double valid_acc = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;  // 1-based; 0 when nothing improved on the start
  double best_valid_acc = 0.0;
  bool diverged = false;
  int epochs_run = 0;
};

// Epoch loop: seeded batch order, per-batch mean-per-utterance loss, clip,
// Adadelta step, validation accuracy, patience stopping. The model ends up
// holding the best-validation parameters (or the pre-divergence best).
TrainResult train(Model& model, const Corpus& train_corpus,
                  const Corpus& valid_corpus);

struct Metrics {
  double accuracy = 0.0;
  int total = 0;
  int correct = 0;
  std::vector<std::vector<int>> counts;       // rows gold, columns predicted
  std::vector<std::vector<double>> confusion; // counts row-normalized to %
  std::vector<int> class_counts;              // gold utterances per label
};

struct Prediction {
  std::string conversation_id;
  int utterance_index = 0;
  std::string gold;
  std::string predicted;
};

// Deterministic full-corpus evaluation (no dropout). Optionally records one
// Prediction per utterance in corpus order.
Metrics evaluate(const Model& m, const Corpus& corpus,
                 std::vector<Prediction>* dump = nullptr);

// History table as delimited text (epoch<TAB>train_loss<TAB>valid_acc<TAB>lr
// with a header row), written atomically.
void save_history(const std::vector<EpochRecord>& history,
                  const std::string& path);

uint64_t vocab_hash(const Vocab& v);  // token-order-sensitive content hash

// <prefix>.params holds the parameter container, <prefix>.json the manifest
// (config, vocab, tag vocab, labels, vocab hash).
void save_model(const Model& m, const std::string& prefix);
Model load_model(const std::string& prefix);

}  // namespace dact

#endif  // DACT_TRAIN_H
