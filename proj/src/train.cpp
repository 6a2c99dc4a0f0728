#include "dact/train.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "dact/checkpoint.h"
#include "dact/errors.h"
#include "json.hpp"

namespace dact {

using ordered_json = nlohmann::ordered_json;

namespace {

std::string pooling_name(Pooling p) {
  return p == Pooling::Last ? "last" : "mean";
}

Pooling parse_pooling(const std::string& s) {
  if (s == "last") return Pooling::Last;
  if (s == "mean") return Pooling::Mean;
  throw ConfigError("unknown pooling '" + s + "' (expected last or mean)");
}

std::string fusion_name(PosFusion f) {
  return f == PosFusion::PreClassifier ? "pre_classifier" : "pre_conversation";
}

PosFusion parse_fusion(const std::string& s) {
  if (s == "pre_classifier") return PosFusion::PreClassifier;
  if (s == "pre_conversation") return PosFusion::PreConversation;
  throw ConfigError("unknown fusion point '" + s +
                    "' (expected pre_classifier or pre_conversation)");
}

std::string bool_name(bool b) { return b ? "true" : "false"; }

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + s +
                    "'");
}

double parse_double(const std::string& key, const std::string& s) {
  try {
    size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" +
                      s + "'");
  }
}

int parse_int(const std::string& key, const std::string& s) {
  try {
    size_t used = 0;
    long v = std::stol(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return static_cast<int>(v);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" +
                      s + "'");
  }
}

uint64_t parse_u64(const std::string& key, const std::string& s) {
  try {
    size_t used = 0;
    unsigned long long v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return static_cast<uint64_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key +
                      "': expected an unsigned integer, got '" + s + "'");
  }
}

Vocab vocab_from_tokens(std::vector<std::string> tokens, int min_count) {
  if (tokens.size() < 2 || tokens[0] != Vocab::kPadToken ||
      tokens[1] != Vocab::kUnkToken) {
    throw DataError("stored vocabulary must start with the reserved entries");
  }
  Vocab v;
  v.min_count = min_count;
  v.tokens = std::move(tokens);
  for (size_t i = 0; i < v.tokens.size(); ++i) {
    v.index[v.tokens[i]] = static_cast<int>(i);
  }
  return v;
}

void write_text_atomic(const std::string& path, const std::string& content) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out.good()) throw DataError("cannot open " + tmp + " for writing");
    out << content;
    if (!out.good()) throw DataError("write to " + tmp + " failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw DataError("cannot rename " + tmp + " to " + path);
  }
}

}  // namespace

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::WE: return "we";
    case Variant::WE_UL: return "we_ul";
    case Variant::WE_UL_CL: return "we_ul_cl";
  }
  return "we_ul_cl";
}

std::string classifier_name(Classifier c) {
  return c == Classifier::LR ? "lr" : "crf";
}

Variant parse_variant(const std::string& s) {
  if (s == "we") return Variant::WE;
  if (s == "we_ul") return Variant::WE_UL;
  if (s == "we_ul_cl") return Variant::WE_UL_CL;
  throw ConfigError("unknown variant '" + s +
                    "' (expected we, we_ul or we_ul_cl)");
}

Classifier parse_classifier(const std::string& s) {
  if (s == "lr") return Classifier::LR;
  if (s == "crf") return Classifier::CRF;
  throw ConfigError("unknown classifier '" + s + "' (expected lr or crf)");
}

std::map<std::string, std::string> config_to_map(const TrainConfig& c) {
  std::map<std::string, std::string> m;
  m["variant"] = variant_name(c.variant);
  m["classifier"] = classifier_name(c.classifier);
  m["learning_rate"] = format_double(c.learning_rate);
  m["lr_halving_period"] = std::to_string(c.lr_halving_period);
  m["weight_decay"] = format_double(c.weight_decay);
  m["decay_all"] = bool_name(c.decay_all);
  m["dropout"] = format_double(c.dropout);
  m["dropout_on_embeddings"] = bool_name(c.dropout_on_embeddings);
  m["max_batch"] = std::to_string(c.max_batch);
  m["early_stop_patience"] = std::to_string(c.early_stop_patience);
  m["max_epochs"] = std::to_string(c.max_epochs);
  m["seed"] = std::to_string(c.seed);
  m["hidden_size"] = std::to_string(c.hidden_size);
  m["embed_dim"] = std::to_string(c.embed_dim);
  m["pooling"] = pooling_name(c.pooling);
  m["min_count"] = std::to_string(c.min_count);
  m["clip_norm"] = format_double(c.clip_norm);
  m["clip_enabled"] = bool_name(c.clip_enabled);
  m["attention.enabled"] = bool_name(c.attention.enabled);
  m["attention.window"] = std::to_string(c.attention.window);
  m["attention.scaled"] = bool_name(c.attention.scaled);
  m["pos.enabled"] = bool_name(c.pos.enabled);
  m["pos.dim"] = std::to_string(c.pos.dim);
  m["pos.fusion_point"] = fusion_name(c.pos.fusion);
  return m;
}

TrainConfig config_from_map(const std::map<std::string, std::string>& m,
                            const TrainConfig& base) {
  TrainConfig c = base;
  for (const auto& [key, val] : m) {
    if (key == "variant") c.variant = parse_variant(val);
    else if (key == "classifier") c.classifier = parse_classifier(val);
    else if (key == "learning_rate") c.learning_rate = parse_double(key, val);
    else if (key == "lr_halving_period") c.lr_halving_period = parse_int(key, val);
    else if (key == "weight_decay") c.weight_decay = parse_double(key, val);
    else if (key == "decay_all") c.decay_all = parse_bool(key, val);
    else if (key == "dropout") c.dropout = parse_double(key, val);
    else if (key == "dropout_on_embeddings") c.dropout_on_embeddings = parse_bool(key, val);
    else if (key == "max_batch") c.max_batch = parse_int(key, val);
    else if (key == "early_stop_patience") c.early_stop_patience = parse_int(key, val);
    else if (key == "max_epochs") c.max_epochs = parse_int(key, val);
    else if (key == "seed") c.seed = parse_u64(key, val);
    else if (key == "hidden_size") c.hidden_size = parse_int(key, val);
    else if (key == "embed_dim") c.embed_dim = parse_int(key, val);
    else if (key == "pooling") c.pooling = parse_pooling(val);
    else if (key == "min_count") c.min_count = parse_int(key, val);
    else if (key == "clip_norm") c.clip_norm = parse_double(key, val);
    else if (key == "clip_enabled") c.clip_enabled = parse_bool(key, val);
    else if (key == "attention.enabled") c.attention.enabled = parse_bool(key, val);
    else if (key == "attention.window") c.attention.window = parse_int(key, val);
    else if (key == "attention.scaled") c.attention.scaled = parse_bool(key, val);
    else if (key == "pos.enabled") c.pos.enabled = parse_bool(key, val);
    else if (key == "pos.dim") c.pos.dim = parse_int(key, val);
    else if (key == "pos.fusion_point") c.pos.fusion = parse_fusion(val);
    else throw ConfigError("unknown config key '" + key + "'");
  }
  return c;
}

void validate_config(const TrainConfig& c) {
  if (c.learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
  if (c.lr_halving_period < 1) {
    throw ConfigError("lr_halving_period must be >= 1");
  }
  if (c.weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (c.dropout < 0.0 || c.dropout >= 1.0) {
    throw ConfigError("dropout must be in [0,1)");
  }
  if (c.max_batch < 1) throw ConfigError("max_batch must be >= 1");
  if (c.early_stop_patience < 1) {
    throw ConfigError("early_stop_patience must be >= 1");
  }
  if (c.max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (c.hidden_size < 1) throw ConfigError("hidden_size must be >= 1");
  if (c.embed_dim < 1) throw ConfigError("embed_dim must be >= 1");
  if (c.min_count < 1) throw ConfigError("min_count must be >= 1");
  if (c.clip_enabled && !(c.clip_norm > 0.0)) {
    throw ConfigError("clip_norm must be > 0");
  }
  if (c.attention.enabled) {
    if (c.variant != Variant::WE_UL_CL) {
      throw ConfigError(
          "attention runs on conversation-level states; variant must be "
          "we_ul_cl");
    }
    if (c.attention.window < 1) {
      throw ConfigError("attention.window must be >= 1");
    }
  }
  if (c.pos.enabled) {
    if (c.pos.dim < 1) throw ConfigError("pos.dim must be >= 1");
    if (c.pos.fusion == PosFusion::PreConversation &&
        c.variant != Variant::WE_UL_CL) {
      throw ConfigError(
          "pre_conversation fusion needs the conversation stage; variant "
          "must be we_ul_cl");
    }
  }
}

int Model::classifier_input_dim() const {
  int d = config.variant == Variant::WE ? config.embed_dim
                                        : 2 * config.hidden_size;
  if (config.attention.enabled) d += 2 * config.hidden_size;
  if (config.pos.enabled && config.pos.fusion == PosFusion::PreClassifier) {
    d += 2 * config.pos.dim;
  }
  return d;
}

Model build_model(const TrainConfig& config, Vocab vocab,
                  std::vector<std::string> labels, Vocab pos_vocab) {
  validate_config(config);
  if (vocab.size() < 2) throw DataError("vocabulary is empty");
  if (labels.empty()) throw DataError("label set is empty");
  if (config.pos.enabled && pos_vocab.size() < 2) {
    throw DataError("tag encoder enabled but no tag vocabulary given");
  }

  Model m;
  m.config = config;
  m.vocab = std::move(vocab);
  m.pos_vocab = std::move(pos_vocab);
  m.labels = std::move(labels);

  m.encoder.config.hidden_size = config.hidden_size;
  m.encoder.config.pooling = config.pooling;
  m.encoder.config.dropout_rate = config.dropout;
  m.encoder.config.num_stacked_layers = 1;
  m.encoder.config.dropout_on_embeddings = config.dropout_on_embeddings;

  Rng rng(config.seed);
  int h = config.hidden_size;
  m.encoder.embedding = make_embedding(m.store, "embed", m.vocab.size(),
                                       config.embed_dim, rng);
  if (config.variant != Variant::WE) {
    m.encoder.word_layers.push_back(
        make_bilstm(m.store, "word0", config.embed_dim, h, rng));
  }
  if (config.pos.enabled) {
    m.pos_encoder = make_pos_encoder(m.store, m.pos_vocab.size(),
                                     config.pos.dim, config.pos.dim, rng);
    m.pos_encoder.pooling = config.pooling;
    m.pos_encoder.dropout_rate = config.dropout;
    m.pos_encoder.dropout_on_embeddings = config.dropout_on_embeddings;
  }
  if (config.variant == Variant::WE_UL_CL) {
    int extra = config.pos.enabled &&
                        config.pos.fusion == PosFusion::PreConversation
                    ? m.pos_encoder.output_dim()
                    : 0;
    m.encoder.conv_layers.push_back(
        make_bilstm(m.store, "conv0", 2 * h + extra, h, rng));
  }

  int k = m.num_labels();
  int d = m.classifier_input_dim();
  if (config.classifier == Classifier::CRF) {
    m.head = make_crf_params(m.store, "head", k, d, rng);
  } else {
    m.head.unary_w =
        &m.store.add("head.unary_w", {k, d}, InitSpec::glorot(), rng);
    m.head.unary_b = &m.store.add("head.unary_b", {k}, InitSpec::zeros(), rng);
  }
  return m;
}

EncodedConversation encode_conversation_ids(
    const Conversation& conv, const Vocab& vocab, const Vocab* pos_vocab,
    const std::vector<std::string>& labels) {
  EncodedConversation out;
  for (const Utterance& u : conv.utterances) {
    std::vector<int> ids;
    for (const std::string& tok : u.tokens) ids.push_back(vocab.lookup(tok));
    out.tokens.push_back(std::move(ids));
    auto it = std::find(labels.begin(), labels.end(), u.label);
    if (it == labels.end()) {
      throw DataError("label '" + u.label +
                      "' is not in the model label set (conversation " +
                      conv.id + ")");
    }
    out.labels.push_back(static_cast<int>(it - labels.begin()));
    if (pos_vocab != nullptr) {
      if (u.pos.size() != u.tokens.size()) {
        throw DataError("conversation " + conv.id +
                        " lacks tags required by the tag encoder");
      }
      std::vector<int> tags;
      for (const std::string& tag : u.pos) {
        tags.push_back(pos_vocab->lookup(tag));
      }
      out.pos.push_back(std::move(tags));
    }
  }
  return out;
}

Value model_unary(Tape& t, const Model& m, const EncodedConversation& conv,
                  Rng& rng, bool training) {
  const TrainConfig& c = m.config;
  int r = static_cast<int>(conv.tokens.size());
  if (r == 0) throw std::invalid_argument("conversation has no utterances");
  if (c.pos.enabled && static_cast<int>(conv.pos.size()) != r) {
    throw DataError("tag sequences missing for the tag encoder");
  }

  std::vector<Value> reps;
  for (int j = 0; j < r; ++j) {
    const std::vector<int>& ids = conv.tokens[static_cast<size_t>(j)];
    if (c.variant == Variant::WE) {
      std::vector<int> kept;
      for (int id : ids) {
        if (id != EmbeddingTable::kPad) kept.push_back(id);
      }
      if (kept.empty()) {
        throw std::invalid_argument("utterance has no non-padding tokens");
      }
      double embed_rate = c.dropout_on_embeddings ? c.dropout : 0.0;
      std::vector<Value> xs = embed_utterance(t, kept, m.encoder.embedding,
                                              embed_rate, rng, training);
      Value rep = pool(t, xs, Pooling::Mean);
      reps.push_back(t.dropout(rep, c.dropout, rng, training));
    } else {
      reps.push_back(encode_utterance(t, ids, m.encoder, rng, training));
    }
  }

  std::vector<Value> ps;
  if (c.pos.enabled) {
    for (int j = 0; j < r; ++j) {
      ps.push_back(encode_pos(t, conv.pos[static_cast<size_t>(j)],
                              m.pos_encoder, rng, training));
    }
  }
  if (c.pos.enabled && c.pos.fusion == PosFusion::PreConversation) {
    for (int j = 0; j < r; ++j) {
      reps[static_cast<size_t>(j)] =
          t.concat({reps[static_cast<size_t>(j)], ps[static_cast<size_t>(j)]},
                   0);
    }
  }

  std::vector<Value> gs = c.variant == Variant::WE_UL_CL
                              ? encode_conversation(t, reps, m.encoder, rng,
                                                    training)
                              : reps;

  std::optional<AttentionOut> att;
  if (c.attention.enabled) {
    att = intra_attention(t, gs, c.attention.window, c.attention.scaled);
  }

  bool fuse_pos =
      c.pos.enabled && c.pos.fusion == PosFusion::PreClassifier;
  std::vector<Value> hs;
  for (int j = 0; j < r; ++j) {
    std::optional<Value> ctx;
    if (att) ctx = att->context[static_cast<size_t>(j)];
    std::optional<Value> pj;
    if (fuse_pos) pj = ps[static_cast<size_t>(j)];
    hs.push_back(fuse(t, gs[static_cast<size_t>(j)], ctx, pj));
  }
  return unary_scores(t, hs, m.head);
}

Value model_loss(Tape& t, const Model& m, Value unary,
                 const std::vector<int>& labels) {
  const Tensor& u = t.value(unary);
  int r = u.rows();
  int k = u.cols();
  if (static_cast<int>(labels.size()) != r) {
    throw std::invalid_argument("label count does not match utterance count");
  }
  for (int y : labels) {
    if (y < 0 || y >= k) {
      throw std::invalid_argument("label index out of range");
    }
  }
  if (m.config.classifier == Classifier::CRF) {
    return nll(t, unary, labels, t.param(*m.head.trans),
               t.param(*m.head.start));
  }
  std::vector<int> flat;
  for (int j = 0; j < r; ++j) flat.push_back(j * k + labels[static_cast<size_t>(j)]);
  Value total = t.sum(t.logsumexp_rows(unary));
  return t.sub(total, t.gather_sum(unary, flat));
}

std::vector<int> argmax_rows(const Tensor& unary) {
  std::vector<int> out;
  for (int j = 0; j < unary.rows(); ++j) {
    int best = 0;
    for (int a = 1; a < unary.cols(); ++a) {
      if (unary.at(j, a) > unary.at(j, best)) best = a;
    }
    out.push_back(best);
  }
  return out;
}

std::vector<int> predict_labels(const Model& m, const Tensor& unary) {
  if (m.config.classifier == Classifier::CRF) {
    return viterbi_decode(unary, m.head.trans->value, m.head.start->value)
        .labels;
  }
  return argmax_rows(unary);
}

AdadeltaState make_adadelta(const std::vector<Parameter*>& params, double rho,
                            double eps) {
  AdadeltaState s;
  s.rho = rho;
  s.eps = eps;
  for (const Parameter* p : params) {
    s.sq_grad.push_back(Tensor::zeros(p->value.shape));
    s.sq_delta.push_back(Tensor::zeros(p->value.shape));
  }
  return s;
}

bool adadelta_step(const std::vector<Parameter*>& params, AdadeltaState& state,
                   double lr, double weight_decay,
                   const std::vector<bool>& decay_mask) {
  if (state.sq_grad.size() != params.size() ||
      decay_mask.size() != params.size()) {
    throw std::invalid_argument(
        "optimizer state does not match the parameter list");
  }
  for (const Parameter* p : params) {
    for (double g : p->grad.data) {
      if (!std::isfinite(g)) return false;
    }
  }
  for (size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    Tensor& sg = state.sq_grad[i];
    Tensor& sd = state.sq_delta[i];
    double wd = decay_mask[i] ? weight_decay : 0.0;
    for (size_t e = 0; e < p.value.data.size(); ++e) {
      double g = p.grad.data[e] + wd * p.value.data[e];
      sg.data[e] = state.rho * sg.data[e] + (1.0 - state.rho) * g * g;
      double delta =
          -std::sqrt(sd.data[e] + state.eps) / std::sqrt(sg.data[e] + state.eps) * g;
      sd.data[e] = state.rho * sd.data[e] + (1.0 - state.rho) * delta * delta;
      p.value.data[e] += lr * delta;
    }
  }
  return true;
}

std::vector<bool> decay_mask_for(const Model& m) {
  std::vector<bool> mask;
  for (const Parameter* p : m.store.all()) {
    if (m.config.decay_all) {
      mask.push_back(true);
    } else {
      bool is_matrix = p->value.rank() == 2;
      bool is_transition = p == m.head.trans;
      mask.push_back(is_matrix && !is_transition);
    }
  }
  return mask;
}

double lr_at(int epoch, const TrainConfig& c) {
  if (epoch < 0) throw std::invalid_argument("epoch must be >= 0");
  return c.learning_rate * std::pow(0.5, epoch / c.lr_halving_period);
}

double clip_gradients(const std::vector<Parameter*>& params, double max_norm) {
  double sq = 0.0;
  for (const Parameter* p : params) {
    for (double g : p->grad.data) sq += g * g;
  }
  double norm = std::sqrt(sq);
  if (std::isfinite(norm) && norm > max_norm && norm > 0.0) {
    double scale = max_norm / norm;
    for (Parameter* p : params) {
      for (double& g : p->grad.data) g *= scale;
    }
  }
  return norm;
}

bool EarlyStopper::observe(int epoch, double acc) {
  if (acc > best) {
    best = acc;
    best_epoch = epoch;
    bad_epochs = 0;
    return true;
  }
  ++bad_epochs;
  return false;
}

TrainResult train(Model& model, const Corpus& train_corpus,
                  const Corpus& valid_corpus) {
  if (train_corpus.conversations.empty() ||
      valid_corpus.conversations.empty()) {
    throw DataError("training and validation corpora must be non-empty");
  }
  for (const Corpus* c : {&train_corpus, &valid_corpus}) {
    for (const std::string& label : c->label_set) {
      if (std::find(model.labels.begin(), model.labels.end(), label) ==
          model.labels.end()) {
        throw DataError("label '" + label + "' is not in the model label set");
      }
    }
  }

  const TrainConfig& c = model.config;
  std::vector<Parameter*> params = model.store.all();
  AdadeltaState state = make_adadelta(params);
  std::vector<bool> mask = decay_mask_for(model);
  const Vocab* pos_vocab = c.pos.enabled ? &model.pos_vocab : nullptr;
  Rng batch_rng(c.seed);
  Rng dropout_rng(c.seed ^ 0x5851f42d4c957f2dULL);

  // last good parameter snapshot; starts as the initialization
  std::vector<Tensor> best_values;
  for (const Parameter* p : params) best_values.push_back(p->value);

  TrainResult res;
  EarlyStopper stopper(c.early_stop_patience);
  for (int e = 0; e < c.max_epochs; ++e) {
    double lr = lr_at(e, c);
    std::vector<Batch> batches = make_batches(
        train_corpus, model.vocab, model.labels, pos_vocab, c.max_batch,
        batch_rng);
    double loss_sum = 0.0;
    long long utts = 0;
    bool blew_up = false;
    for (const Batch& b : batches) {
      Tape t;
      std::vector<Value> losses;
      int batch_utts = b.r * b.size();
      for (int bi = 0; bi < b.size(); ++bi) {
        EncodedConversation conv;
        conv.tokens = b.tokens[static_cast<size_t>(bi)];
        if (c.pos.enabled) conv.pos = b.pos_tags[static_cast<size_t>(bi)];
        conv.labels = b.labels[static_cast<size_t>(bi)];
        Value unary = model_unary(t, model, conv, dropout_rng, true);
        losses.push_back(model_loss(t, model, unary, conv.labels));
      }
      Value total = losses.size() == 1 ? losses[0] : t.add_n(losses);
      Value objective = t.scale(total, 1.0 / batch_utts);
      if (!std::isfinite(t.scalar_value(objective))) {
        blew_up = true;
        break;
      }
      zero_grad(params);
      t.backward(objective);
      if (c.clip_enabled) clip_gradients(params, c.clip_norm);
      if (!adadelta_step(params, state, lr, c.weight_decay, mask)) {
        blew_up = true;
        break;
      }
      loss_sum += t.scalar_value(total);
      utts += batch_utts;
    }
    if (blew_up) {
      res.diverged = true;
      break;
    }
    Metrics valid = evaluate(model, valid_corpus);
    EpochRecord rec;
    rec.epoch = e + 1;
    rec.train_loss = utts > 0 ? loss_sum / static_cast<double>(utts) : 0.0;
    rec.valid_acc = valid.accuracy;
    rec.lr = lr;
    res.history.push_back(rec);
    res.epochs_run = e + 1;
    if (stopper.observe(e + 1, valid.accuracy)) {
      for (size_t i = 0; i < params.size(); ++i) {
        best_values[i] = params[i]->value;
      }
    } else if (stopper.should_stop()) {
      break;
    }
  }

  for (size_t i = 0; i < params.size(); ++i) {
    params[i]->value = best_values[i];
  }
  res.best_epoch = stopper.best_epoch;
  res.best_valid_acc = std::max(stopper.best, 0.0);
  return res;
}

Metrics evaluate(const Model& m, const Corpus& corpus,
                 std::vector<Prediction>* dump) {
  int k = m.num_labels();
  Metrics metrics;
  metrics.counts.assign(static_cast<size_t>(k),
                        std::vector<int>(static_cast<size_t>(k), 0));
  metrics.class_counts.assign(static_cast<size_t>(k), 0);
  const Vocab* pos_vocab = m.config.pos.enabled ? &m.pos_vocab : nullptr;
  Rng rng(0);  // eval mode draws nothing
  for (const Conversation& conv : corpus.conversations) {
    EncodedConversation ec =
        encode_conversation_ids(conv, m.vocab, pos_vocab, m.labels);
    Tape t;
    Value unary = model_unary(t, m, ec, rng, false);
    std::vector<int> pred = predict_labels(m, t.value(unary));
    for (size_t j = 0; j < pred.size(); ++j) {
      int gold = ec.labels[j];
      int got = pred[j];
      ++metrics.counts[static_cast<size_t>(gold)][static_cast<size_t>(got)];
      ++metrics.class_counts[static_cast<size_t>(gold)];
      ++metrics.total;
      if (gold == got) ++metrics.correct;
      if (dump != nullptr) {
        Prediction p;
        p.conversation_id = conv.id;
        p.utterance_index = static_cast<int>(j);
        p.gold = m.labels[static_cast<size_t>(gold)];
        p.predicted = m.labels[static_cast<size_t>(got)];
        dump->push_back(p);
      }
    }
  }
  if (metrics.total == 0) throw DataError("corpus has no utterances");
  metrics.accuracy =
      static_cast<double>(metrics.correct) / static_cast<double>(metrics.total);
  metrics.confusion.assign(static_cast<size_t>(k),
                           std::vector<double>(static_cast<size_t>(k), 0.0));
  for (int a = 0; a < k; ++a) {
    int row_total = metrics.class_counts[static_cast<size_t>(a)];
    if (row_total == 0) continue;
    for (int b = 0; b < k; ++b) {
      metrics.confusion[static_cast<size_t>(a)][static_cast<size_t>(b)] =
          100.0 * metrics.counts[static_cast<size_t>(a)][static_cast<size_t>(b)] /
          static_cast<double>(row_total);
    }
  }
  return metrics;
}

void save_history(const std::vector<EpochRecord>& history,
                  const std::string& path) {
  std::ostringstream out;
  out << "epoch\ttrain_loss\tvalid_acc\tlr\n";
  for (const EpochRecord& r : history) {
    out << r.epoch << "\t" << format_double(r.train_loss) << "\t"
        << format_double(r.valid_acc) << "\t" << format_double(r.lr) << "\n";
  }
  write_text_atomic(path, out.str());
}

uint64_t vocab_hash(const Vocab& v) {
  uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const std::string& s) {
    for (char ch : s) {
      h ^= static_cast<unsigned char>(ch);
      h *= 1099511628211ULL;
    }
    h ^= static_cast<unsigned char>('\n');
    h *= 1099511628211ULL;
  };
  for (const std::string& tok : v.tokens) mix(tok);
  return h;
}

void save_model(const Model& m, const std::string& prefix) {
  save_params(prefix + ".params", m.store.all());

  ordered_json manifest;
  manifest["format"] = "dact-model 1";
  ordered_json cfg;
  for (const auto& [key, val] : config_to_map(m.config)) cfg[key] = val;
  manifest["config"] = cfg;
  manifest["labels"] = m.labels;
  manifest["vocab"] = m.vocab.tokens;
  manifest["vocab_hash"] = std::to_string(vocab_hash(m.vocab));
  manifest["pos_vocab"] = m.pos_vocab.tokens;
  write_text_atomic(prefix + ".json", manifest.dump(2) + "\n");
}

Model load_model(const std::string& prefix) {
  std::string manifest_path = prefix + ".json";
  std::ifstream in(manifest_path);
  if (!in.good()) throw DataError("cannot open " + manifest_path);
  ordered_json manifest;
  try {
    in >> manifest;
  } catch (const std::exception& e) {
    throw DataError(manifest_path + ": " + e.what());
  }
  if (!manifest.is_object() || manifest.value("format", "") != "dact-model 1") {
    throw DataError(manifest_path + ": not a model manifest");
  }
  std::map<std::string, std::string> cfg_map;
  for (const auto& [key, val] : manifest.at("config").items()) {
    if (!val.is_string()) {
      throw DataError(manifest_path + ": config values must be strings");
    }
    cfg_map[key] = val.get<std::string>();
  }
  TrainConfig config = config_from_map(cfg_map);
  std::vector<std::string> labels =
      manifest.at("labels").get<std::vector<std::string>>();
  Vocab vocab = vocab_from_tokens(
      manifest.at("vocab").get<std::vector<std::string>>(), config.min_count);
  std::vector<std::string> pos_tokens =
      manifest.at("pos_vocab").get<std::vector<std::string>>();
  Vocab pos_vocab;
  if (!pos_tokens.empty()) {
    pos_vocab = vocab_from_tokens(std::move(pos_tokens), 1);
  }
  uint64_t stored_hash = parse_u64("vocab_hash", manifest.at("vocab_hash").get<std::string>());
  if (stored_hash != vocab_hash(vocab)) {
    throw DataError(manifest_path +
                    ": vocabulary hash does not match its token list");
  }
  Model m = build_model(config, std::move(vocab), std::move(labels),
                        std::move(pos_vocab));
  load_params(prefix + ".params", m.store.all());
  return m;
}

}  // namespace dact
