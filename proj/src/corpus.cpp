#include "dact/corpus.h"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "dact/errors.h"
#include "json.hpp"

namespace dact {

using ordered_json = nlohmann::ordered_json;

int Corpus::utterance_count() const {
  int n = 0;
  for (const Conversation& c : conversations) {
    n += static_cast<int>(c.utterances.size());
  }
  return n;
}

std::vector<std::string> preprocess(const std::string& text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (char ch : text) {
    if (ch == '!' || ch == ',') continue;
    cleaned.push_back(
        static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  std::vector<std::string> tokens;
  std::istringstream in(cleaned);
  std::string tok;
  while (in >> tok) tokens.push_back(tok);
  if (tokens.empty()) tokens.push_back(Vocab::kUnkToken);
  return tokens;
}

namespace {

[[noreturn]] void corpus_error(const std::string& path, int line,
                               const std::string& message) {
  throw DataError(path + ":" + std::to_string(line) + ": " + message);
}

std::vector<std::string> string_array(const ordered_json& j,
                                      const std::string& what,
                                      const std::string& path, int line) {
  if (!j.is_array()) corpus_error(path, line, what + " must be an array");
  std::vector<std::string> out;
  out.reserve(j.size());
  for (const auto& item : j) {
    if (!item.is_string() || item.get<std::string>().empty()) {
      corpus_error(path, line, what + " entries must be non-empty strings");
    }
    out.push_back(item.get<std::string>());
  }
  return out;
}

}  // namespace

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file: " + path);
  Corpus corpus;
  std::set<std::string> seen_labels;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      corpus_error(path, line_no, std::string("invalid record: ") + e.what());
    }
    if (!j.is_object()) corpus_error(path, line_no, "record must be an object");
    for (const auto& [key, _] : j.items()) {
      if (key != "id" && key != "utterances") {
        corpus_error(path, line_no, "unknown field '" + key + "'");
      }
    }
    if (!j.contains("id") || !j["id"].is_string()) {
      corpus_error(path, line_no, "missing string field 'id'");
    }
    if (!j.contains("utterances") || !j["utterances"].is_array() ||
        j["utterances"].empty()) {
      corpus_error(path, line_no,
                   "'utterances' must be a non-empty array");
    }
    Conversation conv;
    conv.id = j["id"].get<std::string>();
    for (const auto& ju : j["utterances"]) {
      if (!ju.is_object()) {
        corpus_error(path, line_no, "utterance must be an object");
      }
      for (const auto& [key, _] : ju.items()) {
        if (key != "tokens" && key != "label" && key != "pos") {
          corpus_error(path, line_no,
                       "unknown utterance field '" + key + "'");
        }
      }
      Utterance utt;
      if (!ju.contains("tokens")) {
        corpus_error(path, line_no, "utterance missing 'tokens'");
      }
      utt.tokens = string_array(ju["tokens"], "'tokens'", path, line_no);
      if (utt.tokens.empty()) {
        corpus_error(path, line_no, "utterance has no tokens");
      }
      if (!ju.contains("label") || !ju["label"].is_string() ||
          ju["label"].get<std::string>().empty()) {
        corpus_error(path, line_no, "utterance missing string 'label'");
      }
      utt.label = ju["label"].get<std::string>();
      if (ju.contains("pos")) {
        utt.pos = string_array(ju["pos"], "'pos'", path, line_no);
        if (utt.pos.size() != utt.tokens.size()) {
          corpus_error(path, line_no,
                       "conversation '" + conv.id + "': pos length " +
                           std::to_string(utt.pos.size()) +
                           " does not match " +
                           std::to_string(utt.tokens.size()) + " tokens");
        }
      }
      if (seen_labels.insert(utt.label).second) {
        corpus.label_set.push_back(utt.label);
      }
      conv.utterances.push_back(std::move(utt));
    }
    corpus.conversations.push_back(std::move(conv));
  }
  if (corpus.conversations.empty()) {
    throw DataError(path + ": no conversations found");
  }
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw DataError("cannot open for writing: " + tmp);
    for (const Conversation& conv : corpus.conversations) {
      ordered_json j;
      j["id"] = conv.id;
      j["utterances"] = ordered_json::array();
      for (const Utterance& utt : conv.utterances) {
        ordered_json ju;
        ju["tokens"] = utt.tokens;
        ju["label"] = utt.label;
        if (!utt.pos.empty()) ju["pos"] = utt.pos;
        j["utterances"].push_back(std::move(ju));
      }
      out << j.dump() << "\n";
    }
    if (!out) throw DataError("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw DataError("cannot rename " + tmp + " to " + path);
  }
}

int Vocab::lookup(const std::string& tok) const {
  auto it = index.find(tok);
  return it == index.end() ? kUnk : it->second;
}

namespace {

Vocab build_vocab_from_lists(
    const std::vector<const std::vector<std::string>*>& lists, int min_count) {
  std::unordered_map<std::string, int> counts;
  std::vector<std::string> order;
  for (const auto* list : lists) {
    for (const std::string& tok : *list) {
      if (tok == Vocab::kPadToken || tok == Vocab::kUnkToken) continue;
      if (++counts[tok] == 1) order.push_back(tok);
    }
  }
  Vocab v;
  v.min_count = min_count;
  v.tokens = {Vocab::kPadToken, Vocab::kUnkToken};
  for (const std::string& tok : order) {
    if (counts[tok] >= min_count) v.tokens.push_back(tok);
  }
  for (size_t i = 0; i < v.tokens.size(); ++i) {
    v.index[v.tokens[i]] = static_cast<int>(i);
  }
  return v;
}

}  // namespace

Vocab build_vocab(const Corpus& corpus, int min_count) {
  if (min_count < 1) throw std::invalid_argument("min_count must be >= 1");
  if (corpus.conversations.empty()) {
    throw std::invalid_argument("cannot build a vocabulary from an empty corpus");
  }
  std::vector<const std::vector<std::string>*> lists;
  for (const Conversation& c : corpus.conversations) {
    for (const Utterance& u : c.utterances) lists.push_back(&u.tokens);
  }
  return build_vocab_from_lists(lists, min_count);
}

Vocab build_pos_vocab(const Corpus& corpus) {
  std::vector<const std::vector<std::string>*> lists;
  for (const Conversation& c : corpus.conversations) {
    for (const Utterance& u : c.utterances) {
      if (!u.pos.empty()) lists.push_back(&u.pos);
    }
  }
  if (lists.empty()) {
    throw DataError("corpus has no POS annotations to build a tag vocabulary");
  }
  return build_vocab_from_lists(lists, 1);
}

PretrainedLoad load_pretrained(const std::string& path, const Vocab& vocab,
                               int dim, Rng& rng) {
  if (dim < 1) throw std::invalid_argument("embedding dimension must be >= 1");
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embedding file: " + path);

  PretrainedLoad out;
  out.matrix = Tensor::zeros({vocab.size(), dim});
  std::vector<bool> filled(static_cast<size_t>(vocab.size()), false);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    auto it = vocab.index.find(word);
    bool wanted = it != vocab.index.end() && it->second >= 2;
    std::vector<double> row(static_cast<size_t>(dim));
    for (int d = 0; d < dim; ++d) {
      if (!(ls >> row[static_cast<size_t>(d)])) {
        corpus_error(path, line_no,
                     "expected " + std::to_string(dim) + " values for '" +
                         word + "'");
      }
    }
    std::string extra;
    if (ls >> extra) {
      corpus_error(path, line_no,
                   "expected " + std::to_string(dim) + " values for '" + word +
                       "', found more");
    }
    if (wanted) {
      int idx = it->second;
      for (int d = 0; d < dim; ++d) {
        out.matrix.at(idx, d) = row[static_cast<size_t>(d)];
      }
      if (!filled[static_cast<size_t>(idx)]) {
        filled[static_cast<size_t>(idx)] = true;
        ++out.found;
      }
    }
  }
  // unknown bucket and uncovered words get small random rows; padding stays 0
  for (int i = Vocab::kUnk; i < vocab.size(); ++i) {
    if (filled[static_cast<size_t>(i)]) continue;
    if (i == Vocab::kPad) continue;
    for (int d = 0; d < dim; ++d) {
      out.matrix.at(i, d) = rng.uniform(-0.05, 0.05);
    }
  }
  int real_words = std::max(1, vocab.size() - 2);
  out.coverage = static_cast<double>(out.found) / real_words;
  return out;
}

std::vector<Batch> make_batches(const Corpus& corpus, const Vocab& vocab,
                                const std::vector<std::string>& label_set,
                                const Vocab* pos_vocab, int max_batch,
                                Rng& rng) {
  if (max_batch < 1) throw std::invalid_argument("max_batch must be >= 1");
  std::unordered_map<std::string, int> label_index;
  for (size_t i = 0; i < label_set.size(); ++i) {
    label_index[label_set[i]] = static_cast<int>(i);
  }

  std::map<int, std::vector<int>> by_length;
  for (size_t ci = 0; ci < corpus.conversations.size(); ++ci) {
    int r = static_cast<int>(corpus.conversations[ci].utterances.size());
    by_length[r].push_back(static_cast<int>(ci));
  }

  std::vector<Batch> batches;
  for (const auto& [r, indices] : by_length) {
    for (size_t off = 0; off < indices.size();
         off += static_cast<size_t>(max_batch)) {
      size_t end = std::min(indices.size(), off + static_cast<size_t>(max_batch));
      Batch b;
      b.r = r;
      b.conversation_index.assign(indices.begin() + static_cast<long>(off),
                                  indices.begin() + static_cast<long>(end));
      for (int ci : b.conversation_index) {
        for (const Utterance& u :
             corpus.conversations[static_cast<size_t>(ci)].utterances) {
          b.max_len = std::max(b.max_len, static_cast<int>(u.tokens.size()));
        }
      }
      for (int ci : b.conversation_index) {
        const Conversation& conv =
            corpus.conversations[static_cast<size_t>(ci)];
        std::vector<std::vector<int>> conv_tokens;
        std::vector<std::vector<int>> conv_pos;
        std::vector<int> conv_labels;
        for (const Utterance& u : conv.utterances) {
          std::vector<int> ids(static_cast<size_t>(b.max_len), Vocab::kPad);
          for (size_t k = 0; k < u.tokens.size(); ++k) {
            ids[k] = vocab.lookup(u.tokens[k]);
          }
          conv_tokens.push_back(std::move(ids));
          if (pos_vocab != nullptr) {
            if (u.pos.empty()) {
              throw DataError("conversation '" + conv.id +
                              "' lacks POS tags but the POS branch is enabled");
            }
            std::vector<int> pids(static_cast<size_t>(b.max_len), Vocab::kPad);
            for (size_t k = 0; k < u.pos.size(); ++k) {
              pids[k] = pos_vocab->lookup(u.pos[k]);
            }
            conv_pos.push_back(std::move(pids));
          }
          auto it = label_index.find(u.label);
          if (it == label_index.end()) {
            throw DataError("conversation '" + conv.id + "': label '" +
                            u.label + "' is not in the model label set");
          }
          conv_labels.push_back(it->second);
        }
        b.tokens.push_back(std::move(conv_tokens));
        if (pos_vocab != nullptr) b.pos_tags.push_back(std::move(conv_pos));
        b.labels.push_back(std::move(conv_labels));
      }
      batches.push_back(std::move(b));
    }
  }
  rng.shuffle(batches);
  return batches;
}

SynthScheme parse_synth_scheme(const std::string& name) {
  if (name == "markov_labels") return SynthScheme::MarkovLabels;
  if (name == "lexical_labels") return SynthScheme::LexicalLabels;
  if (name == "mixed") return SynthScheme::Mixed;
  throw std::invalid_argument("unknown synthetic scheme '" + name + "'");
}

std::string synth_scheme_name(SynthScheme scheme) {
  switch (scheme) {
    case SynthScheme::MarkovLabels:
      return "markov_labels";
    case SynthScheme::LexicalLabels:
      return "lexical_labels";
    case SynthScheme::Mixed:
      return "mixed";
  }
  throw std::invalid_argument("bad scheme value");
}

namespace {

constexpr int kMaxLabels = 10;
const char* const kLabelNames[kMaxLabels] = {
    "statement", "question", "backchannel", "opinion",  "request",
    "agreement", "disagreement", "apology", "thanks",   "greeting"};
const char* const kKeywords[kMaxLabels][3] = {
    {"fact", "indeed", "certainly"},
    {"what", "why", "how"},
    {"yeah", "uhhuh", "okay"},
    {"think", "believe", "feel"},
    {"please", "could", "would"},
    {"agree", "right", "exactly"},
    {"no", "never", "wrong"},
    {"sorry", "apologize", "oops"},
    {"thanks", "thank", "appreciate"},
    {"hello", "hi", "hey"},
};
const char* const kFiller[] = {
    "the", "a",    "to",   "and",  "of", "in",   "it", "is",
    "was", "for",  "on",   "that", "with", "as", "at", "by",
    "this", "but", "from", "they", "we",   "you", "so", "well",
};
constexpr int kNumFiller = static_cast<int>(std::size(kFiller));

// mixed-scheme utterance type split
constexpr double kMixedPlain = 0.4;
constexpr double kMixedOrdered = 0.3;
// keyword density for plain mixed utterances
constexpr double kMixedKeywordProb = 0.35;

std::string pick_keyword(Rng& rng, int label) {
  return kKeywords[label][rng.uniform_int(3)];
}

std::string pick_filler(Rng& rng) { return kFiller[rng.uniform_int(kNumFiller)]; }

void tag_pos(Utterance& u) {
  static const std::set<std::string> keyword_set = [] {
    std::set<std::string> s;
    for (const auto& row : kKeywords) {
      for (const char* w : row) s.insert(w);
    }
    return s;
  }();
  u.pos.clear();
  for (const std::string& tok : u.tokens) {
    u.pos.push_back(keyword_set.count(tok) ? "kw" : "fill");
  }
}

int next_markov_label(Rng& rng, int prev, double successor_mass,
                      int num_labels) {
  int succ = (prev + 1) % num_labels;
  if (rng.uniform() < successor_mass) return succ;
  int other = rng.uniform_int(num_labels - 1);
  return other >= succ ? other + 1 : other;
}

Utterance markov_utterance(Rng& rng, int label, const SynthSpec& spec) {
  Utterance u;
  u.label = kLabelNames[label];
  int len = spec.min_tokens + rng.uniform_int(spec.max_tokens -
                                              spec.min_tokens + 1);
  for (int k = 0; k < len; ++k) {
    u.tokens.push_back(rng.uniform() < spec.keyword_prob
                           ? pick_keyword(rng, label)
                           : pick_filler(rng));
  }
  tag_pos(u);
  return u;
}

Utterance lexical_utterance(Rng& rng, int label, const SynthSpec& spec) {
  Utterance u;
  u.label = kLabelNames[label];
  int len = spec.min_tokens + rng.uniform_int(spec.max_tokens -
                                              spec.min_tokens + 1);
  for (int k = 0; k < len; ++k) u.tokens.push_back(pick_filler(rng));
  u.tokens[static_cast<size_t>(rng.uniform_int(len))] =
      pick_keyword(rng, label);
  tag_pos(u);
  return u;
}

// Two keywords from different labels; the later one wins. Readers that
// ignore token order cannot tell which.
Utterance ordered_utterance(Rng& rng, int label, const SynthSpec& spec) {
  Utterance u;
  u.label = kLabelNames[label];
  int len = std::max(2, spec.min_tokens) +
            rng.uniform_int(std::max(1, spec.max_tokens -
                                            std::max(2, spec.min_tokens) + 1));
  for (int k = 0; k < len; ++k) u.tokens.push_back(pick_filler(rng));
  int distractor = rng.uniform_int(spec.num_labels - 1);
  if (distractor >= label) ++distractor;
  int p2 = 1 + rng.uniform_int(len - 1);
  int p1 = rng.uniform_int(p2);
  u.tokens[static_cast<size_t>(p1)] = pick_keyword(rng, distractor);
  u.tokens[static_cast<size_t>(p2)] = pick_keyword(rng, label);
  tag_pos(u);
  return u;
}

Utterance context_utterance(Rng& rng, int label, const SynthSpec& spec) {
  Utterance u;
  u.label = kLabelNames[label];
  int len = spec.min_tokens + rng.uniform_int(spec.max_tokens -
                                              spec.min_tokens + 1);
  for (int k = 0; k < len; ++k) u.tokens.push_back(pick_filler(rng));
  tag_pos(u);
  return u;
}

}  // namespace

Corpus synth_corpus(const SynthSpec& spec, uint64_t seed) {
  if (spec.num_conversations < 1 || spec.min_utterances < 1 ||
      spec.max_utterances < spec.min_utterances || spec.min_tokens < 1 ||
      spec.max_tokens < spec.min_tokens) {
    throw std::invalid_argument("synthetic corpus sizes must be positive");
  }
  if (spec.num_labels < 2 || spec.num_labels > kMaxLabels) {
    throw std::invalid_argument("synthetic label count must be in 2.." +
                                std::to_string(kMaxLabels));
  }
  Rng rng(seed);
  Corpus corpus;
  std::string prefix = synth_scheme_name(spec.scheme);
  for (int ci = 0; ci < spec.num_conversations; ++ci) {
    Conversation conv;
    conv.id = prefix + "-" + std::to_string(ci);
    int r = spec.min_utterances +
            rng.uniform_int(spec.max_utterances - spec.min_utterances + 1);
    int prev_label = -1;
    for (int j = 0; j < r; ++j) {
      int label;
      Utterance u;
      switch (spec.scheme) {
        case SynthScheme::MarkovLabels:
          label = prev_label < 0
                      ? rng.uniform_int(spec.num_labels)
                      : next_markov_label(rng, prev_label, spec.successor_mass,
                                          spec.num_labels);
          u = markov_utterance(rng, label, spec);
          break;
        case SynthScheme::LexicalLabels:
          label = rng.uniform_int(spec.num_labels);
          u = lexical_utterance(rng, label, spec);
          break;
        case SynthScheme::Mixed: {
          double kind = rng.uniform();
          if (j == 0 && kind >= kMixedPlain + kMixedOrdered) {
            kind = rng.uniform(0.0, kMixedPlain + kMixedOrdered);
          }
          if (kind < kMixedPlain) {
            label = rng.uniform_int(spec.num_labels);
            SynthSpec plain = spec;
            plain.keyword_prob = kMixedKeywordProb;
            u = markov_utterance(rng, label, plain);
            bool has_keyword = false;
            for (const std::string& p : u.pos) {
              if (p == "kw") has_keyword = true;
            }
            if (!has_keyword) {
              int pos = rng.uniform_int(static_cast<int>(u.tokens.size()));
              u.tokens[static_cast<size_t>(pos)] = pick_keyword(rng, label);
              tag_pos(u);
            }
          } else if (kind < kMixedPlain + kMixedOrdered) {
            label = rng.uniform_int(spec.num_labels);
            u = ordered_utterance(rng, label, spec);
          } else {
            label = (prev_label + 1) % spec.num_labels;
            u = context_utterance(rng, label, spec);
          }
          break;
        }
      }
      prev_label = label;
      conv.utterances.push_back(std::move(u));
    }
    corpus.conversations.push_back(std::move(conv));
  }
  // label_set in first-appearance order, same as load_corpus, so a generated
  // corpus and its saved copy index labels identically
  std::set<std::string> seen_labels;
  for (const Conversation& conv : corpus.conversations) {
    for (const Utterance& u : conv.utterances) {
      if (seen_labels.insert(u.label).second) {
        corpus.label_set.push_back(u.label);
      }
    }
  }
  return corpus;
}

}  // namespace dact
