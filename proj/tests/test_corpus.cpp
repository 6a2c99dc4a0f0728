#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "dact/corpus.h"
#include "dact/errors.h"
#include "doctest.h"

using namespace dact;

namespace {

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  REQUIRE(out.good());
  out << content;
}

struct TempFile {
  std::string path;
  explicit TempFile(std::string p, const std::string& content)
      : path(std::move(p)) {
    write_file(path, content);
  }
  ~TempFile() { std::remove(path.c_str()); }
};

const char* kFixture =
    R"({"id":"c1","utterances":[{"tokens":["hello","there"],"label":"greet"},{"tokens":["bye"],"label":"close"}]}
{"id":"c2","utterances":[{"tokens":["hello","again"],"label":"greet","pos":["x","y"]}]}
)";

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += " ";
    out += tokens[i];
  }
  return out;
}

}  // namespace

TEST_CASE("preprocessing lower-cases, strips commas and exclamations") {
  CHECK(preprocess("Hi, How are you?") ==
        std::vector<std::string>{"hi", "how", "are", "you?"});
  CHECK(preprocess("YEAH!") == std::vector<std::string>{"yeah"});
  CHECK(preprocess("") == std::vector<std::string>{"<unk>"});
  CHECK(preprocess("!,!") == std::vector<std::string>{"<unk>"});
  CHECK(preprocess("  spaced\tout \n words ") ==
        std::vector<std::string>{"spaced", "out", "words"});
}

TEST_CASE("preprocessing is idempotent") {
  std::vector<std::string> samples = {
      "Hi, How are you?", "YEAH!", "Mixed CASE, with! marks?!",
      "", "a,b!c d", "Don't stop"};
  for (const std::string& s : samples) {
    std::vector<std::string> once = preprocess(s);
    CHECK(preprocess(join(once)) == once);
  }
}

TEST_CASE("loading a two-conversation fixture") {
  TempFile f("fixture_corpus.jsonl", kFixture);
  Corpus c = load_corpus(f.path);
  REQUIRE(c.conversations.size() == 2);
  CHECK(c.conversations[0].id == "c1");
  CHECK(c.conversations[0].utterances.size() == 2);
  CHECK(c.conversations[0].utterances[0].tokens ==
        std::vector<std::string>{"hello", "there"});
  CHECK(c.conversations[0].utterances[1].label == "close");
  CHECK(c.conversations[1].utterances[0].pos ==
        std::vector<std::string>{"x", "y"});
  CHECK(c.label_set == std::vector<std::string>{"greet", "close"});
  CHECK(c.utterance_count() == 3);
}

TEST_CASE("corpus loading reports malformed lines with their number") {
  TempFile bad_json("bad_json.jsonl",
                    "{\"id\":\"a\",\"utterances\":[{\"tokens\":[\"x\"],"
                    "\"label\":\"l\"}]}\nnot json\n");
  try {
    load_corpus(bad_json.path);
    FAIL("expected a data error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
}

TEST_CASE("corpus loading rejects unknown fields") {
  TempFile f("unknown_field.jsonl",
             R"({"id":"a","utterances":[{"tokens":["x"],"label":"l"}],"extra":1})"
             "\n");
  CHECK_THROWS_AS(load_corpus(f.path), DataError);
  TempFile g("unknown_utt_field.jsonl",
             R"({"id":"a","utterances":[{"tokens":["x"],"label":"l","speaker":"b"}]})"
             "\n");
  CHECK_THROWS_AS(load_corpus(g.path), DataError);
}

TEST_CASE("corpus loading names the conversation on pos length mismatch") {
  TempFile f("bad_pos.jsonl",
             R"({"id":"convo-9","utterances":[{"tokens":["x","y"],"label":"l","pos":["a"]}]})"
             "\n");
  try {
    load_corpus(f.path);
    FAIL("expected a data error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("convo-9") != std::string::npos);
  }
}

TEST_CASE("corpus loading rejects structural problems") {
  TempFile empty_conv("empty_conv.jsonl", R"({"id":"a","utterances":[]})" "\n");
  CHECK_THROWS_AS(load_corpus(empty_conv.path), DataError);
  TempFile no_tokens("no_tokens.jsonl",
                     R"({"id":"a","utterances":[{"tokens":[],"label":"l"}]})" "\n");
  CHECK_THROWS_AS(load_corpus(no_tokens.path), DataError);
  TempFile no_label("no_label.jsonl",
                    R"({"id":"a","utterances":[{"tokens":["x"]}]})" "\n");
  CHECK_THROWS_AS(load_corpus(no_label.path), DataError);
  TempFile blank("blank.jsonl", "\n\n");
  CHECK_THROWS_AS(load_corpus(blank.path), DataError);
  CHECK_THROWS_AS(load_corpus("missing_file.jsonl"), DataError);
}

TEST_CASE("corpus save and load round-trips") {
  TempFile f("roundtrip_in.jsonl", kFixture);
  Corpus a = load_corpus(f.path);
  save_corpus(a, "roundtrip_out.jsonl");
  Corpus b = load_corpus("roundtrip_out.jsonl");
  CHECK(a.conversations == b.conversations);
  CHECK(a.label_set == b.label_set);
  std::remove("roundtrip_out.jsonl");
}

TEST_CASE("vocabulary of three distinct tokens has five entries") {
  Corpus c;
  c.label_set = {"l"};
  Conversation conv;
  conv.id = "a";
  Utterance u;
  u.tokens = {"red", "green", "red", "blue"};
  u.label = "l";
  conv.utterances.push_back(u);
  c.conversations.push_back(conv);

  Vocab v = build_vocab(c, 1);
  CHECK(v.size() == 5);
  CHECK(v.tokens[0] == Vocab::kPadToken);
  CHECK(v.tokens[1] == Vocab::kUnkToken);
  CHECK(v.lookup("red") == 2);
  CHECK(v.lookup("green") == 3);
  CHECK(v.lookup("blue") == 4);
  CHECK(v.lookup("absent") == Vocab::kUnk);

  Vocab pruned = build_vocab(c, 2);
  CHECK(pruned.size() == 3);  // pad, unk, red
  CHECK(pruned.lookup("green") == Vocab::kUnk);
  CHECK(pruned.lookup("red") == 2);

  CHECK_THROWS_AS(build_vocab(c, 0), std::invalid_argument);
}

TEST_CASE("vocabulary frequencies agree with an independent recount") {
  SynthSpec spec;
  spec.scheme = SynthScheme::LexicalLabels;
  spec.num_conversations = 20;
  Corpus c = synth_corpus(spec, 11);
  std::map<std::string, int> counts;
  for (const Conversation& conv : c.conversations) {
    for (const Utterance& u : conv.utterances) {
      for (const std::string& tok : u.tokens) ++counts[tok];
    }
  }
  Vocab v = build_vocab(c, 3);
  for (const auto& [tok, n] : counts) {
    if (n >= 3) {
      CHECK(v.lookup(tok) >= 2);
    } else {
      CHECK(v.lookup(tok) == Vocab::kUnk);
    }
  }
}

TEST_CASE("pretrained rows are copied for covered words") {
  Corpus c;
  c.label_set = {"l"};
  Conversation conv;
  conv.id = "a";
  Utterance u;
  u.tokens = {"hello", "there", "bye", "again"};
  u.label = "l";
  conv.utterances.push_back(u);
  c.conversations.push_back(conv);
  Vocab v = build_vocab(c, 1);
  REQUIRE(v.size() == 6);

  TempFile emb("pretrained.txt",
               "hello 0.1 0.2 0.3\nzzz 9 9 9\nbye -0.4 0.5 -0.6\n");
  Rng rng(5);
  PretrainedLoad load = load_pretrained(emb.path, v, 3, rng);
  CHECK(load.matrix.shape == std::vector<int>{6, 3});
  CHECK(load.found == 2);
  CHECK(load.coverage == doctest::Approx(0.5).epsilon(1e-12));
  int hello = v.lookup("hello");
  CHECK(load.matrix.at(hello, 0) == 0.1);
  CHECK(load.matrix.at(hello, 1) == 0.2);
  CHECK(load.matrix.at(hello, 2) == 0.3);
  int bye = v.lookup("bye");
  CHECK(load.matrix.at(bye, 0) == -0.4);
  for (int d = 0; d < 3; ++d) CHECK(load.matrix.at(Vocab::kPad, d) == 0.0);
  for (int row : {Vocab::kUnk, v.lookup("there"), v.lookup("again")}) {
    bool nonzero = false;
    for (int d = 0; d < 3; ++d) {
      double x = load.matrix.at(row, d);
      CHECK(std::abs(x) <= 0.05);
      if (x != 0.0) nonzero = true;
    }
    CHECK(nonzero);
  }
}

TEST_CASE("pretrained loading rejects dimension mismatches with line numbers") {
  Corpus c;
  c.label_set = {"l"};
  Conversation conv;
  conv.id = "a";
  Utterance u;
  u.tokens = {"hello"};
  u.label = "l";
  conv.utterances.push_back(u);
  c.conversations.push_back(conv);
  Vocab v = build_vocab(c, 1);

  TempFile shorter("pretrained_short.txt", "ok 1 2 3\nhello 1 2\n");
  Rng rng(1);
  try {
    load_pretrained(shorter.path, v, 3, rng);
    FAIL("expected a data error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  TempFile longer("pretrained_long.txt", "hello 1 2 3 4\n");
  CHECK_THROWS_AS(load_pretrained(longer.path, v, 3, rng), DataError);
}

TEST_CASE("batches chunk equal-length groups to the size cap") {
  SynthSpec spec;
  spec.scheme = SynthScheme::LexicalLabels;
  spec.num_conversations = 130;
  spec.min_utterances = 3;
  spec.max_utterances = 3;
  Corpus c = synth_corpus(spec, 3);
  Vocab v = build_vocab(c, 1);
  Rng rng(1);
  std::vector<Batch> batches = make_batches(c, v, c.label_set, nullptr, 64, rng);
  std::vector<int> sizes;
  for (const Batch& b : batches) sizes.push_back(b.size());
  std::sort(sizes.rbegin(), sizes.rend());
  CHECK(sizes == std::vector<int>{64, 64, 2});
}

TEST_CASE("batches never mix conversation lengths and cover the corpus once") {
  SynthSpec spec;
  spec.num_conversations = 37;
  spec.min_utterances = 2;
  spec.max_utterances = 6;
  Corpus c = synth_corpus(spec, 7);
  Vocab v = build_vocab(c, 1);
  Rng rng(9);
  std::vector<Batch> batches = make_batches(c, v, c.label_set, nullptr, 8, rng);
  std::multiset<int> seen;
  for (const Batch& b : batches) {
    for (int ci : b.conversation_index) {
      seen.insert(ci);
      CHECK(static_cast<int>(
                c.conversations[static_cast<size_t>(ci)].utterances.size()) ==
            b.r);
    }
    CHECK(b.size() <= 8);
    for (const auto& conv_tokens : b.tokens) {
      CHECK(static_cast<int>(conv_tokens.size()) == b.r);
      for (const auto& utt : conv_tokens) {
        CHECK(static_cast<int>(utt.size()) == b.max_len);
      }
    }
  }
  CHECK(seen.size() == 37);
  CHECK(*seen.rbegin() == 36);
  for (int i = 0; i < 37; ++i) CHECK(seen.count(i) == 1);
}

TEST_CASE("batch token padding preserves content and pads with zero") {
  Corpus c;
  c.label_set = {"l1", "l2"};
  Conversation conv;
  conv.id = "a";
  Utterance u1;
  u1.tokens = {"red", "green", "blue", "red"};
  u1.label = "l1";
  Utterance u2;
  u2.tokens = {"blue"};
  u2.label = "l2";
  conv.utterances = {u1, u2};
  c.conversations.push_back(conv);
  Vocab v = build_vocab(c, 1);
  Rng rng(1);
  std::vector<Batch> batches = make_batches(c, v, c.label_set, nullptr, 64, rng);
  REQUIRE(batches.size() == 1);
  const Batch& b = batches[0];
  CHECK(b.max_len == 4);
  CHECK(b.tokens[0][0] ==
        std::vector<int>{v.lookup("red"), v.lookup("green"), v.lookup("blue"),
                         v.lookup("red")});
  CHECK(b.tokens[0][1] == std::vector<int>{v.lookup("blue"), 0, 0, 0});
  CHECK(b.labels[0] == std::vector<int>{0, 1});
}

TEST_CASE("batching rejects labels outside the model label set") {
  SynthSpec spec;
  spec.num_conversations = 3;
  Corpus c = synth_corpus(spec, 1);
  Vocab v = build_vocab(c, 1);
  Rng rng(1);
  CHECK_THROWS_AS(make_batches(c, v, {"other"}, nullptr, 8, rng), DataError);
}

TEST_CASE("batching carries pos indices only when a tag vocabulary is given") {
  SynthSpec spec;
  spec.num_conversations = 4;
  Corpus c = synth_corpus(spec, 2);
  Vocab v = build_vocab(c, 1);
  Vocab pv = build_pos_vocab(c);
  CHECK(pv.size() == 4);  // pad, unk, and the two tag types
  Rng rng(1);
  std::vector<Batch> with_pos =
      make_batches(c, v, c.label_set, &pv, 8, rng);
  for (const Batch& b : with_pos) {
    CHECK(b.pos_tags.size() == b.tokens.size());
  }
  Rng rng2(1);
  std::vector<Batch> without =
      make_batches(c, v, c.label_set, nullptr, 8, rng2);
  for (const Batch& b : without) CHECK(b.pos_tags.empty());

  // strip tags from one utterance: the pos-enabled path must fail
  c.conversations[0].utterances[0].pos.clear();
  Rng rng3(1);
  CHECK_THROWS_AS(make_batches(c, v, c.label_set, &pv, 8, rng3), DataError);
}

TEST_CASE("synthetic corpora are deterministic per seed") {
  SynthSpec spec;
  spec.scheme = SynthScheme::MarkovLabels;
  spec.num_conversations = 12;
  Corpus a = synth_corpus(spec, 42);
  Corpus b = synth_corpus(spec, 42);
  CHECK(a.conversations == b.conversations);
  Corpus c = synth_corpus(spec, 43);
  CHECK(a.conversations != c.conversations);
  // label_set lists first appearances, matching what load_corpus rebuilds
  std::vector<std::string> order;
  std::set<std::string> seen;
  for (const Conversation& conv : a.conversations) {
    for (const Utterance& u : conv.utterances) {
      if (seen.insert(u.label).second) order.push_back(u.label);
    }
  }
  CHECK(a.label_set == order);
  CHECK(order.size() == 4);
}

TEST_CASE("generated corpus and its saved copy are the same corpus") {
  SynthSpec spec;
  spec.scheme = SynthScheme::Mixed;
  spec.num_conversations = 8;
  Corpus a = synth_corpus(spec, 5);
  TempFile f("synth_roundtrip.jsonl", "");
  save_corpus(a, f.path);
  Corpus b = load_corpus(f.path);
  CHECK(a.conversations == b.conversations);
  CHECK(a.label_set == b.label_set);
}

TEST_CASE("lexical corpus labels are recoverable from the keyword alone") {
  SynthSpec spec;
  spec.scheme = SynthScheme::LexicalLabels;
  spec.num_conversations = 50;
  Corpus c = synth_corpus(spec, 13);
  std::map<std::string, std::set<std::string>> keyword_to_labels;
  for (const Conversation& conv : c.conversations) {
    for (const Utterance& u : conv.utterances) {
      REQUIRE(u.pos.size() == u.tokens.size());
      int kw_count = 0;
      std::string kw;
      for (size_t i = 0; i < u.tokens.size(); ++i) {
        if (u.pos[i] == "kw") {
          ++kw_count;
          kw = u.tokens[i];
        } else {
          CHECK(u.pos[i] == "fill");
        }
      }
      CHECK(kw_count == 1);
      keyword_to_labels[kw].insert(u.label);
    }
  }
  // a keyword never serves two labels, so reading it is a perfect classifier
  for (const auto& [kw, labels] : keyword_to_labels) {
    CHECK(labels.size() == 1);
  }
}

TEST_CASE("markov label transitions converge to the generator matrix") {
  SynthSpec spec;
  spec.scheme = SynthScheme::MarkovLabels;
  spec.num_conversations = 1000;
  spec.min_utterances = 10;
  spec.max_utterances = 12;
  Corpus c = synth_corpus(spec, 99);
  // generator cycle order, independent of label_set indexing
  std::map<std::string, int> label_id = {
      {"statement", 0}, {"question", 1}, {"backchannel", 2}, {"opinion", 3}};
  double counts[4][4] = {};
  double row_totals[4] = {};
  for (const Conversation& conv : c.conversations) {
    for (size_t j = 1; j < conv.utterances.size(); ++j) {
      int a = label_id[conv.utterances[j - 1].label];
      int b = label_id[conv.utterances[j].label];
      counts[a][b] += 1.0;
      row_totals[a] += 1.0;
    }
  }
  for (int a = 0; a < 4; ++a) {
    REQUIRE(row_totals[a] > 0);
    for (int b = 0; b < 4; ++b) {
      double expect = b == (a + 1) % 4 ? spec.successor_mass
                                       : (1.0 - spec.successor_mass) / 3.0;
      CHECK(std::abs(counts[a][b] / row_totals[a] - expect) < 0.02);
    }
  }
}

TEST_CASE("mixed corpus context utterances follow the successor rule") {
  SynthSpec spec;
  spec.scheme = SynthScheme::Mixed;
  spec.num_conversations = 60;
  Corpus c = synth_corpus(spec, 21);
  std::map<std::string, int> label_id = {
      {"statement", 0}, {"question", 1}, {"backchannel", 2}, {"opinion", 3}};
  int context_count = 0;
  int keyword_bearing = 0;
  for (const Conversation& conv : c.conversations) {
    for (size_t j = 0; j < conv.utterances.size(); ++j) {
      const Utterance& u = conv.utterances[j];
      bool has_kw = false;
      for (const std::string& p : u.pos) {
        if (p == "kw") has_kw = true;
      }
      if (!has_kw) {
        // label only inferable from the previous utterance
        ++context_count;
        REQUIRE(j > 0);
        int prev = label_id[conv.utterances[j - 1].label];
        CHECK(label_id[u.label] == (prev + 1) % 4);
      } else {
        ++keyword_bearing;
      }
    }
  }
  CHECK(context_count > 0);
  CHECK(keyword_bearing > context_count);
}

TEST_CASE("widened label count keeps keywords exclusive to one label") {
  SynthSpec spec;
  spec.scheme = SynthScheme::MarkovLabels;
  spec.num_conversations = 200;
  spec.num_labels = 10;
  Corpus c = synth_corpus(spec, 17);
  CHECK(c.label_set.size() == 10);
  std::map<std::string, std::set<std::string>> keyword_to_labels;
  for (const Conversation& conv : c.conversations) {
    for (const Utterance& u : conv.utterances) {
      for (size_t i = 0; i < u.tokens.size(); ++i) {
        if (u.pos[i] == "kw") keyword_to_labels[u.tokens[i]].insert(u.label);
      }
    }
  }
  for (const auto& [kw, labels] : keyword_to_labels) {
    CHECK(labels.size() == 1);
  }
  CHECK(keyword_to_labels.size() == 30);  // every label's triple shows up

  SynthSpec bad = spec;
  bad.num_labels = 11;
  CHECK_THROWS_AS(synth_corpus(bad, 17), std::invalid_argument);
  bad.num_labels = 1;
  CHECK_THROWS_AS(synth_corpus(bad, 17), std::invalid_argument);
}

TEST_CASE("synthetic text is stable under preprocessing") {
  SynthSpec spec;
  spec.num_conversations = 5;
  Corpus c = synth_corpus(spec, 8);
  for (const Conversation& conv : c.conversations) {
    for (const Utterance& u : conv.utterances) {
      CHECK(preprocess(join(u.tokens)) == u.tokens);
    }
  }
}
