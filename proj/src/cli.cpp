#include "dact/cli.h"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "dact/checkpoint.h"
#include "dact/errors.h"

namespace dact {
namespace {

// DACT_LOG=quiet drops the informational chatter; results still print.
bool verbose() {
  const char* v = std::getenv("DACT_LOG");
  return v == nullptr || std::string(v) != "quiet";
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

bool is_path_key(const std::string& key) {
  return key == "train_path" || key == "valid_path" || key == "test_path" ||
         key == "embeddings_path" || key == "label_map_path" ||
         key == "out_dir";
}

void assign_path(RunConfig& rc, const std::string& key,
                 const std::string& value) {
  if (key == "train_path") rc.train_path = value;
  else if (key == "valid_path") rc.valid_path = value;
  else if (key == "test_path") rc.test_path = value;
  else if (key == "embeddings_path") rc.embeddings_path = value;
  else if (key == "label_map_path") rc.label_map_path = value;
  else rc.out_dir = value;
}

void ensure_dir(const std::string& dir) {
  if (dir.empty()) return;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir + ": " + ec.message());
}

void write_text_atomic(const std::string& path, const std::string& content) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + tmp);
    out << content;
    out.flush();
    if (!out) throw DataError("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

std::string config_text(const RunConfig& rc) {
  std::ostringstream out;
  for (const auto& [k, v] : run_config_to_map(rc)) out << k << "=" << v << "\n";
  return out.str();
}

void echo_config(const RunConfig& rc) {
  if (!verbose()) return;
  std::cout << "# effective config\n" << config_text(rc);
}

void write_config_echo(const RunConfig& rc) {
  ensure_dir(rc.out_dir);
  write_text_atomic(rc.out_dir + "/config.txt", config_text(rc));
}

std::vector<std::string> read_label_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open label map: " + path);
  std::vector<std::string> labels;
  std::set<std::string> seen;
  std::string line;
  while (std::getline(in, line)) {
    std::string label = trim(line);
    if (label.empty()) continue;
    if (!seen.insert(label).second)
      throw DataError("duplicate label in " + path + ": " + label);
    labels.push_back(label);
  }
  if (labels.empty()) throw DataError("label map is empty: " + path);
  return labels;
}

void load_embeddings_into(Model& m, const std::string& path) {
  Rng rng(m.config.seed ^ 0x9e3779b97f4a7c15ULL);
  PretrainedLoad load =
      load_pretrained(path, m.vocab, m.config.embed_dim, rng);
  m.encoder.embedding.table->value = load.matrix;
  if (verbose())
    std::printf("embeddings: %d/%d vocabulary words found (coverage %.3f)\n",
                load.found, m.vocab.size() - 2, load.coverage);
}

void print_history(const TrainResult& res) {
  if (!verbose()) return;
  for (const EpochRecord& r : res.history)
    std::printf("epoch %d  loss %.6f  valid_acc %.4f  lr %g\n", r.epoch,
                r.train_loss, r.valid_acc, r.lr);
}

std::string confusion_csv(const Metrics& met,
                          const std::vector<std::string>& labels) {
  std::ostringstream out;
  out << "label";
  for (const std::string& l : labels) out << "," << l;
  out << "\n";
  for (size_t i = 0; i < labels.size(); ++i) {
    out << labels[i];
    for (size_t j = 0; j < labels.size(); ++j) out << "," << met.counts[i][j];
    out << "\n";
  }
  return out.str();
}

int cmd_train(const RunConfig& rc) {
  if (rc.train_path.empty()) throw ConfigError("train_path is required");
  if (rc.valid_path.empty()) throw ConfigError("valid_path is required");
  validate_config(rc.train);
  echo_config(rc);

  Corpus train_c = load_corpus(rc.train_path);
  Corpus valid_c = load_corpus(rc.valid_path);
  std::vector<std::string> labels = rc.label_map_path.empty()
                                        ? train_c.label_set
                                        : read_label_map(rc.label_map_path);
  Vocab vocab = build_vocab(train_c, rc.train.min_count);
  Vocab pos_vocab;
  if (rc.train.pos.enabled) pos_vocab = build_pos_vocab(train_c);

  Model m = build_model(rc.train, std::move(vocab), labels,
                        std::move(pos_vocab));
  if (!rc.embeddings_path.empty()) load_embeddings_into(m, rc.embeddings_path);

  if (verbose())
    std::printf("training on %zu conversations (%d utterances), validating on %zu\n",
                train_c.conversations.size(), train_c.utterance_count(),
                valid_c.conversations.size());
  TrainResult res = train(m, train_c, valid_c);
  print_history(res);

  write_config_echo(rc);
  save_model(m, rc.out_dir + "/model");
  save_history(res.history, rc.out_dir + "/history.txt");
  std::printf("ran %d epochs, best epoch %d, best valid_acc %.4f\n",
              res.epochs_run, res.best_epoch, res.best_valid_acc);
  if (verbose()) std::printf("model and history written to %s\n", rc.out_dir.c_str());
  if (res.diverged) {
    std::cerr << "training diverged on a non-finite update; "
                 "kept the best checkpoint reached before the failure\n";
    return 3;
  }
  return 0;
}

// Shared by eval and predict: checkpoint from out_dir, corpus from test_path.
Model load_for_inference(const RunConfig& rc, Corpus& corpus) {
  if (rc.test_path.empty()) throw ConfigError("test_path is required");
  Model m = load_model(rc.out_dir + "/model");
  corpus = load_corpus(rc.test_path);
  std::set<std::string> known(m.labels.begin(), m.labels.end());
  for (const std::string& l : corpus.label_set)
    if (!known.count(l))
      throw DataError("corpus label not covered by the model: " + l);
  Vocab corpus_vocab = build_vocab(corpus, m.vocab.min_count);
  if (vocab_hash(corpus_vocab) != vocab_hash(m.vocab))
    std::cerr << "warning: corpus vocabulary differs from the training "
                 "vocabulary; unseen tokens map to the unknown bucket\n";
  return m;
}

int cmd_eval(const RunConfig& rc) {
  echo_config(rc);
  Corpus corpus;
  Model m = load_for_inference(rc, corpus);
  Metrics met = evaluate(m, corpus);
  write_config_echo(rc);
  write_text_atomic(rc.out_dir + "/confusion.csv", confusion_csv(met, m.labels));
  std::printf("accuracy %.4f (%d/%d)\n", met.accuracy, met.correct, met.total);
  if (verbose())
    std::printf("confusion matrix written to %s/confusion.csv\n", rc.out_dir.c_str());
  return 0;
}

int cmd_predict(const RunConfig& rc) {
  echo_config(rc);
  Corpus corpus;
  Model m = load_for_inference(rc, corpus);
  std::vector<Prediction> preds;
  Metrics met = evaluate(m, corpus, &preds);
  std::ostringstream out;
  for (const Prediction& p : preds)
    out << p.conversation_id << "\t" << p.utterance_index << "\t" << p.gold
        << "\t" << p.predicted << "\n";
  write_config_echo(rc);
  write_text_atomic(rc.out_dir + "/predictions.tsv", out.str());
  std::printf("wrote %zu predictions to %s/predictions.tsv (accuracy %.4f)\n",
              preds.size(), rc.out_dir.c_str(), met.accuracy);
  return 0;
}

int cmd_ablate(const RunConfig& rc) {
  if (rc.train_path.empty()) throw ConfigError("train_path is required");
  if (rc.valid_path.empty()) throw ConfigError("valid_path is required");
  echo_config(rc);

  Corpus train_c = load_corpus(rc.train_path);
  Corpus valid_c = load_corpus(rc.valid_path);
  Corpus table_c = rc.test_path.empty() ? valid_c : load_corpus(rc.test_path);
  std::vector<std::string> labels = rc.label_map_path.empty()
                                        ? train_c.label_set
                                        : read_label_map(rc.label_map_path);
  Vocab vocab = build_vocab(train_c, rc.train.min_count);
  if ((rc.train.attention.enabled || rc.train.pos.enabled) && verbose())
    std::cout << "note: the ablation grid runs without attention or tag features\n";

  const Variant variants[] = {Variant::WE, Variant::WE_UL, Variant::WE_UL_CL};
  const Classifier classifiers[] = {Classifier::LR, Classifier::CRF};
  double table[3][2];
  for (int vi = 0; vi < 3; ++vi) {
    for (int ci = 0; ci < 2; ++ci) {
      TrainConfig cfg = rc.train;
      cfg.variant = variants[vi];
      cfg.classifier = classifiers[ci];
      cfg.attention = AttentionConfig{};
      cfg.pos = PosConfig{};
      validate_config(cfg);
      Model m = build_model(cfg, vocab, labels);
      if (!rc.embeddings_path.empty())
        load_embeddings_into(m, rc.embeddings_path);
      TrainResult res = train(m, train_c, valid_c);
      Metrics met = evaluate(m, table_c);
      table[vi][ci] = met.accuracy;
      std::printf("%s+%s  accuracy %.4f  (best epoch %d, %d epochs run)\n",
                  variant_name(cfg.variant).c_str(),
                  classifier_name(cfg.classifier).c_str(), met.accuracy,
                  res.best_epoch, res.epochs_run);
    }
  }

  std::ostringstream out;
  out << "variant\tlr\tcrf\n";
  for (int vi = 0; vi < 3; ++vi)
    out << variant_name(variants[vi]) << "\t" << format_double(table[vi][0])
        << "\t" << format_double(table[vi][1]) << "\n";
  write_config_echo(rc);
  write_text_atomic(rc.out_dir + "/ablation.tsv", out.str());
  std::printf("\n%-10s %8s %8s\n", "variant", "lr", "crf");
  for (int vi = 0; vi < 3; ++vi)
    std::printf("%-10s %8.4f %8.4f\n", variant_name(variants[vi]).c_str(),
                table[vi][0], table[vi][1]);
  if (verbose())
    std::printf("table written to %s/ablation.tsv\n", rc.out_dir.c_str());
  return 0;
}

int cmd_gradcheck(const RunConfig& rc,
                  const std::map<std::string, std::string>& given) {
  TrainConfig cfg = rc.train;
  // Unset dimensions fall back to toy sizes; the check is meant to run on a
  // model small enough for finite differences.
  if (!given.count("hidden_size")) cfg.hidden_size = 4;
  if (!given.count("embed_dim")) cfg.embed_dim = 6;
  if (!given.count("pos.dim")) cfg.pos.dim = 3;
  if (!given.count("attention.enabled"))
    cfg.attention.enabled = cfg.variant == Variant::WE_UL_CL;
  if (!given.count("pos.enabled")) cfg.pos.enabled = true;
  if (cfg.hidden_size > 8)
    throw ConfigError("gradcheck runs at toy sizes only (hidden_size <= 8)");
  validate_config(cfg);

  RunConfig effective = rc;
  effective.train = cfg;
  echo_config(effective);

  SynthSpec spec;
  spec.scheme = SynthScheme::Mixed;
  spec.num_conversations = 1;
  spec.min_utterances = 3;
  spec.max_utterances = 3;
  spec.min_tokens = 3;
  spec.max_tokens = 5;
  Corpus corpus = synth_corpus(spec, cfg.seed);
  Vocab vocab = build_vocab(corpus, 1);
  Vocab pos_vocab;
  if (cfg.pos.enabled) pos_vocab = build_pos_vocab(corpus);
  Model m = build_model(cfg, std::move(vocab), corpus.label_set,
                        std::move(pos_vocab));

  // Shake the parameters off their small symmetric init: gradients there can
  // sit at the noise floor of the finite-difference quotient.
  Rng shake(cfg.seed ^ 0x7f4a7c15ULL);
  for (Parameter* p : m.store.all())
    for (double& x : p->value.data) x = shake.uniform(-0.7, 0.7);

  EncodedConversation ec = encode_conversation_ids(
      corpus.conversations[0], m.vocab,
      cfg.pos.enabled ? &m.pos_vocab : nullptr, m.labels);
  Rng unused(0);
  auto f = [&](Tape& t) {
    Value unary = model_unary(t, m, ec, unused, false);
    return model_loss(t, m, unary, ec.labels);
  };

  const double threshold = 1e-4;
  double worst = 0.0;
  std::vector<std::string> offenders;
  for (Parameter* p : m.store.all()) {
    double err = grad_check(f, {p}, 1e-5);
    worst = std::max(worst, err);
    bool ok = err < threshold;
    if (!ok) offenders.push_back(p->name);
    std::printf("%-24s max_rel_err %.3e%s\n", p->name.c_str(), err,
                ok ? "" : "  FAIL");
  }
  std::printf("gradcheck worst %.3e threshold %.0e: %s\n", worst, threshold,
              offenders.empty() ? "pass" : "FAIL");
  if (!offenders.empty()) {
    std::cerr << "gradient check failed for:";
    for (const std::string& n : offenders) std::cerr << " " << n;
    std::cerr << "\n";
    return 3;
  }
  return 0;
}

struct SynthArgs {
  std::string scheme = "mixed";
  SynthSpec spec;
  std::string file;
};

int cmd_synth(const RunConfig& rc, const SynthArgs& args) {
  SynthSpec spec = args.spec;
  spec.scheme = parse_synth_scheme(args.scheme);
  if (spec.num_conversations < 1) throw ConfigError("count must be positive");
  if (spec.min_utterances < 1 || spec.max_utterances < spec.min_utterances)
    throw ConfigError("utterance bounds must satisfy 1 <= min <= max");
  if (spec.min_tokens < 1 || spec.max_tokens < spec.min_tokens)
    throw ConfigError("token bounds must satisfy 1 <= min <= max");
  if (spec.num_labels < 2 || spec.num_labels > 10)
    throw ConfigError("labels must be in 2..10");

  std::string path = args.file;
  if (path.empty()) {
    ensure_dir(rc.out_dir);
    path = rc.out_dir + "/synth.jsonl";
  } else {
    std::filesystem::path parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) ensure_dir(parent.string());
  }

  if (verbose())
    std::printf(
        "# effective config\nscheme=%s\ncount=%d\nutterances=%d..%d\n"
        "tokens=%d..%d\nseed=%llu\nfile=%s\n",
        args.scheme.c_str(), spec.num_conversations, spec.min_utterances,
        spec.max_utterances, spec.min_tokens, spec.max_tokens,
        static_cast<unsigned long long>(rc.train.seed), path.c_str());

  Corpus corpus = synth_corpus(spec, rc.train.seed);
  save_corpus(corpus, path);
  std::printf("wrote %zu conversations (%d utterances) to %s\n",
              corpus.conversations.size(), corpus.utterance_count(),
              path.c_str());
  return 0;
}

}  // namespace

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::map<std::string, std::string> m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected key=value");
    std::string key = trim(s.substr(0, eq));
    if (key.empty())
      throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
    m[key] = trim(s.substr(eq + 1));
  }
  return m;
}

RunConfig run_config_from_map(const std::map<std::string, std::string>& m,
                              const RunConfig& base) {
  RunConfig rc = base;
  std::map<std::string, std::string> train_keys;
  for (const auto& [k, v] : m) {
    if (is_path_key(k)) assign_path(rc, k, v);
    else train_keys[k] = v;
  }
  rc.train = config_from_map(train_keys, base.train);
  return rc;
}

std::map<std::string, std::string> run_config_to_map(const RunConfig& rc) {
  std::map<std::string, std::string> m = config_to_map(rc.train);
  m["train_path"] = rc.train_path;
  m["valid_path"] = rc.valid_path;
  m["test_path"] = rc.test_path;
  m["embeddings_path"] = rc.embeddings_path;
  m["label_map_path"] = rc.label_map_path;
  m["out_dir"] = rc.out_dir;
  return m;
}

int cli_main(const std::vector<std::string>& args) {
  CLI::App app{"hierarchical dialogue-act sequence labeling toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  unsigned long long seed = 0;
  std::string out_dir;
  std::vector<std::string> sets;
  SynthArgs synth_args;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key=value config file");
    sub->add_option("--seed", seed, "random seed override");
    sub->add_option("--out", out_dir, "output directory override");
    sub->add_option("--set", sets, "key=value override, repeatable");
  };

  CLI::App* train_cmd = app.add_subcommand("train", "fit a model and write a checkpoint");
  CLI::App* eval_cmd = app.add_subcommand("eval", "score a corpus against a checkpoint");
  CLI::App* predict_cmd = app.add_subcommand("predict", "write per-utterance predictions");
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "train the 3x2 variant/classifier grid");
  CLI::App* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference check at toy size");
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic corpus");
  for (CLI::App* sub : {train_cmd, eval_cmd, predict_cmd, ablate_cmd,
                        gradcheck_cmd, synth_cmd})
    add_common(sub);

  synth_cmd->add_option("--scheme", synth_args.scheme,
                        "markov_labels, lexical_labels or mixed");
  synth_cmd->add_option("--count", synth_args.spec.num_conversations,
                        "conversations to generate");
  synth_cmd->add_option("--min-utterances", synth_args.spec.min_utterances);
  synth_cmd->add_option("--max-utterances", synth_args.spec.max_utterances);
  synth_cmd->add_option("--min-tokens", synth_args.spec.min_tokens);
  synth_cmd->add_option("--max-tokens", synth_args.spec.max_tokens);
  synth_cmd->add_option("--successor-mass", synth_args.spec.successor_mass,
                        "markov chain mass on the designated successor");
  synth_cmd->add_option("--keyword-prob", synth_args.spec.keyword_prob,
                        "per-token keyword chance in markov utterances");
  synth_cmd->add_option("--labels", synth_args.spec.num_labels,
                        "distinct dialogue-act labels (2..10)");
  synth_cmd->add_option("--file", synth_args.file,
                        "output path (default OUT/synth.jsonl)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    std::map<std::string, std::string> merged;
    if (!config_path.empty()) merged = read_config_file(config_path);
    for (const std::string& kv : sets) {
      size_t eq = kv.find('=');
      if (eq == std::string::npos || eq == 0)
        throw ConfigError("--set expects key=value, got: " + kv);
      merged[trim(kv.substr(0, eq))] = trim(kv.substr(eq + 1));
    }
    CLI::App* active = app.get_subcommands().at(0);
    if (active->count("--seed") > 0) merged["seed"] = std::to_string(seed);
    if (active->count("--out") > 0) merged["out_dir"] = out_dir;
    RunConfig rc = run_config_from_map(merged);

    if (train_cmd->parsed()) return cmd_train(rc);
    if (eval_cmd->parsed()) return cmd_eval(rc);
    if (predict_cmd->parsed()) return cmd_predict(rc);
    if (ablate_cmd->parsed()) return cmd_ablate(rc);
    if (gradcheck_cmd->parsed()) return cmd_gradcheck(rc, merged);
    return cmd_synth(rc, synth_args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace dact
