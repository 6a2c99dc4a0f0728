#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dact/cli.h"
#include "dact/corpus.h"
#include "dact/errors.h"
#include "doctest.h"

using namespace dact;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split(const std::string& s, char delim) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, delim)) parts.push_back(item);
  return parts;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  for (const std::string& l : split(text, '\n'))
    if (!l.empty()) out.push_back(l);
  return out;
}

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("dact_cli_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

CliResult run_cli(const fs::path& dir, const std::string& args) {
  std::string cmd = "cd '" + dir.string() + "' && DACT_LOG=quiet '" +
                    std::string(DACT_CLI_BIN) + "' " + args +
                    " >cli.out 2>cli.err";
  int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(dir / "cli.out");
  r.err = slurp(dir / "cli.err");
  return r;
}

// Corpora plus one trained checkpoint, built once and shared by the
// inference-side cases.
struct Workspace {
  TempDir dir;
  bool ok = false;
  Workspace() {
    ok = run_cli(dir.path, "synth --count 12 --seed 7 --file train.jsonl").code == 0 &&
         run_cli(dir.path, "synth --count 4 --seed 8 --file valid.jsonl").code == 0 &&
         run_cli(dir.path, "synth --count 4 --seed 9 --file test.jsonl").code == 0 &&
         run_cli(dir.path,
                 "train --set train_path=train.jsonl --set valid_path=valid.jsonl "
                 "--set hidden_size=6 --set embed_dim=6 --set max_epochs=2 "
                 "--seed 5 --out run").code == 0;
  }
};

Workspace& ws() {
  static Workspace w;
  return w;
}

const std::string kTinyTrain =
    "--set train_path=train.jsonl --set valid_path=valid.jsonl "
    "--set hidden_size=6 --set embed_dim=6 --set max_epochs=2 --seed 5";

}  // namespace

TEST_CASE("config file parsing") {
  TempDir d;
  fs::path p = d.path / "c.txt";
  std::ofstream(p) << "# comment\n\n  hidden_size = 12 \nvariant=we_ul\n";
  auto m = read_config_file(p.string());
  CHECK(m.size() == 2);
  CHECK(m.at("hidden_size") == "12");
  CHECK(m.at("variant") == "we_ul");

  std::ofstream(p) << "hidden_size\n";
  CHECK_THROWS_WITH_AS(read_config_file(p.string()),
                       doctest::Contains(":1:"), ConfigError);
  std::ofstream(p) << "a=1\n = 2\n";
  CHECK_THROWS_WITH_AS(read_config_file(p.string()),
                       doctest::Contains(":2:"), ConfigError);
  CHECK_THROWS_AS(read_config_file((d.path / "absent.txt").string()),
                  ConfigError);
}

TEST_CASE("run config map round trip") {
  std::map<std::string, std::string> m = {
      {"train_path", "a.jsonl"}, {"out_dir", "runs/x"}, {"hidden_size", "9"}};
  RunConfig rc = run_config_from_map(m);
  CHECK(rc.train_path == "a.jsonl");
  CHECK(rc.out_dir == "runs/x");
  CHECK(rc.train.hidden_size == 9);
  CHECK(rc.train.embed_dim == 300);

  auto back = run_config_to_map(rc);
  CHECK(back.at("train_path") == "a.jsonl");
  CHECK(back.at("out_dir") == "runs/x");
  CHECK(back.at("hidden_size") == "9");
  CHECK(back.count("valid_path") == 1);
  CHECK(back.count("embeddings_path") == 1);
  CHECK(back.count("label_map_path") == 1);
  CHECK(back.count("test_path") == 1);

  CHECK_THROWS_AS(run_config_from_map({{"mystery", "1"}}), ConfigError);
}

TEST_CASE("synth is deterministic per seed and validates its arguments") {
  TempDir d;
  CHECK(run_cli(d.path, "synth --count 5 --seed 42 --file a.jsonl").code == 0);
  CHECK(run_cli(d.path, "synth --count 5 --seed 42 --file b.jsonl").code == 0);
  CHECK(run_cli(d.path, "synth --count 5 --seed 43 --file c.jsonl").code == 0);
  CHECK(slurp(d.path / "a.jsonl") == slurp(d.path / "b.jsonl"));
  CHECK(slurp(d.path / "a.jsonl") != slurp(d.path / "c.jsonl"));

  CHECK(run_cli(d.path, "synth --scheme bogus").code == 1);
  CHECK(run_cli(d.path, "synth --count 0").code == 1);
  CHECK(run_cli(d.path, "synth --min-utterances 5 --max-utterances 2").code == 1);

  // default output lands in the out directory
  CHECK(run_cli(d.path, "synth --count 3 --out gen").code == 0);
  CHECK(fs::exists(d.path / "gen" / "synth.jsonl"));
}

TEST_CASE("train writes checkpoint, history and effective config") {
  REQUIRE(ws().ok);
  const fs::path run = ws().dir.path / "run";
  CHECK(fs::exists(run / "model.params"));
  CHECK(fs::exists(run / "model.json"));
  CHECK(fs::exists(run / "history.txt"));
  CHECK(fs::exists(run / "config.txt"));

  auto history = lines_of(slurp(run / "history.txt"));
  REQUIRE(history.size() == 3);  // header plus one row per epoch
  CHECK(history[0] == "epoch\ttrain_loss\tvalid_acc\tlr");
  CHECK(split(history[1], '\t').size() == 4);

  std::string config = slurp(run / "config.txt");
  CHECK(config.find("hidden_size=6\n") != std::string::npos);
  CHECK(config.find("seed=5\n") != std::string::npos);
  CHECK(config.find("out_dir=run\n") != std::string::npos);
  CHECK(config.find("train_path=train.jsonl\n") != std::string::npos);
}

TEST_CASE("train rerun with the same seed reproduces every artifact byte") {
  REQUIRE(ws().ok);
  const fs::path& d = ws().dir.path;
  REQUIRE(run_cli(d, "train " + kTinyTrain + " --out rerun").code == 0);
  CHECK(slurp(d / "run" / "history.txt") == slurp(d / "rerun" / "history.txt"));
  CHECK(slurp(d / "run" / "model.params") == slurp(d / "rerun" / "model.params"));
  CHECK(slurp(d / "run" / "model.json") == slurp(d / "rerun" / "model.json"));
}

TEST_CASE("eval prints accuracy and writes a count confusion matrix") {
  REQUIRE(ws().ok);
  const fs::path& d = ws().dir.path;
  CliResult r = run_cli(d, "eval --set test_path=test.jsonl --out run");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("accuracy 0.") != std::string::npos);
  // held-out synth corpus: different tokens, so the vocabulary warning fires
  CHECK(r.err.find("warning") != std::string::npos);

  Corpus test = load_corpus((d / "test.jsonl").string());
  std::map<std::string, int> gold;
  for (const auto& conv : test.conversations)
    for (const auto& u : conv.utterances) ++gold[u.label];

  auto rows = lines_of(slurp(d / "run" / "confusion.csv"));
  REQUIRE(rows.size() == 5);  // header plus one row per label
  auto header = split(rows[0], ',');
  REQUIRE(header.size() == 5);
  CHECK(header[0] == "label");
  int grand_total = 0;
  for (size_t i = 1; i < rows.size(); ++i) {
    auto cells = split(rows[i], ',');
    REQUIRE(cells.size() == 5);
    int row_sum = 0;
    for (size_t j = 1; j < cells.size(); ++j) row_sum += std::stoi(cells[j]);
    CHECK(row_sum == gold.at(cells[0]));
    grand_total += row_sum;
  }
  CHECK(grand_total == test.utterance_count());
}

TEST_CASE("eval on the training corpus raises no vocabulary warning") {
  REQUIRE(ws().ok);
  CliResult r = run_cli(ws().dir.path, "eval --set test_path=train.jsonl --out run");
  REQUIRE(r.code == 0);
  CHECK(r.err.empty());
}

TEST_CASE("predict writes one record per utterance with gold labels intact") {
  REQUIRE(ws().ok);
  const fs::path& d = ws().dir.path;
  REQUIRE(run_cli(d, "predict --set test_path=test.jsonl --out run").code == 0);

  Corpus test = load_corpus((d / "test.jsonl").string());
  auto rows = lines_of(slurp(d / "run" / "predictions.tsv"));
  REQUIRE(static_cast<int>(rows.size()) == test.utterance_count());

  size_t row = 0;
  std::set<std::string> labels(test.label_set.begin(), test.label_set.end());
  for (const auto& conv : test.conversations) {
    for (size_t j = 0; j < conv.utterances.size(); ++j, ++row) {
      auto cells = split(rows[row], '\t');
      REQUIRE(cells.size() == 4);
      CHECK(cells[0] == conv.id);
      CHECK(cells[1] == std::to_string(j));
      CHECK(cells[2] == conv.utterances[j].label);
      CHECK(labels.count(cells[3]) == 1);
    }
  }
}

TEST_CASE("label map file fixes the label order") {
  REQUIRE(ws().ok);
  const fs::path& d = ws().dir.path;
  std::ofstream(d / "labels.txt")
      << "question\nstatement\nopinion\nbackchannel\n";
  REQUIRE(run_cli(d, "train " + kTinyTrain +
                         " --set label_map_path=labels.txt --out lm").code == 0);
  auto rows = lines_of(slurp(d / "lm" / "confusion.csv"));
  // confusion written by a follow-up eval uses the mapped order
  REQUIRE(run_cli(d, "eval --set test_path=train.jsonl --out lm").code == 0);
  rows = lines_of(slurp(d / "lm" / "confusion.csv"));
  CHECK(split(rows[0], ',')[1] == "question");
  CHECK(split(rows[1], ',')[0] == "question");

  std::ofstream(d / "short.txt") << "question\nstatement\n";
  CHECK(run_cli(d, "train " + kTinyTrain +
                       " --set label_map_path=short.txt --out lm2").code == 2);
}

TEST_CASE("corpus labels outside the model's set are a data error") {
  REQUIRE(ws().ok);
  const fs::path& d = ws().dir.path;
  std::ofstream(d / "alien.jsonl")
      << R"({"id":"x","utterances":[{"tokens":["hi"],"label":"greeting"}]})"
      << "\n";
  CliResult r = run_cli(d, "eval --set test_path=alien.jsonl --out run");
  CHECK(r.code == 2);
  CHECK(r.err.find("greeting") != std::string::npos);
}

TEST_CASE("usage and configuration problems exit 1") {
  TempDir d;
  CHECK(run_cli(d.path, "").code == 1);
  CHECK(run_cli(d.path, "frobnicate").code == 1);
  CHECK(run_cli(d.path, "train --bogus-flag").code == 1);
  CHECK(run_cli(d.path, "train --set nonsense=1").code == 1);
  CHECK(run_cli(d.path, "train --set hidden_size").code == 1);
  CHECK(run_cli(d.path, "train").code == 1);  // train_path missing
  CHECK(run_cli(d.path, "--help").code == 0);
  CHECK(run_cli(d.path, "train --help").code == 0);
}

TEST_CASE("missing inputs exit 2 and leave no partial outputs") {
  TempDir d;
  CliResult r = run_cli(
      d.path,
      "train --set train_path=absent.jsonl --set valid_path=absent.jsonl --out o1");
  CHECK(r.code == 2);
  CHECK(!fs::exists(d.path / "o1"));

  REQUIRE(run_cli(d.path, "synth --count 4 --seed 1 --file t.jsonl").code == 0);
  REQUIRE(run_cli(d.path, "synth --count 2 --seed 2 --file v.jsonl").code == 0);
  r = run_cli(d.path,
              "train --set train_path=t.jsonl --set valid_path=v.jsonl "
              "--set embeddings_path=absent.vec --set hidden_size=4 "
              "--set embed_dim=4 --set max_epochs=1 --out o2");
  CHECK(r.code == 2);
  CHECK(!fs::exists(d.path / "o2"));
}

TEST_CASE("pretrained embeddings load through the train command") {
  TempDir d;
  REQUIRE(run_cli(d.path, "synth --count 4 --seed 1 --file t.jsonl").code == 0);
  REQUIRE(run_cli(d.path, "synth --count 2 --seed 2 --file v.jsonl").code == 0);
  Corpus c = load_corpus((d.path / "t.jsonl").string());
  std::ofstream vec(d.path / "few.vec");
  vec << c.conversations[0].utterances[0].tokens[0] << " 0.1 0.2 0.3 0.4\n";
  vec.close();
  CliResult r = run_cli(d.path,
                        "train --set train_path=t.jsonl --set valid_path=v.jsonl "
                        "--set embeddings_path=few.vec --set hidden_size=4 "
                        "--set embed_dim=4 --set max_epochs=1 --out o3");
  CHECK(r.code == 0);
  CHECK(fs::exists(d.path / "o3" / "model.params"));
}

TEST_CASE("divergent training exits 3 but keeps its artifacts") {
  TempDir d;
  REQUIRE(run_cli(d.path, "synth --count 4 --seed 1 --file t.jsonl").code == 0);
  REQUIRE(run_cli(d.path, "synth --count 2 --seed 2 --file v.jsonl").code == 0);
  CliResult r = run_cli(
      d.path,
      "train --set train_path=t.jsonl --set valid_path=v.jsonl "
      "--set variant=we --set classifier=lr --set learning_rate=1e300 "
      "--set clip_enabled=false --set hidden_size=4 --set embed_dim=4 "
      "--set max_epochs=3 --out o4");
  CHECK(r.code == 3);
  CHECK(r.err.find("diverged") != std::string::npos);
  CHECK(fs::exists(d.path / "o4" / "model.params"));
  CHECK(fs::exists(d.path / "o4" / "history.txt"));
}

TEST_CASE("gradcheck passes at its toy defaults and rejects large models") {
  TempDir d;
  CliResult r = run_cli(d.path, "gradcheck --seed 3");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("embed.table") != std::string::npos);
  CHECK(r.out.find("conv0.fwd.w") != std::string::npos);
  CHECK(r.out.find("pos.embed.table") != std::string::npos);
  CHECK(r.out.find("head.trans") != std::string::npos);
  CHECK(r.out.find(": pass") != std::string::npos);
  CHECK(r.out.find("FAIL") == std::string::npos);

  CHECK(run_cli(d.path, "gradcheck --set hidden_size=300").code == 1);
  // explicit toy overrides are honored
  CHECK(run_cli(d.path, "gradcheck --set hidden_size=3 --set attention.enabled=false").code == 0);
}

TEST_CASE("config file values yield to command-line overrides") {
  TempDir d;
  std::ofstream(d.path / "c.txt") << "hidden_size=300\nseed=1\n";
  // the file alone trips the toy-size guard; the override lifts it
  CHECK(run_cli(d.path, "gradcheck --config c.txt").code == 1);
  CHECK(run_cli(d.path, "gradcheck --config c.txt --set hidden_size=4").code == 0);

  REQUIRE(run_cli(d.path, "synth --count 4 --seed 1 --file t.jsonl").code == 0);
  REQUIRE(run_cli(d.path, "synth --count 2 --seed 2 --file v.jsonl").code == 0);
  std::ofstream(d.path / "tc.txt")
      << "train_path=t.jsonl\nvalid_path=v.jsonl\nhidden_size=4\n"
      << "embed_dim=4\nmax_epochs=1\nseed=1\n";
  REQUIRE(run_cli(d.path, "train --config tc.txt --seed 9 --out o5").code == 0);
  std::string config = slurp(d.path / "o5" / "config.txt");
  CHECK(config.find("seed=9\n") != std::string::npos);
  CHECK(config.find("hidden_size=4\n") != std::string::npos);
}

TEST_CASE("ablate trains all six cells and writes the grid") {
  TempDir d;
  REQUIRE(run_cli(d.path, "synth --count 8 --seed 1 --file t.jsonl").code == 0);
  REQUIRE(run_cli(d.path, "synth --count 3 --seed 2 --file v.jsonl").code == 0);
  CliResult r = run_cli(d.path,
                        "ablate --set train_path=t.jsonl --set valid_path=v.jsonl "
                        "--set hidden_size=4 --set embed_dim=4 "
                        "--set max_epochs=1 --seed 5 --out abl");
  REQUIRE(r.code == 0);
  for (const char* cell : {"we+lr", "we+crf", "we_ul+lr", "we_ul+crf",
                           "we_ul_cl+lr", "we_ul_cl+crf"})
    CHECK(r.out.find(cell) != std::string::npos);

  auto rows = lines_of(slurp(d.path / "abl" / "ablation.tsv"));
  REQUIRE(rows.size() == 4);
  CHECK(rows[0] == "variant\tlr\tcrf");
  const char* names[] = {"we", "we_ul", "we_ul_cl"};
  for (int i = 0; i < 3; ++i) {
    auto cells = split(rows[i + 1], '\t');
    REQUIRE(cells.size() == 3);
    CHECK(cells[0] == names[i]);
    double lr_acc = std::stod(cells[1]);
    double crf_acc = std::stod(cells[2]);
    CHECK(lr_acc >= 0.0);
    CHECK(lr_acc <= 1.0);
    CHECK(crf_acc >= 0.0);
    CHECK(crf_acc <= 1.0);
  }
}
