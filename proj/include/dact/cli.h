#ifndef DACT_CLI_H
#define DACT_CLI_H

#include <map>
#include <string>
#include <vector>

#include "dact/train.h"

namespace dact {

// Everything a command needs: the training configuration plus file locations,
// all settable through one flat key=value surface.
struct RunConfig {
  TrainConfig train;
  std::string train_path;
  std::string valid_path;
  std::string test_path;
  std::string embeddings_path;
  std::string label_map_path;
  std::string out_dir = "out";
};

// key=value lines; '#' starts a comment, blank lines are skipped.
// ConfigError carries the offending line number.
std::map<std::string, std::string> read_config_file(const std::string& path);

// Applies entries onto `base`; unknown keys raise ConfigError.
RunConfig run_config_from_map(const std::map<std::string, std::string>& m,
                              const RunConfig& base = RunConfig());
std::map<std::string, std::string> run_config_to_map(const RunConfig& rc);

// Exit codes: 0 success, 1 usage or configuration, 2 data, 3 numeric.
int cli_main(const std::vector<std::string>& args);

}  // namespace dact

#endif  // DACT_CLI_H
