#include <string>
#include <vector>

#include "dact/cli.h"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dact::cli_main(args);
}
