#ifndef DACT_ERRORS_H
#define DACT_ERRORS_H

#include <stdexcept>
#include <string>

namespace dact {

// Malformed or inconsistent input data (corpora, embeddings, checkpoints).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration or unusable option combination.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required (diverged training etc).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dact

#endif  // DACT_ERRORS_H
