#ifndef DACT_CHECKPOINT_H
#define DACT_CHECKPOINT_H

#include <string>
#include <utility>
#include <vector>

#include "dact/tensor.h"

namespace dact {

// Text container for named parameters: one header line, then per parameter a
// "name rank dims..." line followed by one line of row-major values printed
// with 17 significant digits, which round-trips doubles bit-exactly.
// Writes go to a temporary file that is renamed over the target on success.
void save_params(const std::string& path,
                 const std::vector<const Parameter*>& params);

std::vector<std::pair<std::string, Tensor>> read_params(
    const std::string& path);

// Loads into an existing parameter set; names, order and shapes must match
// the file exactly.
void load_params(const std::string& path,
                 const std::vector<Parameter*>& params);

std::string format_double(double v);  // %.17g

}  // namespace dact

#endif  // DACT_CHECKPOINT_H
