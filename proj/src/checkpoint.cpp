#include "dact/checkpoint.h"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "dact/errors.h"

namespace dact {

namespace {

constexpr const char* kMagic = "dact-params 1";

void check_name(const std::string& name) {
  if (name.empty()) throw DataError("parameter with empty name");
  for (char c : name) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      throw DataError("parameter name contains whitespace: '" + name + "'");
    }
  }
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void save_params(const std::string& path,
                 const std::vector<const Parameter*>& params) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw DataError("cannot open for writing: " + tmp);
    out << kMagic << "\n" << params.size() << "\n";
    for (const Parameter* p : params) {
      check_name(p->name);
      out << p->name << " " << p->value.rank();
      for (int d : p->value.shape) out << " " << d;
      out << "\n";
      for (size_t i = 0; i < p->value.data.size(); ++i) {
        if (i) out << " ";
        out << format_double(p->value.data[i]);
      }
      out << "\n";
    }
    if (!out) throw DataError("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw DataError("cannot rename " + tmp + " to " + path);
  }
}

std::vector<std::pair<std::string, Tensor>> read_params(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open parameter file: " + path);
  std::string line;
  if (!std::getline(in, line) || line != kMagic) {
    throw DataError("bad parameter file header in " + path);
  }
  size_t count = 0;
  if (!(in >> count)) throw DataError("missing parameter count in " + path);
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(count);
  for (size_t k = 0; k < count; ++k) {
    std::string name;
    int rank = 0;
    if (!(in >> name >> rank)) {
      throw DataError("truncated parameter header in " + path);
    }
    if (rank < 1 || rank > 2) {
      throw DataError("unsupported rank for '" + name + "' in " + path);
    }
    std::vector<int> shape(static_cast<size_t>(rank));
    for (int& d : shape) {
      if (!(in >> d) || d <= 0) {
        throw DataError("bad shape for '" + name + "' in " + path);
      }
    }
    Tensor t = Tensor::zeros(shape);
    for (double& v : t.data) {
      if (!(in >> v)) {
        throw DataError("truncated values for '" + name + "' in " + path);
      }
    }
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

void load_params(const std::string& path,
                 const std::vector<Parameter*>& params) {
  auto stored = read_params(path);
  if (stored.size() != params.size()) {
    throw DataError("parameter count mismatch: file has " +
                    std::to_string(stored.size()) + ", model has " +
                    std::to_string(params.size()));
  }
  for (size_t i = 0; i < params.size(); ++i) {
    if (stored[i].first != params[i]->name) {
      throw DataError("parameter name mismatch at position " +
                      std::to_string(i) + ": file '" + stored[i].first +
                      "' vs model '" + params[i]->name + "'");
    }
    if (!stored[i].second.same_shape(params[i]->value)) {
      throw DataError("shape mismatch for '" + params[i]->name + "': file " +
                      shape_str(stored[i].second.shape) + " vs model " +
                      shape_str(params[i]->value.shape));
    }
    params[i]->value = std::move(stored[i].second);
  }
}

}  // namespace dact
