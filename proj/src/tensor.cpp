#include "dact/tensor.h"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace dact {

int shape_numel(const std::vector<int>& shape) {
  int n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

static void check_shape(const std::vector<int>& shape) {
  if (shape.empty()) {
    throw std::invalid_argument("tensor shape must be non-empty");
  }
  for (int d : shape) {
    if (d <= 0) {
      throw std::invalid_argument("tensor shape has non-positive dim " +
                                  shape_str(shape));
    }
  }
}

Tensor::Tensor(std::vector<int> shape_, std::vector<double> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
  check_shape(shape);
  if (shape_numel(shape) != static_cast<int>(data.size())) {
    throw std::invalid_argument("tensor data length " +
                                std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  }
}

Tensor Tensor::zeros(const std::vector<int>& shape) {
  check_shape(shape);
  Tensor t;
  t.shape = shape;
  t.data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
  return t;
}

Tensor Tensor::full(const std::vector<int>& shape, double v) {
  Tensor t = zeros(shape);
  t.fill(v);
  return t;
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::vector(std::vector<double> v) {
  int n = static_cast<int>(v.size());
  return Tensor({n}, std::move(v));
}

Tensor Tensor::matrix(int rows, int cols, std::vector<double> v) {
  return Tensor({rows, cols}, std::move(v));
}

int Tensor::rows() const {
  if (rank() != 2) {
    throw std::invalid_argument("rows() on tensor of shape " +
                                shape_str(shape));
  }
  return shape[0];
}

int Tensor::cols() const {
  if (rank() == 2) return shape[1];
  if (rank() == 1) return shape[0];
  throw std::invalid_argument("cols() on tensor of shape " + shape_str(shape));
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::fill(double v) {
  for (double& x : data) x = v;
}

Parameter::Parameter(std::string name_, Tensor value_)
    : name(std::move(name_)),
      value(std::move(value_)),
      grad(Tensor::zeros(value.shape)) {}

uint64_t Rng::next_u64() {
  // splitmix64
  state_ += 0x9e3779b97f4a7c15ULL;
  uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double a, double b) { return a + (b - a) * uniform(); }

int Rng::uniform_int(int n) {
  if (n <= 0) throw std::invalid_argument("uniform_int needs n > 0");
  // rejection sampling keeps the draw unbiased
  uint64_t un = static_cast<uint64_t>(n);
  uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<int>(x % un);
}

Parameter& ParameterStore::add(const std::string& name,
                               const std::vector<int>& shape,
                               const InitSpec& init, Rng& rng) {
  check_shape(shape);
  if (find(name) != nullptr) {
    throw std::invalid_argument("duplicate parameter name: " + name);
  }
  Tensor value = Tensor::zeros(shape);
  switch (init.scheme) {
    case InitScheme::Zeros:
      break;
    case InitScheme::Uniform: {
      if (!(init.a < init.b)) {
        throw std::invalid_argument("uniform init needs a < b");
      }
      for (double& v : value.data) v = rng.uniform(init.a, init.b);
      break;
    }
    case InitScheme::Glorot: {
      // fan_in = columns, fan_out = rows for matrices; both n for vectors
      int fan_in = shape.size() == 2 ? shape[1] : shape[0];
      int fan_out = shape[0];
      double bound = std::sqrt(6.0 / (fan_in + fan_out));
      for (double& v : value.data) v = rng.uniform(-bound, bound);
      break;
    }
  }
  params_.push_back(std::make_unique<Parameter>(name, std::move(value)));
  return *params_.back();
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

Parameter* ParameterStore::find(const std::string& name) {
  for (auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

void zero_grad(const std::vector<Parameter*>& params) {
  for (Parameter* p : params) p->zero_grad();
}

}  // namespace dact
