#ifndef DACT_TENSOR_H
#define DACT_TENSOR_H

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace dact {

// Dense row-major tensor of doubles. Rank 1 and 2 cover everything in this
// toolkit; scalars are rank-1 tensors of length 1.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<int> shape_, std::vector<double> data_);

  static Tensor zeros(const std::vector<int>& shape);
  static Tensor full(const std::vector<int>& shape, double v);
  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(int rows, int cols, std::vector<double> v);

  int numel() const { return static_cast<int>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int rows() const;
  int cols() const;

  double& at(int i) { return data[static_cast<size_t>(i)]; }
  double at(int i) const { return data[static_cast<size_t>(i)]; }
  double& at(int i, int j) { return data[static_cast<size_t>(i) * cols() + j]; }
  double at(int i, int j) const {
    return data[static_cast<size_t>(i) * cols() + j];
  }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const;
  void fill(double v);
};

int shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Learnable value with an accumulated gradient of the same shape.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string name_, Tensor value_);
  void zero_grad() { grad.fill(0.0); }
};

// Deterministic RNG. The engine is a xorshift-style splitmix64 generator and
// all distributions are derived from raw bits, so streams are reproducible
// across platforms and standard library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

  uint64_t next_u64();
  double uniform();  // [0, 1)
  double uniform(double a, double b);
  int uniform_int(int n);  // [0, n)

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      int j = uniform_int(i + 1);
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
    }
  }

 private:
  uint64_t state_;
};

enum class InitScheme { Zeros, Uniform, Glorot };

struct InitSpec {
  InitScheme scheme = InitScheme::Zeros;
  double a = 0.0;  // uniform lower bound
  double b = 0.0;  // uniform upper bound
  static InitSpec zeros() { return {InitScheme::Zeros, 0.0, 0.0}; }
  static InitSpec uniform(double a, double b) {
    return {InitScheme::Uniform, a, b};
  }
  static InitSpec glorot() { return {InitScheme::Glorot, 0.0, 0.0}; }
};

// Owns parameters in creation order. Creation order is the canonical
// iteration order everywhere (optimizer state, checkpoints, grad checks).
class ParameterStore {
 public:
  Parameter& add(const std::string& name, const std::vector<int>& shape,
                 const InitSpec& init, Rng& rng);
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  Parameter* find(const std::string& name);
  size_t size() const { return params_.size(); }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

void zero_grad(const std::vector<Parameter*>& params);

}  // namespace dact

#endif  // DACT_TENSOR_H
