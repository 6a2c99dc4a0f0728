#include "dact/tape.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dact {

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Value Tape::push(Tensor val,
                 std::function<void(Tape&, const Tensor&, const Tensor&)> back) {
  Node n;
  n.val = std::move(val);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Value{static_cast<int>(nodes_.size()) - 1};
}

void Tape::check_valid(Value v) const {
  if (v.idx < 0 || v.idx >= static_cast<int>(nodes_.size())) {
    throw std::invalid_argument("value handle does not belong to this tape");
  }
}

Value Tape::input(Tensor t) { return push(std::move(t), nullptr); }

Value Tape::param(Parameter& p) {
  for (const auto& [ptr, idx] : param_nodes_) {
    if (ptr == &p) return Value{idx};
  }
  Value v = push(p.value, nullptr);
  nodes_[static_cast<size_t>(v.idx)].param = &p;
  param_nodes_.emplace_back(&p, v.idx);
  return v;
}

Value Tape::matmul(Value a, Value b) {
  check_valid(a);
  check_valid(b);
  const Tensor& A = val_of(a);
  const Tensor& B = val_of(b);
  if (A.rank() != 2 || (B.rank() != 2 && B.rank() != 1)) {
    throw std::invalid_argument("matmul expects [m,k]x[k,n] or [m,k]x[k], got " +
                                shape_str(A.shape) + " x " + shape_str(B.shape));
  }
  int m = A.shape[0];
  int k = A.shape[1];
  if (B.shape[0] != k) {
    throw std::invalid_argument("matmul inner dimension mismatch: " +
                                shape_str(A.shape) + " x " + shape_str(B.shape));
  }
  Tensor out;
  if (B.rank() == 1) {
    out = Tensor::zeros({m});
    for (int i = 0; i < m; ++i) {
      const double* arow = &A.data[static_cast<size_t>(i) * k];
      double acc = 0.0;
      for (int l = 0; l < k; ++l) acc += arow[l] * B.data[static_cast<size_t>(l)];
      out.data[static_cast<size_t>(i)] = acc;
    }
  } else {
    int n = B.shape[1];
    out = Tensor::zeros({m, n});
    for (int i = 0; i < m; ++i) {
      const double* arow = &A.data[static_cast<size_t>(i) * k];
      double* orow = &out.data[static_cast<size_t>(i) * n];
      for (int l = 0; l < k; ++l) {
        double av = arow[l];
        if (av == 0.0) continue;
        const double* brow = &B.data[static_cast<size_t>(l) * n];
        for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  }
  return push(std::move(out), [a, b](Tape& t, const Tensor&, const Tensor& g) {
    const Tensor& A = t.val_of(a);
    const Tensor& B = t.val_of(b);
    Tensor& dA = t.grad_of(a);
    Tensor& dB = t.grad_of(b);
    int m = A.shape[0];
    int k = A.shape[1];
    if (B.rank() == 1) {
      for (int i = 0; i < m; ++i) {
        double gi = g.data[static_cast<size_t>(i)];
        if (gi == 0.0) continue;
        const double* arow = &A.data[static_cast<size_t>(i) * k];
        double* darow = &dA.data[static_cast<size_t>(i) * k];
        for (int l = 0; l < k; ++l) {
          darow[l] += gi * B.data[static_cast<size_t>(l)];
          dB.data[static_cast<size_t>(l)] += arow[l] * gi;
        }
      }
    } else {
      int n = B.shape[1];
      // dA = g . B^T ; dB = A^T . g
      for (int i = 0; i < m; ++i) {
        const double* grow = &g.data[static_cast<size_t>(i) * n];
        const double* arow = &A.data[static_cast<size_t>(i) * k];
        double* darow = &dA.data[static_cast<size_t>(i) * k];
        for (int l = 0; l < k; ++l) {
          const double* brow = &B.data[static_cast<size_t>(l) * n];
          double acc = 0.0;
          for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
          darow[l] += acc;
          double av = arow[l];
          if (av != 0.0) {
            double* dbrow = &dB.data[static_cast<size_t>(l) * n];
            for (int j = 0; j < n; ++j) dbrow[j] += av * grow[j];
          }
        }
      }
    }
  });
}

namespace {

enum class Broadcast { Exact, RowVec };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.same_shape(b)) return Broadcast::Exact;
  if (a.rank() == 2 && b.rank() == 1 && a.shape[1] == b.shape[0]) {
    return Broadcast::RowVec;
  }
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                              shape_str(a.shape) + " and " +
                              shape_str(b.shape));
}

}  // namespace

Value Tape::add(Value a, Value b) {
  check_valid(a);
  check_valid(b);
  const Tensor& A = val_of(a);
  const Tensor& B = val_of(b);
  Broadcast kind = broadcast_kind(A, B, "add");
  Tensor out = A;
  if (kind == Broadcast::Exact) {
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += B.data[i];
  } else {
    int c = A.shape[1];
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += B.data[i % c];
  }
  return push(std::move(out),
              [a, b, kind](Tape& t, const Tensor&, const Tensor& g) {
                Tensor& dA = t.grad_of(a);
                Tensor& dB = t.grad_of(b);
                for (size_t i = 0; i < g.data.size(); ++i) dA.data[i] += g.data[i];
                if (kind == Broadcast::Exact) {
                  for (size_t i = 0; i < g.data.size(); ++i) {
                    dB.data[i] += g.data[i];
                  }
                } else {
                  size_t c = dB.data.size();
                  for (size_t i = 0; i < g.data.size(); ++i) {
                    dB.data[i % c] += g.data[i];
                  }
                }
              });
}

Value Tape::sub(Value a, Value b) {
  check_valid(a);
  check_valid(b);
  const Tensor& A = val_of(a);
  const Tensor& B = val_of(b);
  Broadcast kind = broadcast_kind(A, B, "sub");
  Tensor out = A;
  if (kind == Broadcast::Exact) {
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= B.data[i];
  } else {
    int c = A.shape[1];
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= B.data[i % c];
  }
  return push(std::move(out),
              [a, b, kind](Tape& t, const Tensor&, const Tensor& g) {
                Tensor& dA = t.grad_of(a);
                Tensor& dB = t.grad_of(b);
                for (size_t i = 0; i < g.data.size(); ++i) dA.data[i] += g.data[i];
                if (kind == Broadcast::Exact) {
                  for (size_t i = 0; i < g.data.size(); ++i) {
                    dB.data[i] -= g.data[i];
                  }
                } else {
                  size_t c = dB.data.size();
                  for (size_t i = 0; i < g.data.size(); ++i) {
                    dB.data[i % c] -= g.data[i];
                  }
                }
              });
}

Value Tape::mul(Value a, Value b) {
  check_valid(a);
  check_valid(b);
  const Tensor& A = val_of(a);
  const Tensor& B = val_of(b);
  Broadcast kind = broadcast_kind(A, B, "mul");
  Tensor out = A;
  if (kind == Broadcast::Exact) {
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= B.data[i];
  } else {
    int c = A.shape[1];
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= B.data[i % c];
  }
  return push(std::move(out),
              [a, b, kind](Tape& t, const Tensor&, const Tensor& g) {
                const Tensor& A = t.val_of(a);
                const Tensor& B = t.val_of(b);
                Tensor& dA = t.grad_of(a);
                Tensor& dB = t.grad_of(b);
                if (kind == Broadcast::Exact) {
                  for (size_t i = 0; i < g.data.size(); ++i) {
                    dA.data[i] += g.data[i] * B.data[i];
                    dB.data[i] += g.data[i] * A.data[i];
                  }
                } else {
                  size_t c = dB.data.size();
                  for (size_t i = 0; i < g.data.size(); ++i) {
                    dA.data[i] += g.data[i] * B.data[i % c];
                    dB.data[i % c] += g.data[i] * A.data[i];
                  }
                }
              });
}

Value Tape::scale(Value a, double c) {
  check_valid(a);
  Tensor out = val_of(a);
  for (double& v : out.data) v *= c;
  return push(std::move(out), [a, c](Tape& t, const Tensor&, const Tensor& g) {
    Tensor& dA = t.grad_of(a);
    for (size_t i = 0; i < g.data.size(); ++i) dA.data[i] += c * g.data[i];
  });
}

Value Tape::tanh(Value a) {
  check_valid(a);
  Tensor out = val_of(a);
  for (double& v : out.data) v = std::tanh(v);
  return push(std::move(out), [a](Tape& t, const Tensor& y, const Tensor& g) {
    Tensor& dA = t.grad_of(a);
    for (size_t i = 0; i < g.data.size(); ++i) {
      dA.data[i] += g.data[i] * (1.0 - y.data[i] * y.data[i]);
    }
  });
}

Value Tape::sigmoid(Value a) {
  check_valid(a);
  Tensor out = val_of(a);
  for (double& v : out.data) v = stable_sigmoid(v);
  return push(std::move(out), [a](Tape& t, const Tensor& y, const Tensor& g) {
    Tensor& dA = t.grad_of(a);
    for (size_t i = 0; i < g.data.size(); ++i) {
      dA.data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
    }
  });
}

Value Tape::concat(const std::vector<Value>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat of zero tensors");
  for (Value v : parts) check_valid(v);
  const Tensor& first = val_of(parts[0]);
  int rank = first.rank();
  if (axis < 0 || axis >= rank) {
    throw std::invalid_argument("concat axis out of range");
  }
  for (Value v : parts) {
    const Tensor& t = val_of(v);
    if (t.rank() != rank) {
      throw std::invalid_argument("concat rank mismatch");
    }
    for (int d = 0; d < rank; ++d) {
      if (d != axis && t.shape[d] != first.shape[d]) {
        throw std::invalid_argument(
            "concat non-concat dimension mismatch: " + shape_str(first.shape) +
            " vs " + shape_str(t.shape));
      }
    }
  }
  Tensor out;
  if (rank == 1 || (rank == 2 && axis == 0)) {
    std::vector<int> shape = first.shape;
    int total = 0;
    for (Value v : parts) total += val_of(v).shape[axis];
    shape[axis] = total;
    out = Tensor::zeros(shape);
    size_t off = 0;
    for (Value v : parts) {
      const Tensor& t = val_of(v);
      std::copy(t.data.begin(), t.data.end(), out.data.begin() + off);
      off += t.data.size();
    }
  } else {
    int rows = first.shape[0];
    int total_cols = 0;
    for (Value v : parts) total_cols += val_of(v).shape[1];
    out = Tensor::zeros({rows, total_cols});
    int col_off = 0;
    for (Value v : parts) {
      const Tensor& t = val_of(v);
      int c = t.shape[1];
      for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < c; ++j) out.at(i, col_off + j) = t.at(i, j);
      }
      col_off += c;
    }
  }
  std::vector<Value> ins = parts;
  return push(std::move(out),
              [ins, axis](Tape& t, const Tensor&, const Tensor& g) {
                int rank = g.rank();
                if (rank == 1 || (rank == 2 && axis == 0)) {
                  size_t off = 0;
                  for (Value v : ins) {
                    Tensor& d = t.grad_of(v);
                    for (size_t i = 0; i < d.data.size(); ++i) {
                      d.data[i] += g.data[off + i];
                    }
                    off += d.data.size();
                  }
                } else {
                  int rows = g.shape[0];
                  int col_off = 0;
                  for (Value v : ins) {
                    Tensor& d = t.grad_of(v);
                    int c = d.shape[1];
                    for (int i = 0; i < rows; ++i) {
                      for (int j = 0; j < c; ++j) {
                        d.at(i, j) += g.at(i, col_off + j);
                      }
                    }
                    col_off += c;
                  }
                }
              });
}

Value Tape::stack_rows(const std::vector<Value>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows of zero vectors");
  for (Value v : rows) check_valid(v);
  int c = val_of(rows[0]).shape[0];
  for (Value v : rows) {
    const Tensor& t = val_of(v);
    if (t.rank() != 1 || t.shape[0] != c) {
      throw std::invalid_argument("stack_rows expects equal-length vectors");
    }
  }
  Tensor out = Tensor::zeros({static_cast<int>(rows.size()), c});
  size_t off = 0;
  for (Value v : rows) {
    const Tensor& t = val_of(v);
    std::copy(t.data.begin(), t.data.end(), out.data.begin() + off);
    off += t.data.size();
  }
  std::vector<Value> ins = rows;
  return push(std::move(out), [ins](Tape& t, const Tensor&, const Tensor& g) {
    size_t off = 0;
    for (Value v : ins) {
      Tensor& d = t.grad_of(v);
      for (size_t i = 0; i < d.data.size(); ++i) d.data[i] += g.data[off + i];
      off += d.data.size();
    }
  });
}

Value Tape::slice(Value a, int start, int len) {
  check_valid(a);
  const Tensor& A = val_of(a);
  if (A.rank() != 1) throw std::invalid_argument("slice expects a vector");
  if (start < 0 || len <= 0 || start + len > A.shape[0]) {
    throw std::invalid_argument("slice range out of bounds");
  }
  Tensor out = Tensor::zeros({len});
  std::copy(A.data.begin() + start, A.data.begin() + start + len,
            out.data.begin());
  return push(std::move(out),
              [a, start, len](Tape& t, const Tensor&, const Tensor& g) {
                Tensor& dA = t.grad_of(a);
                for (int i = 0; i < len; ++i) {
                  dA.data[static_cast<size_t>(start + i)] +=
                      g.data[static_cast<size_t>(i)];
                }
              });
}

Value Tape::select_row(Value m, int row) {
  check_valid(m);
  const Tensor& M = val_of(m);
  if (M.rank() != 2) throw std::invalid_argument("select_row expects a matrix");
  if (row < 0 || row >= M.shape[0]) {
    throw std::invalid_argument("select_row index " + std::to_string(row) +
                                " out of range for " + shape_str(M.shape));
  }
  int c = M.shape[1];
  Tensor out = Tensor::zeros({c});
  std::copy(M.data.begin() + static_cast<size_t>(row) * c,
            M.data.begin() + static_cast<size_t>(row + 1) * c,
            out.data.begin());
  return push(std::move(out),
              [m, row, c](Tape& t, const Tensor&, const Tensor& g) {
                Tensor& dM = t.grad_of(m);
                for (int j = 0; j < c; ++j) {
                  dM.data[static_cast<size_t>(row) * c + j] +=
                      g.data[static_cast<size_t>(j)];
                }
              });
}

Value Tape::transpose(Value m) {
  check_valid(m);
  const Tensor& M = val_of(m);
  if (M.rank() != 2) throw std::invalid_argument("transpose expects a matrix");
  int r = M.shape[0];
  int c = M.shape[1];
  Tensor out = Tensor::zeros({c, r});
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) out.at(j, i) = M.at(i, j);
  }
  return push(std::move(out),
              [m, r, c](Tape& t, const Tensor&, const Tensor& g) {
                Tensor& dM = t.grad_of(m);
                for (int i = 0; i < r; ++i) {
                  for (int j = 0; j < c; ++j) dM.at(i, j) += g.at(j, i);
                }
              });
}

Value Tape::gather_sum(Value a, std::vector<int> flat_indices) {
  check_valid(a);
  const Tensor& A = val_of(a);
  double acc = 0.0;
  for (int idx : flat_indices) {
    if (idx < 0 || idx >= A.numel()) {
      throw std::invalid_argument("gather_sum index out of range");
    }
    acc += A.data[static_cast<size_t>(idx)];
  }
  return push(Tensor::scalar(acc),
              [a, idx = std::move(flat_indices)](Tape& t, const Tensor&,
                                                 const Tensor& g) {
                Tensor& dA = t.grad_of(a);
                for (int i : idx) dA.data[static_cast<size_t>(i)] += g.data[0];
              });
}

Value Tape::add_n(const std::vector<Value>& vs) {
  if (vs.empty()) throw std::invalid_argument("add_n of zero tensors");
  for (Value v : vs) check_valid(v);
  Tensor out = val_of(vs[0]);
  for (size_t k = 1; k < vs.size(); ++k) {
    const Tensor& t = val_of(vs[k]);
    if (!t.same_shape(out)) {
      throw std::invalid_argument("add_n shape mismatch: " +
                                  shape_str(out.shape) + " vs " +
                                  shape_str(t.shape));
    }
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += t.data[i];
  }
  std::vector<Value> ins = vs;
  return push(std::move(out), [ins](Tape& t, const Tensor&, const Tensor& g) {
    for (Value v : ins) {
      Tensor& d = t.grad_of(v);
      for (size_t i = 0; i < g.data.size(); ++i) d.data[i] += g.data[i];
    }
  });
}

Value Tape::sum(Value a) {
  check_valid(a);
  const Tensor& A = val_of(a);
  double acc = 0.0;
  for (double v : A.data) acc += v;
  return push(Tensor::scalar(acc),
              [a](Tape& t, const Tensor&, const Tensor& g) {
                Tensor& dA = t.grad_of(a);
                for (double& v : dA.data) v += g.data[0];
              });
}

Value Tape::logsumexp(Value v) {
  check_valid(v);
  const Tensor& V = val_of(v);
  if (V.rank() != 1 || V.shape[0] < 1) {
    throw std::invalid_argument("logsumexp expects a non-empty vector");
  }
  double m = -std::numeric_limits<double>::infinity();
  for (double x : V.data) m = std::max(m, x);
  double acc = 0.0;
  for (double x : V.data) acc += std::exp(x - m);
  double y = m + std::log(acc);
  return push(Tensor::scalar(y),
              [v, y](Tape& t, const Tensor&, const Tensor& g) {
                const Tensor& V = t.val_of(v);
                Tensor& dV = t.grad_of(v);
                for (size_t i = 0; i < V.data.size(); ++i) {
                  dV.data[i] += g.data[0] * std::exp(V.data[i] - y);
                }
              });
}

Value Tape::logsumexp_rows(Value m) {
  check_valid(m);
  const Tensor& M = val_of(m);
  if (M.rank() != 2) {
    throw std::invalid_argument("logsumexp_rows expects a matrix");
  }
  int r = M.shape[0];
  int c = M.shape[1];
  Tensor out = Tensor::zeros({r});
  for (int i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < c; ++j) mx = std::max(mx, M.at(i, j));
    double acc = 0.0;
    for (int j = 0; j < c; ++j) acc += std::exp(M.at(i, j) - mx);
    out.data[static_cast<size_t>(i)] = mx + std::log(acc);
  }
  return push(std::move(out),
              [m, r, c](Tape& t, const Tensor& y, const Tensor& g) {
                const Tensor& M = t.val_of(m);
                Tensor& dM = t.grad_of(m);
                for (int i = 0; i < r; ++i) {
                  double gi = g.data[static_cast<size_t>(i)];
                  if (gi == 0.0) continue;
                  double yi = y.data[static_cast<size_t>(i)];
                  for (int j = 0; j < c; ++j) {
                    dM.at(i, j) += gi * std::exp(M.at(i, j) - yi);
                  }
                }
              });
}

Value Tape::softmax(Value v) {
  check_valid(v);
  const Tensor& V = val_of(v);
  if (V.rank() != 1 || V.shape[0] < 1) {
    throw std::invalid_argument("softmax expects a non-empty vector");
  }
  double m = -std::numeric_limits<double>::infinity();
  for (double x : V.data) m = std::max(m, x);
  Tensor out = Tensor::zeros(V.shape);
  double z = 0.0;
  for (size_t i = 0; i < V.data.size(); ++i) {
    out.data[i] = std::exp(V.data[i] - m);
    z += out.data[i];
  }
  for (double& x : out.data) x /= z;
  return push(std::move(out), [v](Tape& t, const Tensor& y, const Tensor& g) {
    Tensor& dV = t.grad_of(v);
    double dot = 0.0;
    for (size_t i = 0; i < y.data.size(); ++i) dot += g.data[i] * y.data[i];
    for (size_t i = 0; i < y.data.size(); ++i) {
      dV.data[i] += y.data[i] * (g.data[i] - dot);
    }
  });
}

Value Tape::mul_scalar(Value v, Value s) {
  check_valid(v);
  check_valid(s);
  const Tensor& V = val_of(v);
  const Tensor& S = val_of(s);
  if (S.numel() != 1) {
    throw std::invalid_argument("mul_scalar expects a scalar second operand");
  }
  Tensor out = V;
  double c = S.data[0];
  for (double& x : out.data) x *= c;
  return push(std::move(out), [v, s](Tape& t, const Tensor&, const Tensor& g) {
    const Tensor& V = t.val_of(v);
    double c = t.val_of(s).data[0];
    Tensor& dV = t.grad_of(v);
    Tensor& dS = t.grad_of(s);
    double acc = 0.0;
    for (size_t i = 0; i < g.data.size(); ++i) {
      dV.data[i] += c * g.data[i];
      acc += g.data[i] * V.data[i];
    }
    dS.data[0] += acc;
  });
}

Value Tape::dropout(Value a, double rate, Rng& rng, bool training) {
  check_valid(a);
  if (rate < 0.0 || rate >= 1.0) {
    throw std::invalid_argument("dropout rate must be in [0,1)");
  }
  if (!training || rate == 0.0) return a;
  const Tensor& A = val_of(a);
  Tensor mask = Tensor::zeros(A.shape);
  double keep_scale = 1.0 / (1.0 - rate);
  for (double& m : mask.data) {
    m = rng.uniform() >= rate ? keep_scale : 0.0;
  }
  Tensor out = A;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= mask.data[i];
  return push(std::move(out), [a, mask = std::move(mask)](
                                  Tape& t, const Tensor&, const Tensor& g) {
    Tensor& dA = t.grad_of(a);
    for (size_t i = 0; i < g.data.size(); ++i) {
      dA.data[i] += g.data[i] * mask.data[i];
    }
  });
}

void Tape::backward(Value loss) {
  check_valid(loss);
  if (val_of(loss).numel() != 1) {
    throw std::invalid_argument("backward expects a scalar loss, got shape " +
                                shape_str(val_of(loss).shape));
  }
  for (Node& n : nodes_) {
    n.grad = Tensor::zeros(n.val.shape);
  }
  nodes_[static_cast<size_t>(loss.idx)].grad.data[0] = 1.0;
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.back) n.back(*this, n.val, n.grad);
  }
  for (const auto& [p, idx] : param_nodes_) {
    const Tensor& g = nodes_[static_cast<size_t>(idx)].grad;
    for (size_t i = 0; i < g.data.size(); ++i) p->grad.data[i] += g.data[i];
  }
}

const Tensor& Tape::value(Value v) const {
  check_valid(v);
  return val_of(v);
}

double Tape::scalar_value(Value v) const {
  const Tensor& t = value(v);
  if (t.numel() != 1) {
    throw std::invalid_argument("scalar_value on non-scalar " +
                                shape_str(t.shape));
  }
  return t.data[0];
}

double grad_check(const std::function<Value(Tape&)>& f,
                  const std::vector<Parameter*>& params, double eps) {
  zero_grad(params);
  {
    Tape tape;
    Value loss = f(tape);
    tape.backward(loss);
  }
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  auto eval = [&]() {
    Tape tape;
    return tape.scalar_value(f(tape));
  };

  double max_rel = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Parameter* p = params[pi];
    for (size_t i = 0; i < p->value.data.size(); ++i) {
      double saved = p->value.data[i];
      p->value.data[i] = saved + eps;
      double f_plus = eval();
      p->value.data[i] = saved - eps;
      double f_minus = eval();
      p->value.data[i] = saved;
      double numeric = (f_plus - f_minus) / (2.0 * eps);
      double a = analytic[pi].data[i];
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        return std::numeric_limits<double>::infinity();
      }
      double rel = std::abs(a - numeric) /
                   std::max(1e-8, std::abs(a) + std::abs(numeric));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace dact
