#include "dact/crf.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dact {

namespace {

// Validates the shapes shared by all scorers and returns K.
int check_crf_shapes(const Tensor& unary, const Tensor& trans,
                     const Tensor& start) {
  if (unary.rank() != 2) {
    throw std::invalid_argument("unary scores must be [R,K], got " +
                                shape_str(unary.shape));
  }
  int k = unary.shape[1];
  if (trans.rank() != 2 || trans.shape[0] != k || trans.shape[1] != k) {
    throw std::invalid_argument("transition matrix must be [" +
                                std::to_string(k) + "," + std::to_string(k) +
                                "], got " + shape_str(trans.shape));
  }
  if (start.rank() != 1 || start.shape[0] != k) {
    throw std::invalid_argument("start vector must have length " +
                                std::to_string(k) + ", got " +
                                shape_str(start.shape));
  }
  return k;
}

void check_labels(const std::vector<int>& labels, int r, int k) {
  if (static_cast<int>(labels.size()) != r) {
    throw std::invalid_argument("label sequence length " +
                                std::to_string(labels.size()) +
                                " does not match " + std::to_string(r) +
                                " utterances");
  }
  for (int y : labels) {
    if (y < 0 || y >= k) {
      throw std::invalid_argument("label index " + std::to_string(y) +
                                  " out of range [0," + std::to_string(k) +
                                  ")");
    }
  }
}

double logsumexp_vec(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - m);
  return m + std::log(acc);
}

}  // namespace

CrfParams make_crf_params(ParameterStore& store, const std::string& prefix,
                          int num_labels, int input_dim, Rng& rng) {
  if (num_labels < 1 || input_dim < 1) {
    throw std::invalid_argument("crf needs at least one label and one input");
  }
  CrfParams p;
  p.unary_w = &store.add(prefix + ".unary_w", {num_labels, input_dim},
                         InitSpec::glorot(), rng);
  p.unary_b =
      &store.add(prefix + ".unary_b", {num_labels}, InitSpec::zeros(), rng);
  p.trans = &store.add(prefix + ".trans", {num_labels, num_labels},
                       InitSpec::zeros(), rng);
  p.start =
      &store.add(prefix + ".start", {num_labels}, InitSpec::zeros(), rng);
  return p;
}

Value unary_scores(Tape& t, const std::vector<Value>& gs, const CrfParams& p) {
  if (gs.empty()) {
    throw std::invalid_argument("unary_scores needs at least one utterance");
  }
  Value g = t.stack_rows(gs);  // [R, D]
  if (t.value(g).shape[1] != p.input_dim()) {
    throw std::invalid_argument("utterance vectors have dimension " +
                                std::to_string(t.value(g).shape[1]) +
                                ", scorer expects " +
                                std::to_string(p.input_dim()));
  }
  Value scores = t.matmul(g, t.transpose(t.param(*p.unary_w)));  // [R, K]
  return t.add(scores, t.param(*p.unary_b));
}

Value score_sequence(Tape& t, Value unary, const std::vector<int>& labels,
                     Value trans, Value start) {
  const Tensor& u = t.value(unary);
  int k = check_crf_shapes(u, t.value(trans), t.value(start));
  int r = u.shape[0];
  check_labels(labels, r, k);

  std::vector<int> unary_idx(static_cast<size_t>(r));
  for (int j = 0; j < r; ++j) unary_idx[static_cast<size_t>(j)] = j * k + labels[static_cast<size_t>(j)];
  Value total = t.add(t.gather_sum(unary, unary_idx),
                      t.gather_sum(start, {labels[0]}));
  if (r > 1) {
    std::vector<int> trans_idx;
    trans_idx.reserve(static_cast<size_t>(r - 1));
    for (int j = 1; j < r; ++j) {
      trans_idx.push_back(labels[static_cast<size_t>(j - 1)] * k +
                          labels[static_cast<size_t>(j)]);
    }
    total = t.add(total, t.gather_sum(trans, trans_idx));
  }
  return total;
}

Value log_partition(Tape& t, Value unary, Value trans, Value start) {
  const Tensor& u = t.value(unary);
  check_crf_shapes(u, t.value(trans), t.value(start));
  int r = u.shape[0];

  Value alpha = t.add(start, t.select_row(unary, 0));
  if (r > 1) {
    // (trans^T + alpha)[b][a] = trans[a][b] + alpha[a], so a per-row
    // logsumexp marginalizes the previous label.
    Value trans_t = t.transpose(trans);
    for (int j = 1; j < r; ++j) {
      Value summed = t.logsumexp_rows(t.add(trans_t, alpha));
      alpha = t.add(summed, t.select_row(unary, j));
    }
  }
  return t.logsumexp(alpha);
}

Value nll(Tape& t, Value unary, const std::vector<int>& labels, Value trans,
          Value start) {
  return t.sub(log_partition(t, unary, trans, start),
               score_sequence(t, unary, labels, trans, start));
}

double sequence_score(const Tensor& unary, const std::vector<int>& labels,
                      const Tensor& trans, const Tensor& start) {
  int k = check_crf_shapes(unary, trans, start);
  int r = unary.shape[0];
  check_labels(labels, r, k);
  double score = start.at(labels[0]) + unary.at(0, labels[0]);
  for (int j = 1; j < r; ++j) {
    score += trans.at(labels[static_cast<size_t>(j - 1)],
                      labels[static_cast<size_t>(j)]) +
             unary.at(j, labels[static_cast<size_t>(j)]);
  }
  return score;
}

ViterbiResult viterbi_decode(const Tensor& unary, const Tensor& trans,
                             const Tensor& start) {
  int k = check_crf_shapes(unary, trans, start);
  int r = unary.shape[0];

  // best[j][a] = best score of a suffix starting at position j with label a.
  std::vector<std::vector<double>> best(
      static_cast<size_t>(r), std::vector<double>(static_cast<size_t>(k)));
  for (int a = 0; a < k; ++a) {
    best[static_cast<size_t>(r - 1)][static_cast<size_t>(a)] =
        unary.at(r - 1, a);
  }
  for (int j = r - 2; j >= 0; --j) {
    for (int a = 0; a < k; ++a) {
      double m = -std::numeric_limits<double>::infinity();
      for (int b = 0; b < k; ++b) {
        m = std::max(m, trans.at(a, b) +
                            best[static_cast<size_t>(j + 1)][static_cast<size_t>(b)]);
      }
      best[static_cast<size_t>(j)][static_cast<size_t>(a)] = unary.at(j, a) + m;
    }
  }

  // Greedy reconstruction front to back; scanning labels in ascending order
  // with a strict improvement test picks the lexicographically smallest
  // maximizer.
  ViterbiResult res;
  res.labels.resize(static_cast<size_t>(r));
  int prev = -1;
  double total = -std::numeric_limits<double>::infinity();
  for (int a = 0; a < k; ++a) {
    double cand = start.at(a) + best[0][static_cast<size_t>(a)];
    if (cand > total) {
      total = cand;
      prev = a;
    }
  }
  res.labels[0] = prev;
  res.score = total;
  for (int j = 1; j < r; ++j) {
    int pick = -1;
    double m = -std::numeric_limits<double>::infinity();
    for (int b = 0; b < k; ++b) {
      double cand = trans.at(prev, b) +
                    best[static_cast<size_t>(j)][static_cast<size_t>(b)];
      if (cand > m) {
        m = cand;
        pick = b;
      }
    }
    res.labels[static_cast<size_t>(j)] = pick;
    prev = pick;
  }
  return res;
}

Marginals forward_backward_marginals(const Tensor& unary, const Tensor& trans,
                                     const Tensor& start) {
  int k = check_crf_shapes(unary, trans, start);
  int r = unary.shape[0];

  std::vector<std::vector<double>> alpha(
      static_cast<size_t>(r), std::vector<double>(static_cast<size_t>(k)));
  std::vector<std::vector<double>> beta(
      static_cast<size_t>(r), std::vector<double>(static_cast<size_t>(k), 0.0));
  for (int a = 0; a < k; ++a) {
    alpha[0][static_cast<size_t>(a)] = start.at(a) + unary.at(0, a);
  }
  std::vector<double> scratch(static_cast<size_t>(k));
  for (int j = 1; j < r; ++j) {
    for (int b = 0; b < k; ++b) {
      for (int a = 0; a < k; ++a) {
        scratch[static_cast<size_t>(a)] =
            alpha[static_cast<size_t>(j - 1)][static_cast<size_t>(a)] +
            trans.at(a, b);
      }
      alpha[static_cast<size_t>(j)][static_cast<size_t>(b)] =
          logsumexp_vec(scratch) + unary.at(j, b);
    }
  }
  for (int j = r - 2; j >= 0; --j) {
    for (int a = 0; a < k; ++a) {
      for (int b = 0; b < k; ++b) {
        scratch[static_cast<size_t>(b)] =
            trans.at(a, b) + unary.at(j + 1, b) +
            beta[static_cast<size_t>(j + 1)][static_cast<size_t>(b)];
      }
      beta[static_cast<size_t>(j)][static_cast<size_t>(a)] =
          logsumexp_vec(scratch);
    }
  }

  Marginals m;
  m.log_z = logsumexp_vec(alpha[static_cast<size_t>(r - 1)]);
  m.node = Tensor::zeros({r, k});
  for (int j = 0; j < r; ++j) {
    for (int a = 0; a < k; ++a) {
      m.node.at(j, a) =
          std::exp(alpha[static_cast<size_t>(j)][static_cast<size_t>(a)] +
                   beta[static_cast<size_t>(j)][static_cast<size_t>(a)] -
                   m.log_z);
    }
  }
  m.edge.reserve(static_cast<size_t>(std::max(0, r - 1)));
  for (int j = 0; j + 1 < r; ++j) {
    Tensor e = Tensor::zeros({k, k});
    for (int a = 0; a < k; ++a) {
      for (int b = 0; b < k; ++b) {
        e.at(a, b) =
            std::exp(alpha[static_cast<size_t>(j)][static_cast<size_t>(a)] +
                     trans.at(a, b) + unary.at(j + 1, b) +
                     beta[static_cast<size_t>(j + 1)][static_cast<size_t>(b)] -
                     m.log_z);
      }
    }
    m.edge.push_back(std::move(e));
  }
  return m;
}

Enumeration brute_force(const Tensor& unary, const Tensor& trans,
                        const Tensor& start) {
  int k = check_crf_shapes(unary, trans, start);
  int r = unary.shape[0];
  double count = std::pow(static_cast<double>(k), r);
  if (count > 1e6) {
    throw std::invalid_argument("enumeration too large: " + std::to_string(k) +
                                "^" + std::to_string(r));
  }
  int total = static_cast<int>(count);

  Enumeration e;
  e.probs.resize(static_cast<size_t>(total));
  std::vector<int> y(static_cast<size_t>(r), 0);
  std::vector<double> scores(static_cast<size_t>(total));
  e.best_score = -std::numeric_limits<double>::infinity();
  for (int idx = 0; idx < total; ++idx) {
    double sc = sequence_score(unary, y, trans, start);
    scores[static_cast<size_t>(idx)] = sc;
    if (sc > e.best_score) {
      e.best_score = sc;
      e.best = y;
    }
    // advance the odometer; the last position moves fastest, so sequences
    // are visited in ascending lexicographic order
    for (int j = r - 1; j >= 0; --j) {
      if (++y[static_cast<size_t>(j)] < k) break;
      y[static_cast<size_t>(j)] = 0;
    }
  }
  e.log_z = logsumexp_vec(scores);
  for (int idx = 0; idx < total; ++idx) {
    e.probs[static_cast<size_t>(idx)] =
        std::exp(scores[static_cast<size_t>(idx)] - e.log_z);
  }
  return e;
}

}  // namespace dact
