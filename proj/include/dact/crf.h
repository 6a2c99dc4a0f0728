#ifndef DACT_CRF_H
#define DACT_CRF_H

#include <string>
#include <vector>

#include "dact/tape.h"
#include "dact/tensor.h"

namespace dact {

// Label-chain scorer over contextual utterance vectors. The transition matrix
// trans[a][b] scores label a followed by label b and is shared across
// positions; start[k] scores the first label. There is no end score.
struct CrfParams {
  Parameter* unary_w = nullptr;  // [K, D]
  Parameter* unary_b = nullptr;  // [K]
  Parameter* trans = nullptr;    // [K, K]
  Parameter* start = nullptr;    // [K]

  int num_labels() const { return unary_b->value.shape[0]; }
  int input_dim() const { return unary_w->value.shape[1]; }
};

CrfParams make_crf_params(ParameterStore& store, const std::string& prefix,
                          int num_labels, int input_dim, Rng& rng);

// Per-utterance label scores: row j = unary_w . g_j + unary_b. gs must be
// non-empty D-vectors; result is [R, K].
Value unary_scores(Tape& t, const std::vector<Value>& gs, const CrfParams& p);

// Log score of one labeling: start[y_0] + sum_j unary[j][y_j]
// + sum_{j>=1} trans[y_{j-1}][y_j].
Value score_sequence(Tape& t, Value unary, const std::vector<int>& labels,
                     Value trans, Value start);

// Log of the sum over all labelings of exp(score), by the forward recursion
// in log space.
Value log_partition(Tape& t, Value unary, Value trans, Value start);

// Negative log-likelihood of the gold labeling: log_partition - score.
Value nll(Tape& t, Value unary, const std::vector<int>& labels, Value trans,
          Value start);

// Plain (non-tape) counterparts used for decoding and as test oracles.

double sequence_score(const Tensor& unary, const std::vector<int>& labels,
                      const Tensor& trans, const Tensor& start);

struct ViterbiResult {
  std::vector<int> labels;
  double score = 0.0;
};

// Highest-scoring labeling; among ties, the lexicographically smallest
// (lowest label index decided front to back).
ViterbiResult viterbi_decode(const Tensor& unary, const Tensor& trans,
                             const Tensor& start);

struct Marginals {
  Tensor node;               // [R, K], p(y_j = k)
  std::vector<Tensor> edge;  // R-1 matrices [K, K], p(y_j = a, y_{j+1} = b)
  double log_z = 0.0;
};

Marginals forward_backward_marginals(const Tensor& unary, const Tensor& trans,
                                     const Tensor& start);

// Exhaustive enumeration over all K^R labelings, for small instances only
// (K^R <= 1e6). probs holds the full distribution in ascending lexicographic
// order of the label sequence; best is the argmax under the same tie-break
// as viterbi_decode.
struct Enumeration {
  double log_z = 0.0;
  std::vector<int> best;
  double best_score = 0.0;
  std::vector<double> probs;
};

Enumeration brute_force(const Tensor& unary, const Tensor& trans,
                        const Tensor& start);

}  // namespace dact

#endif  // DACT_CRF_H
