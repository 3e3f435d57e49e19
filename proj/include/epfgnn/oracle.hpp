#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "epfgnn/dense_matrix.hpp"
#include "epfgnn/errors.hpp"
#include "epfgnn/graph.hpp"
#include "epfgnn/mrf.hpp"
#include "epfgnn/numerics.hpp"
#include "epfgnn/observed.hpp"

// Brute-force ground truth for tiny models. Everything here enumerates label
// assignments explicitly and reduces in log space; nothing reuses the
// message-passing code paths it is meant to check.

namespace epfgnn::oracle {

struct OracleLimit {
  std::uint64_t max_configurations = std::uint64_t{1} << 20;
};

/// c^k, or refusal when it exceeds the limit.
inline std::uint64_t configuration_count(std::size_t num_classes, std::size_t num_vars,
                                         const OracleLimit& limit) {
  std::uint64_t total = 1;
  for (std::size_t v = 0; v < num_vars; ++v) {
    if (num_classes != 0 && total > limit.max_configurations / num_classes) {
      throw OracleLimitError("oracle: " + std::to_string(num_classes) + "^" +
                             std::to_string(num_vars) + " assignments exceed the limit of " +
                             std::to_string(limit.max_configurations));
    }
    total *= num_classes;
  }
  if (total > limit.max_configurations) {
    throw OracleLimitError("oracle: enumeration exceeds the limit of " +
                           std::to_string(limit.max_configurations));
  }
  return total;
}

/// Visits every assignment of `free_vars` (others keep their value in `y`),
/// in odometer order with the first listed variable varying fastest.
template <class Fn>
void for_each_assignment(std::vector<Label>& y, std::span<const NodeId> free_vars,
                         std::size_t num_classes, Fn&& fn) {
  for (NodeId v : free_vars) y[v] = 0;
  for (;;) {
    fn(static_cast<const std::vector<Label>&>(y));
    std::size_t pos = 0;
    while (pos < free_vars.size()) {
      Label& slot = y[free_vars[pos]];
      if (++slot < num_classes) break;
      slot = 0;
      ++pos;
    }
    if (pos == free_vars.size()) return;
  }
}

/// Streaming log-sum-exp accumulator.
class LogSum {
 public:
  void add(double x) {
    if (x == -std::numeric_limits<double>::infinity()) return;
    if (x <= max_) {
      sum_ += std::exp(x - max_);
    } else {
      sum_ = sum_ * std::exp(max_ - x) + 1.0;
      max_ = x;
    }
  }
  double value() const {
    return sum_ == 0.0 ? -std::numeric_limits<double>::infinity() : max_ + std::log(sum_);
  }

 private:
  double max_ = -std::numeric_limits<double>::infinity();
  double sum_ = 0.0;
};

namespace detail {

inline double assignment_score(const Graph& g, const DenseMatrix& scores, const PairwiseParams& pp,
                               const DenseMatrix& compat, std::span<const Label> y) {
  double total = 0.0;
  for (NodeId i = 0; i < g.num_nodes(); ++i) total += scores(i, y[i]);
  for (EdgeId e = 0; e < g.num_edges(); ++e) {
    const auto [j, k] = g.edge(e);
    total += pp.alpha(e) * compat(y[j], y[k]);
  }
  return total;
}

inline std::vector<NodeId> all_nodes(std::size_t n) {
  std::vector<NodeId> v(n);
  for (NodeId i = 0; i < n; ++i) v[i] = i;
  return v;
}

inline std::vector<Label> clamped_assignment(const ObservedLabels& observed) {
  std::vector<Label> y(observed.size(), 0);
  for (NodeId i = 0; i < observed.size(); ++i)
    if (observed.is_labeled(i)) y[i] = observed.label(i);
  return y;
}

}  // namespace detail

/// log Z of the full pairwise model.
inline double exact_log_partition(const Graph& g, const DenseMatrix& scores,
                                  const PairwiseParams& pp, const OracleLimit& limit = {}) {
  configuration_count(scores.cols(), g.num_nodes(), limit);
  const DenseMatrix compat = pp.compat();
  const auto vars = detail::all_nodes(g.num_nodes());
  std::vector<Label> y(g.num_nodes(), 0);
  LogSum acc;
  for_each_assignment(y, vars, scores.cols(), [&](const std::vector<Label>& a) {
    acc.add(detail::assignment_score(g, scores, pp, compat, a));
  });
  return acc.value();
}

/// log Σ_{y_U} exp(score(y_L, y_U)): the unnormalized evidence of the observed labels.
inline double exact_log_evidence_mass(const Graph& g, const DenseMatrix& scores,
                                      const PairwiseParams& pp, const ObservedLabels& observed,
                                      const OracleLimit& limit = {}) {
  const auto free = observed.unlabeled_nodes();
  configuration_count(scores.cols(), free.size(), limit);
  const DenseMatrix compat = pp.compat();
  std::vector<Label> y = detail::clamped_assignment(observed);
  LogSum acc;
  for_each_assignment(y, free, scores.cols(), [&](const std::vector<Label>& a) {
    acc.add(detail::assignment_score(g, scores, pp, compat, a));
  });
  return acc.value();
}

struct PosteriorMarginals {
  std::vector<NodeId> nodes;  // unlabeled nodes, ascending
  DenseMatrix marginals;      // one row per entry of `nodes`
};

/// Marginals of p(Y_U | y_L, x) by enumeration.
inline PosteriorMarginals exact_posterior_marginals(const Graph& g, const DenseMatrix& scores,
                                                    const PairwiseParams& pp,
                                                    const ObservedLabels& observed,
                                                    const OracleLimit& limit = {}) {
  PosteriorMarginals out;
  out.nodes = observed.unlabeled_nodes();
  const std::size_t c = scores.cols();
  out.marginals = DenseMatrix(out.nodes.size(), c);
  if (out.nodes.empty()) return out;
  const double log_mass = exact_log_evidence_mass(g, scores, pp, observed, limit);
  const DenseMatrix compat = pp.compat();
  std::vector<Label> y = detail::clamped_assignment(observed);
  for_each_assignment(y, out.nodes, c, [&](const std::vector<Label>& a) {
    const double p = std::exp(detail::assignment_score(g, scores, pp, compat, a) - log_mass);
    for (std::size_t r = 0; r < out.nodes.size(); ++r) out.marginals(r, a[out.nodes[r]]) += p;
  });
  return out;
}

/// log P(y_L | x) with Y_U marginalized.
inline double exact_observed_ll(const Graph& g, const DenseMatrix& scores, const PairwiseParams& pp,
                                const ObservedLabels& observed, const OracleLimit& limit = {}) {
  return exact_log_evidence_mass(g, scores, pp, observed, limit) -
         exact_log_partition(g, scores, pp, limit);
}

/// E_q[log P(Y_U, y_L | x)] + H(q) for a fully factorized q whose rows follow
/// observed.unlabeled_nodes().
inline double exact_elbo(const Graph& g, const DenseMatrix& scores, const PairwiseParams& pp,
                         const ObservedLabels& observed, const DenseMatrix& q,
                         const OracleLimit& limit = {}) {
  const auto free = observed.unlabeled_nodes();
  if (q.rows() != free.size() || q.cols() != scores.cols())
    throw ShapeError("exact_elbo: proposal shape " + q.shape_string());
  const double log_z = exact_log_partition(g, scores, pp, limit);
  const DenseMatrix compat = pp.compat();
  std::vector<Label> y = detail::clamped_assignment(observed);
  double expected = 0.0;
  double entropy = 0.0;
  for_each_assignment(y, free, scores.cols(), [&](const std::vector<Label>& a) {
    double prob = 1.0;
    for (std::size_t r = 0; r < free.size(); ++r) prob *= q(r, a[free[r]]);
    if (prob == 0.0) return;
    expected += prob * (detail::assignment_score(g, scores, pp, compat, a) - log_z);
    entropy -= prob * std::log(prob);
  });
  return expected + entropy;
}

/// KL(q ‖ p(Y_U | y_L, x)) computed directly from the joint distributions.
inline double exact_kl_to_posterior(const Graph& g, const DenseMatrix& scores,
                                    const PairwiseParams& pp, const ObservedLabels& observed,
                                    const DenseMatrix& q, const OracleLimit& limit = {}) {
  const auto free = observed.unlabeled_nodes();
  const double log_mass = exact_log_evidence_mass(g, scores, pp, observed, limit);
  const DenseMatrix compat = pp.compat();
  std::vector<Label> y = detail::clamped_assignment(observed);
  double kl = 0.0;
  for_each_assignment(y, free, scores.cols(), [&](const std::vector<Label>& a) {
    double prob = 1.0;
    for (std::size_t r = 0; r < free.size(); ++r) prob *= q(r, a[free[r]]);
    if (prob == 0.0) return;
    const double log_post = detail::assignment_score(g, scores, pp, compat, a) - log_mass;
    kl += prob * (std::log(prob) - log_post);
  });
  return kl;
}

/// log Z̄ of one redistributed star piece by enumerating its c^{d+1} assignments.
inline double enumerate_piece_log_partition(const StarPiece& piece, const DenseMatrix& scores,
                                            const PairwiseParams& pp,
                                            const OracleLimit& limit = {}) {
  const std::size_t c = scores.cols();
  const std::size_t d = piece.leaves.size();
  configuration_count(c, d + 1, limit);
  const DenseMatrix compat = pp.compat();
  std::vector<Label> local(d + 1, 0);  // local[0] = center, local[k+1] = leaf k
  const auto vars = detail::all_nodes(d + 1);
  LogSum acc;
  for_each_assignment(local, vars, c, [&](const std::vector<Label>& a) {
    double v = piece.center_exponent * scores(piece.center, a[0]);
    for (std::size_t k = 0; k < d; ++k) {
      v += piece.leaf_exponents[k] * scores(piece.leaves[k], a[k + 1]);
      v += piece.pair_exponents[k] * pp.alpha(piece.edge_ids[k]) * compat(a[0], a[k + 1]);
    }
    acc.add(v);
  });
  return acc.value();
}

struct EnumeratedPieceMarginals {
  std::vector<double> center;
  DenseMatrix leaves;
  std::vector<DenseMatrix> pairwise;
};

inline EnumeratedPieceMarginals enumerate_piece_marginals(const StarPiece& piece,
                                                          const DenseMatrix& scores,
                                                          const PairwiseParams& pp,
                                                          const OracleLimit& limit = {}) {
  const std::size_t c = scores.cols();
  const std::size_t d = piece.leaves.size();
  const double log_z = enumerate_piece_log_partition(piece, scores, pp, limit);
  const DenseMatrix compat = pp.compat();
  EnumeratedPieceMarginals out{std::vector<double>(c, 0.0), DenseMatrix(d, c),
                               std::vector<DenseMatrix>(d, DenseMatrix(c, c))};
  std::vector<Label> local(d + 1, 0);
  const auto vars = detail::all_nodes(d + 1);
  for_each_assignment(local, vars, c, [&](const std::vector<Label>& a) {
    double v = piece.center_exponent * scores(piece.center, a[0]);
    for (std::size_t k = 0; k < d; ++k) {
      v += piece.leaf_exponents[k] * scores(piece.leaves[k], a[k + 1]);
      v += piece.pair_exponents[k] * pp.alpha(piece.edge_ids[k]) * compat(a[0], a[k + 1]);
    }
    const double p = std::exp(v - log_z);
    out.center[a[0]] += p;
    for (std::size_t k = 0; k < d; ++k) {
      out.leaves(k, a[k + 1]) += p;
      out.pairwise[k](a[0], a[k + 1]) += p;
    }
  });
  return out;
}

}  // namespace epfgnn::oracle
