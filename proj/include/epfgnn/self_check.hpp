#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "epfgnn/dense_matrix.hpp"
#include "epfgnn/em.hpp"
#include "epfgnn/gcn.hpp"
#include "epfgnn/graph.hpp"
#include "epfgnn/mrf.hpp"
#include "epfgnn/numerics.hpp"
#include "epfgnn/observed.hpp"
#include "epfgnn/oracle.hpp"
#include "epfgnn/rng.hpp"

// Randomized consistency checks of the model code against brute-force
// enumeration and finite differences. Shared by the CLI's oracle-check
// command and the test suites.

namespace epfgnn::check {

struct CheckResult {
  std::string name;
  bool passed = true;
  double worst = 0.0;  // largest observed error (or violation)
  double tolerance = 0.0;
  std::size_t trials = 0;
  std::size_t skipped = 0;

  void observe(double err) {
    worst = std::max(worst, err);
    if (!(err <= tolerance)) passed = false;
  }
};

struct Options {
  std::uint64_t seed = 0;
  std::size_t piece_trials = 100;
  std::size_t gradient_trials = 50;
  std::size_t identity_trials = 100;
  std::size_t shift_trials = 100;
  std::size_t elbo_trials = 20;
  std::size_t max_nodes = 10;     // upper bound on graph size for the ELBO check
  std::size_t max_classes = 3;    // upper bound on classes for the ELBO check
  bool corrupt_gradient = false;  // negative control
};

// ---------------------------------------------------------------------------
// Random instances

inline DenseMatrix random_matrix(std::size_t rows, std::size_t cols, double lo, double hi,
                                 RandomStream& rng) {
  DenseMatrix m(rows, cols);
  for (double& v : m.values()) v = rng.uniform(lo, hi);
  return m;
}

inline Graph random_graph(std::size_t n, double edge_prob, RandomStream& rng) {
  std::vector<RawEdge> edges;
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = j + 1; k < n; ++k)
      if (rng.bernoulli(edge_prob)) edges.emplace_back(j, k);
  return build_graph(n, edges);
}

inline PairwiseParams random_pairwise(std::size_t c, std::size_t m, CoefficientMode mode,
                                      RandomStream& rng) {
  PairwiseParams pp(c, m, mode);
  for (double& v : pp.raw().values()) v = rng.uniform(-1.5, 1.5);
  for (double& a : pp.alpha_values()) a = rng.uniform(-1.0, 1.5);
  return pp;
}

/// Per-node distributions; roughly one row in four is a point mass.
inline DenseMatrix random_distributions(std::size_t n, std::size_t c, RandomStream& rng) {
  DenseMatrix r(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = r.row(i);
    if (rng.bernoulli(0.25)) {
      row[rng.below(c)] = 1.0;
      continue;
    }
    double total = 0.0;
    for (double& v : row) total += (v = rng.uniform(0.01, 1.0));
    for (double& v : row) v /= total;
  }
  return r;
}

inline std::vector<Label> random_assignment(std::size_t n, std::size_t c, RandomStream& rng) {
  std::vector<Label> y(n);
  for (auto& v : y) v = static_cast<Label>(rng.below(c));
  return y;
}

inline CoefficientMode mode_at(std::size_t i) {
  static constexpr CoefficientMode modes[] = {CoefficientMode::none, CoefficientMode::layer,
                                              CoefficientMode::edge};
  return modes[i % 3];
}

inline RedistributionScheme scheme_at(std::size_t i) {
  return i % 2 == 0 ? RedistributionScheme::average : RedistributionScheme::center;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

/// ‖a − b‖ / max(‖a‖, ‖b‖); 0 when both vanish.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  if (denom < 1e-12) return std::sqrt(diff);
  return std::sqrt(diff) / denom;
}

// ---------------------------------------------------------------------------
// Checks

/// Star piece log-partition and marginals against enumeration.
inline CheckResult piece_oracle(const Options& opt) {
  CheckResult res{"piece partition and marginals vs enumeration", true, 0.0, 1e-10};
  for (std::size_t t = 0; t < opt.piece_trials; ++t) {
    RandomStream rng = derive_stream(opt.seed, StreamPurpose::oracle, 1, t);
    const std::size_t c = 2 + rng.below(3);
    const std::size_t d = rng.below(7);
    // Node 0 is the center; extra leaf-leaf edges vary the leaf degrees.
    std::vector<RawEdge> edges;
    for (std::size_t k = 1; k <= d; ++k) edges.emplace_back(0, k);
    for (std::size_t j = 1; j <= d; ++j)
      for (std::size_t k = j + 1; k <= d; ++k)
        if (rng.bernoulli(0.3)) edges.emplace_back(j, k);
    const Graph g = build_graph(d + 1, edges);
    const DenseMatrix scores = random_matrix(d + 1, c, -2.0, 2.0, rng);
    const PairwiseParams pp = random_pairwise(c, g.num_edges(), mode_at(t), rng);
    const PieceSet pieces = build_pieces(g, scheme_at(t / 3));
    const StarPiece p = pieces.piece(0);

    const PieceMarginals fast = piece_marginals(p, scores, pp);
    const double slow_z = oracle::enumerate_piece_log_partition(p, scores, pp);
    const auto slow = oracle::enumerate_piece_marginals(p, scores, pp);
    double err = std::abs(piece_log_partition(p, scores, pp) - slow_z);
    err = std::max(err, std::abs(fast.log_partition - slow_z));
    err = std::max(err, max_abs_diff(fast.center, slow.center));
    err = std::max(err, max_abs_diff(fast.leaves.values(), slow.leaves.values()));
    for (std::size_t k = 0; k < d; ++k)
      err = std::max(err, max_abs_diff(fast.pairwise[k].values(), slow.pairwise[k].values()));
    res.observe(err);
    ++res.trials;
  }
  return res;
}

struct GradientInstance {
  Graph graph;
  DenseMatrix features;
  GcnParams params;
  PairwiseParams pairwise;
  DenseMatrix targets;
  RedistributionScheme scheme = RedistributionScheme::average;
  double keep_prob = 1.0;
  std::uint64_t dropout_key = 0;
};

/// F(r, s(W0, W1), K, α) with a replayed dropout stream.
inline double gradient_objective(const GradientInstance& inst, const GcnParams& params,
                                 const PairwiseParams& pp, const PieceSet& pieces,
                                 GcnCache* cache = nullptr) {
  RandomStream stream(inst.dropout_key);
  const SparseAdjacency adj(inst.graph);
  const DenseMatrix scores = unary_log_factors(params, inst.features, adj,
                                               Dropout::training(inst.keep_prob, stream), cache);
  return expected_piecewise_objective(inst.targets, scores, pp, pieces);
}

/// Analytic gradients of every parameter block against central differences
/// (h = 1e-5), normwise relative error per block.
inline CheckResult gradients(const Options& opt) {
  CheckResult res{"objective and backbone gradients vs central differences", true, 0.0, 1e-6};
  const double h = 1e-5;
  for (std::size_t t = 0; t < opt.gradient_trials; ++t) {
    RandomStream rng = derive_stream(opt.seed, StreamPurpose::oracle, 2, t);
    GradientInstance inst;
    const std::size_t n = 2 + rng.below(9);
    const std::size_t c = 2 + rng.below(3);
    const std::size_t f = 2 + rng.below(4);
    const std::size_t hidden = 2 + rng.below(7);
    inst.graph = random_graph(n, 0.4, rng);
    inst.features = random_matrix(n, f, -1.0, 1.0, rng);
    inst.pairwise = random_pairwise(c, inst.graph.num_edges(), mode_at(t), rng);
    inst.targets = random_distributions(n, c, rng);
    inst.scheme = scheme_at(t / 3);
    inst.keep_prob = t % 2 == 0 ? 1.0 : 0.7;
    inst.dropout_key = rng.next_u64();
    const PieceSet pieces = build_pieces(inst.graph, inst.scheme);

    // Redraw weights until no hidden pre-activation sits near the ReLU kink.
    GcnCache cache;
    bool smooth = false;
    for (int attempt = 0; attempt < 20 && !smooth; ++attempt) {
      inst.params.w0 = random_matrix(f, hidden, -1.0, 1.0, rng);
      inst.params.w1 = random_matrix(hidden, c, -1.0, 1.0, rng);
      gradient_objective(inst, inst.params, inst.pairwise, pieces, &cache);
      smooth = true;
      for (double v : cache.pre_hidden.values())
        if (v != 0.0 && std::abs(v) < 1e-3) smooth = false;
    }
    if (!smooth) {
      ++res.skipped;
      continue;
    }

    RandomStream stream(inst.dropout_key);
    const SparseAdjacency adj(inst.graph);
    const DenseMatrix scores =
        unary_log_factors(inst.params, inst.features, adj,
                          Dropout::training(inst.keep_prob, stream), &cache);
    ObjectiveGradient og = objective_gradients(inst.targets, scores, inst.pairwise, pieces);
    const GcnGrads gg = backward(inst.params, inst.features, adj, cache, og.scores);
    if (opt.corrupt_gradient) og.raw(0, 1) += 1e-3 * (1.0 + std::abs(og.raw(0, 1)));

    // Scores block: differentiate F(r, s) with s as a free variable.
    {
      DenseMatrix s = scores;
      std::vector<double> fd(s.size());
      for (std::size_t i = 0; i < s.size(); ++i) {
        const double keep = s.values()[i];
        s.values()[i] = keep + h;
        const double up = expected_piecewise_objective(inst.targets, s, inst.pairwise, pieces);
        s.values()[i] = keep - h;
        const double down = expected_piecewise_objective(inst.targets, s, inst.pairwise, pieces);
        s.values()[i] = keep;
        fd[i] = (up - down) / (2 * h);
      }
      res.observe(relative_error(og.scores.values(), fd));
    }
    auto fd_block = [&](std::span<double> theta, const std::function<double()>& eval) {
      std::vector<double> fd(theta.size());
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const double keep = theta[i];
        theta[i] = keep + h;
        const double up = eval();
        theta[i] = keep - h;
        const double down = eval();
        theta[i] = keep;
        fd[i] = (up - down) / (2 * h);
      }
      return fd;
    };
    GcnParams params = inst.params;
    PairwiseParams pp = inst.pairwise;
    auto eval = [&] { return gradient_objective(inst, params, pp, pieces); };
    res.observe(relative_error(gg.w0.values(), fd_block(params.w0.values(), eval)));
    res.observe(relative_error(gg.w1.values(), fd_block(params.w1.values(), eval)));
    res.observe(relative_error(og.raw.values(), fd_block(pp.raw().values(), eval)));
    if (!pp.alpha_values().empty())
      res.observe(relative_error(og.alpha, fd_block(pp.alpha_values(), eval)));
    ++res.trials;
  }
  return res;
}

/// Σ_P piece_log_factor == global log score at random assignments.
inline CheckResult redistribution_identity(const Options& opt) {
  CheckResult res{"summed piece log-factors equal the global log score", true, 0.0, 1e-10};
  for (std::size_t t = 0; t < opt.identity_trials; ++t) {
    RandomStream rng = derive_stream(opt.seed, StreamPurpose::oracle, 3, t);
    const std::size_t n = 1 + rng.below(15);
    const std::size_t c = 2 + rng.below(4);
    const Graph g = random_graph(n, rng.uniform(0.1, 0.6), rng);
    const DenseMatrix scores = random_matrix(n, c, -3.0, 3.0, rng);
    const PairwiseParams pp = random_pairwise(c, g.num_edges(), mode_at(t), rng);
    const auto y = random_assignment(n, c, rng);
    const double global = global_log_score(g, scores, pp, y);
    for (std::size_t s = 0; s < 2; ++s) {
      const PieceSet pieces = build_pieces(g, scheme_at(s));
      double total = 0.0;
      for (NodeId i = 0; i < pieces.size(); ++i)
        total += piece_log_factor(pieces.piece(i), scores, pp, y);
      res.observe(std::abs(total - global));
    }
    ++res.trials;
  }
  return res;
}

/// Per-node constant shifts of the scores leave the objective unchanged.
inline CheckResult shift_invariance(const Options& opt) {
  CheckResult res{"piecewise objective invariant to per-node score shifts", true, 0.0, 1e-9};
  for (std::size_t t = 0; t < opt.shift_trials; ++t) {
    RandomStream rng = derive_stream(opt.seed, StreamPurpose::oracle, 4, t);
    const std::size_t n = 1 + rng.below(12);
    const std::size_t c = 2 + rng.below(4);
    const Graph g = random_graph(n, 0.4, rng);
    DenseMatrix scores = random_matrix(n, c, -3.0, 3.0, rng);
    const PairwiseParams pp = random_pairwise(c, g.num_edges(), mode_at(t), rng);
    const DenseMatrix r = random_distributions(n, c, rng);
    const PieceSet pieces = build_pieces(g, scheme_at(t / 3));
    const double base = expected_piecewise_objective(r, scores, pp, pieces);
    for (std::size_t i = 0; i < n; ++i) {
      const double shift = rng.uniform(-5.0, 5.0);
      for (double& v : scores.row(i)) v += shift;
    }
    res.observe(std::abs(expected_piecewise_objective(r, scores, pp, pieces) - base));
    ++res.trials;
  }
  return res;
}

struct ElboResults {
  CheckResult ascent;
  CheckResult kl_identity;
};

/// Exact ELBO never decreases across sequential mean-field site updates, and
/// observed_ll − ELBO equals KL(q ‖ posterior).
inline ElboResults elbo_ascent(const Options& opt) {
  ElboResults out{{"exact ELBO non-decreasing across mean-field site updates", true, 0.0, 1e-9},
                  {"observed log-likelihood minus ELBO equals KL to posterior", true, 0.0, 1e-10}};
  const oracle::OracleLimit limit;
  for (std::size_t t = 0; t < opt.elbo_trials; ++t) {
    RandomStream rng = derive_stream(opt.seed, StreamPurpose::oracle, 5, t);
    const std::size_t max_n = std::max<std::size_t>(opt.max_nodes, 2);
    const std::size_t n = 2 + rng.below(max_n - 1);
    const std::size_t c = 2 + rng.below(std::max<std::size_t>(opt.max_classes, 2) - 1);
    const Graph g = random_graph(n, 0.45, rng);
    const DenseMatrix scores = random_matrix(n, c, -2.0, 2.0, rng);
    const PairwiseParams pp = random_pairwise(c, g.num_edges(), mode_at(t), rng);
    std::vector<Label> labels = random_assignment(n, c, rng);
    std::vector<NodeId> labeled;
    for (NodeId i = 0; i < n; ++i)
      if (rng.bernoulli(0.3)) labeled.push_back(i);
    const ObservedLabels observed = ObservedLabels::from(labels, labeled);
    oracle::configuration_count(c, n, limit);

    Proposal q = Proposal::uniform(observed, c);
    q.table() = random_distributions(q.nodes().size(), c, rng);
    // Interior q only.
    for (std::size_t r = 0; r < q.table().rows(); ++r) {
      auto row = q.table().row(r);
      for (double& v : row) v = 0.9 * v + 0.1 / static_cast<double>(c);
    }
    const DenseMatrix compat = pp.compat();
    const double ll = oracle::exact_observed_ll(g, scores, pp, observed, limit);
    double elbo = oracle::exact_elbo(g, scores, pp, observed, q.table(), limit);
    out.kl_identity.observe(
        std::abs((ll - elbo) -
                 oracle::exact_kl_to_posterior(g, scores, pp, observed, q.table(), limit)));
    for (int sweep = 0; sweep < 3; ++sweep) {
      const std::vector<NodeId> nodes(q.nodes().begin(), q.nodes().end());
      for (NodeId i : nodes) {
        mean_field_site_update(q, i, scores, compat, pp, observed, g);
        const double next = oracle::exact_elbo(g, scores, pp, observed, q.table(), limit);
        out.ascent.observe(std::max(0.0, elbo - next));
        elbo = next;
      }
    }
    out.kl_identity.observe(
        std::abs((ll - elbo) -
                 oracle::exact_kl_to_posterior(g, scores, pp, observed, q.table(), limit)));
    ++out.ascent.trials;
    ++out.kl_identity.trials;
  }
  return out;
}

/// Without edges the piecewise log-likelihood is the softmax log-likelihood.
inline CheckResult edgeless_reduction(const Options& opt) {
  CheckResult res{"edgeless piecewise log-likelihood equals softmax log-likelihood", true, 0.0,
                  1e-10};
  for (std::size_t t = 0; t < opt.identity_trials; ++t) {
    RandomStream rng = derive_stream(opt.seed, StreamPurpose::oracle, 6, t);
    const std::size_t n = 1 + rng.below(20);
    const std::size_t c = 2 + rng.below(5);
    const Graph g = build_graph(n, std::vector<RawEdge>{});
    const DenseMatrix scores = random_matrix(n, c, -4.0, 4.0, rng);
    const PairwiseParams pp = random_pairwise(c, 0, mode_at(t), rng);
    const auto y = random_assignment(n, c, rng);
    double softmax_ll = 0.0;
    for (NodeId i = 0; i < n; ++i) softmax_ll += scores(i, y[i]) - log_sum_exp(scores.row(i));
    for (std::size_t s = 0; s < 2; ++s) {
      const PieceSet pieces = build_pieces(g, scheme_at(s));
      res.observe(std::abs(piecewise_log_likelihood(y, scores, pp, pieces) - softmax_ll));
    }
    ++res.trials;
  }
  return res;
}

inline std::vector<CheckResult> run_all(const Options& opt) {
  std::vector<CheckResult> out;
  out.push_back(piece_oracle(opt));
  out.push_back(gradients(opt));
  out.push_back(redistribution_identity(opt));
  out.push_back(shift_invariance(opt));
  auto elbo = elbo_ascent(opt);
  out.push_back(std::move(elbo.ascent));
  out.push_back(std::move(elbo.kl_identity));
  out.push_back(edgeless_reduction(opt));
  return out;
}

}  // namespace epfgnn::check
