#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "epfgnn/dense_matrix.hpp"
#include "epfgnn/errors.hpp"
#include "epfgnn/graph.hpp"
#include "epfgnn/numerics.hpp"

namespace epfgnn {

// ---------------------------------------------------------------------------
// Pairwise parametrization: log φ_jk(a, b) = α_jk · K(a, b)

enum class CoefficientMode {
  none,   // α ≡ 1, not trained
  layer,  // one shared α for every edge
  edge,   // one α per edge
};

/// Shared compatibility matrix plus edge coefficients.
///
/// K is stored through an unconstrained matrix M and read as (M + Mᵀ)/2, so
/// it stays exactly symmetric under any update of M.
class PairwiseParams {
 public:
  PairwiseParams() = default;
  PairwiseParams(std::size_t num_classes, std::size_t num_edges, CoefficientMode mode,
                 double alpha_init = 1.0)
      : raw_(num_classes, num_classes, 0.0), mode_(mode), num_edges_(num_edges) {
    switch (mode) {
      case CoefficientMode::none: break;
      case CoefficientMode::layer: alpha_.assign(1, alpha_init); break;
      case CoefficientMode::edge: alpha_.assign(num_edges, alpha_init); break;
    }
  }

  std::size_t num_classes() const noexcept { return raw_.rows(); }
  std::size_t num_edges() const noexcept { return num_edges_; }
  CoefficientMode mode() const noexcept { return mode_; }

  DenseMatrix& raw() noexcept { return raw_; }
  const DenseMatrix& raw() const noexcept { return raw_; }

  DenseMatrix compat() const {
    const std::size_t c = num_classes();
    DenseMatrix k(c, c);
    for (std::size_t a = 0; a < c; ++a)
      for (std::size_t b = 0; b < c; ++b) k(a, b) = 0.5 * (raw_(a, b) + raw_(b, a));
    return k;
  }

  /// Sets M so that compat() == k (k must be symmetric).
  void set_compat(const DenseMatrix& k) {
    require_same_shape(raw_, k, "set_compat");
    raw_ = k;
  }

  double alpha(EdgeId e) const noexcept {
    switch (mode_) {
      case CoefficientMode::none: return 1.0;
      case CoefficientMode::layer: return alpha_[0];
      case CoefficientMode::edge: return alpha_[e];
    }
    return 1.0;
  }

  /// Trainable coefficient storage: empty (none), one value (layer) or one per edge.
  std::span<double> alpha_values() noexcept { return alpha_; }
  std::span<const double> alpha_values() const noexcept { return alpha_; }

  friend bool operator==(const PairwiseParams&, const PairwiseParams&) = default;

 private:
  DenseMatrix raw_;
  CoefficientMode mode_ = CoefficientMode::edge;
  std::size_t num_edges_ = 0;
  std::vector<double> alpha_;
};

inline double pairwise_log_factor(const PairwiseParams& pp, EdgeId e, Label a, Label b) {
  const auto& m = pp.raw();
  return pp.alpha(e) * 0.5 * (m(a, b) + m(b, a));
}

// ---------------------------------------------------------------------------
// Star pieces and factor redistribution

enum class RedistributionScheme {
  average,  // unary 1/(d(i)+1) in every piece containing i
  center,   // unary wholly in the node's own piece
  custom,
};

/// Exponents splitting each factor across the pieces that contain it.
///
/// `leaf` and `pairwise` are aligned with the graph's flattened adjacency:
/// slot adjacency_offset(i) + k describes neighbor k of center i.
struct Redistribution {
  RedistributionScheme scheme = RedistributionScheme::average;
  std::vector<double> center;
  std::vector<double> leaf;
  std::vector<double> pairwise;
};

inline Redistribution make_redistribution(const Graph& g, RedistributionScheme scheme) {
  Redistribution r;
  r.scheme = scheme;
  r.center.resize(g.num_nodes());
  r.leaf.resize(g.adjacency_size());
  r.pairwise.assign(g.adjacency_size(), 0.5);
  for (NodeId i = 0; i < g.num_nodes(); ++i) {
    const std::size_t off = g.adjacency_offset(i);
    const auto nb = g.neighbors(i);
    switch (scheme) {
      case RedistributionScheme::average:
        r.center[i] = 1.0 / static_cast<double>(g.degree(i) + 1);
        for (std::size_t k = 0; k < nb.size(); ++k)
          r.leaf[off + k] = 1.0 / static_cast<double>(g.degree(nb[k]) + 1);
        break;
      case RedistributionScheme::center:
        r.center[i] = 1.0;
        break;
      case RedistributionScheme::custom:
        throw ConfigError("make_redistribution: custom exponents must be filled by the caller");
    }
  }
  return r;
}

/// View of one depth-1 tree piece: a center node, its neighbors, and the
/// exponents its factors carry in this piece.
struct StarPiece {
  NodeId center = 0;
  std::span<const NodeId> leaves;
  std::span<const EdgeId> edge_ids;
  double center_exponent = 1.0;
  std::span<const double> leaf_exponents;
  std::span<const double> pair_exponents;
};

/// One star piece per node. Holds a pointer to the graph, which must outlive it.
class PieceSet {
 public:
  PieceSet(const Graph& g, Redistribution redist) : graph_(&g), redist_(std::move(redist)) {
    if (redist_.center.size() != g.num_nodes() || redist_.leaf.size() != g.adjacency_size() ||
        redist_.pairwise.size() != g.adjacency_size()) {
      throw ShapeError("PieceSet: redistribution arrays do not match the graph");
    }
  }

  const Graph& graph() const noexcept { return *graph_; }
  const Redistribution& redistribution() const noexcept { return redist_; }
  std::size_t size() const noexcept { return graph_->num_nodes(); }

  StarPiece piece(NodeId i) const noexcept {
    const std::size_t off = graph_->adjacency_offset(i);
    const std::size_t d = graph_->degree(i);
    return {i,
            graph_->neighbors(i),
            graph_->incident_edges(i),
            redist_.center[i],
            std::span<const double>(redist_.leaf).subspan(off, d),
            std::span<const double>(redist_.pairwise).subspan(off, d)};
  }

  /// Largest deviation from one of any node's or edge's exponent total.
  double partition_of_unity_error() const {
    const Graph& g = *graph_;
    std::vector<double> node_total(redist_.center.begin(), redist_.center.end());
    std::vector<double> edge_total(g.num_edges(), 0.0);
    for (NodeId i = 0; i < g.num_nodes(); ++i) {
      const StarPiece p = piece(i);
      for (std::size_t k = 0; k < p.leaves.size(); ++k) {
        node_total[p.leaves[k]] += p.leaf_exponents[k];
        edge_total[p.edge_ids[k]] += p.pair_exponents[k];
      }
    }
    double worst = 0.0;
    for (double t : node_total) worst = std::max(worst, std::abs(t - 1.0));
    for (double t : edge_total) worst = std::max(worst, std::abs(t - 1.0));
    return worst;
  }

 private:
  const Graph* graph_;
  Redistribution redist_;
};

inline PieceSet build_pieces(const Graph& g, RedistributionScheme scheme) {
  return PieceSet(g, make_redistribution(g, scheme));
}

// ---------------------------------------------------------------------------
// Exact inference on a star piece

namespace detail {

/// Leaf-to-center messages: msg(k, y_c) = log Σ_y exp(e_ℓ s_ℓ(y) + p α K(y_c, y)).
/// Returns the center log-belief (unnormalized) in `center_log`.
inline void star_messages(const StarPiece& piece, const DenseMatrix& scores,
                          const DenseMatrix& compat, const PairwiseParams& pp, DenseMatrix& msg,
                          std::vector<double>& center_log) {
  const std::size_t c = scores.cols();
  const std::size_t d = piece.leaves.size();
  msg = DenseMatrix(d, c);
  center_log.assign(c, 0.0);
  const auto sc = scores.row(piece.center);
  for (std::size_t y = 0; y < c; ++y) center_log[y] = piece.center_exponent * sc[y];
  std::vector<double> terms(c);
  for (std::size_t k = 0; k < d; ++k) {
    const auto sl = scores.row(piece.leaves[k]);
    const double el = piece.leaf_exponents[k];
    const double w = piece.pair_exponents[k] * pp.alpha(piece.edge_ids[k]);
    for (std::size_t yc = 0; yc < c; ++yc) {
      const auto krow = compat.row(yc);
      for (std::size_t y = 0; y < c; ++y) terms[y] = el * sl[y] + w * krow[y];
      msg(k, yc) = log_sum_exp(terms);
      center_log[yc] += msg(k, yc);
    }
  }
}

}  // namespace detail

inline double piece_log_partition(const StarPiece& piece, const DenseMatrix& scores,
                                  const DenseMatrix& compat, const PairwiseParams& pp) {
  DenseMatrix msg;
  std::vector<double> center_log;
  detail::star_messages(piece, scores, compat, pp, msg, center_log);
  return log_sum_exp(center_log);
}

/// log Z̄ of the redistributed piece distribution.
inline double piece_log_partition(const StarPiece& piece, const DenseMatrix& scores,
                                  const PairwiseParams& pp) {
  return piece_log_partition(piece, scores, pp.compat(), pp);
}

struct PieceMarginals {
  double log_partition = 0.0;
  std::vector<double> center;        // c
  DenseMatrix leaves;                // d x c
  std::vector<DenseMatrix> pairwise; // d matrices c x c, indexed [y_center][y_leaf]
};

/// Sum-product on the star: exact unary and pairwise marginals of the piece
/// distribution.
inline PieceMarginals piece_marginals(const StarPiece& piece, const DenseMatrix& scores,
                                      const PairwiseParams& pp) {
  const DenseMatrix compat = pp.compat();
  const std::size_t c = scores.cols();
  const std::size_t d = piece.leaves.size();
  DenseMatrix msg;
  std::vector<double> center_log;
  detail::star_messages(piece, scores, compat, pp, msg, center_log);

  PieceMarginals out;
  out.log_partition = log_sum_exp(center_log);
  out.center.resize(c);
  for (std::size_t y = 0; y < c; ++y) out.center[y] = std::exp(center_log[y] - out.log_partition);
  out.leaves = DenseMatrix(d, c);
  out.pairwise.assign(d, DenseMatrix(c, c));
  for (std::size_t k = 0; k < d; ++k) {
    const auto sl = scores.row(piece.leaves[k]);
    const double el = piece.leaf_exponents[k];
    const double w = piece.pair_exponents[k] * pp.alpha(piece.edge_ids[k]);
    for (std::size_t yc = 0; yc < c; ++yc) {
      for (std::size_t y = 0; y < c; ++y) {
        const double joint =
            out.center[yc] * std::exp(el * sl[y] + w * compat(yc, y) - msg(k, yc));
        out.pairwise[k](yc, y) = joint;
        out.leaves(k, y) += joint;
      }
    }
  }
  return out;
}

/// Redistributed log-factor sum of one piece at a full assignment.
inline double piece_log_factor(const StarPiece& piece, const DenseMatrix& scores,
                               const PairwiseParams& pp, std::span<const Label> assignment) {
  const auto& m = pp.raw();
  const Label yc = assignment[piece.center];
  double total = piece.center_exponent * scores(piece.center, yc);
  for (std::size_t k = 0; k < piece.leaves.size(); ++k) {
    const Label yl = assignment[piece.leaves[k]];
    total += piece.leaf_exponents[k] * scores(piece.leaves[k], yl);
    total += piece.pair_exponents[k] * pp.alpha(piece.edge_ids[k]) * 0.5 * (m(yc, yl) + m(yl, yc));
  }
  return total;
}

/// Σ_i s_i(y_i) + Σ_(j,k) α_jk K(y_j, y_k): the unnormalized global log score.
inline double global_log_score(const Graph& g, const DenseMatrix& scores, const PairwiseParams& pp,
                               std::span<const Label> assignment) {
  double total = 0.0;
  for (NodeId i = 0; i < g.num_nodes(); ++i) total += scores(i, assignment[i]);
  for (EdgeId e = 0; e < g.num_edges(); ++e) {
    const auto [j, k] = g.edge(e);
    total += pairwise_log_factor(pp, e, assignment[j], assignment[k]);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Redistributed piecewise objective

namespace detail {

inline void check_targets(const DenseMatrix& r, const DenseMatrix& scores, const PieceSet& pieces,
                          const PairwiseParams& pp) {
  require_same_shape(r, scores, "piecewise objective: targets vs scores");
  if (scores.rows() != pieces.size())
    throw ShapeError("piecewise objective: scores rows do not match node count");
  if (pp.num_classes() != scores.cols())
    throw ShapeError("piecewise objective: compatibility size does not match class count");
  if (pp.mode() == CoefficientMode::edge && pp.alpha_values().size() != pieces.graph().num_edges())
    throw ShapeError("piecewise objective: edge coefficients do not match edge count");
}

inline double expected_pair_term(std::span<const double> rj, std::span<const double> rk,
                                 const DenseMatrix& compat) {
  double acc = 0.0;
  for (std::size_t a = 0; a < rj.size(); ++a) {
    if (rj[a] == 0.0) continue;
    const auto krow = compat.row(a);
    for (std::size_t b = 0; b < rk.size(); ++b) acc += rj[a] * krow[b] * rk[b];
  }
  return acc;
}

inline double piece_log_partition_checked(const StarPiece& p, const DenseMatrix& scores,
                                          const DenseMatrix& compat, const PairwiseParams& pp) {
  const double z = piece_log_partition(p, scores, compat, pp);
  if (!std::isfinite(z)) {
    throw NumericalError("non-finite log partition in the piece centered at node " +
                         std::to_string(p.center) + " (degree " +
                         std::to_string(p.leaves.size()) + ")");
  }
  return z;
}

}  // namespace detail

/// E_r[ℓ̄_pw]: expected unary and pairwise log-factors under the per-node
/// distributions r, minus the piece log-partitions.
inline double expected_piecewise_objective(const DenseMatrix& r, const DenseMatrix& scores,
                                           const PairwiseParams& pp, const PieceSet& pieces) {
  detail::check_targets(r, scores, pieces, pp);
  const Graph& g = pieces.graph();
  const DenseMatrix compat = pp.compat();
  double value = 0.0;
  for (std::size_t i = 0; i < r.rows(); ++i) {
    const auto ri = r.row(i);
    const auto si = scores.row(i);
    for (std::size_t y = 0; y < ri.size(); ++y) value += ri[y] * si[y];
  }
  for (EdgeId e = 0; e < g.num_edges(); ++e) {
    const auto [j, k] = g.edge(e);
    value += pp.alpha(e) * detail::expected_pair_term(r.row(j), r.row(k), compat);
  }
  for (NodeId i = 0; i < pieces.size(); ++i)
    value -= detail::piece_log_partition_checked(pieces.piece(i), scores, compat, pp);
  return value;
}

/// ℓ̄_pw at a single full assignment.
inline double piecewise_log_likelihood(std::span<const Label> assignment, const DenseMatrix& scores,
                                       const PairwiseParams& pp, const PieceSet& pieces) {
  const DenseMatrix compat = pp.compat();
  double value = global_log_score(pieces.graph(), scores, pp, assignment);
  for (NodeId i = 0; i < pieces.size(); ++i)
    value -= piece_log_partition(pieces.piece(i), scores, compat, pp);
  return value;
}

struct ObjectiveGradient {
  double value = 0.0;
  DenseMatrix scores;         // ∂/∂s, num_nodes x c
  DenseMatrix raw;            // ∂/∂M for K = (M + Mᵀ)/2, symmetric
  std::vector<double> alpha;  // matches pp.alpha_values()
};

/// Value and gradients of expected_piecewise_objective.
///
///   ∂/∂s_i(y) = r_i(y) − Σ_{P ∋ i} e_{i,P} μ_{P,i}(y)
///   ∂/∂K(a,b) = Σ_e α_e r_j(a) r_k(b) − Σ_P Σ_{ℓ} p α μ_{P,cℓ}(a,b)
///   ∂/∂α_e    = r_jᵀ K r_k − Σ_{P ∋ e} p Σ_ab μ_{P,e}(a,b) K(a,b)
inline ObjectiveGradient objective_gradients(const DenseMatrix& r, const DenseMatrix& scores,
                                             const PairwiseParams& pp, const PieceSet& pieces) {
  detail::check_targets(r, scores, pieces, pp);
  const Graph& g = pieces.graph();
  const std::size_t c = scores.cols();
  const DenseMatrix compat = pp.compat();

  ObjectiveGradient out;
  out.scores = r;
  DenseMatrix d_compat(c, c);
  std::vector<double> d_alpha_edge(g.num_edges(), 0.0);

  for (std::size_t i = 0; i < r.rows(); ++i) {
    const auto ri = r.row(i);
    const auto si = scores.row(i);
    for (std::size_t y = 0; y < c; ++y) out.value += ri[y] * si[y];
  }
  for (EdgeId e = 0; e < g.num_edges(); ++e) {
    const auto [j, k] = g.edge(e);
    const auto rj = r.row(j);
    const auto rk = r.row(k);
    const double pair = detail::expected_pair_term(rj, rk, compat);
    const double a = pp.alpha(e);
    out.value += a * pair;
    d_alpha_edge[e] += pair;
    for (std::size_t y = 0; y < c; ++y) {
      if (rj[y] == 0.0) continue;
      auto dst = d_compat.row(y);
      for (std::size_t z = 0; z < c; ++z) dst[z] += a * rj[y] * rk[z];
    }
  }

  DenseMatrix msg;
  std::vector<double> center_log;
  std::vector<double> belief(c);
  for (NodeId i = 0; i < pieces.size(); ++i) {
    const StarPiece p = pieces.piece(i);
    detail::star_messages(p, scores, compat, pp, msg, center_log);
    const double log_z = log_sum_exp(center_log);
    if (!std::isfinite(log_z)) {
      throw NumericalError("non-finite log partition in the piece centered at node " +
                           std::to_string(i) + " (degree " + std::to_string(p.leaves.size()) +
                           ")");
    }
    out.value -= log_z;
    for (std::size_t y = 0; y < c; ++y) belief[y] = std::exp(center_log[y] - log_z);
    auto dsc = out.scores.row(i);
    for (std::size_t y = 0; y < c; ++y) dsc[y] -= p.center_exponent * belief[y];

    for (std::size_t k = 0; k < p.leaves.size(); ++k) {
      const NodeId leaf = p.leaves[k];
      const EdgeId e = p.edge_ids[k];
      const auto sl = scores.row(leaf);
      const double el = p.leaf_exponents[k];
      const double pe = p.pair_exponents[k];
      const double a = pp.alpha(e);
      auto dsl = out.scores.row(leaf);
      double expected_k = 0.0;
      for (std::size_t yc = 0; yc < c; ++yc) {
        const auto krow = compat.row(yc);
        auto dk = d_compat.row(yc);
        for (std::size_t y = 0; y < c; ++y) {
          const double joint = belief[yc] * std::exp(el * sl[y] + pe * a * krow[y] - msg(k, yc));
          dsl[y] -= el * joint;
          dk[y] -= pe * a * joint;
          expected_k += joint * krow[y];
        }
      }
      d_alpha_edge[e] -= pe * expected_k;
    }
  }

  out.raw = DenseMatrix(c, c);
  for (std::size_t a = 0; a < c; ++a)
    for (std::size_t b = 0; b < c; ++b) out.raw(a, b) = 0.5 * (d_compat(a, b) + d_compat(b, a));

  switch (pp.mode()) {
    case CoefficientMode::none: break;
    case CoefficientMode::layer: {
      double total = 0.0;
      for (double v : d_alpha_edge) total += v;
      out.alpha.assign(1, total);
      break;
    }
    case CoefficientMode::edge: out.alpha = std::move(d_alpha_edge); break;
  }
  return out;
}

}  // namespace epfgnn
