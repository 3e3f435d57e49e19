#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "epfgnn/dense_matrix.hpp"
#include "epfgnn/errors.hpp"

namespace epfgnn {

using NodeId = std::uint32_t;
using EdgeId = std::uint32_t;
using Label = std::uint32_t;

/// Undirected edge with first < second.
struct Edge {
  NodeId first = 0;
  NodeId second = 0;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

using RawEdge = std::pair<std::size_t, std::size_t>;

/// Immutable undirected simple graph in compressed sparse layout.
///
/// Neighbors of every node are sorted ascending; `incident_edges(i)[k]` is the
/// dense id of the edge between i and `neighbors(i)[k]`. Edge ids follow the
/// lexicographic order of (first, second).
class Graph {
 public:
  Graph() = default;

  std::size_t num_nodes() const noexcept { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  std::size_t num_edges() const noexcept { return edges_.size(); }
  std::span<const Edge> edges() const noexcept { return edges_; }
  const Edge& edge(EdgeId e) const noexcept { return edges_[e]; }

  std::span<const NodeId> neighbors(NodeId i) const noexcept {
    return {neighbors_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }
  std::span<const EdgeId> incident_edges(NodeId i) const noexcept {
    return {incident_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }
  std::size_t degree(NodeId i) const noexcept { return offsets_[i + 1] - offsets_[i]; }

  /// Start of node i's block in the flattened adjacency arrays.
  std::size_t adjacency_offset(NodeId i) const noexcept { return offsets_[i]; }
  std::size_t adjacency_size() const noexcept { return neighbors_.size(); }

  std::optional<EdgeId> edge_id(NodeId j, NodeId k) const noexcept {
    if (j == k || j >= num_nodes() || k >= num_nodes()) return std::nullopt;
    const auto nb = neighbors(j);
    const auto it = std::lower_bound(nb.begin(), nb.end(), k);
    if (it == nb.end() || *it != k) return std::nullopt;
    return incident_edges(j)[static_cast<std::size_t>(it - nb.begin())];
  }

  friend bool operator==(const Graph& a, const Graph& b) noexcept {
    return a.num_nodes() == b.num_nodes() && a.edges_ == b.edges_;
  }

  friend Graph build_graph(std::size_t num_nodes, std::span<const RawEdge> raw_edges);

 private:
  std::vector<Edge> edges_;
  std::vector<std::size_t> offsets_;
  std::vector<NodeId> neighbors_;
  std::vector<EdgeId> incident_;
};

/// Builds the simple undirected graph: self-loops dropped, both orientations
/// and duplicates merged.
inline Graph build_graph(std::size_t num_nodes, std::span<const RawEdge> raw_edges) {
  Graph g;
  g.edges_.reserve(raw_edges.size());
  for (const auto& [a, b] : raw_edges) {
    if (a >= num_nodes || b >= num_nodes) {
      throw StructuralInputError("build_graph: edge (" + std::to_string(a) + ", " +
                                 std::to_string(b) + ") has endpoint outside [0, " +
                                 std::to_string(num_nodes) + ")");
    }
    if (a == b) continue;
    g.edges_.push_back(
        {static_cast<NodeId>(std::min(a, b)), static_cast<NodeId>(std::max(a, b))});
  }
  std::sort(g.edges_.begin(), g.edges_.end());
  g.edges_.erase(std::unique(g.edges_.begin(), g.edges_.end()), g.edges_.end());

  std::vector<std::size_t> degree(num_nodes, 0);
  for (const auto& e : g.edges_) {
    ++degree[e.first];
    ++degree[e.second];
  }
  g.offsets_.assign(num_nodes + 1, 0);
  for (std::size_t i = 0; i < num_nodes; ++i) g.offsets_[i + 1] = g.offsets_[i] + degree[i];
  g.neighbors_.resize(g.offsets_[num_nodes]);
  g.incident_.resize(g.offsets_[num_nodes]);

  // Edges are sorted, so filling in edge order leaves neighbor lists sorted.
  std::vector<std::size_t> cursor(g.offsets_.begin(), g.offsets_.end() - 1);
  for (EdgeId id = 0; id < g.edges_.size(); ++id) {
    const auto [u, v] = g.edges_[id];
    g.neighbors_[cursor[u]] = v;
    g.incident_[cursor[u]++] = id;
    g.neighbors_[cursor[v]] = u;
    g.incident_[cursor[v]++] = id;
  }
  return g;
}

inline Graph build_graph(std::size_t num_nodes, const std::vector<RawEdge>& raw_edges) {
  return build_graph(num_nodes, std::span<const RawEdge>(raw_edges));
}

inline std::vector<RawEdge> edge_list(const Graph& g) {
  std::vector<RawEdge> out;
  out.reserve(g.num_edges());
  for (const auto& e : g.edges()) out.emplace_back(e.first, e.second);
  return out;
}

/// D̃^{-1/2}(A + I)D̃^{-1/2} as a dense matrix.
inline DenseMatrix normalized_adjacency(const Graph& g) {
  const std::size_t n = g.num_nodes();
  DenseMatrix out(n, n);
  std::vector<double> inv_sqrt(n);
  for (NodeId i = 0; i < n; ++i) inv_sqrt[i] = 1.0 / std::sqrt(static_cast<double>(g.degree(i) + 1));
  for (NodeId i = 0; i < n; ++i) {
    out(i, i) = inv_sqrt[i] * inv_sqrt[i];
    for (NodeId j : g.neighbors(i)) out(i, j) = inv_sqrt[i] * inv_sqrt[j];
  }
  return out;
}

/// Same operator as normalized_adjacency, stored as CSR rows with the
/// self-connection first.
class SparseAdjacency {
 public:
  explicit SparseAdjacency(const Graph& g) : n_(g.num_nodes()) {
    std::vector<double> inv_sqrt(n_);
    for (NodeId i = 0; i < n_; ++i)
      inv_sqrt[i] = 1.0 / std::sqrt(static_cast<double>(g.degree(i) + 1));
    offsets_.reserve(n_ + 1);
    offsets_.push_back(0);
    for (NodeId i = 0; i < n_; ++i) {
      cols_.push_back(i);
      weights_.push_back(inv_sqrt[i] * inv_sqrt[i]);
      for (NodeId j : g.neighbors(i)) {
        cols_.push_back(j);
        weights_.push_back(inv_sqrt[i] * inv_sqrt[j]);
      }
      offsets_.push_back(cols_.size());
    }
  }

  std::size_t rows() const noexcept { return n_; }
  std::size_t cols() const noexcept { return n_; }

  DenseMatrix apply(const DenseMatrix& m) const {
    if (m.rows() != n_) {
      throw ShapeError("propagate: adjacency " + std::to_string(n_) + "x" + std::to_string(n_) +
                       " * " + m.shape_string());
    }
    DenseMatrix out(n_, m.cols());
    for (std::size_t i = 0; i < n_; ++i) {
      auto dst = out.row(i);
      for (std::size_t p = offsets_[i]; p < offsets_[i + 1]; ++p) {
        const double w = weights_[p];
        const auto src = m.row(cols_[p]);
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += w * src[j];
      }
    }
    return out;
  }

  DenseMatrix to_dense() const {
    DenseMatrix out(n_, n_);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t p = offsets_[i]; p < offsets_[i + 1]; ++p) out(i, cols_[p]) = weights_[p];
    return out;
  }

 private:
  std::size_t n_ = 0;
  std::vector<std::size_t> offsets_;
  std::vector<NodeId> cols_;
  std::vector<double> weights_;
};

/// Fraction of same-label neighbors, averaged over nodes that have neighbors.
inline double homophily_beta(const Graph& g, std::span<const Label> labels) {
  if (labels.size() != g.num_nodes()) {
    throw StructuralInputError("homophily_beta: " + std::to_string(labels.size()) +
                               " labels for " + std::to_string(g.num_nodes()) + " nodes");
  }
  if (g.num_edges() == 0) throw DegenerateInputError("homophily_beta: graph has no edges");
  double total = 0.0;
  std::size_t counted = 0;
  for (NodeId i = 0; i < g.num_nodes(); ++i) {
    const auto nb = g.neighbors(i);
    if (nb.empty()) continue;
    std::size_t same = 0;
    for (NodeId j : nb) same += labels[j] == labels[i] ? 1 : 0;
    total += static_cast<double>(same) / static_cast<double>(nb.size());
    ++counted;
  }
  return total / static_cast<double>(counted);
}

}  // namespace epfgnn
