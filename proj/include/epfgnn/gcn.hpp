#pragma once

#include <bit>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "epfgnn/dense_matrix.hpp"
#include "epfgnn/errors.hpp"
#include "epfgnn/graph.hpp"
#include "epfgnn/numerics.hpp"
#include "epfgnn/rng.hpp"

namespace epfgnn {

inline DenseMatrix propagate(const DenseMatrix& adj, const DenseMatrix& m) { return matmul(adj, m); }
inline DenseMatrix propagate(const SparseAdjacency& adj, const DenseMatrix& m) { return adj.apply(m); }

/// Anything usable as the normalized adjacency Â in a GCN layer.
template <class A>
concept Propagator = requires(const A& adj, const DenseMatrix& m) {
  { propagate(adj, m) } -> std::same_as<DenseMatrix>;
  { adj.rows() } -> std::convertible_to<std::size_t>;
};

/// Two-layer GCN weights, no biases.
struct GcnParams {
  DenseMatrix w0;  // num_features x hidden
  DenseMatrix w1;  // hidden x num_classes

  std::size_t num_features() const noexcept { return w0.rows(); }
  std::size_t hidden() const noexcept { return w0.cols(); }
  std::size_t num_classes() const noexcept { return w1.cols(); }

  friend bool operator==(const GcnParams&, const GcnParams&) = default;
};

struct GcnGrads {
  DenseMatrix w0;
  DenseMatrix w1;
};

inline DenseMatrix glorot_uniform(std::size_t fan_in, std::size_t fan_out, RandomStream& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  DenseMatrix m(fan_in, fan_out);
  for (double& x : m.values()) x = rng.uniform(-limit, limit);
  return m;
}

inline GcnParams init_params(std::size_t num_features, std::size_t hidden, std::size_t num_classes,
                             std::uint64_t seed) {
  RandomStream rng = derive_stream(seed, StreamPurpose::init);
  GcnParams p;
  p.w0 = glorot_uniform(num_features, hidden, rng);
  p.w1 = glorot_uniform(hidden, num_classes, rng);
  return p;
}

namespace detail {

inline std::uint64_t fingerprint(std::span<const double> v, std::uint64_t h) noexcept {
  for (double x : v) h = (h ^ std::bit_cast<std::uint64_t>(x)) * 0x100000001B3ULL;
  return h;
}

inline std::uint64_t fingerprint(const GcnParams& p, const DenseMatrix& x) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL ^ (x.rows() * 31 + x.cols());
  h = fingerprint(p.w0.values(), h);
  return fingerprint(p.w1.values(), h);
}

}  // namespace detail

/// Activations kept from a forward pass so backward can replay it exactly,
/// dropout masks included.
struct GcnCache {
  DenseMatrix input;        // features after input dropout
  DenseMatrix pre_hidden;   // Â · input · W0
  DenseMatrix hidden_mask;  // dropout mask on relu(pre_hidden); ones in eval mode
  DenseMatrix hidden;       // relu(pre_hidden) ⊙ hidden_mask
  std::uint64_t params_fingerprint = 0;
  bool valid = false;
};

struct Dropout {
  bool train = false;
  double keep_prob = 1.0;
  RandomStream* stream = nullptr;  // required when train is set and keep_prob < 1

  static Dropout eval() noexcept { return {}; }
  static Dropout training(double keep, RandomStream& s) noexcept { return {true, keep, &s}; }
};

/// Unary log-factors s = Â · relu(Â · drop(X) · W0) ⊙ drop · W1, one row per
/// node, unnormalized.
template <Propagator A>
DenseMatrix unary_log_factors(const GcnParams& params, const DenseMatrix& features, const A& adj,
                              Dropout dropout = Dropout::eval(), GcnCache* cache = nullptr) {
  if (features.cols() != params.w0.rows() || params.w0.cols() != params.w1.rows() ||
      adj.rows() != features.rows()) {
    throw ShapeError("unary_log_factors: features " + features.shape_string() + ", W0 " +
                     params.w0.shape_string() + ", W1 " + params.w1.shape_string() +
                     ", adjacency rows " + std::to_string(adj.rows()));
  }
  const bool drop = dropout.train && dropout.keep_prob < 1.0;
  if (drop && dropout.stream == nullptr) throw ConfigError("training dropout needs a stream");

  DenseMatrix input = features;
  if (drop) {
    const double scale = 1.0 / dropout.keep_prob;
    for (double& v : input.values()) {
      // One draw per entry, zero or not.
      const bool keep = dropout.stream->uniform() < dropout.keep_prob;
      v = keep ? v * scale : 0.0;
    }
  }
  DenseMatrix pre_hidden = propagate(adj, matmul(input, params.w0));
  DenseMatrix hidden = pre_hidden;
  for (double& v : hidden.values()) v = v < 0.0 ? 0.0 : v;  // NaN passes through
  DenseMatrix mask = drop ? dropout_mask(hidden.rows(), hidden.cols(), dropout.keep_prob,
                                         *dropout.stream)
                          : DenseMatrix(hidden.rows(), hidden.cols(), 1.0);
  if (drop) hidden = hadamard(hidden, mask);
  DenseMatrix scores = propagate(adj, matmul(hidden, params.w1));

  if (cache) {
    cache->input = std::move(input);
    cache->pre_hidden = std::move(pre_hidden);
    cache->hidden_mask = std::move(mask);
    cache->hidden = std::move(hidden);
    cache->params_fingerprint = detail::fingerprint(params, features);
    cache->valid = true;
  }
  return scores;
}

/// Gradients of <grad_scores, s(W0, W1)> for the pass recorded in `cache`.
template <Propagator A>
GcnGrads backward(const GcnParams& params, const DenseMatrix& features, const A& adj,
                  const GcnCache& cache, const DenseMatrix& grad_scores) {
  if (!cache.valid || cache.params_fingerprint != detail::fingerprint(params, features)) {
    throw StaleCacheError("gcn backward: cache was produced for different parameters or inputs");
  }
  if (grad_scores.rows() != features.rows() || grad_scores.cols() != params.num_classes()) {
    throw ShapeError("gcn backward: grad_scores " + grad_scores.shape_string());
  }
  GcnGrads g;
  // Â is symmetric, so Âᵀ · G = Â · G.
  const DenseMatrix d_hw = propagate(adj, grad_scores);
  g.w1 = matmul_at_b(cache.hidden, d_hw);
  DenseMatrix d_pre = matmul_a_bt(d_hw, params.w1);
  {
    auto d = d_pre.values();
    const auto mask = cache.hidden_mask.values();
    const auto pre = cache.pre_hidden.values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = pre[i] > 0.0 ? d[i] * mask[i] : 0.0;
  }
  const DenseMatrix d_xw = propagate(adj, d_pre);
  g.w0 = matmul_at_b(cache.input, d_xw);
  return g;
}

struct LossAndGrads {
  double loss = 0.0;
  GcnGrads grads;
};

/// Mean cross-entropy of softmax(scores) over `train_ids`, with gradients.
template <Propagator A>
LossAndGrads supervised_loss_and_grad(const GcnParams& params, const DenseMatrix& features,
                                      const A& adj, std::span<const Label> labels,
                                      std::span<const NodeId> train_ids,
                                      Dropout dropout = Dropout::eval()) {
  if (train_ids.empty()) throw ConfigError("supervised loss: empty training set");
  GcnCache cache;
  const DenseMatrix scores = unary_log_factors(params, features, adj, dropout, &cache);
  DenseMatrix grad(scores.rows(), scores.cols());
  const double w = 1.0 / static_cast<double>(train_ids.size());
  double loss = 0.0;
  std::vector<double> p(scores.cols());
  for (NodeId i : train_ids) {
    const auto row = scores.row(i);
    loss -= w * (row[labels[i]] - log_sum_exp(row));
    std::copy(row.begin(), row.end(), p.begin());
    softmax_inplace(p);
    auto gi = grad.row(i);
    for (std::size_t y = 0; y < p.size(); ++y) gi[y] = w * p[y];
    gi[labels[i]] -= w;
  }
  return {loss, backward(params, features, adj, cache, grad)};
}

}  // namespace epfgnn
