#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "epfgnn/gcn.hpp"
#include "epfgnn/self_check.hpp"

using namespace epfgnn;

namespace {

struct Instance {
  Graph g;
  DenseMatrix x;
  GcnParams p;
};

Instance random_instance(std::uint64_t seed, std::size_t n = 6, std::size_t f = 4,
                         std::size_t h = 5, std::size_t c = 3) {
  RandomStream rng = derive_stream(seed, StreamPurpose::generic);
  Instance in;
  in.g = check::random_graph(n, 0.4, rng);
  in.x = check::random_matrix(n, f, -1, 1, rng);
  in.p.w0 = check::random_matrix(f, h, -1, 1, rng);
  in.p.w1 = check::random_matrix(h, c, -1, 1, rng);
  return in;
}

// Layer-by-layer reference built from the dense normalized adjacency.
DenseMatrix reference_forward(const Instance& in) {
  const DenseMatrix a = normalized_adjacency(in.g);
  const std::size_t n = in.x.rows();
  DenseMatrix xw(n, in.p.w0.cols());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < xw.cols(); ++j)
      for (std::size_t k = 0; k < in.x.cols(); ++k) xw(i, j) += in.x(i, k) * in.p.w0(k, j);
  DenseMatrix h(n, xw.cols());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < h.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += a(i, k) * xw(k, j);
      h(i, j) = std::max(acc, 0.0);
    }
  DenseMatrix hw(n, in.p.w1.cols());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < hw.cols(); ++j)
      for (std::size_t k = 0; k < h.cols(); ++k) hw(i, j) += h(i, k) * in.p.w1(k, j);
  DenseMatrix s(n, hw.cols());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < s.cols(); ++j)
      for (std::size_t k = 0; k < n; ++k) s(i, j) += a(i, k) * hw(k, j);
  return s;
}

double fd_relative_error(const std::vector<double>& analytic, std::span<double> theta,
                         const std::function<double()>& f, double h = 1e-5) {
  std::vector<double> fd(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double keep = theta[i];
    theta[i] = keep + h;
    const double up = f();
    theta[i] = keep - h;
    const double down = f();
    theta[i] = keep;
    fd[i] = (up - down) / (2 * h);
  }
  return check::relative_error(analytic, fd);
}

bool near_kink(const GcnCache& cache) {
  for (double v : cache.pre_hidden.values())
    if (v != 0.0 && std::abs(v) < 1e-3) return true;
  return false;
}

}  // namespace

TEST(InitParams, GlorotRangeAndDeterminism) {
  const GcnParams p = init_params(4, 4, 4, 3);
  const double limit = std::sqrt(0.75);
  for (double v : p.w0.values()) EXPECT_LE(std::abs(v), limit);
  EXPECT_EQ(p, init_params(4, 4, 4, 3));
  EXPECT_NE(p, init_params(4, 4, 4, 4));
}

TEST(InitParams, EmpiricalMeanNearZero) {
  const GcnParams p = init_params(100, 100, 2, 1);
  const auto v = p.w0.values();
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  const double limit = std::sqrt(6.0 / 200.0);
  const double std_err = limit / std::sqrt(3.0) / std::sqrt(static_cast<double>(v.size()));
  EXPECT_LT(std::abs(mean), 3 * std_err);
}

TEST(UnaryLogFactors, ZeroWeightsGiveZeroScores) {
  Instance in = random_instance(1);
  in.p.w0.fill(0.0);
  in.p.w1.fill(0.0);
  const DenseMatrix s = unary_log_factors(in.p, in.x, SparseAdjacency(in.g));
  for (double v : s.values()) EXPECT_EQ(v, 0.0);
}

TEST(UnaryLogFactors, SingleIsolatedNode) {
  const Graph g = build_graph(1, std::vector<RawEdge>{});
  GcnParams p{DenseMatrix::from_rows({{1.0}}), DenseMatrix::from_rows({{2.0, 0.0}})};
  const DenseMatrix s = unary_log_factors(p, DenseMatrix::from_rows({{1.0}}), SparseAdjacency(g));
  EXPECT_EQ(s, DenseMatrix::from_rows({{2.0, 0.0}}));
}

TEST(UnaryLogFactors, MatchesLayerByLayerReference) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Instance in = random_instance(seed);
    const DenseMatrix ref = reference_forward(in);
    const DenseMatrix sparse = unary_log_factors(in.p, in.x, SparseAdjacency(in.g));
    const DenseMatrix dense = unary_log_factors(in.p, in.x, normalized_adjacency(in.g));
    for (std::size_t i = 0; i < ref.size(); ++i) {
      EXPECT_NEAR(sparse.values()[i], ref.values()[i], 1e-13);
      EXPECT_NEAR(dense.values()[i], ref.values()[i], 1e-13);
    }
  }
}

TEST(UnaryLogFactors, ShapeMismatchThrows) {
  const Instance in = random_instance(2);
  GcnParams bad = in.p;
  bad.w0 = DenseMatrix(in.x.cols() + 1, in.p.w0.cols());
  EXPECT_THROW(unary_log_factors(bad, in.x, SparseAdjacency(in.g)), ShapeError);
}

TEST(UnaryLogFactors, PermutationEquivariant) {
  const Instance in = random_instance(3, 7);
  const std::vector<NodeId> perm{3, 0, 6, 2, 5, 1, 4};  // old i -> new perm[i]
  std::vector<RawEdge> edges;
  for (const auto& e : in.g.edges()) edges.emplace_back(perm[e.first], perm[e.second]);
  const Graph pg = build_graph(7, edges);
  DenseMatrix px(7, in.x.cols());
  for (NodeId i = 0; i < 7; ++i)
    std::copy(in.x.row(i).begin(), in.x.row(i).end(), px.row(perm[i]).begin());
  const DenseMatrix s = unary_log_factors(in.p, in.x, SparseAdjacency(in.g));
  const DenseMatrix ps = unary_log_factors(in.p, px, SparseAdjacency(pg));
  for (NodeId i = 0; i < 7; ++i)
    for (std::size_t y = 0; y < s.cols(); ++y) EXPECT_NEAR(ps(perm[i], y), s(i, y), 1e-13);
}

TEST(UnaryLogFactors, EdgelessGraphIsPerNodeMlp) {
  Instance in = random_instance(4);
  in.g = build_graph(6, std::vector<RawEdge>{});
  const DenseMatrix s = unary_log_factors(in.p, in.x, SparseAdjacency(in.g));
  DenseMatrix x2 = in.x;
  for (double& v : x2.row(3)) v += 0.5;
  const DenseMatrix s2 = unary_log_factors(in.p, x2, SparseAdjacency(in.g));
  for (NodeId i = 0; i < 6; ++i) {
    if (i == 3) continue;
    for (std::size_t y = 0; y < s.cols(); ++y) EXPECT_EQ(s(i, y), s2(i, y));
  }
}

TEST(UnaryLogFactors, TrainingDropoutIsReproducible) {
  const Instance in = random_instance(5);
  RandomStream a(99), b(99);
  const SparseAdjacency adj(in.g);
  const DenseMatrix sa = unary_log_factors(in.p, in.x, adj, Dropout::training(0.5, a));
  const DenseMatrix sb = unary_log_factors(in.p, in.x, adj, Dropout::training(0.5, b));
  EXPECT_EQ(sa, sb);
  EXPECT_NE(sa, unary_log_factors(in.p, in.x, adj));
  RandomStream* none = nullptr;
  EXPECT_THROW(unary_log_factors(in.p, in.x, adj, Dropout{true, 0.5, none}), ConfigError);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  const Instance in = random_instance(6);
  const SparseAdjacency adj(in.g);
  GcnCache cache;
  unary_log_factors(in.p, in.x, adj, Dropout::eval(), &cache);
  const GcnGrads g = backward(in.p, in.x, adj, cache, DenseMatrix(6, 3));
  for (double v : g.w0.values()) EXPECT_EQ(v, 0.0);
  for (double v : g.w1.values()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, SingleNodeW1IsHiddenOuterProduct) {
  const Graph g = build_graph(1, std::vector<RawEdge>{});
  GcnParams p{DenseMatrix::from_rows({{1.0, -1.0, 0.5}}), DenseMatrix(3, 2, 0.3)};
  const DenseMatrix x = DenseMatrix::from_rows({{2.0}});
  const SparseAdjacency adj(g);
  GcnCache cache;
  unary_log_factors(p, x, adj, Dropout::eval(), &cache);
  const DenseMatrix up = DenseMatrix::from_rows({{1.5, -0.5}});
  const GcnGrads gr = backward(p, x, adj, cache, up);
  const double hidden[3] = {2.0, 0.0, 1.0};
  for (int k = 0; k < 3; ++k)
    for (int y = 0; y < 2; ++y) EXPECT_DOUBLE_EQ(gr.w1(k, y), hidden[k] * up(0, y));
}

TEST(Backward, StaleCacheRejected) {
  Instance in = random_instance(7);
  const SparseAdjacency adj(in.g);
  GcnCache cache;
  EXPECT_THROW(backward(in.p, in.x, adj, cache, DenseMatrix(6, 3)), StaleCacheError);
  unary_log_factors(in.p, in.x, adj, Dropout::eval(), &cache);
  in.p.w1(0, 0) += 1.0;
  EXPECT_THROW(backward(in.p, in.x, adj, cache, DenseMatrix(6, 3)), StaleCacheError);
}

TEST(Backward, MatchesFiniteDifferences) {
  int checked = 0;
  for (std::uint64_t seed = 10; checked < 10 && seed < 100; ++seed) {
    Instance in = random_instance(seed);
    const SparseAdjacency adj(in.g);
    RandomStream rng(seed);
    const DenseMatrix up = check::random_matrix(6, 3, -1, 1, rng);
    const std::uint64_t key = rng.next_u64();
    auto f = [&] {
      RandomStream s(key);
      const DenseMatrix out = unary_log_factors(in.p, in.x, adj, Dropout::training(0.8, s));
      double acc = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) acc += out.values()[i] * up.values()[i];
      return acc;
    };
    GcnCache cache;
    RandomStream s(key);
    unary_log_factors(in.p, in.x, adj, Dropout::training(0.8, s), &cache);
    if (near_kink(cache)) continue;
    const GcnGrads g = backward(in.p, in.x, adj, cache, up);
    const std::vector<double> g0(g.w0.values().begin(), g.w0.values().end());
    const std::vector<double> g1(g.w1.values().begin(), g.w1.values().end());
    EXPECT_LE(fd_relative_error(g0, in.p.w0.values(), f), 1e-6);
    EXPECT_LE(fd_relative_error(g1, in.p.w1.values(), f), 1e-6);
    ++checked;
  }
  EXPECT_EQ(checked, 10);
}

TEST(SupervisedLoss, ZeroWeightsGiveLogC) {
  Instance in = random_instance(8, 6, 4, 5, 4);
  in.p.w0.fill(0.0);
  in.p.w1.fill(0.0);
  const std::vector<Label> labels{0, 1, 2, 3, 0, 1};
  const std::vector<NodeId> train{0, 2, 5};
  const auto lg = supervised_loss_and_grad(in.p, in.x, SparseAdjacency(in.g), labels, train);
  EXPECT_NEAR(lg.loss, std::log(4.0), 1e-15);
}

TEST(SupervisedLoss, VanishesWithGrowingMargin) {
  const Graph g = build_graph(1, std::vector<RawEdge>{});
  const DenseMatrix x = DenseMatrix::from_rows({{1.0}});
  const std::vector<Label> labels{0};
  const std::vector<NodeId> train{0};
  double previous = 1e300;
  for (double margin : {1.0, 5.0, 20.0, 50.0}) {
    GcnParams p{DenseMatrix::from_rows({{1.0}}), DenseMatrix::from_rows({{margin, 0.0}})};
    const double loss = supervised_loss_and_grad(p, x, SparseAdjacency(g), labels, train).loss;
    EXPECT_LT(loss, previous);
    previous = loss;
  }
  EXPECT_LT(previous, 1e-20);
}

TEST(SupervisedLoss, GradientMatchesFiniteDifferences) {
  int checked = 0;
  for (std::uint64_t seed = 30; checked < 5 && seed < 100; ++seed) {
    Instance in = random_instance(seed);
    const SparseAdjacency adj(in.g);
    const std::vector<Label> labels{0, 1, 2, 0, 1, 2};
    const std::vector<NodeId> train{1, 3, 4};
    GcnCache cache;
    unary_log_factors(in.p, in.x, adj, Dropout::eval(), &cache);
    if (near_kink(cache)) continue;
    const auto lg = supervised_loss_and_grad(in.p, in.x, adj, labels, train);
    auto f = [&] { return supervised_loss_and_grad(in.p, in.x, adj, labels, train).loss; };
    const std::vector<double> g0(lg.grads.w0.values().begin(), lg.grads.w0.values().end());
    const std::vector<double> g1(lg.grads.w1.values().begin(), lg.grads.w1.values().end());
    EXPECT_LE(fd_relative_error(g0, in.p.w0.values(), f), 1e-6);
    EXPECT_LE(fd_relative_error(g1, in.p.w1.values(), f), 1e-6);
    ++checked;
  }
  EXPECT_EQ(checked, 5);
}
