#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "epfgnn/oracle.hpp"
#include "epfgnn/self_check.hpp"

using namespace epfgnn;

namespace {

struct Instance {
  Graph g;
  DenseMatrix s;
  PairwiseParams pp;
  ObservedLabels observed;
};

Instance random_instance(std::uint64_t seed, std::size_t n = 6, std::size_t c = 3) {
  RandomStream rng = derive_stream(seed, StreamPurpose::generic);
  Instance in;
  in.g = check::random_graph(n, 0.5, rng);
  in.s = check::random_matrix(n, c, -2, 2, rng);
  in.pp = check::random_pairwise(c, in.g.num_edges(), CoefficientMode::edge, rng);
  const auto y = check::random_assignment(n, c, rng);
  std::vector<NodeId> labeled;
  for (NodeId i = 0; i < n; ++i)
    if (rng.bernoulli(0.3)) labeled.push_back(i);
  in.observed = ObservedLabels::from(y, labeled);
  return in;
}

// Second, independent enumeration: decode assignments from an integer index
// and accumulate unnormalized weights in linear space with a fixed offset.
DenseMatrix marginals_by_index(const Instance& in) {
  const auto free = in.observed.unlabeled_nodes();
  const std::size_t c = in.s.cols();
  std::size_t total = 1;
  for (std::size_t k = 0; k < free.size(); ++k) total *= c;
  std::vector<double> logw(total);
  std::vector<std::vector<Label>> ys(total);
  const DenseMatrix k = in.pp.compat();
  for (std::size_t idx = 0; idx < total; ++idx) {
    std::vector<Label> y(in.g.num_nodes());
    for (NodeId i = 0; i < y.size(); ++i)
      if (in.observed.is_labeled(i)) y[i] = in.observed.label(i);
    std::size_t rest = idx;
    for (NodeId v : free) {
      y[v] = static_cast<Label>(rest % c);
      rest /= c;
    }
    double w = 0.0;
    for (NodeId i = 0; i < y.size(); ++i) w += in.s(i, y[i]);
    for (EdgeId e = 0; e < in.g.num_edges(); ++e)
      w += in.pp.alpha(e) * k(y[in.g.edge(e).first], y[in.g.edge(e).second]);
    logw[idx] = w;
    ys[idx] = std::move(y);
  }
  const double mx = *std::max_element(logw.begin(), logw.end());
  double z = 0.0;
  for (double w : logw) z += std::exp(w - mx);
  DenseMatrix out(free.size(), c);
  for (std::size_t idx = 0; idx < total; ++idx)
    for (std::size_t r = 0; r < free.size(); ++r)
      out(r, ys[idx][free[r]]) += std::exp(logw[idx] - mx) / z;
  return out;
}

DenseMatrix random_q(std::size_t rows, std::size_t c, RandomStream& rng) {
  DenseMatrix q(rows, c);
  for (std::size_t r = 0; r < rows; ++r) {
    double t = 0.0;
    for (double& v : q.row(r)) t += (v = rng.uniform(0.05, 1.0));
    for (double& v : q.row(r)) v /= t;
  }
  return q;
}

}  // namespace

TEST(ExactLogPartition, SingleNode) {
  const Graph g = build_graph(1, std::vector<RawEdge>{});
  EXPECT_NEAR(oracle::exact_log_partition(g, DenseMatrix(1, 2), PairwiseParams(2, 0, CoefficientMode::edge)),
              std::log(2.0), 1e-15);
}

TEST(ExactLogPartition, EdgelessFactorizes) {
  RandomStream rng(1);
  const Graph g = build_graph(5, std::vector<RawEdge>{});
  const DenseMatrix s = check::random_matrix(5, 3, -2, 2, rng);
  double expected = 0.0;
  for (NodeId i = 0; i < 5; ++i) expected += log_sum_exp(s.row(i));
  EXPECT_NEAR(oracle::exact_log_partition(g, s, PairwiseParams(3, 0, CoefficientMode::edge)), expected,
              1e-12);
}

TEST(ExactLogPartition, TwoNodeIdentityCompat) {
  const Graph g = build_graph(2, {{0, 1}});
  PairwiseParams pp(2, 1, CoefficientMode::edge);
  pp.set_compat(DenseMatrix::identity(2));
  EXPECT_NEAR(oracle::exact_log_partition(g, DenseMatrix(2, 2), pp), std::log(2 * std::exp(1.0) + 2),
              1e-14);
}

TEST(ExactLogPartition, RefusesAboveLimit) {
  const Graph g = build_graph(21, std::vector<RawEdge>{});
  EXPECT_THROW(oracle::exact_log_partition(g, DenseMatrix(21, 2), PairwiseParams(2, 0, CoefficientMode::edge)),
               OracleLimitError);
  EXPECT_NO_THROW(oracle::configuration_count(2, 20, {}));
  EXPECT_THROW(oracle::configuration_count(3, 50, {}), OracleLimitError);
}

TEST(PosteriorMarginals, ZeroCompatIsSoftmax) {
  Instance in = random_instance(2);
  in.pp = PairwiseParams(3, in.g.num_edges(), CoefficientMode::edge);
  const auto pm = oracle::exact_posterior_marginals(in.g, in.s, in.pp, in.observed);
  for (std::size_t r = 0; r < pm.nodes.size(); ++r) {
    std::vector<double> p(in.s.row(pm.nodes[r]).begin(), in.s.row(pm.nodes[r]).end());
    softmax_inplace(p);
    for (std::size_t y = 0; y < 3; ++y) EXPECT_NEAR(pm.marginals(r, y), p[y], 1e-12);
  }
}

TEST(PosteriorMarginals, FullyLabeledIsEmpty) {
  Instance in = random_instance(3, 4);
  const std::vector<Label> y{0, 1, 2, 0};
  in.observed = ObservedLabels::from(y, std::vector<NodeId>{0, 1, 2, 3});
  const auto pm = oracle::exact_posterior_marginals(in.g, in.s, in.pp, in.observed);
  EXPECT_TRUE(pm.nodes.empty());
  EXPECT_EQ(pm.marginals.rows(), 0u);
}

TEST(PosteriorMarginals, MatchIndependentEnumeration) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Instance in = random_instance(seed + 10);
    const auto pm = oracle::exact_posterior_marginals(in.g, in.s, in.pp, in.observed);
    const DenseMatrix ref = marginals_by_index(in);
    for (std::size_t r = 0; r < pm.nodes.size(); ++r) {
      const auto row = pm.marginals.row(r);
      EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-12);
    }
    for (std::size_t i = 0; i < ref.size(); ++i)
      EXPECT_NEAR(pm.marginals.values()[i], ref.values()[i], 1e-12);
  }
}

TEST(PosteriorMarginals, InvariantToScoreShifts) {
  Instance in = random_instance(4);
  const auto before = oracle::exact_posterior_marginals(in.g, in.s, in.pp, in.observed);
  RandomStream rng(4);
  for (std::size_t i = 0; i < in.s.rows(); ++i) {
    const double shift = rng.uniform(-10, 10);
    for (double& v : in.s.row(i)) v += shift;
  }
  const auto after = oracle::exact_posterior_marginals(in.g, in.s, in.pp, in.observed);
  for (std::size_t i = 0; i < before.marginals.size(); ++i)
    EXPECT_NEAR(before.marginals.values()[i], after.marginals.values()[i], 1e-12);
}

TEST(ObservedLl, AllLabeledEdgelessIsSoftmaxSum) {
  RandomStream rng(5);
  const Graph g = build_graph(4, std::vector<RawEdge>{});
  const DenseMatrix s = check::random_matrix(4, 3, -2, 2, rng);
  const std::vector<Label> y{2, 0, 1, 1};
  const auto obs = ObservedLabels::from(y, std::vector<NodeId>{0, 1, 2, 3});
  double expected = 0.0;
  for (NodeId i = 0; i < 4; ++i) expected += s(i, y[i]) - log_sum_exp(s.row(i));
  EXPECT_NEAR(oracle::exact_observed_ll(g, s, PairwiseParams(3, 0, CoefficientMode::edge), obs), expected,
              1e-12);
}

TEST(ObservedLl, NothingLabeledIsZero) {
  Instance in = random_instance(6);
  in.observed = ObservedLabels(in.g.num_nodes());
  EXPECT_NEAR(oracle::exact_observed_ll(in.g, in.s, in.pp, in.observed), 0.0, 1e-12);
}

TEST(Elbo, BoundsAndKlIdentity) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Instance in = random_instance(seed + 40);
    const std::size_t u = in.observed.unlabeled_nodes().size();
    const double ll = oracle::exact_observed_ll(in.g, in.s, in.pp, in.observed);
    RandomStream rng(seed);
    for (int t = 0; t < 100; ++t) {
      const DenseMatrix q = random_q(u, 3, rng);
      const double elbo = oracle::exact_elbo(in.g, in.s, in.pp, in.observed, q);
      EXPECT_LE(elbo, ll + 1e-12);
      if (t < 10) {
        const double kl = oracle::exact_kl_to_posterior(in.g, in.s, in.pp, in.observed, q);
        EXPECT_GE(kl, 0.0);
        EXPECT_NEAR(ll - elbo, kl, 1e-10);
      }
    }
  }
}

TEST(Elbo, FactorizedPosteriorAttainsEvidence) {
  // Without edges the posterior factorizes, so its marginals give KL = 0.
  RandomStream rng(9);
  const Graph g = build_graph(5, std::vector<RawEdge>{});
  const DenseMatrix s = check::random_matrix(5, 3, -2, 2, rng);
  const PairwiseParams pp(3, 0, CoefficientMode::edge);
  const std::vector<Label> y{0, 1, 2, 0, 1};
  const auto obs = ObservedLabels::from(y, std::vector<NodeId>{1, 3});
  const auto pm = oracle::exact_posterior_marginals(g, s, pp, obs);
  EXPECT_NEAR(oracle::exact_elbo(g, s, pp, obs, pm.marginals), oracle::exact_observed_ll(g, s, pp, obs),
              1e-10);
}

TEST(Elbo, PointMassAtModeIsBelowEvidence) {
  const Instance in = random_instance(50);
  const auto free = in.observed.unlabeled_nodes();
  const auto pm = oracle::exact_posterior_marginals(in.g, in.s, in.pp, in.observed);
  // Posterior mode by enumeration.
  std::vector<Label> y(in.g.num_nodes(), 0), best;
  for (NodeId i = 0; i < y.size(); ++i)
    if (in.observed.is_labeled(i)) y[i] = in.observed.label(i);
  double best_score = -1e300;
  oracle::for_each_assignment(y, free, 3, [&](const std::vector<Label>& a) {
    const double v = global_log_score(in.g, in.s, in.pp, a);
    if (v > best_score) {
      best_score = v;
      best = a;
    }
  });
  DenseMatrix q(free.size(), 3);
  for (std::size_t r = 0; r < free.size(); ++r) q(r, best[free[r]]) = 1.0;
  EXPECT_LE(oracle::exact_elbo(in.g, in.s, in.pp, in.observed, q),
            oracle::exact_observed_ll(in.g, in.s, in.pp, in.observed) + 1e-12);
  EXPECT_EQ(pm.nodes.size(), free.size());
}

TEST(PieceEnumeration, StarGraphPartitionEqualsPieceEnumeration) {
  RandomStream rng(13);
  const Graph g = build_graph(4, {{0, 1}, {0, 2}, {0, 3}});
  const DenseMatrix s = check::random_matrix(4, 3, -2, 2, rng);
  const PairwiseParams pp = check::random_pairwise(3, 3, CoefficientMode::edge, rng);
  Redistribution r = make_redistribution(g, RedistributionScheme::center);
  std::fill(r.leaf.begin(), r.leaf.end(), 1.0);
  std::fill(r.pairwise.begin(), r.pairwise.end(), 1.0);
  const PieceSet ps(g, r);
  EXPECT_NEAR(oracle::enumerate_piece_log_partition(ps.piece(0), s, pp),
              oracle::exact_log_partition(g, s, pp), 1e-12);
}

TEST(ElboAscent, MeanFieldUpdatesNeverDecreaseElbo) {
  check::Options opt;
  opt.seed = 400;
  const auto res = check::elbo_ascent(opt);
  EXPECT_TRUE(res.ascent.passed) << "worst decrease " << res.ascent.worst;
  EXPECT_TRUE(res.kl_identity.passed) << "worst " << res.kl_identity.worst;
}
