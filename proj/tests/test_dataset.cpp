#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <vector>

#include "epfgnn/dataset.hpp"
#include "test_support.hpp"

using namespace epfgnn;
using testing_support::read_file;
using testing_support::scratch_dir;
using testing_support::write_file;

namespace {

Dataset toy_citation(const std::filesystem::path& dir, LoadStats* stats = nullptr) {
  write_file(dir / "toy.content",
             "# id features class\n"
             "p10\t1\t0\t1\tTheory\n"
             "p20\t0\t1\t0\tNeural\n"
             "p30\t1\t1\t0\tTheory\n"
             "p40\t0\t0\t0\tRules\n");
  write_file(dir / "toy.cites",
             "p10\tp20\n"
             "p20\tp10\n"
             "p30\tp20\n"
             "p30\tp30\n"
             "p99\tp10\n");
  return load_citation(dir / "toy.content", dir / "toy.cites", stats);
}

std::size_t count_if_label(const Dataset& ds, const std::vector<NodeId>& ids, Label c) {
  return static_cast<std::size_t>(
      std::count_if(ids.begin(), ids.end(), [&](NodeId i) { return ds.labels[i] == c; }));
}

void expect_disjoint(const Split& s) {
  std::set<NodeId> seen;
  for (const auto* part : {&s.train, &s.validation, &s.test})
    for (NodeId i : *part) EXPECT_TRUE(seen.insert(i).second) << "node " << i << " reused";
}

}  // namespace

TEST(LoadCitation, MinimalPair) {
  const auto dir = scratch_dir();
  write_file(dir / "a.content", "a\t1\tX\nb\t0\tY\n");
  write_file(dir / "a.cites", "a\tb\n");
  const Dataset ds = load_citation(dir / "a.content", dir / "a.cites");
  EXPECT_EQ(ds.num_nodes(), 2u);
  EXPECT_EQ(ds.graph.num_edges(), 1u);
}

TEST(LoadCitation, ClassIdsByFirstAppearanceAndStats) {
  const auto dir = scratch_dir();
  LoadStats stats;
  const Dataset ds = toy_citation(dir, &stats);
  EXPECT_EQ(ds.num_classes, 3u);
  EXPECT_EQ(ds.class_names, (std::vector<std::string>{"Theory", "Neural", "Rules"}));
  EXPECT_EQ(ds.labels, (std::vector<Label>{0, 1, 0, 2}));
  EXPECT_EQ(ds.features.cols(), 3u);
  EXPECT_EQ(ds.graph.num_edges(), 2u);  // (p10,p20) twice, self-cite dropped
  EXPECT_EQ(stats.link_rows, 5u);
  EXPECT_EQ(stats.skipped_links, 1u);
}

TEST(LoadCitation, MalformedRowReportsLine) {
  const auto dir = scratch_dir();
  write_file(dir / "a.content", "a\t1\tX\nb\tzz\tY\n");
  write_file(dir / "a.cites", "");
  try {
    load_citation(dir / "a.content", dir / "a.cites");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(LoadCitation, InconsistentWidthIsStructural) {
  const auto dir = scratch_dir();
  write_file(dir / "a.content", "a\t1\t0\tX\nb\t0\tY\n");
  write_file(dir / "a.cites", "");
  EXPECT_THROW(load_citation(dir / "a.content", dir / "a.cites"), StructuralInputError);
}

TEST(GenericFormat, CitationRoundTrip) {
  const auto dir = scratch_dir();
  const Dataset ds = toy_citation(dir / "src");
  const Split split{{0}, {1}, {2, 3}};
  write_generic(ds, dir / "generic", &split);
  std::optional<Split> back_split;
  const Dataset back = load_generic(dir / "generic", &back_split);
  EXPECT_EQ(back, ds);
  ASSERT_TRUE(back_split.has_value());
  EXPECT_EQ(*back_split, split);
}

TEST(GenericFormat, AutodetectsBothFormats) {
  const auto dir = scratch_dir();
  const Dataset ds = toy_citation(dir / "cit");
  write_generic(ds, dir / "gen");
  EXPECT_EQ(load_dataset(dir / "cit"), ds);
  EXPECT_EQ(load_dataset(dir / "gen"), ds);
  EXPECT_THROW(load_dataset(dir / "missing"), ConfigError);
}

TEST(GenericFormat, CommentsIgnoredAndBadRoleRejected) {
  const auto dir = scratch_dir();
  write_file(dir / "features.tsv", "# header\n1\t0\n0\t1\n");
  write_file(dir / "labels.tsv", "0\n1\n");
  write_file(dir / "edges.tsv", "# u v\n0\t1\n");
  write_file(dir / "split.tsv", "0\ttrain\n1\tholdout\n");
  std::optional<Split> s;
  EXPECT_THROW(load_generic(dir, &s), ParseError);
  write_file(dir / "split.tsv", "0\ttrain\n1\ttest\n");
  const Dataset ds = load_generic(dir, &s);
  EXPECT_EQ(ds.num_classes, 2u);
  EXPECT_EQ(s->test, std::vector<NodeId>{1});
}

TEST(PlanetoidSplit, SizesAndPerClassCounts) {
  SyntheticSpec spec;
  spec.num_nodes = 2000;
  spec.num_classes = 6;
  spec.seed = 4;
  const Dataset ds = generate_synthetic(spec);
  const Split s = planetoid_split(ds, 20, 500, 1000, 7);
  EXPECT_EQ(s.train.size(), 120u);
  EXPECT_EQ(s.validation.size(), 500u);
  EXPECT_EQ(s.test.size(), 1000u);
  for (Label c = 0; c < 6; ++c) EXPECT_EQ(count_if_label(ds, s.train, c), 20u);
  expect_disjoint(s);
  EXPECT_EQ(planetoid_split(ds, 20, 500, 1000, 7), s);
  EXPECT_NE(planetoid_split(ds, 20, 500, 1000, 8), s);
}

TEST(PlanetoidSplit, SevenClassTrainSize) {
  SyntheticSpec spec;
  spec.num_nodes = 2708;
  spec.num_classes = 7;
  const Split s = planetoid_split(generate_synthetic(spec));
  EXPECT_EQ(s.train.size(), 140u);
}

TEST(PlanetoidSplit, InsufficientMembersIsConfigError) {
  SyntheticSpec spec;
  spec.num_nodes = 50;
  spec.num_classes = 5;
  const Dataset ds = generate_synthetic(spec);
  EXPECT_THROW(planetoid_split(ds, 20, 0, 0), ConfigError);
  EXPECT_THROW(planetoid_split(ds, 2, 40, 10), ConfigError);
}

TEST(RatioSplit, ExactFractions) {
  SyntheticSpec spec;
  spec.num_nodes = 100;
  const Dataset ds = generate_synthetic(spec);
  const Split s = ratio_split(ds, 0.2, 0.2, 0.6, 3);
  EXPECT_EQ(s.train.size(), 20u);
  EXPECT_EQ(s.validation.size(), 20u);
  EXPECT_EQ(s.test.size(), 60u);
  expect_disjoint(s);
  EXPECT_EQ(ratio_split(ds, 0.2, 0.2, 0.6, 3), s);
}

TEST(RatioSplit, FloorRoundingRemainderToTest) {
  SyntheticSpec spec;
  spec.num_nodes = 5201;
  spec.feature_dim = 5;
  const Dataset ds = generate_synthetic(spec);
  const Split s = ratio_split(ds, 0.2, 0.2, 0.6, 1);
  EXPECT_EQ(s.train.size(), 1040u);
  EXPECT_EQ(s.validation.size(), 1040u);
  EXPECT_EQ(s.test.size(), 3121u);
}

TEST(RatioSplit, OverfullFractionsRejected) {
  SyntheticSpec spec;
  spec.num_nodes = 20;
  const Dataset ds = generate_synthetic(spec);
  EXPECT_THROW(ratio_split(ds, 0.5, 0.3, 0.3), ConfigError);
}

TEST(Synthetic, PerfectHomophily) {
  SyntheticSpec spec;
  spec.num_nodes = 300;
  spec.num_classes = 2;
  spec.homophily_target = 1.0;
  EXPECT_DOUBLE_EQ(homophily_beta(generate_synthetic(spec).graph, generate_synthetic(spec).labels),
                   1.0);
}

TEST(Synthetic, ZeroHomophily) {
  SyntheticSpec spec;
  spec.num_nodes = 300;
  spec.num_classes = 2;
  spec.homophily_target = 0.0;
  const Dataset ds = generate_synthetic(spec);
  EXPECT_DOUBLE_EQ(homophily_beta(ds.graph, ds.labels), 0.0);
}

TEST(Synthetic, MeasuredHomophilyNearTarget) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SyntheticSpec spec;
    spec.num_nodes = 2000;
    spec.homophily_target = 0.25;
    spec.seed = seed;
    const Dataset ds = generate_synthetic(spec);
    EXPECT_NEAR(homophily_beta(ds.graph, ds.labels), 0.25, 0.05) << "seed " << seed;
  }
}

TEST(Synthetic, DeterministicFiles) {
  const auto dir = scratch_dir();
  SyntheticSpec spec;
  spec.num_nodes = 200;
  spec.seed = 12;
  write_generic(generate_synthetic(spec), dir / "a");
  write_generic(generate_synthetic(spec), dir / "b");
  for (const char* f : {"edges.tsv", "features.tsv", "labels.tsv"})
    EXPECT_EQ(read_file(dir / "a" / f), read_file(dir / "b" / f)) << f;
}

TEST(Synthetic, ImpossibleRequestIsConfigError) {
  SyntheticSpec spec;
  spec.num_nodes = 1;
  spec.num_classes = 1;
  spec.homophily_target = 1.0;
  EXPECT_THROW(generate_synthetic(spec), ConfigError);
}

TEST(RowNormalize, Examples) {
  Dataset ds;
  ds.graph = build_graph(3, std::vector<RawEdge>{});
  ds.features = DenseMatrix::from_rows({{1, 1, 0, 2}, {0, 0, 0, 0}, {1, 1, 1, 1}});
  ds.labels = {0, 0, 0};
  ds.num_classes = 1;
  const Dataset out = row_normalize_features(ds);
  EXPECT_EQ(out.features, DenseMatrix::from_rows({{0.25, 0.25, 0, 0.5},
                                                  {0, 0, 0, 0},
                                                  {0.25, 0.25, 0.25, 0.25}}));
}
