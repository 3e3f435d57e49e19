#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "epfgnn/dense_matrix.hpp"
#include "epfgnn/errors.hpp"
#include "epfgnn/graph.hpp"
#include "epfgnn/rng.hpp"

namespace epfgnn {

struct Dataset {
  Graph graph;
  DenseMatrix features;
  std::vector<Label> labels;
  std::size_t num_classes = 0;
  std::vector<std::string> node_names;   // optional; empty or one per node
  std::vector<std::string> class_names;  // optional; empty or one per class

  std::size_t num_nodes() const noexcept { return graph.num_nodes(); }

  void validate() const {
    if (features.rows() != graph.num_nodes()) {
      throw StructuralInputError("dataset: " + std::to_string(features.rows()) +
                                 " feature rows for " + std::to_string(graph.num_nodes()) +
                                 " nodes");
    }
    if (labels.size() != graph.num_nodes()) {
      throw StructuralInputError("dataset: " + std::to_string(labels.size()) + " labels for " +
                                 std::to_string(graph.num_nodes()) + " nodes");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] >= num_classes) {
        throw StructuralInputError("dataset: node " + std::to_string(i) + " has label " +
                                   std::to_string(labels[i]) + " >= num_classes " +
                                   std::to_string(num_classes));
      }
    }
    if (!node_names.empty() && node_names.size() != graph.num_nodes())
      throw StructuralInputError("dataset: node name count does not match node count");
    if (!class_names.empty() && class_names.size() != num_classes)
      throw StructuralInputError("dataset: class name count does not match class count");
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Labeled (train), validation and test node sets. Nodes outside all three
/// are unlabeled-only.
struct Split {
  std::vector<NodeId> train;
  std::vector<NodeId> validation;
  std::vector<NodeId> test;

  friend bool operator==(const Split&, const Split&) = default;
};

struct LoadStats {
  std::size_t link_rows = 0;      // citation rows read, before dedup
  std::size_t skipped_links = 0;  // rows naming an id absent from the content file
};

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == '\t' || line[i] == ' ' || line[i] == '\r')) ++i;
    if (i >= line.size()) break;
    std::size_t j = i;
    while (j < line.size() && line[j] != '\t' && line[j] != ' ' && line[j] != '\r') ++j;
    out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline bool skip_line(std::string_view line) {
  const auto first = line.find_first_not_of(" \t\r");
  return first == std::string_view::npos || line[first] == '#';
}

template <class Fn>
void for_each_row(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), 0, "cannot open file");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (skip_line(line)) continue;
    fn(split_fields(line), lineno);
  }
}

inline double parse_real(std::string_view s, const std::filesystem::path& path, std::size_t line) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ParseError(path.string(), line, "invalid real '" + std::string(s) + "'");
  }
  return v;
}

inline std::uint64_t parse_index(std::string_view s, const std::filesystem::path& path,
                                 std::size_t line) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ParseError(path.string(), line, "invalid non-negative integer '" + std::string(s) + "'");
  }
  return v;
}

inline std::string format_real(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace detail

/// Reads the two-file citation format: `<content>` rows are
/// `id  f_1 ... f_k  class`, `<cites>` rows are `cited  citing`.
inline Dataset load_citation(const std::filesystem::path& content_file,
                             const std::filesystem::path& cites_file,
                             LoadStats* stats = nullptr) {
  Dataset ds;
  std::unordered_map<std::string, NodeId> id_of;
  std::unordered_map<std::string, Label> class_of;
  std::vector<std::vector<double>> rows;
  std::size_t width = 0;

  detail::for_each_row(content_file, [&](const std::vector<std::string_view>& f, std::size_t ln) {
    if (f.size() < 2) throw ParseError(content_file.string(), ln, "expected id and class");
    const std::size_t k = f.size() - 2;
    if (rows.empty()) {
      width = k;
    } else if (k != width) {
      throw StructuralInputError(content_file.string() + ":" + std::to_string(ln) + ": " +
                                 std::to_string(k) + " features, expected " +
                                 std::to_string(width));
    }
    std::string name(f.front());
    if (id_of.count(name)) throw ParseError(content_file.string(), ln, "duplicate id " + name);
    id_of.emplace(name, static_cast<NodeId>(rows.size()));
    std::vector<double> row(k);
    for (std::size_t j = 0; j < k; ++j) row[j] = detail::parse_real(f[j + 1], content_file, ln);
    std::string cls(f.back());
    auto it = class_of.find(cls);
    if (it == class_of.end()) {
      it = class_of.emplace(cls, static_cast<Label>(ds.class_names.size())).first;
      ds.class_names.push_back(cls);
    }
    ds.labels.push_back(it->second);
    ds.node_names.push_back(std::move(name));
    rows.push_back(std::move(row));
  });

  ds.num_classes = ds.class_names.size();
  ds.features = DenseMatrix(rows.size(), width);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(rows[i].begin(), rows[i].end(), ds.features.row(i).begin());

  LoadStats local;
  std::vector<RawEdge> raw;
  detail::for_each_row(cites_file, [&](const std::vector<std::string_view>& f, std::size_t ln) {
    if (f.size() != 2) throw ParseError(cites_file.string(), ln, "expected two ids");
    ++local.link_rows;
    const auto a = id_of.find(std::string(f[0]));
    const auto b = id_of.find(std::string(f[1]));
    if (a == id_of.end() || b == id_of.end()) {
      ++local.skipped_links;
      return;
    }
    raw.emplace_back(a->second, b->second);
  });
  ds.graph = build_graph(rows.size(), raw);
  if (stats) *stats = local;
  ds.validate();
  return ds;
}

inline Split load_split_file(const std::filesystem::path& path, std::size_t num_nodes) {
  Split s;
  std::vector<bool> seen(num_nodes, false);
  detail::for_each_row(path, [&](const std::vector<std::string_view>& f, std::size_t ln) {
    if (f.size() != 2) throw ParseError(path.string(), ln, "expected node_id and role");
    const auto id = detail::parse_index(f[0], path, ln);
    if (id >= num_nodes) throw ParseError(path.string(), ln, "node id out of range");
    if (seen[id]) throw ParseError(path.string(), ln, "node listed twice");
    seen[id] = true;
    const auto node = static_cast<NodeId>(id);
    if (f[1] == "train") s.train.push_back(node);
    else if (f[1] == "val") s.validation.push_back(node);
    else if (f[1] == "test") s.test.push_back(node);
    else throw ParseError(path.string(), ln, "role must be train, val or test");
  });
  return s;
}

/// Reads the generic directory format (edges.tsv, features.tsv, labels.tsv,
/// optional split.tsv, nodes.tsv, classes.tsv).
inline Dataset load_generic(const std::filesystem::path& dir, std::optional<Split>* split = nullptr) {
  namespace fs = std::filesystem;
  Dataset ds;
  std::vector<std::vector<double>> rows;
  const auto fpath = dir / "features.tsv";
  detail::for_each_row(fpath, [&](const std::vector<std::string_view>& f, std::size_t ln) {
    if (!rows.empty() && f.size() != rows.front().size()) {
      throw StructuralInputError(fpath.string() + ":" + std::to_string(ln) + ": " +
                                 std::to_string(f.size()) + " features, expected " +
                                 std::to_string(rows.front().size()));
    }
    std::vector<double> row(f.size());
    for (std::size_t j = 0; j < f.size(); ++j) row[j] = detail::parse_real(f[j], fpath, ln);
    rows.push_back(std::move(row));
  });
  const std::size_t n = rows.size();
  ds.features = DenseMatrix(n, n == 0 ? 0 : rows.front().size());
  for (std::size_t i = 0; i < n; ++i)
    std::copy(rows[i].begin(), rows[i].end(), ds.features.row(i).begin());

  const auto lpath = dir / "labels.tsv";
  detail::for_each_row(lpath, [&](const std::vector<std::string_view>& f, std::size_t ln) {
    if (f.size() != 1) throw ParseError(lpath.string(), ln, "expected one label per row");
    ds.labels.push_back(static_cast<Label>(detail::parse_index(f[0], lpath, ln)));
  });
  if (ds.labels.size() != n) {
    throw StructuralInputError(lpath.string() + ": " + std::to_string(ds.labels.size()) +
                               " labels for " + std::to_string(n) + " feature rows");
  }

  std::vector<RawEdge> raw;
  const auto epath = dir / "edges.tsv";
  detail::for_each_row(epath, [&](const std::vector<std::string_view>& f, std::size_t ln) {
    if (f.size() != 2) throw ParseError(epath.string(), ln, "expected two node ids");
    raw.emplace_back(detail::parse_index(f[0], epath, ln), detail::parse_index(f[1], epath, ln));
  });
  ds.graph = build_graph(n, raw);

  if (fs::exists(dir / "nodes.tsv")) {
    detail::for_each_row(dir / "nodes.tsv", [&](const auto& f, std::size_t) {
      ds.node_names.emplace_back(f.front());
    });
  }
  if (fs::exists(dir / "classes.tsv")) {
    detail::for_each_row(dir / "classes.tsv", [&](const auto& f, std::size_t) {
      ds.class_names.emplace_back(f.front());
    });
    ds.num_classes = ds.class_names.size();
  } else {
    ds.num_classes = ds.labels.empty()
                         ? 0
                         : static_cast<std::size_t>(
                               *std::max_element(ds.labels.begin(), ds.labels.end())) + 1;
  }
  ds.validate();
  if (split) {
    if (fs::exists(dir / "split.tsv")) *split = load_split_file(dir / "split.tsv", n);
    else split->reset();
  }
  return ds;
}

inline void write_generic(const Dataset& ds, const std::filesystem::path& dir,
                          const Split* split = nullptr) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    return out;
  };
  {
    auto out = open("edges.tsv");
    for (const auto& e : ds.graph.edges()) out << e.first << '\t' << e.second << '\n';
  }
  {
    auto out = open("features.tsv");
    for (std::size_t i = 0; i < ds.features.rows(); ++i) {
      const auto row = ds.features.row(i);
      for (std::size_t j = 0; j < row.size(); ++j)
        out << (j ? "\t" : "") << detail::format_real(row[j]);
      out << '\n';
    }
  }
  {
    auto out = open("labels.tsv");
    for (Label y : ds.labels) out << y << '\n';
  }
  if (!ds.node_names.empty()) {
    auto out = open("nodes.tsv");
    for (const auto& s : ds.node_names) out << s << '\n';
  }
  if (!ds.class_names.empty()) {
    auto out = open("classes.tsv");
    for (const auto& s : ds.class_names) out << s << '\n';
  }
  if (split) {
    auto out = open("split.tsv");
    for (NodeId i : split->train) out << i << "\ttrain\n";
    for (NodeId i : split->validation) out << i << "\tval\n";
    for (NodeId i : split->test) out << i << "\ttest\n";
  }
}

/// Loads a dataset directory in either format. A directory holding exactly one
/// `*.content` / `*.cites` pair is read as citation data, otherwise as generic.
inline Dataset load_dataset(const std::filesystem::path& dir, LoadStats* stats = nullptr,
                            std::optional<Split>* split = nullptr) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw ConfigError("dataset path is not a directory: " + dir.string());
  std::optional<fs::path> content, cites;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".content") content = entry.path();
    if (entry.path().extension() == ".cites") cites = entry.path();
  }
  if (content && cites) {
    if (split) split->reset();
    return load_citation(*content, *cites, stats);
  }
  Dataset ds = load_generic(dir, split);
  if (stats) *stats = LoadStats{ds.graph.num_edges(), 0};
  return ds;
}

/// Per-class labeled sample plus validation and test drawn from the rest.
inline Split planetoid_split(const Dataset& ds, std::size_t per_class = 20,
                             std::size_t num_val = 500, std::size_t num_test = 1000,
                             std::uint64_t seed = 0) {
  RandomStream rng = derive_stream(seed, StreamPurpose::split, 1);
  std::vector<std::vector<NodeId>> members(ds.num_classes);
  for (NodeId i = 0; i < ds.labels.size(); ++i) members[ds.labels[i]].push_back(i);
  Split s;
  std::vector<bool> taken(ds.labels.size(), false);
  for (std::size_t c = 0; c < ds.num_classes; ++c) {
    if (members[c].size() < per_class) {
      throw ConfigError("planetoid_split: class " + std::to_string(c) + " has " +
                        std::to_string(members[c].size()) + " members, need " +
                        std::to_string(per_class));
    }
    rng.shuffle(members[c]);
    for (std::size_t k = 0; k < per_class; ++k) {
      s.train.push_back(members[c][k]);
      taken[members[c][k]] = true;
    }
  }
  std::vector<NodeId> pool;
  for (NodeId i = 0; i < taken.size(); ++i)
    if (!taken[i]) pool.push_back(i);
  if (pool.size() < num_val + num_test) {
    throw ConfigError("planetoid_split: " + std::to_string(pool.size()) +
                      " remaining nodes cannot supply " + std::to_string(num_val) + " + " +
                      std::to_string(num_test));
  }
  rng.shuffle(pool);
  s.validation.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(num_val));
  s.test.assign(pool.begin() + static_cast<std::ptrdiff_t>(num_val),
                pool.begin() + static_cast<std::ptrdiff_t>(num_val + num_test));
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.validation.begin(), s.validation.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

/// Uniform (unstratified) split by fractions. Sizes are floored; when the
/// fractions sum to one the remainder goes to test.
inline Split ratio_split(const Dataset& ds, double train_frac, double val_frac, double test_frac,
                         std::uint64_t seed = 0) {
  if (!(train_frac > 0 && val_frac > 0 && test_frac > 0)) {
    throw ConfigError("ratio_split: fractions must be positive");
  }
  const double total = train_frac + val_frac + test_frac;
  if (total > 1.0 + 1e-9) throw ConfigError("ratio_split: fractions sum to more than 1");
  const std::size_t n = ds.num_nodes();
  auto count = [n](double f) { return static_cast<std::size_t>(std::floor(f * n + 1e-9)); };
  const std::size_t n_train = count(train_frac);
  const std::size_t n_val = count(val_frac);
  const std::size_t n_test = std::abs(total - 1.0) <= 1e-9 ? n - n_train - n_val : count(test_frac);

  std::vector<NodeId> order(n);
  std::iota(order.begin(), order.end(), NodeId{0});
  RandomStream rng = derive_stream(seed, StreamPurpose::split, 2);
  rng.shuffle(order);
  Split s;
  auto take = [&](std::vector<NodeId>& dst, std::size_t from, std::size_t count) {
    dst.assign(order.begin() + static_cast<std::ptrdiff_t>(from),
               order.begin() + static_cast<std::ptrdiff_t>(from + count));
    std::sort(dst.begin(), dst.end());
  };
  take(s.train, 0, n_train);
  take(s.validation, n_train, n_val);
  take(s.test, n_train + n_val, n_test);
  return s;
}

struct SyntheticSpec {
  std::size_t num_nodes = 1000;
  std::size_t num_classes = 5;
  std::size_t edges_per_node = 5;
  double homophily_target = 0.25;
  std::size_t feature_dim = 50;
  double feature_noise = 0.2;
  std::uint64_t seed = 0;
};

/// Random graph with planted label homophily and noisy one-hot features.
///
/// Feature coordinate j is tied to class j mod c; a node's clean feature row
/// has ones on its class's coordinates. Each coordinate is then flipped with
/// probability feature_noise.
inline Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (!(spec.homophily_target >= 0.0 && spec.homophily_target <= 1.0))
    throw ConfigError("generate_synthetic: homophily_target must lie in [0, 1]");
  if (!(spec.feature_noise >= 0.0 && spec.feature_noise <= 1.0))
    throw ConfigError("generate_synthetic: feature_noise must lie in [0, 1]");
  if (spec.num_classes == 0 || spec.num_nodes == 0 || spec.feature_dim == 0)
    throw ConfigError("generate_synthetic: nodes, classes and feature_dim must be positive");

  const std::size_t n = spec.num_nodes;
  const std::size_t c = spec.num_classes;
  RandomStream rng = derive_stream(spec.seed, StreamPurpose::synthetic);
  Dataset ds;
  ds.num_classes = c;
  ds.labels.resize(n);
  std::vector<std::vector<NodeId>> members(c);
  for (NodeId i = 0; i < n; ++i) {
    ds.labels[i] = static_cast<Label>(rng.below(c));
    members[ds.labels[i]].push_back(i);
  }

  constexpr int kMaxAttempts = 64;
  std::vector<RawEdge> raw;
  raw.reserve(n * spec.edges_per_node);
  for (NodeId i = 0; i < n; ++i) {
    const Label own = ds.labels[i];
    for (std::size_t k = 0; k < spec.edges_per_node; ++k) {
      bool placed = false;
      for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
        Label target = own;
        if (!rng.bernoulli(spec.homophily_target)) {
          if (c == 1) break;
          target = static_cast<Label>(rng.below(c - 1));
          if (target >= own) ++target;
        }
        const auto& pool = members[target];
        if (pool.empty() || (target == own && pool.size() < 2)) continue;
        NodeId partner = pool[rng.below(pool.size())];
        if (partner == i) continue;
        raw.emplace_back(i, partner);
        placed = true;
      }
      if (!placed) {
        throw ConfigError("generate_synthetic: cannot find a partner for node " +
                          std::to_string(i) + " (class sizes too small for the request)");
      }
    }
  }
  ds.graph = build_graph(n, raw);

  ds.features = DenseMatrix(n, spec.feature_dim);
  for (NodeId i = 0; i < n; ++i) {
    auto row = ds.features.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) {
      const bool clean = j % c == ds.labels[i];
      const bool flip = rng.bernoulli(spec.feature_noise);
      row[j] = (clean != flip) ? 1.0 : 0.0;
    }
  }
  ds.validate();
  return ds;
}

inline Dataset row_normalize_features(Dataset ds) {
  for (std::size_t i = 0; i < ds.features.rows(); ++i) {
    auto row = ds.features.row(i);
    double sum = 0.0;
    for (double v : row) sum += v;
    if (sum == 0.0) continue;
    for (double& v : row) v /= sum;
  }
  return ds;
}

}  // namespace epfgnn
