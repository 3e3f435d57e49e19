#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "epfgnn/errors.hpp"
#include "epfgnn/graph.hpp"

namespace epfgnn {

/// Which nodes are clamped to an observed label (the set L) and to what.
class ObservedLabels {
 public:
  ObservedLabels() = default;
  explicit ObservedLabels(std::size_t num_nodes) : label_(num_nodes, kUnlabeled) {}

  static ObservedLabels from(std::span<const Label> labels, std::span<const NodeId> labeled) {
    ObservedLabels obs(labels.size());
    for (NodeId i : labeled) {
      if (i >= labels.size()) throw StructuralInputError("labeled node id out of range");
      obs.set(i, labels[i]);
    }
    return obs;
  }

  std::size_t size() const noexcept { return label_.size(); }
  bool is_labeled(NodeId i) const noexcept { return label_[i] != kUnlabeled; }
  Label label(NodeId i) const noexcept { return static_cast<Label>(label_[i]); }
  void set(NodeId i, Label y) { label_[i] = static_cast<std::int64_t>(y); }
  void clear(NodeId i) { label_[i] = kUnlabeled; }

  std::vector<NodeId> unlabeled_nodes() const {
    std::vector<NodeId> out;
    for (NodeId i = 0; i < label_.size(); ++i)
      if (!is_labeled(i)) out.push_back(i);
    return out;
  }

  std::vector<NodeId> labeled_nodes() const {
    std::vector<NodeId> out;
    for (NodeId i = 0; i < label_.size(); ++i)
      if (is_labeled(i)) out.push_back(i);
    return out;
  }

 private:
  static constexpr std::int64_t kUnlabeled = -1;
  std::vector<std::int64_t> label_;
};

}  // namespace epfgnn
