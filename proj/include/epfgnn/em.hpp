#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "epfgnn/dataset.hpp"
#include "epfgnn/dense_matrix.hpp"
#include "epfgnn/errors.hpp"
#include "epfgnn/gcn.hpp"
#include "epfgnn/graph.hpp"
#include "epfgnn/mrf.hpp"
#include "epfgnn/numerics.hpp"
#include "epfgnn/observed.hpp"
#include "epfgnn/report.hpp"
#include "epfgnn/rng.hpp"

namespace epfgnn {

// ---------------------------------------------------------------------------
// Mean-field proposal over the unlabeled nodes

/// Fully factorized q over U. Labeled nodes have no row; they act as point
/// masses wherever a per-node distribution is needed.
class Proposal {
 public:
  Proposal() = default;

  /// Rows initialized to softmax of the node's scores.
  static Proposal from_scores(const DenseMatrix& scores, const ObservedLabels& observed) {
    Proposal p(observed, scores.cols());
    for (std::size_t r = 0; r < p.nodes_.size(); ++r) {
      const auto src = scores.row(p.nodes_[r]);
      auto dst = p.q_.row(r);
      std::copy(src.begin(), src.end(), dst.begin());
      softmax_inplace(dst);
    }
    return p;
  }

  static Proposal uniform(const ObservedLabels& observed, std::size_t num_classes) {
    Proposal p(observed, num_classes);
    p.q_.fill(1.0 / static_cast<double>(num_classes));
    return p;
  }

  std::span<const NodeId> nodes() const noexcept { return nodes_; }
  const DenseMatrix& table() const noexcept { return q_; }
  DenseMatrix& table() noexcept { return q_; }
  std::size_t num_classes() const noexcept { return q_.cols(); }

  bool has_row(NodeId i) const noexcept { return row_of_[i] >= 0; }
  std::span<double> row(NodeId i) noexcept { return q_.row(static_cast<std::size_t>(row_of_[i])); }
  std::span<const double> row(NodeId i) const noexcept {
    return q_.row(static_cast<std::size_t>(row_of_[i]));
  }

  friend bool operator==(const Proposal&, const Proposal&) = default;

 private:
  Proposal(const ObservedLabels& observed, std::size_t num_classes)
      : nodes_(observed.unlabeled_nodes()),
        q_(nodes_.size(), num_classes),
        row_of_(observed.size(), -1) {
    for (std::size_t r = 0; r < nodes_.size(); ++r) row_of_[nodes_[r]] = static_cast<std::int64_t>(r);
  }

  std::vector<NodeId> nodes_;
  DenseMatrix q_;
  std::vector<std::int64_t> row_of_;
};

/// Per-node distributions r: q_i on U, a point mass on the observed label on L.
inline DenseMatrix node_distributions(const Proposal& q, const ObservedLabels& observed) {
  DenseMatrix r(observed.size(), q.num_classes());
  for (NodeId i = 0; i < observed.size(); ++i) {
    if (observed.is_labeled(i)) {
      r(i, observed.label(i)) = 1.0;
    } else {
      const auto src = q.row(i);
      std::copy(src.begin(), src.end(), r.row(i).begin());
    }
  }
  return r;
}

/// Closed-form coordinate update of q_i against the original (unsplit) MRF:
///   log q_i(y) = s_i(y) + Σ_{j ∈ N(i)} α_ij Σ_y' K(y, y') r_j(y')
/// Returns the total-variation distance between the old and new row.
inline double mean_field_site_update(Proposal& q, NodeId i, const DenseMatrix& scores,
                                     const DenseMatrix& compat, const PairwiseParams& pp,
                                     const ObservedLabels& observed, const Graph& g) {
  const std::size_t c = scores.cols();
  std::vector<double> logits(scores.row(i).begin(), scores.row(i).end());
  const auto nb = g.neighbors(i);
  const auto eid = g.incident_edges(i);
  for (std::size_t k = 0; k < nb.size(); ++k) {
    const double a = pp.alpha(eid[k]);
    if (a == 0.0) continue;
    const NodeId j = nb[k];
    if (observed.is_labeled(j)) {
      const Label yj = observed.label(j);
      for (std::size_t y = 0; y < c; ++y) logits[y] += a * compat(y, yj);
    } else {
      const auto qj = q.row(j);
      for (std::size_t y = 0; y < c; ++y) {
        const auto krow = compat.row(y);
        double m = 0.0;
        for (std::size_t z = 0; z < c; ++z) m += krow[z] * qj[z];
        logits[y] += a * m;
      }
    }
  }
  softmax_inplace(logits);
  auto qi = q.row(i);
  double tv = 0.0;
  for (std::size_t y = 0; y < c; ++y) {
    tv += std::abs(logits[y] - qi[y]);
    qi[y] = logits[y];
  }
  return 0.5 * tv;
}

struct EStepResult {
  Proposal proposal;
  std::vector<double> max_change;  // per executed sweep
};

/// Sequential mean-field sweeps over U in ascending node order until the
/// largest per-node total-variation change falls below `tolerance`.
inline EStepResult e_step(Proposal q, const DenseMatrix& scores, const PairwiseParams& pp,
                          const ObservedLabels& observed, const Graph& g, std::size_t sweeps,
                          double tolerance) {
  const DenseMatrix compat = pp.compat();
  EStepResult out;
  for (std::size_t s = 0; s < sweeps; ++s) {
    double worst = 0.0;
    for (NodeId i : q.nodes())
      worst = std::max(worst, mean_field_site_update(q, i, scores, compat, pp, observed, g));
    out.max_change.push_back(worst);
    if (worst < tolerance) break;
  }
  out.proposal = std::move(q);
  return out;
}

// ---------------------------------------------------------------------------
// Configuration

struct TrainConfig {
  std::size_t warm_start_epochs = 200;
  std::size_t em_rounds = 5;
  std::size_t e_sweeps = 10;
  double e_tolerance = 1e-4;
  std::size_t m_epochs = 50;
  std::size_t predict_sweeps = 50;

  std::size_t hidden = 16;
  double keep_prob = 0.5;
  double step_size = 0.01;
  double weight_decay = 5e-4;  // W0 only
  double pairwise_step_size = 0.01;

  RedistributionScheme redistribution = RedistributionScheme::average;
  CoefficientMode coefficient = CoefficientMode::edge;
  double alpha_init = 1.0;
  bool freeze_pairwise = false;

  /// Warm start stops once validation loss exceeds the mean of the previous
  /// `patience` epochs; 0 disables the check.
  std::size_t patience = 10;
  std::uint64_t seed = 0;

  void validate() const {
    if (warm_start_epochs == 0) throw ConfigError("warm_start_epochs must be positive");
    if (e_sweeps == 0) throw ConfigError("e_sweeps must be positive");
    if (m_epochs == 0) throw ConfigError("m_epochs must be positive");
    if (predict_sweeps == 0) throw ConfigError("predict_sweeps must be positive");
    if (hidden == 0) throw ConfigError("hidden must be positive");
    if (!(e_tolerance > 0)) throw ConfigError("e_tolerance must be positive");
    if (!(keep_prob > 0 && keep_prob <= 1)) throw ConfigError("keep_prob must lie in (0, 1]");
    if (!(step_size > 0)) throw ConfigError("step_size must be positive");
    if (!(pairwise_step_size > 0)) throw ConfigError("pairwise_step_size must be positive");
    if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be non-negative");
    if (!std::isfinite(alpha_init)) throw ConfigError("alpha_init must be finite");
    if (redistribution == RedistributionScheme::custom)
      throw ConfigError("training needs the average or center redistribution");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Adam states for every trained parameter block.
struct Optimizers {
  AdamState w0;
  AdamState w1;
  AdamState raw;
  AdamState alpha;

  static Optimizers create(const GcnParams& params, const PairwiseParams& pp,
                           const TrainConfig& cfg) {
    const AdamConfig backbone_w0{cfg.step_size, 0.9, 0.999, 1e-8, cfg.weight_decay};
    const AdamConfig backbone_w1{cfg.step_size, 0.9, 0.999, 1e-8, 0.0};
    const AdamConfig pairwise{cfg.pairwise_step_size, 0.9, 0.999, 1e-8, 0.0};
    return {AdamState(params.w0.size(), backbone_w0), AdamState(params.w1.size(), backbone_w1),
            AdamState(pp.raw().size(), pairwise), AdamState(pp.alpha_values().size(), pairwise)};
  }
};

namespace detail {

// Dropout streams: phase 0 is the warm start, phase k the k-th M-step.
inline RandomStream epoch_stream(std::uint64_t seed, std::uint64_t phase, std::uint64_t epoch) {
  return derive_stream(seed, StreamPurpose::dropout, phase, epoch);
}

inline void scale(DenseMatrix& m, double s) {
  for (double& v : m.values()) v *= s;
}

}  // namespace detail

/// Runs `cfg.m_epochs` full-batch Adam epochs ascending the expected
/// piecewise objective with the per-node distributions `targets` held fixed.
/// Returns the per-epoch objective (divided by the node count), evaluated
/// before each update.
template <Propagator A>
std::vector<double> m_step(GcnParams& params, PairwiseParams& pp, Optimizers& opt,
                           const DenseMatrix& features, const A& adj, const PieceSet& pieces,
                           const DenseMatrix& targets, const TrainConfig& cfg,
                           std::uint64_t phase) {
  const double inv_n = 1.0 / static_cast<double>(features.rows());
  std::vector<double> trace;
  trace.reserve(cfg.m_epochs);
  for (std::size_t epoch = 0; epoch < cfg.m_epochs; ++epoch) {
    RandomStream stream = detail::epoch_stream(cfg.seed, phase, epoch);
    GcnCache cache;
    const DenseMatrix scores = unary_log_factors(params, features, adj,
                                                 Dropout::training(cfg.keep_prob, stream), &cache);
    ObjectiveGradient og = objective_gradients(targets, scores, pp, pieces);
    if (!std::isfinite(og.value)) throw NumericalError("m_step: non-finite objective");
    trace.push_back(og.value * inv_n);

    detail::scale(og.scores, -inv_n);  // ascend
    GcnGrads grads = backward(params, features, adj, cache, og.scores);
    adam_step(params.w0, grads.w0, opt.w0);
    adam_step(params.w1, grads.w1, opt.w1);
    if (!cfg.freeze_pairwise) {
      detail::scale(og.raw, -inv_n);
      for (double& v : og.alpha) v *= -inv_n;
      adam_step(pp.raw(), og.raw, opt.raw);
      if (!og.alpha.empty()) adam_step(pp.alpha_values(), og.alpha, opt.alpha);
    }
  }
  return trace;
}

/// Final E-step to convergence, then argmax of q on U; L keeps its labels.
inline std::vector<Label> predict(const DenseMatrix& scores, const PairwiseParams& pp,
                                  const Proposal& q, const ObservedLabels& observed, const Graph& g,
                                  std::size_t sweeps = 50, double tolerance = 1e-6,
                                  Proposal* converged = nullptr) {
  EStepResult es = e_step(q, scores, pp, observed, g, sweeps, tolerance);
  std::vector<Label> out(observed.size());
  for (NodeId i = 0; i < observed.size(); ++i) {
    out[i] = observed.is_labeled(i) ? observed.label(i)
                                    : static_cast<Label>(argmax(es.proposal.row(i)));
  }
  if (converged) *converged = std::move(es.proposal);
  return out;
}

inline double evaluate(std::span<const Label> predictions, std::span<const Label> labels,
                       std::span<const NodeId> nodes) {
  if (nodes.empty()) throw ConfigError("evaluate: empty node set");
  std::size_t correct = 0;
  for (NodeId i : nodes) correct += predictions[i] == labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(nodes.size());
}

struct TrainResult {
  GcnParams params;
  PairwiseParams pairwise;
  Proposal proposal;
  std::vector<Label> predictions;
  TrainReport report;
};

/// Warm start, then `em_rounds` × (E-step, M-step). Every phase boundary is
/// scored on validation with the predict rule and the best one is returned.
template <Propagator A>
TrainResult train(const Dataset& ds, const Split& split, const TrainConfig& cfg, const A& adj) {
  cfg.validate();
  ds.validate();
  if (split.train.empty()) throw ConfigError("train: empty labeled set");
  if (split.validation.empty()) throw ConfigError("train: empty validation set");
  if (adj.rows() != ds.num_nodes()) throw ConfigError("train: adjacency does not match dataset");

  const Graph& g = ds.graph;
  const std::size_t c = ds.num_classes;
  const ObservedLabels observed = ObservedLabels::from(ds.labels, split.train);
  const PieceSet pieces = build_pieces(g, cfg.redistribution);

  TrainResult best;
  TrainReport report;
  GcnParams params = init_params(ds.features.cols(), cfg.hidden, c, cfg.seed);
  PairwiseParams pp(c, g.num_edges(), cfg.coefficient, cfg.alpha_init);
  Optimizers opt = Optimizers::create(params, pp, cfg);

  // Warm start: supervised cross-entropy on L.
  std::vector<double> val_losses;
  for (std::size_t epoch = 0; epoch < cfg.warm_start_epochs; ++epoch) {
    RandomStream stream = detail::epoch_stream(cfg.seed, 0, epoch);
    LossAndGrads lg = supervised_loss_and_grad(params, ds.features, adj, ds.labels, split.train,
                                               Dropout::training(cfg.keep_prob, stream));
    adam_step(params.w0, lg.grads.w0, opt.w0);
    adam_step(params.w1, lg.grads.w1, opt.w1);
    report.add("warm", epoch, "train_loss", lg.loss);

    const DenseMatrix scores = unary_log_factors(params, ds.features, adj);
    double vloss = 0.0;
    std::size_t correct = 0;
    for (NodeId i : split.validation) {
      const auto row = scores.row(i);
      vloss -= row[ds.labels[i]] - log_sum_exp(row);
      correct += argmax(row) == ds.labels[i] ? 1 : 0;
    }
    vloss /= static_cast<double>(split.validation.size());
    report.add("warm", epoch, "val_loss", vloss);
    report.add("warm", epoch, "val_accuracy",
               static_cast<double>(correct) / static_cast<double>(split.validation.size()));
    if (cfg.patience > 0 && val_losses.size() >= cfg.patience) {
      const double window =
          std::accumulate(val_losses.end() - static_cast<std::ptrdiff_t>(cfg.patience),
                          val_losses.end(), 0.0) /
          static_cast<double>(cfg.patience);
      if (vloss > window) {
        val_losses.push_back(vloss);
        break;
      }
    }
    val_losses.push_back(vloss);
  }

  Proposal q = Proposal::from_scores(unary_log_factors(params, ds.features, adj), observed);
  std::uint64_t checkpoint_id = 0;
  double best_val = -1.0;
  auto boundary = [&](const char* after, std::uint64_t round) {
    const DenseMatrix scores = unary_log_factors(params, ds.features, adj);
    Proposal converged;
    std::vector<Label> pred =
        predict(scores, pp, q, observed, g, cfg.predict_sweeps, cfg.e_tolerance, &converged);
    const double val = evaluate(pred, ds.labels, split.validation);
    report.checkpoints.push_back({checkpoint_id, after, round, val});
    if (val > best_val) {
      best_val = val;
      best.params = params;
      best.pairwise = pp;
      best.proposal = std::move(converged);
      best.predictions = std::move(pred);
      report.selected_checkpoint = checkpoint_id;
    }
    ++checkpoint_id;
  };
  boundary("warm", 0);

  for (std::size_t round = 1; round <= cfg.em_rounds; ++round) {
    const DenseMatrix scores = unary_log_factors(params, ds.features, adj);
    EStepResult es = e_step(std::move(q), scores, pp, observed, g, cfg.e_sweeps, cfg.e_tolerance);
    for (std::size_t s = 0; s < es.max_change.size(); ++s)
      report.add("estep", round, "max_tv_change", es.max_change[s]);
    q = std::move(es.proposal);
    boundary("estep", round);

    const DenseMatrix targets = node_distributions(q, observed);
    const std::vector<double> trace =
        m_step(params, pp, opt, ds.features, adj, pieces, targets, cfg, round);
    for (double v : trace) report.add("mstep", round, "objective", v);
    boundary("mstep", round);
  }

  report.validation_accuracy = best_val;
  report.test_accuracy =
      split.test.empty() ? 0.0 : evaluate(best.predictions, ds.labels, split.test);
  best.report = std::move(report);
  return best;
}

inline TrainResult train(const Dataset& ds, const Split& split, const TrainConfig& cfg) {
  return train(ds, split, cfg, SparseAdjacency(ds.graph));
}

}  // namespace epfgnn
