#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "epfgnn/dense_matrix.hpp"
#include "epfgnn/errors.hpp"
#include "epfgnn/rng.hpp"

namespace epfgnn {

// Product kernels skip zero entries of the left operand.

inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + a.shape_string() + " * " + b.shape_string());
  }
  DenseMatrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    const auto src = a.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double s = src[k];
      if (s == 0.0) continue;
      const auto brow = b.row(k);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += s * brow[j];
    }
  }
  return out;
}

/// aᵀ · b without materializing the transpose.
inline DenseMatrix matmul_at_b(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_at_b: " + a.shape_string() + "ᵀ * " + b.shape_string());
  }
  DenseMatrix out(a.cols(), b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto arow = a.row(r);
    const auto brow = b.row(r);
    for (std::size_t i = 0; i < arow.size(); ++i) {
      const double s = arow[i];
      if (s == 0.0) continue;
      auto dst = out.row(i);
      for (std::size_t j = 0; j < brow.size(); ++j) dst[j] += s * brow[j];
    }
  }
  return out;
}

/// a · bᵀ without materializing the transpose.
inline DenseMatrix matmul_a_bt(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_a_bt: " + a.shape_string() + " * " + b.shape_string() + "ᵀ");
  }
  DenseMatrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto arow = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto brow = b.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < arow.size(); ++k) acc += arow[k] * brow[k];
      out(i, j) = acc;
    }
  }
  return out;
}

inline DenseMatrix transpose(const DenseMatrix& m) {
  DenseMatrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

inline DenseMatrix hadamard(const DenseMatrix& a, const DenseMatrix& b) {
  require_same_shape(a, b, "hadamard");
  DenseMatrix out = a;
  auto o = out.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return out;
}

inline void add_scaled(DenseMatrix& dst, const DenseMatrix& src, double scale) {
  require_same_shape(dst, src, "add_scaled");
  auto d = dst.values();
  const auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * s[i];
}

inline bool all_finite(std::span<const double> v) noexcept {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline double log_sum_exp(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("log_sum_exp: empty input");
  const double mx = *std::max_element(v.begin(), v.end());
  if (mx == -std::numeric_limits<double>::infinity()) return mx;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - mx);
  return mx + std::log(acc);
}

/// In-place stable softmax of one row.
inline void softmax_inplace(std::span<double> row) noexcept {
  const double mx = *std::max_element(row.begin(), row.end());
  double acc = 0.0;
  for (double& x : row) {
    x = std::exp(x - mx);
    acc += x;
  }
  for (double& x : row) x /= acc;
}

inline DenseMatrix softmax_rows(const DenseMatrix& m) {
  DenseMatrix out = m;
  for (std::size_t i = 0; i < out.rows(); ++i) softmax_inplace(out.row(i));
  return out;
}

inline std::size_t argmax(std::span<const double> v) noexcept {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Inverted-dropout mask: entries are 0 or 1/keep_prob.
inline DenseMatrix dropout_mask(std::size_t rows, std::size_t cols, double keep_prob,
                                RandomStream& stream) {
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) {
    throw ConfigError("dropout_mask: keep_prob must lie in (0, 1]");
  }
  DenseMatrix mask(rows, cols, 1.0);
  if (keep_prob == 1.0) return mask;
  const double scale = 1.0 / keep_prob;
  for (double& x : mask.values()) x = stream.uniform() < keep_prob ? scale : 0.0;
  return mask;
}

inline DenseMatrix dropout_mask(std::size_t rows, std::size_t cols, double keep_prob,
                                std::uint64_t seed) {
  RandomStream stream = derive_stream(seed, StreamPurpose::dropout);
  return dropout_mask(rows, cols, keep_prob, stream);
}

// ---------------------------------------------------------------------------
// Adam

enum class WeightDecayMode {
  /// decay * param added to the gradient before the moment updates (the
  /// classic L2 recipe, equivalent to decay/2 * ||param||² in the loss).
  l2,
  /// param *= (1 - step_size * decay) applied outside the moments.
  decoupled,
};

struct AdamConfig {
  double step_size = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  WeightDecayMode decay_mode = WeightDecayMode::l2;

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

class AdamState {
 public:
  AdamState() = default;
  AdamState(std::size_t size, AdamConfig config)
      : config_(config), first_(size, 0.0), second_(size, 0.0) {}

  const AdamConfig& config() const noexcept { return config_; }
  std::uint64_t step() const noexcept { return step_; }
  std::size_t size() const noexcept { return first_.size(); }
  std::span<const double> first_moment() const noexcept { return first_; }
  std::span<const double> second_moment() const noexcept { return second_; }

  /// One minimization step: param moves against grad.
  void apply(std::span<double> param, std::span<const double> grad) {
    if (param.size() != first_.size() || grad.size() != first_.size()) {
      throw ShapeError("adam_step: parameter/gradient/state size mismatch (" +
                       std::to_string(param.size()) + ", " + std::to_string(grad.size()) + ", " +
                       std::to_string(first_.size()) + ")");
    }
    ++step_;
    const double b1 = config_.beta1;
    const double b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    const bool l2 = config_.weight_decay != 0.0 && config_.decay_mode == WeightDecayMode::l2;
    const bool decoupled =
        config_.weight_decay != 0.0 && config_.decay_mode == WeightDecayMode::decoupled;
    for (std::size_t i = 0; i < param.size(); ++i) {
      double g = grad[i];
      if (l2) g += config_.weight_decay * param[i];
      first_[i] = b1 * first_[i] + (1.0 - b1) * g;
      second_[i] = b2 * second_[i] + (1.0 - b2) * g * g;
      const double mhat = first_[i] / c1;
      const double vhat = second_[i] / c2;
      if (decoupled) param[i] *= 1.0 - config_.step_size * config_.weight_decay;
      param[i] -= config_.step_size * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
  }

  friend bool operator==(const AdamState&, const AdamState&) = default;

 private:
  AdamConfig config_{};
  std::uint64_t step_ = 0;
  std::vector<double> first_;
  std::vector<double> second_;
};

inline void adam_step(DenseMatrix& param, const DenseMatrix& grad, AdamState& state) {
  require_same_shape(param, grad, "adam_step");
  state.apply(param.values(), grad.values());
}

inline void adam_step(std::span<double> param, std::span<const double> grad, AdamState& state) {
  state.apply(param, grad);
}

}  // namespace epfgnn
