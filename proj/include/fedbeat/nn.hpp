#pragma once

// Small fully connected networks with hand-derived gradients.
//
// Two heads share the same MLP body:
//   class_simplex  C logits -> softmax              (classifier f(x; w))
//   transition     C*C logits -> softmax per row    (transition network T(x; theta))
//
// Parameters are stored flat, layer by layer: weights (out x in, row-major)
// followed by biases (out).

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace fedbeat::nn {

/// Probabilities are clamped to this floor before taking a log.
inline constexpr double kProbFloor = 1e-12;

enum class OutputKind { class_simplex, transition };

struct ModelSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  OutputKind output_kind = OutputKind::class_simplex;
  int num_classes = 2;

  std::size_t output_dim() const noexcept;
  std::size_t param_count() const noexcept;
  /// Layer widths including input and output.
  std::vector<std::size_t> layer_sizes() const;
  /// Throws InputError if any invariant is violated.
  void validate() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct ParamVector {
  ModelSpec spec;
  std::vector<double> values;

  ParamVector() = default;
  /// Zero-initialised parameters for `spec`.
  explicit ParamVector(ModelSpec s);
  ParamVector(ModelSpec s, std::vector<double> v);

  std::size_t size() const noexcept { return values.size(); }
  bool all_finite() const noexcept;

  friend bool operator==(const ParamVector&, const ParamVector&) = default;
};

using ConfidenceVector = std::vector<double>;

/// Row-major C x C row-stochastic matrix.
class TransitionMatrix {
 public:
  TransitionMatrix() = default;
  explicit TransitionMatrix(int num_classes);
  TransitionMatrix(int num_classes, std::vector<double> entries);

  static TransitionMatrix identity(int num_classes);

  int num_classes() const noexcept { return c_; }
  double operator()(int from, int to) const noexcept { return e_[static_cast<std::size_t>(from * c_ + to)]; }
  double& operator()(int from, int to) noexcept { return e_[static_cast<std::size_t>(from * c_ + to)]; }
  std::span<const double> row(int from) const noexcept {
    return std::span<const double>(e_).subspan(static_cast<std::size_t>(from * c_), static_cast<std::size_t>(c_));
  }
  std::span<const double> entries() const noexcept { return e_; }

 private:
  int c_ = 0;
  std::vector<double> e_;
};

struct Example {
  std::span<const double> x;
  int label = 0;
};

/// One extracted triple: features, noisy label and pseudo-label.
struct TransitionExample {
  std::span<const double> x;
  int noisy = 0;
  int pseudo = 0;
};

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

/// Glorot-uniform weights, zero biases.
ParamVector init_params(const ModelSpec& spec, std::uint64_t seed);

/// Transition parameters whose output is exactly the identity matrix for every x.
ParamVector identity_transition_params(const ModelSpec& spec);

/// Raw output-layer logits.
std::vector<double> logits(const ParamVector& w, std::span<const double> x);

void softmax_inplace(std::span<double> z) noexcept;

ConfidenceVector classifier_forward(std::span<const double> x, const ParamVector& w);
TransitionMatrix transition_forward(std::span<const double> x, const ParamVector& theta);

/// P(noisy = j | x) = sum_i T(i, j) * p_clean(i).
ConfidenceVector noisy_posterior(const TransitionMatrix& t, std::span<const double> p_clean);

/// Mean cross-entropy against hard labels.
LossGrad ce_loss_and_grad(std::span<const Example> batch, const ParamVector& w);

/// Mean -log T(x)[pseudo][noisy]; gradient w.r.t. theta.
LossGrad transition_loss_and_grad(std::span<const TransitionExample> batch, const ParamVector& theta);

/// Mean -log [f(x; w)^T T(x; theta)]_noisy; gradient w.r.t. w only.
LossGrad correction_loss_and_grad(std::span<const Example> batch, const ParamVector& w,
                                  const ParamVector& theta);

/// Same as correction_loss_and_grad with precomputed transition matrices (one per example).
LossGrad correction_loss_and_grad(std::span<const Example> batch, const ParamVector& w,
                                  std::span<const TransitionMatrix> transitions);

/// w - lr * grad. Throws NumericalError on a non-finite gradient.
ParamVector sgd_step(const ParamVector& w, std::span<const double> grad, double lr);
void sgd_step_inplace(ParamVector& w, std::span<const double> grad, double lr);

}  // namespace fedbeat::nn
