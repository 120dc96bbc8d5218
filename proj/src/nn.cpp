#include "fedbeat/nn.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "fedbeat/errors.hpp"

namespace fedbeat::nn {

namespace {

// Activations of one forward pass: acts[0] is the input, acts[l] for
// 0 < l < L the post-ReLU hidden layers, acts[L] the output logits.
struct ForwardCache {
  std::vector<std::vector<double>> acts;
};

void check_input(const ParamVector& w, std::span<const double> x) {
  if (x.size() != w.spec.input_dim) {
    throw InputError("feature dimension " + std::to_string(x.size()) + " does not match model input_dim " +
                     std::to_string(w.spec.input_dim));
  }
  if (w.values.size() != w.spec.param_count()) {
    throw InputError("parameter vector length does not match its model spec");
  }
}

void check_label(int label, int num_classes) {
  if (label < 0 || label >= num_classes) {
    throw InputError("label " + std::to_string(label) + " outside [0, " + std::to_string(num_classes) + ")");
  }
}

void forward(const ParamVector& w, std::span<const double> x, ForwardCache& cache) {
  const auto sizes = w.spec.layer_sizes();
  const std::size_t layers = sizes.size() - 1;
  cache.acts.resize(sizes.size());
  cache.acts[0].assign(x.begin(), x.end());
  const double* p = w.values.data();
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = sizes[l];
    const std::size_t out = sizes[l + 1];
    const double* weights = p;
    const double* bias = p + in * out;
    const auto& a = cache.acts[l];
    auto& z = cache.acts[l + 1];
    z.resize(out);
    for (std::size_t o = 0; o < out; ++o) {
      double s = bias[o];
      const double* row = weights + o * in;
      for (std::size_t i = 0; i < in; ++i) s += row[i] * a[i];
      z[o] = (l + 1 < layers) ? std::max(s, 0.0) : s;
    }
    p += in * out + out;
  }
}

// Accumulates dLoss/dparams into `grad` given dLoss/dlogits.
void backward(const ParamVector& w, const ForwardCache& cache, std::vector<double> delta,
              std::span<double> grad) {
  const auto sizes = w.spec.layer_sizes();
  const std::size_t layers = sizes.size() - 1;

  std::vector<std::size_t> offsets(layers);
  std::size_t off = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    offsets[l] = off;
    off += sizes[l] * sizes[l + 1] + sizes[l + 1];
  }

  for (std::size_t l = layers; l-- > 0;) {
    const std::size_t in = sizes[l];
    const std::size_t out = sizes[l + 1];
    const double* weights = w.values.data() + offsets[l];
    double* gw = grad.data() + offsets[l];
    double* gb = gw + in * out;
    const auto& a = cache.acts[l];
    for (std::size_t o = 0; o < out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      gb[o] += d;
      double* grow = gw + o * in;
      for (std::size_t i = 0; i < in; ++i) grow[i] += d * a[i];
    }
    if (l == 0) break;
    std::vector<double> prev(in, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      const double* row = weights + o * in;
      for (std::size_t i = 0; i < in; ++i) prev[i] += row[i] * d;
    }
    // ReLU derivative; the subgradient at 0 is taken as 0.
    for (std::size_t i = 0; i < in; ++i) {
      if (a[i] <= 0.0) prev[i] = 0.0;
    }
    delta = std::move(prev);
  }
}

void row_softmax(std::span<double> z, int c) noexcept {
  for (int r = 0; r < c; ++r) softmax_inplace(z.subspan(static_cast<std::size_t>(r * c), static_cast<std::size_t>(c)));
}

void require_kind(const ParamVector& w, OutputKind kind, const char* what) {
  if (w.spec.output_kind != kind) throw InputError(std::string(what) + ": parameter vector has the wrong output kind");
}

}  // namespace

std::size_t ModelSpec::output_dim() const noexcept {
  const auto c = static_cast<std::size_t>(num_classes);
  return output_kind == OutputKind::class_simplex ? c : c * c;
}

std::vector<std::size_t> ModelSpec::layer_sizes() const {
  std::vector<std::size_t> sizes;
  sizes.reserve(hidden_dims.size() + 2);
  sizes.push_back(input_dim);
  sizes.insert(sizes.end(), hidden_dims.begin(), hidden_dims.end());
  sizes.push_back(output_dim());
  return sizes;
}

std::size_t ModelSpec::param_count() const noexcept {
  const auto sizes = layer_sizes();
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) n += sizes[l] * sizes[l + 1] + sizes[l + 1];
  return n;
}

void ModelSpec::validate() const {
  if (num_classes < 2) throw InputError("num_classes must be at least 2");
  if (input_dim == 0) throw InputError("input_dim must be positive");
  for (auto h : hidden_dims) {
    if (h == 0) throw InputError("hidden layer widths must be positive");
  }
}

ParamVector::ParamVector(ModelSpec s) : spec(std::move(s)), values(spec.param_count(), 0.0) {}

ParamVector::ParamVector(ModelSpec s, std::vector<double> v) : spec(std::move(s)), values(std::move(v)) {
  if (values.size() != spec.param_count()) throw InputError("parameter vector length does not match its model spec");
}

bool ParamVector::all_finite() const noexcept {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

TransitionMatrix::TransitionMatrix(int num_classes)
    : c_(num_classes), e_(static_cast<std::size_t>(num_classes * num_classes), 0.0) {}

TransitionMatrix::TransitionMatrix(int num_classes, std::vector<double> entries)
    : c_(num_classes), e_(std::move(entries)) {
  if (e_.size() != static_cast<std::size_t>(c_ * c_)) throw InputError("transition matrix must have C*C entries");
}

TransitionMatrix TransitionMatrix::identity(int num_classes) {
  TransitionMatrix t(num_classes);
  for (int i = 0; i < num_classes; ++i) t(i, i) = 1.0;
  return t;
}

ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamVector w(spec);
  std::mt19937_64 gen(seed);
  const auto sizes = spec.layer_sizes();
  double* p = w.values.data();
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const std::size_t in = sizes[l];
    const std::size_t out = sizes[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (std::size_t i = 0; i < in * out; ++i) p[i] = dist(gen);
    p += in * out + out;
  }
  return w;
}

ParamVector identity_transition_params(const ModelSpec& spec) {
  if (spec.output_kind != OutputKind::transition) throw InputError("identity_transition_params needs a transition spec");
  spec.validate();
  ParamVector theta(spec);
  // Output weights stay zero; the diagonal bias dominates so the off-diagonal
  // softmax terms underflow to exactly 0.
  const int c = spec.num_classes;
  const std::size_t bias_start = theta.values.size() - spec.output_dim();
  for (int i = 0; i < c; ++i) theta.values[bias_start + static_cast<std::size_t>(i * c + i)] = 1000.0;
  return theta;
}

void softmax_inplace(std::span<double> z) noexcept {
  if (z.empty()) return;
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (auto& v : z) {
    v = std::exp(v - m);
    s += v;
  }
  for (auto& v : z) v /= s;
}

std::vector<double> logits(const ParamVector& w, std::span<const double> x) {
  check_input(w, x);
  ForwardCache cache;
  forward(w, x, cache);
  return std::move(cache.acts.back());
}

ConfidenceVector classifier_forward(std::span<const double> x, const ParamVector& w) {
  require_kind(w, OutputKind::class_simplex, "classifier_forward");
  auto z = logits(w, x);
  softmax_inplace(z);
  return z;
}

TransitionMatrix transition_forward(std::span<const double> x, const ParamVector& theta) {
  require_kind(theta, OutputKind::transition, "transition_forward");
  auto z = logits(theta, x);
  row_softmax(z, theta.spec.num_classes);
  return TransitionMatrix(theta.spec.num_classes, std::move(z));
}

ConfidenceVector noisy_posterior(const TransitionMatrix& t, std::span<const double> p_clean) {
  const int c = t.num_classes();
  if (p_clean.size() != static_cast<std::size_t>(c)) throw InputError("noisy_posterior: class count mismatch");
  ConfidenceVector out(static_cast<std::size_t>(c), 0.0);
  for (int i = 0; i < c; ++i) {
    const double pi = p_clean[static_cast<std::size_t>(i)];
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(j)] += t(i, j) * pi;
  }
  // rounding can push a concentrated entry one ulp past 1
  for (auto& v : out) v = std::min(v, 1.0);
  return out;
}

LossGrad ce_loss_and_grad(std::span<const Example> batch, const ParamVector& w) {
  require_kind(w, OutputKind::class_simplex, "ce_loss");
  if (batch.empty()) throw InputError("ce_loss: empty batch");
  const int c = w.spec.num_classes;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  LossGrad out{0.0, std::vector<double>(w.size(), 0.0)};
  ForwardCache cache;
  for (const auto& ex : batch) {
    check_input(w, ex.x);
    check_label(ex.label, c);
    forward(w, ex.x, cache);
    std::vector<double> p = cache.acts.back();
    softmax_inplace(p);
    const double py = p[static_cast<std::size_t>(ex.label)];
    out.loss -= std::log(std::clamp(py, kProbFloor, 1.0)) * inv_n;
    if (py <= kProbFloor) continue;  // clamped: flat in the parameters
    // d(-log p_y)/dz_k = p_k - [k == y]
    std::vector<double> delta(p.size());
    for (std::size_t k = 0; k < p.size(); ++k) delta[k] = (p[k] - (static_cast<int>(k) == ex.label ? 1.0 : 0.0)) * inv_n;
    backward(w, cache, std::move(delta), out.grad);
  }
  return out;
}

LossGrad transition_loss_and_grad(std::span<const TransitionExample> batch, const ParamVector& theta) {
  require_kind(theta, OutputKind::transition, "transition_loss");
  if (batch.empty()) throw InputError("transition_loss: empty batch");
  const int c = theta.spec.num_classes;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  LossGrad out{0.0, std::vector<double>(theta.size(), 0.0)};
  ForwardCache cache;
  for (const auto& ex : batch) {
    check_input(theta, ex.x);
    check_label(ex.noisy, c);
    check_label(ex.pseudo, c);
    forward(theta, ex.x, cache);
    // Only row `pseudo` of T enters the loss (one-hot pseudo-label selects it).
    const auto row_start = static_cast<std::size_t>(ex.pseudo * c);
    std::vector<double> row(cache.acts.back().begin() + static_cast<std::ptrdiff_t>(row_start),
                            cache.acts.back().begin() + static_cast<std::ptrdiff_t>(row_start + static_cast<std::size_t>(c)));
    softmax_inplace(row);
    const double t = row[static_cast<std::size_t>(ex.noisy)];
    out.loss -= std::log(std::clamp(t, kProbFloor, 1.0)) * inv_n;
    if (t <= kProbFloor) continue;
    std::vector<double> delta(theta.spec.output_dim(), 0.0);
    for (int k = 0; k < c; ++k) {
      delta[row_start + static_cast<std::size_t>(k)] =
          (row[static_cast<std::size_t>(k)] - (k == ex.noisy ? 1.0 : 0.0)) * inv_n;
    }
    backward(theta, cache, std::move(delta), out.grad);
  }
  return out;
}

LossGrad correction_loss_and_grad(std::span<const Example> batch, const ParamVector& w,
                                  std::span<const TransitionMatrix> transitions) {
  require_kind(w, OutputKind::class_simplex, "correction_loss");
  if (batch.empty()) throw InputError("correction_loss: empty batch");
  if (transitions.size() != batch.size()) throw InputError("correction_loss: one transition matrix per example required");
  const int c = w.spec.num_classes;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  LossGrad out{0.0, std::vector<double>(w.size(), 0.0)};
  ForwardCache cache;
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const auto& ex = batch[n];
    const auto& t = transitions[n];
    if (t.num_classes() != c) throw InputError("correction_loss: transition class count mismatch");
    check_input(w, ex.x);
    check_label(ex.label, c);
    forward(w, ex.x, cache);
    std::vector<double> p = cache.acts.back();
    softmax_inplace(p);
    double q = 0.0;
    for (int i = 0; i < c; ++i) q += p[static_cast<std::size_t>(i)] * t(i, ex.label);
    out.loss -= std::log(std::clamp(q, kProbFloor, 1.0)) * inv_n;
    if (q <= kProbFloor) continue;
    // With g_i = -T(i, y) / q and sum_i g_i p_i = -1:
    //   dL/dz_k = p_k * (g_k - sum_i g_i p_i) = p_k * (1 - T(k, y) / q)
    std::vector<double> delta(p.size());
    for (int k = 0; k < c; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      delta[kk] = p[kk] * (1.0 - t(k, ex.label) / q) * inv_n;
    }
    backward(w, cache, std::move(delta), out.grad);
  }
  return out;
}

LossGrad correction_loss_and_grad(std::span<const Example> batch, const ParamVector& w,
                                  const ParamVector& theta) {
  require_kind(theta, OutputKind::transition, "correction_loss");
  if (theta.spec.num_classes != w.spec.num_classes) throw InputError("correction_loss: class count mismatch");
  std::vector<TransitionMatrix> ts;
  ts.reserve(batch.size());
  for (const auto& ex : batch) ts.push_back(transition_forward(ex.x, theta));
  return correction_loss_and_grad(batch, w, ts);
}

void sgd_step_inplace(ParamVector& w, std::span<const double> grad, double lr) {
  if (grad.size() != w.size()) throw InputError("sgd_step: gradient length mismatch");
  for (double g : grad) {
    if (!std::isfinite(g)) throw NumericalError("sgd_step: non-finite gradient");
  }
  for (std::size_t i = 0; i < grad.size(); ++i) w.values[i] -= lr * grad[i];
}

ParamVector sgd_step(const ParamVector& w, std::span<const double> grad, double lr) {
  ParamVector out = w;
  sgd_step_inplace(out, grad, lr);
  return out;
}

}  // namespace fedbeat::nn
