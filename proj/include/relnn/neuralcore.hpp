#pragma once

// Dense-network substrate: fc layers, forward/backward, dropout, losses and
// SGD with momentum and coupled weight decay.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "relnn/errors.hpp"
#include "relnn/tensor.hpp"

namespace relnn {

enum class Activation : std::uint8_t { ReLU = 0, Identity = 1, Sigmoid = 2 };

inline double sigmoid(double z) {
  // Clamped so the result is strictly inside (0, 1) for every finite z.
  constexpr double lo = std::numeric_limits<double>::min();
  const double hi = std::nextafter(1.0, 0.0);
  const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  return std::clamp(s, lo, hi);
}

inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

struct DenseLayer {
  Tensor weights;  // [out x in], row-major
  Tensor bias;     // [out]
  Activation activation = Activation::Identity;

  DenseLayer() = default;
  DenseLayer(Tensor w, Tensor b, Activation act)
      : weights(std::move(w)), bias(std::move(b)), activation(act) {
    if (weights.shape.size() != 2 || bias.shape.size() != 1 || bias.shape[0] != weights.shape[0]) {
      throw ShapeError("dense layer needs weights [out x in] and bias [out]");
    }
  }

  std::size_t in_dim() const { return weights.shape[1]; }
  std::size_t out_dim() const { return weights.shape[0]; }

  // Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero bias.
  static DenseLayer glorot(std::size_t in, std::size_t out, Activation act, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    Tensor w({out, in});
    for (double& v : w.data) v = (2.0 * uniform01(rng) - 1.0) * limit;
    return DenseLayer(std::move(w), Tensor({out}), act);
  }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct LayerCache {
  std::vector<double> input;
  std::vector<double> pre;
  std::vector<double> output;  // post-activation, before dropout
  std::vector<double> mask;    // 0 or 1/(1-p) per unit; empty when no dropout
};

struct ActivationCache {
  std::vector<LayerCache> layers;
  std::uint64_t model_revision = 0;
  bool filled = false;
};

namespace detail {

inline void check_input(const DenseLayer& layer, std::size_t n) {
  if (n != layer.in_dim()) {
    throw ShapeError("dense layer expects input of length " + std::to_string(layer.in_dim()) + ", got " +
                     std::to_string(n));
  }
}

inline void affine(const DenseLayer& layer, std::span<const double> input, std::vector<double>& pre) {
  const std::size_t in = layer.in_dim();
  const std::size_t out = layer.out_dim();
  pre.resize(out);
  const double* w = layer.weights.data.data();
  const double* x = input.data();
  for (std::size_t o = 0; o < out; ++o) {
    const double* row = w + o * in;
    // Four partial sums in a fixed order: vectorizable and deterministic.
    double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
    std::size_t j = 0;
    for (; j + 4 <= in; j += 4) {
      a0 += row[j] * x[j];
      a1 += row[j + 1] * x[j + 1];
      a2 += row[j + 2] * x[j + 2];
      a3 += row[j + 3] * x[j + 3];
    }
    for (; j < in; ++j) a0 += row[j] * x[j];
    pre[o] = layer.bias.data[o] + ((a0 + a1) + (a2 + a3));
  }
}

inline void activate(Activation act, const std::vector<double>& pre, std::vector<double>& post) {
  post.resize(pre.size());
  for (std::size_t o = 0; o < pre.size(); ++o) {
    switch (act) {
      case Activation::ReLU: post[o] = pre[o] > 0.0 ? pre[o] : 0.0; break;
      case Activation::Identity: post[o] = pre[o]; break;
      case Activation::Sigmoid: post[o] = sigmoid(pre[o]); break;
    }
  }
}

}  // namespace detail

// activation(W x + b); fills cache (input, pre-activation, output) when given.
inline std::vector<double> dense_forward(const DenseLayer& layer, std::span<const double> input,
                                         LayerCache* cache = nullptr) {
  detail::check_input(layer, input.size());
  std::vector<double> pre, post;
  detail::affine(layer, input, pre);
  detail::activate(layer.activation, pre, post);
  if (cache != nullptr) {
    cache->input.assign(input.begin(), input.end());
    cache->pre = std::move(pre);
    cache->output = post;
  }
  return post;
}

enum class Mode { Train, Eval };

struct MlpModel {
  std::vector<DenseLayer> layers;
  double dropout_rate = 0.5;
  // Bumped by every parameter update; caches remember the revision they saw.
  std::uint64_t revision = 0;

  std::size_t in_dim() const { return layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.back().out_dim(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.bias.size();
    return n;
  }

  void validate() const {
    if (layers.empty()) throw ShapeError("model has no layers");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
      throw ConfigError("dropout rate must lie in [0, 1)");
    }
    for (std::size_t i = 1; i < layers.size(); ++i) {
      if (layers[i].in_dim() != layers[i - 1].out_dim()) {
        throw ShapeError("layer " + std::to_string(i) + " expects " +
                         std::to_string(layers[i].in_dim()) + " inputs but layer " +
                         std::to_string(i - 1) + " emits " + std::to_string(layers[i - 1].out_dim()));
      }
    }
  }

  // dims = {in, h1, ..., out}; hidden layers use ReLU, the last one `last`.
  static MlpModel create(const std::vector<std::size_t>& dims, Activation last, double dropout,
                         Rng& rng) {
    if (dims.size() < 2) throw ConfigError("model needs at least input and output widths");
    MlpModel m;
    m.dropout_rate = dropout;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
      const bool is_last = i + 2 == dims.size();
      m.layers.push_back(DenseLayer::glorot(dims[i], dims[i + 1], is_last ? last : Activation::ReLU, rng));
    }
    m.validate();
    return m;
  }

  friend bool operator==(const MlpModel& a, const MlpModel& b) {
    return a.layers == b.layers && a.dropout_rate == b.dropout_rate;
  }
};

struct ForwardResult {
  std::vector<double> output;
  ActivationCache cache;
};

// Dropout masks are applied to the output of every layer except the last.
using DropoutMasks = std::vector<std::vector<double>>;

namespace detail {

template <typename MaskFn>
ForwardResult forward_impl(const MlpModel& model, std::span<const double> input, MaskFn&& make_mask) {
  if (input.size() != model.in_dim()) {
    throw ShapeError("model expects input of length " + std::to_string(model.in_dim()) + ", got " +
                     std::to_string(input.size()));
  }
  ForwardResult r;
  r.cache.layers.resize(model.layers.size());
  std::span<const double> x = input;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    LayerCache& lc = r.cache.layers[i];
    if (x.data() != lc.input.data()) lc.input.assign(x.begin(), x.end());
    affine(model.layers[i], lc.input, lc.pre);
    activate(model.layers[i].activation, lc.pre, lc.output);
    if (i + 1 < model.layers.size()) {
      make_mask(i, lc.mask);
      if (!lc.mask.empty()) {
        if (lc.mask.size() != lc.output.size()) throw ShapeError("dropout mask width mismatch");
        // The next layer reads the masked activations.
        r.cache.layers[i + 1].input = lc.output;
        for (std::size_t j = 0; j < lc.output.size(); ++j) r.cache.layers[i + 1].input[j] *= lc.mask[j];
        x = r.cache.layers[i + 1].input;
        continue;
      }
    }
    x = lc.output;
  }
  r.output.assign(x.begin(), x.end());
  r.cache.model_revision = model.revision;
  r.cache.filled = true;
  return r;
}

}  // namespace detail

// Train mode samples inverted-dropout masks from rng; Eval mode is deterministic.
inline ForwardResult mlp_forward(const MlpModel& model, std::span<const double> input, Mode mode,
                                 Rng& rng) {
  const double p = model.dropout_rate;
  const bool drop = mode == Mode::Train && p > 0.0;
  const double keep_scale = 1.0 / (1.0 - p);
  return detail::forward_impl(model, input, [&](std::size_t i, std::vector<double>& mask) {
    mask.clear();
    if (!drop) return;
    mask.resize(model.layers[i].out_dim());
    for (double& m : mask) m = uniform01(rng) >= p ? keep_scale : 0.0;
  });
}

inline std::vector<double> mlp_eval(const MlpModel& model, std::span<const double> input) {
  return detail::forward_impl(model, input, [](std::size_t, std::vector<double>& m) { m.clear(); }).output;
}

// Replays a forward pass under previously sampled masks (one entry per hidden layer).
inline ForwardResult mlp_forward_masked(const MlpModel& model, std::span<const double> input,
                                        const DropoutMasks& masks) {
  return detail::forward_impl(model, input, [&](std::size_t i, std::vector<double>& mask) {
    mask = i < masks.size() ? masks[i] : std::vector<double>{};
  });
}

// Draws one set of inverted-dropout masks, as a Train-mode forward would.
inline DropoutMasks sample_masks(const MlpModel& model, Rng& rng) {
  DropoutMasks masks(model.layers.size() - 1);
  const double p = model.dropout_rate;
  if (p <= 0.0) return masks;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    masks[i].resize(model.layers[i].out_dim());
    for (double& m : masks[i]) m = uniform01(rng) >= p ? 1.0 / (1.0 - p) : 0.0;
  }
  return masks;
}

inline DropoutMasks masks_of(const ActivationCache& cache) {
  DropoutMasks m;
  for (std::size_t i = 0; i + 1 < cache.layers.size(); ++i) m.push_back(cache.layers[i].mask);
  return m;
}

struct LayerGrad {
  Tensor weights;
  Tensor bias;
};

struct ParamGrads {
  std::vector<LayerGrad> layers;
  std::vector<double> input_grad;

  static ParamGrads zeros_like(const MlpModel& model) {
    ParamGrads g;
    for (const auto& l : model.layers) g.layers.push_back({Tensor(l.weights.shape), Tensor(l.bias.shape)});
    g.input_grad.assign(model.in_dim(), 0.0);
    return g;
  }

  void scale(double s) {
    for (auto& l : layers) {
      for (double& v : l.weights.data) v *= s;
      for (double& v : l.bias.data) v *= s;
    }
  }

  bool all_zero() const {
    for (const auto& l : layers) {
      for (double v : l.weights.data) if (v != 0.0) return false;
      for (double v : l.bias.data) if (v != 0.0) return false;
    }
    return true;
  }
};

// Where output_grad is taken with respect to: the final layer's output, or its
// pre-activation (used to fuse sigmoid with binary cross-entropy).
enum class GradAt { Output, PreActivation };

// Adds this sample's parameter gradients into acc and returns d(loss)/d(input).
inline std::vector<double> mlp_backward_accumulate(const MlpModel& model, const ActivationCache& cache,
                                                   std::span<const double> output_grad, ParamGrads& acc,
                                                   GradAt at = GradAt::Output) {
  if (!cache.filled || cache.layers.size() != model.layers.size() ||
      cache.model_revision != model.revision) {
    throw ContractError("stale or missing activation cache for backward pass");
  }
  if (output_grad.size() != model.out_dim()) {
    throw ShapeError("output gradient has length " + std::to_string(output_grad.size()) +
                     ", model emits " + std::to_string(model.out_dim()));
  }
  if (acc.layers.size() != model.layers.size()) throw ContractError("gradient accumulator does not match model");
  std::vector<double> delta(output_grad.begin(), output_grad.end());
  for (std::size_t li = model.layers.size(); li-- > 0;) {
    const DenseLayer& layer = model.layers[li];
    const LayerCache& lc = cache.layers[li];
    const std::size_t in = layer.in_dim();
    const std::size_t out = layer.out_dim();
    if (lc.input.size() != in || lc.pre.size() != out) throw ContractError("activation cache shape mismatch");
    if (!lc.mask.empty()) {
      for (std::size_t o = 0; o < out; ++o) delta[o] *= lc.mask[o];
    }
    const bool skip_activation = at == GradAt::PreActivation && li + 1 == model.layers.size();
    if (!skip_activation) {
      for (std::size_t o = 0; o < out; ++o) {
        switch (layer.activation) {
          case Activation::ReLU: delta[o] = lc.pre[o] > 0.0 ? delta[o] : 0.0; break;
          case Activation::Identity: break;
          case Activation::Sigmoid: delta[o] *= lc.output[o] * (1.0 - lc.output[o]); break;
        }
      }
    }
    LayerGrad& g = acc.layers[li];
    const double* w = layer.weights.data.data();
    std::vector<double> next(in, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      g.bias.data[o] += d;
      double* gw = g.weights.data.data() + o * in;
      const double* row = w + o * in;
      for (std::size_t j = 0; j < in; ++j) {
        gw[j] += d * lc.input[j];
        next[j] += row[j] * d;
      }
    }
    delta = std::move(next);
  }
  return delta;
}

inline ParamGrads mlp_backward(const MlpModel& model, const ActivationCache& cache,
                               std::span<const double> output_grad, GradAt at = GradAt::Output) {
  ParamGrads g = ParamGrads::zeros_like(model);
  g.input_grad = mlp_backward_accumulate(model, cache, output_grad, g, at);
  return g;
}

// ---- batched passes: one sample per matrix row ----

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct BatchCache {
  std::vector<RowMatrix> inputs;  // per layer, already masked
  std::vector<RowMatrix> pre;
  std::vector<RowMatrix> post;
  std::vector<RowMatrix> masks;   // per hidden layer; 0x0 when no dropout
  std::uint64_t model_revision = 0;
  bool filled = false;
};

// Returns the dropout mask (rows x cols) for hidden layer `layer`, or 0x0.
using BatchMaskFn = std::function<RowMatrix(std::size_t layer, std::size_t rows, std::size_t cols)>;

namespace detail {

// Products and reductions run on Eigen-owned (fully aligned) storage only.
// Vectorised loops over a Map peel by the buffer's address, so results on
// std::vector storage would change in the last bits from run to run.
inline RowMatrix owned_weights(const DenseLayer& l) {
  return Eigen::Map<const RowMatrix>(l.weights.data.data(), static_cast<Eigen::Index>(l.out_dim()),
                                     static_cast<Eigen::Index>(l.in_dim()));
}

}  // namespace detail

inline RowMatrix sample_mask_matrix(std::size_t rows, std::size_t cols, double p, Rng& rng) {
  if (p <= 0.0) return {};
  RowMatrix m(rows, cols);
  const double keep = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform01(rng) >= p ? keep : 0.0;
  return m;
}

inline RowMatrix mlp_forward_batch(const MlpModel& model, RowMatrix x, const BatchMaskFn& mask_for, BatchCache& cache) {
  if (static_cast<std::size_t>(x.cols()) != model.in_dim()) {
    throw ShapeError("model expects input of length " + std::to_string(model.in_dim()) + ", got " +
                     std::to_string(x.cols()));
  }
  const std::size_t n = model.layers.size();
  cache = BatchCache{};
  cache.inputs.resize(n);
  cache.pre.resize(n);
  cache.post.resize(n);
  cache.masks.resize(n > 0 ? n - 1 : 0);
  for (std::size_t i = 0; i < n; ++i) {
    const DenseLayer& l = model.layers[i];
    const RowMatrix w = detail::owned_weights(l);
    const Eigen::RowVectorXd b = Eigen::Map<const Eigen::RowVectorXd>(l.bias.data.data(), static_cast<Eigen::Index>(l.out_dim()));
    cache.inputs[i] = std::move(x);
    RowMatrix pre = cache.inputs[i] * w.transpose();
    pre.rowwise() += b;
    RowMatrix post;
    switch (l.activation) {
      case Activation::ReLU: post = pre.cwiseMax(0.0); break;
      case Activation::Identity: post = pre; break;
      case Activation::Sigmoid: post = pre.unaryExpr([](double z) { return sigmoid(z); }); break;
    }
    x = post;
    if (i + 1 < n) {
      cache.masks[i] = mask_for(i, static_cast<std::size_t>(post.rows()), static_cast<std::size_t>(post.cols()));
      if (cache.masks[i].size() != 0) {
        if (cache.masks[i].rows() != post.rows() || cache.masks[i].cols() != post.cols()) {
          throw ShapeError("dropout mask shape mismatch");
        }
        x = x.cwiseProduct(cache.masks[i]);
      }
    }
    cache.pre[i] = std::move(pre);
    cache.post[i] = std::move(post);
  }
  cache.model_revision = model.revision;
  cache.filled = true;
  return x;
}

// Adds the batch's summed parameter gradients to acc; returns d(loss)/d(inputs).
inline RowMatrix mlp_backward_batch(const MlpModel& model, const BatchCache& cache, RowMatrix delta, ParamGrads& acc,
                                    GradAt at = GradAt::Output) {
  if (!cache.filled || cache.pre.size() != model.layers.size() || cache.model_revision != model.revision) {
    throw ContractError("stale or missing activation cache for backward pass");
  }
  if (static_cast<std::size_t>(delta.cols()) != model.out_dim() || delta.rows() != cache.pre.back().rows()) {
    throw ShapeError("output gradient shape does not match the batch");
  }
  for (std::size_t li = model.layers.size(); li-- > 0;) {
    const DenseLayer& l = model.layers[li];
    const bool last = li + 1 == model.layers.size();
    if (!last && cache.masks[li].size() != 0) delta = delta.cwiseProduct(cache.masks[li]);
    if (!(last && at == GradAt::PreActivation)) switch (l.activation) {
      case Activation::ReLU: delta = (cache.pre[li].array() > 0.0).select(delta, 0.0); break;
      case Activation::Identity: break;
      case Activation::Sigmoid: delta = delta.cwiseProduct(cache.post[li].cwiseProduct((1.0 - cache.post[li].array()).matrix())); break;
    }
    const auto out = static_cast<Eigen::Index>(l.out_dim());
    const auto in = static_cast<Eigen::Index>(l.in_dim());
    const RowMatrix gw = delta.transpose() * cache.inputs[li];
    const Eigen::RowVectorXd gb = delta.colwise().sum();
    Eigen::Map<RowMatrix>(acc.layers[li].weights.data.data(), out, in) += gw;
    Eigen::Map<Eigen::RowVectorXd>(acc.layers[li].bias.data.data(), out) += gb;
    RowMatrix next = delta * detail::owned_weights(l);
    delta = std::move(next);
  }
  return delta;
}

struct LossGrad {
  double loss;
  std::vector<double> grad;
};

inline LossGrad softmax_cross_entropy(std::span<const double> logits, std::size_t true_class) {
  if (true_class >= logits.size()) {
    throw ContractError("class index " + std::to_string(true_class) + " out of range for " +
                        std::to_string(logits.size()) + " logits");
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  const double log_z = std::log(z);
  LossGrad r{log_z - (logits[true_class] - mx), std::vector<double>(logits.size())};
  for (std::size_t i = 0; i < logits.size(); ++i) r.grad[i] = std::exp(logits[i] - mx - log_z);
  r.grad[true_class] -= 1.0;
  return r;
}

struct ScalarLoss {
  double loss;
  double grad;
};

// Binary cross-entropy on a probability; dscore = (s - t) / (s (1 - s)).
inline ScalarLoss bce_loss(double score, int target) {
  const double t = target != 0 ? 1.0 : 0.0;
  return {-(t * std::log(score) + (1.0 - t) * std::log1p(-score)),
          (score - t) / (score * (1.0 - score))};
}

// Same loss expressed on the logit z = sigmoid^-1(score); grad is dloss/dz.
// pos_weight scales the positive-target term.
inline ScalarLoss bce_with_logit(double z, int target, double pos_weight = 1.0) {
  if (target != 0) return {pos_weight * softplus(-z), pos_weight * (sigmoid(z) - 1.0)};
  return {softplus(z), sigmoid(z)};
}

struct SgdHyper {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

// One parameter block: g' = g + wd * p; v = m * v + g'; p -= lr * v.
inline void sgd_update(std::span<double> params, std::span<const double> grads, std::span<double> velocity,
                       const SgdHyper& h) {
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    throw ContractError("sgd_step: parameter, gradient and velocity sizes differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i] + h.weight_decay * params[i];
    velocity[i] = h.momentum * velocity[i] + g;
    params[i] -= h.learning_rate * velocity[i];
  }
}

struct SgdState {
  SgdHyper hyper;
  std::vector<LayerGrad> velocity;

  static SgdState for_model(const MlpModel& model, SgdHyper h = {}) {
    if (!(h.learning_rate > 0.0) || h.momentum < 0.0 || h.momentum >= 1.0 || h.weight_decay < 0.0) {
      throw ConfigError("SGD needs lr > 0, momentum in [0,1), weight decay >= 0");
    }
    SgdState s{h, {}};
    for (const auto& l : model.layers) s.velocity.push_back({Tensor(l.weights.shape), Tensor(l.bias.shape)});
    return s;
  }
};

inline void sgd_step(MlpModel& model, const ParamGrads& grads, SgdState& state) {
  if (grads.layers.size() != model.layers.size() || state.velocity.size() != model.layers.size()) {
    throw ContractError("sgd_step: gradient/velocity layer count does not match model");
  }
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    sgd_update(model.layers[i].weights.span(), grads.layers[i].weights.span(), state.velocity[i].weights.span(),
               state.hyper);
    sgd_update(model.layers[i].bias.span(), grads.layers[i].bias.span(), state.velocity[i].bias.span(),
               state.hyper);
  }
  ++model.revision;
}

// ---- finite-difference gradient checking ----

struct GradcheckOptions {
  double step = 1e-5;
  // Denominator floor so parameters with vanishing gradients compare absolutely.
  double abs_floor = 1e-6;
};

// Worst |analytic - numeric| / max(|numeric|, floor) over all listed parameters.
// loss() must evaluate the loss at the current parameter values.
inline double finite_difference_error(const std::vector<double*>& params, std::span<const double> analytic,
                                      const std::function<double()>& loss, const GradcheckOptions& opt = {}) {
  if (params.size() != analytic.size()) throw ContractError("gradcheck: parameter/gradient count mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    double& p = *params[i];
    const double saved = p;
    p = saved + opt.step;
    const double up = loss();
    p = saved - opt.step;
    const double down = loss();
    p = saved;
    const double numeric = (up - down) / (2.0 * opt.step);
    const double err = std::abs(analytic[i] - numeric) / std::max(std::abs(numeric), opt.abs_floor);
    worst = std::max(worst, err);
  }
  return worst;
}

inline std::vector<double*> parameter_pointers(MlpModel& model) {
  std::vector<double*> ptrs;
  for (auto& l : model.layers) {
    for (double& v : l.weights.data) ptrs.push_back(&v);
    for (double& v : l.bias.data) ptrs.push_back(&v);
  }
  return ptrs;
}

inline std::vector<double> flatten(const ParamGrads& g) {
  std::vector<double> out;
  for (const auto& l : g.layers) {
    out.insert(out.end(), l.weights.data.begin(), l.weights.data.end());
    out.insert(out.end(), l.bias.data.begin(), l.bias.data.end());
  }
  return out;
}

// Zero-initialised biases put every fully dropped row exactly on a ReLU kink,
// where central differences see half the slope. Gradchecks jitter them first.
inline void jitter_biases(MlpModel& model, Rng& rng, double sigma = 0.1) {
  for (auto& l : model.layers) {
    for (double& b : l.bias.data) b += sigma * standard_normal(rng);
  }
  ++model.revision;
}

using OutputLoss = std::function<LossGrad(std::span<const double>)>;

// Compares backprop against central differences under one fixed dropout mask
// sampled from seed. grad_scale lets tests corrupt the analytic gradient.
inline double gradcheck(MlpModel model, const OutputLoss& loss_fn, std::span<const double> input,
                        std::uint64_t seed, const GradcheckOptions& opt = {}, double grad_scale = 1.0) {
  Rng rng(seed);
  const DropoutMasks masks = sample_masks(model, rng);
  const ForwardResult fr = mlp_forward_masked(model, input, masks);
  const LossGrad lg = loss_fn(fr.output);
  ParamGrads grads = mlp_backward(model, fr.cache, lg.grad);
  grads.scale(grad_scale);
  const std::vector<double> analytic = flatten(grads);
  return finite_difference_error(parameter_pointers(model), analytic, [&] {
    return loss_fn(mlp_forward_masked(model, input, masks).output).loss;
  }, opt);
}

}  // namespace relnn
