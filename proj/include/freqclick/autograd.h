#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "freqclick/tensor.h"

namespace freqclick {

// A named trainable (or buffer) tensor owned by a ParamSet.
//
// Complex parameters store interleaved (re, im) pairs in a trailing axis of
// extent 2, which is the std::complex memory layout; the optimizer treats them
// as plain reals.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;
  bool complex = false;
};

template <typename T>
class ParamSet {
 public:
  ParamSet() = default;
  ParamSet(const ParamSet&) = delete;
  ParamSet& operator=(const ParamSet&) = delete;
  ParamSet(ParamSet&&) noexcept = default;
  ParamSet& operator=(ParamSet&&) noexcept = default;

  Parameter<T>& add(std::string name, Tensor<T> init, bool trainable = true, bool complex = false);
  Parameter<T>* find(const std::string& name);
  const Parameter<T>* find(const std::string& name) const;
  Parameter<T>& get(const std::string& name);

  // Definition order.
  std::vector<Parameter<T>*> all();
  std::vector<const Parameter<T>*> all() const;
  std::vector<Parameter<T>*> trainable();

  void zero_grad();
  std::size_t size() const { return params_.size(); }
  std::size_t trainable_count() const;

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
};

template <typename T>
class Tape;

// Handle to a node on a Tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Reverse-mode gradient tape. Nodes are appended in evaluation order, which is
// a topological order; backward walks them once in reverse.
//
// Single owner; not thread-safe.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var<T> constant(Tensor<T> value);
  // Leaf whose gradient is kept on the tape (read it with grad()).
  Var<T> variable(Tensor<T> value);
  // Leaf bound to a parameter; backward accumulates into param.grad.
  Var<T> param(Parameter<T>& p);

  const Tensor<T>& value(Var<T> v) const { return nodes_[v.id].value; }
  bool requires_grad(Var<T> v) const { return nodes_[v.id].requires_grad; }

  // Gradient of the most recent backward() for a node (zeros if unreached).
  Tensor<T> grad(Var<T> v) const;

  // Throws ContractError unless `loss` holds exactly one element.
  void backward(Var<T> loss);

  std::size_t size() const { return nodes_.size(); }

  // Op-author interface.
  Var<T> push(Tensor<T> value, bool requires_grad, BackwardFn backward);
  // Gradient buffer of node `id`, allocated as zeros on first use.
  Tensor<T>& grad_ref(int id);

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
  };

  bool grad_enabled_;
  std::vector<Node> nodes_;
};

// Differentiable operations. Spatial tensors are [B, H, W, C].
namespace ag {

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, T s);
template <typename T>
Var<T> relu(Var<T> a);
template <typename T>
Var<T> sum(Var<T> a);
template <typename T>
Var<T> mean(Var<T> a);

// y = x . W + b along the last axis. W: [C_in, C_out], b: [C_out].
template <typename T>
Var<T> dense(Var<T> x, Var<T> weight, Var<T> bias);

// x: [B,H,W,C_in], weight: [KH,KW,C_in,C_out], bias: [C_out]; zero padding.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, int stride, int pad);

// x: [B,H,W,C], weight: [KH,KW,C], bias: [C]; stride 1, zero padding KH/2.
template <typename T>
Var<T> depthwise_conv2d(Var<T> x, Var<T> weight, Var<T> bias);

// Statistics per (sample, channel group) over H, W and the group's channels.
template <typename T>
Var<T> group_norm(Var<T> x, Var<T> gamma, Var<T> beta, int groups, T eps);

struct BatchNormOptions {
  bool training = true;
  double momentum = 0.1;
  double eps = 1e-5;
};

// Per-channel normalization over B, H, W. In training mode batch statistics
// are used and the running buffers are updated; otherwise the running
// buffers are used as constants.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, Parameter<T>& running_mean,
                  Parameter<T>& running_var, const BatchNormOptions& opt);

// Channels [begin, end) of the last axis.
template <typename T>
Var<T> slice_channels(Var<T> x, std::size_t begin, std::size_t end);
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts);

// Bilinear resize of H, W with half-pixel centers (align_corners = false).
template <typename T>
Var<T> resize_bilinear(Var<T> x, std::size_t out_h, std::size_t out_w);

// Mean per-row cross-entropy of softmax(logits) against integer labels.
// logits: [..., K]; labels: one entry per row, each in [0, K).
template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels);

}  // namespace ag

// Non-recording forward helpers shared with ops.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);

}  // namespace freqclick
