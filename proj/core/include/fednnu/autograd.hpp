#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "fednnu/tensor.hpp"

namespace fednnu {

// Reverse-mode differentiation over a linear recording of operations.
// Each op appends a node holding its forward value and a closure that
// propagates the node's gradient into its inputs. backward() walks the
// recording in reverse, so gradients are accumulated in a fixed order.
class Tape {
 public:
  using Var = std::size_t;

  Var constant(Tensor value);
  Var parameter(Tensor value);

  Var conv2d(Var input, Var kernel, Var bias);
  Var leaky_relu(Var input);
  Var downsample2x(Var input);
  Var upsample2x(Var input);
  Var concat_channels(Var a, Var b);

  // Soft-Dice (foreground, batch-pooled) plus mean binary cross-entropy on
  // logits. Returns a scalar [1] node.
  Var dice_bce_loss(Var logits, const Tensor& target);

  void backward(Var scalar);

  const Tensor& value(Var v) const { return nodes_.at(v).value; }
  // Gradient w.r.t. a node; zero-filled tensor if no gradient reached it.
  const Tensor& grad(Var v) const { return nodes_.at(v).grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    std::function<void(Tape&, Var)> backward;
  };

  Var push(Tensor value, bool needs_grad, std::function<void(Tape&, Var)> backward);
  void accumulate(Var v, const Tensor& g);

  std::vector<Node> nodes_;
};

inline constexpr double kDiceSmooth = 1e-5;

// Forward-only value of the same loss, for finite differences and eval.
double dice_bce_loss_value(const Tensor& logits, const Tensor& target);

}  // namespace fednnu
