#include "fednnu/autograd.hpp"

#include <cmath>
#include <utility>

#include "fednnu/error.hpp"
#include "fednnu/tensor_ops.hpp"

namespace fednnu {
namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Value of soft-Dice + BCE; fills grad (same size as logits) when non-null.
double dice_bce(const Tensor& logits, const Tensor& target, Tensor* grad) {
  if (logits.dims() != target.dims()) {
    throw ShapeError("loss: logits " + shape_to_string(logits.dims()) + " vs target " +
                     shape_to_string(target.dims()));
  }
  const std::size_t m = logits.size();
  std::vector<double> p(m);
  double bce = 0.0, inter = 0.0, sum_p = 0.0, sum_t = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double z = logits[i];
    const double t = target[i];
    p[i] = sigmoid(z);
    bce += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
    inter += p[i] * t;
    sum_p += p[i];
    sum_t += t;
  }
  const double inv_m = 1.0 / static_cast<double>(m);
  const double denom = sum_p + sum_t + kDiceSmooth;
  const double dice = (2.0 * inter + kDiceSmooth) / denom;
  const double loss = bce * inv_m + (1.0 - dice);
  if (grad != nullptr) {
    *grad = Tensor(logits.dims());
    const double num = 2.0 * inter + kDiceSmooth;
    const double denom2 = denom * denom;
    for (std::size_t i = 0; i < m; ++i) {
      const double t = target[i];
      const double ddice_dp = (2.0 * t * denom - num) / denom2;
      (*grad)[i] = (p[i] - t) * inv_m - ddice_dp * p[i] * (1.0 - p[i]);
    }
  }
  return loss;
}

}  // namespace

double dice_bce_loss_value(const Tensor& logits, const Tensor& target) {
  return dice_bce(logits, target, nullptr);
}

Tape::Var Tape::push(Tensor value, bool needs_grad, std::function<void(Tape&, Var)> backward) {
  Node node;
  node.value = std::move(value);
  node.needs_grad = needs_grad;
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

void Tape::accumulate(Var v, const Tensor& g) {
  Node& node = nodes_[v];
  if (!node.needs_grad) return;
  if (node.grad.empty()) {
    node.grad = g;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) node.grad[i] += g[i];
}

Tape::Var Tape::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Tape::Var Tape::parameter(Tensor value) { return push(std::move(value), true, nullptr); }

Tape::Var Tape::conv2d(Var input, Var kernel, Var bias) {
  const bool ng = nodes_[input].needs_grad || nodes_[kernel].needs_grad || nodes_[bias].needs_grad;
  Tensor out = fednnu::conv2d(value(input), value(kernel), value(bias));
  return push(std::move(out), ng, [input, kernel, bias](Tape& tape, Var self) {
    auto g = conv2d_backward(tape.value(input), tape.value(kernel), tape.nodes_[self].grad);
    tape.accumulate(input, g.input);
    tape.accumulate(kernel, g.kernel);
    tape.accumulate(bias, g.bias);
  });
}

Tape::Var Tape::leaky_relu(Var input) {
  Tensor out = fednnu::leaky_relu(value(input));
  return push(std::move(out), nodes_[input].needs_grad, [input](Tape& tape, Var self) {
    tape.accumulate(input, leaky_relu_backward(tape.value(input), tape.nodes_[self].grad));
  });
}

Tape::Var Tape::downsample2x(Var input) {
  Tensor out = fednnu::downsample2x(value(input));
  return push(std::move(out), nodes_[input].needs_grad, [input](Tape& tape, Var self) {
    tape.accumulate(input, downsample2x_backward(tape.value(input), tape.nodes_[self].grad));
  });
}

Tape::Var Tape::upsample2x(Var input) {
  Tensor out = fednnu::upsample2x(value(input));
  return push(std::move(out), nodes_[input].needs_grad, [input](Tape& tape, Var self) {
    tape.accumulate(input, upsample2x_backward(tape.nodes_[self].grad));
  });
}

Tape::Var Tape::concat_channels(Var a, Var b) {
  Tensor out = fednnu::concat_channels(value(a), value(b));
  const std::size_t ca = value(a).dim(1);
  return push(std::move(out), nodes_[a].needs_grad || nodes_[b].needs_grad, [a, b, ca](Tape& tape, Var self) {
    auto [ga, gb] = split_channels(tape.nodes_[self].grad, ca);
    tape.accumulate(a, ga);
    tape.accumulate(b, gb);
  });
}

Tape::Var Tape::dice_bce_loss(Var logits, const Tensor& target) {
  Tensor g;
  const double loss = dice_bce(value(logits), target, &g);
  return push(Tensor({1}, std::vector<double>{loss}), nodes_[logits].needs_grad,
              [logits, g = std::move(g)](Tape& tape, Var self) {
                Tensor scaled = g;
                const double upstream = tape.nodes_[self].grad[0];
                if (upstream != 1.0) {
                  for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] *= upstream;
                }
                tape.accumulate(logits, scaled);
              });
}

void Tape::backward(Var scalar) {
  if (value(scalar).size() != 1) throw UsageError("backward() needs a scalar node");
  for (auto& n : nodes_) n.grad = Tensor();
  nodes_[scalar].grad = Tensor({1}, 1.0);
  for (Var v = scalar + 1; v-- > 0;) {
    Node& node = nodes_[v];
    if (!node.needs_grad || !node.backward) continue;
    if (node.grad.empty()) continue;
    node.backward(*this, v);
  }
  for (auto& n : nodes_) {
    if (n.grad.empty()) n.grad = Tensor(n.value.dims());
  }
}

}  // namespace fednnu
