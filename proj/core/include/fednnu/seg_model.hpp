#pragma once

#include <cstdint>

#include "fednnu/autograd.hpp"
#include "fednnu/plan.hpp"
#include "fednnu/state_dict.hpp"

namespace fednnu {

// Encoder-decoder with skip connections built from a TrainingPlan.
//
//   enc.i : conv3x3(in -> F_i) + leaky ReLU, at resolution P / 2^i
//           (stage i > 0 starts with a 2x2 max pool)
//   dec.i : conv3x3(F_{i+1} + F_i -> F_i) + leaky ReLU on
//           concat(upsample(dec.{i+1} or enc.{last}), enc.i), i < stages-1
//   head  : conv3x3(F_0 -> 1), logits
class SegModel {
 public:
  explicit SegModel(TrainingPlan plan);

  const TrainingPlan& plan() const { return plan_; }
  const StateDict& parameters() const { return params_; }
  StateDict& parameters() { return params_; }

  // He-normal weights, zero biases, drawn in canonical layer order.
  void initialize(std::uint64_t seed);

  // Replaces parameters; ids and dims must match this architecture exactly.
  void load(const StateDict& sd);

  // Expected (id, dims) list for a plan.
  static StateDict architecture(const TrainingPlan& plan);

  // input [N,1,H,W] with H, W divisible by 2^(stages-1) -> logits [N,1,H,W].
  Tensor forward(const Tensor& input) const;

  struct LossAndGrad {
    double loss = 0.0;
    StateDict grad;
  };
  LossAndGrad loss_and_grad(const Tensor& input, const Tensor& target) const;
  double loss(const Tensor& input, const Tensor& target) const;
  // Same value; also hashes the piecewise-linear region of the forward pass
  // (every leaky ReLU sign and max-pool argmax) into `kink_signature`.
  double loss(const Tensor& input, const Tensor& target, std::uint64_t& kink_signature) const;

 private:
  // Records the network on `tape`; returns the logits node. Parameter nodes
  // are appended to `param_vars` in canonical order when non-null.
  Tape::Var build(Tape& tape, const Tensor& input, std::vector<Tape::Var>* param_vars) const;

  TrainingPlan plan_;
  StateDict params_;
};

}  // namespace fednnu
