#include "fednnu/seg_model.hpp"

#include <cmath>
#include <random>

#include "fednnu/error.hpp"
#include "fednnu/tensor_ops.hpp"

namespace fednnu {
namespace {

using K = LayerId::Kind;

// FNV-1a over region bits.
struct RegionHash {
  std::uint64_t h = 0xcbf29ce484222325ull;
  void add(std::uint8_t v) {
    h ^= v;
    h *= 0x100000001b3ull;
  }
};

Tensor hashed_leaky_relu(const Tensor& x, RegionHash& hash) {
  for (double v : x.values()) hash.add(v > 0.0 ? 1 : 0);
  return leaky_relu(x);
}

// Argmax rule of downsample2x_backward: first strict maximum in window order.
Tensor hashed_downsample(const Tensor& x, RegionHash& hash) {
  const std::size_t h = x.dim(2), w = x.dim(3);
  for (std::size_t p = 0; p < x.dim(0) * x.dim(1); ++p) {
    const double* src = x.data() + p * h * w;
    for (std::size_t y = 0; y + 1 < h; y += 2) {
      for (std::size_t c = 0; c + 1 < w; c += 2) {
        const std::size_t base = y * w + c;
        const std::size_t cand[4] = {base, base + 1, base + w, base + w + 1};
        std::uint8_t best = 0;
        for (std::uint8_t i = 1; i < 4; ++i) {
          if (src[cand[i]] > src[cand[best]]) best = i;
        }
        hash.add(best);
      }
    }
  }
  return downsample2x(x);
}

}  // namespace

SegModel::SegModel(TrainingPlan plan) : plan_(std::move(plan)) {
  plan_.validate();
  params_ = architecture(plan_);
}

StateDict SegModel::architecture(const TrainingPlan& plan) {
  const auto& f = plan.features_per_stage;
  const std::uint32_t s = plan.num_stages;
  StateDict sd;
  for (std::uint32_t i = 0; i < s; ++i) {
    const std::size_t in = i == 0 ? 1 : f[i - 1];
    sd.insert(LayerId::encoder(i, K::Weight), Tensor({f[i], in, 3, 3}));
    sd.insert(LayerId::encoder(i, K::Bias), Tensor({f[i]}));
  }
  for (std::uint32_t i = 0; i + 1 < s; ++i) {
    sd.insert(LayerId::decoder(i, K::Weight), Tensor({f[i], static_cast<std::size_t>(f[i + 1]) + f[i], 3, 3}));
    sd.insert(LayerId::decoder(i, K::Bias), Tensor({f[i]}));
  }
  sd.insert(LayerId::head(K::Weight), Tensor({1, f[0], 3, 3}));
  sd.insert(LayerId::head(K::Bias), Tensor({1}));
  return sd;
}

void SegModel::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  StateDict fresh = architecture(plan_);
  StateDict out(params_.node_id(), params_.round());
  for (const auto& [id, shape_only] : fresh.entries()) {
    Tensor t(shape_only.dims(), 0.0);
    if (id.kind() == K::Weight) {
      const double fan_in = static_cast<double>(t.dim(1) * t.dim(2) * t.dim(3));
      const double stddev = std::sqrt(2.0 / fan_in);
      for (auto& v : t.values()) v = stddev * gauss(rng);
    }
    out.insert(id, std::move(t));
  }
  params_ = std::move(out);
}

void SegModel::load(const StateDict& sd) {
  const StateDict expect = architecture(plan_);
  if (sd.size() != expect.size()) {
    throw ShapeError("state dict has " + std::to_string(sd.size()) + " layers, model needs " +
                     std::to_string(expect.size()));
  }
  for (std::size_t i = 0; i < sd.size(); ++i) {
    const auto& [id, t] = sd.entries()[i];
    const auto& [eid, et] = expect.entries()[i];
    if (!(id == eid) || t.dims() != et.dims()) {
      throw ShapeError("state dict layer " + id.str() + " " + shape_to_string(t.dims()) + " does not fit " +
                       eid.str() + " " + shape_to_string(et.dims()));
    }
  }
  params_ = sd;
}

Tape::Var SegModel::build(Tape& tape, const Tensor& input, std::vector<Tape::Var>* param_vars) const {
  const std::uint32_t s = plan_.num_stages;
  if (input.rank() != 4 || input.dim(1) != 1) {
    throw ShapeError("SegModel input must be [N,1,H,W], got " + shape_to_string(input.dims()));
  }
  const std::size_t step = std::size_t{1} << (s - 1);
  if (input.dim(2) % step != 0 || input.dim(3) % step != 0) {
    throw ShapeError("SegModel input " + shape_to_string(input.dims()) + " not divisible by " +
                     std::to_string(step));
  }

  std::vector<Tape::Var> vars;
  vars.reserve(params_.size());
  for (const auto& [id, t] : params_.entries()) {
    vars.push_back(param_vars != nullptr ? tape.parameter(t) : tape.constant(t));
  }
  // Canonical order: enc.0.w, enc.0.b, ..., dec.0.w, dec.0.b, ..., head.w, head.b
  auto enc = [&](std::uint32_t i, K k) { return vars[2 * i + (k == K::Bias ? 1 : 0)]; };
  auto dec = [&](std::uint32_t i, K k) { return vars[2 * s + 2 * i + (k == K::Bias ? 1 : 0)]; };
  const Tape::Var head_w = vars[vars.size() - 2];
  const Tape::Var head_b = vars[vars.size() - 1];

  std::vector<Tape::Var> skips(s);
  Tape::Var x = tape.constant(input);
  for (std::uint32_t i = 0; i < s; ++i) {
    if (i > 0) x = tape.downsample2x(x);
    x = tape.leaky_relu(tape.conv2d(x, enc(i, K::Weight), enc(i, K::Bias)));
    skips[i] = x;
  }
  for (std::uint32_t i = s - 1; i-- > 0;) {
    const Tape::Var up = tape.upsample2x(x);
    const Tape::Var cat = tape.concat_channels(up, skips[i]);
    x = tape.leaky_relu(tape.conv2d(cat, dec(i, K::Weight), dec(i, K::Bias)));
  }
  const Tape::Var logits = tape.conv2d(x, head_w, head_b);
  if (param_vars != nullptr) *param_vars = std::move(vars);
  return logits;
}

Tensor SegModel::forward(const Tensor& input) const {
  Tape tape;
  const auto logits = build(tape, input, nullptr);
  return tape.value(logits);
}

SegModel::LossAndGrad SegModel::loss_and_grad(const Tensor& input, const Tensor& target) const {
  Tape tape;
  std::vector<Tape::Var> vars;
  const auto logits = build(tape, input, &vars);
  const auto loss = tape.dice_bce_loss(logits, target);
  tape.backward(loss);
  LossAndGrad out;
  out.loss = tape.value(loss)[0];
  out.grad = StateDict(params_.node_id(), params_.round());
  for (std::size_t i = 0; i < vars.size(); ++i) out.grad.insert(params_.entries()[i].first, tape.grad(vars[i]));
  return out;
}

double SegModel::loss(const Tensor& input, const Tensor& target) const {
  return dice_bce_loss_value(forward(input), target);
}

double SegModel::loss(const Tensor& input, const Tensor& target, std::uint64_t& kink_signature) const {
  const std::uint32_t s = plan_.num_stages;
  const auto& e = params_.entries();
  auto enc_w = [&](std::uint32_t i) -> const Tensor& { return e[2 * i].second; };
  auto enc_b = [&](std::uint32_t i) -> const Tensor& { return e[2 * i + 1].second; };
  auto dec_w = [&](std::uint32_t i) -> const Tensor& { return e[2 * s + 2 * i].second; };
  auto dec_b = [&](std::uint32_t i) -> const Tensor& { return e[2 * s + 2 * i + 1].second; };
  RegionHash hash;
  std::vector<Tensor> skips(s);
  Tensor x = input;
  for (std::uint32_t i = 0; i < s; ++i) {
    if (i > 0) x = hashed_downsample(x, hash);
    x = hashed_leaky_relu(conv2d(x, enc_w(i), enc_b(i)), hash);
    skips[i] = x;
  }
  for (std::uint32_t i = s - 1; i-- > 0;) {
    x = hashed_leaky_relu(conv2d(concat_channels(upsample2x(x), skips[i]), dec_w(i), dec_b(i)), hash);
  }
  const Tensor logits = conv2d(x, e[e.size() - 2].second, e[e.size() - 1].second);
  kink_signature = hash.h;
  return dice_bce_loss_value(logits, target);
}

}  // namespace fednnu
