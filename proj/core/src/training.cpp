#include "fednnu/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fednnu/error.hpp"
#include "fednnu/resample.hpp"

namespace fednnu {
namespace {

double norm_scale(const TrainingPlan& plan) { return plan.intensity_std > 1e-8 ? plan.intensity_std : 1.0; }

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

Dataset prepare_cases(std::span<const Case> cases, const TrainingPlan& plan) {
  Dataset out;
  out.reserve(cases.size());
  const double scale = norm_scale(plan);
  for (const auto& c : cases) {
    Case r = resample_case(c, plan.target_spacing);
    for (auto& v : r.image.pixels) v = (v - plan.intensity_mean) / scale;
    out.push_back(std::move(r));
  }
  return out;
}

void crop_into(const Case& c, std::size_t patch, std::ptrdiff_t oy, std::ptrdiff_t ox, double* image_out,
               double* mask_out) {
  const auto h = static_cast<std::ptrdiff_t>(c.image.height);
  const auto w = static_cast<std::ptrdiff_t>(c.image.width);
  for (std::size_t y = 0; y < patch; ++y) {
    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + oy;
    for (std::size_t x = 0; x < patch; ++x) {
      const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) + ox;
      const bool inside = sy >= 0 && sy < h && sx >= 0 && sx < w;
      const std::size_t o = y * patch + x;
      image_out[o] = inside ? c.image(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx)) : 0.0;
      mask_out[o] = inside ? static_cast<double>(c.mask(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx)))
                           : 0.0;
    }
  }
}

void SgdMomentum::step(StateDict& params, const StateDict& grad, double lr) {
  if (velocity_.empty()) {
    velocity_ = StateDict();
    for (const auto& [id, t] : params.entries()) velocity_.insert(id, Tensor(t.dims(), 0.0));
  }
  double scale = 1.0;
  if (clip_norm_ > 0.0) {
    double sq = 0.0;
    for (const auto& [id, g] : grad.entries()) {
      for (double v : g.values()) sq += v * v;
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
    if (norm > clip_norm_) scale = clip_norm_ / norm;
  }
  for (const auto& [id, g] : grad.entries()) {
    Tensor* p = params.find(id);
    Tensor* v = velocity_.find(id);
    if (p == nullptr || v == nullptr || p->dims() != g.dims() || v->dims() != g.dims()) {
      throw ShapeError("optimizer state does not match layer " + id.str());
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      (*v)[i] = momentum_ * (*v)[i] + scale * g[i];
      (*p)[i] -= lr * (*v)[i];
    }
  }
}

EpochStats train_epoch(SegModel& model, SgdMomentum& opt, std::span<const Case> prepared, double lr,
                       std::uint64_t seed) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw UsageError("learning rate must be finite and >= 0");
  if (prepared.empty()) throw UsageError("train_epoch: no training cases");
  const TrainingPlan& plan = model.plan();
  const std::size_t patch = plan.patch_size[0];
  const std::size_t batch = std::max<std::size_t>(1, plan.batch_size);

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(prepared.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  EpochStats stats;
  double total = 0.0;
  for (std::size_t start = 0; start < order.size(); start += batch) {
    const std::size_t n = std::min(batch, order.size() - start);
    Tensor input({n, 1, patch, patch});
    Tensor target({n, 1, patch, patch});
    for (std::size_t b = 0; b < n; ++b) {
      const Case& c = prepared[order[start + b]];
      auto offset = [&](std::size_t extent) -> std::ptrdiff_t {
        const auto e = static_cast<std::ptrdiff_t>(extent);
        const auto p = static_cast<std::ptrdiff_t>(patch);
        const std::ptrdiff_t lo = std::min<std::ptrdiff_t>(0, e - p);
        const std::ptrdiff_t hi = std::max<std::ptrdiff_t>(0, e - p);
        return lo + static_cast<std::ptrdiff_t>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
      };
      const std::ptrdiff_t oy = offset(c.image.height);
      const std::ptrdiff_t ox = offset(c.image.width);
      crop_into(c, patch, oy, ox, input.data() + b * patch * patch, target.data() + b * patch * patch);
    }
    auto lg = model.loss_and_grad(input, target);
    if (!std::isfinite(lg.loss)) {
      throw NumericError("non-finite loss at batch " + std::to_string(stats.batches));
    }
    opt.step(model.parameters(), lg.grad, lr);
    total += lg.loss;
    ++stats.batches;
  }
  stats.mean_loss = total / static_cast<double>(stats.batches);
  return stats;
}

std::vector<std::ptrdiff_t> window_offsets(std::size_t extent, std::size_t patch) {
  if (extent <= patch) return {(static_cast<std::ptrdiff_t>(extent) - static_cast<std::ptrdiff_t>(patch)) / 2};
  const std::size_t span = extent - patch;
  const std::size_t steps = (span + patch / 2 - 1) / (patch / 2);
  std::vector<std::ptrdiff_t> out;
  for (std::size_t i = 0; i <= steps; ++i) {
    out.push_back(static_cast<std::ptrdiff_t>(std::lround(static_cast<double>(span) * static_cast<double>(i) /
                                                          static_cast<double>(steps))));
  }
  return out;
}

Image predict_probabilities(const SegModel& model, const Case& raw) {
  const TrainingPlan& plan = model.plan();
  const Dataset one = prepare_cases(std::span<const Case>(&raw, 1), plan);
  const Case& c = one.front();
  const std::size_t patch = plan.patch_size[0];
  const std::size_t h = c.image.height, w = c.image.width;

  // Gaussian importance map, sigma = patch / 8, peak 1.
  std::vector<double> weight(patch * patch);
  const double sigma = static_cast<double>(patch) / 8.0;
  const double mid = (static_cast<double>(patch) - 1.0) / 2.0;
  for (std::size_t y = 0; y < patch; ++y) {
    for (std::size_t x = 0; x < patch; ++x) {
      const double dy = static_cast<double>(y) - mid, dx = static_cast<double>(x) - mid;
      weight[y * patch + x] = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
    }
  }

  Image acc(h, w), norm(h, w);
  Tensor input({1, 1, patch, patch}), unused({1, 1, patch, patch});
  for (std::ptrdiff_t oy : window_offsets(h, patch)) {
    for (std::ptrdiff_t ox : window_offsets(w, patch)) {
      crop_into(c, patch, oy, ox, input.data(), unused.data());
      const Tensor logits = model.forward(input);
      for (std::size_t y = 0; y < patch; ++y) {
        const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + oy;
        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t x = 0; x < patch; ++x) {
          const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) + ox;
          if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
          const double z = logits.at(0, 0, y, x);
          const double p = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
          const double wt = weight[y * patch + x];
          acc(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx)) += wt * p;
          norm(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx)) += wt;
        }
      }
    }
  }
  Image prob(h, w);
  for (std::size_t i = 0; i < prob.size(); ++i) prob.pixels[i] = acc.pixels[i] / norm.pixels[i];
  return resample_bilinear(prob, raw.image.height, raw.image.width);
}

Mask predict_mask(const SegModel& model, const Case& raw) {
  const Image prob = predict_probabilities(model, raw);
  Mask m(prob.height, prob.width);
  for (std::size_t i = 0; i < prob.size(); ++i) m.pixels[i] = prob.pixels[i] > 0.5 ? 1 : 0;
  return m;
}

const char* to_string(DistanceUnits u) { return u == DistanceUnits::Physical ? "mm" : "pixels"; }

EvalSummary evaluate(const SegModel& model, std::span<const Case> raw_test, DistanceUnits units) {
  EvalSummary s;
  double dsc_sum = 0.0, hd_sum = 0.0;
  std::uint32_t hd_n = 0;
  for (const auto& c : raw_test) {
    const Mask pred = predict_mask(model, c);
    dsc_sum += dsc(pred, c.mask);
    const Spacing sp = units == DistanceUnits::Physical ? c.spacing : Spacing{1.0, 1.0};
    const Hd95 hd = hd95(pred, c.mask, sp);
    if (hd.defined) {
      hd_sum += hd.value;
      ++hd_n;
    } else {
      ++s.hd95_undefined;
    }
    ++s.n_eval;
  }
  if (s.n_eval > 0) s.dsc = dsc_sum / s.n_eval;
  if (hd_n > 0) s.hd95 = hd_sum / hd_n;
  return s;
}

std::uint64_t init_seed(const LearnerSettings& s) { return s.shared_init ? s.seed : s.seed ^ s.node_id; }

std::uint64_t epoch_seed(std::uint64_t seed, NodeId node, std::uint64_t epoch) {
  return mix(mix(seed) ^ mix(0x51ed270b00000000ull + node) ^ epoch);
}

SegLearner::SegLearner(LearnerSettings settings, Dataset train) : settings_(settings), train_(std::move(train)) {
  if (train_.empty()) throw UsageError("node " + std::to_string(settings_.node_id) + " has no training cases");
  if (settings_.epochs_per_round == 0) throw UsageError("epochs_per_round must be >= 1");
}

Fingerprint SegLearner::fingerprint() const { return extract_fingerprint(train_); }

void SegLearner::configure(const GlobalFingerprint& fingerprint) {
  TrainingPlan plan = make_plan(fingerprint, settings_.memory_budget);
  model_.emplace(plan);
  model_->initialize(init_seed(settings_));
  prepared_ = prepare_cases(train_, plan);
  opt_.reset();
  epochs_done_ = 0;
  rounds_trained_ = 0;
}

void SegLearner::train_round(std::uint32_t) {
  if (!model_) throw UsageError("learner trained before configure()");
  for (std::uint32_t e = 0; e < settings_.epochs_per_round; ++e) {
    last_loss_ = train_epoch(*model_, opt_, prepared_, settings_.lr, epoch_seed(settings_.seed, settings_.node_id,
                                                                                 epochs_done_++))
                     .mean_loss;
  }
  ++rounds_trained_;
}

StateDict SegLearner::state() const {
  StateDict sd = model().parameters();
  sd.set_node_id(settings_.node_id);
  sd.set_round(rounds_trained_);
  return sd;
}

void SegLearner::load(const StateDict& sd) { model_.value().load(sd); }

const TrainingPlan& SegLearner::plan() const { return model().plan(); }

const SegModel& SegLearner::model() const {
  if (!model_) throw UsageError("learner not configured");
  return *model_;
}

}  // namespace fednnu
