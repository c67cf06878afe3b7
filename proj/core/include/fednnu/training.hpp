#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fednnu/federation.hpp"
#include "fednnu/image.hpp"
#include "fednnu/metrics.hpp"
#include "fednnu/seg_model.hpp"

namespace fednnu {

// Resamples cases onto the plan spacing and z-normalizes intensities with
// the plan statistics.
Dataset prepare_cases(std::span<const Case> cases, const TrainingPlan& plan);

// P x P crop (or zero pad) of a prepared case placed at (oy, ox); negative
// offsets pad, positive offsets crop.
void crop_into(const Case& c, std::size_t patch, std::ptrdiff_t oy, std::ptrdiff_t ox, double* image_out,
               double* mask_out);

inline constexpr double kGradClipNorm = 12.0;

// SGD with heavy-ball momentum: v <- mu v + g, theta <- theta - lr v. The
// gradient is first rescaled so its global L2 norm is at most clip_norm
// (clip_norm <= 0 disables clipping).
class SgdMomentum {
 public:
  explicit SgdMomentum(double momentum = 0.9, double clip_norm = kGradClipNorm)
      : momentum_(momentum), clip_norm_(clip_norm) {}
  void step(StateDict& params, const StateDict& grad, double lr);
  void reset() { velocity_ = StateDict(); }

 private:
  double momentum_;
  double clip_norm_;
  StateDict velocity_;
};

struct EpochStats {
  double mean_loss = 0.0;
  std::size_t batches = 0;
};

// One pass over `prepared` in seeded shuffle order, batches of
// plan.batch_size with seeded random P x P crops. Throws NumericError on a
// non-finite loss.
EpochStats train_epoch(SegModel& model, SgdMomentum& opt, std::span<const Case> prepared, double lr,
                       std::uint64_t seed);

// Window offsets along one axis for sliding-window inference: patch-sized
// windows at step patch / 2, first at 0 and last flush with the end. An
// extent below the patch gets one centered window.
std::vector<std::ptrdiff_t> window_offsets(std::size_t extent, std::size_t patch);

// Foreground probability map at the native resolution of `raw`: resamples to
// the plan spacing, blends patch-sized window predictions (cropped exactly as
// in training) with a Gaussian importance map and resamples back.
Image predict_probabilities(const SegModel& model, const Case& raw);
Mask predict_mask(const SegModel& model, const Case& raw);

enum class DistanceUnits { Physical, Pixels };

const char* to_string(DistanceUnits u);

struct EvalSummary {
  double dsc = 0.0;
  // Mean over cases with a defined HD95.
  double hd95 = 0.0;
  std::uint32_t hd95_undefined = 0;
  std::uint32_t n_eval = 0;
};

EvalSummary evaluate(const SegModel& model, std::span<const Case> raw_test, DistanceUnits units);

struct LearnerSettings {
  NodeId node_id = 0;
  std::uint64_t memory_budget = 8 * kGiB;
  double lr = 0.01;
  std::uint64_t seed = 0;
  bool shared_init = true;
  std::uint32_t epochs_per_round = 1;
};

std::uint64_t init_seed(const LearnerSettings& s);
std::uint64_t epoch_seed(std::uint64_t seed, NodeId node, std::uint64_t epoch);

// LocalLearner over the synthetic segmentation task.
class SegLearner : public LocalLearner {
 public:
  SegLearner(LearnerSettings settings, Dataset train);

  Fingerprint fingerprint() const override;
  std::uint32_t num_train_cases() const override { return static_cast<std::uint32_t>(train_.size()); }
  void configure(const GlobalFingerprint& fingerprint) override;
  void train_round(std::uint32_t round) override;
  StateDict state() const override;
  void load(const StateDict& sd) override;

  const TrainingPlan& plan() const;
  const SegModel& model() const;
  double last_loss() const { return last_loss_; }
  std::uint32_t rounds_trained() const { return rounds_trained_; }

 private:
  LearnerSettings settings_;
  Dataset train_;
  Dataset prepared_;
  std::optional<SegModel> model_;
  SgdMomentum opt_;
  std::uint64_t epochs_done_ = 0;
  std::uint32_t rounds_trained_ = 0;
  double last_loss_ = 0.0;
};

}  // namespace fednnu
