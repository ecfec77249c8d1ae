#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "cdnet/dataset.hpp"
#include "cdnet/losses.hpp"
#include "cdnet/network.hpp"

namespace cdnet {

enum class LrMode {
  kCompound,  // lr = lr0 * factor^floor((epoch-1)/step): keeps decaying
  kInitial,   // lr = lr0 until the first milestone, then lr0 * factor forever
};

struct TrainConfig {
  double lr0 = 1e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int batch = 6;
  int epochs = 100;
  int lr_step = 20;           // epochs between decays
  double lr_factor = 0.1;
  double head_lr_mult = 10.0; // lr multiplier for non-encoder parameters
  LrMode lr_mode = LrMode::kCompound;
  uint64_t seed = 7;
  void validate() const;
};

// Learning rate for a 1-based epoch index.
double lr_at(const TrainConfig& cfg, int epoch);

struct StepLog {
  int64_t step = 0;   // 1-based global step
  int epoch = 0;      // 1-based
  double lr = 0.0;
  LossBreakdown losses;
};

struct TrainResult {
  std::vector<StepLog> log;
  int64_t steps = 0;
};

// Deterministic line format used for the on-disk loss log (full-precision
// doubles, so identical runs produce identical bytes).
std::string format_step_log(const StepLog& s);

class Trainer {
 public:
  Trainer(ChangeNet& model, TrainConfig cfg, LossConfig loss_cfg = {});

  const TrainConfig& config() const { return cfg_; }
  int64_t step() const { return step_; }
  void set_step(int64_t s) { step_ = s; }

  // Runs up to `max_steps` optimizer steps (or cfg.epochs full epochs when
  // max_steps < 0). Batches are drawn by deterministic shuffle; a trailing
  // batch of one sample is skipped (batch statistics need >= 2 values).
  // Optional augmentation applies random rotations/flips per draw.
  TrainResult train(const std::vector<SamplePair>& data, int64_t max_steps = -1,
                    std::ostream* log_stream = nullptr, bool augment_data = false);

  // One forward/backward/update on an explicit batch; returns the breakdown.
  LossBreakdown train_step(const std::vector<const SamplePair*>& batch);

  // SGD with momentum and decoupled weight decay at the given rate; all
  // persistent state is snapped to float32 after the update.
  void apply_sgd(double lr);

 private:
  ChangeNet& model_;
  TrainConfig cfg_;
  LossConfig loss_cfg_;
  int64_t step_ = 0;
  int epoch_ = 1;
  Rng data_rng_;
};

struct Prediction {
  std::string id;
  Tensor prob;     // [1,1,H,W] in [0,1]
  ImageU8 binary;  // thresholded mask {0,1}
};

// Eval-mode inference over the fused output. Threshold ties (prob == t)
// count as change, matching the ROC convention.
std::vector<Prediction> predict(ChangeNet& model,
                                const std::vector<SamplePair>& pairs,
                                double threshold = 0.5);

}  // namespace cdnet
