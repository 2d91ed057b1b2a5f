#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vgs/checkpoint.hpp"
#include "vgs/model.hpp"
#include "vgs/tensor.hpp"

namespace vgs {

struct TrainConfig {
  std::size_t epochs = 15;
  std::size_t batch_size = 16;
  double learning_rate = 2e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  bool shuffle = true;
  std::size_t checkpoint_every = 0;  // epochs; 0 writes only the final model
  double grad_clip_norm = 2.0;       // <= 0 disables clipping
  int threads = 1;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

/// One aligned training pair: utterance MFCC matrix and its image features.
struct TrainItem {
  Tensor mfcc;
  Tensor image;
};

/// Held-out retrieval set scored after every epoch.
struct EvalSet {
  std::vector<Tensor> utterances;
  std::vector<std::size_t> gold;  // index into images
  std::vector<Tensor> images;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_r_at_1 = 0.0;
  double val_r_at_5 = 0.0;
  double val_r_at_10 = 0.0;
  double val_median_rank = 0.0;
  bool has_val = false;
  double wall_time_s = 0.0;

  std::string to_json() const;  // one JSON-lines record
};

using TrainLog = std::vector<EpochRecord>;

/// One Adam update from the gradients currently held by `params`. Applies
/// global-norm clipping first when configured, then the bias-corrected
/// update; increments state.step.
void adam_step(ParamCollection& params, TrainState& state, const TrainConfig& cfg);

/// Fresh zeroed optimizer state matching the parameter table.
TrainState init_train_state(const ParamCollection& params);

/// Mini-batch training. Pairs are shuffled with a seed derived per epoch, so
/// resuming from `state` (epochs_done > 0) replays exactly the schedule an
/// uninterrupted run would have used. The last ragged batch is kept when it
/// still holds >= 2 pairs, otherwise dropped. When out_dir is nonempty,
/// writes ckpt_epoch_NNNN.vgsc per checkpoint_every, model_final.vgsc, and
/// train_log.jsonl.
TrainLog train(Model& model, const std::vector<TrainItem>& pairs, const EvalSet* val,
               const TrainConfig& cfg, TrainState& state, const std::string& out_dir = "");

}  // namespace vgs
