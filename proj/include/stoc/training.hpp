#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "stoc/config.hpp"
#include "stoc/datasets.hpp"
#include "stoc/eval.hpp"
#include "stoc/losses.hpp"
#include "stoc/models.hpp"

namespace stoc {

struct BatchSpec {
  int64_t classes_per_batch = 10;
  int64_t samples_per_class = 4;
  bool subsample_negatives = false;

  int64_t batch_size() const { return classes_per_batch * samples_per_class; }
};

struct OptimizerSpec {
  std::string name = "adam";
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
};

struct TrainConfig {
  ModelConfig model;
  LossWeights weights;
  OptimizerSpec optimizer;
  int64_t epochs = 10;              // style/decoder phase
  int64_t content_epochs = 30;      // content pre-training cap
  int64_t patience = 10;            // early stopping on validation loss
  BatchSpec batch_spec;             // style/decoder phase
  BatchSpec content_batch_spec;     // content pre-training
  int64_t bin_count = 128;
  int64_t critic_steps = 5;         // critic updates per generator update
  int64_t cpn_steps = 1;            // CPN updates per style update
  int64_t steps_per_epoch = 0;      // 0: derived from dataset size
  uint64_t seed = 0;

  void validate() const;
  static TrainConfig from_config(const Config& cfg);
  Config to_config() const;
};

// Self-describing checkpoint: config, parameters and buffers for every
// network present, optimizer state, RNG state, epoch counter and validation
// history, behind a version tag.
struct Checkpoint {
  static constexpr int64_t kFormatVersion = 1;

  TrainConfig config;
  StocModel model;
  int64_t epoch = 0;
  bool content_frozen = false;
  std::vector<double> validation_history;
  torch::Tensor rng_state;
  // serialized optimizer states, keyed by role
  std::map<std::string, std::string> optimizer_blobs;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

// Phase 1: pre-train the content encoder (histogram loss for CE-family,
// cross-entropy for CC), early-stopped on the validation metric, then freeze.
Checkpoint train_content_encoder(const TrainConfig& config, const LabeledDataset& train_ds,
                                 const LabeledDataset& val_ds, MetricsLog* log = nullptr);

// Phase 2: train style encoder + decoder (+ CPN / critic) with the frozen
// content encoder, dispatching on the variant. Selects the epoch with the
// best validation total.
Checkpoint train_stoc(const TrainConfig& config, const Checkpoint& content_ckpt,
                      const LabeledDataset& train_ds, const LabeledDataset& val_ds,
                      MetricsLog* log = nullptr);

// Validation total of the variant's objective on deterministic batches.
double validation_loss(StocModel& model, const TrainConfig& config, const LabeledDataset& val_ds,
                       uint64_t seed);

// 1-NN accuracy in content-embedding space (validation metric for the
// pre-trained encoder).
double nearest_neighbor_accuracy(StocModel& model, const LabeledDataset& train_ds,
                                 const LabeledDataset& val_ds, int64_t max_train = 4000,
                                 int64_t max_val = 2000);

struct SweepRow {
  double value = 0.0;
  double nest_score = 0.0;
};
struct SweepReport {
  std::string axis;
  std::vector<SweepRow> rows;

  void write(const std::string& path) const;
};

// Trains one model per value of the named LossWeights field and scores each
// with NEST on the validation set. The content checkpoint is shared.
SweepReport sweep_weights(const TrainConfig& base_config, const std::string& axis,
                          const std::vector<double>& values, const Checkpoint& content_ckpt,
                          const LabeledDataset& train_ds, const LabeledDataset& val_ds,
                          const NestOptions& nest_options, MetricsLog* log = nullptr);

// Sets the named weight field; throws ConfigurationError for unknown names.
void set_weight_axis(LossWeights& weights, const std::string& axis, double value);

}  // namespace stoc
