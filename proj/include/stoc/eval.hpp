#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stoc/datasets.hpp"
#include "stoc/models.hpp"
#include "stoc/recombine.hpp"

namespace stoc {

struct EvalReport {
  std::string protocol;
  std::vector<double> per_episode;
  double mean = 0.0;
  double stderr_ = 0.0;
  std::string config_snapshot;

  void finalize();  // recomputes mean/stderr from per_episode
  void write(const std::string& path) const;
};

// --------------------------------------------------------------------------
// NEST: train a classifier purely on synthesized images, test on natural
// ones. Score is the mean probability assigned to the correct class.

struct NestOptions {
  int64_t train_steps = 20000;
  int64_t batch_size = 40;
  bool style_from_prior = false;
  double learning_rate = 2e-4;
  uint64_t seed = 0;
};

struct NestResult {
  double mean_correct_prob = 0.0;
  torch::Tensor per_sample_probs;  // [n_test] float64
};

NestResult nest_evaluate(StocModel& model, const LabeledDataset& train_ds,
                         const LabeledDataset& test_ds, const NestOptions& options);

// Per-class prototype content codes, stacked [class_count, content_dim].
// CC: the one-hot vector per class. CE-family: embedding of the instance
// minimizing summed squared distance to its classmates.
torch::Tensor class_prototypes(StocModel& model, const LabeledDataset& train_ds);

// Paired two-tailed t-test over per-sample scores; returns (t, p). The
// p-value uses the normal approximation to the t distribution, adequate at
// the protocol's thousands of degrees of freedom.
std::pair<double, double> paired_t_test(const torch::Tensor& a, const torch::Tensor& b);

// --------------------------------------------------------------------------
// Episodic few-shot with weighted softmax over squared embedding distances.

struct EpisodeSpec {
  int64_t n = 20;             // classes per episode
  int64_t k = 1;              // support samples per class
  int64_t m = 0;              // augmentations per support sample
  int64_t episode_count = 400;
  double alpha = 0.5;         // style-interpolation coefficient
};

struct FewShotWeights {
  double w_s = 0.85;
  double temperature = 0.05;

  double w_a(int64_t m) const { return m > 0 ? (1.0 - w_s) / static_cast<double>(m) : 0.0; }
};

// `model` supplies the content encoder; its decoder is used only when
// spec.m > 0 (the m = 0 baseline needs no decoder).
EvalReport episodic_fewshot_eval(StocModel& model, const LabeledDataset& target_ds,
                                 const LabeledDataset& source_ds, const EpisodeSpec& spec,
                                 const FewShotWeights& weights, uint64_t seed);

// Weighted class scores for one episode; exposed for the normalization and
// single-class properties. Returns [n_query, n_classes] unnormalized scores.
torch::Tensor fewshot_class_scores(const torch::Tensor& query_emb,
                                   const torch::Tensor& support_emb,
                                   const torch::Tensor& support_labels,
                                   const torch::Tensor& support_weights, int64_t n_classes,
                                   double temperature);

// --------------------------------------------------------------------------
// Scratch classifiers trained on the (augmented) support set.

struct ScratchOptions {
  int64_t n_classes = 0;
  int64_t m = 0;                 // augmentations available per support sample
  double alpha = 0.5;
  std::vector<double> mix_ratios = {1.0, 2.0, 4.0};  // synthetic:real per minibatch
  int64_t batch_size = 64;
  int64_t max_epochs = 40;
  int64_t patience = 5;
  double learning_rate = 2e-4;
  uint64_t seed = 0;
};

struct ScratchResult {
  double test_accuracy = 0.0;
  double chosen_mix_ratio = 0.0;
  int64_t chosen_epochs = 0;
};

// `stoc` may be null when options.m == 0 (pure baseline). Support is split
// 75/25 into train/validation; epochs and mix ratio are chosen on the
// validation part; accuracy is reported on the query set.
ScratchResult train_scratch_classifier(StocModel* stoc, const torch::Tensor& support_images,
                                       const torch::Tensor& support_labels,
                                       const LabeledDataset& donor_pool,
                                       const torch::Tensor& query_images,
                                       const torch::Tensor& query_labels,
                                       const ScratchOptions& options);

// --------------------------------------------------------------------------
// Style -> content probe (one hidden layer on concat(mu, log_var)).

struct StyleProbeOptions {
  int64_t hidden_dim = 100;
  int64_t epochs = 10;
  int64_t batch_size = 256;
  double learning_rate = 1e-3;
  uint64_t seed = 0;
};

double style_probe(StocModel& model, const LabeledDataset& train_ds,
                   const LabeledDataset& test_ds, const StyleProbeOptions& options);

}  // namespace stoc
