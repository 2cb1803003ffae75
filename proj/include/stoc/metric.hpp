#pragma once

#include <torch/torch.h>

#include <string>
#include <utility>
#include <vector>

#include "stoc/datasets.hpp"

namespace stoc {

// Cosine similarity clamped to [-1, 1]. Throws on a zero vector.
torch::Tensor cosine_similarity(const torch::Tensor& a, const torch::Tensor& b);

// Row-wise cosine similarity between embeddings[i] and embeddings[j] for each
// index pair; stays differentiable w.r.t. the embeddings.
torch::Tensor pairwise_cosine(const torch::Tensor& embeddings,
                              const std::vector<std::pair<int64_t, int64_t>>& pairs);

// Differentiable soft histogram over [-1, 1] with `bin_count` evenly spaced
// nodes. Each value splits unit mass linearly between its two bracketing
// nodes; total mass is 1. Input values must already lie in [-1, 1].
torch::Tensor build_soft_histogram(const torch::Tensor& values, int64_t bin_count);

// Node positions for a bin count (shared by both histograms of a loss).
torch::Tensor histogram_nodes(int64_t bin_count);

// Overlap functional: sum_r h_neg[r] * cumsum(h_pos)[r]. In [0, 1].
torch::Tensor histogram_overlap_loss(const torch::Tensor& h_pos, const torch::Tensor& h_neg);

// Overlap of the soft histograms of two similarity sets.
torch::Tensor histogram_loss_from_similarities(const torch::Tensor& pos_sims,
                                               const torch::Tensor& neg_sims, int64_t bin_count);

// Full histogram loss: cosine similarities over P+/P-, soft histograms,
// overlap. `embeddings` is [N, d]; rows must be unit norm.
torch::Tensor histogram_loss(const torch::Tensor& embeddings, const PairBatch& pairs,
                             int64_t bin_count);

// Index of the class prototype: argmin_i sum_{j != i} ||e_i - e_j||^2,
// ties broken by lowest index. `embeddings` is [n, d], n >= 1.
int64_t select_prototype(const torch::Tensor& embeddings);

// Embedding export: `class_id, instance_id, v_1 ... v_d` per row.
void export_embeddings(const std::string& path, const LabeledDataset& ds,
                       const torch::Tensor& embeddings);

}  // namespace stoc
