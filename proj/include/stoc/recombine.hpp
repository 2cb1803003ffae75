#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

#include "stoc/datasets.hpp"
#include "stoc/models.hpp"

namespace stoc {

struct RecombinedImage {
  torch::Tensor pixels;          // dataset channels, [-1, 1]
  int64_t content_source = -1;   // index into the support/content set
  int64_t style_source = -1;     // index into the donor pool, -1 for prior
  double alpha = 1.0;            // 1 = pure external style
};

struct AugmentedSupport {
  torch::Tensor real_images;     // T_s
  torch::Tensor real_labels;
  std::vector<RecombinedImage> synthetic;  // T_a, m entries per support sample
  int64_t per_sample = 0;        // m

  // T_sa: real followed by synthetic, with parallel labels.
  std::pair<torch::Tensor, torch::Tensor> combined() const;
};

// Decode content of one image with the posterior-mean style of another.
// Inference is deterministic: no posterior sampling. Single images are
// [C, H, W]; batched forms take [B, C, H, W] and pair row-wise.
torch::Tensor recombine(StocModel& model, const torch::Tensor& content_image,
                        const torch::Tensor& style_image);
torch::Tensor recombine_batch(StocModel& model, const torch::Tensor& content_images,
                              const torch::Tensor& style_images);

// z^s ~ N(0, I) of style_dim.
torch::Tensor sample_style_prior(const ModelConfig& cfg, int64_t count, torch::Generator& gen);

// Decode content of `support_image` with style mu/log_var linearly
// interpolated between its own posterior (alpha = 0) and the donor's
// (alpha = 1).
torch::Tensor interpolate_style(StocModel& model, const torch::Tensor& support_image,
                                const torch::Tensor& donor_image, double alpha);
torch::Tensor interpolate_style_batch(StocModel& model, const torch::Tensor& support_images,
                                      const torch::Tensor& donor_images, double alpha);

// m stylistic variations per support sample, donors drawn uniformly from
// `donor_pool`, style interpolation at fixed `alpha`.
AugmentedSupport augment_support(StocModel& model, const torch::Tensor& support_images,
                                 const torch::Tensor& support_labels,
                                 const LabeledDataset& donor_pool, int64_t m, double alpha,
                                 std::mt19937_64& rng);

// Figure-style grid: first row = content sources, first column = style
// sources, cell (i, j) = recombine(content_j, style_i). Writes a PNG with
// pixels mapped from [-1, 1] to [0, 255].
void render_grid(StocModel& model, const torch::Tensor& content_row,
                 const torch::Tensor& style_column, const std::string& output_path);

// [-1,1] float tensor [C,H,W] -> 8-bit PNG on disk.
void write_image_png(const torch::Tensor& image, const std::string& path);

}  // namespace stoc
