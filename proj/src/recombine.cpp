#include "stoc/recombine.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "stoc/common.hpp"

namespace stoc {

namespace {

torch::Tensor as_batch(const torch::Tensor& image) {
  if (image.dim() == 3) return image.unsqueeze(0);
  if (image.dim() == 4) return image;
  throw ConfigurationError("expected [C,H,W] or [B,C,H,W] image tensor");
}

}  // namespace

std::pair<torch::Tensor, torch::Tensor> AugmentedSupport::combined() const {
  if (synthetic.empty()) return {real_images, real_labels};
  std::vector<torch::Tensor> images{real_images};
  std::vector<int64_t> labels(real_labels.data_ptr<int64_t>(),
                              real_labels.data_ptr<int64_t>() + real_labels.numel());
  auto lab = real_labels.accessor<int64_t, 1>();
  for (const auto& s : synthetic) {
    images.push_back(s.pixels.unsqueeze(0));
    labels.push_back(lab[s.content_source]);
  }
  return {torch::cat(images), torch::tensor(labels, torch::kInt64)};
}

namespace {

// Skip features for U-Net configs: content-encoder features of the content
// source concatenated with style-encoder features of the style source,
// reordered deepest-first to match the decoder's block inputs.
std::vector<torch::Tensor> merge_skips(const std::vector<torch::Tensor>& content_feats,
                                       const std::vector<torch::Tensor>& style_feats) {
  std::vector<torch::Tensor> skips;
  for (size_t i = content_feats.size(); i-- > 0;)
    skips.push_back(torch::cat({content_feats[i], style_feats[i]}, 1));
  return skips;
}

}  // namespace

torch::Tensor recombine_batch(StocModel& model, const torch::Tensor& content_images,
                              const torch::Tensor& style_images) {
  torch::NoGradGuard ng;
  model.set_eval();
  auto xc = model.to_model_channels(as_batch(content_images));
  auto xs = model.to_model_channels(as_batch(style_images));
  auto [z_content, content_feats] = model.content->forward_with_features(xc);
  auto [post, style_feats] = model.style->forward_with_features(xs);
  std::vector<torch::Tensor> skips;
  if (model.cfg.use_unet_skips) skips = merge_skips(content_feats, style_feats);
  return model.to_data_channels(model.decoder->forward(z_content, post.mu, skips));
}

torch::Tensor recombine(StocModel& model, const torch::Tensor& content_image,
                        const torch::Tensor& style_image) {
  return recombine_batch(model, content_image, style_image).squeeze(0);
}

torch::Tensor sample_style_prior(const ModelConfig& cfg, int64_t count, torch::Generator& gen) {
  return torch::randn({count, cfg.style_dim}, gen);
}

torch::Tensor interpolate_style_batch(StocModel& model, const torch::Tensor& support_images,
                                      const torch::Tensor& donor_images, double alpha) {
  if (alpha < 0.0 || alpha > 1.0)
    throw RangeError("interpolation alpha must lie in [0,1], got " + std::to_string(alpha));
  torch::NoGradGuard ng;
  model.set_eval();
  auto support = model.to_model_channels(as_batch(support_images));
  auto donors = model.to_model_channels(as_batch(donor_images));
  auto [z_content, content_feats] = model.content->forward_with_features(support);
  auto [post_s, support_style_feats] = model.style->forward_with_features(support);
  auto post_d = model.style->forward(donors);
  auto mu = (1.0 - alpha) * post_s.mu + alpha * post_d.mu;
  auto log_var = (1.0 - alpha) * post_s.log_var + alpha * post_d.log_var;
  (void)log_var;  // inference decodes from the mean
  std::vector<torch::Tensor> skips;
  if (model.cfg.use_unet_skips) skips = merge_skips(content_feats, support_style_feats);
  return model.to_data_channels(model.decoder->forward(z_content, mu, skips));
}

torch::Tensor interpolate_style(StocModel& model, const torch::Tensor& support_image,
                                const torch::Tensor& donor_image, double alpha) {
  return interpolate_style_batch(model, support_image, donor_image, alpha).squeeze(0);
}

AugmentedSupport augment_support(StocModel& model, const torch::Tensor& support_images,
                                 const torch::Tensor& support_labels,
                                 const LabeledDataset& donor_pool, int64_t m, double alpha,
                                 std::mt19937_64& rng) {
  if (m < 0) throw RangeError("augment_support: m must be >= 0");
  AugmentedSupport out;
  out.real_images = as_batch(support_images);
  out.real_labels = support_labels;
  out.per_sample = m;
  if (m == 0) return out;
  if (donor_pool.size() == 0) throw SamplingError("augment_support: empty donor pool");

  const int64_t n = out.real_images.size(0);
  std::uniform_int_distribution<int64_t> pick(0, donor_pool.size() - 1);
  std::vector<int64_t> content_idx, donor_idx;
  content_idx.reserve(n * m);
  donor_idx.reserve(n * m);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) {
      content_idx.push_back(i);
      donor_idx.push_back(pick(rng));
    }
  auto contents = out.real_images.index_select(0, torch::tensor(content_idx, torch::kInt64));
  auto donors = donor_pool.images.index_select(0, torch::tensor(donor_idx, torch::kInt64));
  auto synth = interpolate_style_batch(model, contents, donors, alpha);
  for (int64_t k = 0; k < synth.size(0); ++k)
    out.synthetic.push_back(RecombinedImage{synth[k], content_idx[k], donor_idx[k], alpha});
  return out;
}

void write_image_png(const torch::Tensor& image, const std::string& path) {
  auto img = image.detach().to(torch::kFloat32).clamp(-1.0, 1.0);
  if (img.dim() != 3) throw ConfigurationError("write_image_png expects [C,H,W]");
  const int64_t c = img.size(0), h = img.size(1), w = img.size(2);
  auto bytes = ((img + 1.0f) * 127.5f).round().clamp(0, 255).to(torch::kUInt8);
  cv::Mat mat;
  if (c == 1) {
    mat = cv::Mat(static_cast<int>(h), static_cast<int>(w), CV_8UC1);
    std::memcpy(mat.data, bytes.contiguous().data_ptr(), h * w);
  } else if (c == 3) {
    // CHW RGB -> HWC BGR
    auto hwc = bytes.permute({1, 2, 0}).contiguous();
    cv::Mat rgb(static_cast<int>(h), static_cast<int>(w), CV_8UC3, hwc.data_ptr());
    cv::cvtColor(rgb, mat, cv::COLOR_RGB2BGR);
  } else {
    throw ConfigurationError("write_image_png supports 1 or 3 channels");
  }
  if (!cv::imwrite(path, mat)) throw Error("cannot write PNG: " + path);
}

void render_grid(StocModel& model, const torch::Tensor& content_row,
                 const torch::Tensor& style_column, const std::string& output_path) {
  auto contents = as_batch(content_row);
  auto styles = as_batch(style_column);
  if (contents.size(0) == 0 || styles.size(0) == 0)
    throw ConfigurationError("render_grid needs nonempty content row and style column");
  const int64_t cols = contents.size(0), rows = styles.size(0);
  const int64_t c = contents.size(1), h = contents.size(2), w = contents.size(3);

  // (rows+1) x (cols+1) cells; top-left corner stays blank (-1).
  auto canvas = torch::full({c, (rows + 1) * h, (cols + 1) * w}, -1.0f);
  const auto put = [&](int64_t r, int64_t col, const torch::Tensor& img) {
    canvas.slice(1, r * h, (r + 1) * h).slice(2, col * w, (col + 1) * w) = img;
  };
  for (int64_t j = 0; j < cols; ++j) put(0, j + 1, contents[j]);
  for (int64_t i = 0; i < rows; ++i) put(i + 1, 0, styles[i]);
  for (int64_t i = 0; i < rows; ++i) {
    auto style_rep = styles[i].unsqueeze(0).repeat({cols, 1, 1, 1});
    auto synth = recombine_batch(model, contents, style_rep);
    for (int64_t j = 0; j < cols; ++j) put(i + 1, j + 1, synth[j]);
  }
  write_image_png(canvas, output_path);
}

}  // namespace stoc
