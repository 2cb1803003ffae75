#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

namespace stoc {

enum class Variant { CC, CE, PM, LF };
enum class Arch { MnistSmall, ResnetOmniglot, ResnetVgg };

Variant variant_from_string(const std::string& s);
std::string to_string(Variant v);
Arch arch_from_string(const std::string& s);
std::string to_string(Arch a);

struct ModelConfig {
  Variant variant = Variant::CE;
  Arch arch = Arch::MnistSmall;
  int64_t content_dim = 50;
  int64_t style_dim = 50;
  bool use_unet_skips = false;
  bool use_wgan = false;
  int64_t image_size = 28;
  int64_t in_channels = 1;

  // Channels the decoder emits. The resnet decoder is fixed at 3 (RGB); the
  // mnist decoder matches in_channels.
  int64_t decoder_channels() const;
  // Throws ConfigurationError when dimensions violate the per-arch contract.
  void validate() const;

  static ModelConfig mnist(Variant v);
  static ModelConfig resnet_omniglot(Variant v, int64_t image_size = 32);

  std::string to_json() const;
  static ModelConfig from_json(const std::string& json_text);
};

// Batch renormalization (2-D feature maps). Correction factors r and d are
// clipped, with the clip bounds ramped from (1, 0) to (r_max, d_max) over
// `ramp_steps` training steps.
struct BatchRenorm2dImpl : torch::nn::Module {
  explicit BatchRenorm2dImpl(int64_t channels, double momentum = 0.01, double eps = 1e-5,
                             double r_max = 3.0, double d_max = 5.0, int64_t ramp_steps = 1000);
  torch::Tensor forward(const torch::Tensor& x);

  torch::Tensor weight, bias, running_mean, running_var, steps;
  double momentum_, eps_, r_max_, d_max_;
  int64_t ramp_steps_;
};
TORCH_MODULE(BatchRenorm2d);

// Residual block of three 3x3 convolutions with an additive skip. Optional
// stride-2 downsampling in the first conv (skip path gets a 1x1 projection).
// Normalization is batch renorm for encoders/decoder, layer norm (GroupNorm
// with one group) for the WGAN critic.
struct ResBlockImpl : torch::nn::Module {
  ResBlockImpl(int64_t in_ch, int64_t out_ch, int64_t stride, bool layer_norm);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr}, proj{nullptr};
  std::vector<BatchRenorm2d> renorms;
  std::vector<torch::nn::GroupNorm> lnorms;
  bool layer_norm_ = false;
  bool has_proj = false;

 private:
  torch::Tensor apply_norm(size_t i, const torch::Tensor& x);
};
TORCH_MODULE(ResBlock);

// Content encoder. CE/PM/LF heads L2-normalize; CC applies softmax.
struct ContentEncoderImpl : torch::nn::Module {
  explicit ContentEncoderImpl(const ModelConfig& cfg);
  // Same trunk with an arbitrary head width; used for classifiers that share
  // the content-encoder architecture (softmax head, no dim contract).
  ContentEncoderImpl(const ModelConfig& cfg, int64_t out_dim, bool softmax_head);
  torch::Tensor forward(const torch::Tensor& images);
  // Also returns per-block feature maps (before downsampling) for U-Net use.
  std::pair<torch::Tensor, std::vector<torch::Tensor>> forward_with_features(
      const torch::Tensor& images);

  ModelConfig cfg;
  torch::nn::Sequential mnist_backbone{nullptr};
  torch::nn::Conv2d stem{nullptr};
  std::vector<ResBlock> blocks;
  torch::nn::Linear head{nullptr};
};
TORCH_MODULE(ContentEncoder);

struct StylePosterior {
  torch::Tensor mu;
  torch::Tensor log_var;
};

struct StyleEncoderImpl : torch::nn::Module {
  explicit StyleEncoderImpl(const ModelConfig& cfg);
  StylePosterior forward(const torch::Tensor& images);
  std::pair<StylePosterior, std::vector<torch::Tensor>> forward_with_features(
      const torch::Tensor& images);

  ModelConfig cfg;
  torch::nn::Sequential mnist_backbone{nullptr};
  torch::nn::Conv2d stem{nullptr};
  std::vector<ResBlock> blocks;
  torch::nn::Linear head{nullptr};
};
TORCH_MODULE(StyleEncoder);

// z^s = mu + exp(log_var / 2) * noise
torch::Tensor reparameterize(const StylePosterior& post, const torch::Tensor& noise);

struct DecoderImpl : torch::nn::Module {
  explicit DecoderImpl(const ModelConfig& cfg);
  // `skips` must be provided iff cfg.use_unet_skips; entries are the
  // channel-concatenated content+style encoder features per block level,
  // deepest first.
  torch::Tensor forward(const torch::Tensor& z_content, const torch::Tensor& z_style,
                        const std::vector<torch::Tensor>& skips = {});

  ModelConfig cfg;
  torch::nn::Linear seed{nullptr};
  // mnist path
  torch::nn::ConvTranspose2d up1{nullptr}, up2{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr};
  torch::nn::Conv2d out_conv{nullptr};
  // resnet path
  std::vector<ResBlock> blocks;
  std::vector<torch::nn::Conv2d> up_convs;
  int64_t seed_spatial = 0, seed_channels = 0;
};
TORCH_MODULE(Decoder);

// Content prediction net: one hidden layer of 100 units, leaky ReLU.
struct CpnImpl : torch::nn::Module {
  explicit CpnImpl(const ModelConfig& cfg);
  torch::Tensor forward(const StylePosterior& post);

  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(Cpn);

// WGAN-GP critic: encoder-shaped net with layer normalization, scalar output.
struct CriticImpl : torch::nn::Module {
  explicit CriticImpl(const ModelConfig& cfg);
  torch::Tensor forward(const torch::Tensor& images);

  ModelConfig cfg;
  torch::nn::Sequential mnist_backbone{nullptr};
  torch::nn::Conv2d stem{nullptr};
  std::vector<ResBlock> blocks;
  torch::nn::Linear head{nullptr};
};
TORCH_MODULE(Critic);

// The full model bundle. The critic/cpn members exist only for the configs
// that use them.
struct StocModel {
  ModelConfig cfg;
  ContentEncoder content{nullptr};
  StyleEncoder style{nullptr};
  Decoder decoder{nullptr};
  Cpn cpn{nullptr};
  Critic critic{nullptr};

  static StocModel build(const ModelConfig& cfg);

  void set_eval();
  void set_train();
  // Replicates single-channel inputs to 3 channels for the resnet archs and
  // leaves mnist inputs untouched.
  torch::Tensor to_model_channels(const torch::Tensor& images) const;
  // Collapses decoder RGB back to the dataset's channel count by averaging.
  torch::Tensor to_data_channels(const torch::Tensor& images) const;
};

// Total element count over all parameters.
int64_t parameter_count(const torch::nn::Module& m);
// FNV-1a hash over the raw bytes of every parameter, in name order.
uint64_t parameter_checksum(const torch::nn::Module& m);
// Marks every parameter non-trainable.
void freeze(torch::nn::Module& m);

}  // namespace stoc
