#include "stoc/models.hpp"

#include <nlohmann/json.hpp>

#include "stoc/common.hpp"

namespace stoc {

namespace {

constexpr double kLeakySlope = 0.2;

torch::Tensor leaky(const torch::Tensor& x) {
  return torch::leaky_relu(x, kLeakySlope);
}

int64_t encoder_filters(const ModelConfig& cfg) {
  return cfg.arch == Arch::ResnetVgg ? 64 : 48;
}

torch::nn::Sequential make_mnist_backbone(int64_t in_channels) {
  using namespace torch::nn;
  return Sequential(
      Conv2d(Conv2dOptions(in_channels, 64, 5).stride(2).padding(2)), BatchNorm2d(64),
      LeakyReLU(LeakyReLUOptions().negative_slope(kLeakySlope)),
      Conv2d(Conv2dOptions(64, 64, 5).stride(2).padding(2)), BatchNorm2d(64),
      LeakyReLU(LeakyReLUOptions().negative_slope(kLeakySlope)), Flatten());
}

}  // namespace

Variant variant_from_string(const std::string& s) {
  if (s == "cc" || s == "CC") return Variant::CC;
  if (s == "ce" || s == "CE") return Variant::CE;
  if (s == "pm" || s == "PM") return Variant::PM;
  if (s == "lf" || s == "LF") return Variant::LF;
  throw ConfigurationError("unknown variant '" + s + "'; expected one of {cc, ce, pm, lf}");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::CC: return "cc";
    case Variant::CE: return "ce";
    case Variant::PM: return "pm";
    case Variant::LF: return "lf";
  }
  return "?";
}

Arch arch_from_string(const std::string& s) {
  if (s == "mnist_small") return Arch::MnistSmall;
  if (s == "resnet_omniglot") return Arch::ResnetOmniglot;
  if (s == "resnet_vgg") return Arch::ResnetVgg;
  throw ConfigurationError("unknown arch '" + s +
                           "'; expected one of {mnist_small, resnet_omniglot, resnet_vgg}");
}

std::string to_string(Arch a) {
  switch (a) {
    case Arch::MnistSmall: return "mnist_small";
    case Arch::ResnetOmniglot: return "resnet_omniglot";
    case Arch::ResnetVgg: return "resnet_vgg";
  }
  return "?";
}

int64_t ModelConfig::decoder_channels() const {
  return arch == Arch::MnistSmall ? in_channels : 3;
}

void ModelConfig::validate() const {
  switch (arch) {
    case Arch::MnistSmall: {
      const int64_t expected_content = variant == Variant::CC ? 10 : 50;
      if (content_dim != expected_content)
        throw ConfigurationError("mnist_small " + to_string(variant) + " requires content_dim " +
                                 std::to_string(expected_content));
      if (style_dim != 50) throw ConfigurationError("mnist_small requires style_dim 50");
      if (image_size != 28) throw ConfigurationError("mnist_small requires 28x28 inputs");
      break;
    }
    case Arch::ResnetOmniglot:
      if (content_dim != 100 || style_dim != 100)
        throw ConfigurationError("resnet_omniglot requires content_dim = style_dim = 100");
      break;
    case Arch::ResnetVgg:
      if (content_dim != 200 || style_dim != 600)
        throw ConfigurationError("resnet_vgg requires content_dim 200, style_dim 600");
      break;
  }
  if (use_unet_skips && arch != Arch::ResnetVgg)
    throw ConfigurationError("U-Net skips are only supported with resnet_vgg");
  if (image_size % 4 != 0 && arch != Arch::MnistSmall)
    throw ConfigurationError("resnet archs require image_size divisible by 4");
}

ModelConfig ModelConfig::mnist(Variant v) {
  ModelConfig cfg;
  cfg.variant = v;
  cfg.arch = Arch::MnistSmall;
  cfg.content_dim = v == Variant::CC ? 10 : 50;
  cfg.style_dim = 50;
  cfg.image_size = 28;
  cfg.in_channels = 1;
  return cfg;
}

ModelConfig ModelConfig::resnet_omniglot(Variant v, int64_t image_size) {
  ModelConfig cfg;
  cfg.variant = v;
  cfg.arch = Arch::ResnetOmniglot;
  cfg.content_dim = 100;
  cfg.style_dim = 100;
  cfg.image_size = image_size;
  cfg.in_channels = 1;
  cfg.use_wgan = true;
  return cfg;
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["variant"] = to_string(variant);
  j["arch"] = to_string(arch);
  j["content_dim"] = content_dim;
  j["style_dim"] = style_dim;
  j["use_unet_skips"] = use_unet_skips;
  j["use_wgan"] = use_wgan;
  j["image_size"] = image_size;
  j["in_channels"] = in_channels;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& json_text) {
  const auto j = nlohmann::json::parse(json_text);
  ModelConfig cfg;
  cfg.variant = variant_from_string(j.at("variant").get<std::string>());
  cfg.arch = arch_from_string(j.at("arch").get<std::string>());
  cfg.content_dim = j.at("content_dim").get<int64_t>();
  cfg.style_dim = j.at("style_dim").get<int64_t>();
  cfg.use_unet_skips = j.at("use_unet_skips").get<bool>();
  cfg.use_wgan = j.at("use_wgan").get<bool>();
  cfg.image_size = j.at("image_size").get<int64_t>();
  cfg.in_channels = j.at("in_channels").get<int64_t>();
  return cfg;
}

// ---------------------------------------------------------------------------
// BatchRenorm2d

BatchRenorm2dImpl::BatchRenorm2dImpl(int64_t channels, double momentum, double eps, double r_max,
                                     double d_max, int64_t ramp_steps)
    : momentum_(momentum), eps_(eps), r_max_(r_max), d_max_(d_max), ramp_steps_(ramp_steps) {
  weight = register_parameter("weight", torch::ones({channels}));
  bias = register_parameter("bias", torch::zeros({channels}));
  running_mean = register_buffer("running_mean", torch::zeros({channels}));
  running_var = register_buffer("running_var", torch::ones({channels}));
  steps = register_buffer("steps", torch::zeros({1}, torch::kInt64));
}

torch::Tensor BatchRenorm2dImpl::forward(const torch::Tensor& x) {
  const auto view = [&](const torch::Tensor& t) { return t.view({1, -1, 1, 1}); };
  if (is_training()) {
    auto mean_b = x.mean({0, 2, 3});
    auto var_b = x.var({0, 2, 3}, /*unbiased=*/false);
    auto std_b = (var_b + eps_).sqrt();
    auto std_r = (running_var + eps_).sqrt();
    const double ramp =
        std::min(1.0, static_cast<double>(steps.item<int64_t>()) / static_cast<double>(ramp_steps_));
    const double r_cap = 1.0 + (r_max_ - 1.0) * ramp;
    const double d_cap = d_max_ * ramp;
    auto r = (std_b / std_r).detach().clamp(1.0 / r_cap, r_cap);
    auto d = ((mean_b - running_mean) / std_r).detach().clamp(-d_cap, d_cap);
    auto x_hat = (x - view(mean_b)) / view(std_b) * view(r) + view(d);
    {
      torch::NoGradGuard ng;
      running_mean += momentum_ * (mean_b.detach() - running_mean);
      running_var += momentum_ * (var_b.detach() - running_var);
      steps += 1;
    }
    return view(weight) * x_hat + view(bias);
  }
  auto x_hat = (x - view(running_mean)) / view((running_var + eps_).sqrt());
  return view(weight) * x_hat + view(bias);
}

// ---------------------------------------------------------------------------
// ResBlock

ResBlockImpl::ResBlockImpl(int64_t in_ch, int64_t out_ch, int64_t stride, bool layer_norm)
    : layer_norm_(layer_norm) {
  using torch::nn::Conv2dOptions;
  conv1 = register_module("conv1",
                          torch::nn::Conv2d(Conv2dOptions(in_ch, out_ch, 3).stride(stride).padding(1)));
  conv2 = register_module("conv2", torch::nn::Conv2d(Conv2dOptions(out_ch, out_ch, 3).padding(1)));
  conv3 = register_module("conv3", torch::nn::Conv2d(Conv2dOptions(out_ch, out_ch, 3).padding(1)));
  has_proj = stride != 1 || in_ch != out_ch;
  if (has_proj)
    proj = register_module("proj", torch::nn::Conv2d(Conv2dOptions(in_ch, out_ch, 1).stride(stride)));
  for (int i = 0; i < 3; ++i) {
    if (layer_norm_) {
      lnorms.push_back(register_module("ln" + std::to_string(i),
                                       torch::nn::GroupNorm(torch::nn::GroupNormOptions(1, out_ch))));
    } else {
      renorms.push_back(register_module("brn" + std::to_string(i), BatchRenorm2d(out_ch)));
    }
  }
}

torch::Tensor ResBlockImpl::apply_norm(size_t i, const torch::Tensor& x) {
  return layer_norm_ ? lnorms[i]->forward(x) : renorms[i]->forward(x);
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) {
  auto h = apply_norm(0, leaky(conv1->forward(x)));
  h = apply_norm(1, leaky(conv2->forward(h)));
  h = apply_norm(2, leaky(conv3->forward(h)));
  auto skip = has_proj ? proj->forward(x) : x;
  return h + skip;
}

// ---------------------------------------------------------------------------
// Encoders

namespace {

// Shared resnet encoder trunk: stem conv, then three blocks downsampling
// between them (strides 1, 2, 2).
struct ResnetTrunk {
  torch::nn::Conv2d stem{nullptr};
  std::vector<ResBlock> blocks;

  static ResnetTrunk build(torch::nn::Module& owner, int64_t in_ch, int64_t filters,
                           bool layer_norm) {
    ResnetTrunk t;
    t.stem = owner.register_module(
        "stem", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_ch, filters, 3).padding(1)));
    const int64_t strides[3] = {1, 2, 2};
    for (int i = 0; i < 3; ++i)
      t.blocks.push_back(owner.register_module("block" + std::to_string(i),
                                               ResBlock(filters, filters, strides[i], layer_norm)));
    return t;
  }

  std::pair<torch::Tensor, std::vector<torch::Tensor>> forward(const torch::Tensor& x) {
    auto h = leaky(stem->forward(x));
    std::vector<torch::Tensor> features;
    for (auto& b : blocks) {
      h = b->forward(h);
      features.push_back(h);
    }
    return {h.flatten(1), features};
  }
};

int64_t resnet_feature_dim(const ModelConfig& cfg) {
  const int64_t s = cfg.image_size / 4;
  return encoder_filters(cfg) * s * s;
}

}  // namespace

ContentEncoderImpl::ContentEncoderImpl(const ModelConfig& config)
    : ContentEncoderImpl((config.validate(), config), config.content_dim,
                         config.variant == Variant::CC) {}

ContentEncoderImpl::ContentEncoderImpl(const ModelConfig& config, int64_t out_dim,
                                       bool softmax_head)
    : cfg(config) {
  cfg.content_dim = out_dim;
  cfg.variant = softmax_head ? Variant::CC : cfg.variant;
  if (cfg.arch == Arch::MnistSmall) {
    mnist_backbone = register_module("backbone", make_mnist_backbone(cfg.in_channels));
    const int64_t feat = 64 * (cfg.image_size / 4) * (cfg.image_size / 4);
    head = register_module("head", torch::nn::Linear(feat, out_dim));
  } else {
    auto trunk = ResnetTrunk::build(*this, 3, encoder_filters(cfg), /*layer_norm=*/false);
    stem = trunk.stem;
    blocks = trunk.blocks;
    head = register_module("head", torch::nn::Linear(resnet_feature_dim(cfg), out_dim));
  }
}

std::pair<torch::Tensor, std::vector<torch::Tensor>> ContentEncoderImpl::forward_with_features(
    const torch::Tensor& images) {
  torch::Tensor flat;
  std::vector<torch::Tensor> features;
  if (cfg.arch == Arch::MnistSmall) {
    flat = mnist_backbone->forward(images);
  } else {
    ResnetTrunk trunk{stem, blocks};
    std::tie(flat, features) = trunk.forward(images);
  }
  auto out = head->forward(flat);
  if (cfg.variant == Variant::CC) return {torch::softmax(out, 1), features};
  return {out / (out.norm(2, 1, /*keepdim=*/true) + 1e-12), features};
}

torch::Tensor ContentEncoderImpl::forward(const torch::Tensor& images) {
  return forward_with_features(images).first;
}

StyleEncoderImpl::StyleEncoderImpl(const ModelConfig& config) : cfg(config) {
  cfg.validate();
  if (cfg.arch == Arch::MnistSmall) {
    mnist_backbone = register_module("backbone", make_mnist_backbone(cfg.in_channels));
    const int64_t feat = 64 * (cfg.image_size / 4) * (cfg.image_size / 4);
    head = register_module("head", torch::nn::Linear(feat, 2 * cfg.style_dim));
  } else {
    auto trunk = ResnetTrunk::build(*this, 3, encoder_filters(cfg), /*layer_norm=*/false);
    stem = trunk.stem;
    blocks = trunk.blocks;
    head = register_module("head", torch::nn::Linear(resnet_feature_dim(cfg), 2 * cfg.style_dim));
  }
}

std::pair<StylePosterior, std::vector<torch::Tensor>> StyleEncoderImpl::forward_with_features(
    const torch::Tensor& images) {
  torch::Tensor flat;
  std::vector<torch::Tensor> features;
  if (cfg.arch == Arch::MnistSmall) {
    flat = mnist_backbone->forward(images);
  } else {
    ResnetTrunk trunk{stem, blocks};
    std::tie(flat, features) = trunk.forward(images);
  }
  auto out = head->forward(flat);
  auto halves = out.chunk(2, 1);
  return {StylePosterior{halves[0], halves[1]}, features};
}

StylePosterior StyleEncoderImpl::forward(const torch::Tensor& images) {
  return forward_with_features(images).first;
}

torch::Tensor reparameterize(const StylePosterior& post, const torch::Tensor& noise) {
  if (noise.sizes() != post.mu.sizes())
    throw ConfigurationError("reparameterize: noise shape must match mu");
  return post.mu + (post.log_var / 2).exp() * noise;
}

// ---------------------------------------------------------------------------
// Decoder

DecoderImpl::DecoderImpl(const ModelConfig& config) : cfg(config) {
  cfg.validate();
  using torch::nn::Conv2dOptions;
  const int64_t latent = cfg.content_dim + cfg.style_dim;
  if (cfg.arch == Arch::MnistSmall) {
    seed_spatial = 6;
    seed_channels = 32;
    seed = register_module("seed", torch::nn::Linear(latent, seed_channels * 6 * 6));
    // 6 -> 13 -> 28
    up1 = register_module("up1", torch::nn::ConvTranspose2d(
                                     torch::nn::ConvTranspose2dOptions(32, 64, 5).stride(2).padding(1)));
    bn1 = register_module("bn1", torch::nn::BatchNorm2d(64));
    up2 = register_module(
        "up2", torch::nn::ConvTranspose2d(
                   torch::nn::ConvTranspose2dOptions(64, 64, 5).stride(2).padding(1).output_padding(1)));
    bn2 = register_module("bn2", torch::nn::BatchNorm2d(64));
    out_conv = register_module("out_conv",
                               torch::nn::Conv2d(Conv2dOptions(64, cfg.decoder_channels(), 3).padding(1)));
  } else {
    const int64_t filters = 64;
    seed_spatial = cfg.image_size / 4;
    seed_channels = filters;
    seed = register_module("seed",
                           torch::nn::Linear(latent, seed_channels * seed_spatial * seed_spatial));
    // Mirror of the encoder: block at s/4, upsample, block at s/2, upsample,
    // block at s. U-Net skips (content+style features, deepest first) are
    // concatenated at each block input.
    const int64_t skip_ch = cfg.use_unet_skips ? 2 * encoder_filters(cfg) : 0;
    for (int i = 0; i < 3; ++i) {
      blocks.push_back(register_module("block" + std::to_string(i),
                                       ResBlock(filters + skip_ch, filters, 1, /*layer_norm=*/false)));
      if (i < 2)
        up_convs.push_back(register_module(
            "up" + std::to_string(i), torch::nn::Conv2d(Conv2dOptions(filters, filters, 3).padding(1))));
    }
    out_conv = register_module("out_conv",
                               torch::nn::Conv2d(Conv2dOptions(filters, cfg.decoder_channels(), 3).padding(1)));
  }
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& z_content, const torch::Tensor& z_style,
                                   const std::vector<torch::Tensor>& skips) {
  if (z_content.size(1) != cfg.content_dim || z_style.size(1) != cfg.style_dim)
    throw ConfigurationError("decoder latent dimension mismatch");
  if (cfg.use_unet_skips != !skips.empty())
    throw ConfigurationError(cfg.use_unet_skips ? "decoder requires U-Net skip features"
                                                : "decoder does not accept skip features");
  auto z = torch::cat({z_content, z_style}, 1);
  auto h = seed->forward(z).view({-1, seed_channels, seed_spatial, seed_spatial});
  if (cfg.arch == Arch::MnistSmall) {
    h = leaky(bn1->forward(up1->forward(h)));
    h = leaky(bn2->forward(up2->forward(h)));
    return torch::tanh(out_conv->forward(h));
  }
  for (size_t i = 0; i < blocks.size(); ++i) {
    if (cfg.use_unet_skips) h = torch::cat({h, skips.at(i)}, 1);
    h = blocks[i]->forward(h);
    if (i < up_convs.size()) {
      h = torch::upsample_nearest2d(h, {h.size(2) * 2, h.size(3) * 2});
      h = leaky(up_convs[i]->forward(h));
    }
  }
  return torch::tanh(out_conv->forward(h));
}

// ---------------------------------------------------------------------------
// CPN and critic

CpnImpl::CpnImpl(const ModelConfig& cfg) {
  fc1 = register_module("fc1", torch::nn::Linear(2 * cfg.style_dim, 100));
  fc2 = register_module("fc2", torch::nn::Linear(100, cfg.content_dim));
}

torch::Tensor CpnImpl::forward(const StylePosterior& post) {
  auto h = torch::cat({post.mu, post.log_var}, 1);
  return fc2->forward(leaky(fc1->forward(h)));
}

CriticImpl::CriticImpl(const ModelConfig& config) : cfg(config) {
  using namespace torch::nn;
  if (cfg.arch == Arch::MnistSmall) {
    // Encoder shape with layer normalization instead of batch norm.
    mnist_backbone = register_module(
        "backbone",
        Sequential(Conv2d(Conv2dOptions(cfg.decoder_channels(), 64, 5).stride(2).padding(2)),
                   GroupNorm(GroupNormOptions(1, 64)),
                   LeakyReLU(LeakyReLUOptions().negative_slope(kLeakySlope)),
                   Conv2d(Conv2dOptions(64, 64, 5).stride(2).padding(2)),
                   GroupNorm(GroupNormOptions(1, 64)),
                   LeakyReLU(LeakyReLUOptions().negative_slope(kLeakySlope)), Flatten()));
    const int64_t feat = 64 * (cfg.image_size / 4) * (cfg.image_size / 4);
    head = register_module("head", torch::nn::Linear(feat, 1));
  } else {
    auto trunk = ResnetTrunk::build(*this, 3, 64, /*layer_norm=*/true);
    stem = trunk.stem;
    blocks = trunk.blocks;
    const int64_t s = cfg.image_size / 4;
    head = register_module("head", torch::nn::Linear(64 * s * s, 1));
  }
}

torch::Tensor CriticImpl::forward(const torch::Tensor& images) {
  torch::Tensor flat;
  if (cfg.arch == Arch::MnistSmall) {
    flat = mnist_backbone->forward(images);
  } else {
    ResnetTrunk trunk{stem, blocks};
    flat = trunk.forward(images).first;
  }
  return head->forward(flat).squeeze(1);
}

// ---------------------------------------------------------------------------
// Bundle + parameter utilities

StocModel StocModel::build(const ModelConfig& cfg) {
  cfg.validate();
  StocModel m;
  m.cfg = cfg;
  m.content = ContentEncoder(cfg);
  m.style = StyleEncoder(cfg);
  m.decoder = Decoder(cfg);
  if (cfg.variant == Variant::PM) m.cpn = Cpn(cfg);
  if (cfg.use_wgan) m.critic = Critic(cfg);
  return m;
}

void StocModel::set_eval() {
  content->eval();
  style->eval();
  decoder->eval();
  if (cpn) cpn->eval();
  if (critic) critic->eval();
}

void StocModel::set_train() {
  content->train();
  style->train();
  decoder->train();
  if (cpn) cpn->train();
  if (critic) critic->train();
}

torch::Tensor StocModel::to_model_channels(const torch::Tensor& images) const {
  if (cfg.arch == Arch::MnistSmall || images.size(1) == 3) return images;
  return images.repeat({1, 3, 1, 1});
}

torch::Tensor StocModel::to_data_channels(const torch::Tensor& images) const {
  if (cfg.arch == Arch::MnistSmall || cfg.in_channels == 3) return images;
  return images.mean(1, /*keepdim=*/true);
}

int64_t parameter_count(const torch::nn::Module& m) {
  int64_t n = 0;
  for (const auto& p : m.parameters()) n += p.numel();
  return n;
}

uint64_t parameter_checksum(const torch::nn::Module& m) {
  uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (const auto& item : m.named_parameters()) {
    auto t = item.value().detach().to(torch::kCPU).contiguous();
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data_ptr());
    const size_t n = t.numel() * t.element_size();
    for (size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

void freeze(torch::nn::Module& m) {
  for (auto& p : m.parameters()) p.set_requires_grad(false);
}

}  // namespace stoc
