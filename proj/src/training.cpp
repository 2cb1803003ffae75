#include "stoc/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "stoc/common.hpp"
#include "stoc/metric.hpp"

namespace stoc {

namespace {

std::vector<torch::Tensor> snapshot_module(const torch::nn::Module& m) {
  std::vector<torch::Tensor> out;
  for (const auto& p : m.parameters()) out.push_back(p.detach().clone());
  for (const auto& b : m.buffers()) out.push_back(b.detach().clone());
  return out;
}

void restore_module(torch::nn::Module& m, const std::vector<torch::Tensor>& snap) {
  torch::NoGradGuard ng;
  size_t i = 0;
  for (auto& p : m.parameters()) p.copy_(snap.at(i++));
  for (auto& b : m.buffers()) b.copy_(snap.at(i++));
}

struct ModelSnapshot {
  std::vector<torch::Tensor> style, decoder, cpn, critic;

  static ModelSnapshot take(const StocModel& m) {
    ModelSnapshot s;
    s.style = snapshot_module(*m.style);
    s.decoder = snapshot_module(*m.decoder);
    if (m.cpn) s.cpn = snapshot_module(*m.cpn);
    if (m.critic) s.critic = snapshot_module(*m.critic);
    return s;
  }
  void restore(StocModel& m) const {
    restore_module(*m.style, style);
    restore_module(*m.decoder, decoder);
    if (m.cpn) restore_module(*m.cpn, cpn);
    if (m.critic) restore_module(*m.critic, critic);
  }
};

std::unique_ptr<torch::optim::Adam> make_adam(const std::vector<torch::Tensor>& params,
                                              const OptimizerSpec& spec) {
  return std::make_unique<torch::optim::Adam>(
      params, torch::optim::AdamOptions(spec.learning_rate).betas({spec.beta1, spec.beta2}));
}

std::vector<torch::Tensor> concat_params(std::initializer_list<torch::nn::Module*> modules) {
  std::vector<torch::Tensor> out;
  for (auto* m : modules)
    for (auto& p : m->parameters()) out.push_back(p);
  return out;
}

torch::Tensor default_rng_state() {
  return at::detail::getDefaultCPUGenerator().get_state();
}

void check_finite(const torch::Tensor& loss, const char* what, int64_t step) {
  if (!std::isfinite(loss.item<double>()))
    throw TrainingError(std::string(what) + " became non-finite at step " + std::to_string(step));
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  weights.validate();
  if (optimizer.learning_rate <= 0) throw ConfigurationError("learning_rate must be > 0");
  if (epochs < 1 || content_epochs < 1) throw ConfigurationError("epochs must be >= 1");
  if (bin_count < 2) throw ConfigurationError("bin_count must be >= 2");
  if (critic_steps < 1 || cpn_steps < 1)
    throw ConfigurationError("adversarial step ratios must be >= 1");
}

TrainConfig TrainConfig::from_config(const Config& c) {
  TrainConfig t;
  t.model.variant = variant_from_string(c.get_string("model.variant", "ce"));
  t.model.arch = arch_from_string(c.get_string("model.arch", "mnist_small"));
  const bool mnist = t.model.arch == Arch::MnistSmall;
  const int64_t default_content =
      mnist ? (t.model.variant == Variant::CC ? 10 : 50)
            : (t.model.arch == Arch::ResnetOmniglot ? 100 : 200);
  const int64_t default_style =
      mnist ? 50 : (t.model.arch == Arch::ResnetOmniglot ? 100 : 600);
  t.model.content_dim = c.get_int("model.content_dim", default_content);
  t.model.style_dim = c.get_int("model.style_dim", default_style);
  t.model.use_unet_skips = c.get_bool("model.use_unet_skips", t.model.arch == Arch::ResnetVgg);
  t.model.use_wgan = c.get_bool("model.use_wgan", !mnist);
  t.model.image_size = c.get_int("model.image_size", mnist ? 28 : 32);
  t.model.in_channels = c.get_int("model.in_channels", 1);

  t.weights.kl_coeff = c.get_double("weights.kl_coeff", 1.0);
  t.weights.recon_coeff = c.get_double("weights.recon_coeff", 1.0);
  t.weights.pm_lambda = c.get_double("weights.pm_lambda", 1.0);
  const double default_lf = t.model.arch == Arch::ResnetVgg ? 5.0 : 20.0;
  t.weights.lf_lambda1 = c.get_double("weights.lf_lambda1", default_lf);
  t.weights.lf_lambda2 = c.get_double("weights.lf_lambda2", default_lf);
  t.weights.wgan_coeff = c.get_double("weights.wgan_coeff", 0.5);
  t.weights.gp_weight = c.get_double("weights.gp_weight", t.model.arch == Arch::ResnetVgg ? 100.0 : 10.0);

  t.optimizer.name = c.get_string("optimizer.name", "adam");
  t.optimizer.learning_rate = c.get_double("optimizer.learning_rate", mnist ? 2e-4 : 1e-4);
  t.optimizer.beta1 = c.get_double("optimizer.beta1", t.model.use_wgan ? 0.5 : 0.9);
  t.optimizer.beta2 = c.get_double("optimizer.beta2", t.model.use_wgan ? 0.9 : 0.999);

  t.epochs = c.get_int("train.epochs", mnist ? 10 : (t.model.arch == Arch::ResnetOmniglot ? 100 : 10));
  t.content_epochs = c.get_int("train.content_epochs", 30);
  t.patience = c.get_int("train.patience", 10);
  t.bin_count = c.get_int("train.bin_count", 128);
  t.critic_steps = c.get_int("train.critic_steps", 5);
  t.cpn_steps = c.get_int("train.cpn_steps", 1);
  t.steps_per_epoch = c.get_int("train.steps_per_epoch", 0);
  t.seed = static_cast<uint64_t>(c.get_int("train.seed", 0));

  t.batch_spec.classes_per_batch = c.get_int("batch.classes_per_batch", 10);
  t.batch_spec.samples_per_class = c.get_int("batch.samples_per_class", mnist ? 4 : 3);
  t.batch_spec.subsample_negatives = c.get_bool("batch.subsample_negatives", !mnist);
  t.content_batch_spec.classes_per_batch = c.get_int("content_batch.classes_per_batch", mnist ? 10 : 20);
  t.content_batch_spec.samples_per_class = c.get_int("content_batch.samples_per_class", mnist ? 4 : 10);
  t.content_batch_spec.subsample_negatives = c.get_bool("content_batch.subsample_negatives", false);
  t.validate();
  return t;
}

Config TrainConfig::to_config() const {
  Config c;
  c.set("model.variant", to_string(model.variant));
  c.set("model.arch", to_string(model.arch));
  c.set("model.content_dim", std::to_string(model.content_dim));
  c.set("model.style_dim", std::to_string(model.style_dim));
  c.set("model.use_unet_skips", model.use_unet_skips ? "true" : "false");
  c.set("model.use_wgan", model.use_wgan ? "true" : "false");
  c.set("model.image_size", std::to_string(model.image_size));
  c.set("model.in_channels", std::to_string(model.in_channels));
  c.set("weights.kl_coeff", std::to_string(weights.kl_coeff));
  c.set("weights.recon_coeff", std::to_string(weights.recon_coeff));
  c.set("weights.pm_lambda", std::to_string(weights.pm_lambda));
  c.set("weights.lf_lambda1", std::to_string(weights.lf_lambda1));
  c.set("weights.lf_lambda2", std::to_string(weights.lf_lambda2));
  c.set("weights.wgan_coeff", std::to_string(weights.wgan_coeff));
  c.set("weights.gp_weight", std::to_string(weights.gp_weight));
  c.set("optimizer.name", optimizer.name);
  c.set("optimizer.learning_rate", std::to_string(optimizer.learning_rate));
  c.set("optimizer.beta1", std::to_string(optimizer.beta1));
  c.set("optimizer.beta2", std::to_string(optimizer.beta2));
  c.set("train.epochs", std::to_string(epochs));
  c.set("train.content_epochs", std::to_string(content_epochs));
  c.set("train.patience", std::to_string(patience));
  c.set("train.bin_count", std::to_string(bin_count));
  c.set("train.critic_steps", std::to_string(critic_steps));
  c.set("train.cpn_steps", std::to_string(cpn_steps));
  c.set("train.steps_per_epoch", std::to_string(steps_per_epoch));
  c.set("train.seed", std::to_string(seed));
  c.set("batch.classes_per_batch", std::to_string(batch_spec.classes_per_batch));
  c.set("batch.samples_per_class", std::to_string(batch_spec.samples_per_class));
  c.set("batch.subsample_negatives", batch_spec.subsample_negatives ? "true" : "false");
  c.set("content_batch.classes_per_batch", std::to_string(content_batch_spec.classes_per_batch));
  c.set("content_batch.samples_per_class", std::to_string(content_batch_spec.samples_per_class));
  c.set("content_batch.subsample_negatives",
        content_batch_spec.subsample_negatives ? "true" : "false");
  return c;
}

// ---------------------------------------------------------------------------
// Checkpoint serialization

void Checkpoint::save(const std::string& path) const {
  torch::serialize::OutputArchive a;
  a.write("format_version", torch::tensor(kFormatVersion));
  a.write("train_config", c10::IValue(config.to_config().to_string()));
  a.write("model_config", c10::IValue(config.model.to_json()));
  a.write("epoch", torch::tensor(epoch));
  a.write("content_frozen", torch::tensor(static_cast<int64_t>(content_frozen)));
  a.write("validation_history",
          validation_history.empty() ? torch::zeros({0}, torch::kFloat64)
                                     : torch::tensor(validation_history, torch::kFloat64));
  a.write("rng_state", rng_state.defined() ? rng_state : default_rng_state());

  const auto write_module = [&a](const char* key, const std::shared_ptr<torch::nn::Module>& m) {
    torch::serialize::OutputArchive sub;
    m->save(sub);
    a.write(key, sub);
  };
  write_module("content", model.content.ptr());
  write_module("style", model.style.ptr());
  write_module("decoder", model.decoder.ptr());
  a.write("has_cpn", torch::tensor(static_cast<int64_t>(!model.cpn.is_empty())));
  a.write("has_critic", torch::tensor(static_cast<int64_t>(!model.critic.is_empty())));
  if (model.cpn) write_module("cpn", model.cpn.ptr());
  if (model.critic) write_module("critic", model.critic.ptr());

  a.write("optimizer_count", torch::tensor(static_cast<int64_t>(optimizer_blobs.size())));
  int64_t i = 0;
  for (const auto& [role, blob] : optimizer_blobs) {
    a.write("optimizer_role_" + std::to_string(i), c10::IValue(role));
    auto bytes = torch::empty({static_cast<int64_t>(blob.size())}, torch::kUInt8);
    std::memcpy(bytes.data_ptr(), blob.data(), blob.size());
    a.write("optimizer_blob_" + std::to_string(i), bytes);
    ++i;
  }
  a.save_to(path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  torch::serialize::InputArchive a;
  try {
    a.load_from(path);
  } catch (const c10::Error& e) {
    throw FormatError("cannot read checkpoint " + path + ": " + e.what_without_backtrace());
  }
  Checkpoint ckpt;
  torch::Tensor version;
  a.read("format_version", version);
  if (version.item<int64_t>() != kFormatVersion)
    throw FormatError("unsupported checkpoint format version in " + path);

  c10::IValue train_cfg_text;
  a.read("train_config", train_cfg_text);
  ckpt.config = TrainConfig::from_config(Config::from_string(train_cfg_text.toStringRef()));
  torch::Tensor t;
  a.read("epoch", t);
  ckpt.epoch = t.item<int64_t>();
  a.read("content_frozen", t);
  ckpt.content_frozen = t.item<int64_t>() != 0;
  torch::Tensor hist;  // fresh tensor: read() reuses dtype of a defined one
  a.read("validation_history", hist);
  for (int64_t i = 0; i < hist.numel(); ++i)
    ckpt.validation_history.push_back(hist[i].item<double>());
  a.read("rng_state", ckpt.rng_state);

  ckpt.model = StocModel::build(ckpt.config.model);
  const auto read_module = [&a](const char* key, const std::shared_ptr<torch::nn::Module>& m) {
    torch::serialize::InputArchive sub;
    a.read(key, sub);
    m->load(sub);
  };
  read_module("content", ckpt.model.content.ptr());
  read_module("style", ckpt.model.style.ptr());
  read_module("decoder", ckpt.model.decoder.ptr());
  torch::Tensor has_cpn, has_critic;
  a.read("has_cpn", has_cpn);
  a.read("has_critic", has_critic);
  if (has_cpn.item<int64_t>() && ckpt.model.cpn) read_module("cpn", ckpt.model.cpn.ptr());
  if (has_critic.item<int64_t>() && ckpt.model.critic)
    read_module("critic", ckpt.model.critic.ptr());

  a.read("optimizer_count", t);
  for (int64_t i = 0; i < t.item<int64_t>(); ++i) {
    c10::IValue role;
    a.read("optimizer_role_" + std::to_string(i), role);
    torch::Tensor bytes;
    a.read("optimizer_blob_" + std::to_string(i), bytes);
    std::string blob(reinterpret_cast<const char*>(bytes.data_ptr()),
                     static_cast<size_t>(bytes.numel()));
    ckpt.optimizer_blobs[role.toStringRef()] = std::move(blob);
  }
  if (ckpt.content_frozen) {
    freeze(*ckpt.model.content);
    ckpt.model.content->eval();
  }
  return ckpt;
}

// ---------------------------------------------------------------------------
// Phase 1: content encoder

double nearest_neighbor_accuracy(StocModel& model, const LabeledDataset& train_ds,
                                 const LabeledDataset& val_ds, int64_t max_train,
                                 int64_t max_val) {
  torch::NoGradGuard ng;
  model.content->eval();
  const auto embed = [&](const torch::Tensor& images) {
    std::vector<torch::Tensor> chunks;
    for (int64_t i = 0; i < images.size(0); i += 256)
      chunks.push_back(model.content->forward(
          model.to_model_channels(images.slice(0, i, std::min(i + 256, images.size(0))))));
    return torch::cat(chunks);
  };
  const int64_t n_train = std::min<int64_t>(max_train, train_ds.size());
  const int64_t n_val = std::min<int64_t>(max_val, val_ds.size());
  auto train_emb = embed(train_ds.images.slice(0, 0, n_train));
  auto val_emb = embed(val_ds.images.slice(0, 0, n_val));
  auto nn_idx = torch::cdist(val_emb, train_emb).argmin(1);
  auto pred = train_ds.labels.slice(0, 0, n_train).index_select(0, nn_idx);
  return pred.eq(val_ds.labels.slice(0, 0, n_val)).to(torch::kFloat64).mean().item<double>();
}

Checkpoint train_content_encoder(const TrainConfig& config, const LabeledDataset& train_ds,
                                 const LabeledDataset& val_ds, MetricsLog* log) {
  config.validate();
  torch::manual_seed(config.seed);
  std::mt19937_64 rng(config.seed);

  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.model = StocModel::build(config.model);
  auto& model = ckpt.model;

  auto opt = make_adam(concat_params({model.content.get()}),
                       OptimizerSpec{"adam", config.optimizer.learning_rate, 0.9, 0.999});
  auto& content_opt = *opt;
  const BatchSpec& bs = config.content_batch_spec;
  const int64_t steps_per_epoch =
      config.steps_per_epoch > 0 ? config.steps_per_epoch
                                 : std::max<int64_t>(1, train_ds.size() / bs.batch_size());

  double best_metric = std::numeric_limits<double>::infinity();
  std::vector<torch::Tensor> best_state;
  int64_t stale = 0;
  int64_t global_step = 0;

  for (int64_t epoch = 1; epoch <= config.content_epochs; ++epoch) {
    model.content->train();
    for (int64_t step = 0; step < steps_per_epoch; ++step, ++global_step) {
      auto batch = sample_balanced_minibatch(train_ds, bs.classes_per_batch, bs.samples_per_class,
                                             rng, bs.subsample_negatives);
      content_opt.zero_grad();
      torch::Tensor loss;
      auto out = model.content->forward(model.to_model_channels(batch.images));
      if (config.model.variant == Variant::CC) {
        loss = torch::nll_loss((out + 1e-12).log(), batch.labels);
      } else {
        loss = histogram_loss(out, batch, config.bin_count);
      }
      check_finite(loss, "content loss", global_step);
      loss.backward();
      content_opt.step();
      if (log && step == 0) log->append(global_step, epoch, "content_loss", loss.item<double>());
    }

    // Validation metric: classification error for CC, mean histogram loss on
    // deterministic balanced batches for the embedding variants.
    double metric;
    model.content->eval();
    if (config.model.variant == Variant::CC) {
      torch::NoGradGuard ng;
      std::vector<torch::Tensor> preds;
      for (int64_t i = 0; i < val_ds.size(); i += 256)
        preds.push_back(model.content
                            ->forward(model.to_model_channels(
                                val_ds.images.slice(0, i, std::min(i + 256, val_ds.size()))))
                            .argmax(1));
      metric = 1.0 - torch::cat(preds).eq(val_ds.labels).to(torch::kFloat64).mean().item<double>();
    } else {
      torch::NoGradGuard ng;
      std::mt19937_64 vrng(config.seed + 0x5eed);
      double sum = 0.0;
      const int64_t val_batches = 10;
      for (int64_t i = 0; i < val_batches; ++i) {
        auto batch = sample_balanced_minibatch(val_ds, bs.classes_per_batch, bs.samples_per_class,
                                               vrng, bs.subsample_negatives);
        sum += histogram_loss(model.content->forward(model.to_model_channels(batch.images)), batch,
                              config.bin_count)
                   .item<double>();
      }
      metric = sum / static_cast<double>(val_batches);
    }
    ckpt.validation_history.push_back(metric);
    if (log) log->append(global_step, epoch, "content_val_metric", metric);

    if (metric < best_metric) {
      best_metric = metric;
      best_state = snapshot_module(*model.content);
      ckpt.epoch = epoch;
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }

  if (!best_state.empty()) restore_module(*model.content, best_state);
  freeze(*model.content);
  model.content->eval();
  ckpt.content_frozen = true;
  ckpt.rng_state = default_rng_state();
  return ckpt;
}

// ---------------------------------------------------------------------------
// Phase 2: style/decoder stack

double validation_loss(StocModel& model, const TrainConfig& config, const LabeledDataset& val_ds,
                       uint64_t seed) {
  torch::NoGradGuard ng;
  model.set_eval();
  std::mt19937_64 rng(seed);
  torch::manual_seed(seed);
  const BatchSpec& bs = config.batch_spec;
  const int64_t batches = 8;
  double sum = 0.0;
  for (int64_t i = 0; i < batches; ++i) {
    auto batch = sample_balanced_minibatch(val_ds, bs.classes_per_batch, bs.samples_per_class, rng,
                                           bs.subsample_negatives);
    auto noise = torch::randn({batch.images.size(0), config.model.style_dim});
    switch (config.model.variant) {
      case Variant::CC:
      case Variant::CE:
        sum += vae_loss(model, batch.images, config.weights, noise).total.item<double>();
        break;
      case Variant::PM:
        sum += pm_losses(model, batch.images, config.weights, noise)
                   .style_result.total.item<double>();
        break;
      case Variant::LF:
        sum += lf_loss(model, batch, config.weights, config.bin_count, noise)
                   .total.item<double>();
        break;
    }
  }
  return sum / static_cast<double>(batches);
}

Checkpoint train_stoc(const TrainConfig& config, const Checkpoint& content_ckpt,
                      const LabeledDataset& train_ds, const LabeledDataset& val_ds,
                      MetricsLog* log) {
  config.validate();
  // The first phase is identical for all embedding variants, so a content
  // encoder trained under ce is reusable for pm and lf; only the head type,
  // architecture and dimensionality must agree.
  const auto classifier_head = [](Variant v) { return v == Variant::CC; };
  const auto& cm = content_ckpt.config.model;
  if (classifier_head(cm.variant) != classifier_head(config.model.variant) ||
      cm.arch != config.model.arch || cm.content_dim != config.model.content_dim)
    throw ConfigurationError("content checkpoint (variant " + to_string(cm.variant) + ", arch " +
                             to_string(cm.arch) + ", content_dim " +
                             std::to_string(cm.content_dim) +
                             ") is incompatible with config variant " +
                             to_string(config.model.variant));
  if (!content_ckpt.content_frozen)
    throw ConfigurationError("content checkpoint is not frozen; run content pre-training first");

  torch::manual_seed(config.seed + 1);
  std::mt19937_64 rng(config.seed + 1);

  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.model = StocModel::build(config.model);
  auto& model = ckpt.model;
  restore_module(*model.content, snapshot_module(*content_ckpt.model.content));
  freeze(*model.content);
  model.content->eval();
  ckpt.content_frozen = true;
  const uint64_t frozen_checksum = parameter_checksum(*model.content);

  auto opt_style_ptr =
      make_adam(concat_params({model.style.get(), model.decoder.get()}), config.optimizer);
  auto& opt_style = *opt_style_ptr;
  std::unique_ptr<torch::optim::Adam> opt_cpn, opt_critic;
  if (model.cpn) opt_cpn = make_adam(concat_params({model.cpn.get()}), config.optimizer);
  if (model.critic) opt_critic = make_adam(concat_params({model.critic.get()}), config.optimizer);

  const BatchSpec& bs = config.batch_spec;
  const int64_t steps_per_epoch =
      config.steps_per_epoch > 0 ? config.steps_per_epoch
                                 : std::max<int64_t>(1, train_ds.size() / bs.batch_size());

  double best_val = std::numeric_limits<double>::infinity();
  ModelSnapshot best_state;
  bool have_best = false;
  int64_t stale = 0;
  int64_t global_step = 0;
  int64_t critic_updates = 0, generator_updates = 0;

  for (int64_t epoch = 1; epoch <= config.epochs; ++epoch) {
    model.set_train();
    model.content->eval();  // frozen: keep normalization statistics fixed
    for (int64_t step = 0; step < steps_per_epoch; ++step, ++global_step) {
      auto batch = sample_balanced_minibatch(train_ds, bs.classes_per_batch, bs.samples_per_class,
                                             rng, bs.subsample_negatives);
      auto noise = torch::randn({batch.images.size(0), config.model.style_dim});

      switch (config.model.variant) {
        case Variant::CC:
        case Variant::CE: {
          opt_style.zero_grad();
          auto r = vae_loss(model, batch.images, config.weights, noise);
          check_finite(r.total, "vae loss", global_step);
          r.total.backward();
          opt_style.step();
          if (log && step == 0) log->append(global_step, epoch, r.report());
          break;
        }
        case Variant::PM: {
          for (int64_t k = 0; k < config.cpn_steps; ++k) {
            opt_cpn->zero_grad();
            auto pm = pm_losses(model, batch.images, config.weights, noise);
            check_finite(pm.cpn_loss, "cpn loss", global_step);
            pm.cpn_loss.backward();
            opt_cpn->step();
          }
          opt_style.zero_grad();
          opt_cpn->zero_grad();
          auto pm = pm_losses(model, batch.images, config.weights, noise);
          check_finite(pm.style_result.total, "pm style loss", global_step);
          pm.style_result.total.backward();
          opt_cpn->zero_grad();  // CPN is fixed during the style update
          opt_style.step();
          if (log && step == 0) log->append(global_step, epoch, pm.style_result.report());
          break;
        }
        case Variant::LF: {
          if (model.critic) {
            for (int64_t k = 0; k < config.critic_steps; ++k) {
              auto cbatch = sample_balanced_minibatch(
                  train_ds, bs.classes_per_batch, bs.samples_per_class, rng,
                  bs.subsample_negatives);
              auto cnoise = torch::randn({cbatch.images.size(0), config.model.style_dim});
              torch::Tensor fake;
              {
                torch::NoGradGuard ng;
                auto x = model.to_model_channels(cbatch.images);
                auto [z_content, content_feats] = model.content->forward_with_features(x);
                auto [post, style_feats] = model.style->forward_with_features(x);
                auto z_style = reparameterize(post, cnoise);
                // Cross-sample recombinations as the critic's fakes.
                auto perm = torch::randperm(x.size(0), torch::kInt64);
                std::vector<torch::Tensor> skips;
                if (model.cfg.use_unet_skips)
                  for (size_t i = content_feats.size(); i-- > 0;)
                    skips.push_back(torch::cat(
                        {content_feats[i], style_feats[i].index_select(0, perm)}, 1));
                fake = model.decoder->forward(z_content, z_style.index_select(0, perm), skips);
              }
              auto real = model.to_model_channels(cbatch.images);
              auto eps = torch::rand({real.size(0)});
              auto w = wgan_gp_losses(model.critic, real, fake, eps, config.weights.gp_weight);
              check_finite(w.critic_loss, "critic loss", global_step);
              opt_critic->zero_grad();
              w.critic_loss.backward();
              opt_critic->step();
              ++critic_updates;
            }
          }
          opt_style.zero_grad();
          auto detail = lf_loss_detail(model, batch, config.weights, config.bin_count, noise);
          auto total = detail.result.total;
          if (model.critic) {
            auto gen = -model.critic->forward(detail.recombined).mean();
            total = total + config.weights.wgan_coeff * gen;
            detail.result.components["wgan_g"] = gen;
          }
          check_finite(total, "lf loss", global_step);
          total.backward();
          if (opt_critic) opt_critic->zero_grad();
          opt_style.step();
          ++generator_updates;
          if (log && step == 0) {
            auto rep = detail.result.report();
            rep["total"] = total.item<double>();
            log->append(global_step, epoch, rep);
          }
          break;
        }
      }
    }

    if (parameter_checksum(*model.content) != frozen_checksum)
      throw TrainingError("frozen content encoder was mutated during epoch " +
                          std::to_string(epoch));

    const double val = validation_loss(model, config, val_ds, config.seed + 0x7a1);
    ckpt.validation_history.push_back(val);
    if (log) log->append(global_step, epoch, "val_total", val);
    if (!std::isfinite(val)) throw TrainingError("validation loss became non-finite");
    if (val < best_val) {
      best_val = val;
      best_state = ModelSnapshot::take(model);
      have_best = true;
      ckpt.epoch = epoch;
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }

  if (model.critic && generator_updates > 0 &&
      critic_updates != generator_updates * config.critic_steps)
    throw TrainingError("adversarial step ratio violated");
  if (have_best) best_state.restore(model);
  ckpt.rng_state = default_rng_state();
  return ckpt;
}

// ---------------------------------------------------------------------------
// Weight sweeps

void set_weight_axis(LossWeights& weights, const std::string& axis, double value) {
  if (axis == "kl_coeff") weights.kl_coeff = value;
  else if (axis == "recon_coeff") weights.recon_coeff = value;
  else if (axis == "pm_lambda") weights.pm_lambda = value;
  else if (axis == "lf_lambda1") weights.lf_lambda1 = value;
  else if (axis == "lf_lambda2") weights.lf_lambda2 = value;
  else if (axis == "wgan_coeff") weights.wgan_coeff = value;
  else if (axis == "gp_weight") weights.gp_weight = value;
  else
    throw ConfigurationError("unknown weight axis: " + axis);
}

void SweepReport::write(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write sweep report: " + path);
  out << "axis = " << axis << "\n";
  out.precision(9);
  for (const auto& row : rows) out << row.value << "," << row.nest_score << "\n";
}

SweepReport sweep_weights(const TrainConfig& base_config, const std::string& axis,
                          const std::vector<double>& values, const Checkpoint& content_ckpt,
                          const LabeledDataset& train_ds, const LabeledDataset& val_ds,
                          const NestOptions& nest_options, MetricsLog* log) {
  SweepReport report;
  report.axis = axis;
  for (const double value : values) {
    TrainConfig cfg = base_config;
    set_weight_axis(cfg.weights, axis, value);
    auto ckpt = train_stoc(cfg, content_ckpt, train_ds, val_ds, log);
    auto nest = nest_evaluate(ckpt.model, train_ds, val_ds, nest_options);
    report.rows.push_back(SweepRow{value, nest.mean_correct_prob});
  }
  return report;
}

}  // namespace stoc
