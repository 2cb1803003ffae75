#include "stoc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "stoc/common.hpp"
#include "stoc/metric.hpp"

namespace stoc {

namespace {

// Batched, gradient-free forward through the content encoder.
torch::Tensor embed_all(StocModel& model, const torch::Tensor& images, int64_t batch = 256) {
  torch::NoGradGuard ng;
  model.content->eval();
  std::vector<torch::Tensor> chunks;
  for (int64_t i = 0; i < images.size(0); i += batch) {
    auto slice = images.slice(0, i, std::min(i + batch, images.size(0)));
    chunks.push_back(model.content->forward(model.to_model_channels(slice)));
  }
  return torch::cat(chunks);
}

torch::Tensor style_means_all(StocModel& model, const torch::Tensor& images, int64_t batch = 256) {
  torch::NoGradGuard ng;
  model.style->eval();
  std::vector<torch::Tensor> mus;
  for (int64_t i = 0; i < images.size(0); i += batch) {
    auto slice = images.slice(0, i, std::min(i + batch, images.size(0)));
    mus.push_back(model.style->forward(model.to_model_channels(slice)).mu);
  }
  return torch::cat(mus);
}

}  // namespace

void EvalReport::finalize() {
  const auto n = static_cast<double>(per_episode.size());
  if (n == 0) {
    mean = stderr_ = 0.0;
    return;
  }
  mean = std::accumulate(per_episode.begin(), per_episode.end(), 0.0) / n;
  double ss = 0.0;
  for (const double v : per_episode) ss += (v - mean) * (v - mean);
  stderr_ = n > 1 ? std::sqrt(ss / (n - 1)) / std::sqrt(n) : 0.0;
}

void EvalReport::write(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write eval report: " + path);
  out.precision(9);
  out << "protocol = " << protocol << "\n";
  out << "episodes = " << per_episode.size() << "\n";
  out << "mean = " << mean << "\n";
  out << "stderr = " << stderr_ << "\n";
  if (!config_snapshot.empty()) out << "config = " << config_snapshot << "\n";
  for (size_t i = 0; i < per_episode.size(); ++i)
    out << "episode." << i << " = " << per_episode[i] << "\n";
}

torch::Tensor class_prototypes(StocModel& model, const LabeledDataset& train_ds) {
  if (model.cfg.variant == Variant::CC)
    return torch::eye(train_ds.class_count, torch::kFloat32);
  auto embeddings = embed_all(model, train_ds.images);
  std::vector<torch::Tensor> protos;
  for (int64_t c = 0; c < train_ds.class_count; ++c) {
    auto idx = torch::tensor(train_ds.class_indices(c), torch::kInt64);
    auto class_emb = embeddings.index_select(0, idx);
    protos.push_back(class_emb[select_prototype(class_emb)]);
  }
  return torch::stack(protos);
}

NestResult nest_evaluate(StocModel& model, const LabeledDataset& train_ds,
                         const LabeledDataset& test_ds, const NestOptions& options) {
  torch::manual_seed(options.seed);
  model.set_eval();
  auto prototypes = class_prototypes(model, train_ds);
  torch::Tensor style_pool;  // posterior means of all natural training images
  if (!options.style_from_prior) style_pool = style_means_all(model, train_ds.images);

  // Fresh classifier: content-encoder architecture with a softmax head over
  // the natural classes. It trains on synthetic images only.
  ContentEncoder classifier(model.cfg, train_ds.class_count, /*softmax_head=*/true);
  classifier->train();
  torch::optim::Adam opt(classifier->parameters(),
                         torch::optim::AdamOptions(options.learning_rate));

  for (int64_t step = 0; step < options.train_steps; ++step) {
    torch::Tensor images, labels;
    {
      // The training data is synthetic by construction: every batch is a
      // decoder output, never a natural image.
      torch::NoGradGuard ng;
      labels = torch::randint(0, train_ds.class_count, {options.batch_size}, torch::kInt64);
      auto z_content = prototypes.index_select(0, labels);
      torch::Tensor z_style;
      if (options.style_from_prior) {
        z_style = torch::randn({options.batch_size, model.cfg.style_dim});
      } else {
        auto donors = torch::randint(0, style_pool.size(0), {options.batch_size}, torch::kInt64);
        z_style = style_pool.index_select(0, donors);
      }
      images = model.to_data_channels(model.decoder->forward(z_content, z_style)).detach();
    }
    opt.zero_grad();
    auto probs = classifier->forward(model.to_model_channels(images));
    auto loss = torch::nll_loss((probs + 1e-12).log(), labels);
    if (!std::isfinite(loss.item<double>()))
      throw TrainingError("NEST classifier loss became non-finite at step " +
                          std::to_string(step));
    loss.backward();
    opt.step();
  }

  classifier->eval();
  torch::NoGradGuard ng;
  std::vector<torch::Tensor> probs;
  for (int64_t i = 0; i < test_ds.size(); i += 256) {
    auto slice = test_ds.images.slice(0, i, std::min(i + 256, test_ds.size()));
    auto p = classifier->forward(model.to_model_channels(slice));
    probs.push_back(
        p.gather(1, test_ds.labels.slice(0, i, i + slice.size(0)).unsqueeze(1)).squeeze(1));
  }
  NestResult result;
  result.per_sample_probs = torch::cat(probs).to(torch::kFloat64);
  result.mean_correct_prob = result.per_sample_probs.mean().item<double>();
  return result;
}

std::pair<double, double> paired_t_test(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes() || a.numel() < 2)
    throw ConfigurationError("paired_t_test: need two equal-length samples");
  auto d = (a - b).to(torch::kFloat64);
  const double n = static_cast<double>(d.numel());
  const double mean = d.mean().item<double>();
  const double sd = d.std(/*unbiased=*/true).item<double>();
  if (sd == 0.0) return {mean == 0.0 ? 0.0 : INFINITY, mean == 0.0 ? 1.0 : 0.0};
  const double t = mean / (sd / std::sqrt(n));
  const double p = std::erfc(std::abs(t) / std::sqrt(2.0));
  return {t, p};
}

torch::Tensor fewshot_class_scores(const torch::Tensor& query_emb,
                                   const torch::Tensor& support_emb,
                                   const torch::Tensor& support_labels,
                                   const torch::Tensor& support_weights, int64_t n_classes,
                                   double temperature) {
  if (temperature <= 0.0) throw RangeError("few-shot temperature must be positive");
  auto d2 = torch::cdist(query_emb.to(torch::kFloat64), support_emb.to(torch::kFloat64)).pow(2);
  // Shift by the per-query minimum before exponentiating: a common positive
  // factor per row, so normalized scores are unchanged but never underflow.
  d2 = d2 - std::get<0>(d2.min(1, /*keepdim=*/true));
  auto contrib =
      support_weights.to(torch::kFloat64).unsqueeze(0) * (-d2 / temperature).exp();  // [Q, S]
  auto one_hot = torch::zeros({support_emb.size(0), n_classes}, contrib.dtype());
  one_hot.scatter_(1, support_labels.unsqueeze(1), 1.0);
  return contrib.matmul(one_hot);  // [Q, n_classes]
}

EvalReport episodic_fewshot_eval(StocModel& model, const LabeledDataset& target_ds,
                                 const LabeledDataset& source_ds, const EpisodeSpec& spec,
                                 const FewShotWeights& weights, uint64_t seed) {
  if (spec.n > target_ds.class_count)
    throw SamplingError("episode needs " + std::to_string(spec.n) + " classes, target has " +
                        std::to_string(target_ds.class_count));
  auto target_emb = embed_all(model, target_ds.images);

  EvalReport report;
  report.protocol = "fewshot";
  for (int64_t episode = 0; episode < spec.episode_count; ++episode) {
    // Private per-episode rng so parallel and serial execution agree.
    std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ull * static_cast<uint64_t>(episode + 1)));

    std::vector<int64_t> class_order(target_ds.class_count);
    std::iota(class_order.begin(), class_order.end(), 0);
    std::shuffle(class_order.begin(), class_order.end(), rng);

    std::vector<int64_t> support_idx, query_idx;
    std::vector<int64_t> support_lab, query_lab;  // episode-local labels
    for (int64_t c = 0; c < spec.n; ++c) {
      auto members = target_ds.class_indices(class_order[c]);
      if (static_cast<int64_t>(members.size()) <= spec.k)
        throw SamplingError("class " + std::to_string(class_order[c]) +
                            " lacks samples for k=" + std::to_string(spec.k) + " plus queries");
      std::shuffle(members.begin(), members.end(), rng);
      for (int64_t i = 0; i < static_cast<int64_t>(members.size()); ++i) {
        if (i < spec.k) {
          support_idx.push_back(members[i]);
          support_lab.push_back(c);
        } else {
          query_idx.push_back(members[i]);
          query_lab.push_back(c);
        }
      }
    }
    auto sup_idx_t = torch::tensor(support_idx, torch::kInt64);
    auto qry_idx_t = torch::tensor(query_idx, torch::kInt64);
    auto support_emb = target_emb.index_select(0, sup_idx_t);
    auto query_emb = target_emb.index_select(0, qry_idx_t);
    auto support_labels = torch::tensor(support_lab, torch::kInt64);
    auto support_weights = torch::full({support_emb.size(0)}, weights.w_s, torch::kFloat32);

    if (spec.m > 0) {
      auto support_images = target_ds.images.index_select(0, sup_idx_t);
      auto aug = augment_support(model, support_images, support_labels, source_ds, spec.m,
                                 spec.alpha, rng);
      auto [combined_images, combined_labels] = aug.combined();
      auto synth_images = combined_images.slice(0, support_emb.size(0));
      auto synth_emb = embed_all(model, synth_images);
      support_emb = torch::cat({support_emb, synth_emb});
      support_labels = combined_labels;
      support_weights = torch::cat(
          {support_weights,
           torch::full({synth_emb.size(0)}, weights.w_a(spec.m), torch::kFloat32)});
    }

    auto scores = fewshot_class_scores(query_emb, support_emb, support_labels, support_weights,
                                       spec.n, weights.temperature);
    auto pred = scores.argmax(1);
    auto truth = torch::tensor(query_lab, torch::kInt64);
    report.per_episode.push_back(pred.eq(truth).to(torch::kFloat64).mean().item<double>());
  }
  report.finalize();
  return report;
}

// ---------------------------------------------------------------------------
// Scratch classifier

namespace {

// 4 strided conv layers (k5, 64 filters), ReLU + batch norm + dropout 0.5,
// then an n-way linear head.
struct ScratchNetImpl : torch::nn::Module {
  ScratchNetImpl(int64_t in_channels, int64_t image_size, int64_t n_classes) {
    using namespace torch::nn;
    int64_t ch = in_channels;
    int64_t s = image_size;
    for (int i = 0; i < 4; ++i) {
      convs.push_back(register_module(
          "conv" + std::to_string(i),
          Conv2d(Conv2dOptions(ch, 64, 5).stride(2).padding(2))));
      bns.push_back(register_module("bn" + std::to_string(i), BatchNorm2d(64)));
      ch = 64;
      s = (s + 1) / 2;
    }
    drop = register_module("drop", Dropout(0.5));
    head = register_module("head", Linear(64 * s * s, n_classes));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto h = x;
    for (size_t i = 0; i < convs.size(); ++i)
      h = drop->forward(bns[i]->forward(torch::relu(convs[i]->forward(h))));
    return head->forward(h.flatten(1));
  }

  std::vector<torch::nn::Conv2d> convs;
  std::vector<torch::nn::BatchNorm2d> bns;
  torch::nn::Dropout drop{nullptr};
  torch::nn::Linear head{nullptr};
};
TORCH_MODULE(ScratchNet);

double classifier_accuracy(ScratchNet& net, const torch::Tensor& images,
                           const torch::Tensor& labels) {
  torch::NoGradGuard ng;
  net->eval();
  std::vector<torch::Tensor> preds;
  for (int64_t i = 0; i < images.size(0); i += 256) {
    auto slice = images.slice(0, i, std::min(i + 256, images.size(0)));
    preds.push_back(net->forward(slice).argmax(1));
  }
  return torch::cat(preds).eq(labels).to(torch::kFloat64).mean().item<double>();
}

}  // namespace

ScratchResult train_scratch_classifier(StocModel* stoc, const torch::Tensor& support_images,
                                       const torch::Tensor& support_labels,
                                       const LabeledDataset& donor_pool,
                                       const torch::Tensor& query_images,
                                       const torch::Tensor& query_labels,
                                       const ScratchOptions& options) {
  if (options.n_classes <= 0) throw ConfigurationError("scratch classifier: n_classes not set");
  if (options.m > 0 && stoc == nullptr)
    throw ConfigurationError("scratch classifier: augmentation requested without a model");
  {
    auto present = std::get<0>(torch::unique_dim(support_labels, 0));
    if (present.numel() != options.n_classes)
      throw ConfigurationError("scratch classifier: support is missing classes");
  }
  torch::manual_seed(options.seed);
  std::mt19937_64 rng(options.seed);

  // 75/25 stratified split of the support set.
  std::vector<int64_t> train_part, val_part;
  auto lab = support_labels.accessor<int64_t, 1>();
  for (int64_t c = 0; c < options.n_classes; ++c) {
    std::vector<int64_t> members;
    for (int64_t i = 0; i < support_labels.size(0); ++i)
      if (lab[i] == c) members.push_back(i);
    std::shuffle(members.begin(), members.end(), rng);
    const auto cut = std::max<size_t>(1, static_cast<size_t>(std::llround(0.75 * members.size())));
    for (size_t i = 0; i < members.size(); ++i)
      (i < cut ? train_part : val_part).push_back(members[i]);
  }
  if (val_part.empty()) val_part = train_part;  // k too small to hold out; validate in-sample
  auto train_idx = torch::tensor(train_part, torch::kInt64);
  auto val_idx = torch::tensor(val_part, torch::kInt64);
  auto train_images = support_images.index_select(0, train_idx);
  auto train_labels = support_labels.index_select(0, train_idx);
  auto val_images = support_images.index_select(0, val_idx);
  auto val_labels = support_labels.index_select(0, val_idx);

  std::vector<double> ratios = options.m > 0 ? options.mix_ratios : std::vector<double>{0.0};

  ScratchResult best;
  std::vector<torch::Tensor> best_params;
  double best_val = -1.0;

  for (const double ratio : ratios) {
    torch::manual_seed(options.seed + 17);
    ScratchNet net(support_images.size(1), support_images.size(2), options.n_classes);
    torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(options.learning_rate));

    const int64_t n_real =
        ratio > 0.0 ? std::max<int64_t>(1, static_cast<int64_t>(std::llround(
                                               options.batch_size / (1.0 + ratio))))
                    : options.batch_size;
    const int64_t n_synth = options.batch_size - n_real;
    const int64_t steps_per_epoch =
        std::max<int64_t>(1, train_images.size(0) / std::max<int64_t>(1, n_real));

    double ratio_best_val = -1.0;
    int64_t ratio_best_epoch = 0;
    std::vector<torch::Tensor> ratio_best_params;
    int64_t stale = 0;

    for (int64_t epoch = 1; epoch <= options.max_epochs; ++epoch) {
      net->train();
      for (int64_t step = 0; step < steps_per_epoch; ++step) {
        auto real_pick = torch::randint(0, train_images.size(0), {n_real}, torch::kInt64);
        auto batch_images = train_images.index_select(0, real_pick);
        auto batch_labels = train_labels.index_select(0, real_pick);
        if (n_synth > 0) {
          // Fresh augmentations every minibatch.
          std::uniform_int_distribution<int64_t> pick_sup(0, train_images.size(0) - 1);
          std::uniform_int_distribution<int64_t> pick_don(0, donor_pool.size() - 1);
          std::vector<int64_t> sup, don;
          for (int64_t i = 0; i < n_synth; ++i) {
            sup.push_back(pick_sup(rng));
            don.push_back(pick_don(rng));
          }
          auto sup_t = torch::tensor(sup, torch::kInt64);
          auto synth = interpolate_style_batch(
              *stoc, train_images.index_select(0, sup_t),
              donor_pool.images.index_select(0, torch::tensor(don, torch::kInt64)), options.alpha);
          batch_images = torch::cat({batch_images, synth});
          batch_labels = torch::cat({batch_labels, train_labels.index_select(0, sup_t)});
          net->train();  // interpolate_style_batch flips the stoc model to eval, not net
        }
        opt.zero_grad();
        auto loss = torch::cross_entropy_loss(net->forward(batch_images), batch_labels);
        loss.backward();
        opt.step();
      }
      const double val_acc = classifier_accuracy(net, val_images, val_labels);
      if (val_acc > ratio_best_val) {
        ratio_best_val = val_acc;
        ratio_best_epoch = epoch;
        ratio_best_params.clear();
        for (const auto& p : net->parameters()) ratio_best_params.push_back(p.detach().clone());
        for (const auto& b : net->buffers()) ratio_best_params.push_back(b.detach().clone());
        stale = 0;
      } else if (++stale >= options.patience) {
        break;
      }
    }

    if (ratio_best_val > best_val) {
      best_val = ratio_best_val;
      best.chosen_mix_ratio = ratio;
      best.chosen_epochs = ratio_best_epoch;
      best_params = ratio_best_params;
      // Rebuild and restore to measure query accuracy with the selected state.
      torch::manual_seed(options.seed + 17);
      ScratchNet selected(support_images.size(1), support_images.size(2), options.n_classes);
      {
        torch::NoGradGuard ng;
        size_t i = 0;
        for (auto& p : selected->parameters()) p.copy_(best_params[i++]);
        for (auto& b : selected->buffers()) b.copy_(best_params[i++]);
      }
      best.test_accuracy = classifier_accuracy(selected, query_images, query_labels);
    }
  }
  return best;
}

double style_probe(StocModel& model, const LabeledDataset& train_ds,
                   const LabeledDataset& test_ds, const StyleProbeOptions& options) {
  torch::manual_seed(options.seed);
  model.set_eval();
  const auto posterior_features = [&](const torch::Tensor& images) {
    torch::NoGradGuard ng;
    std::vector<torch::Tensor> feats;
    for (int64_t i = 0; i < images.size(0); i += 256) {
      auto slice = images.slice(0, i, std::min(i + 256, images.size(0)));
      auto post = model.style->forward(model.to_model_channels(slice));
      feats.push_back(torch::cat({post.mu, post.log_var}, 1));
    }
    return torch::cat(feats);
  };
  auto train_x = posterior_features(train_ds.images);
  auto test_x = posterior_features(test_ds.images);

  auto probe = torch::nn::Sequential(
      torch::nn::Linear(train_x.size(1), options.hidden_dim), torch::nn::ReLU(),
      torch::nn::Linear(options.hidden_dim, train_ds.class_count));
  torch::optim::Adam opt(probe->parameters(), torch::optim::AdamOptions(options.learning_rate));
  const int64_t n = train_x.size(0);
  for (int64_t epoch = 0; epoch < options.epochs; ++epoch) {
    auto perm = torch::randperm(n, torch::kInt64);
    for (int64_t i = 0; i < n; i += options.batch_size) {
      auto idx = perm.slice(0, i, std::min(i + options.batch_size, n));
      opt.zero_grad();
      auto loss = torch::cross_entropy_loss(probe->forward(train_x.index_select(0, idx)),
                                            train_ds.labels.index_select(0, idx));
      loss.backward();
      opt.step();
    }
  }
  torch::NoGradGuard ng;
  auto pred = probe->forward(test_x).argmax(1);
  return pred.eq(test_ds.labels).to(torch::kFloat64).mean().item<double>();
}

}  // namespace stoc
