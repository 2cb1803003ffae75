#include "stoc/losses.hpp"

#include <filesystem>
#include <fstream>

#include "stoc/common.hpp"
#include "stoc/metric.hpp"

namespace stoc {

void LossWeights::validate() const {
  const double all[] = {kl_coeff, recon_coeff, pm_lambda, lf_lambda1,
                        lf_lambda2, wgan_coeff, gp_weight};
  for (const double w : all)
    if (w < 0.0 || !std::isfinite(w)) throw ConfigurationError("loss weights must be finite and >= 0");
}

std::map<std::string, double> LossResult::report() const {
  std::map<std::string, double> out;
  for (const auto& [k, v] : components) out[k] = v.item<double>();
  out["total"] = total.item<double>();
  return out;
}

namespace {

std::vector<torch::Tensor> merge_skips(const std::vector<torch::Tensor>& content_feats,
                                       const std::vector<torch::Tensor>& style_feats) {
  std::vector<torch::Tensor> skips;
  for (size_t i = content_feats.size(); i-- > 0;)
    skips.push_back(torch::cat({content_feats[i], style_feats[i]}, 1));
  return skips;
}

std::vector<torch::Tensor> select_skips(const torch::Tensor& idx_content,
                                        const torch::Tensor& idx_style,
                                        const std::vector<torch::Tensor>& content_feats,
                                        const std::vector<torch::Tensor>& style_feats) {
  std::vector<torch::Tensor> out;
  for (size_t i = content_feats.size(); i-- > 0;)
    out.push_back(torch::cat({content_feats[i].index_select(0, idx_content),
                              style_feats[i].index_select(0, idx_style)},
                             1));
  return out;
}

}  // namespace

torch::Tensor kl_divergence(const StylePosterior& post) {
  auto per_sample = 0.5 * (post.mu.pow(2) + post.log_var.exp() - post.log_var - 1).sum(1);
  return per_sample.mean();
}

torch::Tensor reconstruction_nll(const torch::Tensor& decoded, const torch::Tensor& target) {
  if (decoded.sizes() != target.sizes())
    throw ConfigurationError("reconstruction_nll: shape mismatch");
  return (0.5 * (decoded - target).pow(2)).flatten(1).sum(1).mean();
}

LossResult vae_loss(StocModel& model, const torch::Tensor& images, const LossWeights& weights,
                    const torch::Tensor& noise) {
  auto x = model.to_model_channels(images);
  auto [z_content, content_feats] = model.content->forward_with_features(x);
  auto [post, style_feats] = model.style->forward_with_features(x);
  auto z_style = reparameterize(post, noise);
  std::vector<torch::Tensor> skips;
  if (model.cfg.use_unet_skips) skips = merge_skips(content_feats, style_feats);
  auto decoded = model.to_data_channels(model.decoder->forward(z_content, z_style, skips));
  LossResult r;
  r.components["recon"] = reconstruction_nll(decoded, images);
  r.components["kl"] = kl_divergence(post);
  r.total = weights.recon_coeff * r.components["recon"] + weights.kl_coeff * r.components["kl"];
  return r;
}

PmLosses pm_losses(StocModel& model, const torch::Tensor& images, const LossWeights& weights,
                   const torch::Tensor& noise) {
  if (!model.cpn) throw ConfigurationError("pm_losses requires a PM model (no CPN present)");
  auto x = model.to_model_channels(images);
  auto z_content = model.content->forward(x).detach();  // constant target
  auto post = model.style->forward(x);

  // CPN regression step: posterior detached so only theta_CPN learns from it.
  StylePosterior frozen_post{post.mu.detach(), post.log_var.detach()};
  auto cpn_loss = (z_content - model.cpn->forward(frozen_post)).pow(2).sum(1).mean();

  // Style/decoder step: the style encoder maximizes the CPN error.
  auto z_style = reparameterize(post, noise);
  auto decoded = model.to_data_channels(model.decoder->forward(z_content, z_style));
  auto adv_err = (z_content - model.cpn->forward(post)).pow(2).sum(1).mean();
  LossResult style_result;
  style_result.components["recon"] = reconstruction_nll(decoded, images);
  style_result.components["kl"] = kl_divergence(post);
  style_result.components["pm"] = adv_err;
  style_result.total = weights.recon_coeff * style_result.components["recon"] +
                       weights.kl_coeff * style_result.components["kl"] -
                       weights.pm_lambda * adv_err;
  return PmLosses{cpn_loss, std::move(style_result)};
}

LfDetail lf_loss_detail(StocModel& model, const PairBatch& batch, const LossWeights& weights,
                        int64_t bin_count, const torch::Tensor& noise) {
  if (batch.positive_pairs.empty() || batch.negative_pairs.empty())
    throw SamplingError("lf_loss requires nonempty P+ and P-");
  auto x = model.to_model_channels(batch.images);
  auto [z_content, content_feats] = model.content->forward_with_features(x);
  auto [post, style_feats] = model.style->forward_with_features(x);
  auto z_style = reparameterize(post, noise);

  const auto gather = [](const std::vector<std::pair<int64_t, int64_t>>& pairs, bool first) {
    std::vector<int64_t> idx;
    idx.reserve(pairs.size());
    for (const auto& p : pairs) idx.push_back(first ? p.first : p.second);
    return torch::tensor(idx, torch::kInt64);
  };
  auto pos_a = gather(batch.positive_pairs, true);
  auto pos_b = gather(batch.positive_pairs, false);
  auto neg_a = gather(batch.negative_pairs, true);
  auto neg_b = gather(batch.negative_pairs, false);

  // q: content of x, style of same-class x'. r: content of x, style of
  // cross-class y.
  std::vector<torch::Tensor> q_skips, r_skips;
  if (model.cfg.use_unet_skips) {
    q_skips = select_skips(pos_a, pos_b, content_feats, style_feats);
    r_skips = select_skips(neg_a, neg_b, content_feats, style_feats);
  }
  auto q = model.decoder->forward(z_content.index_select(0, pos_a),
                                  z_style.index_select(0, pos_b), q_skips);
  auto r = model.decoder->forward(z_content.index_select(0, neg_a),
                                  z_style.index_select(0, neg_b), r_skips);

  auto recomb_nll =
      reconstruction_nll(model.to_data_channels(q), batch.images.index_select(0, pos_b));

  // Re-encode the synthesized images through the frozen content encoder.
  auto zq = model.content->forward(q);
  auto zr = model.content->forward(r);
  const auto row_cos = [](const torch::Tensor& a, const torch::Tensor& b) {
    return ((a * b).sum(1) / (a.norm(2, 1) * b.norm(2, 1))).clamp(-1.0, 1.0);
  };
  auto s_pos = torch::cat({row_cos(z_content.index_select(0, pos_a),
                                   z_content.index_select(0, pos_b)),
                           row_cos(z_content.index_select(0, pos_a), zq)});
  // The style donor y and the recombination r must not share content: a high
  // cos(z_y, z_r) means the donor's class leaked through the style code.
  auto s_neg = torch::cat({row_cos(z_content.index_select(0, neg_a),
                                   z_content.index_select(0, neg_b)),
                           row_cos(z_content.index_select(0, neg_b), zr)});
  auto overlap = histogram_loss_from_similarities(s_pos, s_neg, bin_count);

  LfDetail out;
  out.result.components["kl"] = kl_divergence(post);
  out.result.components["lf_recon"] = recomb_nll;
  out.result.components["lf_overlap"] = overlap;
  out.result.total = weights.kl_coeff * out.result.components["kl"] +
                     weights.lf_lambda1 * recomb_nll + weights.lf_lambda2 * overlap;
  out.s_pos = s_pos;
  out.s_neg = s_neg;
  out.recombined = torch::cat({q, r});
  return out;
}

LossResult lf_loss(StocModel& model, const PairBatch& batch, const LossWeights& weights,
                   int64_t bin_count, const torch::Tensor& noise) {
  return lf_loss_detail(model, batch, weights, bin_count, noise).result;
}

WganLosses wgan_gp_losses_fn(const CriticFn& critic, const torch::Tensor& real_images,
                             const torch::Tensor& fake_images, const torch::Tensor& eps_uniform,
                             double gp_weight) {
  if (real_images.size(0) != fake_images.size(0))
    throw ConfigurationError("wgan_gp_losses: batch size mismatch");
  auto eps = eps_uniform.view({-1, 1, 1, 1}).to(real_images.dtype());
  auto interp =
      (eps * real_images.detach() + (1.0 - eps) * fake_images.detach()).requires_grad_(true);
  auto interp_scores = critic(interp);
  auto grads = torch::autograd::grad({interp_scores.sum()}, {interp},
                                     /*grad_outputs=*/{}, /*retain_graph=*/true,
                                     /*create_graph=*/true)[0];
  auto grad_norm = grads.flatten(1).norm(2, 1);
  auto penalty = (grad_norm - 1.0).pow(2).mean();

  WganLosses out;
  out.gradient_penalty = penalty;
  out.critic_loss = critic(fake_images.detach()).mean() - critic(real_images).mean() +
                    gp_weight * penalty;
  out.generator_loss = -critic(fake_images).mean();
  return out;
}

WganLosses wgan_gp_losses(Critic& critic, const torch::Tensor& real_images,
                          const torch::Tensor& fake_images, const torch::Tensor& eps_uniform,
                          double gp_weight) {
  return wgan_gp_losses_fn([&critic](const torch::Tensor& x) { return critic->forward(x); },
                           real_images, fake_images, eps_uniform, gp_weight);
}

MetricsLog::MetricsLog(const std::string& path) : path_(path) {
  if (path_.empty()) return;
  if (!std::filesystem::exists(path_)) {
    std::ofstream out(path_);
    if (!out) throw Error("cannot create metrics log: " + path_);
    out << "step,epoch,component,value\n";
  }
}

void MetricsLog::append(int64_t step, int64_t epoch,
                        const std::map<std::string, double>& components) {
  for (const auto& [name, value] : components) append(step, epoch, name, value);
}

void MetricsLog::append(int64_t step, int64_t epoch, const std::string& name, double value) {
  if (path_.empty()) return;
  std::ofstream out(path_, std::ios::app);
  out << step << "," << epoch << "," << name << "," << value << "\n";
}

}  // namespace stoc
