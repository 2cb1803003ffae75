#pragma once

#include <torch/torch.h>

#include <functional>
#include <map>
#include <string>

#include "stoc/datasets.hpp"
#include "stoc/models.hpp"

namespace stoc {

struct LossWeights {
  double kl_coeff = 1.0;
  double recon_coeff = 1.0;
  double pm_lambda = 1.0;
  double lf_lambda1 = 20.0;
  double lf_lambda2 = 20.0;
  double wgan_coeff = 0.5;
  double gp_weight = 10.0;

  void validate() const;
};

// A differentiable total plus its named components. `report()` extracts
// plain numbers for logging; the total must reconstitute from the weighted
// components.
struct LossResult {
  torch::Tensor total;
  std::map<std::string, torch::Tensor> components;

  std::map<std::string, double> report() const;
};

// 0.5 * sum_d (mu^2 + exp(log_var) - log_var - 1), mean over the batch.
torch::Tensor kl_divergence(const StylePosterior& post);

// 0.5 * ||decoded - target||^2 summed over pixels, mean over the batch.
torch::Tensor reconstruction_nll(const torch::Tensor& decoded, const torch::Tensor& target);

// Standard VAE objective for CC/CE/PM. `images` are in dataset channels;
// `noise` is a standard-normal draw of posterior shape.
LossResult vae_loss(StocModel& model, const torch::Tensor& images, const LossWeights& weights,
                    const torch::Tensor& noise);

// Predictability-minimization pair: the CPN regression loss (for the CPN
// step) and the adversarial style/decoder total L_VAE - lambda * cpn_err.
// z^c is detached throughout; the style step treats CPN weights as fixed.
struct PmLosses {
  torch::Tensor cpn_loss;
  LossResult style_result;
};
PmLosses pm_losses(StocModel& model, const torch::Tensor& images, const LossWeights& weights,
                   const torch::Tensor& noise);

// Leakage-filtering objective over a paired batch:
//   kl_coeff * KL + lambda1 * NLL(q, x') over P+ + lambda2 * overlap(S+, S-)
// where q/r are same/cross-class style recombinations, and S+/S- mix
// real-to-real with real-to-recombined content similarities (recombinations
// re-encoded through the frozen content encoder).
LossResult lf_loss(StocModel& model, const PairBatch& batch, const LossWeights& weights,
                   int64_t bin_count, const torch::Tensor& noise);

// Also exposes the similarity sets and synthesized images (q then r, in
// model channels, graph attached) for the WGAN generator term and for tests.
struct LfDetail {
  LossResult result;
  torch::Tensor s_pos;
  torch::Tensor s_neg;
  torch::Tensor recombined;
};
LfDetail lf_loss_detail(StocModel& model, const PairBatch& batch, const LossWeights& weights,
                        int64_t bin_count, const torch::Tensor& noise);

// WGAN-GP losses. `eps_uniform` is a [B]-shaped U(0,1) draw per pair.
// critic_loss includes the gradient penalty; generator_loss is the raw
// -E[critic(fake)] (callers scale by wgan_coeff).
struct WganLosses {
  torch::Tensor critic_loss;
  torch::Tensor generator_loss;
  torch::Tensor gradient_penalty;
};
WganLosses wgan_gp_losses(Critic& critic, const torch::Tensor& real_images,
                          const torch::Tensor& fake_images, const torch::Tensor& eps_uniform,
                          double gp_weight);

// Same computation against an arbitrary scoring function (analytic oracles,
// tiny test networks).
using CriticFn = std::function<torch::Tensor(const torch::Tensor&)>;
WganLosses wgan_gp_losses_fn(const CriticFn& critic, const torch::Tensor& real_images,
                             const torch::Tensor& fake_images, const torch::Tensor& eps_uniform,
                             double gp_weight);

// Appends `step, epoch, component, value` rows to a delimited metrics log.
class MetricsLog {
 public:
  MetricsLog() = default;
  explicit MetricsLog(const std::string& path);
  void append(int64_t step, int64_t epoch, const std::map<std::string, double>& components);
  void append(int64_t step, int64_t epoch, const std::string& name, double value);

 private:
  std::string path_;
};

}  // namespace stoc
