#include <cmath>

#include "stoc/common.hpp"
#include "stoc/models.hpp"

// doctest last: torch's logging shims also define CHECK
#include <doctest.h>

using namespace stoc;

TEST_CASE("model config validation and json round trip") {
  auto cfg = ModelConfig::mnist(Variant::LF);
  cfg.validate();
  auto round = ModelConfig::from_json(cfg.to_json());
  CHECK(round.variant == cfg.variant);
  CHECK(round.content_dim == cfg.content_dim);
  CHECK(round.style_dim == cfg.style_dim);
  CHECK(round.use_wgan == cfg.use_wgan);

  auto bad = ModelConfig::mnist(Variant::CC);
  bad.content_dim = 50;  // CC must match the class count
  CHECK_THROWS_AS(bad.validate(), ConfigurationError);

  auto bad_skips = ModelConfig::mnist(Variant::CE);
  bad_skips.use_unet_skips = true;  // skips are a resnet_vgg feature
  CHECK_THROWS_AS(bad_skips.validate(), ConfigurationError);

  CHECK_THROWS_AS(variant_from_string("bogus"), ConfigurationError);
  CHECK(variant_from_string("lf") == Variant::LF);
  CHECK(arch_from_string(to_string(Arch::ResnetOmniglot)) == Arch::ResnetOmniglot);
}

TEST_CASE("content encoder output contracts") {
  torch::manual_seed(0);
  auto x = torch::randn({4, 1, 28, 28});

  SUBCASE("embedding variants emit unit rows") {
    auto model = StocModel::build(ModelConfig::mnist(Variant::CE));
    auto out = model.content->forward(x);
    CHECK(out.sizes() == torch::IntArrayRef({4, 50}));
    auto norms = out.norm(2, 1);
    CHECK((norms - 1.0).abs().max().item<double>() <= 1e-5);
  }

  SUBCASE("classification variant emits a distribution") {
    auto model = StocModel::build(ModelConfig::mnist(Variant::CC));
    auto out = model.content->forward(x);
    CHECK(out.sizes() == torch::IntArrayRef({4, 10}));
    CHECK((out.sum(1) - 1.0).abs().max().item<double>() <= 1e-5);
    CHECK(out.min().item<double>() >= 0.0);
  }
}

TEST_CASE("style encoder posterior shapes") {
  torch::manual_seed(1);
  auto model = StocModel::build(ModelConfig::mnist(Variant::CE));
  auto post = model.style->forward(torch::randn({3, 1, 28, 28}));
  CHECK(post.mu.sizes() == torch::IntArrayRef({3, 50}));
  CHECK(post.log_var.sizes() == torch::IntArrayRef({3, 50}));

  ModelConfig vgg;
  vgg.variant = Variant::LF;
  vgg.arch = Arch::ResnetVgg;
  vgg.content_dim = 200;
  vgg.style_dim = 600;
  vgg.use_unet_skips = true;
  vgg.use_wgan = true;
  vgg.image_size = 32;
  vgg.in_channels = 3;
  auto vgg_model = StocModel::build(vgg);
  auto vpost = vgg_model.style->forward(torch::randn({2, 3, 32, 32}));
  CHECK(vpost.mu.size(1) == 600);
}

TEST_CASE("reparameterization matches Monte-Carlo moments") {
  torch::manual_seed(2);
  const int64_t n = 100000;
  StylePosterior post{torch::tensor({{1.5, -0.5, 0.0}}).repeat({n, 1}),
                      torch::tensor({{0.0, std::log(4.0), std::log(0.25)}}).repeat({n, 1})};
  auto z = reparameterize(post, torch::randn({n, 3}));
  const double se_mean1 = 1.0 / std::sqrt(n);        // sigma = 1
  const double se_mean2 = 2.0 / std::sqrt(n);        // sigma = 2
  CHECK(std::abs(z.select(1, 0).mean().item<double>() - 1.5) <= 3 * se_mean1);
  CHECK(std::abs(z.select(1, 1).mean().item<double>() + 0.5) <= 3 * se_mean2);
  // var estimator SE ~ sigma^2 * sqrt(2/n)
  CHECK(std::abs(z.select(1, 1).var().item<double>() - 4.0) <= 3 * 4.0 * std::sqrt(2.0 / n));
  CHECK(std::abs(z.select(1, 2).var().item<double>() - 0.25) <= 3 * 0.25 * std::sqrt(2.0 / n));

  CHECK_THROWS_AS(reparameterize(post, torch::randn({2, 3})), ConfigurationError);
}

TEST_CASE("decoder emits dataset-shaped images") {
  torch::manual_seed(3);
  auto model = StocModel::build(ModelConfig::mnist(Variant::CE));
  auto out = model.decoder->forward(torch::randn({5, 50}), torch::randn({5, 50}));
  CHECK(out.sizes() == torch::IntArrayRef({5, 1, 28, 28}));
  CHECK(out.abs().max().item<double>() <= 1.0);  // tanh range
}

TEST_CASE("cpn maps the posterior to content dimensionality") {
  auto cfg = ModelConfig::mnist(Variant::PM);
  auto model = StocModel::build(cfg);
  REQUIRE(model.cpn);
  StylePosterior post{torch::randn({4, 50}, torch::requires_grad()),
                      torch::randn({4, 50}, torch::requires_grad())};
  auto out = model.cpn->forward(post);
  CHECK(out.sizes() == torch::IntArrayRef({4, 50}));
  out.sum().backward();
  CHECK(post.mu.grad().defined());
  CHECK(post.log_var.grad().defined());
  CHECK(post.mu.grad().abs().sum().item<double>() > 0.0);
}

TEST_CASE("critic with zeroed weights scores every input identically") {
  torch::manual_seed(4);
  auto cfg = ModelConfig::mnist(Variant::LF);
  cfg.use_wgan = true;
  auto model = StocModel::build(cfg);
  REQUIRE(model.critic);
  {
    torch::NoGradGuard ng;
    for (auto& p : model.critic->parameters()) p.zero_();
  }
  auto scores = model.critic->forward(torch::randn({6, 1, 28, 28}));
  CHECK(scores.sizes() == torch::IntArrayRef({6}));
  CHECK((scores - scores[0]).abs().max().item<double>() <= 1e-6);
}

TEST_CASE("module bundle composition per variant") {
  CHECK(StocModel::build(ModelConfig::mnist(Variant::CE)).cpn.is_empty());
  CHECK(!StocModel::build(ModelConfig::mnist(Variant::PM)).cpn.is_empty());
  auto lf = ModelConfig::mnist(Variant::LF);
  CHECK(StocModel::build(lf).critic.is_empty());
  lf.use_wgan = true;
  CHECK(!StocModel::build(lf).critic.is_empty());
}

TEST_CASE("parameter bookkeeping: counts, checksum, freezing") {
  torch::manual_seed(5);
  auto model = StocModel::build(ModelConfig::mnist(Variant::CE));
  const int64_t count = parameter_count(*model.content);
  CHECK(count > 0);
  const uint64_t sum1 = parameter_checksum(*model.content);
  CHECK(parameter_checksum(*model.content) == sum1);  // stable
  {
    torch::NoGradGuard ng;
    model.content->parameters()[0].add_(1e-3);
  }
  CHECK(parameter_checksum(*model.content) != sum1);

  freeze(*model.content);
  for (const auto& p : model.content->parameters()) CHECK(!p.requires_grad());
}

TEST_CASE("channel adapters") {
  auto cfg = ModelConfig::resnet_omniglot(Variant::CE);
  auto model = StocModel::build(cfg);
  auto mono = torch::randn({2, 1, 32, 32});
  auto tri = model.to_model_channels(mono);
  CHECK(tri.size(1) == 3);
  CHECK(tri[0][0].equal(mono[0][0]));
  CHECK(tri[0][2].equal(mono[0][0]));
  auto back = model.to_data_channels(tri);
  CHECK(back.size(1) == 1);
  CHECK((back - mono).abs().max().item<double>() <= 1e-6);
}

TEST_CASE("batch renorm keeps eval deterministic and matches shape") {
  torch::manual_seed(6);
  BatchRenorm2d bn(8);
  auto x = torch::randn({4, 8, 5, 5});
  bn->train();
  auto y = bn->forward(x);
  CHECK(y.sizes() == x.sizes());
  bn->eval();
  auto a = bn->forward(x);
  auto b = bn->forward(x);
  CHECK(a.equal(b));
}
