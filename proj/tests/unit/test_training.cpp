#include "stoc/common.hpp"
#include "stoc/training.hpp"
#include "synthetic.hpp"
#include "test_helpers.hpp"

// doctest last: torch's logging shims also define CHECK
#include <doctest.h>

using namespace stoc;

namespace {

// Tiny configuration that trains in seconds on one core.
TrainConfig tiny_config(Variant v) {
  TrainConfig tc;
  tc.model = ModelConfig::mnist(v);
  tc.epochs = 1;
  tc.content_epochs = 2;
  tc.patience = 2;
  tc.steps_per_epoch = 3;
  tc.batch_spec = {4, 3, true};
  tc.content_batch_spec = {4, 3, false};
  tc.bin_count = 32;
  tc.critic_steps = 2;
  tc.seed = 99;
  return tc;
}

}  // namespace

TEST_CASE("train config round trips through the key-value form") {
  auto tc = tiny_config(Variant::LF);
  tc.weights.lf_lambda1 = 12.5;
  tc.optimizer.learning_rate = 3e-4;
  auto round = TrainConfig::from_config(tc.to_config());
  CHECK(round.model.variant == tc.model.variant);
  CHECK(round.weights.lf_lambda1 == doctest::Approx(12.5));
  CHECK(round.optimizer.learning_rate == doctest::Approx(3e-4));
  CHECK(round.epochs == tc.epochs);
  CHECK(round.batch_spec.classes_per_batch == 4);
  CHECK(round.batch_spec.subsample_negatives);
  CHECK(round.seed == 99);
}

TEST_CASE("train config validation rejects nonsense") {
  auto tc = tiny_config(Variant::CE);
  tc.optimizer.learning_rate = -1;
  CHECK_THROWS_AS(tc.validate(), ConfigurationError);
  tc = tiny_config(Variant::CE);
  tc.weights.kl_coeff = -0.5;
  CHECK_THROWS_AS(tc.validate(), ConfigurationError);
  auto cfg = Config::from_string("model.variant = nope\n");
  CHECK_THROWS_AS(TrainConfig::from_config(cfg), ConfigurationError);
}

TEST_CASE("two-phase training runs and keeps the content encoder frozen") {
  auto train_ds = testing::make_glyph_dataset(6, 8, 28, 101);
  auto val_ds = testing::make_glyph_dataset(6, 4, 28, 102);

  auto tc = tiny_config(Variant::LF);
  auto content = train_content_encoder(tc, train_ds, val_ds);
  CHECK(content.content_frozen);
  CHECK(!content.validation_history.empty());
  for (const auto& p : content.model.content->parameters()) CHECK(!p.requires_grad());

  const uint64_t frozen = parameter_checksum(*content.model.content);
  auto ckpt = train_stoc(tc, content, train_ds, val_ds);
  CHECK(parameter_checksum(*ckpt.model.content) == frozen);
  CHECK(ckpt.epoch >= 1);
  CHECK(std::isfinite(ckpt.validation_history.back()));

  SUBCASE("embedding variants share the content encoder") {
    auto pm = tiny_config(Variant::PM);
    auto ckpt_pm = train_stoc(pm, content, train_ds, val_ds);
    CHECK(!ckpt_pm.model.cpn.is_empty());
  }

  SUBCASE("classifier-head content encoder is rejected for embedding variants") {
    auto cc = tiny_config(Variant::CC);
    Checkpoint classifier_content;
    classifier_content.config = cc;
    classifier_content.model = StocModel::build(cc.model);
    freeze(*classifier_content.model.content);
    classifier_content.content_frozen = true;
    CHECK_THROWS_AS(train_stoc(tc, classifier_content, train_ds, val_ds), ConfigurationError);
  }
}

TEST_CASE("pm training updates the cpn without touching frozen content") {
  auto train_ds = testing::make_glyph_dataset(6, 8, 28, 103);
  auto val_ds = testing::make_glyph_dataset(6, 4, 28, 104);
  auto tc = tiny_config(Variant::PM);
  auto content = train_content_encoder(tc, train_ds, val_ds);
  auto ckpt = train_stoc(tc, content, train_ds, val_ds);  // throws on any violation
  CHECK(!ckpt.model.cpn.is_empty());
}

TEST_CASE("checkpoints round trip exactly") {
  TempDir tmp;
  auto train_ds = testing::make_glyph_dataset(6, 8, 28, 105);
  auto val_ds = testing::make_glyph_dataset(6, 4, 28, 106);
  auto tc = tiny_config(Variant::CE);
  auto ckpt = train_content_encoder(tc, train_ds, val_ds);
  ckpt.save(tmp.file("c.ckpt"));
  auto loaded = Checkpoint::load(tmp.file("c.ckpt"));

  CHECK(loaded.epoch == ckpt.epoch);
  CHECK(loaded.content_frozen == ckpt.content_frozen);
  CHECK(loaded.validation_history == ckpt.validation_history);
  CHECK(loaded.config.model.variant == tc.model.variant);
  CHECK(parameter_checksum(*loaded.model.content) == parameter_checksum(*ckpt.model.content));
  CHECK(parameter_checksum(*loaded.model.style) == parameter_checksum(*ckpt.model.style));
  CHECK(parameter_checksum(*loaded.model.decoder) == parameter_checksum(*ckpt.model.decoder));

  CHECK_THROWS_AS(Checkpoint::load(tmp.file("missing.ckpt")), FormatError);
}

TEST_CASE("validation loss is finite and deterministic for a fixed seed") {
  auto val_ds = testing::make_glyph_dataset(6, 6, 28, 107);
  auto tc = tiny_config(Variant::CE);
  auto model = StocModel::build(tc.model);
  const double a = validation_loss(model, tc, val_ds, 5);
  const double b = validation_loss(model, tc, val_ds, 5);
  CHECK(std::isfinite(a));
  CHECK(a == doctest::Approx(b));
}

TEST_CASE("nearest neighbor accuracy is a probability") {
  auto train_ds = testing::make_glyph_dataset(5, 6, 28, 108);
  auto val_ds = testing::make_glyph_dataset(5, 4, 28, 108);
  auto model = StocModel::build(ModelConfig::mnist(Variant::CE));
  const double acc = nearest_neighbor_accuracy(model, train_ds, val_ds);
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
}

TEST_CASE("weight axis setter covers every field and rejects unknowns") {
  LossWeights w;
  set_weight_axis(w, "lf_lambda1", 3.0);
  CHECK(w.lf_lambda1 == doctest::Approx(3.0));
  set_weight_axis(w, "pm_lambda", 0.25);
  CHECK(w.pm_lambda == doctest::Approx(0.25));
  set_weight_axis(w, "gp_weight", 5.0);
  CHECK(w.gp_weight == doctest::Approx(5.0));
  CHECK_THROWS_AS(set_weight_axis(w, "bogus", 1.0), ConfigurationError);
}
