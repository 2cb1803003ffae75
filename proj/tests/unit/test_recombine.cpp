#include <opencv2/imgcodecs.hpp>

#include <random>

#include "stoc/common.hpp"
#include "stoc/recombine.hpp"
#include "synthetic.hpp"
#include "test_helpers.hpp"

// doctest last: torch's logging shims also define CHECK
#include <doctest.h>

using namespace stoc;

namespace {

StocModel mnist_model(Variant v = Variant::CE) {
  torch::manual_seed(71);
  return StocModel::build(ModelConfig::mnist(v));
}

}  // namespace

TEST_CASE("recombination is deterministic and shape preserving") {
  auto model = mnist_model();
  auto ds = testing::make_glyph_dataset(4, 3, 28, 51);
  auto content = ds.images.slice(0, 0, 5);
  auto style = ds.images.slice(0, 5, 10);
  auto a = recombine_batch(model, content, style);
  auto b = recombine_batch(model, content, style);
  CHECK(a.sizes() == content.sizes());
  CHECK(a.equal(b));  // posterior mean, no sampling

  auto single = recombine(model, ds.images[0], ds.images[1]);
  CHECK(single.sizes() == torch::IntArrayRef({1, 28, 28}));
  CHECK(single.equal(recombine(model, ds.images[0], ds.images[1])));
}

TEST_CASE("style interpolation endpoints match pure recombination bit-exactly") {
  auto model = mnist_model();
  auto ds = testing::make_glyph_dataset(4, 3, 28, 53);
  auto support = ds.images.slice(0, 0, 4);
  auto donor = ds.images.slice(0, 4, 8);

  auto at_one = interpolate_style_batch(model, support, donor, 1.0);
  CHECK(at_one.equal(recombine_batch(model, support, donor)));

  auto at_zero = interpolate_style_batch(model, support, donor, 0.0);
  CHECK(at_zero.equal(recombine_batch(model, support, support)));

  CHECK_THROWS_AS(interpolate_style_batch(model, support, donor, 1.5), RangeError);
}

TEST_CASE("interpolated style stays between the endpoints") {
  auto model = mnist_model();
  torch::NoGradGuard ng;
  model.set_eval();
  auto ds = testing::make_glyph_dataset(3, 2, 28, 57);
  auto post_a = model.style->forward(model.to_model_channels(ds.images.slice(0, 0, 1)));
  auto post_b = model.style->forward(model.to_model_channels(ds.images.slice(0, 1, 2)));
  const double alpha = 0.3;
  auto mixed = post_a.mu * (1 - alpha) + post_b.mu * alpha;
  auto lo = torch::min(post_a.mu, post_b.mu) - 1e-7;
  auto hi = torch::max(post_a.mu, post_b.mu) + 1e-7;
  CHECK((mixed >= lo).all().item<bool>());
  CHECK((mixed <= hi).all().item<bool>());
}

TEST_CASE("style prior sampling has the configured dimension and rough moments") {
  auto cfg = ModelConfig::mnist(Variant::CE);
  auto gen = at::detail::createCPUGenerator(1234);
  auto z = sample_style_prior(cfg, 20000, gen);
  CHECK(z.sizes() == torch::IntArrayRef({20000, 50}));
  CHECK(std::abs(z.mean().item<double>()) <= 0.02);
  CHECK(std::abs(z.var().item<double>() - 1.0) <= 0.05);
}

TEST_CASE("support augmentation yields m variations per sample") {
  auto model = mnist_model();
  auto ds = testing::make_glyph_dataset(5, 4, 28, 59);
  auto support = ds.images.slice(0, 0, 3);
  auto labels = ds.labels.slice(0, 0, 3);
  std::mt19937_64 rng(7);
  const int64_t m = 6;
  auto aug = augment_support(model, support, labels, ds, m, 0.5, rng);
  CHECK(aug.per_sample == m);
  CHECK(static_cast<int64_t>(aug.synthetic.size()) == 3 * m);
  std::map<int64_t, int64_t> counts;
  for (const auto& s : aug.synthetic) {
    counts[s.content_source]++;
    CHECK(s.alpha == doctest::Approx(0.5));
    CHECK(s.style_source >= 0);
    CHECK(s.style_source < ds.size());
  }
  for (int64_t i = 0; i < 3; ++i) CHECK(counts[i] == m);

  auto [images, combined_labels] = aug.combined();
  CHECK(images.size(0) == 3 + 3 * m);
  CHECK(combined_labels.size(0) == 3 + 3 * m);
  // synthetic labels inherit the content source's label
  CHECK(combined_labels[3].item<int64_t>() ==
        labels[aug.synthetic[0].content_source].item<int64_t>());
}

TEST_CASE("grid renderer lays out (rows+1) x (cols+1) cells") {
  TempDir tmp;
  auto model = mnist_model();
  auto ds = testing::make_glyph_dataset(4, 3, 28, 61);
  auto contents = ds.images.slice(0, 0, 5);  // 5 columns
  auto styles = ds.images.slice(0, 5, 8);    // 3 rows
  const std::string path = tmp.file("grid.png");
  render_grid(model, contents, styles, path);
  cv::Mat img = cv::imread(path, cv::IMREAD_GRAYSCALE);
  REQUIRE(!img.empty());
  CHECK(img.rows == (3 + 1) * 28);
  CHECK(img.cols == (5 + 1) * 28);

  // determinism: same invocation, identical bytes
  const std::string path2 = tmp.file("grid2.png");
  render_grid(model, contents, styles, path2);
  cv::Mat img2 = cv::imread(path2, cv::IMREAD_GRAYSCALE);
  CHECK(cv::countNonZero(img != img2) == 0);
}

TEST_CASE("png writer round trips pixel values") {
  TempDir tmp;
  auto image = torch::linspace(-1, 1, 28 * 28).reshape({1, 28, 28});
  write_image_png(image, tmp.file("x.png"));
  cv::Mat img = cv::imread(tmp.file("x.png"), cv::IMREAD_GRAYSCALE);
  REQUIRE(!img.empty());
  CHECK(img.rows == 28);
  CHECK(img.at<uint8_t>(0, 0) == 0);
  CHECK(img.at<uint8_t>(27, 27) == 255);
}
