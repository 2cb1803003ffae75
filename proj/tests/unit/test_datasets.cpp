#include <fstream>
#include <random>
#include <set>

#include "stoc/common.hpp"
#include "stoc/datasets.hpp"
#include "synthetic.hpp"
#include "test_helpers.hpp"

// doctest last: torch's logging shims also define CHECK
#include <doctest.h>

using namespace stoc;

namespace {

void put_be32(std::ofstream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<char*>(b), 4);
}

}  // namespace

TEST_CASE("idx loader rescales bytes to [-1, 1]") {
  TempDir tmp;
  {
    std::ofstream img(tmp.file("imgs"), std::ios::binary);
    put_be32(img, 0x00000803);
    put_be32(img, 1);
    put_be32(img, 2);
    put_be32(img, 2);
    unsigned char px[4] = {0, 128, 255, 64};
    img.write(reinterpret_cast<char*>(px), 4);
    std::ofstream lab(tmp.file("labs"), std::ios::binary);
    put_be32(lab, 0x00000801);
    put_be32(lab, 1);
    unsigned char l = 0;
    lab.write(reinterpret_cast<char*>(&l), 1);
  }
  auto ds = load_idx_dataset(tmp.file("imgs"), tmp.file("labs"));
  REQUIRE(ds.size() == 1);
  CHECK(ds.images[0][0][0][0].item<double>() == doctest::Approx(-1.0));
  // byte 128 -> 2*128/255 - 1
  CHECK(ds.images[0][0][0][1].item<double>() == doctest::Approx(2.0 * 128 / 255 - 1.0));
  CHECK(ds.images[0][0][1][0].item<double>() == doctest::Approx(1.0));
}

TEST_CASE("idx loader rejects bad magic and mismatched counts") {
  TempDir tmp;
  {
    std::ofstream img(tmp.file("imgs"), std::ios::binary);
    put_be32(img, 0xdeadbeef);
    put_be32(img, 1);
    put_be32(img, 1);
    put_be32(img, 1);
    char px = 0;
    img.write(&px, 1);
    std::ofstream lab(tmp.file("labs"), std::ios::binary);
    put_be32(lab, 0x00000801);
    put_be32(lab, 1);
    char l = 0;
    lab.write(&l, 1);
  }
  CHECK_THROWS_AS(load_idx_dataset(tmp.file("imgs"), tmp.file("labs")), FormatError);
}

TEST_CASE("idx round trip through the writer preserves pixels to quantization") {
  TempDir tmp;
  auto ds = testing::make_glyph_dataset(5, 6, 28, 42);
  testing::write_idx_files(ds, tmp.file("imgs"), tmp.file("labs"));
  auto loaded = load_idx_dataset(tmp.file("imgs"), tmp.file("labs"));
  REQUIRE(loaded.size() == ds.size());
  CHECK(loaded.labels.equal(ds.labels));
  CHECK((loaded.images - ds.images).abs().max().item<double>() <= 1.0 / 255.0 + 1e-6);
}

TEST_CASE("stratified dev split is 80/20 per class and deterministic") {
  auto dev = testing::make_glyph_dataset(10, 50, 28, 7);
  auto split = split_mnist_dev(dev, 123);
  CHECK(split.source_train.size() == 400);
  CHECK(split.source_val.size() == 100);
  for (int64_t c = 0; c < 10; ++c) {
    const auto train_n = split.source_train.class_indices(c).size();
    CHECK(std::abs(static_cast<double>(train_n) - 0.8 * 50) <= 1.0);
  }
  auto split2 = split_mnist_dev(dev, 123);
  CHECK(split2.source_train.images.equal(split.source_train.images));
  auto split3 = split_mnist_dev(dev, 124);
  CHECK(!split3.source_train.images.equal(split.source_train.images));
}

TEST_CASE("balanced minibatch enumerates pairs exactly") {
  auto ds = testing::make_glyph_dataset(12, 8, 28, 3);
  std::mt19937_64 rng(1);

  SUBCASE("10 classes x 4: |P+| = 60, |P-| = 720, all pairs class-correct") {
    auto batch = sample_balanced_minibatch(ds, 10, 4, rng);
    CHECK(batch.images.size(0) == 40);
    CHECK(batch.positive_pairs.size() == 60);
    CHECK(batch.negative_pairs.size() == 720);
    auto labels = batch.labels;
    for (const auto& [i, j] : batch.positive_pairs) {
      CHECK(i < j);
      CHECK(labels[i].item<int64_t>() == labels[j].item<int64_t>());
    }
    for (const auto& [i, j] : batch.negative_pairs) {
      CHECK(i < j);
      CHECK(labels[i].item<int64_t>() != labels[j].item<int64_t>());
    }
    // Exhaustive: every (i, j), i < j, appears in exactly one set.
    std::set<std::pair<int64_t, int64_t>> all;
    for (const auto& p : batch.positive_pairs) all.insert(p);
    for (const auto& p : batch.negative_pairs) all.insert(p);
    CHECK(all.size() == 780);
  }

  SUBCASE("subsampled negatives match |P+|") {
    auto batch = sample_balanced_minibatch(ds, 10, 3, rng, /*subsample_negatives=*/true);
    CHECK(batch.positive_pairs.size() == 30);
    CHECK(batch.negative_pairs.size() == 30);
  }

  SUBCASE("requesting more classes than exist throws") {
    CHECK_THROWS_AS(sample_balanced_minibatch(ds, 13, 4, rng), SamplingError);
  }
}

TEST_CASE("rotation augmentation quadruples classes and is invertible") {
  auto ds = testing::make_glyph_dataset(6, 4, 28, 9);
  auto rot = rotate_augment_classes(ds);
  CHECK(rot.class_count == 24);
  CHECK(rot.size() == 4 * ds.size());
  // class c + k * 6 is the k-fold 90-degree rotation of class c
  auto base = ds.images[0][0];
  for (int64_t k = 1; k < 4; ++k) {
    auto idx = rot.class_indices(0 + k * 6)[0];
    CHECK(rot.images[idx][0].equal(torch::rot90(base, k)));
  }
  // four rotations recover the original
  CHECK(torch::rot90(base, 4).equal(base));
}

TEST_CASE("glyph tree loads through the directory loader") {
  TempDir tmp;
  auto ds = testing::make_glyph_dataset(8, 5, 32, 11);
  testing::write_glyph_tree(ds, tmp.path.string(), 4);
  auto loaded = load_omniglot(tmp.path.string(), 32, /*expected_classes=*/8,
                              /*expected_instances=*/5);
  CHECK(loaded.size() == 40);
  CHECK(loaded.class_count == 8);
  CHECK(loaded.height() == 32);
  CHECK(loaded.width() == 32);
  // Ink inversion round trip: loader flips dark-on-white back to bright ink.
  CHECK((loaded.images - ds.images).abs().max().item<double>() <= 1.0 / 255.0 + 1e-6);
  CHECK_THROWS_AS(load_omniglot(tmp.path.string(), 32, 9, 5), ConsistencyError);
}

TEST_CASE("class-level split partitions the class set") {
  auto ds = testing::make_glyph_dataset(20, 3, 28, 5);
  auto split = split_classes(ds, 77, 12, 3, 5);
  CHECK(split.source_train.class_count == 12);
  CHECK(split.source_val.class_count == 3);
  CHECK(split.target.class_count == 5);
  std::set<int64_t> all;
  for (auto v : {&split.train_class_ids, &split.val_class_ids, &split.test_class_ids})
    all.insert(v->begin(), v->end());
  CHECK(all.size() == 20);
  CHECK(*all.begin() == 0);
  CHECK(*all.rbegin() == 19);
  CHECK_THROWS_AS(split_classes(ds, 77, 12, 4, 5), ConsistencyError);
}

TEST_CASE("select_classes remaps labels contiguously") {
  auto ds = testing::make_glyph_dataset(6, 3, 28, 2);
  auto sub = ds.select_classes({4, 1});
  CHECK(sub.class_count == 2);
  CHECK(sub.size() == 6);
  CHECK(sub.labels.min().item<int64_t>() == 0);
  CHECK(sub.labels.max().item<int64_t>() == 1);
  // order given: class 4 -> 0, class 1 -> 1; sample order is preserved
  auto first_of_new_zero = sub.class_indices(0)[0];
  CHECK(sub.images[first_of_new_zero][0].equal(ds.images[ds.class_indices(4)[0]][0]));
  auto first_of_new_one = sub.class_indices(1)[0];
  CHECK(sub.images[first_of_new_one][0].equal(ds.images[ds.class_indices(1)[0]][0]));
}

TEST_CASE("dataset validate catches broken invariants") {
  auto ds = testing::make_glyph_dataset(3, 2, 28, 1);
  ds.labels[0] = 99;
  CHECK_THROWS_AS(ds.validate(), ConsistencyError);
}

TEST_CASE("split manifest records seed and class ids") {
  TempDir tmp;
  auto ds = testing::make_glyph_dataset(10, 3, 28, 4);
  auto split = split_classes(ds, 55, 6, 2, 2);
  write_split_manifest(tmp.file("m.txt"), split);
  std::ifstream in(tmp.file("m.txt"));
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(text.find("55") != std::string::npos);
  CHECK(text.find("train") != std::string::npos);
}
