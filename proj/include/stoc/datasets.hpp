#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace stoc {

// Images are float32 [N, C, H, W] with every pixel in [-1, 1]. Labels and
// instance ids are int64 [N]; class ids form the contiguous range
// [0, class_count) and (class_id, instance_id) is unique per dataset.
struct LabeledDataset {
  torch::Tensor images;
  torch::Tensor labels;
  torch::Tensor instance_ids;
  int64_t class_count = 0;

  int64_t size() const { return images.defined() ? images.size(0) : 0; }
  int64_t channels() const { return images.size(1); }
  int64_t height() const { return images.size(2); }
  int64_t width() const { return images.size(3); }

  // Subset by sample indices; labels keep their original ids.
  LabeledDataset select(const std::vector<int64_t>& indices) const;
  // Subset to the given classes, remapping labels to [0, classes.size())
  // in the order given.
  LabeledDataset select_classes(const std::vector<int64_t>& classes) const;
  // Indices of all samples with the given class id.
  std::vector<int64_t> class_indices(int64_t class_id) const;

  // Throws ConsistencyError when an invariant is broken.
  void validate() const;
};

struct SplitSpec {
  LabeledDataset source_train;
  LabeledDataset source_val;
  LabeledDataset target;
  uint64_t seed = 0;
  // Class ids in the source dataset's numbering, recorded for the manifest.
  // Class-level splits remap labels to [0, n) per split; these lists keep the
  // original ids so a run is exactly reconstructible.
  std::vector<int64_t> train_class_ids;
  std::vector<int64_t> val_class_ids;
  std::vector<int64_t> test_class_ids;
};

// Minibatch with enumerated same-class (positive) and cross-class (negative)
// index pairs. Pairs are lexicographic by (i, j), i < j, over positions in
// `images`.
struct PairBatch {
  torch::Tensor images;
  torch::Tensor labels;
  std::vector<std::pair<int64_t, int64_t>> positive_pairs;
  std::vector<std::pair<int64_t, int64_t>> negative_pairs;
};

// MNIST IDX loaders. Pixels are rescaled from [0,255] to [-1,1].
LabeledDataset load_idx_dataset(const std::string& images_path, const std::string& labels_path);
std::pair<LabeledDataset, LabeledDataset> load_mnist(const std::string& train_images_path,
                                                     const std::string& train_labels_path,
                                                     const std::string& test_images_path,
                                                     const std::string& test_labels_path);

// Instance-level stratified 80/20 split of the 60k development set.
// The returned SplitSpec carries an empty target; callers attach the test set.
SplitSpec split_mnist_dev(const LabeledDataset& dev, uint64_t seed);

// Omniglot directory tree: root/<alphabet>/<character>/<instance>.png.
// Images are converted to grayscale, resized to `resolution`, ink-inverted to
// bright-on-dark and normalized to [-1,1]. `expected_classes < 0` skips the
// canonical 1,623-class count check (used for reduced corpora in tests).
LabeledDataset load_omniglot(const std::string& root_path, int64_t resolution = 32,
                             int64_t expected_classes = 1623, int64_t expected_instances = 20);

// Adds the three nonzero 90-degree rotations as new classes:
// class_id' = class_id + k * original_class_count for rotation k.
LabeledDataset rotate_augment_classes(const LabeledDataset& ds);

// Class-level random partition. `sizes` defaults to the canonical
// (4154, 1039, 1299); pass explicit sizes for reduced corpora.
SplitSpec split_omniglot_classes(const LabeledDataset& ds, uint64_t seed);
SplitSpec split_classes(const LabeledDataset& ds, uint64_t seed, int64_t train_classes,
                        int64_t val_classes, int64_t test_classes);

// Class-balanced minibatch with enumerated pairs. When `subsample_negatives`
// is set, P- is drawn uniformly without replacement down to |P+|.
PairBatch sample_balanced_minibatch(const LabeledDataset& ds, int64_t classes_per_batch,
                                    int64_t samples_per_class, std::mt19937_64& rng,
                                    bool subsample_negatives = false);

// Split manifest: seed plus the class ids of each split, as structured text.
void write_split_manifest(const std::string& path, const SplitSpec& split);

}  // namespace stoc
