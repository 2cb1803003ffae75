#include "stoc/datasets.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "stoc/common.hpp"

namespace fs = std::filesystem;

namespace stoc {

namespace {

constexpr uint32_t kIdxImageMagic = 0x00000803;
constexpr uint32_t kIdxLabelMagic = 0x00000801;

uint32_t read_be_u32(std::istream& in, const std::string& what) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (!in) throw FormatError("truncated IDX header while reading " + what);
  return (uint32_t(buf[0]) << 24) | (uint32_t(buf[1]) << 16) | (uint32_t(buf[2]) << 8) |
         uint32_t(buf[3]);
}

std::vector<int64_t> shuffled_indices(int64_t n, std::mt19937_64& rng) {
  std::vector<int64_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

// Reassigns instance ids so each class counts 0..n_c-1 in sample order.
torch::Tensor renumber_instances(const torch::Tensor& labels) {
  auto out = torch::zeros_like(labels);
  std::map<int64_t, int64_t> next;
  auto lab = labels.accessor<int64_t, 1>();
  auto dst = out.accessor<int64_t, 1>();
  for (int64_t i = 0; i < labels.size(0); ++i) dst[i] = next[lab[i]]++;
  return out;
}

}  // namespace

LabeledDataset LabeledDataset::select(const std::vector<int64_t>& indices) const {
  auto idx = torch::tensor(indices, torch::kInt64);
  LabeledDataset out;
  out.images = images.index_select(0, idx);
  out.labels = labels.index_select(0, idx);
  out.instance_ids = instance_ids.index_select(0, idx);
  out.class_count = class_count;
  return out;
}

LabeledDataset LabeledDataset::select_classes(const std::vector<int64_t>& classes) const {
  std::map<int64_t, int64_t> remap;
  for (size_t i = 0; i < classes.size(); ++i) remap[classes[i]] = static_cast<int64_t>(i);
  std::vector<int64_t> keep;
  auto lab = labels.accessor<int64_t, 1>();
  for (int64_t i = 0; i < size(); ++i)
    if (remap.count(lab[i])) keep.push_back(i);
  LabeledDataset out = select(keep);
  auto out_lab = out.labels.accessor<int64_t, 1>();
  for (int64_t i = 0; i < out.size(); ++i) out_lab[i] = remap[out_lab[i]];
  out.class_count = static_cast<int64_t>(classes.size());
  return out;
}

std::vector<int64_t> LabeledDataset::class_indices(int64_t class_id) const {
  std::vector<int64_t> out;
  auto lab = labels.accessor<int64_t, 1>();
  for (int64_t i = 0; i < size(); ++i)
    if (lab[i] == class_id) out.push_back(i);
  return out;
}

void LabeledDataset::validate() const {
  if (size() == 0) return;
  const double lo = images.min().item<double>();
  const double hi = images.max().item<double>();
  if (lo < -1.0 - 1e-6 || hi > 1.0 + 1e-6)
    throw ConsistencyError("pixel range violation: [" + std::to_string(lo) + ", " +
                           std::to_string(hi) + "]");
  std::set<std::pair<int64_t, int64_t>> seen;
  auto lab = labels.accessor<int64_t, 1>();
  auto ins = instance_ids.accessor<int64_t, 1>();
  for (int64_t i = 0; i < size(); ++i) {
    if (lab[i] < 0 || lab[i] >= class_count)
      throw ConsistencyError("class id out of range: " + std::to_string(lab[i]));
    if (!seen.emplace(lab[i], ins[i]).second)
      throw ConsistencyError("duplicate (class_id, instance_id) pair");
  }
}

LabeledDataset load_idx_dataset(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img_in(images_path, std::ios::binary);
  if (!img_in) throw FormatError("cannot open IDX image file: " + images_path);
  std::ifstream lab_in(labels_path, std::ios::binary);
  if (!lab_in) throw FormatError("cannot open IDX label file: " + labels_path);

  const uint32_t img_magic = read_be_u32(img_in, "image magic");
  if (img_magic != kIdxImageMagic)
    throw FormatError("bad IDX image magic in " + images_path + ": got " +
                      std::to_string(img_magic));
  const int64_t n_images = read_be_u32(img_in, "image count");
  const int64_t rows = read_be_u32(img_in, "rows");
  const int64_t cols = read_be_u32(img_in, "cols");

  const uint32_t lab_magic = read_be_u32(lab_in, "label magic");
  if (lab_magic != kIdxLabelMagic)
    throw FormatError("bad IDX label magic in " + labels_path + ": got " +
                      std::to_string(lab_magic));
  const int64_t n_labels = read_be_u32(lab_in, "label count");
  if (n_images != n_labels)
    throw ConsistencyError("IDX image/label count mismatch: " + std::to_string(n_images) +
                           " images vs " + std::to_string(n_labels) + " labels");

  std::vector<uint8_t> pixels(static_cast<size_t>(n_images) * rows * cols);
  img_in.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!img_in) throw FormatError("truncated IDX image payload in " + images_path);
  std::vector<uint8_t> labels(static_cast<size_t>(n_labels));
  lab_in.read(reinterpret_cast<char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
  if (!lab_in) throw FormatError("truncated IDX label payload in " + labels_path);

  auto raw = torch::from_blob(pixels.data(), {n_images, 1, rows, cols}, torch::kUInt8)
                 .to(torch::kFloat32);
  LabeledDataset ds;
  ds.images = raw * (2.0f / 255.0f) - 1.0f;  // p -> 2p/255 - 1
  ds.labels = torch::tensor(std::vector<int64_t>(labels.begin(), labels.end()), torch::kInt64);
  ds.instance_ids = renumber_instances(ds.labels);
  ds.class_count = ds.labels.max().item<int64_t>() + 1;
  return ds;
}

std::pair<LabeledDataset, LabeledDataset> load_mnist(const std::string& train_images_path,
                                                     const std::string& train_labels_path,
                                                     const std::string& test_images_path,
                                                     const std::string& test_labels_path) {
  auto dev = load_idx_dataset(train_images_path, train_labels_path);
  auto test = load_idx_dataset(test_images_path, test_labels_path);
  return {std::move(dev), std::move(test)};
}

SplitSpec split_mnist_dev(const LabeledDataset& dev, uint64_t seed) {
  if (dev.size() == 0 || dev.size() % 5 != 0)
    throw ConsistencyError("dev split expects a size divisible by 5, got " +
                           std::to_string(dev.size()));
  std::mt19937_64 rng(seed);
  // Stratified by class with largest-remainder rounding so the totals are an
  // exact 80/20 split even when class counts are not multiples of 5.
  const int64_t train_target = dev.size() / 5 * 4;
  std::vector<size_t> cuts(dev.class_count);
  std::vector<std::pair<double, int64_t>> remainders;
  int64_t allocated = 0;
  for (int64_t c = 0; c < dev.class_count; ++c) {
    const double quota = 0.8 * static_cast<double>(dev.class_indices(c).size());
    cuts[c] = static_cast<size_t>(std::floor(quota));
    allocated += static_cast<int64_t>(cuts[c]);
    remainders.emplace_back(quota - std::floor(quota), c);
  }
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  for (int64_t i = 0; i < train_target - allocated; ++i) ++cuts[remainders[i].second];

  std::vector<int64_t> train_idx, val_idx;
  for (int64_t c = 0; c < dev.class_count; ++c) {
    auto members = dev.class_indices(c);
    std::shuffle(members.begin(), members.end(), rng);
    train_idx.insert(train_idx.end(), members.begin(), members.begin() + cuts[c]);
    val_idx.insert(val_idx.end(), members.begin() + cuts[c], members.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());
  SplitSpec out;
  out.source_train = dev.select(train_idx);
  out.source_val = dev.select(val_idx);
  out.seed = seed;
  return out;
}

LabeledDataset load_omniglot(const std::string& root_path, int64_t resolution,
                             int64_t expected_classes, int64_t expected_instances) {
  if (!fs::is_directory(root_path))
    throw FormatError("omniglot root is not a directory: " + root_path);

  // Deterministic class order: sorted (alphabet, character) paths.
  std::vector<fs::path> char_dirs;
  std::vector<fs::path> alphabets;
  for (const auto& e : fs::directory_iterator(root_path))
    if (e.is_directory()) alphabets.push_back(e.path());
  std::sort(alphabets.begin(), alphabets.end());
  for (const auto& a : alphabets) {
    std::vector<fs::path> chars;
    for (const auto& e : fs::directory_iterator(a))
      if (e.is_directory()) chars.push_back(e.path());
    std::sort(chars.begin(), chars.end());
    char_dirs.insert(char_dirs.end(), chars.begin(), chars.end());
  }
  if (expected_classes >= 0 && static_cast<int64_t>(char_dirs.size()) != expected_classes)
    throw ConsistencyError("omniglot: expected " + std::to_string(expected_classes) +
                           " character classes, found " + std::to_string(char_dirs.size()));

  std::vector<torch::Tensor> images;
  std::vector<int64_t> labels, instances;
  for (size_t c = 0; c < char_dirs.size(); ++c) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(char_dirs[c]))
      if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (expected_instances >= 0 && static_cast<int64_t>(files.size()) != expected_instances)
      throw ConsistencyError("omniglot class " + char_dirs[c].string() + ": expected " +
                             std::to_string(expected_instances) + " instances, found " +
                             std::to_string(files.size()));
    for (size_t i = 0; i < files.size(); ++i) {
      cv::Mat gray = cv::imread(files[i].string(), cv::IMREAD_GRAYSCALE);
      if (gray.empty()) throw FormatError("cannot decode PNG: " + files[i].string());
      cv::Mat resized;
      cv::resize(gray, resized, cv::Size(static_cast<int>(resolution), static_cast<int>(resolution)),
                 0, 0, cv::INTER_AREA);
      auto t = torch::from_blob(resized.data, {1, resolution, resolution}, torch::kUInt8)
                   .to(torch::kFloat32);
      // Ink inversion: source is dark strokes on white; flip to bright-on-dark
      // to match MNIST conventions, then rescale to [-1,1].
      t = (255.0f - t) * (2.0f / 255.0f) - 1.0f;
      images.push_back(t.clone());
      labels.push_back(static_cast<int64_t>(c));
      instances.push_back(static_cast<int64_t>(i));
    }
  }
  if (images.empty()) throw ConsistencyError("omniglot: no classes found under " + root_path);

  LabeledDataset ds;
  ds.images = torch::stack(images);
  ds.labels = torch::tensor(labels, torch::kInt64);
  ds.instance_ids = torch::tensor(instances, torch::kInt64);
  ds.class_count = static_cast<int64_t>(char_dirs.size());
  return ds;
}

LabeledDataset rotate_augment_classes(const LabeledDataset& ds) {
  if (ds.height() != ds.width())
    throw ConfigurationError("rotation augmentation requires square images");
  std::vector<torch::Tensor> images;
  std::vector<torch::Tensor> labels;
  images.reserve(4);
  labels.reserve(4);
  for (int64_t k = 0; k < 4; ++k) {
    images.push_back(k == 0 ? ds.images : torch::rot90(ds.images, k, {2, 3}));
    labels.push_back(ds.labels + k * ds.class_count);
  }
  LabeledDataset out;
  out.images = torch::cat(images);
  out.labels = torch::cat(labels);
  out.instance_ids = ds.instance_ids.repeat({4});
  out.class_count = 4 * ds.class_count;
  return out;
}

SplitSpec split_classes(const LabeledDataset& ds, uint64_t seed, int64_t train_classes,
                        int64_t val_classes, int64_t test_classes) {
  if (train_classes + val_classes + test_classes != ds.class_count)
    throw ConsistencyError("class split sizes " + std::to_string(train_classes) + "+" +
                           std::to_string(val_classes) + "+" + std::to_string(test_classes) +
                           " do not sum to class count " + std::to_string(ds.class_count));
  std::mt19937_64 rng(seed);
  auto order = shuffled_indices(ds.class_count, rng);
  const std::vector<int64_t> train_set(order.begin(), order.begin() + train_classes);
  const std::vector<int64_t> val_set(order.begin() + train_classes,
                                     order.begin() + train_classes + val_classes);
  const std::vector<int64_t> test_set(order.begin() + train_classes + val_classes, order.end());
  SplitSpec out;
  out.source_train = ds.select_classes(train_set);
  out.source_val = ds.select_classes(val_set);
  out.target = ds.select_classes(test_set);
  out.seed = seed;
  out.train_class_ids = train_set;
  out.val_class_ids = val_set;
  out.test_class_ids = test_set;
  return out;
}

SplitSpec split_omniglot_classes(const LabeledDataset& ds, uint64_t seed) {
  if (ds.class_count != 6492)
    throw ConsistencyError("omniglot class split expects 6492 classes, got " +
                           std::to_string(ds.class_count));
  return split_classes(ds, seed, 4154, 1039, 1299);
}

PairBatch sample_balanced_minibatch(const LabeledDataset& ds, int64_t classes_per_batch,
                                    int64_t samples_per_class, std::mt19937_64& rng,
                                    bool subsample_negatives) {
  if (classes_per_batch > ds.class_count)
    throw SamplingError("classes_per_batch " + std::to_string(classes_per_batch) +
                        " exceeds class count " + std::to_string(ds.class_count));
  auto class_order = shuffled_indices(ds.class_count, rng);
  class_order.resize(classes_per_batch);

  std::vector<int64_t> chosen;
  std::vector<int64_t> chosen_labels;
  for (const int64_t c : class_order) {
    auto members = ds.class_indices(c);
    if (static_cast<int64_t>(members.size()) < samples_per_class)
      throw SamplingError("class " + std::to_string(c) + " has only " +
                          std::to_string(members.size()) + " instances, need " +
                          std::to_string(samples_per_class));
    std::shuffle(members.begin(), members.end(), rng);
    for (int64_t i = 0; i < samples_per_class; ++i) {
      chosen.push_back(members[i]);
      chosen_labels.push_back(c);
    }
  }

  PairBatch batch;
  batch.images = ds.images.index_select(0, torch::tensor(chosen, torch::kInt64));
  batch.labels = torch::tensor(chosen_labels, torch::kInt64);
  const int64_t n = static_cast<int64_t>(chosen.size());
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = i + 1; j < n; ++j) {
      if (chosen_labels[i] == chosen_labels[j])
        batch.positive_pairs.emplace_back(i, j);
      else
        batch.negative_pairs.emplace_back(i, j);
    }
  if (subsample_negatives && batch.negative_pairs.size() > batch.positive_pairs.size()) {
    std::shuffle(batch.negative_pairs.begin(), batch.negative_pairs.end(), rng);
    batch.negative_pairs.resize(batch.positive_pairs.size());
    std::sort(batch.negative_pairs.begin(), batch.negative_pairs.end());
  }
  return batch;
}

void write_split_manifest(const std::string& path, const SplitSpec& split) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write split manifest: " + path);
  out << "seed = " << split.seed << "\n";
  const auto emit = [&out](const char* name, const LabeledDataset& ds,
                           const std::vector<int64_t>& ids) {
    out << name << ".samples = " << ds.size() << "\n";
    out << name << ".classes = " << ds.class_count << "\n";
    if (!ids.empty()) {
      out << name << ".class_ids =";
      for (const int64_t id : ids) out << " " << id;
      out << "\n";
    }
  };
  emit("source_train", split.source_train, split.train_class_ids);
  emit("source_val", split.source_val, split.val_class_ids);
  emit("target", split.target, split.test_class_ids);
}

}  // namespace stoc
