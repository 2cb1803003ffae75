#include "synthetic.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include "stoc/common.hpp"

namespace fs = std::filesystem;

namespace stoc::testing {

namespace {

struct Skeleton {
  std::vector<cv::Point2d> points;  // unit square coordinates
};

Skeleton make_skeleton(uint64_t seed, int64_t class_id) {
  std::mt19937_64 rng(seed * 1000003ull + static_cast<uint64_t>(class_id));
  std::uniform_int_distribution<int> count_dist(4, 7);
  std::uniform_real_distribution<double> coord(0.18, 0.82);
  Skeleton s;
  const int n = count_dist(rng);
  for (int i = 0; i < n; ++i) s.points.emplace_back(coord(rng), coord(rng));
  return s;
}

struct Style {
  double slant = 0.0;      // shear in x per unit y
  double thickness = 1.0;  // stroke width at base resolution
  double intensity = 1.0;  // ink level in [0, 1]
  double scale = 1.0;
  double dx = 0.0, dy = 0.0;
};

Style sample_style(std::mt19937_64& rng, double strength) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Style st;
  st.slant = 0.45 * strength * u(rng);
  st.thickness = 1.0 + 2.4 * strength * u01(rng);
  st.intensity = 1.0 - 0.45 * strength * u01(rng);
  st.scale = 1.0 + 0.15 * strength * u(rng);
  st.dx = 0.06 * strength * u(rng);
  st.dy = 0.06 * strength * u(rng);
  return st;
}

// Render at 4x supersampling, then area-downsample for soft edges.
cv::Mat render_glyph(const Skeleton& skel, const Style& st, int64_t image_size) {
  const int super = 4;
  const int big = static_cast<int>(image_size) * super;
  cv::Mat canvas = cv::Mat::zeros(big, big, CV_8UC1);
  const double cx = 0.5, cy = 0.5;
  std::vector<cv::Point> pts;
  for (const auto& p : skel.points) {
    double x = cx + st.scale * (p.x - cx) + st.slant * (p.y - cy) + st.dx;
    double y = cy + st.scale * (p.y - cy) + st.dy;
    pts.emplace_back(static_cast<int>(std::lround(x * (big - 1))),
                     static_cast<int>(std::lround(y * (big - 1))));
  }
  const int thick = std::max(1, static_cast<int>(std::lround(
                                    st.thickness * super * image_size / 28.0)));
  const int ink = static_cast<int>(std::lround(255.0 * st.intensity));
  for (size_t i = 0; i + 1 < pts.size(); ++i)
    cv::line(canvas, pts[i], pts[i + 1], cv::Scalar(ink), thick, cv::LINE_AA);
  cv::Mat small;
  cv::resize(canvas, small, cv::Size(static_cast<int>(image_size), static_cast<int>(image_size)),
             0, 0, cv::INTER_AREA);
  return small;  // bright ink on black
}

void put_be32(std::ofstream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<char*>(b), 4);
}

}  // namespace

LabeledDataset make_glyph_dataset(int64_t n_classes, int64_t instances_per_class,
                                  int64_t image_size, uint64_t seed, double style_strength) {
  const int64_t n = n_classes * instances_per_class;
  auto images = torch::empty({n, 1, image_size, image_size}, torch::kFloat32);
  auto labels = torch::empty({n}, torch::kInt64);
  auto instance_ids = torch::empty({n}, torch::kInt64);
  int64_t row = 0;
  for (int64_t c = 0; c < n_classes; ++c) {
    const Skeleton skel = make_skeleton(seed, c);
    std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ull * static_cast<uint64_t>(c + 1)));
    for (int64_t i = 0; i < instances_per_class; ++i, ++row) {
      const Style st = sample_style(rng, style_strength);
      cv::Mat img = render_glyph(skel, st, image_size);
      auto t = torch::from_blob(img.data, {image_size, image_size}, torch::kUInt8);
      images[row][0] = t.to(torch::kFloat32) * (2.0 / 255.0) - 1.0;
      labels[row] = c;
      instance_ids[row] = i;
    }
  }
  LabeledDataset ds{images, labels, instance_ids, n_classes};
  ds.validate();
  return ds;
}

void write_idx_files(const LabeledDataset& ds, const std::string& images_path,
                     const std::string& labels_path) {
  const int64_t n = ds.size(), h = ds.height(), w = ds.width();
  auto bytes = ((ds.images.squeeze(1) + 1.0) * 127.5).round().clamp(0, 255).to(torch::kUInt8)
                   .contiguous();
  std::ofstream img_out(images_path, std::ios::binary);
  if (!img_out) throw Error("cannot write " + images_path);
  put_be32(img_out, 0x00000803);
  put_be32(img_out, static_cast<uint32_t>(n));
  put_be32(img_out, static_cast<uint32_t>(h));
  put_be32(img_out, static_cast<uint32_t>(w));
  img_out.write(reinterpret_cast<const char*>(bytes.data_ptr()), n * h * w);

  std::ofstream lab_out(labels_path, std::ios::binary);
  if (!lab_out) throw Error("cannot write " + labels_path);
  put_be32(lab_out, 0x00000801);
  put_be32(lab_out, static_cast<uint32_t>(n));
  auto labels = ds.labels.to(torch::kUInt8).contiguous();
  lab_out.write(reinterpret_cast<const char*>(labels.data_ptr()), n);
}

void write_glyph_tree(const LabeledDataset& ds, const std::string& root,
                      int64_t chars_per_alphabet) {
  const int64_t h = ds.height(), w = ds.width();
  for (int64_t c = 0; c < ds.class_count; ++c) {
    const int64_t alphabet = c / chars_per_alphabet;
    char abuf[32], cbuf[32];
    std::snprintf(abuf, sizeof(abuf), "Alphabet_%03lld", static_cast<long long>(alphabet));
    std::snprintf(cbuf, sizeof(cbuf), "character%03lld", static_cast<long long>(c));
    const fs::path dir = fs::path(root) / abuf / cbuf;
    fs::create_directories(dir);
    for (const int64_t idx : ds.class_indices(c)) {
      // Ink inversion: the loader expects dark strokes on white.
      auto bytes = (255.0 - (ds.images[idx][0] + 1.0) * 127.5).round().clamp(0, 255)
                       .to(torch::kUInt8).contiguous();
      cv::Mat img(static_cast<int>(h), static_cast<int>(w), CV_8UC1, bytes.data_ptr());
      char fbuf[32];
      std::snprintf(fbuf, sizeof(fbuf), "%04lld.png",
                    static_cast<long long>(ds.instance_ids[idx].item<int64_t>()));
      if (!cv::imwrite((dir / fbuf).string(), img))
        throw Error("cannot write " + (dir / fbuf).string());
    }
  }
}

}  // namespace stoc::testing
