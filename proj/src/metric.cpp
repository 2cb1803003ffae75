#include "stoc/metric.hpp"

#include <fstream>

#include "stoc/common.hpp"

namespace stoc {

torch::Tensor cosine_similarity(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes())
    throw ConfigurationError("cosine_similarity: dimension mismatch");
  auto na = a.norm();
  auto nb = b.norm();
  if (na.item<double>() == 0.0 || nb.item<double>() == 0.0)
    throw RangeError("cosine_similarity: zero vector");
  return (a.flatten().dot(b.flatten()) / (na * nb)).clamp(-1.0, 1.0);
}

torch::Tensor pairwise_cosine(const torch::Tensor& embeddings,
                              const std::vector<std::pair<int64_t, int64_t>>& pairs) {
  std::vector<int64_t> lhs, rhs;
  lhs.reserve(pairs.size());
  rhs.reserve(pairs.size());
  for (const auto& [i, j] : pairs) {
    lhs.push_back(i);
    rhs.push_back(j);
  }
  auto a = embeddings.index_select(0, torch::tensor(lhs, torch::kInt64));
  auto b = embeddings.index_select(0, torch::tensor(rhs, torch::kInt64));
  auto dots = (a * b).sum(1);
  auto norms = a.norm(2, 1) * b.norm(2, 1);
  return (dots / norms).clamp(-1.0, 1.0);
}

torch::Tensor histogram_nodes(int64_t bin_count) {
  return torch::linspace(-1.0, 1.0, bin_count, torch::kFloat64);
}

torch::Tensor build_soft_histogram(const torch::Tensor& values, int64_t bin_count) {
  if (bin_count < 2) throw ConfigurationError("soft histogram needs at least 2 bins");
  if (values.numel() == 0) throw RangeError("soft histogram of an empty value set");
  auto v = values.flatten();
  {
    torch::NoGradGuard ng;
    const double lo = v.min().item<double>();
    const double hi = v.max().item<double>();
    if (lo < -1.0 || hi > 1.0)
      throw RangeError("soft histogram input outside [-1,1]: [" + std::to_string(lo) + ", " +
                       std::to_string(hi) + "]");
  }
  const double delta = 2.0 / static_cast<double>(bin_count - 1);
  // Fractional node coordinate of each value; node r sits at -1 + r*delta.
  auto pos = (v + 1.0) / delta;
  auto lower = pos.detach().floor().clamp(0, bin_count - 2).to(torch::kInt64);
  auto frac = pos - lower.to(pos.dtype());  // in [0,1], gradient flows through v
  auto masses = torch::zeros({bin_count}, v.options());
  const auto unit = 1.0 / static_cast<double>(v.numel());
  masses = masses.index_add(0, lower, (1.0 - frac) * unit);
  masses = masses.index_add(0, lower + 1, frac * unit);
  return masses;
}

torch::Tensor histogram_overlap_loss(const torch::Tensor& h_pos, const torch::Tensor& h_neg) {
  if (h_pos.sizes() != h_neg.sizes())
    throw ConfigurationError("histogram overlap: bin count mismatch");
  return (h_neg * h_pos.cumsum(0)).sum();
}

torch::Tensor histogram_loss_from_similarities(const torch::Tensor& pos_sims,
                                               const torch::Tensor& neg_sims, int64_t bin_count) {
  auto h_pos = build_soft_histogram(pos_sims, bin_count);
  auto h_neg = build_soft_histogram(neg_sims, bin_count);
  return histogram_overlap_loss(h_pos, h_neg);
}

torch::Tensor histogram_loss(const torch::Tensor& embeddings, const PairBatch& pairs,
                             int64_t bin_count) {
  if (pairs.positive_pairs.empty() || pairs.negative_pairs.empty())
    throw SamplingError("histogram loss needs nonempty P+ and P-");
  auto pos = pairwise_cosine(embeddings, pairs.positive_pairs);
  auto neg = pairwise_cosine(embeddings, pairs.negative_pairs);
  return histogram_loss_from_similarities(pos, neg, bin_count);
}

int64_t select_prototype(const torch::Tensor& embeddings) {
  if (embeddings.dim() != 2 || embeddings.size(0) == 0)
    throw RangeError("select_prototype: need a nonempty [n, d] matrix");
  const int64_t n = embeddings.size(0);
  if (n == 1) return 0;
  auto d2 = torch::cdist(embeddings, embeddings).pow(2);
  auto sums = d2.sum(1);
  // argmin with lowest-index tie break; scan explicitly rather than trusting
  // the backend's tie behavior.
  auto sums64 = sums.to(torch::kFloat64).contiguous();
  auto acc = sums64.accessor<double, 1>();
  int64_t best = 0;
  for (int64_t i = 1; i < n; ++i)
    if (acc[i] < acc[best]) best = i;
  return best;
}

void export_embeddings(const std::string& path, const LabeledDataset& ds,
                       const torch::Tensor& embeddings) {
  if (embeddings.size(0) != ds.size())
    throw ConfigurationError("embedding export: row count mismatch");
  std::ofstream out(path);
  if (!out) throw Error("cannot write embedding export: " + path);
  out.precision(9);
  auto emb = embeddings.to(torch::kFloat64).contiguous();
  auto acc = emb.accessor<double, 2>();
  auto lab = ds.labels.accessor<int64_t, 1>();
  auto ins = ds.instance_ids.accessor<int64_t, 1>();
  for (int64_t i = 0; i < ds.size(); ++i) {
    out << lab[i] << "," << ins[i];
    for (int64_t j = 0; j < emb.size(1); ++j) out << "," << acc[i][j];
    out << "\n";
  }
}

}  // namespace stoc
