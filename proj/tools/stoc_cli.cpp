// Experiment driver: data preparation, two-phase training, recombination
// grids, evaluation protocols, weight sweeps and embedding export.

#include <torch/torch.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "stoc/common.hpp"
#include "stoc/config.hpp"
#include "stoc/datasets.hpp"
#include "stoc/eval.hpp"
#include "stoc/losses.hpp"
#include "stoc/metric.hpp"
#include "stoc/models.hpp"
#include "stoc/recombine.hpp"
#include "stoc/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

struct GlobalOptions {
  uint64_t seed = 0;
  bool deterministic = false;
  bool force = false;
  std::string data_root;
};

uint64_t file_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw stoc::Error("cannot read " + path);
  uint64_t h = 1469598103934665603ull;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
  }
  return h;
}

// Every command writes exactly one of these next to its outputs.
struct RunManifest {
  std::string command;
  std::string config_text;
  std::map<std::string, std::string> input_checksums;
  std::vector<std::string> outputs;
  uint64_t seed = 0;
  double duration_seconds = 0.0;

  void add_input(const std::string& path) {
    std::ostringstream hex;
    hex << std::hex << file_checksum(path);
    input_checksums[path] = hex.str();
  }

  void write(const std::string& path) const {
    json j;
    j["command"] = command;
    j["config"] = config_text;
    j["inputs"] = input_checksums;
    j["outputs"] = outputs;
    j["seed"] = seed;
    j["duration_seconds"] = duration_seconds;
    std::ofstream out(path);
    if (!out) throw stoc::Error("cannot write manifest " + path);
    out << j.dump(2) << "\n";
  }
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void require_writable(const std::string& path, bool force) {
  if (fs::exists(path) && !force)
    throw stoc::ConfigurationError("refusing to overwrite " + path + " (pass --force)");
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

std::string resolve_data_root(const GlobalOptions& g) {
  if (!g.data_root.empty()) return g.data_root;
  if (const char* env = std::getenv("STOC_DATA_ROOT")) return env;
  throw stoc::ConfigurationError("no data root: pass --data-root or set STOC_DATA_ROOT");
}

void apply_determinism(const GlobalOptions& g) {
  torch::manual_seed(g.seed);
  if (g.deterministic) {
    at::globalContext().setDeterministicAlgorithms(true, /*warn_only=*/true);
    torch::globalContext().setBenchmarkCuDNN(false);
  }
}

// ---------------------------------------------------------------------------
// Normalized dataset cache: one archive per split.

void save_dataset(const stoc::LabeledDataset& ds, const std::string& path) {
  torch::serialize::OutputArchive a;
  a.write("images", ds.images);
  a.write("labels", ds.labels);
  a.write("instance_ids", ds.instance_ids);
  a.write("class_count", torch::tensor(ds.class_count));
  a.save_to(path);
}

stoc::LabeledDataset load_dataset(const std::string& path) {
  if (!fs::exists(path))
    throw stoc::ConfigurationError("dataset cache not found: " + path +
                                   " (run `prepare` first)");
  torch::serialize::InputArchive a;
  a.load_from(path);
  stoc::LabeledDataset ds;
  torch::Tensor count;
  a.read("images", ds.images);
  a.read("labels", ds.labels);
  a.read("instance_ids", ds.instance_ids);
  a.read("class_count", count);
  ds.class_count = count.item<int64_t>();
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// prepare

int cmd_prepare(const GlobalOptions& g, const std::string& dataset, const std::string& out_dir,
                int64_t resolution) {
  Stopwatch timer;
  const std::string root = resolve_data_root(g);
  RunManifest manifest;
  manifest.command = "prepare " + dataset;
  manifest.seed = g.seed;

  for (const char* name : {"train.pt", "val.pt", "test.pt", "split_manifest.txt"})
    require_writable((fs::path(out_dir) / name).string(), g.force);

  stoc::SplitSpec split;
  if (dataset == "mnist") {
    const fs::path d = fs::path(root) / "mnist";
    const std::string files[4] = {
        (d / "train-images-idx3-ubyte").string(), (d / "train-labels-idx1-ubyte").string(),
        (d / "t10k-images-idx3-ubyte").string(), (d / "t10k-labels-idx1-ubyte").string()};
    for (const auto& f : files)
      if (!fs::exists(f))
        throw stoc::ConfigurationError("missing MNIST file: expected " + f);
    for (const auto& f : files) manifest.add_input(f);
    auto [dev, test] = stoc::load_mnist(files[0], files[1], files[2], files[3]);
    split = stoc::split_mnist_dev(dev, g.seed);
    split.target = std::move(test);
  } else if (dataset == "omniglot") {
    const fs::path d = fs::path(root) / "omniglot";
    if (!fs::exists(d))
      throw stoc::ConfigurationError("missing Omniglot tree: expected directory " + d.string());
    auto ds = stoc::load_omniglot(d.string(), resolution);
    ds = stoc::rotate_augment_classes(ds);
    split = stoc::split_omniglot_classes(ds, g.seed);
  } else {
    throw stoc::ConfigurationError("unknown dataset '" + dataset + "' (mnist, omniglot)");
  }

  const auto emit = [&](const stoc::LabeledDataset& ds, const char* name) {
    const std::string path = (fs::path(out_dir) / name).string();
    save_dataset(ds, path);
    manifest.outputs.push_back(path);
  };
  emit(split.source_train, "train.pt");
  emit(split.source_val, "val.pt");
  emit(split.target, "test.pt");
  const std::string split_path = (fs::path(out_dir) / "split_manifest.txt").string();
  stoc::write_split_manifest(split_path, split);
  manifest.outputs.push_back(split_path);

  std::cout << "prepared " << dataset << ": train=" << split.source_train.size()
            << " val=" << split.source_val.size() << " test=" << split.target.size()
            << " (train classes=" << split.source_train.class_count << ")\n";
  manifest.duration_seconds = timer.seconds();
  manifest.write((fs::path(out_dir) / "manifest.json").string());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const GlobalOptions& g, const std::string& config_path,
              const std::vector<std::string>& overrides, const std::string& data_dir,
              const std::string& out_dir) {
  Stopwatch timer;
  stoc::Config cfg = stoc::Config::from_file(config_path);
  for (const auto& o : overrides) cfg.apply_override(o);
  if (!cfg.has("train.seed")) cfg.set("train.seed", std::to_string(g.seed));
  stoc::TrainConfig tc = stoc::TrainConfig::from_config(cfg);

  const std::string content_path = (fs::path(out_dir) / "content.ckpt").string();
  const std::string stoc_path = (fs::path(out_dir) / "stoc.ckpt").string();
  const std::string metrics_path = (fs::path(out_dir) / "metrics.csv").string();
  for (const auto& p : {content_path, stoc_path, metrics_path}) require_writable(p, g.force);
  if (fs::exists(metrics_path)) fs::remove(metrics_path);

  auto train_ds = load_dataset((fs::path(data_dir) / "train.pt").string());
  auto val_ds = load_dataset((fs::path(data_dir) / "val.pt").string());

  RunManifest manifest;
  manifest.command = "train";
  manifest.config_text = tc.to_config().to_string();
  manifest.seed = tc.seed;
  manifest.add_input(config_path);
  manifest.add_input((fs::path(data_dir) / "train.pt").string());
  manifest.add_input((fs::path(data_dir) / "val.pt").string());

  stoc::MetricsLog log(metrics_path);
  std::cout << "phase 1: content encoder (" << stoc::to_string(tc.model.variant) << ", "
            << stoc::to_string(tc.model.arch) << ")\n";
  auto content_ckpt = stoc::train_content_encoder(tc, train_ds, val_ds, &log);
  content_ckpt.save(content_path);
  const double nn_acc = stoc::nearest_neighbor_accuracy(content_ckpt.model, train_ds, val_ds);
  std::cout << "content encoder: best epoch " << content_ckpt.epoch
            << ", 1-NN val accuracy " << nn_acc << "\n";

  std::cout << "phase 2: style encoder + decoder\n";
  auto ckpt = stoc::train_stoc(tc, content_ckpt, train_ds, val_ds, &log);
  ckpt.save(stoc_path);
  std::cout << "stoc: best epoch " << ckpt.epoch << ", validation total "
            << ckpt.validation_history[ckpt.epoch - 1] << "\n";

  manifest.outputs = {content_path, stoc_path, metrics_path};
  manifest.duration_seconds = timer.seconds();
  manifest.write((fs::path(out_dir) / "manifest.json").string());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// recombine

std::vector<int64_t> parse_id_list(const std::string& text, int64_t limit) {
  std::vector<int64_t> out;
  std::istringstream in(text);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    const int64_t v = std::stoll(tok);
    if (v < 0 || v >= limit)
      throw stoc::ConfigurationError("sample id " + std::to_string(v) +
                                     " out of range [0, " + std::to_string(limit) + ")");
    out.push_back(v);
  }
  if (out.empty()) throw stoc::ConfigurationError("empty sample id list");
  return out;
}

int cmd_recombine(const GlobalOptions& g, const std::string& ckpt_path,
                  const std::string& data_dir, const std::string& split,
                  const std::string& contents, const std::string& styles,
                  const std::string& out_path) {
  Stopwatch timer;
  require_writable(out_path, g.force);
  auto ckpt = stoc::Checkpoint::load(ckpt_path);
  auto ds = load_dataset((fs::path(data_dir) / (split + ".pt")).string());
  if (ds.channels() != ckpt.config.model.in_channels ||
      ds.height() != ckpt.config.model.image_size)
    throw stoc::ConfigurationError("checkpoint expects " +
                                   std::to_string(ckpt.config.model.in_channels) + "x" +
                                   std::to_string(ckpt.config.model.image_size) +
                                   " inputs; dataset does not match");

  const auto content_ids = parse_id_list(contents, ds.size());
  const auto style_ids = parse_id_list(styles, ds.size());
  auto content_row = ds.images.index_select(
      0, torch::tensor(content_ids, torch::kInt64));
  auto style_col = ds.images.index_select(0, torch::tensor(style_ids, torch::kInt64));
  stoc::render_grid(ckpt.model, content_row, style_col, out_path);
  std::cout << "wrote " << (style_ids.size() + 1) << "x" << (content_ids.size() + 1)
            << " grid to " << out_path << "\n";

  RunManifest manifest;
  manifest.command = "recombine";
  manifest.seed = g.seed;
  manifest.add_input(ckpt_path);
  manifest.outputs = {out_path};
  manifest.duration_seconds = timer.seconds();
  manifest.write(out_path + ".manifest.json");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string protocol;
  std::vector<std::string> checkpoints;
  std::string data_dir;
  std::string out_path;
  int64_t n = 20, k = 1, m = 0, episodes = 400;
  double alpha = 0.5, w_s = 0.85, temperature = 0.05;
  int64_t nest_steps = 20000, nest_batch = 40;
  bool style_from_prior = false;
  int64_t scratch_classes = 100;
};

int cmd_eval(const GlobalOptions& g, const EvalArgs& a) {
  Stopwatch timer;
  require_writable(a.out_path, g.force);
  auto train_ds = load_dataset((fs::path(a.data_dir) / "train.pt").string());
  auto test_ds = load_dataset((fs::path(a.data_dir) / "test.pt").string());

  RunManifest manifest;
  manifest.command = "eval " + a.protocol;
  manifest.seed = g.seed;
  for (const auto& c : a.checkpoints) manifest.add_input(c);

  stoc::EvalReport report;
  report.protocol = a.protocol;

  if (a.protocol == "nest") {
    stoc::NestOptions opts;
    opts.train_steps = a.nest_steps;
    opts.batch_size = a.nest_batch;
    opts.style_from_prior = a.style_from_prior;
    opts.seed = g.seed;
    std::vector<stoc::NestResult> results;
    for (const auto& path : a.checkpoints) {
      auto ckpt = stoc::Checkpoint::load(path);
      auto r = stoc::nest_evaluate(ckpt.model, train_ds, test_ds, opts);
      std::cout << stoc::to_string(ckpt.config.model.variant) << "  mean correct-class prob "
                << r.mean_correct_prob << "\n";
      report.per_episode.push_back(r.mean_correct_prob);
      results.push_back(std::move(r));
    }
    if (results.size() > 1) {
      const double bonferroni =
          static_cast<double>(results.size() * (results.size() - 1)) / 2.0;
      for (size_t i = 0; i < results.size(); ++i)
        for (size_t j = i + 1; j < results.size(); ++j) {
          auto [t, p] = stoc::paired_t_test(results[i].per_sample_probs,
                                            results[j].per_sample_probs);
          std::cout << "  t-test [" << i << " vs " << j << "]: t=" << t
                    << " p(corrected)=" << std::min(1.0, p * bonferroni) << "\n";
        }
    }
  } else if (a.protocol == "fewshot") {
    auto ckpt = stoc::Checkpoint::load(a.checkpoints.at(0));
    stoc::EpisodeSpec spec{a.n, a.k, a.m, a.episodes, a.alpha};
    stoc::FewShotWeights weights{a.w_s, a.temperature};
    report = stoc::episodic_fewshot_eval(ckpt.model, test_ds, train_ds, spec, weights, g.seed);
    std::cout << a.n << "-way " << a.k << "-shot (m=" << a.m << "): " << report.mean << " +- "
              << report.stderr_ << "\n";
  } else if (a.protocol == "scratch") {
    auto ckpt = stoc::Checkpoint::load(a.checkpoints.at(0));
    std::mt19937_64 rng(g.seed);
    std::vector<int64_t> classes(test_ds.class_count);
    std::iota(classes.begin(), classes.end(), 0);
    std::shuffle(classes.begin(), classes.end(), rng);
    classes.resize(std::min<size_t>(classes.size(), a.scratch_classes));
    auto task = test_ds.select_classes(classes);
    std::vector<int64_t> support_idx, query_idx;
    for (int64_t c = 0; c < task.class_count; ++c) {
      auto idx = task.class_indices(c);
      std::shuffle(idx.begin(), idx.end(), rng);
      for (size_t i = 0; i < idx.size(); ++i)
        (i < static_cast<size_t>(a.k) ? support_idx : query_idx).push_back(idx[i]);
    }
    auto support = task.select(support_idx);
    auto query = task.select(query_idx);
    stoc::ScratchOptions opts;
    opts.n_classes = task.class_count;
    opts.m = a.m;
    opts.alpha = a.alpha;
    opts.seed = g.seed;
    if (a.m == 0) opts.mix_ratios = {0.0};
    auto r = stoc::train_scratch_classifier(a.m > 0 ? &ckpt.model : nullptr, support.images,
                                            support.labels, train_ds, query.images, query.labels,
                                            opts);
    std::cout << "scratch classifier (" << task.class_count << " classes, k=" << a.k
              << ", m=" << a.m << "): accuracy " << r.test_accuracy << " (mix ratio "
              << r.chosen_mix_ratio << ", " << r.chosen_epochs << " epochs)\n";
    report.per_episode = {r.test_accuracy};
  } else if (a.protocol == "styleprobe") {
    auto ckpt = stoc::Checkpoint::load(a.checkpoints.at(0));
    stoc::StyleProbeOptions opts;
    opts.seed = g.seed;
    auto val_ds = load_dataset((fs::path(a.data_dir) / "val.pt").string());
    const double acc = stoc::style_probe(ckpt.model, train_ds, val_ds, opts);
    std::cout << "style probe accuracy: " << acc << "\n";
    report.per_episode = {acc};
  } else {
    throw stoc::ConfigurationError("unknown protocol '" + a.protocol +
                                   "' (nest, fewshot, scratch, styleprobe)");
  }

  report.finalize();
  report.write(a.out_path);
  manifest.outputs = {a.out_path};
  manifest.duration_seconds = timer.seconds();
  manifest.write(a.out_path + ".manifest.json");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// sweep

int cmd_sweep(const GlobalOptions& g, const std::string& config_path,
              const std::vector<std::string>& overrides, const std::string& axis,
              const std::string& values_csv, const std::string& content_ckpt_path,
              const std::string& data_dir, const std::string& out_path, int64_t nest_steps) {
  Stopwatch timer;
  require_writable(out_path, g.force);
  stoc::Config cfg = stoc::Config::from_file(config_path);
  for (const auto& o : overrides) cfg.apply_override(o);
  if (!cfg.has("train.seed")) cfg.set("train.seed", std::to_string(g.seed));
  stoc::TrainConfig tc = stoc::TrainConfig::from_config(cfg);

  std::vector<double> values;
  {
    std::istringstream in(values_csv);
    std::string tok;
    while (std::getline(in, tok, ',')) values.push_back(std::stod(tok));
  }
  if (values.empty()) throw stoc::ConfigurationError("empty sweep value list");

  auto content_ckpt = stoc::Checkpoint::load(content_ckpt_path);
  auto train_ds = load_dataset((fs::path(data_dir) / "train.pt").string());
  auto val_ds = load_dataset((fs::path(data_dir) / "val.pt").string());

  stoc::NestOptions nest;
  nest.train_steps = nest_steps;
  nest.seed = g.seed;
  auto report = stoc::sweep_weights(tc, axis, values, content_ckpt, train_ds, val_ds, nest);
  report.write(out_path);
  for (const auto& row : report.rows)
    std::cout << axis << "=" << row.value << "  nest=" << row.nest_score << "\n";

  RunManifest manifest;
  manifest.command = "sweep " + axis;
  manifest.config_text = tc.to_config().to_string();
  manifest.seed = tc.seed;
  manifest.add_input(config_path);
  manifest.add_input(content_ckpt_path);
  manifest.outputs = {out_path};
  manifest.duration_seconds = timer.seconds();
  manifest.write(out_path + ".manifest.json");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// export-embeddings

int cmd_export(const GlobalOptions& g, const std::string& ckpt_path, const std::string& data_dir,
               const std::string& split, const std::string& out_path) {
  Stopwatch timer;
  require_writable(out_path, g.force);
  auto ckpt = stoc::Checkpoint::load(ckpt_path);
  auto ds = load_dataset((fs::path(data_dir) / (split + ".pt")).string());
  torch::NoGradGuard ng;
  ckpt.model.set_eval();
  std::vector<torch::Tensor> chunks;
  for (int64_t i = 0; i < ds.size(); i += 256)
    chunks.push_back(ckpt.model.content->forward(
        ckpt.model.to_model_channels(ds.images.slice(0, i, std::min(i + 256, ds.size())))));
  stoc::export_embeddings(out_path, ds, torch::cat(chunks));
  std::cout << "wrote " << ds.size() << " embeddings to " << out_path << "\n";

  RunManifest manifest;
  manifest.command = "export-embeddings";
  manifest.seed = g.seed;
  manifest.add_input(ckpt_path);
  manifest.outputs = {out_path};
  manifest.duration_seconds = timer.seconds();
  manifest.write(out_path + ".manifest.json");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"style-transfer experiment driver"};
  app.require_subcommand(1);

  GlobalOptions g;
  app.add_option("--seed", g.seed, "global random seed");
  app.add_flag("--deterministic", g.deterministic, "force deterministic kernels");
  app.add_flag("--force", g.force, "allow overwriting existing outputs");
  app.add_option("--data-root", g.data_root, "raw data root (or STOC_DATA_ROOT)");

  // prepare
  std::string prep_dataset, prep_out;
  int64_t prep_resolution = 32;
  auto* prepare = app.add_subcommand("prepare", "normalize a dataset and write splits");
  prepare->add_option("dataset", prep_dataset, "mnist or omniglot")->required();
  prepare->add_option("--out", prep_out, "output directory")->required();
  prepare->add_option("--resolution", prep_resolution, "image resolution (omniglot)");

  // train
  std::string train_config, train_data, train_out;
  std::vector<std::string> train_sets;
  auto* train = app.add_subcommand("train", "run both training phases");
  train->add_option("--config", train_config)->required();
  train->add_option("--set", train_sets, "config overrides, key=value");
  train->add_option("--data", train_data, "prepared dataset directory")->required();
  train->add_option("--out", train_out, "output directory")->required();

  // recombine
  std::string rec_ckpt, rec_data, rec_split = "test", rec_contents, rec_styles, rec_out;
  auto* recombine = app.add_subcommand("recombine", "render a content x style grid");
  recombine->add_option("--checkpoint", rec_ckpt)->required();
  recombine->add_option("--data", rec_data)->required();
  recombine->add_option("--split", rec_split, "train, val or test");
  recombine->add_option("--contents", rec_contents, "comma-separated sample ids")->required();
  recombine->add_option("--styles", rec_styles, "comma-separated sample ids")->required();
  recombine->add_option("--out", rec_out, "output PNG")->required();

  // eval
  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "run an evaluation protocol");
  eval->add_option("protocol", ev.protocol, "nest, fewshot, scratch or styleprobe")->required();
  eval->add_option("--checkpoint", ev.checkpoints, "checkpoint path(s)")->required();
  eval->add_option("--data", ev.data_dir)->required();
  eval->add_option("--out", ev.out_path)->required();
  eval->add_option("--n", ev.n);
  eval->add_option("--k", ev.k);
  eval->add_option("--m", ev.m);
  eval->add_option("--episodes", ev.episodes);
  eval->add_option("--alpha", ev.alpha);
  eval->add_option("--ws", ev.w_s);
  eval->add_option("--temperature", ev.temperature);
  eval->add_option("--nest-steps", ev.nest_steps);
  eval->add_option("--nest-batch", ev.nest_batch);
  eval->add_flag("--style-from-prior", ev.style_from_prior);
  eval->add_option("--scratch-classes", ev.scratch_classes);

  // sweep
  std::string sw_config, sw_axis, sw_values, sw_content, sw_data, sw_out;
  std::vector<std::string> sw_sets;
  int64_t sw_nest_steps = 2000;
  auto* sweep = app.add_subcommand("sweep", "train per weight value and score with nest");
  sweep->add_option("--config", sw_config)->required();
  sweep->add_option("--set", sw_sets, "config overrides, key=value");
  sweep->add_option("--axis", sw_axis, "loss-weight field to sweep")->required();
  sweep->add_option("--values", sw_values, "comma-separated values")->required();
  sweep->add_option("--content-checkpoint", sw_content)->required();
  sweep->add_option("--data", sw_data)->required();
  sweep->add_option("--out", sw_out)->required();
  sweep->add_option("--nest-steps", sw_nest_steps);

  // export-embeddings
  std::string ex_ckpt, ex_data, ex_split = "test", ex_out;
  auto* exp = app.add_subcommand("export-embeddings", "write content embeddings as delimited text");
  exp->add_option("--checkpoint", ex_ckpt)->required();
  exp->add_option("--data", ex_data)->required();
  exp->add_option("--split", ex_split);
  exp->add_option("--out", ex_out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    apply_determinism(g);
    if (prepare->parsed()) return cmd_prepare(g, prep_dataset, prep_out, prep_resolution);
    if (train->parsed()) return cmd_train(g, train_config, train_sets, train_data, train_out);
    if (recombine->parsed())
      return cmd_recombine(g, rec_ckpt, rec_data, rec_split, rec_contents, rec_styles, rec_out);
    if (eval->parsed()) return cmd_eval(g, ev);
    if (sweep->parsed())
      return cmd_sweep(g, sw_config, sw_sets, sw_axis, sw_values, sw_content, sw_data, sw_out,
                       sw_nest_steps);
    if (exp->parsed()) return cmd_export(g, ex_ckpt, ex_data, ex_split, ex_out);
  } catch (const stoc::ConfigurationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const stoc::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const stoc::RangeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
