// sdetr: cost estimation, trace dumps, training and evaluation.
//
// Exit codes: 0 ok, 1 usage, 2 validation, 3 runtime.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "sdetr/attention.hpp"
#include "sdetr/cost_model.hpp"
#include "sdetr/data.hpp"
#include "sdetr/ops.hpp"
#include "sdetr/selfcheck.hpp"
#include "sdetr/train.hpp"

namespace fs = std::filesystem;
using namespace sdetr;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kValidation = 2;
constexpr int kRuntime = 3;

struct Options {
  std::string config = "6-6-0-0";
  std::size_t input = 512;
  std::size_t size = 64;
  std::size_t epochs = 30;
  std::size_t batch = 8;
  double lr = 1e-4;
  std::uint64_t seed = 0;
  std::string out;
  std::string dataset;
  bool budget_warn = false;

  std::size_t d_model = 64;
  std::size_t queries = 100;
  std::size_t classes = 3;
  double dropout = 0.1;
  std::size_t backbone_channels = 64;
  std::size_t train_images = 500;
  std::size_t val_images = 100;
  std::size_t images = 100;
  std::size_t lr_drop = 0;
  double grad_clip = 0.1;
  std::string checkpoint;
  std::vector<std::size_t> dims{2, 2, 2, 2};
};

ModelConfig model_config(const Options& o) {
  ModelConfig base;
  base.d_model = o.d_model;
  base.n_queries = o.queries;
  base.n_classes = o.classes;
  base.dropout = o.dropout;
  base.backbone_channels = o.backbone_channels;
  return parse_config(o.config, base);
}

void warn_budget(const Options& o, const ModelConfig& cfg) {
  if (!o.budget_warn) return;
  for (const auto& w : budget_warnings(cfg)) std::cerr << "warning: " << w << '\n';
}

// Writes `text` to --out when given, otherwise to stdout.
void emit(const Options& o, const std::string& text) {
  if (o.out.empty()) {
    std::cout << text << '\n';
    return;
  }
  std::ofstream os(o.out, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + o.out);
  os << text << '\n';
}

int cmd_estimate(const Options& o) {
  const ModelConfig cfg = model_config(o);
  warn_budget(o, cfg);
  emit(o, to_json(model_cost(cfg, o.input, o.input)).dump(2));
  return kOk;
}

nlohmann::json matrix_json(const Tensor& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < t.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t c = 0; c < t.cols(); ++c) row.push_back(t.at(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

int cmd_trace(const Options& o) {
  if (o.dims.size() != 4) throw ValidationError("--dims needs h,h',w,w'");
  const AttentionDims d{o.dims[0], o.dims[1], o.dims[2], o.dims[3], 1};
  d.validate();
  std::mt19937_64 rng(o.seed);
  auto random = [&](std::size_t r, std::size_t c) {
    std::vector<double> v(r * c);
    for (auto& x : v) x = 2.0 * uniform01(rng) - 1.0;
    return Tensor({r, c}, std::move(v));
  };
  const Tensor q = random(d.h, d.w), k = random(d.h_prime, d.w), v = random(d.h_prime, d.w_prime);
  const Tensor p = matmul_nt(q, k);
  const Tensor two_step = matmul(p, v);
  const Tensor a = qkva_trace(q, k, v);
  double diff = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) diff = std::max(diff, std::fabs(a.data()[i] - two_step.data()[i]));
  const AttnCost cost = attn_cost(d);
  const nlohmann::json j{
      {"dims", {{"h", d.h}, {"h_prime", d.h_prime}, {"w", d.w}, {"w_prime", d.w_prime}}},
      {"seed", o.seed},
      {"Q", matrix_json(q)},
      {"K", matrix_json(k)},
      {"V", matrix_json(v)},
      {"P", matrix_json(p)},
      {"A", matrix_json(a)},
      {"A_two_matmul", matrix_json(two_step)},
      {"max_abs_diff", diff},
      {"equivalent", diff <= 1e-12},
      {"macs", cost.macs},
      {"mem_units", cost.mem_units},
  };
  emit(o, j.dump(2));
  return diff <= 1e-12 ? kOk : kRuntime;
}

// Training/evaluation data: --dataset DIR on disk, or a seeded synthetic set.
// On-disk sets are split in file order: the last --val-images are held out.
std::pair<Dataset, Dataset> load_split(const Options& o) {
  Dataset all = o.dataset.empty() ? gen_synthetic(o.seed, o.train_images + o.val_images, o.size, o.classes)
                                  : read_dataset(o.dataset);
  if (all.size() <= o.val_images) {
    throw ValidationError("dataset has " + std::to_string(all.size()) + " images; need more than --val-images=" +
                          std::to_string(o.val_images));
  }
  const auto cut = all.end() - static_cast<std::ptrdiff_t>(o.val_images);
  return {Dataset(all.begin(), cut), Dataset(cut, all.end())};
}

// Removes what a failed command created.
class ArtifactGuard {
 public:
  explicit ArtifactGuard(fs::path dir) : dir_(std::move(dir)), created_dir_(!fs::exists(dir_)) {}
  ~ArtifactGuard() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& f : files_) fs::remove(f, ec);
    if (created_dir_) fs::remove_all(dir_, ec);
  }
  fs::path track(const std::string& name) {
    files_.push_back(dir_ / name);
    return files_.back();
  }
  void commit() { committed_ = true; }

 private:
  fs::path dir_;
  bool created_dir_;
  bool committed_ = false;
  std::vector<fs::path> files_;
};

int cmd_train(const Options& o) {
  if (o.out.empty()) throw ValidationError("train needs --out DIR");
  const ModelConfig cfg = model_config(o);
  warn_budget(o, cfg);
  TrainConfig tc;
  tc.epochs = o.epochs;
  tc.batch = o.batch;
  tc.lr = o.lr;
  tc.seed = o.seed;
  tc.lr_drop_epoch = o.lr_drop;
  tc.grad_clip = o.grad_clip;
  tc.validate();

  const auto [train_data, val_data] = load_split(o);
  const auto train_set = prepare(train_data, o.size);
  const auto val_set = prepare(val_data, o.size);

  ArtifactGuard guard(o.out);
  fs::create_directories(o.out);
  std::ofstream metrics(guard.track("metrics.jsonl"), std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot write metrics in " + o.out);
  const fs::path ckpt = guard.track("checkpoint.sdetr");

  SdetrModel model(cfg, o.seed);
  train(model, train_set, val_set, tc, [&](const EpochMetrics& m) {
    metrics << to_json(m).dump() << '\n';
    metrics.flush();
    std::cerr << "epoch " << m.epoch << " loss " << m.loss << " ap " << m.val.ap.value_or(0.0) << '\n';
  });
  if (!metrics) throw std::runtime_error("failed writing metrics");
  model.save(ckpt);
  guard.commit();
  return kOk;
}

int cmd_eval(const Options& o) {
  if (o.checkpoint.empty()) throw ValidationError("eval needs --checkpoint FILE");
  const SdetrModel model = SdetrModel::load(o.checkpoint);
  Dataset data = o.dataset.empty() ? gen_synthetic(o.seed, o.images, o.size, model.config().n_classes)
                                   : read_dataset(o.dataset);
  if (data.empty()) throw ValidationError("no images to evaluate");
  nlohmann::json j = to_json(evaluate(model, prepare(data, o.size)));
  j["images"] = data.size();
  emit(o, j.dump(2));
  return kOk;
}

int cmd_gen(const Options& o) {
  if (o.out.empty()) throw ValidationError("gen needs --out DIR");
  const Dataset data = gen_synthetic(o.seed, o.images, o.size, o.classes);
  ArtifactGuard guard(o.out);
  write_dataset(o.out, data);
  guard.commit();
  return kOk;
}

int cmd_selfcheck(const Options& o) {
  bool all = true;
  for (const auto& c : run_selfcheck(o.seed)) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
    all = all && c.passed;
  }
  return all ? kOk : kRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stacked two-level detection transformer: cost model, trace, training, evaluation"};
  app.require_subcommand(1);
  Options o;

  auto add_model_flags = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Layers \"M1-N1-M2-N2\" with optional \" + h1-h2-h3-h4\"")
        ->capture_default_str();
    sub->add_option("--d-model", o.d_model, "Model width")->capture_default_str();
    sub->add_option("--queries", o.queries, "Object queries")->capture_default_str();
    sub->add_option("--classes", o.classes, "Object classes")->capture_default_str();
    sub->add_flag("--budget-warn", o.budget_warn, "Warn about multi-head level-3 encoders");
  };

  auto* estimate = app.add_subcommand("estimate", "Attention cost report (JSON)");
  add_model_flags(estimate);
  estimate->add_option("--input", o.input, "Input side length in pixels")->capture_default_str();
  estimate->add_option("--out", o.out, "Write the report here instead of stdout");

  auto* trace = app.add_subcommand("trace", "Dump Q, K, V, P and A of the raw trace (JSON)");
  trace->add_option("--dims", o.dims, "h,h',w,w'")->delimiter(',')->expected(4);
  trace->add_option("--seed", o.seed)->capture_default_str();
  trace->add_option("--out", o.out, "Write the dump here instead of stdout");

  auto* train_cmd = app.add_subcommand("train", "Train on synthetic or on-disk data");
  add_model_flags(train_cmd);
  train_cmd->add_option("--size", o.size, "Model input side (multiple of 32)")->capture_default_str();
  train_cmd->add_option("--epochs", o.epochs)->capture_default_str();
  train_cmd->add_option("--batch", o.batch)->capture_default_str();
  train_cmd->add_option("--lr", o.lr)->capture_default_str();
  train_cmd->add_option("--lr-drop", o.lr_drop, "Epoch from which lr is divided by 10 (0: never)")
      ->capture_default_str();
  train_cmd->add_option("--grad-clip", o.grad_clip, "Global gradient-norm limit (0: off)")->capture_default_str();
  train_cmd->add_option("--dropout", o.dropout)->capture_default_str();
  train_cmd->add_option("--backbone-channels", o.backbone_channels)->capture_default_str();
  train_cmd->add_option("--seed", o.seed)->capture_default_str();
  train_cmd->add_option("--out", o.out, "Output directory (checkpoint.sdetr, metrics.jsonl)")->required();
  train_cmd->add_option("--dataset", o.dataset, "Dataset directory; synthetic data when absent");
  train_cmd->add_option("--train-images", o.train_images, "Synthetic training images")->capture_default_str();
  train_cmd->add_option("--val-images", o.val_images, "Held-out images")->capture_default_str();

  auto* eval = app.add_subcommand("eval", "AP report of a checkpoint (JSON)");
  eval->add_option("--checkpoint", o.checkpoint)->required();
  eval->add_option("--dataset", o.dataset, "Dataset directory; synthetic data when absent");
  eval->add_option("--size", o.size, "Model input side")->capture_default_str();
  eval->add_option("--images", o.images, "Synthetic images")->capture_default_str();
  eval->add_option("--seed", o.seed)->capture_default_str();
  eval->add_option("--out", o.out, "Write the report here instead of stdout");

  auto* gen = app.add_subcommand("gen", "Write a synthetic dataset to disk");
  gen->add_option("--out", o.out, "Dataset directory")->required();
  gen->add_option("--images", o.images)->capture_default_str();
  gen->add_option("--size", o.size)->capture_default_str();
  gen->add_option("--classes", o.classes)->capture_default_str();
  gen->add_option("--seed", o.seed)->capture_default_str();

  auto* selfcheck = app.add_subcommand("selfcheck", "Run the oracle suites");
  selfcheck->add_option("--seed", o.seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*estimate) return cmd_estimate(o);
    if (*trace) return cmd_trace(o);
    if (*train_cmd) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*gen) return cmd_gen(o);
    if (*selfcheck) return cmd_selfcheck(o);
  } catch (const ConfigParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::invalid_argument& e) {  // ValidationError, ShapeError
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
