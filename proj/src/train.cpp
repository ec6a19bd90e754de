#include "sdetr/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sdetr/ops.hpp"

namespace sdetr {

AdamW::AdamW(std::vector<Tensor> params, double lr, double weight_decay, double beta1, double beta2,
             double eps)
    : params_(std::move(params)), lr_(lr), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

double AdamW::clip_grad_norm(double max_norm) {
  double sq = 0.0;
  for (const auto& p : params_)
    for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / (norm + 1e-6);
    for (auto& p : params_) {
      auto& g = p.node().grad;
      for (double& x : g) x *= factor;
    }
  }
  return norm;
}

void AdamW::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto values = params_[k].mutable_data();
    const auto grad = params_[k].grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      values[i] -= lr_ * (weight_decay_ * values[i] + (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_));
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::vector<PreparedSample> prepare(const Dataset& dataset, std::size_t image_size) {
  std::vector<PreparedSample> out;
  out.reserve(dataset.size());
  for (const auto& s : dataset) {
    ResizedImage r = resize_fixed(s.image, image_size);
    PreparedSample p{r.pixels, {image_size, image_size, {}}, s.truth, r.transform};
    for (const auto& o : s.truth.objects) p.canvas_truth.objects.push_back({o.class_id, r.transform.forward(o.box)});
    out.push_back(std::move(p));
  }
  return out;
}

DetectionLoss detection_loss(const ModelOutput& out, const GroundTruthSet& truth, const LossConfig& cfg,
                             bool aux, const std::vector<Assignment>* fixed) {
  const std::size_t first = aux ? 0 : out.per_layer.size() - 1;
  if (fixed != nullptr && fixed->size() != out.per_layer.size() - first) {
    throw ValidationError("detection_loss: one fixed assignment per scored layer is required");
  }
  DetectionLoss result;
  for (std::size_t i = first; i < out.per_layer.size(); ++i) {
    SetLoss l = set_loss(out.per_layer[i], truth, cfg, fixed ? &(*fixed)[i - first] : nullptr);
    result.total = i == first ? l.total : add(result.total, l.total);
    result.assignments.push_back(std::move(l.assignment));
  }
  return result;
}

std::vector<DetectionSet> predict(const SdetrModel& model, const std::vector<PreparedSample>& samples) {
  NoGradGuard no_grad;
  std::vector<DetectionSet> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    DetectionSet set = to_detections(model.forward(s.pixels, ForwardContext{}).final());
    for (auto& d : set.detections) d.box = s.transform.inverse(d.box);
    out.push_back(std::move(set));
  }
  return out;
}

ApReport evaluate(const SdetrModel& model, const std::vector<PreparedSample>& samples) {
  std::vector<GroundTruthSet> truth;
  truth.reserve(samples.size());
  for (const auto& s : samples) truth.push_back(s.source_truth);
  return evaluate_ap(predict(model, samples), truth);
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ValidationError("epochs must be positive");
  if (batch == 0) throw ValidationError("batch must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("lr must be positive");
  if (weight_decay < 0.0) throw ValidationError("weight_decay must be nonnegative");
  loss.validate();
}

nlohmann::json to_json(const EpochMetrics& m) {
  nlohmann::json j = to_json(m.val);
  j["epoch"] = m.epoch;
  j["loss"] = m.loss;
  return j;
}

std::vector<EpochMetrics> train(SdetrModel& model, const std::vector<PreparedSample>& train_set,
                                const std::vector<PreparedSample>& val_set, const TrainConfig& cfg,
                                const std::function<void(const EpochMetrics&)>& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw ValidationError("empty training set");
  std::mt19937_64 rng(cfg.seed);
  AdamW opt(model.parameters().tensors(), cfg.lr, cfg.weight_decay);
  const ForwardContext ctx{true, model.config().dropout, &rng};

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<EpochMetrics> history;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.lr_drop_epoch > 0 && epoch == cfg.lr_drop_epoch) opt.set_lr(cfg.lr * 0.1);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      const double inv = 1.0 / static_cast<double>(end - start);
      opt.zero_grad();
      for (std::size_t i = start; i < end; ++i) {
        const PreparedSample& s = train_set[order[i]];
        const Tensor loss = detection_loss(model.forward(s.pixels, ctx), s.canvas_truth, cfg.loss, cfg.aux_loss).total;
        const double value = loss.item();
        if (!std::isfinite(value)) throw std::runtime_error("training diverged: non-finite loss");
        loss_sum += value;
        backward(scale(loss, inv));
      }
      opt.clip_grad_norm(cfg.grad_clip);
      opt.step();
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.loss = loss_sum / static_cast<double>(order.size());
    if (!val_set.empty()) m.val = evaluate(model, val_set);
    history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return history;
}

}  // namespace sdetr
