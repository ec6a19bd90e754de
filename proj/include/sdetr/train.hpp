#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <json.hpp>

#include "sdetr/data.hpp"
#include "sdetr/matching.hpp"
#include "sdetr/model.hpp"

namespace sdetr {

/// Decoupled-weight-decay Adam over a fixed parameter list.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, double lr, double weight_decay = 1e-4, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8);

  /// Scales gradients so their global L2 norm is at most `max_norm` (<= 0 disables).
  /// Returns the norm before clipping.
  double clip_grad_norm(double max_norm);
  void step();
  void zero_grad();
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, weight_decay_, beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
};

/// Image already letterboxed to the model resolution, with truth in canvas coordinates.
struct PreparedSample {
  Tensor pixels;
  GroundTruthSet canvas_truth;
  GroundTruthSet source_truth;
  Letterbox transform;
};

std::vector<PreparedSample> prepare(const Dataset& dataset, std::size_t image_size);

struct DetectionLoss {
  Tensor total;
  std::vector<Assignment> assignments;  // one per decoder layer that was scored
};

/// Sum of set losses over every decoder layer (`aux`) or the last one only.
/// `fixed` pins the matchings, one per scored layer.
DetectionLoss detection_loss(const ModelOutput& out, const GroundTruthSet& truth,
                             const LossConfig& cfg, bool aux = true,
                             const std::vector<Assignment>* fixed = nullptr);

/// Inference in evaluation mode; boxes mapped back to source-image coordinates.
std::vector<DetectionSet> predict(const SdetrModel& model, const std::vector<PreparedSample>& samples);
ApReport evaluate(const SdetrModel& model, const std::vector<PreparedSample>& samples);

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch = 8;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double grad_clip = 0.1;
  std::size_t lr_drop_epoch = 0;  // lr ×0.1 from this epoch on (1-based); 0 keeps it constant
  std::uint64_t seed = 0;
  bool aux_loss = true;
  LossConfig loss;

  void validate() const;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0.0;  // mean per-image training loss over the epoch
  ApReport val;
};

nlohmann::json to_json(const EpochMetrics& m);

/// Trains in place. `on_epoch` sees each epoch's metrics as soon as they exist.
std::vector<EpochMetrics> train(SdetrModel& model, const std::vector<PreparedSample>& train_set,
                                const std::vector<PreparedSample>& val_set, const TrainConfig& cfg,
                                const std::function<void(const EpochMetrics&)>& on_epoch = {});

}  // namespace sdetr
