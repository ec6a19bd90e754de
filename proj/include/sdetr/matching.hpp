#pragma once

#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

#include "sdetr/boxes.hpp"
#include "sdetr/model.hpp"
#include "sdetr/tensor.hpp"

namespace sdetr {

/// Dense row-major cost matrix, rows = ground truth, cols = predictions.
struct CostMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (gt, pred), sorted by gt
  double total_cost = 0.0;
};

/// Minimum-cost assignment of every row to a distinct column (rows <= cols),
/// by shortest augmenting paths with potentials, O(rows²·cols). Among optimal
/// assignments the lexicographically smallest pair list is returned.
Assignment hungarian(const CostMatrix& cost);

struct LossConfig {
  double w_class = 1.0;
  double w_l1 = 5.0;
  double w_giou = 2.0;
  double no_object_weight = 0.1;

  void validate() const;
};

struct SetLoss {
  Tensor total;  // differentiable scalar
  double class_term = 0.0;
  double l1_term = 0.0;
  double giou_term = 0.0;
  Assignment assignment;
};

/// Matching cost between every ground-truth object and every query:
///   w_class·(-p̂[class]) + w_l1·|b - b̂|₁ + w_giou·(1 - GIoU(b, b̂))
CostMatrix matching_cost(const Predictions& preds, const GroundTruthSet& truth,
                         const LossConfig& cfg);

/// Set-prediction loss for one image. Matching is computed without gradients
/// (or taken from `fixed`); then
///   w_class·CE + w_l1·L1 + w_giou·(1 - GIoU)
/// where CE is the class-weighted mean cross-entropy over all queries
/// (unmatched queries target "no object" with weight no_object_weight) and
/// the box terms are summed over matched pairs and divided by max(n_gt, 1).
SetLoss set_loss(const Predictions& preds, const GroundTruthSet& truth, const LossConfig& cfg,
                 const Assignment* fixed = nullptr);

/// Row-wise GIoU of two k×4 (cx, cy, w, h) box tensors as a differentiable k×1 column.
Tensor giou_rows(const Tensor& a, const Tensor& b);

}  // namespace sdetr
