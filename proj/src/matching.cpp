#include "sdetr/matching.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

#include "sdetr/kernels.hpp"
#include "sdetr/ops.hpp"

namespace sdetr {

namespace {

// Optimal assignment of a dense n×m sub-problem (n <= m) together with the dual
// potentials that certify it: a(i,j) - u[i] - v[j] >= 0, with equality on
// matched pairs and v[j] = 0 on unmatched columns.
struct Solution {
  std::vector<std::size_t> col_of_row;
  std::vector<double> u;
  std::vector<double> v;
  double cost = 0.0;
};

Solution solve_dense(const std::vector<double>& a, std::size_t n, std::size_t m) {
  Solution sol;
  if (n == 0) {
    sol.v.assign(m, 0.0);
    return sol;
  }
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-based arrays; column 0 is the virtual source of each augmenting search.
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> match(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  sol.col_of_row.assign(n, 0);
  for (std::size_t j = 1; j <= m; ++j) {
    if (match[j] != 0) sol.col_of_row[match[j] - 1] = j - 1;
  }
  sol.u.assign(u.begin() + 1, u.end());
  sol.v.assign(v.begin() + 1, v.end());
  for (std::size_t i = 0; i < n; ++i) sol.cost += a[i * m + sol.col_of_row[i]];
  return sol;
}

Solution solve_subset(const CostMatrix& cost, const std::vector<std::size_t>& rows,
                      const std::vector<std::size_t>& cols) {
  std::vector<double> sub(rows.size() * cols.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) sub[i * cols.size() + j] = cost(rows[i], cols[j]);
  return solve_dense(sub, rows.size(), cols.size());
}

}  // namespace

Assignment hungarian(const CostMatrix& cost) {
  if (cost.values.size() != cost.rows * cost.cols) {
    throw ValidationError("hungarian: matrix storage does not match its extents");
  }
  if (cost.rows > cost.cols) {
    throw ValidationError("hungarian: " + std::to_string(cost.rows) + " rows exceed " +
                          std::to_string(cost.cols) + " columns");
  }
  double scale = 1.0;
  for (double c : cost.values) {
    if (!std::isfinite(c)) throw ValidationError("hungarian: non-finite cost entry");
    scale = std::max(scale, std::fabs(c));
  }
  Assignment out;
  if (cost.rows == 0) return out;
  const double tol = 1e-9 * scale * static_cast<double>(cost.rows);

  std::vector<std::size_t> rows(cost.rows), cols(cost.cols);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  for (std::size_t j = 0; j < cols.size(); ++j) cols[j] = j;
  Solution sol = solve_subset(cost, rows, cols);

  // Fix rows in order, each to the smallest column that still admits an
  // optimal completion. Only dual-tight edges can appear in any optimum.
  while (!rows.empty()) {
    const std::size_t row = rows.front();
    std::size_t pos = sol.col_of_row.front();
    bool replaced = false;
    Solution rest;
    for (std::size_t p = 0; p < pos; ++p) {
      const double c = cost(row, cols[p]);
      if (c - sol.u.front() - sol.v[p] > tol) continue;
      std::vector<std::size_t> rest_rows(rows.begin() + 1, rows.end());
      std::vector<std::size_t> rest_cols = cols;
      rest_cols.erase(rest_cols.begin() + static_cast<std::ptrdiff_t>(p));
      Solution candidate = solve_subset(cost, rest_rows, rest_cols);
      if (c + candidate.cost <= sol.cost + tol) {
        pos = p;
        rest = std::move(candidate);
        replaced = true;
        break;
      }
    }
    out.pairs.emplace_back(row, cols[pos]);
    if (replaced) {
      sol = std::move(rest);
    } else {
      // The remaining optimum and its duals stay valid once the fixed pair is removed.
      sol.cost -= cost(row, cols[pos]);
      sol.col_of_row.erase(sol.col_of_row.begin());
      for (auto& c : sol.col_of_row) {
        if (c > pos) --c;
      }
      sol.u.erase(sol.u.begin());
      sol.v.erase(sol.v.begin() + static_cast<std::ptrdiff_t>(pos));
    }
    rows.erase(rows.begin());
    cols.erase(cols.begin() + static_cast<std::ptrdiff_t>(pos));
  }
  for (const auto& [r, c] : out.pairs) out.total_cost += cost(r, c);
  return out;
}

void LossConfig::validate() const {
  if (w_class < 0.0 || w_l1 < 0.0 || w_giou < 0.0 || no_object_weight < 0.0) {
    throw ValidationError("loss weights must be nonnegative");
  }
}

CostMatrix matching_cost(const Predictions& preds, const GroundTruthSet& truth,
                         const LossConfig& cfg) {
  const std::size_t nq = preds.class_logits.rows();
  const std::size_t width = preds.class_logits.cols();
  std::vector<double> probs(nq * width);
  kernels::active::softmax_rows(nq, width, preds.class_logits.data(), probs);
  const auto boxes = preds.boxes.data();

  CostMatrix cost{truth.objects.size(), nq, std::vector<double>(truth.objects.size() * nq)};
  for (std::size_t g = 0; g < truth.objects.size(); ++g) {
    const Object& obj = truth.objects[g];
    for (std::size_t q = 0; q < nq; ++q) {
      const Box pb{boxes[q * 4], boxes[q * 4 + 1], boxes[q * 4 + 2], boxes[q * 4 + 3]};
      const double l1 = std::fabs(pb.cx - obj.box.cx) + std::fabs(pb.cy - obj.box.cy) +
                        std::fabs(pb.w - obj.box.w) + std::fabs(pb.h - obj.box.h);
      cost.values[g * nq + q] = -cfg.w_class * probs[q * width + obj.class_id] + cfg.w_l1 * l1 +
                                cfg.w_giou * (1.0 - giou(pb, obj.box));
    }
  }
  return cost;
}

Tensor giou_rows(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.rank() != 2 || a.cols() != 4) {
    throw ShapeError("giou_rows: expected two k×4 box tensors");
  }
  auto col = [](const Tensor& t, std::size_t c) { return slice_cols(t, c, 1); };
  auto corners = [&](const Tensor& t) {
    const Tensor cx = col(t, 0), cy = col(t, 1);
    const Tensor hw = scale(col(t, 2), 0.5), hh = scale(col(t, 3), 0.5);
    return std::array<Tensor, 4>{sub(cx, hw), sub(cy, hh), add(cx, hw), add(cy, hh)};
  };
  const auto [ax0, ay0, ax1, ay1] = corners(a);
  const auto [bx0, by0, bx1, by1] = corners(b);
  const Tensor iw = relu(sub(minimum(ax1, bx1), maximum(ax0, bx0)));
  const Tensor ih = relu(sub(minimum(ay1, by1), maximum(ay0, by0)));
  const Tensor inter = mul(iw, ih);
  const Tensor area_a = mul(sub(ax1, ax0), sub(ay1, ay0));
  const Tensor area_b = mul(sub(bx1, bx0), sub(by1, by0));
  const Tensor uni = sub(add(area_a, area_b), inter);
  const Tensor enclosure = mul(sub(maximum(ax1, bx1), minimum(ax0, bx0)),
                               sub(maximum(ay1, by1), minimum(ay0, by0)));
  return sub(div(inter, uni), div(sub(enclosure, uni), enclosure));
}

SetLoss set_loss(const Predictions& preds, const GroundTruthSet& truth, const LossConfig& cfg,
                 const Assignment* fixed) {
  cfg.validate();
  const std::size_t nq = preds.class_logits.rows();
  const std::size_t width = preds.class_logits.cols();
  const std::size_t n_classes = width - 1;
  const std::size_t n_gt = truth.objects.size();
  if (n_gt > nq) {
    throw ValidationError("set_loss: " + std::to_string(n_gt) + " objects exceed " +
                          std::to_string(nq) + " queries");
  }
  for (const auto& obj : truth.objects) {
    if (obj.class_id >= n_classes) throw ValidationError("set_loss: class id out of range");
  }

  SetLoss result;
  if (fixed != nullptr) {
    result.assignment = *fixed;
  } else if (n_gt > 0) {
    result.assignment = hungarian(matching_cost(preds, truth, cfg));
  }

  std::vector<double> weighted_target(nq * width, 0.0);
  std::vector<std::size_t> target(nq, n_classes);
  std::vector<double> weight(nq, cfg.no_object_weight);
  for (const auto& [g, q] : result.assignment.pairs) {
    target[q] = truth.objects[g].class_id;
    weight[q] = 1.0;
  }
  double weight_sum = 0.0;
  for (std::size_t q = 0; q < nq; ++q) {
    weighted_target[q * width + target[q]] = weight[q];
    weight_sum += weight[q];
  }
  Tensor ce = scale(sum(mul(log_softmax_rows(preds.class_logits), Tensor({nq, width}, weighted_target))),
                    weight_sum > 0.0 ? -1.0 / weight_sum : 0.0);
  result.class_term = ce.item();
  result.total = scale(ce, cfg.w_class);

  if (!result.assignment.pairs.empty()) {
    const double num_boxes = static_cast<double>(std::max<std::size_t>(n_gt, 1));
    std::vector<std::size_t> query_rows;
    std::vector<double> target_boxes;
    for (const auto& [g, q] : result.assignment.pairs) {
      query_rows.push_back(q);
      const Box& b = truth.objects[g].box;
      target_boxes.insert(target_boxes.end(), {b.cx, b.cy, b.w, b.h});
    }
    const std::size_t k = query_rows.size();
    const Tensor matched = gather_rows(preds.boxes, query_rows);
    const Tensor targets({k, 4}, std::move(target_boxes));
    const Tensor l1 = scale(sum(abs(sub(matched, targets))), 1.0 / num_boxes);
    const Tensor giou_loss =
        scale(add_scalar(scale(sum(giou_rows(matched, targets)), -1.0), static_cast<double>(k)),
              1.0 / num_boxes);
    result.l1_term = l1.item();
    result.giou_term = giou_loss.item();
    result.total = add(result.total, add(scale(l1, cfg.w_l1), scale(giou_loss, cfg.w_giou)));
  }
  return result;
}

}  // namespace sdetr
