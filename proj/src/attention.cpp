#include "sdetr/attention.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sdetr/ops.hpp"

namespace sdetr {

void AttentionDims::validate() const {
  if (h == 0 || h_prime == 0 || w == 0 || w_prime == 0 || n_heads == 0) {
    throw ValidationError("attention extents and head count must be at least 1");
  }
  if (w % n_heads != 0) {
    throw ValidationError("feature width w=" + std::to_string(w) +
                          " is not divisible by n_heads=" + std::to_string(n_heads));
  }
  if (w_prime % n_heads != 0) {
    throw ValidationError("value width w'=" + std::to_string(w_prime) +
                          " is not divisible by n_heads=" + std::to_string(n_heads));
  }
}

void CostCounters::allocate_p(std::uint64_t elements) {
  live_p_ += elements;
  update_peaks();
}

void CostCounters::allocate_a(std::uint64_t elements) {
  live_a_ += elements;
  update_peaks();
}

void CostCounters::release_all() {
  live_p_ = 0;
  live_a_ = 0;
}

void CostCounters::update_peaks() {
  peak_p = std::max(peak_p, live_p_);
  peak_a = std::max(peak_a, live_a_);
  peak_intermediate = std::max(peak_intermediate, live_p_ + live_a_);
}

Tensor attention_forward(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads,
                         CostCounters* counters, const AttentionOptions& options) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw ShapeError("attention_forward: Q, K, V must be matrices");
  }
  if (q.cols() != k.cols() || k.rows() != v.rows()) {
    throw ShapeError("attention_forward: incompatible Q " + to_string(q.shape()) + ", K " +
                     to_string(k.shape()) + ", V " + to_string(v.shape()));
  }
  const AttentionDims dims{q.rows(), k.rows(), q.cols(), v.cols(), n_heads};
  dims.validate();
  if (options.dropout > 0.0 && options.rng == nullptr) {
    throw ValidationError("attention_forward: dropout needs a random generator");
  }

  const std::size_t dq = dims.w / n_heads;
  const std::size_t dv = dims.w_prime / n_heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dq));

  std::uint64_t macs = 0;
  // Score matrices stay alive until the call returns, as they would for the backward pass.
  std::vector<Tensor> scores;
  std::vector<Tensor> outputs;
  scores.reserve(n_heads);
  outputs.reserve(n_heads);
  {
    MacCounterScope scope(&macs);
    for (std::size_t g = 0; g < n_heads; ++g) {
      Tensor qg = n_heads == 1 ? q : slice_cols(q, g * dq, dq);
      Tensor kg = n_heads == 1 ? k : slice_cols(k, g * dq, dq);
      Tensor vg = n_heads == 1 ? v : slice_cols(v, g * dv, dv);
      Tensor p = matmul_nt(qg, kg);
      if (counters) counters->allocate_p(p.numel());
      Tensor weights = softmax_rows(scale(p, inv_scale));
      if (options.dropout > 0.0) weights = dropout(weights, options.dropout, *options.rng);
      Tensor a = matmul(weights, vg);
      if (counters) counters->allocate_a(a.numel());
      scores.push_back(std::move(p));
      outputs.push_back(std::move(a));
    }
  }
  if (counters) {
    counters->macs += macs;
    counters->release_all();
  }
  return n_heads == 1 ? outputs.front() : concat_cols(outputs);
}

Tensor qkva_trace(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.cols() != k.cols() ||
      k.rows() != v.rows()) {
    throw ShapeError("qkva_trace: incompatible Q " + to_string(q.shape()) + ", K " +
                     to_string(k.shape()) + ", V " + to_string(v.shape()));
  }
  const std::size_t h = q.rows();
  const std::size_t w = q.cols();
  const std::size_t h_prime = k.rows();
  const std::size_t w_prime = v.cols();
  const auto qd = q.data();
  const auto kd = k.data();
  const auto vd = v.data();
  std::vector<double> out(h * w_prime, 0.0);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w_prime; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < w; ++j) {
        // Walking K's column j pulls Q from row r and V from column c.
        for (std::size_t i = 0; i < h_prime; ++i) {
          acc += qd[r * w + j] * kd[i * w + j] * vd[i * w_prime + c];
        }
      }
      out[r * w_prime + c] = acc;
    }
  }
  return Tensor({h, w_prime}, std::move(out));
}

std::vector<Tensor> split_heads(const Tensor& x, std::size_t n) {
  if (x.rank() != 2) throw ShapeError("split_heads: expected a matrix");
  if (n == 0 || x.cols() % n != 0) {
    throw ValidationError("split_heads: width " + std::to_string(x.cols()) +
                          " is not divisible by " + std::to_string(n));
  }
  const std::size_t width = x.cols() / n;
  std::vector<Tensor> heads;
  heads.reserve(n);
  for (std::size_t g = 0; g < n; ++g) heads.push_back(slice_cols(x, g * width, width));
  return heads;
}

Tensor merge_heads(const std::vector<Tensor>& heads) { return concat_cols(heads); }

WindowPartition window_partition(std::size_t height, std::size_t width, std::size_t window) {
  if (height == 0 || width == 0 || window == 0 || height % window != 0 || width % window != 0) {
    throw ValidationError("window_partition: window " + std::to_string(window) +
                          " does not tile a " + std::to_string(height) + "x" +
                          std::to_string(width) + " image");
  }
  WindowPartition part;
  part.height = height;
  part.width = width;
  part.window = window;
  const std::size_t pixels = height * width;
  const std::size_t windows_per_row = width / window;
  part.window_id.resize(pixels);
  part.within_id.resize(pixels);
  part.pixel_position.resize(pixels);
  part.token_order.resize(pixels);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t pixel = y * width + x;
      const std::size_t win = (y / window) * windows_per_row + x / window;
      const std::size_t within = (y % window) * window + x % window;
      part.window_id[pixel] = win;
      part.within_id[pixel] = within;
      part.pixel_position[pixel] = win * window * window + within;
    }
  }
  part.token_order = window_departition(part);
  return part;
}

std::vector<std::size_t> window_departition(const WindowPartition& partition) {
  const std::size_t area = partition.window * partition.window;
  std::vector<std::size_t> order(partition.window_id.size());
  for (std::size_t pixel = 0; pixel < order.size(); ++pixel) {
    order[partition.window_id[pixel] * area + partition.within_id[pixel]] = pixel;
  }
  return order;
}

Tensor partition_tokens(const Tensor& tokens, const WindowPartition& partition) {
  if (tokens.rank() != 2 || tokens.rows() != partition.token_order.size()) {
    throw ShapeError("partition_tokens: token count does not match the partition");
  }
  return gather_rows(tokens, partition.token_order);
}

Tensor departition_tokens(const Tensor& tokens, const WindowPartition& partition) {
  if (tokens.rank() != 2 || tokens.rows() != partition.pixel_position.size()) {
    throw ShapeError("departition_tokens: token count does not match the partition");
  }
  return gather_rows(tokens, partition.pixel_position);
}

}  // namespace sdetr
