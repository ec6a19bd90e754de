#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "sdetr/tensor.hpp"

namespace sdetr {

/// Extents of one attention call: Q is h×w, K is h'×w, V is h'×w'.
struct AttentionDims {
  std::size_t h = 1;
  std::size_t h_prime = 1;
  std::size_t w = 1;
  std::size_t w_prime = 1;
  std::size_t n_heads = 1;

  /// Throws ValidationError when an extent is zero or a head count does not divide a width.
  void validate() const;
};

/// Instrumentation sink filled by `attention_forward`.
///
/// `macs` counts multiply-adds issued by the two matrix products (softmax and
/// scaling are not counted). Live-element tracking covers the score matrices P
/// (one h×h' block per head, kept for the backward pass) and the output blocks A.
struct CostCounters {
  std::uint64_t macs = 0;
  std::uint64_t peak_intermediate = 0;  // max of live P + live A
  std::uint64_t peak_p = 0;
  std::uint64_t peak_a = 0;

  void allocate_p(std::uint64_t elements);
  void allocate_a(std::uint64_t elements);
  void release_all();

 private:
  std::uint64_t live_p_ = 0;
  std::uint64_t live_a_ = 0;
  void update_peaks();
};

struct AttentionOptions {
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;  // required when dropout > 0
};

/// Multi-head scaled dot-product attention. For each head g the feature columns
/// [g·w/n, (g+1)·w/n) of Q and K (and w'/n of V) form
///   A_g = softmax_rows(Q_g K_gᵀ / sqrt(w/n)) V_g,
/// and the head outputs are concatenated along features. Differentiable.
Tensor attention_forward(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads,
                         CostCounters* counters = nullptr, const AttentionOptions& options = {});

/// Raw trilinear form A[r][c] = Σ_j Σ_i Q[r][j]·K[i][j]·V[i][c], evaluated by
/// direct loops; no scaling, no softmax. Values only.
Tensor qkva_trace(const Tensor& q, const Tensor& k, const Tensor& v);

/// Head g owns feature columns [g·w/n, (g+1)·w/n).
std::vector<Tensor> split_heads(const Tensor& x, std::size_t n);
Tensor merge_heads(const std::vector<Tensor>& heads);

/// Per-pixel placement after grouping an image into win×win squares.
/// Pixels are indexed row-major (y·width + x); windows are numbered row-major
/// over the window grid and the pixels inside a window row-major as well.
struct WindowPartition {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t window = 0;
  std::vector<std::size_t> window_id;      // per pixel
  std::vector<std::size_t> within_id;      // per pixel
  std::vector<std::size_t> token_order;    // partitioned position -> pixel
  std::vector<std::size_t> pixel_position; // pixel -> partitioned position

  std::size_t window_count() const { return window_id.empty() ? 0 : token_order.size() / (window * window); }
};

WindowPartition window_partition(std::size_t height, std::size_t width, std::size_t window);
/// Inverse permutation of a partition: partitioned position -> pixel.
std::vector<std::size_t> window_departition(const WindowPartition& partition);

/// Reorders token rows [hw×d] into window-contiguous order and back.
Tensor partition_tokens(const Tensor& tokens, const WindowPartition& partition);
Tensor departition_tokens(const Tensor& tokens, const WindowPartition& partition);

}  // namespace sdetr
