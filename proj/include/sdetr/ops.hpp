#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "sdetr/tensor.hpp"

namespace sdetr {

// Matrix products. All operands are 2-D.
Tensor matmul(const Tensor& a, const Tensor& b);     // a · b
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a · bᵀ
Tensor transpose(const Tensor& a);

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);

/// a[r×c] + bias[c] broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& bias);
/// a[r×c] ∘ column[r×1] broadcast over columns.
Tensor mul_col(const Tensor& a, const Tensor& column);

Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor abs(const Tensor& a);

/// Row-wise softmax, max-shifted. Rejects NaN.
Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);

/// Per-row normalisation with learned scale and shift.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Row sums of a matrix as an r×1 column.
Tensor sum_cols(const Tensor& a);

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& rows);
Tensor reshape(const Tensor& a, Shape shape);

/// x[Cin×H×W], weight[Cout×Cin×k×k], bias[Cout] -> [Cout×Ho×Wo].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t pad);

/// Inverted dropout. Identity when rate is 0.
Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng);

/// Uniform double in [0, 1) from the generator's raw bits; stable across standard libraries.
double uniform01(std::mt19937_64& rng);
/// Standard normal via Box-Muller over `uniform01`.
double standard_normal(std::mt19937_64& rng);

}  // namespace sdetr
