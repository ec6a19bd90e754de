#pragma once

// Dense numeric kernels used by the tensor layer.
//
// Two implementations share one signature set: `serial` is the plain
// reference and `omp` splits the outer (row) loop across OpenMP threads.
// Every output element is accumulated in the same order in both, so the
// two agree bit for bit; tests rely on that. `active` points at the
// implementation the library dispatches to.

#include <cstddef>
#include <cstdint>
#include <span>

namespace sdetr::kernels {

/// Row-major shapes: A is m x k, B is k x n, C is m x n. Returns MACs executed.
/// When `accumulate` is false C is overwritten.
struct GemmShape {
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t k = 0;
};

namespace serial {

std::uint64_t gemm_nn(GemmShape s, std::span<const double> a, std::span<const double> b,
                      std::span<double> c, bool accumulate);
// C = A * B^T with B stored n x k.
std::uint64_t gemm_nt(GemmShape s, std::span<const double> a, std::span<const double> b,
                      std::span<double> c, bool accumulate);
// C = A^T * B with A stored k x m.
std::uint64_t gemm_tn(GemmShape s, std::span<const double> a, std::span<const double> b,
                      std::span<double> c, bool accumulate);

void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                  std::span<double> y);

// Per-row normalisation. Writes normalised values to `xhat` and 1/sigma to `inv_std`.
void layer_norm_rows(std::size_t rows, std::size_t cols, std::span<const double> x, double eps,
                     std::span<double> xhat, std::span<double> inv_std);

// Unfolds a C x H x W image into (C*kh*kw) x (Ho*Wo) patch columns.
void im2col(std::size_t channels, std::size_t height, std::size_t width, std::size_t kernel,
            std::size_t stride, std::size_t pad, std::span<const double> image,
            std::span<double> cols);
// Adjoint of im2col; accumulates into `image`.
void col2im(std::size_t channels, std::size_t height, std::size_t width, std::size_t kernel,
            std::size_t stride, std::size_t pad, std::span<const double> cols,
            std::span<double> image);

}  // namespace serial

namespace omp {

std::uint64_t gemm_nn(GemmShape s, std::span<const double> a, std::span<const double> b,
                      std::span<double> c, bool accumulate);
std::uint64_t gemm_nt(GemmShape s, std::span<const double> a, std::span<const double> b,
                      std::span<double> c, bool accumulate);
std::uint64_t gemm_tn(GemmShape s, std::span<const double> a, std::span<const double> b,
                      std::span<double> c, bool accumulate);
void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                  std::span<double> y);
void layer_norm_rows(std::size_t rows, std::size_t cols, std::span<const double> x, double eps,
                     std::span<double> xhat, std::span<double> inv_std);
void im2col(std::size_t channels, std::size_t height, std::size_t width, std::size_t kernel,
            std::size_t stride, std::size_t pad, std::span<const double> image,
            std::span<double> cols);
void col2im(std::size_t channels, std::size_t height, std::size_t width, std::size_t kernel,
            std::size_t stride, std::size_t pad, std::span<const double> cols,
            std::span<double> image);

/// Number of threads an OpenMP region would use; 1 when built without OpenMP.
int max_threads();

}  // namespace omp

namespace active = omp;

}  // namespace sdetr::kernels
