#include "sdetr/kernels.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace sdetr::kernels::omp {

namespace {

// Below this many scalar operations the fork/join overhead dominates.
constexpr std::size_t kParallelWork = 1u << 15;

inline std::size_t out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                              std::size_t pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

std::uint64_t gemm_nn(GemmShape s, std::span<const double> a, std::span<const double> b,
                      std::span<double> c, bool accumulate) {
  const auto rows = static_cast<std::ptrdiff_t>(s.m);
#pragma omp parallel for schedule(static) if (s.m * s.n * s.k > kParallelWork)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    double* crow = c.data() + i * s.n;
    if (!accumulate) std::fill(crow, crow + s.n, 0.0);
    const double* arow = a.data() + i * s.k;
    for (std::size_t p = 0; p < s.k; ++p) {
      const double av = arow[p];
      const double* brow = b.data() + p * s.n;
      for (std::size_t j = 0; j < s.n; ++j) crow[j] += av * brow[j];
    }
  }
  return static_cast<std::uint64_t>(s.m) * s.n * s.k;
}

std::uint64_t gemm_nt(GemmShape s, std::span<const double> a, std::span<const double> b,
                      std::span<double> c, bool accumulate) {
  const auto rows = static_cast<std::ptrdiff_t>(s.m);
#pragma omp parallel for schedule(static) if (s.m * s.n * s.k > kParallelWork)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    const double* arow = a.data() + i * s.k;
    double* crow = c.data() + i * s.n;
    for (std::size_t j = 0; j < s.n; ++j) {
      const double* brow = b.data() + j * s.k;
      double acc = 0.0;
      for (std::size_t p = 0; p < s.k; ++p) acc += arow[p] * brow[p];
      crow[j] = accumulate ? crow[j] + acc : acc;
    }
  }
  return static_cast<std::uint64_t>(s.m) * s.n * s.k;
}

std::uint64_t gemm_tn(GemmShape s, std::span<const double> a, std::span<const double> b,
                      std::span<double> c, bool accumulate) {
  const auto rows = static_cast<std::ptrdiff_t>(s.m);
#pragma omp parallel for schedule(static) if (s.m * s.n * s.k > kParallelWork)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    double* crow = c.data() + i * s.n;
    if (!accumulate) std::fill(crow, crow + s.n, 0.0);
    for (std::size_t p = 0; p < s.k; ++p) {
      const double av = a[p * s.m + i];
      const double* brow = b.data() + p * s.n;
      for (std::size_t j = 0; j < s.n; ++j) crow[j] += av * brow[j];
    }
  }
  return static_cast<std::uint64_t>(s.m) * s.n * s.k;
}

void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x,
                  std::span<double> y) {
  const auto nrows = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (std::ptrdiff_t r = 0; r < nrows; ++r) {
    const double* xr = x.data() + r * cols;
    double* yr = y.data() + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < cols; ++j) yr[j] *= inv;
  }
}

void layer_norm_rows(std::size_t rows, std::size_t cols, std::span<const double> x, double eps,
                     std::span<double> xhat, std::span<double> inv_std) {
  const double n = static_cast<double>(cols);
  const auto nrows = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (std::ptrdiff_t r = 0; r < nrows; ++r) {
    const double* xr = x.data() + r * cols;
    double mean = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mean += xr[j];
    mean /= n;
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= n;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    double* hr = xhat.data() + r * cols;
    for (std::size_t j = 0; j < cols; ++j) hr[j] = (xr[j] - mean) * is;
  }
}

void im2col(std::size_t channels, std::size_t height, std::size_t width, std::size_t kernel,
            std::size_t stride, std::size_t pad, std::span<const double> image,
            std::span<double> cols) {
  const std::size_t ho = out_extent(height, kernel, stride, pad);
  const std::size_t wo = out_extent(width, kernel, stride, pad);
  const auto planes = static_cast<std::ptrdiff_t>(channels * kernel * kernel);
#pragma omp parallel for schedule(static) if (channels * kernel * kernel * ho * wo > kParallelWork)
  for (std::ptrdiff_t plane = 0; plane < planes; ++plane) {
    const std::size_t ch = plane / (kernel * kernel);
    const std::size_t ky = (plane / kernel) % kernel;
    const std::size_t kx = plane % kernel;
    double* dst = cols.data() + plane * ho * wo;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      const auto iy =
          static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const auto ix =
            static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
        const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(height) &&
                            ix < static_cast<std::ptrdiff_t>(width);
        dst[oy * wo + ox] = inside ? image[(ch * height + iy) * width + ix] : 0.0;
      }
    }
  }
}

void col2im(std::size_t channels, std::size_t height, std::size_t width, std::size_t kernel,
            std::size_t stride, std::size_t pad, std::span<const double> cols,
            std::span<double> image) {
  const std::size_t ho = out_extent(height, kernel, stride, pad);
  const std::size_t wo = out_extent(width, kernel, stride, pad);
  const auto nch = static_cast<std::ptrdiff_t>(channels);
  // One thread per channel keeps the scatter race-free and the summation order fixed.
#pragma omp parallel for schedule(static) if (channels * kernel * kernel * ho * wo > kParallelWork)
  for (std::ptrdiff_t ch = 0; ch < nch; ++ch) {
    for (std::size_t ky = 0; ky < kernel; ++ky) {
      for (std::size_t kx = 0; kx < kernel; ++kx) {
        const double* src = cols.data() + ((ch * kernel + ky) * kernel + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy =
              static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix =
                static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width)) continue;
            image[(ch * height + iy) * width + ix] += src[oy * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace sdetr::kernels::omp
