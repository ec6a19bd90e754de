#include "sdetr/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace sdetr::kernels::serial {

std::uint64_t gemm_nn(GemmShape s, std::span<const double> a, std::span<const double> b,
                      std::span<double> c, bool accumulate) {
  for (std::size_t i = 0; i < s.m; ++i) {
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
  for (std::size_t i = 0; i < s.m; ++i) {
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
  for (std::size_t i = 0; i < s.m; ++i) {
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
  for (std::size_t r = 0; r < rows; ++r) {
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
  for (std::size_t r = 0; r < rows; ++r) {
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

namespace {

inline std::size_t out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                              std::size_t pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

}  // namespace

void im2col(std::size_t channels, std::size_t height, std::size_t width, std::size_t kernel,
            std::size_t stride, std::size_t pad, std::span<const double> image,
            std::span<double> cols) {
  const std::size_t ho = out_extent(height, kernel, stride, pad);
  const std::size_t wo = out_extent(width, kernel, stride, pad);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    for (std::size_t ky = 0; ky < kernel; ++ky) {
      for (std::size_t kx = 0; kx < kernel; ++kx) {
        double* dst = cols.data() + ((ch * kernel + ky) * kernel + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                          static_cast<std::ptrdiff_t>(pad);
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                            static_cast<std::ptrdiff_t>(pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(height) &&
                                ix < static_cast<std::ptrdiff_t>(width);
            dst[oy * wo + ox] = inside ? image[(ch * height + iy) * width + ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(std::size_t channels, std::size_t height, std::size_t width, std::size_t kernel,
            std::size_t stride, std::size_t pad, std::span<const double> cols,
            std::span<double> image) {
  const std::size_t ho = out_extent(height, kernel, stride, pad);
  const std::size_t wo = out_extent(width, kernel, stride, pad);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    for (std::size_t ky = 0; ky < kernel; ++ky) {
      for (std::size_t kx = 0; kx < kernel; ++kx) {
        const double* src = cols.data() + ((ch * kernel + ky) * kernel + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                          static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                            static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width)) continue;
            image[(ch * height + iy) * width + ix] += src[oy * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace sdetr::kernels::serial
