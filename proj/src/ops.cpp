#include "sdetr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "sdetr/kernels.hpp"

namespace sdetr {

namespace k = kernels::active;

namespace {

// Gradient buffer of an input, or null when the input does not want one.
std::vector<double>* grad_of(const Tensor& t) {
  return t.requires_grad() ? &t.node().grad_buffer() : nullptr;
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " + to_string(t.shape()));
  }
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()) + " differ");
  }
}

template <typename Fwd, typename DA, typename DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, DA da, DB db) {
  require_same(a, b, name);
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i], y[i]);
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [a, b, da, db](detail::Node& self) {
    const auto& g = self.grad;
    const auto x = a.data();
    const auto y = b.data();
    if (auto* ga = grad_of(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * da(x[i], y[i]);
    }
    if (auto* gb = grad_of(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * db(x[i], y[i]);
    }
  });
}

// f'(x) expressed through the input x and the output y.
template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i]);
  return Tensor::make_result(a.shape(), std::move(out), {a}, [a, deriv](detail::Node& self) {
    auto* ga = grad_of(a);
    if (ga == nullptr) return;
    const auto x = a.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      (*ga)[i] += self.grad[i] * deriv(x[i], self.value[i]);
    }
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner extents differ for " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  const kernels::GemmShape s{a.rows(), b.cols(), a.cols()};
  std::vector<double> out(s.m * s.n);
  detail::count_macs(k::gemm_nn(s, a.data(), b.data(), out, false));
  return Tensor::make_result({s.m, s.n}, std::move(out), {a, b}, [a, b, s](detail::Node& self) {
    if (auto* ga = grad_of(a)) k::gemm_nt({s.m, s.k, s.n}, self.grad, b.data(), *ga, true);
    if (auto* gb = grad_of(b)) k::gemm_tn({s.k, s.n, s.m}, a.data(), self.grad, *gb, true);
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: inner extents differ for " + to_string(a.shape()) + " x " +
                     to_string(b.shape()) + "^T");
  }
  const kernels::GemmShape s{a.rows(), b.rows(), a.cols()};
  std::vector<double> out(s.m * s.n);
  detail::count_macs(k::gemm_nt(s, a.data(), b.data(), out, false));
  return Tensor::make_result({s.m, s.n}, std::move(out), {a, b}, [a, b, s](detail::Node& self) {
    if (auto* ga = grad_of(a)) k::gemm_nn({s.m, s.k, s.n}, self.grad, b.data(), *ga, true);
    if (auto* gb = grad_of(b)) k::gemm_tn({s.n, s.k, s.m}, self.grad, a.data(), *gb, true);
  });
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t r = a.rows();
  const std::size_t c = a.cols();
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return Tensor::make_result({c, r}, std::move(out), {a}, [a, r, c](detail::Node& self) {
    auto* ga = grad_of(a);
    if (ga == nullptr) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) (*ga)[i * c + j] += self.grad[j * r + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

// Ties route the gradient to the first operand.
Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "minimum", [](double x, double y) { return std::min(x, y); },
      [](double x, double y) { return x <= y ? 1.0 : 0.0; },
      [](double x, double y) { return x <= y ? 0.0 : 1.0; });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "maximum", [](double x, double y) { return std::max(x, y); },
      [](double x, double y) { return x >= y ? 1.0 : 0.0; },
      [](double x, double y) { return x >= y ? 0.0 : 1.0; });
}

Tensor add_row(const Tensor& a, const Tensor& bias) {
  require_matrix(a, "add_row");
  const std::size_t r = a.rows();
  const std::size_t c = a.cols();
  if (bias.numel() != c) {
    throw ShapeError("add_row: bias " + to_string(bias.shape()) + " does not fit " +
                     to_string(a.shape()));
  }
  const auto x = a.data();
  const auto b = bias.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] + b[j];
  return Tensor::make_result({r, c}, std::move(out), {a, bias}, [a, bias, r, c](detail::Node& self) {
    if (auto* ga = grad_of(a)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
    }
    if (auto* gb = grad_of(bias)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*gb)[j] += self.grad[i * c + j];
    }
  });
}

Tensor mul_col(const Tensor& a, const Tensor& column) {
  require_matrix(a, "mul_col");
  const std::size_t r = a.rows();
  const std::size_t c = a.cols();
  if (column.numel() != r) {
    throw ShapeError("mul_col: column " + to_string(column.shape()) + " does not fit " +
                     to_string(a.shape()));
  }
  const auto x = a.data();
  const auto w = column.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] * w[i];
  return Tensor::make_result({r, c}, std::move(out), {a, column},
                             [a, column, r, c](detail::Node& self) {
                               const auto x = a.data();
                               const auto w = column.data();
                               auto* ga = grad_of(a);
                               auto* gw = grad_of(column);
                               for (std::size_t i = 0; i < r; ++i) {
                                 for (std::size_t j = 0; j < c; ++j) {
                                   const double g = self.grad[i * c + j];
                                   if (ga) (*ga)[i * c + j] += g * w[i];
                                   if (gw) (*gw)[i] += g * x[i * c + j];
                                 }
                               }
                             });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(
      a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor abs(const Tensor& a) {
  return unary(
      a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor softmax_rows(const Tensor& x) {
  require_matrix(x, "softmax_rows");
  for (double v : x.data()) {
    if (std::isnan(v)) throw ValidationError("softmax_rows: NaN input");
  }
  const std::size_t r = x.rows();
  const std::size_t c = x.cols();
  std::vector<double> out(x.numel());
  k::softmax_rows(r, c, x.data(), out);
  return Tensor::make_result({r, c}, std::move(out), {x}, [x, r, c](detail::Node& self) {
    auto* gx = grad_of(x);
    if (gx == nullptr) return;
    for (std::size_t i = 0; i < r; ++i) {
      const double* s = self.value.data() + i * c;
      const double* g = self.grad.data() + i * c;
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[j] * s[j];
      for (std::size_t j = 0; j < c; ++j) (*gx)[i * c + j] += s[j] * (g[j] - dot);
    }
  });
}

Tensor log_softmax_rows(const Tensor& x) {
  require_matrix(x, "log_softmax_rows");
  const std::size_t r = x.rows();
  const std::size_t c = x.cols();
  const auto in = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < r; ++i) {
    const double* xr = in.data() + i * c;
    if (std::any_of(xr, xr + c, [](double v) { return std::isnan(v); })) {
      throw ValidationError("log_softmax_rows: NaN input");
    }
    const double mx = *std::max_element(xr, xr + c);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(xr[j] - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xr[j] - lse;
  }
  return Tensor::make_result({r, c}, std::move(out), {x}, [x, r, c](detail::Node& self) {
    auto* gx = grad_of(x);
    if (gx == nullptr) return;
    for (std::size_t i = 0; i < r; ++i) {
      const double* ls = self.value.data() + i * c;
      const double* g = self.grad.data() + i * c;
      double gsum = 0.0;
      for (std::size_t j = 0; j < c; ++j) gsum += g[j];
      for (std::size_t j = 0; j < c; ++j) (*gx)[i * c + j] += g[j] - std::exp(ls[j]) * gsum;
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_matrix(x, "layer_norm");
  const std::size_t r = x.rows();
  const std::size_t c = x.cols();
  if (gamma.numel() != c || beta.numel() != c) {
    throw ShapeError("layer_norm: scale/shift must have " + std::to_string(c) + " entries");
  }
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(r);
  k::layer_norm_rows(r, c, x.data(), eps, xhat, inv_std);
  std::vector<double> out(x.numel());
  const auto g = gamma.data();
  const auto b = beta.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xhat[i * c + j] * g[j] + b[j];
  return Tensor::make_result(
      {r, c}, std::move(out), {x, gamma, beta},
      [x, gamma, beta, r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          detail::Node& self) {
        const auto g = gamma.data();
        auto* gx = grad_of(x);
        auto* gg = grad_of(gamma);
        auto* gb = grad_of(beta);
        const double n = static_cast<double>(c);
        std::vector<double> dxhat(c);
        for (std::size_t i = 0; i < r; ++i) {
          const double* dy = self.grad.data() + i * c;
          const double* xh = xhat.data() + i * c;
          double sum_d = 0.0;
          double sum_dx = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            if (gg) (*gg)[j] += dy[j] * xh[j];
            if (gb) (*gb)[j] += dy[j];
            dxhat[j] = dy[j] * g[j];
            sum_d += dxhat[j];
            sum_dx += dxhat[j] * xh[j];
          }
          if (gx) {
            for (std::size_t j = 0; j < c; ++j) {
              (*gx)[i * c + j] += inv_std[i] / n * (n * dxhat[j] - sum_d - xh[j] * sum_dx);
            }
          }
        }
      });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return Tensor::make_result({1}, {s}, {a}, [a](detail::Node& self) {
    auto* ga = grad_of(a);
    if (ga == nullptr) return;
    for (double& g : *ga) g += self.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor sum_cols(const Tensor& a) {
  require_matrix(a, "sum_cols");
  const std::size_t r = a.rows();
  const std::size_t c = a.cols();
  const auto x = a.data();
  std::vector<double> out(r, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += x[i * c + j];
  return Tensor::make_result({r, 1}, std::move(out), {a}, [a, r, c](detail::Node& self) {
    auto* ga = grad_of(a);
    if (ga == nullptr) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) (*ga)[i * c + j] += self.grad[i];
  });
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
  require_matrix(a, "slice_cols");
  const std::size_t r = a.rows();
  const std::size_t c = a.cols();
  if (count == 0 || start + count > c) {
    throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of range for " + to_string(a.shape()));
  }
  const auto x = a.data();
  std::vector<double> out(r * count);
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(x.data() + i * c + start, count, out.data() + i * count);
  return Tensor::make_result({r, count}, std::move(out), {a},
                             [a, r, c, start, count](detail::Node& self) {
                               auto* ga = grad_of(a);
                               if (ga == nullptr) return;
                               for (std::size_t i = 0; i < r; ++i)
                                 for (std::size_t j = 0; j < count; ++j)
                                   (*ga)[i * c + start + j] += self.grad[i * count + j];
                             });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t r = parts.front().rows();
  std::size_t c = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) throw ShapeError("concat_cols: row counts differ");
    c += p.cols();
  }
  std::vector<double> out(r * c);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto x = p.data();
    const std::size_t pc = p.cols();
    for (std::size_t i = 0; i < r; ++i) std::copy_n(x.data() + i * pc, pc, out.data() + i * c + offset);
    offset += pc;
  }
  return Tensor::make_result({r, c}, std::move(out), parts, [parts, r, c](detail::Node& self) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t pc = p.cols();
      if (auto* gp = grad_of(p)) {
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < pc; ++j) (*gp)[i * pc + j] += self.grad[i * c + offset + j];
      }
      offset += pc;
    }
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t c = parts.front().cols();
  std::size_t r = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) throw ShapeError("concat_rows: column counts differ");
    r += p.rows();
  }
  std::vector<double> out;
  out.reserve(r * c);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return Tensor::make_result({r, c}, std::move(out), parts, [parts](detail::Node& self) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      if (auto* gp = grad_of(p)) {
        for (std::size_t i = 0; i < p.numel(); ++i) (*gp)[i] += self.grad[offset + i];
      }
      offset += p.numel();
    }
  });
}

Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& rows) {
  require_matrix(a, "gather_rows");
  const std::size_t c = a.cols();
  if (rows.empty()) throw ShapeError("gather_rows: empty index list");
  const auto x = a.data();
  std::vector<double> out(rows.size() * c);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= a.rows()) throw ShapeError("gather_rows: row index out of range");
    std::copy_n(x.data() + rows[i] * c, c, out.data() + i * c);
  }
  return Tensor::make_result({rows.size(), c}, std::move(out), {a}, [a, rows, c](detail::Node& self) {
    auto* ga = grad_of(a);
    if (ga == nullptr) return;
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) (*ga)[rows[i] * c + j] += self.grad[i * c + j];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (element_count(shape) != a.numel()) {
    throw ShapeError("reshape: " + to_string(a.shape()) + " cannot become " + to_string(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return Tensor::make_result(std::move(shape), std::move(out), {a}, [a](detail::Node& self) {
    auto* ga = grad_of(a);
    if (ga == nullptr) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
  });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t pad) {
  if (x.rank() != 3 || weight.rank() != 4) {
    throw ShapeError("conv2d: expected image [C×H×W] and weight [O×C×k×k], got " +
                     to_string(x.shape()) + " and " + to_string(weight.shape()));
  }
  const std::size_t cin = x.dim(0);
  const std::size_t height = x.dim(1);
  const std::size_t width = x.dim(2);
  const std::size_t cout = weight.dim(0);
  const std::size_t ksize = weight.dim(2);
  if (weight.dim(1) != cin || weight.dim(3) != ksize || bias.numel() != cout) {
    throw ShapeError("conv2d: weight " + to_string(weight.shape()) + " does not fit input " +
                     to_string(x.shape()));
  }
  if (stride == 0 || height + 2 * pad < ksize || width + 2 * pad < ksize) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  const std::size_t ho = (height + 2 * pad - ksize) / stride + 1;
  const std::size_t wo = (width + 2 * pad - ksize) / stride + 1;
  const std::size_t patch = cin * ksize * ksize;
  const std::size_t pixels = ho * wo;

  std::vector<double> cols(patch * pixels);
  k::im2col(cin, height, width, ksize, stride, pad, x.data(), cols);
  std::vector<double> out(cout * pixels);
  detail::count_macs(k::gemm_nn({cout, pixels, patch}, weight.data(), cols, out, false));
  const auto b = bias.data();
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t p = 0; p < pixels; ++p) out[o * pixels + p] += b[o];

  return Tensor::make_result(
      {cout, ho, wo}, std::move(out), {x, weight, bias},
      [x, weight, bias, cin, height, width, ksize, stride, pad, cout, patch, pixels,
       cols = std::move(cols)](detail::Node& self) {
        if (auto* gw = grad_of(weight)) {
          k::gemm_nt({cout, patch, pixels}, self.grad, cols, *gw, true);
        }
        if (auto* gb = grad_of(bias)) {
          for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t p = 0; p < pixels; ++p) (*gb)[o] += self.grad[o * pixels + p];
        }
        if (auto* gx = grad_of(x)) {
          std::vector<double> dcols(patch * pixels);
          k::gemm_tn({patch, pixels, cout}, weight.data(), self.grad, dcols, false);
          k::col2im(cin, height, width, ksize, stride, pad, dcols, *gx);
        }
      });
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double standard_normal(std::mt19937_64& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ValidationError("dropout: rate must be below 1");
  const double keep = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  for (double& m : mask) m = uniform01(rng) < rate ? 0.0 : keep;
  return mul(x, Tensor(x.shape(), std::move(mask)));
}

}  // namespace sdetr
