#include "x2f/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "gemm.hpp"
#include "x2f/error.hpp"

namespace x2f::ad::ops {

using detail::make_result;

namespace {

[[noreturn]] void shape_fail(OpKind kind, const std::string& what) {
  throw ShapeError(std::string(op_name(kind)) + ": " + what);
}

void require_same(OpKind kind, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    shape_fail(kind, "operand extents differ " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

void require_rank(OpKind kind, const Tensor& x, std::size_t rank, const char* name) {
  if (x.rank() != rank) {
    shape_fail(kind, std::string(name) + " must have rank " + std::to_string(rank) + ", got " +
                         to_string(x.shape()));
  }
}

// Split a shape around `axis` into (outer, extent, inner).
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <typename F, typename G>
Tensor unary(OpKind kind, const Tensor& x, F f, G df) {
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = f(xs[i]);
  auto y = std::make_shared<std::vector<double>>(out);
  return make_result(kind, x.shape(), std::move(out), {&x}, [x, y, df]() {
    return [x, y, df](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      if (!gi[0]) return;
      auto xs = x.data();
      auto& dx = *gi[0];
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * df(xs[i], (*y)[i]);
    };
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(OpKind::kAdd, a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result(OpKind::kAdd, a.shape(), std::move(out), {&a, &b}, [] {
    return [](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      for (auto* d : gi) {
        if (!d) continue;
        for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i];
      }
    };
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(OpKind::kSub, a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result(OpKind::kSub, a.shape(), std::move(out), {&a, &b}, [] {
    return [](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      if (gi[0])
        for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
      if (gi[1])
        for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] -= g[i];
    };
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(OpKind::kMul, a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result(OpKind::kMul, a.shape(), std::move(out), {&a, &b}, [a, b] {
    return [a, b](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      if (gi[0])
        for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * b[i];
      if (gi[1])
        for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] += g[i] * a[i];
    };
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same(OpKind::kDiv, a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / b[i];
  return make_result(OpKind::kDiv, a.shape(), std::move(out), {&a, &b}, [a, b] {
    return [a, b](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      if (gi[0])
        for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] / b[i];
      if (gi[1])
        for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] -= g[i] * a[i] / (b[i] * b[i]);
    };
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return make_result(OpKind::kScale, x.shape(), std::move(out), {&x}, [factor] {
    return [factor](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      if (gi[0])
        for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * factor;
    };
  });
}

Tensor add_scalar(const Tensor& x, double value) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + value;
  return make_result(OpKind::kAddScalar, x.shape(), std::move(out), {&x}, [] {
    return [](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      if (gi[0])
        for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
    };
  });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor matmul(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  require_rank(OpKind::kMatmul, a, 2, "lhs");
  require_rank(OpKind::kMatmul, b, 2, "rhs");
  const std::size_t m = ta ? a.dim(1) : a.dim(0);
  const std::size_t k = ta ? a.dim(0) : a.dim(1);
  const std::size_t kb = tb ? b.dim(1) : b.dim(0);
  const std::size_t n = tb ? b.dim(0) : b.dim(1);
  if (k != kb) {
    shape_fail(OpKind::kMatmul, "inner extents differ " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  detail::gemm(ta, tb, m, n, k, a.data().data(), b.data().data(), out.data());
  return make_result(OpKind::kMatmul, {m, n}, std::move(out), {&a, &b}, [a, b, ta, tb, m, n, k] {
    return [a, b, ta, tb, m, n, k](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      // C = op(A) op(B); dop(A) = G op(B)^T, dop(B) = op(A)^T G.
      if (gi[0]) {
        if (!ta) detail::gemm(false, !tb, m, k, n, g.data(), b.data().data(), gi[0]->data());
        else detail::gemm(tb, true, k, m, n, b.data().data(), g.data(), gi[0]->data());
      }
      if (gi[1]) {
        if (!tb) detail::gemm(!ta, false, k, n, m, a.data().data(), g.data(), gi[1]->data());
        else detail::gemm(true, ta, n, k, m, g.data(), a.data().data(), gi[1]->data());
      }
    };
  });
}

// ---------------------------------------------------------------- conv2d

namespace {

struct Conv2dGeom {
  std::size_t cin, h, w, cout, kh, kw, ho, wo, groups, cin_g, cout_g, stride, pad, dil;
  std::size_t kdim() const { return cin_g * kh * kw; }
  std::size_t pixels() const { return ho * wo; }
};

// col (cin_g*kh*kw, ho*wo) for one group.
void im2col2d(const Conv2dGeom& q, const double* x, std::size_t group, double* col) {
  const std::size_t p = q.pixels();
  for (std::size_t c = 0; c < q.cin_g; ++c) {
    const double* xc = x + (group * q.cin_g + c) * q.h * q.w;
    for (std::size_t ki = 0; ki < q.kh; ++ki) {
      for (std::size_t kj = 0; kj < q.kw; ++kj) {
        double* row = col + ((c * q.kh + ki) * q.kw + kj) * p;
        for (std::size_t oi = 0; oi < q.ho; ++oi) {
          const long ii = static_cast<long>(oi * q.stride + ki * q.dil) - static_cast<long>(q.pad);
          for (std::size_t oj = 0; oj < q.wo; ++oj) {
            const long jj = static_cast<long>(oj * q.stride + kj * q.dil) - static_cast<long>(q.pad);
            row[oi * q.wo + oj] = (ii >= 0 && ii < static_cast<long>(q.h) && jj >= 0 && jj < static_cast<long>(q.w))
                                      ? xc[ii * q.w + jj]
                                      : 0.0;
          }
        }
      }
    }
  }
}

void col2im2d(const Conv2dGeom& q, const double* col, std::size_t group, double* dx) {
  const std::size_t p = q.pixels();
  for (std::size_t c = 0; c < q.cin_g; ++c) {
    double* xc = dx + (group * q.cin_g + c) * q.h * q.w;
    for (std::size_t ki = 0; ki < q.kh; ++ki) {
      for (std::size_t kj = 0; kj < q.kw; ++kj) {
        const double* row = col + ((c * q.kh + ki) * q.kw + kj) * p;
        for (std::size_t oi = 0; oi < q.ho; ++oi) {
          const long ii = static_cast<long>(oi * q.stride + ki * q.dil) - static_cast<long>(q.pad);
          if (ii < 0 || ii >= static_cast<long>(q.h)) continue;
          for (std::size_t oj = 0; oj < q.wo; ++oj) {
            const long jj = static_cast<long>(oj * q.stride + kj * q.dil) - static_cast<long>(q.pad);
            if (jj < 0 || jj >= static_cast<long>(q.w)) continue;
            xc[ii * q.w + jj] += row[oi * q.wo + oj];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv2dParams& p) {
  constexpr OpKind kind = OpKind::kConv2d;
  require_rank(kind, x, 3, "input");
  require_rank(kind, weight, 4, "weight");
  if (p.groups == 0 || p.stride == 0 || p.dilation == 0) shape_fail(kind, "stride, dilation and groups must be >= 1");
  Conv2dGeom q{};
  q.cin = x.dim(0);
  q.h = x.dim(1);
  q.w = x.dim(2);
  q.cout = weight.dim(0);
  q.kh = weight.dim(2);
  q.kw = weight.dim(3);
  q.groups = p.groups;
  q.stride = p.stride;
  q.pad = p.pad;
  q.dil = p.dilation;
  if (q.cin % q.groups || q.cout % q.groups) {
    shape_fail(kind, "channels " + std::to_string(q.cin) + "->" + std::to_string(q.cout) +
                         " not divisible by groups " + std::to_string(q.groups));
  }
  q.cin_g = q.cin / q.groups;
  q.cout_g = q.cout / q.groups;
  if (weight.dim(1) != q.cin_g) {
    shape_fail(kind, "weight " + to_string(weight.shape()) + " does not match input " + to_string(x.shape()));
  }
  const std::size_t eff_h = q.dil * (q.kh - 1) + 1, eff_w = q.dil * (q.kw - 1) + 1;
  if (q.h + 2 * q.pad < eff_h || q.w + 2 * q.pad < eff_w) {
    shape_fail(kind, "input " + to_string(x.shape()) + " smaller than kernel " + to_string(weight.shape()));
  }
  q.ho = (q.h + 2 * q.pad - eff_h) / q.stride + 1;
  q.wo = (q.w + 2 * q.pad - eff_w) / q.stride + 1;
  if (bias.defined() && bias.shape() != Shape{q.cout}) {
    shape_fail(kind, "bias " + to_string(bias.shape()) + " does not match " + std::to_string(q.cout) + " outputs");
  }

  const std::size_t kd = q.kdim(), np = q.pixels();
  auto cols = std::make_shared<std::vector<double>>(q.groups * kd * np);
  std::vector<double> out(q.cout * np, 0.0);
  for (std::size_t g = 0; g < q.groups; ++g) {
    double* col = cols->data() + g * kd * np;
    im2col2d(q, x.data().data(), g, col);
    detail::gemm(false, false, q.cout_g, np, kd, weight.data().data() + g * q.cout_g * kd, col,
                 out.data() + g * q.cout_g * np);
  }
  if (bias.defined()) {
    for (std::size_t o = 0; o < q.cout; ++o)
      for (std::size_t i = 0; i < np; ++i) out[o * np + i] += bias[o];
  }
  Tensor b = bias.defined() ? bias : Tensor::scalar(0.0);
  return make_result(kind, {q.cout, q.ho, q.wo}, std::move(out), {&x, &weight, &b}, [q, cols, weight] {
    return [q, cols, weight](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      const std::size_t kd = q.kdim(), np = q.pixels();
      std::vector<double> dcol;
      for (std::size_t gr = 0; gr < q.groups; ++gr) {
        const double* gout = g.data() + gr * q.cout_g * np;
        const double* col = cols->data() + gr * kd * np;
        if (gi[1]) detail::gemm(false, true, q.cout_g, kd, np, gout, col, gi[1]->data() + gr * q.cout_g * kd);
        if (gi[0]) {
          dcol.assign(kd * np, 0.0);
          detail::gemm(true, false, kd, np, q.cout_g, weight.data().data() + gr * q.cout_g * kd, gout,
                       dcol.data());
          col2im2d(q, dcol.data(), gr, gi[0]->data());
        }
      }
      if (gi[2] && gi[2]->size() == q.cout) {
        for (std::size_t o = 0; o < q.cout; ++o) {
          double acc = 0.0;
          for (std::size_t i = 0; i < np; ++i) acc += g[o * np + i];
          (*gi[2])[o] += acc;
        }
      }
    };
  });
}

// ---------------------------------------------------------------- conv3d

namespace {

struct Conv3dGeom {
  std::size_t cin, d, h, w, cout, kd, kh, kw, od, oh, ow;
  std::array<std::size_t, 3> stride, pad;
  std::size_t kdim() const { return cin * kd * kh * kw; }
  std::size_t cells() const { return od * oh * ow; }
};

template <bool kScatter>
void im2col3d(const Conv3dGeom& q, const double* src, double* dst_or_col) {
  // kScatter == false: src = volume, dst_or_col = col (gather).
  // kScatter == true: src = col, dst_or_col = volume gradient (scatter-add).
  const std::size_t np = q.cells();
  for (std::size_t c = 0; c < q.cin; ++c) {
    for (std::size_t a = 0; a < q.kd; ++a) {
      for (std::size_t b = 0; b < q.kh; ++b) {
        for (std::size_t e = 0; e < q.kw; ++e) {
          const std::size_t row = ((c * q.kd + a) * q.kh + b) * q.kw + e;
          for (std::size_t t = 0; t < q.od; ++t) {
            const long tt = static_cast<long>(t * q.stride[0] + a) - static_cast<long>(q.pad[0]);
            const bool tin = tt >= 0 && tt < static_cast<long>(q.d);
            for (std::size_t i = 0; i < q.oh; ++i) {
              const long ii = static_cast<long>(i * q.stride[1] + b) - static_cast<long>(q.pad[1]);
              const bool iin = ii >= 0 && ii < static_cast<long>(q.h);
              for (std::size_t j = 0; j < q.ow; ++j) {
                const long jj = static_cast<long>(j * q.stride[2] + e) - static_cast<long>(q.pad[2]);
                const std::size_t ci = row * np + (t * q.oh + i) * q.ow + j;
                const bool inside = tin && iin && jj >= 0 && jj < static_cast<long>(q.w);
                if constexpr (!kScatter) {
                  dst_or_col[ci] = inside ? src[((c * q.d + tt) * q.h + ii) * q.w + jj] : 0.0;
                } else {
                  if (inside) dst_or_col[((c * q.d + tt) * q.h + ii) * q.w + jj] += src[ci];
                }
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv3dParams& p) {
  constexpr OpKind kind = OpKind::kConv3d;
  require_rank(kind, x, 4, "input");
  require_rank(kind, weight, 5, "weight");
  Conv3dGeom q{};
  q.cin = x.dim(0);
  q.d = x.dim(1);
  q.h = x.dim(2);
  q.w = x.dim(3);
  q.cout = weight.dim(0);
  q.kd = weight.dim(2);
  q.kh = weight.dim(3);
  q.kw = weight.dim(4);
  q.stride = p.stride;
  q.pad = p.pad;
  if (weight.dim(1) != q.cin) {
    shape_fail(kind, "weight " + to_string(weight.shape()) + " does not match input " + to_string(x.shape()));
  }
  for (std::size_t s : q.stride)
    if (s == 0) shape_fail(kind, "stride must be >= 1");
  const std::size_t in_ext[3] = {q.d, q.h, q.w};
  const std::size_t k_ext[3] = {q.kd, q.kh, q.kw};
  std::size_t o_ext[3];
  for (int i = 0; i < 3; ++i) {
    if (in_ext[i] + 2 * q.pad[i] < k_ext[i]) {
      shape_fail(kind, "input " + to_string(x.shape()) + " smaller than kernel " + to_string(weight.shape()));
    }
    o_ext[i] = (in_ext[i] + 2 * q.pad[i] - k_ext[i]) / q.stride[i] + 1;
  }
  q.od = o_ext[0];
  q.oh = o_ext[1];
  q.ow = o_ext[2];
  if (bias.defined() && bias.shape() != Shape{q.cout}) {
    shape_fail(kind, "bias " + to_string(bias.shape()) + " does not match " + std::to_string(q.cout) + " outputs");
  }
  const std::size_t kd = q.kdim(), np = q.cells();
  auto col = std::make_shared<std::vector<double>>(kd * np);
  im2col3d<false>(q, x.data().data(), col->data());
  std::vector<double> out(q.cout * np, 0.0);
  detail::gemm(false, false, q.cout, np, kd, weight.data().data(), col->data(), out.data());
  if (bias.defined()) {
    for (std::size_t o = 0; o < q.cout; ++o)
      for (std::size_t i = 0; i < np; ++i) out[o * np + i] += bias[o];
  }
  Tensor b = bias.defined() ? bias : Tensor::scalar(0.0);
  return make_result(kind, {q.cout, q.od, q.oh, q.ow}, std::move(out), {&x, &weight, &b}, [q, col, weight] {
    return [q, col, weight](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      const std::size_t kd = q.kdim(), np = q.cells();
      if (gi[1]) detail::gemm(false, true, q.cout, kd, np, g.data(), col->data(), gi[1]->data());
      if (gi[0]) {
        std::vector<double> dcol(kd * np, 0.0);
        detail::gemm(true, false, kd, np, q.cout, weight.data().data(), g.data(), dcol.data());
        im2col3d<true>(q, dcol.data(), gi[0]->data());
      }
      if (gi[2] && gi[2]->size() == q.cout) {
        for (std::size_t o = 0; o < q.cout; ++o) {
          double acc = 0.0;
          for (std::size_t i = 0; i < np; ++i) acc += g[o * np + i];
          (*gi[2])[o] += acc;
        }
      }
    };
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  constexpr OpKind kind = OpKind::kLinear;
  require_rank(kind, x, 2, "input");
  require_rank(kind, weight, 2, "weight");
  const std::size_t n = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  if (weight.dim(1) != in) {
    shape_fail(kind, "weight " + to_string(weight.shape()) + " does not match input " + to_string(x.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{out_dim}) {
    shape_fail(kind, "bias " + to_string(bias.shape()) + " does not match " + std::to_string(out_dim) + " outputs");
  }
  std::vector<double> out(n * out_dim, 0.0);
  if (bias.defined()) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t o = 0; o < out_dim; ++o) out[i * out_dim + o] = bias[o];
  }
  detail::gemm(false, true, n, out_dim, in, x.data().data(), weight.data().data(), out.data());
  Tensor b = bias.defined() ? bias : Tensor::scalar(0.0);
  return make_result(kind, {n, out_dim}, std::move(out), {&x, &weight, &b}, [x, weight, n, in, out_dim] {
    return [x, weight, n, in, out_dim](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      if (gi[0]) detail::gemm(false, false, n, in, out_dim, g.data(), weight.data().data(), gi[0]->data());
      if (gi[1]) detail::gemm(true, false, out_dim, in, n, g.data(), x.data().data(), gi[1]->data());
      if (gi[2] && gi[2]->size() == out_dim) {
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t o = 0; o < out_dim; ++o) (*gi[2])[o] += g[i * out_dim + o];
      }
    };
  });
}

// ------------------------------------------------------------ pointwise

Tensor relu(const Tensor& x) {
  return unary(
      OpKind::kRelu, x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      OpKind::kSigmoid, x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& x) {
  return unary(
      OpKind::kSoftplus, x,
      [](double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
      [](double v, double) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      });
}

Tensor exp(const Tensor& x) {
  return unary(
      OpKind::kExp, x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      OpKind::kLog, x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      OpKind::kClamp, x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  constexpr OpKind kind = OpKind::kSoftmax;
  if (axis >= x.rank()) shape_fail(kind, "axis " + std::to_string(axis) + " out of range for " + to_string(x.shape()));
  const AxisSplit s = split_axis(x.shape(), axis);
  if (s.extent == 0) shape_fail(kind, "softmax over an axis of extent 0");
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      double mx = -INFINITY;
      for (std::size_t k = 0; k < s.extent; ++k) mx = std::max(mx, x[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) {
        const double e = std::exp(x[base + k * s.inner] - mx);
        out[base + k * s.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < s.extent; ++k) out[base + k * s.inner] /= z;
    }
  }
  auto y = std::make_shared<std::vector<double>>(out);
  return make_result(kind, x.shape(), std::move(out), {&x}, [y, s] {
    return [y, s](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      if (!gi[0]) return;
      auto& dx = *gi[0];
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = o * s.extent * s.inner + in;
          double dot = 0.0;
          for (std::size_t k = 0; k < s.extent; ++k) dot += g[base + k * s.inner] * (*y)[base + k * s.inner];
          for (std::size_t k = 0; k < s.extent; ++k) {
            const std::size_t i = base + k * s.inner;
            dx[i] += (*y)[i] * (g[i] - dot);
          }
        }
      }
    };
  });
}

// ------------------------------------------------------------ reductions

namespace {

Shape drop_axis(const Shape& s, std::size_t axis) {
  Shape r;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) r.push_back(s[i]);
  return r;
}

void check_axis(OpKind kind, const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) shape_fail(kind, "axis " + std::to_string(axis) + " out of range for " + to_string(x.shape()));
}

}  // namespace

Tensor abs_sum(const Tensor& x, std::size_t axis) {
  constexpr OpKind kind = OpKind::kAbsSum;
  check_axis(kind, x, axis);
  const AxisSplit s = split_axis(x.shape(), axis);
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.extent; ++k)
      for (std::size_t in = 0; in < s.inner; ++in)
        out[o * s.inner + in] += std::abs(x[(o * s.extent + k) * s.inner + in]);
  return make_result(kind, drop_axis(x.shape(), axis), std::move(out), {&x}, [x, s] {
    return [x, s](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      if (!gi[0]) return;
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t k = 0; k < s.extent; ++k)
          for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t i = (o * s.extent + k) * s.inner + in;
            const double v = x[i];
            const double sg = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
            (*gi[0])[i] += g[o * s.inner + in] * sg;
          }
    };
  });
}

Tensor l2_norm(const Tensor& x, std::size_t axis) {
  constexpr OpKind kind = OpKind::kL2Norm;
  check_axis(kind, x, axis);
  const AxisSplit s = split_axis(x.shape(), axis);
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.extent; ++k)
      for (std::size_t in = 0; in < s.inner; ++in) {
        const double v = x[(o * s.extent + k) * s.inner + in];
        out[o * s.inner + in] += v * v;
      }
  for (double& v : out) v = std::sqrt(v);
  auto y = std::make_shared<std::vector<double>>(out);
  return make_result(kind, drop_axis(x.shape(), axis), std::move(out), {&x}, [x, y, s] {
    return [x, y, s](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      if (!gi[0]) return;
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t k = 0; k < s.extent; ++k)
          for (std::size_t in = 0; in < s.inner; ++in) {
            const double norm = (*y)[o * s.inner + in];
            if (norm == 0.0) continue;  // subgradient 0 at the origin
            const std::size_t i = (o * s.extent + k) * s.inner + in;
            (*gi[0])[i] += g[o * s.inner + in] * x[i] / norm;
          }
    };
  });
}

Tensor sum(const Tensor& x, std::size_t axis) {
  constexpr OpKind kind = OpKind::kSum;
  check_axis(kind, x, axis);
  const AxisSplit s = split_axis(x.shape(), axis);
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.extent; ++k)
      for (std::size_t in = 0; in < s.inner; ++in) out[o * s.inner + in] += x[(o * s.extent + k) * s.inner + in];
  return make_result(kind, drop_axis(x.shape(), axis), std::move(out), {&x}, [s] {
    return [s](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      if (!gi[0]) return;
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t k = 0; k < s.extent; ++k)
          for (std::size_t in = 0; in < s.inner; ++in)
            (*gi[0])[(o * s.extent + k) * s.inner + in] += g[o * s.inner + in];
    };
  });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return make_result(OpKind::kSum, {}, {acc}, {&x}, [] {
    return [](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      if (!gi[0]) return;
      for (double& d : *gi[0]) d += g[0];
    };
  });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return make_result(OpKind::kMean, {}, {acc / n}, {&x}, [n] {
    return [n](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      if (!gi[0]) return;
      for (double& d : *gi[0]) d += g[0] / n;
    };
  });
}

Tensor mean(const Tensor& x, std::vector<std::size_t> axes) {
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  if (axes.size() == x.rank()) return mean(x);
  Tensor r = x;
  for (auto it = axes.rbegin(); it != axes.rend(); ++it) {
    check_axis(OpKind::kMean, r, *it);
    const double n = static_cast<double>(r.dim(*it));
    r = scale(sum(r, *it), 1.0 / n);
  }
  return r;
}

Tensor avg_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride, std::size_t pad) {
  constexpr OpKind kind = OpKind::kAvgPool2d;
  require_rank(kind, x, 3, "input");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (kernel == 0 || stride == 0 || h + 2 * pad < kernel || w + 2 * pad < kernel) {
    shape_fail(kind, "kernel " + std::to_string(kernel) + " incompatible with input " + to_string(x.shape()));
  }
  const std::size_t ho = (h + 2 * pad - kernel) / stride + 1, wo = (w + 2 * pad - kernel) / stride + 1;
  // Precompute windows and counts.
  struct Win {
    std::size_t i0, i1, j0, j1;
    double inv;
  };
  auto wins = std::make_shared<std::vector<Win>>(ho * wo);
  for (std::size_t oi = 0; oi < ho; ++oi)
    for (std::size_t oj = 0; oj < wo; ++oj) {
      const long a = static_cast<long>(oi * stride) - static_cast<long>(pad);
      const long b = static_cast<long>(oj * stride) - static_cast<long>(pad);
      Win wv{};
      wv.i0 = static_cast<std::size_t>(std::max(0L, a));
      wv.i1 = static_cast<std::size_t>(std::min(static_cast<long>(h), a + static_cast<long>(kernel)));
      wv.j0 = static_cast<std::size_t>(std::max(0L, b));
      wv.j1 = static_cast<std::size_t>(std::min(static_cast<long>(w), b + static_cast<long>(kernel)));
      wv.inv = 1.0 / static_cast<double>((wv.i1 - wv.i0) * (wv.j1 - wv.j0));
      (*wins)[oi * wo + oj] = wv;
    }
  std::vector<double> out(c * ho * wo, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t o = 0; o < ho * wo; ++o) {
      const Win& wv = (*wins)[o];
      double acc = 0.0;
      for (std::size_t i = wv.i0; i < wv.i1; ++i)
        for (std::size_t j = wv.j0; j < wv.j1; ++j) acc += x[(ch * h + i) * w + j];
      out[ch * ho * wo + o] = acc * wv.inv;
    }
  return make_result(kind, {c, ho, wo}, std::move(out), {&x}, [wins, c, h, w, ho, wo] {
    return [wins, c, h, w, ho, wo](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      if (!gi[0]) return;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t o = 0; o < ho * wo; ++o) {
          const auto& wv = (*wins)[o];
          const double v = g[ch * ho * wo + o] * wv.inv;
          for (std::size_t i = wv.i0; i < wv.i1; ++i)
            for (std::size_t j = wv.j0; j < wv.j1; ++j) (*gi[0])[(ch * h + i) * w + j] += v;
        }
    };
  });
}

Tensor spatial_gradient(const Tensor& x) {
  constexpr OpKind kind = OpKind::kSpatialGradient;
  require_rank(kind, x, 3, "input");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2), hw = h * w;
  std::vector<double> out(2 * c * hw, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t at = ch * hw + i * w + j;
        if (j + 1 < w) out[at] = x[at + 1] - x[at];
        if (i + 1 < h) out[c * hw + at] = x[at + w] - x[at];
      }
  return make_result(kind, {2 * c, h, w}, std::move(out), {&x}, [c, h, w] {
    return [c, h, w](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      if (!gi[0]) return;
      auto& dx = *gi[0];
      const std::size_t hw = h * w;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j) {
            const std::size_t at = ch * hw + i * w + j;
            if (j + 1 < w) {
              dx[at + 1] += g[at];
              dx[at] -= g[at];
            }
            if (i + 1 < h) {
              dx[at + w] += g[c * hw + at];
              dx[at] -= g[c * hw + at];
            }
          }
    };
  });
}

// ------------------------------------------------------------ structure

Tensor concat(std::span<const Tensor> xs, std::size_t axis) {
  constexpr OpKind kind = OpKind::kConcat;
  if (xs.empty()) shape_fail(kind, "no inputs");
  const Shape& ref = xs[0].shape();
  check_axis(kind, xs[0], axis);
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const Tensor& t : xs) {
    if (t.rank() != ref.size()) shape_fail(kind, "rank mismatch " + to_string(ref) + " vs " + to_string(t.shape()));
    for (std::size_t i = 0; i < ref.size(); ++i)
      if (i != axis && t.dim(i) != ref[i])
        shape_fail(kind, "extent mismatch " + to_string(ref) + " vs " + to_string(t.shape()));
    extents.push_back(t.dim(axis));
    total += t.dim(axis);
  }
  Shape out_shape = ref;
  out_shape[axis] = total;
  const AxisSplit s = split_axis(out_shape, axis);
  std::vector<double> out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const std::size_t e = extents[k];
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(xs[k].data().data() + o * e * s.inner, e * s.inner,
                  out.data() + (o * total + offset) * s.inner);
    offset += e;
  }
  return detail::make_result_n(kind, out_shape, std::move(out), xs, [extents, s, total] {
    return [extents, s, total](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < extents.size(); ++k) {
        const std::size_t e = extents[k];
        if (gi[k]) {
          for (std::size_t o = 0; o < s.outer; ++o) {
            const double* src = g.data() + (o * total + offset) * s.inner;
            double* dst = gi[k]->data() + o * e * s.inner;
            for (std::size_t i = 0; i < e * s.inner; ++i) dst[i] += src[i];
          }
        }
        offset += e;
      }
    };
  });
}

Tensor concat(std::initializer_list<Tensor> xs, std::size_t axis) {
  return concat(std::span<const Tensor>(xs.begin(), xs.size()), axis);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  constexpr OpKind kind = OpKind::kSlice;
  check_axis(kind, x, axis);
  if (length == 0 || start + length > x.dim(axis)) {
    shape_fail(kind, "range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") outside axis " + std::to_string(axis) + " of " + to_string(x.shape()));
  }
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::vector<double> out(numel(out_shape));
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(x.data().data() + (o * s.extent + start) * s.inner, length * s.inner,
                out.data() + o * length * s.inner);
  return make_result(kind, out_shape, std::move(out), {&x}, [s, start, length] {
    return [s, start, length](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      if (!gi[0]) return;
      for (std::size_t o = 0; o < s.outer; ++o) {
        const double* src = g.data() + o * length * s.inner;
        double* dst = gi[0]->data() + (o * s.extent + start) * s.inner;
        for (std::size_t i = 0; i < length * s.inner; ++i) dst[i] += src[i];
      }
    };
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  validate_shape(shape, "reshape");
  if (numel(shape) != x.numel()) {
    shape_fail(OpKind::kReshape, "cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  std::vector<double> out = x.to_vector();
  return make_result(OpKind::kReshape, std::move(shape), std::move(out), {&x}, [] {
    return [](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      if (!gi[0]) return;
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
    };
  });
}

Tensor transpose(const Tensor& x) {
  require_rank(OpKind::kTranspose, x, 2, "input");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  return make_result(OpKind::kTranspose, {n, m}, std::move(out), {&x}, [m, n] {
    return [m, n](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      if (!gi[0]) return;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*gi[0])[i * n + j] += g[j * m + i];
    };
  });
}

Tensor broadcast(const Tensor& x, Shape shape) {
  constexpr OpKind kind = OpKind::kBroadcast;
  validate_shape(shape, "broadcast");
  if (x.rank() > shape.size()) shape_fail(kind, "cannot broadcast " + to_string(x.shape()) + " to " + to_string(shape));
  const std::size_t lead = shape.size() - x.rank();
  // Source stride per output axis (0 for broadcast axes).
  std::vector<std::size_t> src_stride(shape.size(), 0);
  std::size_t st = 1;
  for (std::size_t i = x.rank(); i-- > 0;) {
    const std::size_t e = x.dim(i), oe = shape[lead + i];
    if (e != oe && e != 1) shape_fail(kind, "cannot broadcast " + to_string(x.shape()) + " to " + to_string(shape));
    src_stride[lead + i] = (e == 1) ? 0 : st;
    st *= e;
  }
  const std::size_t n = numel(shape);
  auto map = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> idx(shape.size(), 0);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t src = 0;
    for (std::size_t a = 0; a < shape.size(); ++a) src += idx[a] * src_stride[a];
    (*map)[k] = src;
    for (std::size_t a = shape.size(); a-- > 0;) {
      if (++idx[a] < shape[a]) break;
      idx[a] = 0;
    }
  }
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = x[(*map)[k]];
  return make_result(kind, std::move(shape), std::move(out), {&x}, [map] {
    return [map](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      if (!gi[0]) return;
      for (std::size_t k = 0; k < g.size(); ++k) (*gi[0])[(*map)[k]] += g[k];
    };
  });
}

Tensor stop_gradient(const Tensor& x) {
  std::vector<double> out = x.to_vector();
  if (DetachTape* tape = DetachTape::active()) out = tape->pass(x.shape(), std::move(out));
  return make_result(OpKind::kStopGradient, x.shape(), std::move(out), {&x}, [] {
    return [](std::span<const double>, std::span<std::vector<double>* const>) {};
  });
}

// ------------------------------------------------------------ sampling

Tensor bilinear_sample(const Tensor& grid, const Tensor& coords) {
  constexpr OpKind kind = OpKind::kBilinearSample;
  require_rank(kind, grid, 3, "grid");
  require_rank(kind, coords, 2, "coords");
  if (coords.dim(1) != 2) shape_fail(kind, "coords must be (N, 2), got " + to_string(coords.shape()));
  const std::size_t c = grid.dim(0), h = grid.dim(1), w = grid.dim(2), n = coords.dim(0);
  struct Tap {
    std::size_t x0, x1, y0, y1;
    double fx, fy;
    bool in_x, in_y;  // strictly inside the clamp range, coordinate gradient flows
  };
  auto taps = std::make_shared<std::vector<Tap>>(n);
  std::vector<double> out(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = coords[2 * i], y = coords[2 * i + 1];
    if (!std::isfinite(x) || !std::isfinite(y)) throw NumericError("bilinear_sample: non-finite coordinate at row " + std::to_string(i));
    const double xc = std::clamp(x, 0.0, static_cast<double>(w - 1));
    const double yc = std::clamp(y, 0.0, static_cast<double>(h - 1));
    Tap t{};
    t.x0 = static_cast<std::size_t>(std::floor(xc));
    t.y0 = static_cast<std::size_t>(std::floor(yc));
    t.x1 = std::min(t.x0 + 1, w - 1);
    t.y1 = std::min(t.y0 + 1, h - 1);
    t.fx = xc - static_cast<double>(t.x0);
    t.fy = yc - static_cast<double>(t.y0);
    t.in_x = x >= 0.0 && x <= static_cast<double>(w - 1);
    t.in_y = y >= 0.0 && y <= static_cast<double>(h - 1);
    (*taps)[i] = t;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* gc = grid.data().data() + ch * h * w;
      out[i * c + ch] = (1 - t.fy) * ((1 - t.fx) * gc[t.y0 * w + t.x0] + t.fx * gc[t.y0 * w + t.x1]) +
                        t.fy * ((1 - t.fx) * gc[t.y1 * w + t.x0] + t.fx * gc[t.y1 * w + t.x1]);
    }
  }
  return make_result(kind, {n, c}, std::move(out), {&grid, &coords}, [grid, taps, c, h, w, n] {
    return [grid, taps, c, h, w, n](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      for (std::size_t i = 0; i < n; ++i) {
        const auto& t = (*taps)[i];
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double go = g[i * c + ch];
          if (gi[0]) {
            double* dg = gi[0]->data() + ch * h * w;
            dg[t.y0 * w + t.x0] += go * (1 - t.fy) * (1 - t.fx);
            dg[t.y0 * w + t.x1] += go * (1 - t.fy) * t.fx;
            dg[t.y1 * w + t.x0] += go * t.fy * (1 - t.fx);
            dg[t.y1 * w + t.x1] += go * t.fy * t.fx;
          }
          if (gi[1]) {
            const double* gc = grid.data().data() + ch * h * w;
            const double v00 = gc[t.y0 * w + t.x0], v01 = gc[t.y0 * w + t.x1];
            const double v10 = gc[t.y1 * w + t.x0], v11 = gc[t.y1 * w + t.x1];
            if (t.in_x) (*gi[1])[2 * i] += go * ((1 - t.fy) * (v01 - v00) + t.fy * (v11 - v10));
            if (t.in_y) (*gi[1])[2 * i + 1] += go * ((1 - t.fx) * (v10 - v00) + t.fx * (v11 - v01));
          }
        }
      }
    };
  });
}

Tensor scatter_mean(const Tensor& values, std::span<const long> cell, std::size_t cells) {
  constexpr OpKind kind = OpKind::kScatterMean;
  require_rank(kind, values, 2, "values");
  const std::size_t n = values.dim(0), c = values.dim(1);
  if (cell.size() != n) shape_fail(kind, "index count " + std::to_string(cell.size()) + " != rows " + std::to_string(n));
  auto count = std::make_shared<std::vector<double>>(cells, 0.0);
  for (long k : cell) {
    if (k < -1 || k >= static_cast<long>(cells)) shape_fail(kind, "cell index " + std::to_string(k) + " out of range");
    if (k >= 0) (*count)[static_cast<std::size_t>(k)] += 1.0;
  }
  std::vector<double> out(cells * c, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (cell[i] < 0) continue;
    const auto k = static_cast<std::size_t>(cell[i]);
    for (std::size_t ch = 0; ch < c; ++ch) out[k * c + ch] += values[i * c + ch];
  }
  for (std::size_t k = 0; k < cells; ++k)
    if ((*count)[k] > 0)
      for (std::size_t ch = 0; ch < c; ++ch) out[k * c + ch] /= (*count)[k];
  std::vector<long> idx(cell.begin(), cell.end());
  return make_result(kind, {cells, c}, std::move(out), {&values}, [idx = std::move(idx), count, c] {
    return [idx, count, c](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      if (!gi[0]) return;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0) continue;
        const auto k = static_cast<std::size_t>(idx[i]);
        for (std::size_t ch = 0; ch < c; ++ch) (*gi[0])[i * c + ch] += g[k * c + ch] / (*count)[k];
      }
    };
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  constexpr OpKind kind = OpKind::kGatherRows;
  require_rank(kind, x, 2, "input");
  const std::size_t n = x.dim(0), c = x.dim(1);
  if (rows.empty()) shape_fail(kind, "empty row selection");
  std::vector<double> out(rows.size() * c);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n) shape_fail(kind, "row " + std::to_string(rows[r]) + " out of range for " + to_string(x.shape()));
    std::copy_n(x.data().data() + rows[r] * c, c, out.data() + r * c);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result(kind, {rows.size(), c}, std::move(out), {&x}, [idx = std::move(idx), c] {
    return [idx, c](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      if (!gi[0]) return;
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t ch = 0; ch < c; ++ch) (*gi[0])[idx[r] * c + ch] += g[r * c + ch];
    };
  });
}

Tensor mix_rows(const Tensor& x, const RowMix& mix) {
  constexpr OpKind kind = OpKind::kMixRows;
  require_rank(kind, x, 2, "input");
  const std::size_t n = x.dim(0), c = x.dim(1), m = mix.size();
  if (m == 0) shape_fail(kind, "empty mixing table");
  std::vector<double> out(m * c, 0.0);
  for (std::size_t r = 0; r < m; ++r)
    for (const auto& [src, wgt] : mix[r]) {
      if (src >= n) shape_fail(kind, "source row " + std::to_string(src) + " out of range for " + to_string(x.shape()));
      for (std::size_t ch = 0; ch < c; ++ch) out[r * c + ch] += wgt * x[src * c + ch];
    }
  auto table = std::make_shared<RowMix>(mix);
  return make_result(kind, {m, c}, std::move(out), {&x}, [table, c] {
    return [table, c](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      if (!gi[0]) return;
      for (std::size_t r = 0; r < table->size(); ++r)
        for (const auto& [src, wgt] : (*table)[r])
          for (std::size_t ch = 0; ch < c; ++ch) (*gi[0])[src * c + ch] += wgt * g[r * c + ch];
    };
  });
}

namespace {

// Two taps per output index for 2x half-pixel upsampling along one axis.
struct UpTap {
  std::size_t a, b;
  double wa, wb;
};

std::vector<UpTap> up_taps(std::size_t n) {
  std::vector<UpTap> taps(2 * n);
  for (std::size_t o = 0; o < 2 * n; ++o) {
    const double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    const double sc = std::clamp(src, 0.0, static_cast<double>(n - 1));
    const auto lo = static_cast<std::size_t>(std::floor(sc));
    const std::size_t hi = std::min(lo + 1, n - 1);
    const double f = sc - static_cast<double>(lo);
    taps[o] = {lo, hi, 1.0 - f, f};
  }
  return taps;
}

}  // namespace

Tensor upsample2x_bilinear(const Tensor& x) {
  constexpr OpKind kind = OpKind::kUpsample2xBilinear;
  require_rank(kind, x, 3, "input");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto ty = std::make_shared<std::vector<UpTap>>(up_taps(h));
  auto tx = std::make_shared<std::vector<UpTap>>(up_taps(w));
  const std::size_t ho = 2 * h, wo = 2 * w;
  std::vector<double> out(c * ho * wo);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = x.data().data() + ch * h * w;
    for (std::size_t i = 0; i < ho; ++i) {
      const UpTap& a = (*ty)[i];
      for (std::size_t j = 0; j < wo; ++j) {
        const UpTap& b = (*tx)[j];
        out[(ch * ho + i) * wo + j] = a.wa * (b.wa * src[a.a * w + b.a] + b.wb * src[a.a * w + b.b]) +
                                      a.wb * (b.wa * src[a.b * w + b.a] + b.wb * src[a.b * w + b.b]);
      }
    }
  }
  return make_result(kind, {c, ho, wo}, std::move(out), {&x}, [ty, tx, c, h, w] {
    return [ty, tx, c, h, w](std::span<const double> g, std::span<std::vector<double>* const> gi) {
      if (!gi[0]) return;
      const std::size_t ho = 2 * h, wo = 2 * w;
      for (std::size_t ch = 0; ch < c; ++ch) {
        double* dst = gi[0]->data() + ch * h * w;
        for (std::size_t i = 0; i < ho; ++i) {
          const UpTap& a = (*ty)[i];
          for (std::size_t j = 0; j < wo; ++j) {
            const UpTap& b = (*tx)[j];
            const double go = g[(ch * ho + i) * wo + j];
            dst[a.a * w + b.a] += go * a.wa * b.wa;
            dst[a.a * w + b.b] += go * a.wa * b.wb;
            dst[a.b * w + b.a] += go * a.wb * b.wa;
            dst[a.b * w + b.b] += go * a.wb * b.wb;
          }
        }
      }
    };
  });
}

}  // namespace x2f::ad::ops
