#include "segfuse/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace segfuse {

using detail::make_result;
using detail::Node;

namespace detail {
namespace {
thread_local KinkRecorder* g_kink = nullptr;
}
KinkRecorder::KinkRecorder() : previous_(g_kink) { g_kink = this; }
KinkRecorder::~KinkRecorder() { g_kink = previous_; }
KinkRecorder* active_kink_recorder() { return g_kink; }
}  // namespace detail

namespace {

using Strides = std::vector<std::size_t>;

Strides contiguous_strides(const Shape& shape) {
  Strides s(shape.size());
  std::size_t acc = 1;
  for (std::size_t i = shape.size(); i-- > 0;) {
    s[i] = acc;
    acc *= shape[i];
  }
  return s;
}

// Strides of `operand` viewed with the rank and extents of `target`; axes the
// operand broadcasts over get stride 0.
Strides broadcast_strides(const Shape& operand, const Shape& target) {
  Strides own = contiguous_strides(operand);
  Strides s(target.size(), 0);
  const std::size_t pad = target.size() - operand.size();
  for (std::size_t i = 0; i < operand.size(); ++i) {
    s[pad + i] = operand[i] == 1 && target[pad + i] != 1 ? 0 : own[i];
  }
  return s;
}

// Visits every element of `shape` in row-major order with the matching offsets
// into two operands.
template <class F>
void visit2(const Shape& shape, const Strides& sa, const Strides& sb, F&& f) {
  const std::size_t rank = shape.size();
  const std::size_t total = numel_of(shape);
  if (rank == 0 || total == 0) return;
  const std::size_t inner = shape[rank - 1];
  const std::size_t ia = sa[rank - 1];
  const std::size_t ib = sb[rank - 1];
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0;
  std::size_t ob = 0;
  for (std::size_t flat = 0; flat < total; flat += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(flat + j, oa + j * ia, ob + j * ib);
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      ++idx[ax];
      oa += sa[ax];
      ob += sb[ax];
      if (idx[ax] < shape[ax]) break;
      oa -= sa[ax] * shape[ax];
      ob -= sb[ax] * shape[ax];
      idx[ax] = 0;
    }
  }
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw std::invalid_argument("shapes " + shape_str(a) + " and " + shape_str(b) +
                                  " are not broadcast-compatible");
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

bool wants_grad(const Node& n, std::size_t i) { return n.parents[i]->requires_grad; }
std::vector<double>& pgrad(Node& n, std::size_t i) { return n.parents[i]->grad_buffer(); }
const std::vector<double>& pdata(const Node& n, std::size_t i) { return n.parents[i]->data; }

// Splits `shape` around `axis` into (outer, len, inner).
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw std::invalid_argument("axis " + std::to_string(axis) + " invalid for " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.dim() != rank) {
    throw std::invalid_argument(std::string(what) + " expects rank " + std::to_string(rank) +
                                ", got " + shape_str(t.shape()));
  }
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto& xs = x.values();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = fwd(xs[i]);
  return make_result(x.shape(), std::move(out), {x}, [deriv](Node& self) {
    const auto& in = pdata(self, 0);
    auto& g = pgrad(self, 0);
    for (std::size_t i = 0; i < in.size(); ++i) g[i] += self.grad[i] * deriv(in[i], self.data[i]);
  });
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const Strides sa = broadcast_strides(a.shape(), out_shape);
  const Strides sb = broadcast_strides(b.shape(), out_shape);
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(numel_of(out_shape));
  switch (op) {
    case ElementwiseOp::kAdd:
      visit2(out_shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = av[ia] + bv[ib]; });
      break;
    case ElementwiseOp::kSub:
      visit2(out_shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = av[ia] - bv[ib]; });
      break;
    case ElementwiseOp::kMul:
      visit2(out_shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = av[ia] * bv[ib]; });
      break;
  }
  return make_result(out_shape, std::move(out), {a, b}, [op, out_shape, sa, sb](Node& self) {
    const auto& g = self.grad;
    const bool need_a = wants_grad(self, 0);
    const bool need_b = wants_grad(self, 1);
    const auto& ad = pdata(self, 0);
    const auto& bd = pdata(self, 1);
    std::vector<double>* ga = need_a ? &pgrad(self, 0) : nullptr;
    std::vector<double>* gb = need_b ? &pgrad(self, 1) : nullptr;
    visit2(out_shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      switch (op) {
        case ElementwiseOp::kAdd:
          if (ga) (*ga)[ia] += g[i];
          if (gb) (*gb)[ib] += g[i];
          break;
        case ElementwiseOp::kSub:
          if (ga) (*ga)[ia] += g[i];
          if (gb) (*gb)[ib] -= g[i];
          break;
        case ElementwiseOp::kMul:
          if (ga) (*ga)[ia] += g[i] * bd[ib];
          if (gb) (*gb)[ib] += g[i] * ad[ia];
          break;
      }
    });
  });
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::kAdd, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::kSub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::kMul, a, b); }

Tensor scale(const Tensor& x, double factor) {
  return unary(x, [factor](double v) { return v * factor; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.dim() < 2 || b.dim() < 2) {
    throw std::invalid_argument("matmul needs rank >= 2 operands, got " + shape_str(a.shape()) +
                                " and " + shape_str(b.shape()));
  }
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as.back();
  const std::size_t n = bs.back();
  if (bs[bs.size() - 2] != k) {
    throw std::invalid_argument("matmul inner extent mismatch: " + shape_str(as) + " x " + shape_str(bs));
  }
  const bool shared_b = bs.size() == 2;
  if (!shared_b && !std::equal(as.begin(), as.end() - 2, bs.begin(), bs.end() - 2)) {
    throw std::invalid_argument("matmul batch extents differ: " + shape_str(as) + " x " + shape_str(bs));
  }
  const std::size_t batch = numel_of(Shape(as.begin(), as.end() - 2));
  Shape out_shape(as.begin(), as.end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);

  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(batch * m * n, 0.0);
  for (std::size_t t = 0; t < batch; ++t) {
    const double* A = av.data() + t * m * k;
    const double* B = bv.data() + (shared_b ? 0 : t * k * n);
    double* C = out.data() + t * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = A[i * k + p];
        const double* brow = B + p * n;
        double* crow = C + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
  }
  return make_result(out_shape, std::move(out), {a, b}, [batch, m, k, n, shared_b](Node& self) {
    const auto& A_all = pdata(self, 0);
    const auto& B_all = pdata(self, 1);
    const bool need_a = wants_grad(self, 0);
    const bool need_b = wants_grad(self, 1);
    std::vector<double>* ga = need_a ? &pgrad(self, 0) : nullptr;
    std::vector<double>* gb = need_b ? &pgrad(self, 1) : nullptr;
    for (std::size_t t = 0; t < batch; ++t) {
      const double* G = self.grad.data() + t * m * n;
      const double* A = A_all.data() + t * m * k;
      const std::size_t boff = shared_b ? 0 : t * k * n;
      const double* B = B_all.data() + boff;
      if (ga) {
        double* dA = ga->data() + t * m * k;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * B[p * n + j];
            dA[i * k + p] += acc;
          }
        }
      }
      if (gb) {
        double* dB = gb->data() + boff;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = A[i * k + p];
            for (std::size_t j = 0; j < n; ++j) dB[p * n + j] += aip * G[i * n + j];
          }
        }
      }
    }
  });
}

namespace {

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, kh, kw, ho, wo, stride, pad, groups, cin_g, cout_g;
};

// Unfolds one group's input planes into rows (c, ky, kx) x columns (oy, ox).
void im2col(const double* x, const ConvGeometry& g, double* col) {
  const std::size_t cols = g.ho * g.wo;
  for (std::size_t c = 0; c < g.cin_g; ++c) {
    const double* plane = x + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        double* row = col + ((c * g.kh + ky) * g.kw + kx) * cols;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          double* dst = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im(const double* col, const ConvGeometry& g, double* dx) {
  const std::size_t cols = g.ho * g.wo;
  for (std::size_t c = 0; c < g.cin_g; ++c) {
    double* plane = dx + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const double* row = col + ((c * g.kh + ky) * g.kw + kx) * cols;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          double* dst = plane + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += row[oy * g.wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions opt) {
  require_rank(x, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  ConvGeometry g{};
  g.n = x.size(0);
  g.cin = x.size(1);
  g.h = x.size(2);
  g.w = x.size(3);
  g.cout = weight.size(0);
  g.kh = weight.size(2);
  g.kw = weight.size(3);
  g.stride = opt.stride;
  g.pad = opt.padding;
  g.groups = opt.groups;
  if (g.groups == 0 || g.cin % g.groups != 0 || g.cout % g.groups != 0) {
    throw std::invalid_argument("conv2d: channels " + std::to_string(g.cin) + "->" +
                                std::to_string(g.cout) + " not divisible by groups " +
                                std::to_string(g.groups));
  }
  g.cin_g = g.cin / g.groups;
  g.cout_g = g.cout / g.groups;
  if (weight.size(1) != g.cin_g) {
    throw std::invalid_argument("conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " +
                                shape_str(x.shape()));
  }
  if (g.stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw) {
    throw std::invalid_argument("conv2d: kernel " + shape_str(weight.shape()) +
                                " larger than padded input " + shape_str(x.shape()));
  }
  if (bias.defined() && (bias.dim() != 1 || bias.size(0) != g.cout)) {
    throw std::invalid_argument("conv2d: bias shape " + shape_str(bias.shape()));
  }
  g.ho = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.kw) / g.stride + 1;

  const std::size_t rows = g.cin_g * g.kh * g.kw;
  const std::size_t cols = g.ho * g.wo;
  const auto& xv = x.values();
  const auto& wv = weight.values();
  std::vector<double> out(g.n * g.cout * cols, 0.0);
  std::vector<double> col(rows * cols);
  for (std::size_t b = 0; b < g.n; ++b) {
    for (std::size_t grp = 0; grp < g.groups; ++grp) {
      im2col(xv.data() + (b * g.cin + grp * g.cin_g) * g.h * g.w, g, col.data());
      for (std::size_t o = 0; o < g.cout_g; ++o) {
        const std::size_t co = grp * g.cout_g + o;
        double* dst = out.data() + (b * g.cout + co) * cols;
        if (bias.defined()) std::fill(dst, dst + cols, bias.values()[co]);
        const double* wrow = wv.data() + co * rows;
        for (std::size_t r = 0; r < rows; ++r) {
          const double wr = wrow[r];
          const double* src = col.data() + r * cols;
          for (std::size_t c = 0; c < cols; ++c) dst[c] += wr * src[c];
        }
      }
    }
  }

  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  const bool has_bias = bias.defined();
  return make_result({g.n, g.cout, g.ho, g.wo}, std::move(out), std::move(inputs),
                     [g, rows, cols, has_bias](Node& self) {
    const auto& xd = pdata(self, 0);
    const auto& wd = pdata(self, 1);
    const bool need_x = wants_grad(self, 0);
    const bool need_w = wants_grad(self, 1);
    const bool need_b = has_bias && wants_grad(self, 2);
    std::vector<double>* gx = need_x ? &pgrad(self, 0) : nullptr;
    std::vector<double>* gw = need_w ? &pgrad(self, 1) : nullptr;
    std::vector<double>* gb = need_b ? &pgrad(self, 2) : nullptr;
    std::vector<double> col(rows * cols);
    std::vector<double> dcol(rows * cols);
    for (std::size_t b = 0; b < g.n; ++b) {
      for (std::size_t grp = 0; grp < g.groups; ++grp) {
        const std::size_t xoff = (b * g.cin + grp * g.cin_g) * g.h * g.w;
        if (gw) im2col(xd.data() + xoff, g, col.data());
        if (gx) std::fill(dcol.begin(), dcol.end(), 0.0);
        for (std::size_t o = 0; o < g.cout_g; ++o) {
          const std::size_t co = grp * g.cout_g + o;
          const double* go = self.grad.data() + (b * g.cout + co) * cols;
          if (gb) {
            double acc = 0.0;
            for (std::size_t c = 0; c < cols; ++c) acc += go[c];
            (*gb)[co] += acc;
          }
          const double* wrow = wd.data() + co * rows;
          for (std::size_t r = 0; r < rows; ++r) {
            if (gw) {
              const double* src = col.data() + r * cols;
              double acc = 0.0;
              for (std::size_t c = 0; c < cols; ++c) acc += go[c] * src[c];
              (*gw)[co * rows + r] += acc;
            }
            if (gx) {
              const double wr = wrow[r];
              double* drow = dcol.data() + r * cols;
              for (std::size_t c = 0; c < cols; ++c) drow[c] += wr * go[c];
            }
          }
        }
        if (gx) col2im(dcol.data(), g, gx->data() + xoff);
      }
    }
  });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride) {
  require_rank(x, 4, "conv_transpose2d input");
  require_rank(weight, 4, "conv_transpose2d weight");
  const std::size_t n = x.size(0), cin = x.size(1), h = x.size(2), w = x.size(3);
  if (weight.size(0) != cin) {
    throw std::invalid_argument("conv_transpose2d: weight " + shape_str(weight.shape()) +
                                " incompatible with input " + shape_str(x.shape()));
  }
  if (stride == 0) throw std::invalid_argument("conv_transpose2d: stride must be positive");
  const std::size_t cout = weight.size(1), kh = weight.size(2), kw = weight.size(3);
  if (bias.defined() && (bias.dim() != 1 || bias.size(0) != cout)) {
    throw std::invalid_argument("conv_transpose2d: bias shape " + shape_str(bias.shape()));
  }
  const std::size_t ho = (h - 1) * stride + kh;
  const std::size_t wo = (w - 1) * stride + kw;
  const auto& xv = x.values();
  const auto& wv = weight.values();
  std::vector<double> out(n * cout * ho * wo, 0.0);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t co = 0; co < cout; ++co) {
      double* plane = out.data() + (b * cout + co) * ho * wo;
      if (bias.defined()) std::fill(plane, plane + ho * wo, bias.values()[co]);
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double* src = xv.data() + (b * cin + ci) * h * w;
        const double* k = wv.data() + (ci * cout + co) * kh * kw;
        for (std::size_t i = 0; i < h; ++i) {
          for (std::size_t j = 0; j < w; ++j) {
            const double v = src[i * w + j];
            for (std::size_t a = 0; a < kh; ++a) {
              double* dst = plane + (i * stride + a) * wo + j * stride;
              for (std::size_t c = 0; c < kw; ++c) dst[c] += v * k[a * kw + c];
            }
          }
        }
      }
    }
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  const bool has_bias = bias.defined();
  return make_result({n, cout, ho, wo}, std::move(out), std::move(inputs),
                     [=](Node& self) {
    const auto& xd = pdata(self, 0);
    const auto& wd = pdata(self, 1);
    std::vector<double>* gx = wants_grad(self, 0) ? &pgrad(self, 0) : nullptr;
    std::vector<double>* gw = wants_grad(self, 1) ? &pgrad(self, 1) : nullptr;
    std::vector<double>* gb = has_bias && wants_grad(self, 2) ? &pgrad(self, 2) : nullptr;
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t co = 0; co < cout; ++co) {
        const double* gplane = self.grad.data() + (b * cout + co) * ho * wo;
        if (gb) {
          double acc = 0.0;
          for (std::size_t i = 0; i < ho * wo; ++i) acc += gplane[i];
          (*gb)[co] += acc;
        }
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const std::size_t xoff = (b * cin + ci) * h * w;
          const std::size_t koff = (ci * cout + co) * kh * kw;
          for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
              const double v = xd[xoff + i * w + j];
              double acc = 0.0;
              for (std::size_t a = 0; a < kh; ++a) {
                const double* grow = gplane + (i * stride + a) * wo + j * stride;
                for (std::size_t c = 0; c < kw; ++c) {
                  acc += grow[c] * wd[koff + a * kw + c];
                  if (gw) (*gw)[koff + a * kw + c] += grow[c] * v;
                }
              }
              if (gx) (*gx)[xoff + i * w + j] += acc;
            }
          }
        }
      }
    }
  });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool training, double eps, double momentum) {
  require_rank(x, 4, "batch_norm input");
  const std::size_t n = x.size(0), c = x.size(1), hw = x.size(2) * x.size(3);
  for (const Tensor* t : std::initializer_list<const Tensor*>{&gamma, &beta, &running_mean, &running_var}) {
    if (t->numel() != c) {
      throw std::invalid_argument("batch_norm: parameter of shape " + shape_str(t->shape()) +
                                  " for " + std::to_string(c) + " channels");
    }
  }
  const std::size_t count = n * hw;
  const auto& xv = x.values();
  std::vector<double> mu(c), inv_std(c);
  if (training) {
    auto rm = running_mean.mutable_data();
    auto rv = running_var.mutable_data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = xv.data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      const double m = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = xv.data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) ss += (p[i] - m) * (p[i] - m);
      }
      const double var = ss / static_cast<double>(count);
      const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
      mu[ch] = m;
      inv_std[ch] = 1.0 / std::sqrt(var + eps);
      rm[ch] = (1.0 - momentum) * rm[ch] + momentum * m;
      rv[ch] = (1.0 - momentum) * rv[ch] + momentum * unbiased;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mu[ch] = running_mean.values()[ch];
      inv_std[ch] = 1.0 / std::sqrt(running_var.values()[ch] + eps);
    }
  }
  std::vector<double> xhat(xv.size());
  std::vector<double> out(xv.size());
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        xhat[off + i] = (xv[off + i] - mu[ch]) * inv_std[ch];
        out[off + i] = gv[ch] * xhat[off + i] + bv[ch];
      }
    }
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [n, c, hw, count, training, inv_std, xhat = std::move(xhat)](Node& self) {
    const auto& g = self.grad;
    const auto& gv = pdata(self, 1);
    std::vector<double>* gx = wants_grad(self, 0) ? &pgrad(self, 0) : nullptr;
    std::vector<double>* gg = wants_grad(self, 1) ? &pgrad(self, 1) : nullptr;
    std::vector<double>* gbeta = wants_grad(self, 2) ? &pgrad(self, 2) : nullptr;
    for (std::size_t ch = 0; ch < c; ++ch) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t off = (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          sum_g += g[off + i];
          sum_gx += g[off + i] * xhat[off + i];
        }
      }
      if (gg) (*gg)[ch] += sum_gx;
      if (gbeta) (*gbeta)[ch] += sum_g;
      if (!gx) continue;
      const double k = gv[ch] * inv_std[ch];
      const double inv_count = 1.0 / static_cast<double>(count);
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t off = (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          if (training) {
            (*gx)[off + i] += k * (g[off + i] - inv_count * sum_g - xhat[off + i] * inv_count * sum_gx);
          } else {
            (*gx)[off + i] += k * g[off + i];
          }
        }
      }
    }
  });
}

Tensor relu(const Tensor& x) {
  if (auto* rec = detail::active_kink_recorder()) {
    for (double v : x.values()) rec->record(v > 0.0);
  }
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor swish(const Tensor& x) {
  return unary(x, [](double v) { return v * stable_sigmoid(v); },
               [](double v, double) {
                 const double s = stable_sigmoid(v);
                 return s + v * s * (1.0 - s);
               });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit sp = split_at(x.shape(), axis);
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t j = 0; j < sp.inner; ++j) {
      const std::size_t base = o * sp.len * sp.inner + j;
      double mx = -INFINITY;
      for (std::size_t i = 0; i < sp.len; ++i) mx = std::max(mx, xv[base + i * sp.inner]);
      double s = 0.0;
      for (std::size_t i = 0; i < sp.len; ++i) {
        const double e = std::exp(xv[base + i * sp.inner] - mx);
        out[base + i * sp.inner] = e;
        s += e;
      }
      for (std::size_t i = 0; i < sp.len; ++i) out[base + i * sp.inner] /= s;
    }
  }
  return make_result(x.shape(), std::move(out), {x}, [sp](Node& self) {
    auto& gx = pgrad(self, 0);
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t j = 0; j < sp.inner; ++j) {
        const std::size_t base = o * sp.len * sp.inner + j;
        double dot = 0.0;
        for (std::size_t i = 0; i < sp.len; ++i) dot += g[base + i * sp.inner] * y[base + i * sp.inner];
        for (std::size_t i = 0; i < sp.len; ++i) {
          const std::size_t k = base + i * sp.inner;
          gx[k] += y[k] * (g[k] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit sp = split_at(x.shape(), axis);
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t j = 0; j < sp.inner; ++j) {
      const std::size_t base = o * sp.len * sp.inner + j;
      double mx = -INFINITY;
      for (std::size_t i = 0; i < sp.len; ++i) mx = std::max(mx, xv[base + i * sp.inner]);
      double s = 0.0;
      for (std::size_t i = 0; i < sp.len; ++i) s += std::exp(xv[base + i * sp.inner] - mx);
      const double lse = mx + std::log(s);
      for (std::size_t i = 0; i < sp.len; ++i) out[base + i * sp.inner] = xv[base + i * sp.inner] - lse;
    }
  }
  return make_result(x.shape(), std::move(out), {x}, [sp](Node& self) {
    auto& gx = pgrad(self, 0);
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t j = 0; j < sp.inner; ++j) {
        const std::size_t base = o * sp.len * sp.inner + j;
        double gs = 0.0;
        for (std::size_t i = 0; i < sp.len; ++i) gs += g[base + i * sp.inner];
        for (std::size_t i = 0; i < sp.len; ++i) {
          const std::size_t k = base + i * sp.inner;
          gx[k] += g[k] - std::exp(y[k]) * gs;
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.dim() == 0) throw std::invalid_argument("layer_norm on rank-0 tensor");
  const std::size_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d) {
    throw std::invalid_argument("layer_norm: affine extent " + shape_str(gamma.shape()) +
                                " does not match last axis of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const auto& xv = x.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  std::vector<double> xhat(xv.size()), out(xv.size()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* p = xv.data() + r * d;
    double m = 0.0;
    for (std::size_t i = 0; i < d; ++i) m += p[i];
    m /= static_cast<double>(d);
    double v = 0.0;
    for (std::size_t i = 0; i < d; ++i) v += (p[i] - m) * (p[i] - m);
    v /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(v + eps);
    for (std::size_t i = 0; i < d; ++i) {
      xhat[r * d + i] = (p[i] - m) * inv_std[r];
      out[r * d + i] = gv[i] * xhat[r * d + i] + bv[i];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [rows, d, inv_std = std::move(inv_std), xhat = std::move(xhat)](Node& self) {
    const auto& g = self.grad;
    const auto& gv = pdata(self, 1);
    std::vector<double>* gx = wants_grad(self, 0) ? &pgrad(self, 0) : nullptr;
    std::vector<double>* gg = wants_grad(self, 1) ? &pgrad(self, 1) : nullptr;
    std::vector<double>* gb = wants_grad(self, 2) ? &pgrad(self, 2) : nullptr;
    const double inv_d = 1.0 / static_cast<double>(d);
    for (std::size_t r = 0; r < rows; ++r) {
      double sum_dy = 0.0, sum_dyx = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        const double dy = g[r * d + i] * gv[i];
        sum_dy += dy;
        sum_dyx += dy * xhat[r * d + i];
        if (gg) (*gg)[i] += g[r * d + i] * xhat[r * d + i];
        if (gb) (*gb)[i] += g[r * d + i];
      }
      if (!gx) continue;
      for (std::size_t i = 0; i < d; ++i) {
        const double dy = g[r * d + i] * gv[i];
        (*gx)[r * d + i] += inv_std[r] * (dy - inv_d * sum_dy - xhat[r * d + i] * inv_d * sum_dyx);
      }
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw std::invalid_argument("concat axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& t : parts) {
    const Shape& s = t.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) {
      throw std::invalid_argument("concat: " + shape_str(s) + " incompatible with " + shape_str(first) +
                                  " along axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  const AxisSplit sp = split_at(out_shape, axis);
  std::vector<std::size_t> lens;
  std::vector<double> out(numel_of(out_shape));
  std::size_t offset = 0;
  for (const Tensor& t : parts) {
    const std::size_t len = t.shape()[axis];
    lens.push_back(len);
    const auto& v = t.values();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(v.data() + o * len * sp.inner, len * sp.inner,
                  out.data() + (o * sp.len + offset) * sp.inner);
    }
    offset += len;
  }
  return make_result(out_shape, std::move(out), parts, [sp, lens](Node& self) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < lens.size(); ++p) {
      const std::size_t len = lens[p];
      if (wants_grad(self, p)) {
        auto& g = pgrad(self, p);
        for (std::size_t o = 0; o < sp.outer; ++o) {
          const double* src = self.grad.data() + (o * sp.len + offset) * sp.inner;
          double* dst = g.data() + o * len * sp.inner;
          for (std::size_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
        }
      }
      offset += len;
    }
  });
}

Tensor upsample_nearest(const Tensor& x, std::size_t factor) {
  require_rank(x, 4, "upsample_nearest");
  if (factor == 0) throw std::invalid_argument("upsample factor must be positive");
  const std::size_t planes = x.size(0) * x.size(1), h = x.size(2), w = x.size(3);
  const std::size_t ho = h * factor, wo = w * factor;
  const auto& xv = x.values();
  std::vector<double> out(planes * ho * wo);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        out[(p * ho + i) * wo + j] = xv[(p * h + i / factor) * w + j / factor];
      }
    }
  }
  return make_result({x.size(0), x.size(1), ho, wo}, std::move(out), {x},
                     [planes, h, w, ho, wo, factor](Node& self) {
    auto& g = pgrad(self, 0);
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t i = 0; i < ho; ++i) {
        for (std::size_t j = 0; j < wo; ++j) {
          g[(p * h + i / factor) * w + j / factor] += self.grad[(p * ho + i) * wo + j];
        }
      }
    }
  });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 4, "global_avg_pool");
  return mean(x, {2, 3}, true);
}

Tensor sum(const Tensor& x) {
  std::vector<std::size_t> axes(x.dim());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  return reshape(sum(x, axes, false), {1});
}

Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum(const Tensor& x, const std::vector<std::size_t>& axes, bool keepdim) {
  const Shape& in = x.shape();
  Shape kept = in;
  for (std::size_t a : axes) {
    if (a >= in.size()) throw std::invalid_argument("sum axis out of range for " + shape_str(in));
    kept[a] = 1;
  }
  const Strides s_in = contiguous_strides(in);
  const Strides s_out = broadcast_strides(kept, in);
  const auto& xv = x.values();
  std::vector<double> out(numel_of(kept), 0.0);
  visit2(in, s_in, s_out, [&](std::size_t, std::size_t i, std::size_t o) { out[o] += xv[i]; });
  Shape out_shape;
  if (keepdim) {
    out_shape = kept;
  } else {
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (std::find(axes.begin(), axes.end(), i) == axes.end()) out_shape.push_back(in[i]);
    }
    if (out_shape.empty()) out_shape.push_back(1);
  }
  return make_result(out_shape, std::move(out), {x}, [in, s_in, s_out](Node& self) {
    auto& g = pgrad(self, 0);
    visit2(in, s_in, s_out, [&](std::size_t, std::size_t i, std::size_t o) { g[i] += self.grad[o]; });
  });
}

Tensor mean(const Tensor& x, const std::vector<std::size_t>& axes, bool keepdim) {
  std::size_t count = 1;
  for (std::size_t a : axes) count *= x.size(a);
  return scale(sum(x, axes, keepdim), 1.0 / static_cast<double>(count));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw std::invalid_argument("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  return make_result(std::move(shape), x.values(), {x}, [](Node& self) {
    auto& g = pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const Shape& in = x.shape();
  if (axes.size() != in.size()) throw std::invalid_argument("permute rank mismatch for " + shape_str(in));
  std::vector<bool> used(in.size(), false);
  Shape out_shape(in.size());
  const Strides s_in = contiguous_strides(in);
  Strides gather(in.size());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] >= in.size() || used[axes[i]]) throw std::invalid_argument("permute: invalid axis order");
    used[axes[i]] = true;
    out_shape[i] = in[axes[i]];
    gather[i] = s_in[axes[i]];
  }
  const Strides s_out = contiguous_strides(out_shape);
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  visit2(out_shape, s_out, gather, [&](std::size_t o, std::size_t, std::size_t i) { out[o] = xv[i]; });
  return make_result(out_shape, std::move(out), {x}, [out_shape, s_out, gather](Node& self) {
    auto& g = pgrad(self, 0);
    visit2(out_shape, s_out, gather, [&](std::size_t o, std::size_t, std::size_t i) { g[i] += self.grad[o]; });
  });
}

}  // namespace segfuse
