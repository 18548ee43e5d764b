#include "aeda/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include "aeda/errors.hpp"

namespace aeda {

namespace {

struct ConvGeom {
  std::size_t n, c_in, h, w;
  std::size_t c_out, kh, kw;
  std::ptrdiff_t pad_t, pad_l;
  bool batched;
};

ConvGeom conv_geometry(const Tensor& input, const LayerParams& p) {
  if (p.kind != ParamKind::conv) throw ShapeError("conv2d: params are not conv params");
  if (p.weights.ndim() != 4)
    throw ShapeError("conv2d: filter must be 4-D, got " + shape_str(p.weights.shape()));
  ConvGeom g{};
  g.batched = input.ndim() == 4;
  if (!g.batched && input.ndim() != 3)
    throw ShapeError("conv2d: input must be 3-D or 4-D, got " + shape_str(input.shape()));
  g.n = g.batched ? input.dim(0) : 1;
  g.c_in = input.dim(g.batched ? 1 : 0);
  g.h = input.dim(g.batched ? 2 : 1);
  g.w = input.dim(g.batched ? 3 : 2);
  g.c_out = p.weights.dim(0);
  if (p.weights.dim(1) != g.c_in)
    throw ShapeError("conv2d: input has " + std::to_string(g.c_in) + " channels but filter expects " +
                     std::to_string(p.weights.dim(1)));
  g.kh = p.weights.dim(2);
  g.kw = p.weights.dim(3);
  if (p.bias.ndim() != 1 || p.bias.dim(0) != g.c_out)
    throw ShapeError("conv2d: bias shape " + shape_str(p.bias.shape()) + " does not match " +
                     std::to_string(g.c_out) + " output channels");
  g.pad_t = static_cast<std::ptrdiff_t>((g.kh - 1) / 2);
  g.pad_l = static_cast<std::ptrdiff_t>((g.kw - 1) / 2);
  return g;
}

void check_grad_shape(const char* op, const Tensor& out_like, const Tensor& grad_out) {
  if (grad_out.shape() != out_like.shape())
    throw ShapeError(std::string(op) + ": upstream gradient shape " + shape_str(grad_out.shape()) +
                     " does not match output shape " + shape_str(out_like.shape()));
}

// Row range of output positions y for which y + ky - pad lies inside [0, h).
inline void valid_range(std::ptrdiff_t k, std::ptrdiff_t pad, std::ptrdiff_t extent,
                        std::ptrdiff_t out_extent, std::ptrdiff_t& lo, std::ptrdiff_t& hi) {
  lo = std::max<std::ptrdiff_t>(0, pad - k);
  hi = std::min<std::ptrdiff_t>(out_extent, extent + pad - k);
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

void check_pool_factors(const char* op, std::size_t ph, std::size_t pw) {
  if (ph == 0 || pw == 0) throw ShapeError(std::string(op) + ": factors must be positive");
}

struct PlaneGeom {
  std::size_t n, c, h, w;
  bool batched;
};

PlaneGeom plane_geometry(const char* op, const Tensor& input) {
  PlaneGeom g{};
  g.batched = input.ndim() == 4;
  if (!g.batched && input.ndim() != 3)
    throw ShapeError(std::string(op) + ": input must be 3-D or 4-D, got " + shape_str(input.shape()));
  g.n = g.batched ? input.dim(0) : 1;
  g.c = input.dim(g.batched ? 1 : 0);
  g.h = input.dim(g.batched ? 2 : 1);
  g.w = input.dim(g.batched ? 3 : 2);
  return g;
}

struct DenseGeom {
  std::size_t n, in_dim, out_dim;
  bool batched;
};

DenseGeom dense_geometry(const Tensor& input, const LayerParams& p) {
  if (p.kind != ParamKind::dense) throw ShapeError("dense: params are not dense params");
  if (p.weights.ndim() != 2)
    throw ShapeError("dense: weights must be 2-D, got " + shape_str(p.weights.shape()));
  DenseGeom g{};
  g.out_dim = p.weights.dim(0);
  g.in_dim = p.weights.dim(1);
  if (p.bias.ndim() != 1 || p.bias.dim(0) != g.out_dim)
    throw ShapeError("dense: bias shape " + shape_str(p.bias.shape()) + " does not match " +
                     std::to_string(g.out_dim) + " outputs");
  g.batched = input.ndim() > 1;
  g.n = g.batched ? input.dim(0) : 1;
  const std::size_t flat = g.batched ? input.size() / input.dim(0) : input.size();
  if (flat != g.in_dim)
    throw ShapeError("dense: input " + shape_str(input.shape()) + " flattens to " +
                     std::to_string(flat) + " features, weights expect " + std::to_string(g.in_dim));
  return g;
}

void check_distribution(const char* name, const Tensor& t) {
  if (t.ndim() != 1)
    throw ShapeError(std::string("kld: ") + name + " must be 1-D, got " + shape_str(t.shape()));
  double sum = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!(t[i] >= 0.0))
      throw ShapeError(std::string("kld: ") + name + " has a negative entry at index " +
                       std::to_string(i));
    sum += t[i];
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw ShapeError(std::string("kld: ") + name + " sums to " + std::to_string(sum) +
                     ", expected 1 within 1e-9");
}

std::vector<double> smoothed(const Tensor& t) {
  std::vector<double> v(t.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    v[i] = t[i] + kKldEpsilon;
    sum += v[i];
  }
  for (double& x : v) x /= sum;
  return v;
}

}  // namespace

LayerParams make_conv_params(std::size_t c_out, std::size_t c_in, std::size_t kh, std::size_t kw,
                             Rng& rng) {
  LayerParams p;
  p.kind = ParamKind::conv;
  p.weights = Tensor({c_out, c_in, kh, kw});
  p.bias = Tensor({c_out});
  const double fan_in = static_cast<double>(c_in * kh * kw);
  const double fan_out = static_cast<double>(c_out * kh * kw);
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (std::size_t i = 0; i < p.weights.size(); ++i) p.weights[i] = rng.uniform(-limit, limit);
  return p;
}

LayerParams make_dense_params(std::size_t out_dim, std::size_t in_dim, Rng& rng) {
  LayerParams p;
  p.kind = ParamKind::dense;
  p.weights = Tensor({out_dim, in_dim});
  p.bias = Tensor({out_dim});
  const double limit = std::sqrt(6.0 / (static_cast<double>(in_dim) + static_cast<double>(out_dim)));
  for (std::size_t i = 0; i < p.weights.size(); ++i) p.weights[i] = rng.uniform(-limit, limit);
  return p;
}

namespace {

// Patch matrix for stride-1 same-padded convolution: row k = (ci,ky,kx),
// column m = (n,y,x); zero where the shifted index falls outside the input.
void im2col(const ConvGeom& g, const double* in, std::vector<double>& col) {
  const std::size_t plane = g.h * g.w;
  const std::size_t m = g.n * plane;
  col.assign(g.c_in * g.kh * g.kw * m, 0.0);
  const auto h = static_cast<std::ptrdiff_t>(g.h);
  const auto wd = static_cast<std::ptrdiff_t>(g.w);
  std::size_t k = 0;
  for (std::size_t ci = 0; ci < g.c_in; ++ci)
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      std::ptrdiff_t y_lo, y_hi;
      valid_range(static_cast<std::ptrdiff_t>(ky), g.pad_t, h, h, y_lo, y_hi);
      for (std::size_t kx = 0; kx < g.kw; ++kx, ++k) {
        std::ptrdiff_t x_lo, x_hi;
        valid_range(static_cast<std::ptrdiff_t>(kx), g.pad_l, wd, wd, x_lo, x_hi);
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - g.pad_l;
        double* crow = col.data() + k * m;
        for (std::size_t n = 0; n < g.n; ++n) {
          const double* iplane = in + (n * g.c_in + ci) * plane;
          double* cplane = crow + n * plane;
          for (std::ptrdiff_t y = y_lo; y < y_hi; ++y) {
            const double* irow = iplane + (y + static_cast<std::ptrdiff_t>(ky) - g.pad_t) * wd;
            double* cdst = cplane + y * wd;
            for (std::ptrdiff_t x = x_lo; x < x_hi; ++x) cdst[x] = irow[x + dx];
          }
        }
      }
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const LayerParams& p) {
  const ConvGeom g = conv_geometry(input, p);
  Tensor out(g.batched ? Shape{g.n, g.c_out, g.h, g.w} : Shape{g.c_out, g.h, g.w});
  const std::size_t plane = g.h * g.w;
  const std::size_t m = g.n * plane;
  const std::size_t kdim = g.c_in * g.kh * g.kw;
  thread_local std::vector<double> col, acc;
  im2col(g, input.data(), col);
  acc.resize(g.c_out * m);
  const double* w = p.weights.data();
  constexpr std::size_t kBlock = 1024;
  for (std::size_t i0 = 0; i0 < m; i0 += kBlock) {
    const std::size_t i1 = std::min(m, i0 + kBlock);
    for (std::size_t co = 0; co < g.c_out; ++co) {
      double* arow = acc.data() + co * m;
      const double bias = p.bias[co];
      for (std::size_t i = i0; i < i1; ++i) arow[i] = bias;
      for (std::size_t k = 0; k < kdim; ++k) {
        const double wv = w[co * kdim + k];
        const double* crow = col.data() + k * m;
        for (std::size_t i = i0; i < i1; ++i) arow[i] += wv * crow[i];
      }
    }
  }
  double* o = out.data();
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t co = 0; co < g.c_out; ++co) {
      const double* src = acc.data() + co * m + n * plane;
      double* dst = o + (n * g.c_out + co) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i];
    }
  return out;
}

void conv2d_backward(Tensor& input, LayerParams& p, const Tensor& grad_out) {
  const ConvGeom g = conv_geometry(input, p);
  Tensor out_like(g.batched ? Shape{g.n, g.c_out, g.h, g.w} : Shape{g.c_out, g.h, g.w});
  check_grad_shape("conv2d_backward", out_like, grad_out);
  input.ensure_grad();
  p.weights.ensure_grad();
  p.bias.ensure_grad();
  const std::size_t plane = g.h * g.w;
  const std::size_t m = g.n * plane;
  const std::size_t kdim = g.c_in * g.kh * g.kw;
  const double* go = grad_out.data();
  const double* w = p.weights.data();
  double* dw = p.weights.grad();
  double* db = p.bias.grad();

  thread_local std::vector<double> col, got, dcol;
  im2col(g, input.data(), col);
  // grad_out regrouped as [co][m]
  got.resize(g.c_out * m);
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t co = 0; co < g.c_out; ++co) {
      const double* src = go + (n * g.c_out + co) * plane;
      double* dst = got.data() + co * m + n * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i];
    }

  dcol.assign(kdim * m, 0.0);
  constexpr std::size_t kBlock = 1024;
  for (std::size_t i0 = 0; i0 < m; i0 += kBlock) {
    const std::size_t i1 = std::min(m, i0 + kBlock);
    for (std::size_t co = 0; co < g.c_out; ++co) {
      const double* grow = got.data() + co * m;
      double bsum = 0.0;
      for (std::size_t i = i0; i < i1; ++i) bsum += grow[i];
      db[co] += bsum;
      for (std::size_t k = 0; k < kdim; ++k) {
        const double* crow = col.data() + k * m;
        double* drow = dcol.data() + k * m;
        const double wv = w[co * kdim + k];
        double s = 0.0;
        for (std::size_t i = i0; i < i1; ++i) {
          s += grow[i] * crow[i];
          drow[i] += wv * grow[i];
        }
        dw[co * kdim + k] += s;
      }
    }
  }

  // col2im: scatter-add the patch gradients back through the padding map.
  double* din = input.grad();
  const auto h = static_cast<std::ptrdiff_t>(g.h);
  const auto wd = static_cast<std::ptrdiff_t>(g.w);
  std::size_t k = 0;
  for (std::size_t ci = 0; ci < g.c_in; ++ci)
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      std::ptrdiff_t y_lo, y_hi;
      valid_range(static_cast<std::ptrdiff_t>(ky), g.pad_t, h, h, y_lo, y_hi);
      for (std::size_t kx = 0; kx < g.kw; ++kx, ++k) {
        std::ptrdiff_t x_lo, x_hi;
        valid_range(static_cast<std::ptrdiff_t>(kx), g.pad_l, wd, wd, x_lo, x_hi);
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - g.pad_l;
        const double* drow = dcol.data() + k * m;
        for (std::size_t n = 0; n < g.n; ++n) {
          double* dplane = din + (n * g.c_in + ci) * plane;
          const double* dsrc = drow + n * plane;
          for (std::ptrdiff_t y = y_lo; y < y_hi; ++y) {
            double* ddst = dplane + (y + static_cast<std::ptrdiff_t>(ky) - g.pad_t) * wd;
            const double* srow = dsrc + y * wd;
            for (std::ptrdiff_t x = x_lo; x < x_hi; ++x) ddst[x + dx] += srow[x];
          }
        }
      }
    }
}

Tensor maxpool(const Tensor& input, std::size_t ph, std::size_t pw) {
  check_pool_factors("maxpool", ph, pw);
  const PlaneGeom g = plane_geometry("maxpool", input);
  const std::size_t ho = ceil_div(g.h, ph);
  const std::size_t wo = ceil_div(g.w, pw);
  Tensor out(g.batched ? Shape{g.n, g.c, ho, wo} : Shape{g.c, ho, wo});
  const double* in = input.data();
  double* o = out.data();
  for (std::size_t nc = 0; nc < g.n * g.c; ++nc) {
    const double* iplane = in + nc * g.h * g.w;
    double* oplane = o + nc * ho * wo;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      const std::size_t y_end = std::min(g.h, (oy + 1) * ph);
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const std::size_t x_end = std::min(g.w, (ox + 1) * pw);
        double best = iplane[oy * ph * g.w + ox * pw];
        for (std::size_t y = oy * ph; y < y_end; ++y)
          for (std::size_t x = ox * pw; x < x_end; ++x) best = std::max(best, iplane[y * g.w + x]);
        oplane[oy * wo + ox] = best;
      }
    }
  }
  return out;
}

void maxpool_backward(Tensor& input, std::size_t ph, std::size_t pw, const Tensor& grad_out) {
  check_pool_factors("maxpool_backward", ph, pw);
  const PlaneGeom g = plane_geometry("maxpool_backward", input);
  const std::size_t ho = ceil_div(g.h, ph);
  const std::size_t wo = ceil_div(g.w, pw);
  Tensor out_like(g.batched ? Shape{g.n, g.c, ho, wo} : Shape{g.c, ho, wo});
  check_grad_shape("maxpool_backward", out_like, grad_out);
  input.ensure_grad();
  const double* in = input.data();
  const double* go = grad_out.data();
  double* din = input.grad();
  for (std::size_t nc = 0; nc < g.n * g.c; ++nc) {
    const double* iplane = in + nc * g.h * g.w;
    double* dplane = din + nc * g.h * g.w;
    const double* gplane = go + nc * ho * wo;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      const std::size_t y_end = std::min(g.h, (oy + 1) * ph);
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const std::size_t x_end = std::min(g.w, (ox + 1) * pw);
        std::size_t best_idx = oy * ph * g.w + ox * pw;
        double best = iplane[best_idx];
        for (std::size_t y = oy * ph; y < y_end; ++y)
          for (std::size_t x = ox * pw; x < x_end; ++x) {
            const std::size_t idx = y * g.w + x;
            if (iplane[idx] > best) {
              best = iplane[idx];
              best_idx = idx;
            }
          }
        dplane[best_idx] += gplane[oy * wo + ox];
      }
    }
  }
}

Tensor upsample(const Tensor& input, std::size_t fh, std::size_t fw) {
  check_pool_factors("upsample", fh, fw);
  const PlaneGeom g = plane_geometry("upsample", input);
  const std::size_t ho = g.h * fh;
  const std::size_t wo = g.w * fw;
  Tensor out(g.batched ? Shape{g.n, g.c, ho, wo} : Shape{g.c, ho, wo});
  const double* in = input.data();
  double* o = out.data();
  for (std::size_t nc = 0; nc < g.n * g.c; ++nc) {
    const double* iplane = in + nc * g.h * g.w;
    double* oplane = o + nc * ho * wo;
    for (std::size_t y = 0; y < ho; ++y) {
      const double* irow = iplane + (y / fh) * g.w;
      double* orow = oplane + y * wo;
      for (std::size_t x = 0; x < wo; ++x) orow[x] = irow[x / fw];
    }
  }
  return out;
}

void upsample_backward(Tensor& input, std::size_t fh, std::size_t fw, const Tensor& grad_out) {
  check_pool_factors("upsample_backward", fh, fw);
  const PlaneGeom g = plane_geometry("upsample_backward", input);
  const std::size_t ho = g.h * fh;
  const std::size_t wo = g.w * fw;
  Tensor out_like(g.batched ? Shape{g.n, g.c, ho, wo} : Shape{g.c, ho, wo});
  check_grad_shape("upsample_backward", out_like, grad_out);
  input.ensure_grad();
  const double* go = grad_out.data();
  double* din = input.grad();
  for (std::size_t nc = 0; nc < g.n * g.c; ++nc) {
    double* dplane = din + nc * g.h * g.w;
    const double* gplane = go + nc * ho * wo;
    for (std::size_t y = 0; y < ho; ++y) {
      double* drow = dplane + (y / fh) * g.w;
      const double* grow = gplane + y * wo;
      for (std::size_t x = 0; x < wo; ++x) drow[x / fw] += grow[x];
    }
  }
}

Tensor dense(const Tensor& input, const LayerParams& p) {
  const DenseGeom g = dense_geometry(input, p);
  Tensor out(g.batched ? Shape{g.n, g.out_dim} : Shape{g.out_dim});
  const double* in = input.data();
  const double* w = p.weights.data();
  double* o = out.data();
  for (std::size_t n = 0; n < g.n; ++n) {
    const double* x = in + n * g.in_dim;
    double* y = o + n * g.out_dim;
    for (std::size_t j = 0; j < g.out_dim; ++j) {
      const double* wrow = w + j * g.in_dim;
      double acc = p.bias[j];
      for (std::size_t i = 0; i < g.in_dim; ++i) acc += wrow[i] * x[i];
      y[j] = acc;
    }
  }
  return out;
}

void dense_backward(Tensor& input, LayerParams& p, const Tensor& grad_out) {
  const DenseGeom g = dense_geometry(input, p);
  Tensor out_like(g.batched ? Shape{g.n, g.out_dim} : Shape{g.out_dim});
  check_grad_shape("dense_backward", out_like, grad_out);
  input.ensure_grad();
  p.weights.ensure_grad();
  p.bias.ensure_grad();
  const double* in = input.data();
  const double* go = grad_out.data();
  const double* w = p.weights.data();
  double* din = input.grad();
  double* dw = p.weights.grad();
  double* db = p.bias.grad();
  for (std::size_t n = 0; n < g.n; ++n) {
    const double* x = in + n * g.in_dim;
    const double* gy = go + n * g.out_dim;
    double* dx = din + n * g.in_dim;
    for (std::size_t j = 0; j < g.out_dim; ++j) {
      const double gj = gy[j];
      db[j] += gj;
      const double* wrow = w + j * g.in_dim;
      double* dwrow = dw + j * g.in_dim;
      for (std::size_t i = 0; i < g.in_dim; ++i) {
        dwrow[i] += gj * x[i];
        dx[i] += gj * wrow[i];
      }
    }
  }
}

Tensor relu(const Tensor& input) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0 ? input[i] : 0.0;
  return out;
}

void relu_backward(Tensor& input, const Tensor& grad_out) {
  check_grad_shape("relu_backward", input, grad_out);
  input.ensure_grad();
  double* din = input.grad();
  for (std::size_t i = 0; i < input.size(); ++i)
    if (input[i] > 0.0) din[i] += grad_out[i];
}

Tensor softmax(const Tensor& logits) {
  if (logits.ndim() != 1)
    throw ShapeError("softmax: input must be 1-D, got " + shape_str(logits.shape()));
  Tensor out(logits.shape());
  double m = logits[0];
  for (std::size_t i = 1; i < logits.size(); ++i) m = std::max(m, logits[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] /= sum;
  return out;
}

void softmax_backward(Tensor& logits, const Tensor& grad_out) {
  check_grad_shape("softmax_backward", logits, grad_out);
  const Tensor probs = softmax(logits);
  logits.ensure_grad();
  double dot = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) dot += probs[i] * grad_out[i];
  double* din = logits.grad();
  for (std::size_t i = 0; i < probs.size(); ++i) din[i] += probs[i] * (grad_out[i] - dot);
}

std::vector<double> softmax_vjp(const std::vector<double>& probs, const std::vector<double>& g) {
  double dot = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) dot += probs[i] * g[i];
  std::vector<double> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] * (g[i] - dot);
  return out;
}

double mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw ShapeError("mse_loss: prediction shape " + shape_str(pred.shape()) +
                     " does not match target shape " + shape_str(target.shape()));
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    sum += d * d;
  }
  return sum / static_cast<double>(pred.size());
}

void mse_backward(Tensor& pred, const Tensor& target, double upstream) {
  if (pred.shape() != target.shape())
    throw ShapeError("mse_backward: prediction shape " + shape_str(pred.shape()) +
                     " does not match target shape " + shape_str(target.shape()));
  pred.ensure_grad();
  double* dp = pred.grad();
  const double scale = 2.0 * upstream / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) dp[i] += scale * (pred[i] - target[i]);
}

double cross_entropy_loss(const Tensor& logits, int label) {
  if (logits.ndim() != 1)
    throw ShapeError("cross_entropy_loss: logits must be 1-D, got " + shape_str(logits.shape()));
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size())
    throw ShapeError("cross_entropy_loss: label " + std::to_string(label) + " outside " +
                     std::to_string(logits.size()) + " classes");
  double m = logits[0];
  for (std::size_t i = 1; i < logits.size(); ++i) m = std::max(m, logits[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += std::exp(logits[i] - m);
  return m + std::log(sum) - logits[static_cast<std::size_t>(label)];
}

void cross_entropy_backward(Tensor& logits, int label, double upstream) {
  if (logits.ndim() != 1)
    throw ShapeError("cross_entropy_backward: logits must be 1-D, got " + shape_str(logits.shape()));
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size())
    throw ShapeError("cross_entropy_backward: label " + std::to_string(label) + " outside " +
                     std::to_string(logits.size()) + " classes");
  const Tensor probs = softmax(logits);
  logits.ensure_grad();
  double* din = logits.grad();
  for (std::size_t i = 0; i < logits.size(); ++i) din[i] += upstream * probs[i];
  din[static_cast<std::size_t>(label)] -= upstream;
}

namespace {

struct BatchCeGeom {
  std::size_t n, k, counted;
};

BatchCeGeom batch_ce_geometry(const char* op, const Tensor& logits, const std::vector<int>& labels,
                              const std::vector<int>* active) {
  if (logits.ndim() != 2)
    throw ShapeError(std::string(op) + ": logits must be 2-D, got " + shape_str(logits.shape()));
  BatchCeGeom g{logits.dim(0), logits.dim(1), 0};
  if (labels.size() != g.n)
    throw ShapeError(std::string(op) + ": " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(g.n) + " rows");
  if (active) {
    if (active->empty()) throw ShapeError(std::string(op) + ": active class set is empty");
    for (int c : *active)
      if (c < 0 || static_cast<std::size_t>(c) >= g.k)
        throw ShapeError(std::string(op) + ": active class " + std::to_string(c) + " outside " +
                         std::to_string(g.k) + " columns");
  }
  for (std::size_t r = 0; r < g.n; ++r) {
    if (labels[r] == -1) continue;
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= g.k)
      throw ShapeError(std::string(op) + ": label " + std::to_string(labels[r]) + " at row " +
                       std::to_string(r) + " outside " + std::to_string(g.k) + " classes");
    if (active && std::find(active->begin(), active->end(), labels[r]) == active->end())
      throw ShapeError(std::string(op) + ": label " + std::to_string(labels[r]) + " at row " +
                       std::to_string(r) + " not in the active class set");
    ++g.counted;
  }
  if (g.counted == 0) throw DataError(std::string(op) + ": no labeled rows in batch");
  return g;
}

}  // namespace

double cross_entropy_batch(const Tensor& logits, const std::vector<int>& labels,
                           const std::vector<int>* active_classes) {
  const BatchCeGeom g = batch_ce_geometry("cross_entropy_batch", logits, labels, active_classes);
  const double* l = logits.data();
  double total = 0.0;
  for (std::size_t r = 0; r < g.n; ++r) {
    if (labels[r] == -1) continue;
    const double* row = l + r * g.k;
    auto col = [&](std::size_t j) { return active_classes ? row[(*active_classes)[j]] : row[j]; };
    const std::size_t kk = active_classes ? active_classes->size() : g.k;
    double m = col(0);
    for (std::size_t j = 1; j < kk; ++j) m = std::max(m, col(j));
    double sum = 0.0;
    for (std::size_t j = 0; j < kk; ++j) sum += std::exp(col(j) - m);
    total += m + std::log(sum) - row[labels[r]];
  }
  return total / static_cast<double>(g.counted);
}

void cross_entropy_batch_backward(Tensor& logits, const std::vector<int>& labels, double upstream,
                                  const std::vector<int>* active_classes) {
  const BatchCeGeom g =
      batch_ce_geometry("cross_entropy_batch_backward", logits, labels, active_classes);
  logits.ensure_grad();
  const double* l = logits.data();
  double* dl = logits.grad();
  const double scale = upstream / static_cast<double>(g.counted);
  for (std::size_t r = 0; r < g.n; ++r) {
    if (labels[r] == -1) continue;
    const double* row = l + r * g.k;
    double* drow = dl + r * g.k;
    auto cidx = [&](std::size_t j) {
      return active_classes ? static_cast<std::size_t>((*active_classes)[j]) : j;
    };
    const std::size_t kk = active_classes ? active_classes->size() : g.k;
    double m = row[cidx(0)];
    for (std::size_t j = 1; j < kk; ++j) m = std::max(m, row[cidx(j)]);
    double sum = 0.0;
    for (std::size_t j = 0; j < kk; ++j) sum += std::exp(row[cidx(j)] - m);
    for (std::size_t j = 0; j < kk; ++j) drow[cidx(j)] += scale * std::exp(row[cidx(j)] - m) / sum;
    drow[static_cast<std::size_t>(labels[r])] -= scale;
  }
}

Tensor gradient_reversal(const Tensor& input, double lambda) {
  if (lambda < 0.0) throw ShapeError("gradient_reversal: lambda must be non-negative");
  return input;
}

void gradient_reversal_backward(Tensor& input, double lambda, const Tensor& grad_out) {
  if (lambda < 0.0) throw ShapeError("gradient_reversal_backward: lambda must be non-negative");
  check_grad_shape("gradient_reversal_backward", input, grad_out);
  input.ensure_grad();
  double* din = input.grad();
  for (std::size_t i = 0; i < input.size(); ++i) din[i] += -lambda * grad_out[i];
}

double kld(const Tensor& p, const Tensor& q) {
  check_distribution("p", p);
  check_distribution("q", q);
  if (p.size() != q.size())
    throw ShapeError("kld: p has " + std::to_string(p.size()) + " entries, q has " +
                     std::to_string(q.size()));
  const std::vector<double> ps = smoothed(p);
  const std::vector<double> qs = smoothed(q);
  double sum = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i) sum += ps[i] * (std::log(ps[i]) - std::log(qs[i]));
  return sum;
}

void kld_backward(const Tensor& p, Tensor& q, double upstream) {
  check_distribution("p", p);
  check_distribution("q", q);
  if (p.size() != q.size())
    throw ShapeError("kld_backward: p has " + std::to_string(p.size()) + " entries, q has " +
                     std::to_string(q.size()));
  const std::vector<double> ps = smoothed(p);
  const std::vector<double> qs = smoothed(q);
  q.ensure_grad();
  double* dq = q.grad();
  for (std::size_t i = 0; i < qs.size(); ++i) dq[i] += upstream * (-ps[i] / qs[i]);
}

}  // namespace aeda
