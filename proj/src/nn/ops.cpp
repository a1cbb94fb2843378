#include "dud/nn/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace dud::nn {

namespace {

struct ConvGeometry {
  int n, h, w, cin, cout, k, stride, pad, ho, wo;
  int rows() const { return n * ho * wo; }
  int depth() const { return k * k * cin; }
  bool is_pointwise() const { return k == 1 && stride == 1; }
};

// cols[(b*ho + oy)*wo + ox][(ky*k + kx)*cin + ci], zero outside the image.
void im2col(const Tensor& x, const ConvGeometry& geo, std::vector<float>& cols) {
  cols.assign(static_cast<std::size_t>(geo.rows()) * geo.depth(), 0.0f);
  const std::size_t cin = geo.cin;
  float* dst = cols.data();
  for (int b = 0; b < geo.n; ++b) {
    const float* src = x.sample(b);
    for (int oy = 0; oy < geo.ho; ++oy) {
      for (int ox = 0; ox < geo.wo; ++ox) {
        for (int ky = 0; ky < geo.k; ++ky) {
          const int iy = oy * geo.stride + ky - geo.pad;
          for (int kx = 0; kx < geo.k; ++kx, dst += cin) {
            const int ix = ox * geo.stride + kx - geo.pad;
            if (iy < 0 || iy >= geo.h || ix < 0 || ix >= geo.w) continue;
            std::copy_n(src + (static_cast<std::size_t>(iy) * geo.w + ix) * cin, cin, dst);
          }
        }
      }
    }
  }
}

void col2im_add(const std::vector<float>& cols, const ConvGeometry& geo, Tensor& dx) {
  const std::size_t cin = geo.cin;
  const float* src = cols.data();
  for (int b = 0; b < geo.n; ++b) {
    float* dst = dx.sample(b);
    for (int oy = 0; oy < geo.ho; ++oy) {
      for (int ox = 0; ox < geo.wo; ++ox) {
        for (int ky = 0; ky < geo.k; ++ky) {
          const int iy = oy * geo.stride + ky - geo.pad;
          for (int kx = 0; kx < geo.k; ++kx, src += cin) {
            const int ix = ox * geo.stride + kx - geo.pad;
            if (iy < 0 || iy >= geo.h || ix < 0 || ix >= geo.w) continue;
            float* d = dst + (static_cast<std::size_t>(iy) * geo.w + ix) * cin;
            for (std::size_t ci = 0; ci < cin; ++ci) d[ci] += src[ci];
          }
        }
      }
    }
  }
}

Tensor scalar(double v) {
  Tensor t(1, 1, 1, 1);
  t.data[0] = static_cast<float>(v);
  return t;
}

}  // namespace

Var conv2d(Graph& g, Var x, Var weight, Var bias, int stride) {
  const Tensor& xv = g.value(x);
  const Tensor& wv = g.value(weight);
  if (wv.w != xv.c || wv.n != wv.h) {
    throw ShapeError("conv2d: weight " + wv.shape_string() + " incompatible with input " + xv.shape_string());
  }
  ConvGeometry geo{xv.n, xv.h, xv.w, xv.c, wv.c, wv.n, stride, wv.n / 2, 0, 0};
  geo.ho = (geo.h + 2 * geo.pad - geo.k) / stride + 1;
  geo.wo = (geo.w + 2 * geo.pad - geo.k) / stride + 1;

  std::vector<float> cols;
  const float* lhs = xv.data.data();
  if (!geo.is_pointwise()) {
    im2col(xv, geo, cols);
    lhs = cols.data();
  }
  Tensor out(geo.n, geo.ho, geo.wo, geo.cout);
  const auto& bv = g.value(bias).data;
  for (int r = 0; r < geo.rows(); ++r) std::copy(bv.begin(), bv.end(), out.data.begin() + static_cast<std::ptrdiff_t>(r) * geo.cout);
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, geo.rows(), geo.cout, geo.depth(), 1.0f, lhs, geo.depth(),
              wv.data.data(), geo.cout, 1.0f, out.data.data(), geo.cout);

  return g.push(std::move(out), {x, weight, bias}, [x, weight, bias, geo](Graph& gr, int self) {
    const Tensor& dy = gr.grad(self);
    if (gr.requires_grad(bias)) {
      auto& db = gr.grad(bias).data;
      std::vector<double> acc(geo.cout, 0.0);
      for (int r = 0; r < geo.rows(); ++r) {
        const float* row = dy.data.data() + static_cast<std::size_t>(r) * geo.cout;
        for (int co = 0; co < geo.cout; ++co) acc[co] += row[co];
      }
      for (int co = 0; co < geo.cout; ++co) db[co] += static_cast<float>(acc[co]);
    }
    const bool need_w = gr.requires_grad(weight);
    const bool need_x = gr.requires_grad(x);
    std::vector<float> cols;
    if (need_w) {
      const float* lhs = gr.value(x).data.data();
      if (!geo.is_pointwise()) {
        im2col(gr.value(x), geo, cols);
        lhs = cols.data();
      }
      cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, geo.depth(), geo.cout, geo.rows(), 1.0f, lhs, geo.depth(),
                  dy.data.data(), geo.cout, 1.0f, gr.grad(weight).data.data(), geo.cout);
    }
    if (need_x) {
      const auto& wv = gr.value(weight).data;
      if (geo.is_pointwise()) {
        cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, geo.rows(), geo.depth(), geo.cout, 1.0f, dy.data.data(),
                    geo.cout, wv.data(), geo.cout, 1.0f, gr.grad(x).data.data(), geo.depth());
      } else {
        cols.resize(static_cast<std::size_t>(geo.rows()) * geo.depth());
        cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, geo.rows(), geo.depth(), geo.cout, 1.0f, dy.data.data(),
                    geo.cout, wv.data(), geo.cout, 0.0f, cols.data(), geo.depth());
        col2im_add(cols, geo, gr.grad(x));
      }
    }
  });
}

Var relu(Graph& g, Var x) {
  Tensor out = g.value(x);
  for (float& v : out.data) v = v > 0.0f ? v : 0.0f;
  return g.push(std::move(out), {x}, [x](Graph& gr, int self) {
    const auto& dy = gr.grad(self).data;
    const auto& y = gr.value(self).data;
    auto& dx = gr.grad(x).data;
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (y[i] > 0.0f) dx[i] += dy[i];
    }
  });
}

Var add(Graph& g, Var a, Var b) {
  require_same_shape(g.value(a), g.value(b), "add");
  Tensor out = g.value(a);
  const auto& bv = g.value(b).data;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv[i];
  return g.push(std::move(out), {a, b}, [a, b](Graph& gr, int self) {
    const auto& dy = gr.grad(self).data;
    for (Var v : {a, b}) {
      if (!gr.requires_grad(v)) continue;
      auto& d = gr.grad(v).data;
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
    }
  });
}

Var concat(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  if (av.n != bv.n || av.h != bv.h || av.w != bv.w) {
    throw ShapeError("concat: " + av.shape_string() + " vs " + bv.shape_string());
  }
  Tensor out(av.n, av.h, av.w, av.c + bv.c);
  const std::size_t ca = av.c;
  const std::size_t cb = bv.c;
  const std::size_t pixels = av.pixels();
  for (std::size_t p = 0; p < pixels; ++p) {
    std::copy_n(av.data.data() + p * ca, ca, out.data.data() + p * (ca + cb));
    std::copy_n(bv.data.data() + p * cb, cb, out.data.data() + p * (ca + cb) + ca);
  }
  return g.push(std::move(out), {a, b}, [a, b, ca, cb, pixels](Graph& gr, int self) {
    const float* dy = gr.grad(self).data.data();
    if (gr.requires_grad(a)) {
      float* da = gr.grad(a).data.data();
      for (std::size_t p = 0; p < pixels; ++p) {
        for (std::size_t j = 0; j < ca; ++j) da[p * ca + j] += dy[p * (ca + cb) + j];
      }
    }
    if (gr.requires_grad(b)) {
      float* db = gr.grad(b).data.data();
      for (std::size_t p = 0; p < pixels; ++p) {
        for (std::size_t j = 0; j < cb; ++j) db[p * cb + j] += dy[p * (ca + cb) + ca + j];
      }
    }
  });
}

Var slice_channels(Graph& g, Var x, int begin, int end) {
  const Tensor& xv = g.value(x);
  if (begin < 0 || end > xv.c || begin >= end) throw ShapeError("slice_channels: bad range");
  Tensor out(xv.n, xv.h, xv.w, end - begin);
  const std::size_t len = end - begin;
  const std::size_t stride = xv.c;
  const std::size_t pixels = xv.pixels();
  for (std::size_t p = 0; p < pixels; ++p) std::copy_n(xv.data.data() + p * stride + begin, len, out.data.data() + p * len);
  return g.push(std::move(out), {x}, [x, len, stride, pixels, begin](Graph& gr, int self) {
    const float* dy = gr.grad(self).data.data();
    float* dx = gr.grad(x).data.data();
    for (std::size_t p = 0; p < pixels; ++p) {
      for (std::size_t j = 0; j < len; ++j) dx[p * stride + begin + j] += dy[p * len + j];
    }
  });
}

Var upsample2x(Graph& g, Var x) {
  const Tensor& xv = g.value(x);
  Tensor out(xv.n, xv.h * 2, xv.w * 2, xv.c);
  const std::size_t c = xv.c;
  for (int b = 0; b < xv.n; ++b) {
    const float* src = xv.sample(b);
    float* dst = out.sample(b);
    for (int y = 0; y < out.h; ++y) {
      for (int xx = 0; xx < out.w; ++xx) {
        std::copy_n(src + (static_cast<std::size_t>(y / 2) * xv.w + xx / 2) * c, c,
                    dst + (static_cast<std::size_t>(y) * out.w + xx) * c);
      }
    }
  }
  return g.push(std::move(out), {x}, [x, c](Graph& gr, int self) {
    const Tensor& dy = gr.grad(self);
    Tensor& dx = gr.grad(x);
    for (int b = 0; b < dy.n; ++b) {
      const float* src = dy.sample(b);
      float* dst = dx.sample(b);
      for (int y = 0; y < dy.h; ++y) {
        for (int xx = 0; xx < dy.w; ++xx) {
          const float* s = src + (static_cast<std::size_t>(y) * dy.w + xx) * c;
          float* d = dst + (static_cast<std::size_t>(y / 2) * dx.w + xx / 2) * c;
          for (std::size_t j = 0; j < c; ++j) d[j] += s[j];
        }
      }
    }
  });
}

Var clamp(Graph& g, Var x, float lo, float hi) {
  Tensor out = g.value(x);
  for (float& v : out.data) v = std::clamp(v, lo, hi);
  return g.push(std::move(out), {x}, [x, lo, hi](Graph& gr, int self) {
    const auto& dy = gr.grad(self).data;
    const auto& xv = gr.value(x).data;
    auto& dx = gr.grad(x).data;
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (xv[i] >= lo && xv[i] <= hi) dx[i] += dy[i];
    }
  });
}

Var reparameterize(Graph& g, Var mu, Var logvar, const Tensor& eps) {
  const Tensor& m = g.value(mu);
  const Tensor& lv = g.value(logvar);
  require_same_shape(m, lv, "reparameterize");
  require_same_shape(m, eps, "reparameterize eps");
  Tensor out = m;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += std::exp(0.5f * lv.data[i]) * eps.data[i];
  return g.push(std::move(out), {mu, logvar}, [mu, logvar, eps](Graph& gr, int self) {
    const auto& dy = gr.grad(self).data;
    if (gr.requires_grad(mu)) {
      auto& dm = gr.grad(mu).data;
      for (std::size_t i = 0; i < dm.size(); ++i) dm[i] += dy[i];
    }
    if (gr.requires_grad(logvar)) {
      const auto& lv = gr.value(logvar).data;
      auto& dl = gr.grad(logvar).data;
      for (std::size_t i = 0; i < dl.size(); ++i) dl[i] += dy[i] * 0.5f * std::exp(0.5f * lv[i]) * eps.data[i];
    }
  });
}

Var scale(Graph& g, Var x, float factor) {
  Tensor out = g.value(x);
  for (float& v : out.data) v *= factor;
  return g.push(std::move(out), {x}, [x, factor](Graph& gr, int self) {
    const auto& dy = gr.grad(self).data;
    auto& dx = gr.grad(x).data;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += factor * dy[i];
  });
}

Var gaussian_nll_mean(Graph& g, Var pred, const Tensor& target, double sigma) {
  const Tensor& p = g.value(pred);
  require_same_shape(p, target, "gaussian_nll_mean");
  const double var = sigma * sigma;
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    const double d = static_cast<double>(target.data[i]) - p.data[i];
    sum_sq += d * d;
  }
  const double count = static_cast<double>(p.data.size());
  const double value = 0.5 * std::log(2.0 * std::numbers::pi * var) + sum_sq / (2.0 * var * count);
  return g.push(scalar(value), {pred}, [pred, target, var, count](Graph& gr, int self) {
    const double up = gr.grad(self).data[0];
    const auto& pv = gr.value(pred).data;
    auto& dp = gr.grad(pred).data;
    const double k = up / (var * count);
    for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += static_cast<float>(k * (pv[i] - target.data[i]));
  });
}

Var kl_standard_normal(Graph& g, Var mu, Var logvar, double normalizer) {
  const Tensor& m = g.value(mu);
  const Tensor& lv = g.value(logvar);
  require_same_shape(m, lv, "kl_standard_normal");
  double sum = 0.0;
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    const double mi = m.data[i];
    const double li = lv.data[i];
    sum += 0.5 * (mi * mi + std::exp(li) - 1.0 - li);
  }
  return g.push(scalar(sum / normalizer), {mu, logvar}, [mu, logvar, normalizer](Graph& gr, int self) {
    const double k = gr.grad(self).data[0] / normalizer;
    if (gr.requires_grad(mu)) {
      const auto& mv = gr.value(mu).data;
      auto& dm = gr.grad(mu).data;
      for (std::size_t i = 0; i < dm.size(); ++i) dm[i] += static_cast<float>(k * mv[i]);
    }
    if (gr.requires_grad(logvar)) {
      const auto& lv = gr.value(logvar).data;
      auto& dl = gr.grad(logvar).data;
      for (std::size_t i = 0; i < dl.size(); ++i) dl[i] += static_cast<float>(k * 0.5 * (std::exp(static_cast<double>(lv[i])) - 1.0));
    }
  });
}

Var l1_mean(Graph& g, Var pred, const Tensor& target) {
  const Tensor& p = g.value(pred);
  require_same_shape(p, target, "l1_mean");
  double sum = 0.0;
  for (std::size_t i = 0; i < p.data.size(); ++i) sum += std::abs(static_cast<double>(p.data[i]) - target.data[i]);
  const double count = static_cast<double>(p.data.size());
  return g.push(scalar(sum / count), {pred}, [pred, target, count](Graph& gr, int self) {
    const double k = gr.grad(self).data[0] / count;
    const auto& pv = gr.value(pred).data;
    auto& dp = gr.grad(pred).data;
    for (std::size_t i = 0; i < dp.size(); ++i) {
      const float d = pv[i] - target.data[i];
      if (d > 0.0f) {
        dp[i] += static_cast<float>(k);
      } else if (d < 0.0f) {
        dp[i] -= static_cast<float>(k);
      }
    }
  });
}

Var l2_mean(Graph& g, Var pred, const Tensor& target) {
  const Tensor& p = g.value(pred);
  require_same_shape(p, target, "l2_mean");
  double sum = 0.0;
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    const double d = static_cast<double>(p.data[i]) - target.data[i];
    sum += d * d;
  }
  const double count = static_cast<double>(p.data.size());
  return g.push(scalar(sum / count), {pred}, [pred, target, count](Graph& gr, int self) {
    const double k = 2.0 * gr.grad(self).data[0] / count;
    const auto& pv = gr.value(pred).data;
    auto& dp = gr.grad(pred).data;
    for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += static_cast<float>(k * (pv[i] - target.data[i]));
  });
}

}  // namespace dud::nn
