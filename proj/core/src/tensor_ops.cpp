#include "fednnu/tensor_ops.hpp"

#include <cblas.h>

#include <cstring>

#include "fednnu/error.hpp"

namespace fednnu {
namespace {

void require_rank4(const Tensor& t, const char* what) {
  if (t.rank() != 4) {
    throw ShapeError(std::string(what) + " expects a rank-4 NCHW tensor, got " + shape_to_string(t.dims()));
  }
}

// cols[(c*9 + ky*3 + kx), y*W + x] = in[c, y+ky-1, x+kx-1], zero outside.
void im2col(const double* in, std::size_t channels, std::size_t h, std::size_t w, double* cols) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    const double* plane = in + c * hw;
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        double* row = cols + ((c * 9) + ky * 3 + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          double* dst = row + y * w;
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
            std::memset(dst, 0, w * sizeof(double));
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(sy) * w;
          // x + kx - 1 in [0, w)
          const std::size_t x_begin = kx == 0 ? 1 : 0;
          const std::size_t x_end = kx == 2 ? w - 1 : w;
          if (x_begin > 0) dst[0] = 0.0;
          if (x_end < w) dst[w - 1] = 0.0;
          for (std::size_t x = x_begin; x < x_end; ++x) dst[x] = src[x + kx - 1];
        }
      }
    }
  }
}

void col2im_add(const double* cols, std::size_t channels, std::size_t h, std::size_t w, double* out) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    double* plane = out + c * hw;
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const double* row = cols + ((c * 9) + ky * 3 + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          const double* src = row + y * w;
          double* dst = plane + static_cast<std::size_t>(sy) * w;
          const std::size_t x_begin = kx == 0 ? 1 : 0;
          const std::size_t x_end = kx == 2 ? w - 1 : w;
          for (std::size_t x = x_begin; x < x_end; ++x) dst[x + kx - 1] += src[x];
        }
      }
    }
  }
}

void check_conv_shapes(const Tensor& input, const Tensor& kernel) {
  require_rank4(input, "conv2d");
  if (kernel.rank() != 4 || kernel.dim(2) != 3 || kernel.dim(3) != 3) {
    throw ShapeError("conv2d kernel must be [F,C,3,3], got " + shape_to_string(kernel.dims()));
  }
  if (kernel.dim(1) != input.dim(1)) {
    throw ShapeError("conv2d channel mismatch: input " + shape_to_string(input.dims()) + " vs kernel " +
                     shape_to_string(kernel.dims()));
  }
}

}  // namespace

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.dims() == b.dims() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
  check_conv_shapes(input, kernel);
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t f = kernel.dim(0);
  if (bias.rank() != 1 || bias.dim(0) != f) {
    throw ShapeError("conv2d bias must be [" + std::to_string(f) + "], got " + shape_to_string(bias.dims()));
  }
  const std::size_t hw = h * w, k = c * 9;
  Tensor out({n, f, h, w});
  std::vector<double> cols(k * hw);
  for (std::size_t s = 0; s < n; ++s) {
    im2col(input.data() + s * c * hw, c, h, w, cols.data());
    double* dst = out.data() + s * f * hw;
    for (std::size_t o = 0; o < f; ++o) std::fill(dst + o * hw, dst + (o + 1) * hw, bias[o]);
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(f), static_cast<int>(hw),
                static_cast<int>(k), 1.0, kernel.data(), static_cast<int>(k), cols.data(), static_cast<int>(hw),
                1.0, dst, static_cast<int>(hw));
  }
  return out;
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_out) {
  check_conv_shapes(input, kernel);
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t f = kernel.dim(0);
  if (grad_out.dims() != Shape{n, f, h, w}) {
    throw ShapeError("conv2d_backward grad shape " + shape_to_string(grad_out.dims()));
  }
  const std::size_t hw = h * w, k = c * 9;
  Conv2dGrads g{Tensor(input.dims()), Tensor(kernel.dims()), Tensor({f})};
  std::vector<double> cols(k * hw);
  std::vector<double> dcols(k * hw);
  for (std::size_t s = 0; s < n; ++s) {
    const double* dout = grad_out.data() + s * f * hw;
    im2col(input.data() + s * c * hw, c, h, w, cols.data());
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(f), static_cast<int>(k),
                static_cast<int>(hw), 1.0, dout, static_cast<int>(hw), cols.data(), static_cast<int>(hw), 1.0,
                g.kernel.data(), static_cast<int>(k));
    cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(k), static_cast<int>(hw),
                static_cast<int>(f), 1.0, kernel.data(), static_cast<int>(k), dout, static_cast<int>(hw), 0.0,
                dcols.data(), static_cast<int>(hw));
    col2im_add(dcols.data(), c, h, w, g.input.data() + s * c * hw);
    for (std::size_t o = 0; o < f; ++o) {
      double acc = 0.0;
      for (std::size_t i = 0; i < hw; ++i) acc += dout[o * hw + i];
      g.bias[o] += acc;
    }
  }
  return g;
}

Tensor downsample2x(const Tensor& input) {
  require_rank4(input, "downsample2x");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("downsample2x needs even spatial dims, got " + shape_to_string(input.dims()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out({n, c, oh, ow});
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = input.data() + p * h * w;
    double* dst = out.data() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        const double* a = src + (2 * y) * w + 2 * x;
        double m = a[0];
        if (a[1] > m) m = a[1];
        if (a[w] > m) m = a[w];
        if (a[w + 1] > m) m = a[w + 1];
        dst[y * ow + x] = m;
      }
    }
  }
  return out;
}

Tensor downsample2x_backward(const Tensor& input, const Tensor& grad_out) {
  require_rank4(input, "downsample2x_backward");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  if (grad_out.dims() != Shape{n, c, oh, ow}) {
    throw ShapeError("downsample2x_backward grad shape " + shape_to_string(grad_out.dims()));
  }
  Tensor g(input.dims());
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = input.data() + p * h * w;
    double* dst = g.data() + p * h * w;
    const double* go = grad_out.data() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        const std::size_t base = (2 * y) * w + 2 * x;
        const std::size_t cand[4] = {base, base + 1, base + w, base + w + 1};
        std::size_t best = cand[0];
        for (std::size_t i = 1; i < 4; ++i) {
          if (src[cand[i]] > src[best]) best = cand[i];
        }
        dst[best] += go[y * ow + x];
      }
    }
  }
  return g;
}

Tensor upsample2x(const Tensor& input) {
  require_rank4(input, "upsample2x");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = h * 2, ow = w * 2;
  Tensor out({n, c, oh, ow});
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = input.data() + p * h * w;
    double* dst = out.data() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      const double* row = src + (y / 2) * w;
      for (std::size_t x = 0; x < ow; ++x) dst[y * ow + x] = row[x / 2];
    }
  }
  return out;
}

Tensor upsample2x_backward(const Tensor& grad_out) {
  require_rank4(grad_out, "upsample2x_backward");
  const std::size_t n = grad_out.dim(0), c = grad_out.dim(1), oh = grad_out.dim(2), ow = grad_out.dim(3);
  if (oh % 2 != 0 || ow % 2 != 0) {
    throw ShapeError("upsample2x_backward needs even spatial dims, got " + shape_to_string(grad_out.dims()));
  }
  const std::size_t h = oh / 2, w = ow / 2;
  Tensor g({n, c, h, w});
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = grad_out.data() + p * oh * ow;
    double* dst = g.data() + p * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double* a = src + (2 * y) * ow + 2 * x;
        dst[y * w + x] = ((a[0] + a[1]) + a[ow]) + a[ow + 1];
      }
    }
  }
  return g;
}

Tensor leaky_relu(const Tensor& input) {
  Tensor out(input.dims());
  for (std::size_t i = 0; i < input.size(); ++i) {
    const double v = input[i];
    out[i] = v > 0.0 ? v : kLeakySlope * v;
  }
  return out;
}

Tensor leaky_relu_backward(const Tensor& input, const Tensor& grad_out) {
  if (input.dims() != grad_out.dims()) throw ShapeError("leaky_relu_backward shape mismatch");
  Tensor g(input.dims());
  for (std::size_t i = 0; i < input.size(); ++i) {
    g[i] = input[i] > 0.0 ? grad_out[i] : kLeakySlope * grad_out[i];
  }
  return g;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank4(a, "concat_channels");
  require_rank4(b, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("concat_channels mismatch: " + shape_to_string(a.dims()) + " vs " + shape_to_string(b.dims()));
  }
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  Tensor out({n, ca + cb, a.dim(2), a.dim(3)});
  for (std::size_t s = 0; s < n; ++s) {
    std::copy_n(a.data() + s * ca * hw, ca * hw, out.data() + s * (ca + cb) * hw);
    std::copy_n(b.data() + s * cb * hw, cb * hw, out.data() + s * (ca + cb) * hw + ca * hw);
  }
  return out;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& grad, std::size_t channels_a) {
  require_rank4(grad, "split_channels");
  const std::size_t n = grad.dim(0), c = grad.dim(1), hw = grad.dim(2) * grad.dim(3);
  if (channels_a == 0 || channels_a >= c) throw ShapeError("split_channels: bad split point");
  const std::size_t cb = c - channels_a;
  Tensor a({n, channels_a, grad.dim(2), grad.dim(3)});
  Tensor b({n, cb, grad.dim(2), grad.dim(3)});
  for (std::size_t s = 0; s < n; ++s) {
    std::copy_n(grad.data() + s * c * hw, channels_a * hw, a.data() + s * channels_a * hw);
    std::copy_n(grad.data() + s * c * hw + channels_a * hw, cb * hw, b.data() + s * cb * hw);
  }
  return {std::move(a), std::move(b)};
}

}  // namespace fednnu
