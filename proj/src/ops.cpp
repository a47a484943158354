#include "drnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "gemm.hpp"

namespace drnet {

namespace {

void require_same_shape(const char* op, const Var& a, const Var& b) {
  DRNET_CHECK(a.shape() == b.shape(), op, ": shape mismatch ", shape_str(a.shape()), " vs ",
              shape_str(b.shape()));
}

void require_rank(const char* op, const Var& a, std::size_t rank) {
  DRNET_CHECK(a.value().rank() == rank, op, ": expected rank ", rank, ", got shape ",
              shape_str(a.shape()));
}

struct ConvGeometry {
  int n, ci, h, w, co, kh, kw, ho, wo;
};

void im2col(const double* in, const ConvGeometry& g, const Conv2dParams& p, double* cols) {
  const int plane = g.ho * g.wo;
  for (int c = 0; c < g.ci; ++c) {
    const double* src = in + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        double* row = cols + (static_cast<std::size_t>(c * g.kh + ki) * g.kw + kj) * plane;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * p.stride - p.padding + ki * p.dilation;
          double* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * p.stride - p.padding + kj * p.dilation;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[iy * g.w + ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, const ConvGeometry& g, const Conv2dParams& p, double* out) {
  const int plane = g.ho * g.wo;
  for (int c = 0; c < g.ci; ++c) {
    double* dst = out + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        const double* row = cols + (static_cast<std::size_t>(c * g.kh + ki) * g.kw + kj) * plane;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * p.stride - p.padding + ki * p.dilation;
          if (iy < 0 || iy >= g.h) continue;
          const double* src = row + oy * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * p.stride - p.padding + kj * p.dilation;
            if (ix >= 0 && ix < g.w) dst[iy * g.w + ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

int conv_output_extent(int input, int kernel, const Conv2dParams& p) {
  return (input + 2 * p.padding - p.dilation * (kernel - 1) - 1) / p.stride + 1;
}

Var conv2d(Tape& tape, const Var& input, const Var& weight, const Var& bias,
           const Conv2dParams& params) {
  require_rank("conv2d input", input, 4);
  require_rank("conv2d weight", weight, 4);
  DRNET_CHECK(params.stride >= 1 && params.dilation >= 1 && params.padding >= 0,
              "conv2d: invalid stride/padding/dilation");
  const auto& is = input.shape();
  const auto& ws = weight.shape();
  ConvGeometry g{static_cast<int>(is[0]), static_cast<int>(is[1]), static_cast<int>(is[2]),
                 static_cast<int>(is[3]), static_cast<int>(ws[0]), static_cast<int>(ws[2]),
                 static_cast<int>(ws[3]), 0, 0};
  DRNET_CHECK(ws[1] == is[1], "conv2d: weight expects ", ws[1], " input channels, input has ",
              is[1]);
  if (bias.defined()) {
    DRNET_CHECK(bias.value().numel() == ws[0], "conv2d: bias has ", bias.value().numel(),
                " entries for ", ws[0], " output channels");
  }
  g.ho = conv_output_extent(g.h, g.kh, params);
  g.wo = conv_output_extent(g.w, g.kw, params);
  DRNET_CHECK(g.ho > 0 && g.wo > 0, "conv2d: empty output for input ", shape_str(is),
              " and kernel ", shape_str(ws));
  DRNET_CHECK(input.value().all_finite(), "conv2d: non-finite input");

  const std::size_t ck = static_cast<std::size_t>(g.ci) * g.kh * g.kw;
  const std::size_t plane = static_cast<std::size_t>(g.ho) * g.wo;
  const bool pointwise = g.kh == 1 && g.kw == 1 && params.stride == 1 && params.padding == 0;

  Tensor out({is[0], ws[0], static_cast<std::size_t>(g.ho), static_cast<std::size_t>(g.wo)});
  const bool track = tape.tracks(input, weight, bias.defined() ? bias : weight);
  auto saved = std::make_shared<std::vector<std::vector<double>>>();
  if (track && !pointwise) saved->resize(g.n);

  std::vector<double> scratch;
  const double* b = bias.defined() ? bias.value().data() : nullptr;
  for (int n = 0; n < g.n; ++n) {
    const double* in_n = input.value().data() + static_cast<std::size_t>(n) * g.ci * g.h * g.w;
    const double* cols = in_n;
    if (!pointwise) {
      std::vector<double>& buf = track ? (*saved)[n] : scratch;
      buf.resize(ck * plane);
      im2col(in_n, g, params, buf.data());
      cols = buf.data();
    }
    detail::gemm_forward(weight.value().data(), cols, b, out.data() + n * g.co * plane, g.co,
                         static_cast<Eigen::Index>(ck), static_cast<Eigen::Index>(plane));
  }

  Var result(std::move(out), track);
  if (track) {
    tape.push([input, weight, bias, result, saved, g, params, ck, plane, pointwise]() mutable {
      if (!result.has_grad()) return;
      const Tensor& dy = result.grad();
      double* dw = weight.requires_grad() ? weight.grad_buffer().data() : nullptr;
      double* db = bias.defined() && bias.requires_grad() ? bias.grad_buffer().data() : nullptr;
      const bool need_input = input.requires_grad();
      std::vector<double> dcols(need_input ? ck * plane : 0);
      for (int n = 0; n < g.n; ++n) {
        const double* cols =
            pointwise ? input.value().data() + static_cast<std::size_t>(n) * g.ci * g.h * g.w
                      : (*saved)[n].data();
        double* dc = nullptr;
        if (need_input) dc = pointwise ? nullptr : dcols.data();
        detail::gemm_backward(weight.value().data(), cols, dy.data() + n * g.co * plane, dw, db,
                              dc, g.co, static_cast<Eigen::Index>(ck),
                              static_cast<Eigen::Index>(plane));
        if (need_input) {
          double* dx = input.grad_buffer().data() + static_cast<std::size_t>(n) * g.ci * g.h * g.w;
          if (pointwise) {
            detail::RowMap dxm(dx, g.ci, static_cast<Eigen::Index>(plane));
            dxm.noalias() += detail::ConstRowMap(weight.value().data(), g.co, g.ci).transpose() *
                             detail::ConstRowMap(dy.data() + n * g.co * plane, g.co,
                                                 static_cast<Eigen::Index>(plane));
          } else {
            col2im(dcols.data(), g, params, dx);
          }
        }
      }
    });
  }
  return result;
}

namespace {

template <typename Fwd, typename Bwd>
Var unary(Tape& tape, const Var& a, Fwd fwd, Bwd bwd) {
  Tensor out(a.shape());
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = fwd(x[i]);
  const bool track = tape.tracks(a);
  Var result(std::move(out), track);
  if (track) {
    tape.push([a, result, bwd]() mutable {
      if (!result.has_grad()) return;
      const Tensor& x = a.value();
      const Tensor& y = result.value();
      const Tensor& g = result.grad();
      Tensor& dx = a.grad_buffer();
      for (std::size_t i = 0; i < x.numel(); ++i) dx[i] += g[i] * bwd(x[i], y[i]);
    });
  }
  return result;
}

}  // namespace

Var add(Tape& tape, const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
  const bool track = tape.tracks(a, b);
  Var result(std::move(out), track);
  if (track) {
    tape.push([a, b, result]() mutable {
      if (!result.has_grad()) return;
      const Tensor& g = result.grad();
      if (a.requires_grad()) {
        Tensor& da = a.grad_buffer();
        for (std::size_t i = 0; i < g.numel(); ++i) da[i] += g[i];
      }
      if (b.requires_grad()) {
        Tensor& db = b.grad_buffer();
        for (std::size_t i = 0; i < g.numel(); ++i) db[i] += g[i];
      }
    });
  }
  return result;
}

Var sub(Tape& tape, const Var& a, const Var& b) {
  require_same_shape("sub", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
  const bool track = tape.tracks(a, b);
  Var result(std::move(out), track);
  if (track) {
    tape.push([a, b, result]() mutable {
      if (!result.has_grad()) return;
      const Tensor& g = result.grad();
      if (a.requires_grad()) {
        Tensor& da = a.grad_buffer();
        for (std::size_t i = 0; i < g.numel(); ++i) da[i] += g[i];
      }
      if (b.requires_grad()) {
        Tensor& db = b.grad_buffer();
        for (std::size_t i = 0; i < g.numel(); ++i) db[i] -= g[i];
      }
    });
  }
  return result;
}

Var mul(Tape& tape, const Var& a, const Var& b) {
  require_same_shape("mul", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  const bool track = tape.tracks(a, b);
  Var result(std::move(out), track);
  if (track) {
    tape.push([a, b, result]() mutable {
      if (!result.has_grad()) return;
      const Tensor& g = result.grad();
      if (a.requires_grad()) {
        Tensor& da = a.grad_buffer();
        for (std::size_t i = 0; i < g.numel(); ++i) da[i] += g[i] * b.value()[i];
      }
      if (b.requires_grad()) {
        Tensor& db = b.grad_buffer();
        for (std::size_t i = 0; i < g.numel(); ++i) db[i] += g[i] * a.value()[i];
      }
    });
  }
  return result;
}

Var add(Tape& tape, const Var& a, double s) {
  return unary(
      tape, a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var mul(Tape& tape, const Var& a, double s) {
  return unary(
      tape, a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Var relu(Tape& tape, const Var& a) {
  return unary(
      tape, a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var smooth_l1(Tape& tape, const Var& d) {
  return unary(
      tape, d,
      [](double x) {
        const double ax = std::abs(x);
        return ax < 1.0 ? 0.5 * x * x : ax - 0.5;
      },
      [](double x, double) {
        if (std::abs(x) < 1.0) return x;
        return x > 0.0 ? 1.0 : -1.0;
      });
}

Var upsample_nearest2x(Tape& tape, const Var& a) {
  require_rank("upsample_nearest2x", a, 4);
  const auto& s = a.shape();
  const std::size_t n = s[0], c = s[1], h = s[2], w = s[3];
  Tensor out({n, c, 2 * h, 2 * w});
  const Tensor& x = a.value();
  for (std::size_t p = 0; p < n * c; ++p) {
    for (std::size_t y = 0; y < 2 * h; ++y) {
      for (std::size_t xx = 0; xx < 2 * w; ++xx) {
        out[(p * 2 * h + y) * 2 * w + xx] = x[(p * h + y / 2) * w + xx / 2];
      }
    }
  }
  const bool track = tape.tracks(a);
  Var result(std::move(out), track);
  if (track) {
    tape.push([a, result, n, c, h, w]() mutable {
      if (!result.has_grad()) return;
      const Tensor& g = result.grad();
      Tensor& dx = a.grad_buffer();
      for (std::size_t p = 0; p < n * c; ++p) {
        for (std::size_t y = 0; y < 2 * h; ++y) {
          for (std::size_t xx = 0; xx < 2 * w; ++xx) {
            dx[(p * h + y / 2) * w + xx / 2] += g[(p * 2 * h + y) * 2 * w + xx];
          }
        }
      }
    });
  }
  return result;
}

Var softmax_channel(Tape& tape, const Var& a) {
  const auto& s = a.shape();
  DRNET_CHECK(s.size() == 2 || s.size() == 4, "softmax_channel: expected rank 2 or 4, got ",
              shape_str(s));
  const std::size_t outer = s[0];
  const std::size_t channels = s[1];
  const std::size_t inner = s.size() == 4 ? s[2] * s[3] : 1;
  Tensor out(s);
  const Tensor& x = a.value();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * channels * inner + i;
      double m = x[base];
      for (std::size_t c = 1; c < channels; ++c) m = std::max(m, x[base + c * inner]);
      double z = 0.0;
      for (std::size_t c = 0; c < channels; ++c) {
        const double e = std::exp(x[base + c * inner] - m);
        out[base + c * inner] = e;
        z += e;
      }
      for (std::size_t c = 0; c < channels; ++c) out[base + c * inner] /= z;
    }
  }
  const bool track = tape.tracks(a);
  Var result(std::move(out), track);
  if (track) {
    tape.push([a, result, outer, channels, inner]() mutable {
      if (!result.has_grad()) return;
      const Tensor& y = result.value();
      const Tensor& g = result.grad();
      Tensor& dx = a.grad_buffer();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
          const std::size_t base = o * channels * inner + i;
          double dot = 0.0;
          for (std::size_t c = 0; c < channels; ++c) dot += g[base + c * inner] * y[base + c * inner];
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t k = base + c * inner;
            dx[k] += y[k] * (g[k] - dot);
          }
        }
      }
    });
  }
  return result;
}

Var cross_entropy(Tape& tape, const Var& logits, std::span<const int> classes) {
  require_rank("cross_entropy", logits, 2);
  const std::size_t m = logits.shape()[0];
  const std::size_t k = logits.shape()[1];
  DRNET_CHECK(classes.size() == m, "cross_entropy: ", classes.size(), " labels for ", m, " rows");
  const Tensor& x = logits.value();
  Tensor out({m});
  auto probs = std::make_shared<std::vector<double>>(m * k);
  for (std::size_t r = 0; r < m; ++r) {
    DRNET_CHECK(classes[r] >= 0 && static_cast<std::size_t>(classes[r]) < k,
                "cross_entropy: class ", classes[r], " out of range for ", k, " logits");
    const double* row = x.data() + r * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(row[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < k; ++c) (*probs)[r * k + c] = std::exp(row[c] - lse);
    out[r] = lse - row[classes[r]];
  }
  const bool track = tape.tracks(logits);
  Var result(std::move(out), track);
  if (track) {
    std::vector<int> labels(classes.begin(), classes.end());
    tape.push([logits, result, probs, labels, m, k]() mutable {
      if (!result.has_grad()) return;
      const Tensor& g = result.grad();
      Tensor& dx = logits.grad_buffer();
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < k; ++c) {
          const double onehot = static_cast<int>(c) == labels[r] ? 1.0 : 0.0;
          dx[r * k + c] += g[r] * ((*probs)[r * k + c] - onehot);
        }
      }
    });
  }
  return result;
}

Var sum(Tape& tape, const Var& a) {
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  const bool track = tape.tracks(a);
  Var result(Tensor::scalar(total), track);
  if (track) {
    tape.push([a, result]() mutable {
      if (!result.has_grad()) return;
      const double g = result.grad()[0];
      Tensor& dx = a.grad_buffer();
      for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += g;
    });
  }
  return result;
}

namespace {

struct AxisSplit {
  std::size_t outer = 1, mid = 0, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.mid = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

Var concat(Tape& tape, std::span<const Var> parts, std::size_t axis) {
  DRNET_CHECK(!parts.empty(), "concat: no inputs");
  Shape shape = parts[0].shape();
  DRNET_CHECK(axis < shape.size(), "concat: axis ", axis, " out of range");
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    DRNET_CHECK(s.size() == shape.size(), "concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      DRNET_CHECK(i == axis || s[i] == shape[i], "concat: shape mismatch ", shape_str(s), " vs ",
                  shape_str(shape));
    }
    total += s[axis];
  }
  shape[axis] = total;
  Tensor out(shape);
  const AxisSplit dst = split_at(shape, axis);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const AxisSplit src = split_at(p.shape(), axis);
    for (std::size_t o = 0; o < src.outer; ++o) {
      const double* from = p.value().data() + o * src.mid * src.inner;
      std::copy(from, from + src.mid * src.inner,
                out.data() + (o * dst.mid + offset) * dst.inner);
    }
    offsets.push_back(offset);
    offset += src.mid;
  }
  bool track = false;
  for (const Var& p : parts) track = track || tape.tracks(p);
  Var result(std::move(out), track);
  if (track) {
    std::vector<Var> inputs(parts.begin(), parts.end());
    tape.push([inputs, offsets, result, dst, axis]() mutable {
      if (!result.has_grad()) return;
      const Tensor& g = result.grad();
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        if (!inputs[k].requires_grad()) continue;
        const AxisSplit src = split_at(inputs[k].shape(), axis);
        Tensor& dx = inputs[k].grad_buffer();
        for (std::size_t o = 0; o < src.outer; ++o) {
          const double* from = g.data() + (o * dst.mid + offsets[k]) * dst.inner;
          double* to = dx.data() + o * src.mid * src.inner;
          for (std::size_t i = 0; i < src.mid * src.inner; ++i) to[i] += from[i];
        }
      }
    });
  }
  return result;
}

Var slice(Tape& tape, const Var& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  DRNET_CHECK(axis < s.size() && begin < end && end <= s[axis], "slice: invalid range [", begin,
              ",", end, ") on axis ", axis, " of ", shape_str(s));
  Shape shape = s;
  shape[axis] = end - begin;
  const AxisSplit src = split_at(s, axis);
  const std::size_t len = (end - begin) * src.inner;
  Tensor out(shape);
  for (std::size_t o = 0; o < src.outer; ++o) {
    const double* from = a.value().data() + (o * src.mid + begin) * src.inner;
    std::copy(from, from + len, out.data() + o * len);
  }
  const bool track = tape.tracks(a);
  Var result(std::move(out), track);
  if (track) {
    tape.push([a, result, src, begin, len]() mutable {
      if (!result.has_grad()) return;
      const Tensor& g = result.grad();
      Tensor& dx = a.grad_buffer();
      for (std::size_t o = 0; o < src.outer; ++o) {
        double* to = dx.data() + (o * src.mid + begin) * src.inner;
        const double* from = g.data() + o * len;
        for (std::size_t i = 0; i < len; ++i) to[i] += from[i];
      }
    });
  }
  return result;
}

Var anchor_rows(Tape& tape, const Var& a, std::size_t anchors_per_cell, std::size_t row_width) {
  require_rank("anchor_rows", a, 4);
  const auto& s = a.shape();
  DRNET_CHECK(s[1] == anchors_per_cell * row_width, "anchor_rows: ", s[1],
              " channels do not split into ", anchors_per_cell, " anchors x ", row_width);
  const std::size_t n = s[0], hw = s[2] * s[3];
  const std::size_t rows = hw * anchors_per_cell;
  Tensor out({n, rows, row_width});
  const Tensor& x = a.value();
  auto index = [=](std::size_t b, std::size_t p, std::size_t an, std::size_t k) {
    return (b * s[1] + an * row_width + k) * hw + p;
  };
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t an = 0; an < anchors_per_cell; ++an)
        for (std::size_t k = 0; k < row_width; ++k)
          out[((b * rows) + p * anchors_per_cell + an) * row_width + k] = x[index(b, p, an, k)];
  const bool track = tape.tracks(a);
  Var result(std::move(out), track);
  if (track) {
    tape.push([a, result, n, hw, rows, anchors_per_cell, row_width, index]() mutable {
      if (!result.has_grad()) return;
      const Tensor& g = result.grad();
      Tensor& dx = a.grad_buffer();
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t p = 0; p < hw; ++p)
          for (std::size_t an = 0; an < anchors_per_cell; ++an)
            for (std::size_t k = 0; k < row_width; ++k)
              dx[index(b, p, an, k)] += g[((b * rows) + p * anchors_per_cell + an) * row_width + k];
    });
  }
  return result;
}

Var gather_rows(Tape& tape, const Var& a, std::span<const std::size_t> rows) {
  const auto& s = a.shape();
  DRNET_CHECK(s.size() == 2 || s.size() == 3, "gather_rows: expected rank 2 or 3, got ",
              shape_str(s));
  const std::size_t width = s.back();
  const std::size_t total = a.value().numel() / width;
  Tensor out({rows.size(), width});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    DRNET_CHECK(rows[r] < total, "gather_rows: row ", rows[r], " out of range ", total);
    std::copy_n(a.value().data() + rows[r] * width, width, out.data() + r * width);
  }
  const bool track = tape.tracks(a);
  Var result(std::move(out), track);
  if (track) {
    std::vector<std::size_t> picked(rows.begin(), rows.end());
    tape.push([a, result, picked, width]() mutable {
      if (!result.has_grad()) return;
      const Tensor& g = result.grad();
      Tensor& dx = a.grad_buffer();
      for (std::size_t r = 0; r < picked.size(); ++r)
        for (std::size_t k = 0; k < width; ++k) dx[picked[r] * width + k] += g[r * width + k];
    });
  }
  return result;
}

}  // namespace drnet
