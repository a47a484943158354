#include "drnet/deform.hpp"

#include <cmath>
#include <memory>
#include <ostream>

#include "gemm.hpp"

namespace drnet {

namespace {

// Bilinear taps of one sampling location: corner indices into the plane (-1
// when outside), interpolation weights and their derivatives in y and x.
struct SampleTaps {
  int index[4] = {-1, -1, -1, -1};
  double weight[4] = {0, 0, 0, 0};
  double dweight_y[4] = {0, 0, 0, 0};
  double dweight_x[4] = {0, 0, 0, 0};
};

SampleTaps make_taps(int height, int width, double y, double x) {
  SampleTaps t;
  if (y <= -1.0 || y >= height || x <= -1.0 || x >= width) return t;
  const double fy = std::floor(y);
  const double fx = std::floor(x);
  const int y0 = static_cast<int>(fy);
  const int x0 = static_cast<int>(fx);
  const double ly = y - fy, lx = x - fx;
  const double hy = 1.0 - ly, hx = 1.0 - lx;
  const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
  const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
  const double w[4] = {hy * hx, hy * lx, ly * hx, ly * lx};
  const double wy[4] = {-hx, -lx, hx, lx};
  const double wx[4] = {-hy, hy, -ly, ly};
  for (int k = 0; k < 4; ++k) {
    if (ys[k] >= 0 && ys[k] < height && xs[k] >= 0 && xs[k] < width) {
      t.index[k] = ys[k] * width + xs[k];
      t.weight[k] = w[k];
      t.dweight_y[k] = wy[k];
      t.dweight_x[k] = wx[k];
    }
  }
  return t;
}

struct DeformGeometry {
  int n, ci, h, w, co, kh, kw, ho, wo;
  int taps() const { return kh * kw; }
  int plane() const { return ho * wo; }
};

// Sampling plan of image n: taps()*plane() entries, tap-major.
std::vector<SampleTaps> build_plan(const double* offsets, const DeformGeometry& g,
                                   const Conv2dParams& p) {
  std::vector<SampleTaps> plan(static_cast<std::size_t>(g.taps()) * g.plane());
  for (int ki = 0; ki < g.kh; ++ki) {
    for (int kj = 0; kj < g.kw; ++kj) {
      const int t = ki * g.kw + kj;
      const double* dy = offsets + static_cast<std::size_t>(2 * t) * g.plane();
      const double* dx = dy + g.plane();
      for (int oy = 0; oy < g.ho; ++oy) {
        for (int ox = 0; ox < g.wo; ++ox) {
          const int q = oy * g.wo + ox;
          const double y = oy * p.stride - p.padding + ki * p.dilation + dy[q];
          const double x = ox * p.stride - p.padding + kj * p.dilation + dx[q];
          plan[static_cast<std::size_t>(t) * g.plane() + q] = make_taps(g.h, g.w, y, x);
        }
      }
    }
  }
  return plan;
}

void deform_im2col(const double* in, const std::vector<SampleTaps>& plan, const DeformGeometry& g,
                   double* cols) {
  const std::size_t plane = g.plane();
  const std::size_t hw = static_cast<std::size_t>(g.h) * g.w;
  for (int c = 0; c < g.ci; ++c) {
    const double* src = in + c * hw;
    for (int t = 0; t < g.taps(); ++t) {
      double* row = cols + (static_cast<std::size_t>(c) * g.taps() + t) * plane;
      const SampleTaps* taps = plan.data() + static_cast<std::size_t>(t) * plane;
      for (std::size_t q = 0; q < plane; ++q) {
        const SampleTaps& s = taps[q];
        double v = 0.0;
        for (int k = 0; k < 4; ++k) {
          if (s.index[k] >= 0) v += s.weight[k] * src[s.index[k]];
        }
        row[q] = v;
      }
    }
  }
}

}  // namespace

double bilinear_sample(const double* plane, int height, int width, double y, double x) {
  const SampleTaps t = make_taps(height, width, y, x);
  double v = 0.0;
  for (int k = 0; k < 4; ++k) {
    if (t.index[k] >= 0) v += t.weight[k] * plane[t.index[k]];
  }
  return v;
}

std::vector<double> bilinear_sample(const Tensor& feature, std::size_t n, double y, double x) {
  DRNET_CHECK(feature.rank() == 4 && n < feature.extent(0), "bilinear_sample: bad feature/index");
  const auto& s = feature.shape();
  std::vector<double> out(s[1]);
  const std::size_t hw = s[2] * s[3];
  for (std::size_t c = 0; c < s[1]; ++c) {
    out[c] = bilinear_sample(feature.data() + (n * s[1] + c) * hw, static_cast<int>(s[2]),
                             static_cast<int>(s[3]), y, x);
  }
  return out;
}

Var deform_conv2d(Tape& tape, const Var& input, const Var& weight, const Var& bias,
                  const Var& offsets, const Conv2dParams& params) {
  DRNET_CHECK(input.value().rank() == 4 && weight.value().rank() == 4 &&
                  offsets.value().rank() == 4,
              "deform_conv2d: input, weight and offsets must be rank 4");
  const auto& is = input.shape();
  const auto& ws = weight.shape();
  const auto& os = offsets.shape();
  DeformGeometry g{static_cast<int>(is[0]), static_cast<int>(is[1]), static_cast<int>(is[2]),
                   static_cast<int>(is[3]), static_cast<int>(ws[0]), static_cast<int>(ws[2]),
                   static_cast<int>(ws[3]), 0, 0};
  DRNET_CHECK(ws[1] == is[1], "deform_conv2d: weight expects ", ws[1], " channels, input has ",
              is[1]);
  g.ho = conv_output_extent(g.h, g.kh, params);
  g.wo = conv_output_extent(g.w, g.kw, params);
  DRNET_CHECK(g.ho > 0 && g.wo > 0, "deform_conv2d: empty output");
  DRNET_CHECK(os[1] == static_cast<std::size_t>(2 * g.taps()), "deform_conv2d: offsets carry ",
              os[1], " channels, kernel needs ", 2 * g.taps());
  DRNET_CHECK(os[0] == is[0] && os[2] == static_cast<std::size_t>(g.ho) &&
                  os[3] == static_cast<std::size_t>(g.wo),
              "deform_conv2d: offsets ", shape_str(os), " do not match output grid ", g.ho, "x",
              g.wo);
  if (bias.defined()) {
    DRNET_CHECK(bias.value().numel() == ws[0], "deform_conv2d: bias size mismatch");
  }
  DRNET_CHECK(input.value().all_finite() && offsets.value().all_finite(),
              "deform_conv2d: non-finite input or offsets");

  const std::size_t ck = static_cast<std::size_t>(g.ci) * g.taps();
  const std::size_t plane = g.plane();
  const std::size_t in_stride = static_cast<std::size_t>(g.ci) * g.h * g.w;
  const std::size_t off_stride = 2 * static_cast<std::size_t>(g.taps()) * plane;

  struct Saved {
    std::vector<std::vector<SampleTaps>> plans;
    std::vector<std::vector<double>> cols;
  };
  const bool track = tape.tracks(input, weight, offsets, bias.defined() ? bias : weight);
  auto saved = std::make_shared<Saved>();
  if (track) {
    saved->plans.resize(g.n);
    saved->cols.resize(g.n);
  }

  Tensor out({is[0], ws[0], static_cast<std::size_t>(g.ho), static_cast<std::size_t>(g.wo)});
  const double* b = bias.defined() ? bias.value().data() : nullptr;
  std::vector<double> scratch;
  for (int n = 0; n < g.n; ++n) {
    auto plan = build_plan(offsets.value().data() + n * off_stride, g, params);
    std::vector<double>& cols = track ? saved->cols[n] : scratch;
    cols.resize(ck * plane);
    deform_im2col(input.value().data() + n * in_stride, plan, g, cols.data());
    detail::gemm_forward(weight.value().data(), cols.data(), b, out.data() + n * g.co * plane,
                         g.co, static_cast<Eigen::Index>(ck), static_cast<Eigen::Index>(plane));
    if (track) saved->plans[n] = std::move(plan);
  }

  Var result(std::move(out), track);
  if (track) {
    tape.push([input, weight, bias, offsets, result, saved, g, ck, plane, in_stride,
               off_stride]() mutable {
      if (!result.has_grad()) return;
      const Tensor& dy = result.grad();
      double* dw = weight.requires_grad() ? weight.grad_buffer().data() : nullptr;
      double* db = bias.defined() && bias.requires_grad() ? bias.grad_buffer().data() : nullptr;
      const bool need_input = input.requires_grad();
      const bool need_offsets = offsets.requires_grad();
      std::vector<double> dcols((need_input || need_offsets) ? ck * plane : 0);
      const std::size_t hw = static_cast<std::size_t>(g.h) * g.w;
      for (int n = 0; n < g.n; ++n) {
        detail::gemm_backward(weight.value().data(), saved->cols[n].data(),
                              dy.data() + n * g.co * plane, dw, db,
                              dcols.empty() ? nullptr : dcols.data(), g.co,
                              static_cast<Eigen::Index>(ck), static_cast<Eigen::Index>(plane));
        if (dcols.empty()) continue;
        const auto& plan = saved->plans[n];
        const double* in = input.value().data() + n * in_stride;
        double* dx = need_input ? input.grad_buffer().data() + n * in_stride : nullptr;
        double* doff = need_offsets ? offsets.grad_buffer().data() + n * off_stride : nullptr;
        for (int t = 0; t < g.taps(); ++t) {
          const SampleTaps* taps = plan.data() + static_cast<std::size_t>(t) * plane;
          double* doff_y = doff ? doff + static_cast<std::size_t>(2 * t) * plane : nullptr;
          double* doff_x = doff ? doff_y + plane : nullptr;
          for (int c = 0; c < g.ci; ++c) {
            const double* src = in + c * hw;
            const double* grow = dcols.data() + (static_cast<std::size_t>(c) * g.taps() + t) * plane;
            double* dsrc = dx ? dx + c * hw : nullptr;
            for (std::size_t q = 0; q < plane; ++q) {
              const SampleTaps& s = taps[q];
              const double gq = grow[q];
              double gy = 0.0, gx = 0.0;
              for (int k = 0; k < 4; ++k) {
                const int idx = s.index[k];
                if (idx < 0) continue;
                if (dsrc) dsrc[idx] += s.weight[k] * gq;
                gy += s.dweight_y[k] * src[idx];
                gx += s.dweight_x[k] * src[idx];
              }
              if (doff_y) {
                doff_y[q] += gq * gy;
                doff_x[q] += gq * gx;
              }
            }
          }
        }
      }
    });
  }
  return result;
}

Var offsets_from_features(Tape& tape, const Var& features, const Var& weight, const Var& bias,
                          int kernel) {
  DRNET_CHECK(weight.value().rank() == 4 &&
                  weight.shape()[0] == static_cast<std::size_t>(2 * kernel * kernel),
              "offsets_from_features: weight must emit ", 2 * kernel * kernel, " channels, has ",
              shape_str(weight.shape()));
  const int k = static_cast<int>(weight.shape()[2]);
  DRNET_CHECK(k % 2 == 1 && weight.shape()[3] == weight.shape()[2],
              "offsets_from_features: offset kernel must be square and odd");
  return conv2d(tape, features, weight, bias, Conv2dParams{1, k / 2, 1});
}

std::vector<SamplingCenter> sampling_centers(const Tensor& offsets, std::size_t n, int kernel,
                                             int feature_stride, std::size_t level,
                                             std::size_t path) {
  DRNET_CHECK(offsets.rank() == 4 &&
                  offsets.extent(1) == static_cast<std::size_t>(2 * kernel * kernel) &&
                  n < offsets.extent(0),
              "sampling_centers: offsets ", shape_str(offsets.shape()), " do not fit kernel ",
              kernel);
  const std::size_t h = offsets.extent(2), w = offsets.extent(3);
  const std::size_t center = static_cast<std::size_t>((kernel / 2) * kernel + kernel / 2);
  std::vector<SamplingCenter> out;
  out.reserve(h * w);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const double dy = offsets.at(n, 2 * center, i, j);
      const double dx = offsets.at(n, 2 * center + 1, i, j);
      SamplingCenter s;
      s.level = level;
      s.path = path;
      s.row = i;
      s.col = j;
      s.base_x = (static_cast<double>(j) + 0.5) * feature_stride;
      s.base_y = (static_cast<double>(i) + 0.5) * feature_stride;
      s.refined_x = (static_cast<double>(j) + dx + 0.5) * feature_stride;
      s.refined_y = (static_cast<double>(i) + dy + 0.5) * feature_stride;
      out.push_back(s);
    }
  }
  return out;
}

void write_sampling_centers_csv(std::ostream& os, std::span<const SamplingCenter> centers) {
  os << "level,path,row,col,base_x,base_y,refined_x,refined_y\n";
  for (const auto& c : centers) {
    os << c.level << ',' << c.path << ',' << c.row << ',' << c.col << ',' << c.base_x << ','
       << c.base_y << ',' << c.refined_x << ',' << c.refined_y << '\n';
  }
}

}  // namespace drnet
