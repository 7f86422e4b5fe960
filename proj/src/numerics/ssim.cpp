#include "latentdrag/numerics/ssim.hpp"

#include <cmath>
#include <vector>

#include "latentdrag/error.hpp"

namespace latentdrag::numerics {

namespace {

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(size));
  const int half = size / 2;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - half;
    w[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += w[i];
  }
  for (double& x : w) x /= sum;
  return w;
}

// Separable "valid" filtering of an h x w plane.
std::vector<double> filter_valid(std::span<const double> src, std::size_t h, std::size_t w,
                                 const std::vector<double>& k) {
  const std::size_t ks = k.size();
  const std::size_t ow = w - ks + 1;
  const std::size_t oh = h - ks + 1;
  std::vector<double> tmp(h * ow, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t i = 0; i < ks; ++i) s += k[i] * src[y * w + x + i];
      tmp[y * ow + x] = s;
    }
  }
  std::vector<double> out(oh * ow, 0.0);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t i = 0; i < ks; ++i) s += k[i] * tmp[(y + i) * ow + x];
      out[y * ow + x] = s;
    }
  }
  return out;
}

}  // namespace

double ssim(const Raster& a, const Raster& b, const SsimParams& params) {
  if (!a.same_shape(b)) throw Error(ErrorCode::BadShape, "ssim inputs differ in shape");
  if (params.window_size < 3 || params.window_size % 2 == 0) {
    throw Error(ErrorCode::BadConfig, "ssim window must be odd and >= 3");
  }
  if (!(params.k1 > 0.0) || !(params.k2 > 0.0)) throw Error(ErrorCode::BadConfig, "ssim k1, k2 must be > 0");
  const auto ws = static_cast<std::size_t>(params.window_size);
  if (a.channels == 0 || a.height < ws || a.width < ws) {
    throw Error(ErrorCode::BadShape, "image smaller than ssim window");
  }
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    if (!std::isfinite(a.values[i]) || !std::isfinite(b.values[i])) {
      throw Error(ErrorCode::BadShape, "ssim inputs must be finite");
    }
  }

  const auto window = gaussian_window(params.window_size, params.window_sigma);
  const double c1 = (params.k1 * params.dynamic_range) * (params.k1 * params.dynamic_range);
  const double c2 = (params.k2 * params.dynamic_range) * (params.k2 * params.dynamic_range);
  const std::size_t plane = a.height * a.width;

  double total = 0.0;
  for (std::size_t c = 0; c < a.channels; ++c) {
    auto pa = a.plane(c);
    auto pb = b.plane(c);
    std::vector<double> aa(plane), bb(plane), ab(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      aa[i] = pa[i] * pa[i];
      bb[i] = pb[i] * pb[i];
      ab[i] = pa[i] * pb[i];
    }
    const auto mu_a = filter_valid(pa, a.height, a.width, window);
    const auto mu_b = filter_valid(pb, a.height, a.width, window);
    const auto e_aa = filter_valid(aa, a.height, a.width, window);
    const auto e_bb = filter_valid(bb, a.height, a.width, window);
    const auto e_ab = filter_valid(ab, a.height, a.width, window);

    double sum = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      const double ma = mu_a[i];
      const double mb = mu_b[i];
      const double var_a = e_aa[i] - ma * ma;
      const double var_b = e_bb[i] - mb * mb;
      const double cov = e_ab[i] - ma * mb;
      const double num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
      const double den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
      sum += num / den;
    }
    total += sum / static_cast<double>(mu_a.size());
  }
  return total / static_cast<double>(a.channels);
}

}  // namespace latentdrag::numerics
