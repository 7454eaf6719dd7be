#pragma once

// PSNR and SSIM (11x11 Gaussian window, sigma 1.5, valid positions only, channel-averaged),
// with the analytic gradient of SSIM with respect to its second argument.

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "gsproto/error.hpp"
#include "gsproto/image.hpp"

namespace gsproto {

inline constexpr double kPsnrCap = 100.0;

template <typename T> double mse(const Image<T> &a, const Image<T> &b) {
  require_same_shape(a, b, "mse");
  double s = 0;
  for (std::size_t k = 0; k < a.data.size(); ++k) {
    const double d = double(a.data[k]) - double(b.data[k]);
    s += d * d;
  }
  return a.data.empty() ? 0.0 : s / double(a.data.size());
}

/// 10 log10(1 / MSE) for peak value 1; identical images give the 100 dB cap.
template <typename T> double psnr(const Image<T> &a, const Image<T> &b) {
  const double m = mse(a, b);
  if (m <= 0.0)
    return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
};

template <typename T> struct SsimResult {
  double value = 0;
  std::optional<Image<T>> grad_b; ///< dSSIM/db when requested
};

namespace detail {

inline std::vector<double> gaussian_window(const SsimParams &p) {
  std::vector<double> w(static_cast<std::size_t>(p.window));
  const double half = (p.window - 1) / 2.0;
  double sum = 0;
  for (int k = 0; k < p.window; ++k) {
    const double x = k - half;
    w[std::size_t(k)] = std::exp(-x * x / (2 * p.sigma * p.sigma));
    sum += w[std::size_t(k)];
  }
  for (auto &v : w)
    v /= sum;
  return w;
}

/// Valid-mode separable correlation of a single-channel H x W plane.
inline std::vector<double> filter_valid(const std::vector<double> &in, int w, int h, const std::vector<double> &k) {
  const int n = static_cast<int>(k.size());
  const int ow = w - n + 1, oh = h - n + 1;
  std::vector<double> tmp(std::size_t(ow) * std::size_t(h));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int j = 0; j < n; ++j)
        s += k[std::size_t(j)] * in[std::size_t(y) * std::size_t(w) + std::size_t(x + j)];
      tmp[std::size_t(y) * std::size_t(ow) + std::size_t(x)] = s;
    }
  std::vector<double> out(std::size_t(ow) * std::size_t(oh));
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int j = 0; j < n; ++j)
        s += k[std::size_t(j)] * tmp[std::size_t(y + j) * std::size_t(ow) + std::size_t(x)];
      out[std::size_t(y) * std::size_t(ow) + std::size_t(x)] = s;
    }
  return out;
}

/// Adjoint of filter_valid: scatter an (h-n+1) x (w-n+1) map back onto the h x w plane.
inline std::vector<double> filter_valid_adjoint(const std::vector<double> &in, int w, int h,
                                                const std::vector<double> &k) {
  const int n = static_cast<int>(k.size());
  const int ow = w - n + 1, oh = h - n + 1;
  std::vector<double> tmp(std::size_t(ow) * std::size_t(h), 0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      const double v = in[std::size_t(y) * std::size_t(ow) + std::size_t(x)];
      for (int j = 0; j < n; ++j)
        tmp[std::size_t(y + j) * std::size_t(ow) + std::size_t(x)] += k[std::size_t(j)] * v;
    }
  std::vector<double> out(std::size_t(w) * std::size_t(h), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      const double v = tmp[std::size_t(y) * std::size_t(ow) + std::size_t(x)];
      for (int j = 0; j < n; ++j)
        out[std::size_t(y) * std::size_t(w) + std::size_t(x + j)] += k[std::size_t(j)] * v;
    }
  return out;
}

} // namespace detail

template <typename T>
SsimResult<T> ssim(const Image<T> &a, const Image<T> &b, bool with_gradient = true, const SsimParams &params = {}) {
  require_same_shape(a, b, "ssim");
  if (a.width < params.window || a.height < params.window)
    throw ShapeError("ssim: image " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                     " is smaller than the " + std::to_string(params.window) + "x" + std::to_string(params.window) +
                     " window");
  const int w = a.width, h = a.height;
  const auto k = detail::gaussian_window(params);
  const int ow = w - params.window + 1, oh = h - params.window + 1;
  const double count = 3.0 * ow * oh;

  SsimResult<T> res;
  if (with_gradient)
    res.grad_b = Image<T>(w, h);
  double total = 0;
  std::vector<double> pa(std::size_t(w) * std::size_t(h)), pb(pa.size()), paa(pa.size()), pbb(pa.size()),
      pab(pa.size());
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = std::size_t(y) * std::size_t(w) + std::size_t(x);
        const double va = a.at(x, y, c), vb = b.at(x, y, c);
        pa[i] = va;
        pb[i] = vb;
        paa[i] = va * va;
        pbb[i] = vb * vb;
        pab[i] = va * vb;
      }
    const auto mu_a = detail::filter_valid(pa, w, h, k);
    const auto mu_b = detail::filter_valid(pb, w, h, k);
    const auto e_aa = detail::filter_valid(paa, w, h, k);
    const auto e_bb = detail::filter_valid(pbb, w, h, k);
    const auto e_ab = detail::filter_valid(pab, w, h, k);
    std::vector<double> d_mu(mu_a.size()), d_ebb(mu_a.size()), d_eab(mu_a.size());
    for (std::size_t p = 0; p < mu_a.size(); ++p) {
      const double ma = mu_a[p], mb = mu_b[p];
      const double va = e_aa[p] - ma * ma, vb = e_bb[p] - mb * mb, cov = e_ab[p] - ma * mb;
      const double a1 = 2 * ma * mb + params.c1, a2 = 2 * cov + params.c2;
      const double b1 = ma * ma + mb * mb + params.c1, b2 = va + vb + params.c2;
      const double s = (a1 * a2) / (b1 * b2);
      total += s;
      if (with_gradient) {
        const double ds_dmb = 2 * ma * a2 / (b1 * b2) - s * 2 * mb / b1;
        const double ds_dcov = 2 * a1 / (b1 * b2);
        const double ds_dvb = -s / b2;
        // Rewrite through mu_b, E[b^2], E[ab].
        d_mu[p] = (ds_dmb - 2 * mb * ds_dvb - ma * ds_dcov) / count;
        d_ebb[p] = ds_dvb / count;
        d_eab[p] = ds_dcov / count;
      }
    }
    if (with_gradient) {
      const auto g_mu = detail::filter_valid_adjoint(d_mu, w, h, k);
      const auto g_bb = detail::filter_valid_adjoint(d_ebb, w, h, k);
      const auto g_ab = detail::filter_valid_adjoint(d_eab, w, h, k);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const std::size_t i = std::size_t(y) * std::size_t(w) + std::size_t(x);
          res.grad_b->at(x, y, c) = static_cast<T>(g_mu[i] + 2 * pb[i] * g_bb[i] + pa[i] * g_ab[i]);
        }
    }
  }
  res.value = total / count;
  return res;
}

/// Per-view and mean quality figures. LPIPS is intentionally not part of the report.
struct MetricReport {
  struct View {
    std::size_t index = 0;
    double psnr = 0;
    double ssim = 0;
  };
  double psnr = 0;
  double ssim = 0;
  std::vector<View> views;
};

template <typename T>
MetricReport evaluate_views(const std::vector<Image<T>> &rendered, const std::vector<Image<T>> &reference,
                            const std::vector<std::size_t> &indices) {
  if (rendered.size() != reference.size() || rendered.size() != indices.size())
    throw ShapeError("evaluate_views: rendered, reference, and index lists differ in length");
  MetricReport r;
  for (std::size_t k = 0; k < rendered.size(); ++k) {
    MetricReport::View v;
    v.index = indices[k];
    v.psnr = psnr(rendered[k], reference[k]);
    v.ssim = ssim(rendered[k], reference[k], false).value;
    r.psnr += v.psnr;
    r.ssim += v.ssim;
    r.views.push_back(v);
  }
  if (!r.views.empty()) {
    r.psnr /= double(r.views.size());
    r.ssim /= double(r.views.size());
  }
  return r;
}

} // namespace gsproto
