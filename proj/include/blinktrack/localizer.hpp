#pragma once

// Spot detection and sub-pixel localization.
//
// Frames are filtered with a Mexican-hat (negative Laplacian of Gaussian)
// kernel at the PSF scale; local maxima above k times the robust noise level
// of the filtered frame become candidates. Each candidate is refined by a
// least-squares fit of a symmetric 2D Gaussian plus constant background.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "blinktrack/model.hpp"
#include "blinktrack/simulator.hpp"

namespace blinktrack {

struct LocalizerParams {
  double detection_threshold = 3.0;  // multiples of filtered-noise sd
  int fit_window = 7;                // px, odd
  int max_fit_iterations = 30;
  double fit_tolerance = 1e-3;  // px; position step that counts as converged
  double min_separation = 2.0;  // px

  void validate() const {
    if (!(detection_threshold > 0)) {
      throw InvalidArgument("detection threshold must be > 0");
    }
    if (fit_window < 3 || fit_window % 2 == 0) {
      throw InvalidArgument("fit window must be odd and >= 3");
    }
    if (!(fit_tolerance > 0)) {
      throw InvalidArgument("fit tolerance must be > 0");
    }
    if (max_fit_iterations < 1) {
      throw InvalidArgument("max fit iterations must be >= 1");
    }
    if (!(min_separation >= 0)) {
      throw InvalidArgument("min separation must be >= 0");
    }
  }
};

/// Non-owning view of one grayscale frame, row-major.
struct FrameView {
  std::span<const float> pixels;
  int width = 0;
  int height = 0;

  double at(int x, int y) const {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
};

struct Candidate {
  int x = 0;  // pixel column
  int y = 0;  // pixel row
  double response = 0.0;
};

/// 1.4826 * median absolute deviation: a Gaussian-consistent robust sd.
inline double robust_sigma(std::vector<double> values) {
  if (values.empty()) return 0.0;
  const auto median_of = [](std::vector<double>& v) {
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    return v[mid];
  };
  const double med = median_of(values);
  for (double& v : values) v = std::abs(v - med);
  return 1.4826 * median_of(values);
}

/// Pixel noise sd from horizontal neighbour differences, insensitive to the
/// smooth spot signal.
inline double estimate_pixel_noise(const FrameView& frame) {
  std::vector<double> diffs;
  diffs.reserve(static_cast<std::size_t>(frame.width) * frame.height);
  for (int y = 0; y < frame.height; ++y) {
    for (int x = 0; x + 1 < frame.width; ++x) {
      diffs.push_back(frame.at(x + 1, y) - frame.at(x, y));
    }
  }
  return robust_sigma(std::move(diffs)) / std::sqrt(2.0);
}

namespace detail {

inline int mirror(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
  }
  return i;
}

/// Separable 1D convolution along x (axis 0) or y (axis 1), mirrored edges.
inline std::vector<double> convolve_axis(const std::vector<double>& in, int width,
                                         int height, std::span<const double> kernel,
                                         int axis) {
  const int radius = static_cast<int>(kernel.size() / 2);
  std::vector<double> out(in.size(), 0.0);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        const int sx = axis == 0 ? mirror(x + k, width) : x;
        const int sy = axis == 1 ? mirror(y + k, height) : y;
        acc += kernel[k + radius] * in[static_cast<std::size_t>(sy) * width + sx];
      }
      out[static_cast<std::size_t>(y) * width + x] = acc;
    }
  }
  return out;
}

}  // namespace detail

/// Mexican-hat response -sigma^2 * (G_xx + G_yy) * frame. The second
/// derivative kernel is made exactly zero-sum so flat backgrounds map to 0.
inline std::vector<double> mexican_hat(const FrameView& frame, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma)));
  std::vector<double> g(2 * radius + 1), g2(2 * radius + 1);
  double gsum = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    g[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
    gsum += g[k + radius];
  }
  double g2sum = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    g[k + radius] /= gsum;
    g2[k + radius] = (k * k / (sigma * sigma) - 1.0) / (sigma * sigma) * g[k + radius];
    g2sum += g2[k + radius];
  }
  for (double& v : g2) v -= g2sum / static_cast<double>(g2.size());

  std::vector<double> img(frame.pixels.begin(), frame.pixels.end());
  const auto gx2 = detail::convolve_axis(img, frame.width, frame.height, g2, 0);
  const auto gxx = detail::convolve_axis(gx2, frame.width, frame.height, g, 1);
  const auto gy = detail::convolve_axis(img, frame.width, frame.height, g, 0);
  const auto gyy = detail::convolve_axis(gy, frame.width, frame.height, g2, 1);
  std::vector<double> response(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    response[i] = -sigma * sigma * (gxx[i] + gyy[i]);
  }
  return response;
}

/// Threshold applied by detect(): median + k * robust sd of the response.
inline double detection_level(std::span<const double> response, double k) {
  std::vector<double> values(response.begin(), response.end());
  if (values.empty()) return 0.0;
  std::vector<double> copy = values;
  const std::size_t mid = copy.size() / 2;
  std::nth_element(copy.begin(), copy.begin() + mid, copy.end());
  return copy[mid] + k * robust_sigma(std::move(values));
}

/// Local maxima of the Mexican-hat response above the detection level,
/// thinned so no two kept maxima are closer than min_separation (the
/// stronger one wins).
inline std::vector<Candidate> detect(const FrameView& frame, double psf_sigma,
                                     const LocalizerParams& params) {
  params.validate();
  const auto response = mexican_hat(frame, psf_sigma);
  double peak = 0.0;
  for (double r : response) peak = std::max(peak, std::abs(r));
  const double level =
      std::max(detection_level(response, params.detection_threshold), 1e-9 * peak);

  const int w = frame.width;
  const int h = frame.height;
  const auto r_at = [&](int x, int y) {
    return response[static_cast<std::size_t>(y) * w + x];
  };
  std::vector<Candidate> maxima;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double r = r_at(x, y);
      if (!(r > level)) continue;
      bool is_max = true;
      for (int dy = -1; dy <= 1 && is_max; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const int nx = x + dx;
          const int ny = y + dy;
          if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
          const double nr = r_at(nx, ny);
          // Plateaus: earlier raster neighbours must be strictly lower.
          const bool earlier = dy < 0 || (dy == 0 && dx < 0);
          if (nr > r || (earlier && nr == r)) {
            is_max = false;
            break;
          }
        }
      }
      if (is_max) maxima.push_back(Candidate{x, y, r});
    }
  }

  std::stable_sort(maxima.begin(), maxima.end(),
                   [](const Candidate& a, const Candidate& b) {
                     return a.response > b.response;
                   });
  std::vector<Candidate> kept;
  const double sep2 = params.min_separation * params.min_separation;
  for (const Candidate& c : maxima) {
    bool clear = true;
    for (const Candidate& k : kept) {
      const double dx = c.x - k.x;
      const double dy = c.y - k.y;
      if (dx * dx + dy * dy < sep2) {
        clear = false;
        break;
      }
    }
    if (clear) kept.push_back(c);
  }
  return kept;
}

/// Fits A * exp(-r^2 / 2 psf_sigma^2) + b over the fit window around
/// `candidate` by Gauss-Newton with step halving. Quality is
/// A / noise_sigma. If the fit diverges or does not converge within
/// max_fit_iterations, the position falls back to the intensity centroid of
/// the background-subtracted window and `centroid_fallback` is set.
inline Spot fit_gaussian(const FrameView& frame, const Candidate& candidate,
                         double psf_sigma, double noise_sigma,
                         const LocalizerParams& params) {
  const int half = params.fit_window / 2;
  const int wx = std::min(params.fit_window, frame.width);
  const int wy = std::min(params.fit_window, frame.height);
  const int x0 = std::clamp(candidate.x - half, 0, frame.width - wx);
  const int y0 = std::clamp(candidate.y - half, 0, frame.height - wy);

  std::vector<double> px, py, val;
  px.reserve(static_cast<std::size_t>(wx) * wy);
  for (int y = y0; y < y0 + wy; ++y) {
    for (int x = x0; x < x0 + wx; ++x) {
      px.push_back(x + 0.5);
      py.push_back(y + 0.5);
      val.push_back(frame.at(x, y));
    }
  }
  const std::size_t m = val.size();

  // Border median as background estimate.
  std::vector<double> border;
  for (std::size_t i = 0; i < m; ++i) {
    const int lx = static_cast<int>(px[i] - 0.5) - x0;
    const int ly = static_cast<int>(py[i] - 0.5) - y0;
    if (lx == 0 || ly == 0 || lx == wx - 1 || ly == wy - 1) border.push_back(val[i]);
  }
  std::nth_element(border.begin(), border.begin() + border.size() / 2, border.end());
  const double b_init = border[border.size() / 2];

  // sigma is held at psf_sigma; free parameters are A, x0, y0, b.
  using Vec = Eigen::Matrix<double, 4, 1>;
  const double inv2s2 = 1.0 / (2.0 * psf_sigma * psf_sigma);
  Vec theta;
  theta << frame.at(candidate.x, candidate.y) - b_init, candidate.x + 0.5,
      candidate.y + 0.5, b_init;

  const auto sse = [&](const Vec& t) {
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double dx = px[i] - t[1];
      const double dy = py[i] - t[2];
      const double r = val[i] - (t[0] * std::exp(-(dx * dx + dy * dy) * inv2s2) + t[3]);
      total += r * r;
    }
    return total;
  };
  const auto valid = [&](const Vec& t) {
    return t.allFinite() && t[0] > 0 && t[1] >= x0 - 1.0 && t[1] <= x0 + wx + 1.0 &&
           t[2] >= y0 - 1.0 && t[2] <= y0 + wy + 1.0;
  };

  bool converged = false;
  double current = sse(theta);
  for (int it = 0; it < params.max_fit_iterations && valid(theta); ++it) {
    Eigen::Matrix<double, 4, 4> jtj = Eigen::Matrix<double, 4, 4>::Zero();
    Vec jtr = Vec::Zero();
    const double s2 = psf_sigma * psf_sigma;
    for (std::size_t i = 0; i < m; ++i) {
      const double dx = px[i] - theta[1];
      const double dy = py[i] - theta[2];
      const double e = std::exp(-(dx * dx + dy * dy) * inv2s2);
      Vec j;
      j << e, theta[0] * e * dx / s2, theta[0] * e * dy / s2, 1.0;
      const double res = val[i] - (theta[0] * e + theta[3]);
      jtj.noalias() += j * j.transpose();
      jtr.noalias() += j * res;
    }
    const Vec step = jtj.ldlt().solve(jtr);
    if (!step.allFinite()) break;
    double scale = 1.0;
    Vec next = theta + step;
    double next_sse = sse(next);
    for (int halving = 0; halving < 12 && (!valid(next) || next_sse > current);
         ++halving) {
      scale *= 0.5;
      next = theta + scale * step;
      next_sse = sse(next);
    }
    if (!valid(next) || next_sse > current) {
      // No descent along the Gauss-Newton direction: stationary point.
      converged = true;
      break;
    }
    const double moved = std::hypot(scale * step[1], scale * step[2]);
    theta = next;
    current = next_sse;
    if (moved < params.fit_tolerance) {
      converged = true;
      break;
    }
  }

  Spot spot;
  spot.frame = 0;
  const double noise = std::max(noise_sigma, 1e-6);
  if (converged && valid(theta)) {
    spot.x = theta[1];
    spot.y = theta[2];
    spot.amplitude = theta[0];
  } else {
    double wsum = 0.0, cx = 0.0, cy = 0.0, peak = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double wgt = std::max(0.0, val[i] - b_init);
      wsum += wgt;
      cx += wgt * px[i];
      cy += wgt * py[i];
      peak = std::max(peak, val[i] - b_init);
    }
    spot.x = wsum > 0 ? cx / wsum : candidate.x + 0.5;
    spot.y = wsum > 0 ? cy / wsum : candidate.y + 0.5;
    spot.amplitude = peak;
    spot.centroid_fallback = true;
  }
  spot.quality = std::max(0.0, spot.amplitude / noise);
  return spot;
}

/// Detect + fit on every frame. Spots are ordered by (frame, x, y) before ids
/// are assigned, so the output does not depend on scan order. Fits that land
/// outside the image are dropped.
inline SpotSet localize_movie(const Movie& movie, const LocalizerParams& params) {
  params.validate();
  movie.validate();
  std::vector<Spot> spots;
  for (int f = 0; f < movie.n_frames; ++f) {
    const FrameView frame{movie.frame(f), movie.width, movie.height};
    const double noise = estimate_pixel_noise(frame);
    std::vector<Spot> found;
    for (const Candidate& c : detect(frame, movie.calibration.psf_sigma, params)) {
      Spot s = fit_gaussian(frame, c, movie.calibration.psf_sigma, noise, params);
      if (!(s.x >= 0 && s.x < movie.width && s.y >= 0 && s.y < movie.height)) {
        continue;
      }
      s.frame = f;
      found.push_back(s);
    }
    std::sort(found.begin(), found.end(), [](const Spot& a, const Spot& b) {
      return a.x != b.x ? a.x < b.x : a.y < b.y;
    });
    spots.insert(spots.end(), found.begin(), found.end());
  }
  for (std::size_t i = 0; i < spots.size(); ++i) spots[i].id = static_cast<SpotId>(i);
  return SpotSet(std::move(spots), movie.n_frames, movie.calibration);
}

}  // namespace blinktrack
