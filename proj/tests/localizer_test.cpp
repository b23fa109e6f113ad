#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "blinktrack/localizer.hpp"
#include "blinktrack/simulator.hpp"

using namespace blinktrack;

namespace {

constexpr double kSigma = 1.2739827004320285;  // default psf sigma, px

struct Image {
  int width, height;
  std::vector<float> pixels;
  FrameView view() const { return FrameView{pixels, width, height}; }
};

// Independent renderer for test frames.
Image spot_image(int w, int h, std::vector<std::pair<double, double>> centers,
                 double noise_sd, std::uint64_t seed, double amplitude = 1.0) {
  Image img{w, h, std::vector<float>(static_cast<std::size_t>(w) * h)};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double v = 0.1;
      for (auto [cx, cy] : centers) {
        const double dx = x + 0.5 - cx;
        const double dy = y + 0.5 - cy;
        v += amplitude * std::exp(-(dx * dx + dy * dy) / (2 * kSigma * kSigma));
      }
      if (noise_sd > 0) v += noise_sd * noise(rng);
      img.pixels[static_cast<std::size_t>(y) * w + x] = static_cast<float>(v);
    }
  }
  return img;
}

double normal_tail(double k) { return 0.5 * std::erfc(k / std::sqrt(2.0)); }

}  // namespace

TEST(LocalizerParams, Validation) {
  LocalizerParams p;
  EXPECT_NO_THROW(p.validate());
  p.fit_window = 6;
  EXPECT_THROW(p.validate(), InvalidArgument);
  p = LocalizerParams{};
  p.detection_threshold = 0;
  EXPECT_THROW(p.validate(), InvalidArgument);
  p = LocalizerParams{};
  p.fit_window = 1;
  EXPECT_THROW(p.validate(), InvalidArgument);
}

TEST(RobustSigma, GaussianConsistent) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(3.0, 2.0);
  std::vector<double> v(100000);
  for (double& x : v) x = n(rng);
  EXPECT_NEAR(robust_sigma(v), 2.0, 0.03);
  EXPECT_EQ(robust_sigma({}), 0.0);
}

TEST(MexicanHat, FlatFrameGivesZero) {
  Image img{20, 20, std::vector<float>(400, 7.0f)};
  for (double r : mexican_hat(img.view(), kSigma)) EXPECT_NEAR(r, 0.0, 1e-9);
}

TEST(Detect, ZeroFrameHasNoDetections) {
  Image img{32, 32, std::vector<float>(1024, 0.0f)};
  EXPECT_TRUE(detect(img.view(), kSigma, LocalizerParams{}).empty());
}

TEST(Detect, SingleSpotAtSnr5) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto img = spot_image(41, 41, {{20.3, 19.8}}, 0.2, seed);
    // Only the spot itself should pass a threshold this far out on the
    // tail; candidates come from the local maxima of the filtered frame.
    LocalizerParams p;
    p.detection_threshold = 6;
    const auto c = detect(img.view(), kSigma, p);
    ASSERT_EQ(c.size(), 1u) << "seed " << seed;
    EXPECT_LE(std::hypot(c[0].x + 0.5 - 20.3, c[0].y + 0.5 - 19.8), 1.0);
  }
}

TEST(Detect, SingleSpotAtSnr5DefaultThresholdFindsIt) {
  const auto img = spot_image(41, 41, {{20.3, 19.8}}, 0.2, 3);
  const auto c = detect(img.view(), kSigma, LocalizerParams{});
  ASSERT_FALSE(c.empty());
  EXPECT_LE(std::hypot(c[0].x + 0.5 - 20.3, c[0].y + 0.5 - 19.8), 1.0);
}

TEST(Detect, MinSeparationSuppresses) {
  const auto img = spot_image(32, 32, {{15.5, 15.5}, {17.5, 15.5}}, 0.0, 0);
  LocalizerParams p;
  p.min_separation = 3;
  EXPECT_EQ(detect(img.view(), kSigma, p).size(), 1u);
  const auto far = spot_image(40, 32, {{10.5, 15.5}, {25.5, 15.5}}, 0.0, 0);
  EXPECT_EQ(detect(far.view(), kSigma, p).size(), 2u);
}

TEST(Detect, PureNoiseExceedanceMatchesGaussianTail) {
  // The filtered noise field is Gaussian; the fraction of its pixels above
  // the detection level must match the normal tail at k.
  const int w = 256;
  const auto img = spot_image(w, w, {}, 1.0, 42);
  const auto r = mexican_hat(img.view(), kSigma);
  for (double k : {2.0, 3.0}) {
    const double level = detection_level(r, k);
    const auto above = std::count_if(r.begin(), r.end(), [&](double v) { return v > level; });
    const double frac = static_cast<double>(above) / r.size();
    EXPECT_NEAR(frac / normal_tail(k), 1.0, 0.2) << "k " << k;
  }
}

TEST(FitGaussian, NoiselessSubPixel) {
  const auto img = spot_image(32, 32, {{10.3, 20.7}}, 0.0, 0);
  const Spot s = fit_gaussian(img.view(), Candidate{10, 20, 1.0}, kSigma, 1e-3,
                              LocalizerParams{});
  EXPECT_FALSE(s.centroid_fallback);
  EXPECT_NEAR(s.x, 10.3, 0.02);
  EXPECT_NEAR(s.y, 20.7, 0.02);
  EXPECT_NEAR(s.amplitude, 1.0, 0.01);
}

TEST(FitGaussian, OnPixelCenterIsSymmetric) {
  const auto img = spot_image(21, 21, {{10.5, 10.5}}, 0.0, 0);
  const Spot s = fit_gaussian(img.view(), Candidate{10, 10, 1.0}, kSigma, 1e-3,
                              LocalizerParams{});
  EXPECT_NEAR(s.x, 10.5, 1e-6);
  EXPECT_NEAR(s.y, 10.5, 1e-6);
}

// Cramer-Rao bound on var(x) + var(y) for the 4-parameter model (A, x, y, b)
// over the 7 x 7 window at pixels [lo, lo + 7).
double crlb_position(double cx, double cy, int lo, double amplitude, double noise) {
  Eigen::Matrix4d fisher = Eigen::Matrix4d::Zero();
  const double s2 = kSigma * kSigma;
  for (int y = lo; y < lo + 7; ++y) {
    for (int x = lo; x < lo + 7; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      const double e = std::exp(-(dx * dx + dy * dy) / (2 * s2));
      Eigen::Vector4d j(e, amplitude * e * dx / s2, amplitude * e * dy / s2, 1.0);
      fisher += j * j.transpose() / (noise * noise);
    }
  }
  const Eigen::Matrix4d cov = fisher.inverse();
  return cov(1, 1) + cov(2, 2);
}

TEST(FitGaussian, RmseAtSnr4) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  double se = 0, bound = 0;
  int fallbacks = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const double cx = 15.5 + u(rng), cy = 15.5 + u(rng);
    const auto img = spot_image(31, 31, {{cx, cy}}, 0.25, 1000 + trial);
    const Spot s = fit_gaussian(img.view(), Candidate{15, 15, 1.0}, kSigma,
                                estimate_pixel_noise(img.view()), LocalizerParams{});
    se += (s.x - cx) * (s.x - cx) + (s.y - cy) * (s.y - cy);
    bound += crlb_position(cx, cy, 12, 1.0, 0.25);
    fallbacks += s.centroid_fallback;
  }
  const double rmse = std::sqrt(se / 1000);
  const double crlb = std::sqrt(bound / 1000);
  EXPECT_LT(rmse, 0.5);  // well below a pixel
  EXPECT_GT(rmse, 0.9 * crlb);
  EXPECT_LT(rmse, 1.2 * crlb);
  EXPECT_LT(fallbacks, 50);
}

TEST(FitGaussian, QualityIsLocalSnr) {
  const auto img = spot_image(31, 31, {{15.2, 15.9}}, 0.2, 5);
  const double noise = estimate_pixel_noise(img.view());
  EXPECT_NEAR(noise, 0.2, 0.02);
  const Spot s = fit_gaussian(img.view(), Candidate{15, 15, 1.0}, kSigma, noise,
                              LocalizerParams{});
  EXPECT_NEAR(s.quality, 5.0, 1.0);
}

TEST(FitGaussian, NegativeAmplitudeFallsBackToCentroid) {
  // A dip: no positive Gaussian fits.
  Image img{15, 15, std::vector<float>(225, 1.0f)};
  img.pixels[7 * 15 + 7] = 0.5f;
  img.pixels[7 * 15 + 9] = 1.2f;
  const Spot s = fit_gaussian(img.view(), Candidate{7, 7, 1.0}, kSigma, 0.1,
                              LocalizerParams{});
  EXPECT_TRUE(s.centroid_fallback);
  EXPECT_NEAR(s.x, 9.5, 1e-9);  // only the bright pixel carries weight
  EXPECT_NEAR(s.y, 7.5, 1e-9);
}

TEST(FitGaussian, IterationBudgetExhaustedFallsBack) {
  const auto img = spot_image(21, 21, {{11.9, 10.1}}, 0.0, 0);
  LocalizerParams p;
  p.max_fit_iterations = 1;
  const Spot once = fit_gaussian(img.view(), Candidate{10, 10, 1.0}, kSigma, 0.1, p);
  EXPECT_TRUE(once.centroid_fallback);
  p.max_fit_iterations = 30;
  const Spot full = fit_gaussian(img.view(), Candidate{10, 10, 1.0}, kSigma, 0.1, p);
  EXPECT_FALSE(full.centroid_fallback);
  EXPECT_NEAR(full.x, 11.9, 0.02);
}

TEST(LocalizeMovie, NoiselessParticleEveryFrame) {
  SimParams p;
  p.field = 40;
  p.n_frames = 25;
  p.n_particles = 1;
  p.snr = std::numeric_limits<double>::infinity();
  p.diffusion_coefficient = 1e-14;
  auto truth = simulate_walks(p);
  for (auto& pt : truth.trajectories[0]) pt.x = 20.2, pt.y = 19.6;
  const SpotSet spots = localize_movie(render_movie(truth, p), LocalizerParams{});
  ASSERT_EQ(spots.size(), 25u);
  for (std::size_t i = 0; i < spots.size(); ++i) {
    EXPECT_EQ(spots[i].frame, static_cast<int>(i));
    EXPECT_NEAR(spots[i].x, 20.2, 0.02);
  }
}

TEST(LocalizeMovie, BlinkingRespected) {
  SimParams p;
  p.field = 40;
  p.n_frames = 60;
  p.n_particles = 1;
  p.snr = std::numeric_limits<double>::infinity();
  p.blinking = true;
  p.seed = 4;
  auto truth = simulate_walks(p);
  for (auto& pt : truth.trajectories[0]) pt.x = 20.2, pt.y = 19.6;
  const SpotSet spots = localize_movie(render_movie(truth, p), LocalizerParams{});
  std::vector<int> frames;
  for (const Spot& s : spots.spots()) frames.push_back(s.frame);
  std::vector<int> visible;
  for (const auto& pt : truth.trajectories[0]) {
    if (pt.visible) visible.push_back(pt.frame);
  }
  EXPECT_EQ(frames, visible);
  EXPECT_LT(visible.size(), 60u);
}

TEST(LocalizeMovie, PureNoiseDetectionsAreWeak) {
  SimParams p;
  p.field = 64;
  p.n_frames = 20;
  p.n_particles = 0;
  p.snr = 4;
  const SpotSet noise = localize_movie(render_movie(simulate_walks(p), p), LocalizerParams{});
  // Local maxima above 3 sigma of the filtered field: a few per frame.
  EXPECT_GT(noise.size(), 0u);
  EXPECT_LT(noise.size(), 20u * 64 * 64 * normal_tail(3.0));
  double mean_q = 0;
  for (const Spot& s : noise.spots()) mean_q += s.quality;
  mean_q /= noise.size();
  EXPECT_LT(mean_q, 4.0);  // a real spot at this snr has quality about 4
}

TEST(LocalizeMovie, ErrorShrinksAndQualityGrowsWithSnr) {
  double prev_rmse = 1e9, prev_q = 0;
  for (double snr : {1.0, 2.0, 3.0, 4.0, 5.0}) {
    SimParams p;
    p.field = 128;
    p.n_frames = 40;
    p.n_particles = 30;  // enough points that sampling noise stays below the trend
    p.snr = snr;
    p.seed = 31;
    const auto truth = simulate_walks(p);
    const SpotSet spots = localize_movie(render_movie(truth, p), LocalizerParams{});
    double se = 0, q = 0;
    int matched = 0;
    for (const Spot& s : spots.spots()) {
      double best = 1.5 * 1.5;
      for (const auto& traj : truth.trajectories) {
        const auto& t = traj[s.frame];
        best = std::min(best, (t.x - s.x) * (t.x - s.x) + (t.y - s.y) * (t.y - s.y));
      }
      if (best < 1.5 * 1.5) {
        se += best;
        q += s.quality;
        ++matched;
      }
    }
    ASSERT_GT(matched, 0);
    const double rmse = std::sqrt(se / matched);
    EXPECT_LT(rmse, prev_rmse) << "snr " << snr;
    EXPECT_GT(q / matched, prev_q) << "snr " << snr;
    prev_rmse = rmse;
    prev_q = q / matched;
  }
}

TEST(LocalizeMovie, ScanOrderInvariant) {
  SimParams p;
  p.field = 48;
  p.n_frames = 6;
  p.n_particles = 10;
  const Movie m = render_movie(simulate_walks(p), p);
  const SpotSet a = localize_movie(m, LocalizerParams{});
  // Mirror the movie horizontally; the mirrored spot set must match.
  Movie mirrored = m;
  for (int f = 0; f < m.n_frames; ++f) {
    for (int y = 0; y < m.height; ++y) {
      for (int x = 0; x < m.width; ++x) {
        mirrored.pixels[(static_cast<std::size_t>(f) * m.height + y) * m.width + x] =
            m.at(f, m.width - 1 - x, y);
      }
    }
  }
  const SpotSet b = localize_movie(mirrored, LocalizerParams{});
  ASSERT_EQ(a.size(), b.size());
  std::vector<std::tuple<int, double, double>> pa, pb;
  for (const Spot& s : a.spots()) pa.emplace_back(s.frame, std::round(s.x * 1e4), std::round(s.y * 1e4));
  for (const Spot& s : b.spots()) pb.emplace_back(s.frame, std::round((m.width - s.x) * 1e4), std::round(s.y * 1e4));
  std::sort(pa.begin(), pa.end());
  std::sort(pb.begin(), pb.end());
  int close = 0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    close += std::get<0>(pa[i]) == std::get<0>(pb[i]) &&
             std::abs(std::get<1>(pa[i]) - std::get<1>(pb[i])) < 1e2 &&
             std::abs(std::get<2>(pa[i]) - std::get<2>(pb[i])) < 1e2;
  }
  EXPECT_GE(close, static_cast<int>(pa.size()) - 2);
}

TEST(LocalizeMovie, DeskPresetCountNearTruth) {
  SimParams p;
  p.field = 128;
  p.n_frames = 20;
  p.n_particles = 50;
  p.snr = 3;
  const auto truth = simulate_walks(p);
  const SpotSet spots = localize_movie(render_movie(truth, p), LocalizerParams{});
  const double visible = static_cast<double>(truth_spots(truth).spots.size());
  EXPECT_NEAR(spots.size() / visible, 1.0, 0.2);
}
