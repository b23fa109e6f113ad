#pragma once

// Scaled-down simulation studies shared by the CLI and the acceptance suite:
// the desk preset, the S/N sweep through the full pipeline, tracking-radius
// runs on ground-truth positions, and arc-count scaling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "blinktrack/analysis.hpp"
#include "blinktrack/graphgen.hpp"
#include "blinktrack/localizer.hpp"
#include "blinktrack/simulator.hpp"
#include "blinktrack/solver.hpp"

namespace blinktrack {

/// 128 x 128 px, 100 frames, 50 particles, D = 1e-13.
inline SimParams desk_preset() {
  SimParams p;
  p.field = 128;
  p.n_frames = 100;
  p.n_particles = 50;
  p.diffusion_coefficient = 1e-13;
  return p;
}

/// Tracking radius holding a one-frame displacement with probability p,
/// quality-scaled penalties.
inline GraphParams radius_rule(const SimParams& sim, int max_frame_gap = 1,
                               double p = kLeapQuantile) {
  GraphParams gp;
  gp.tracking_radius =
      radius_for_quantile(sim.diffusion_coefficient, 1.0, p, sim.calibration());
  gp.max_frame_gap = max_frame_gap;
  gp.quality_scaling = true;
  return gp;
}

inline constexpr double kMatchRadius = 2.0;  // px

struct PipelineResult {
  std::size_t truth_points = 0;  // visible, in field
  std::size_t spots = 0;
  ConnectionMetrics metrics;
};

/// simulate -> render -> localize -> track -> evaluate.
inline PipelineResult run_pipeline(const SimParams& sim, const LocalizerParams& lp,
                                   const GraphParams& gp,
                                   double match_radius = kMatchRadius) {
  const GroundTruth truth = simulate_walks(sim);
  const SpotSet spots = localize_movie(render_movie(truth, sim), lp);
  const Tracking tracking = solve(build_graph(spots, gp));
  PipelineResult r;
  r.truth_points = truth_spots(truth).spots.size();
  r.spots = spots.size();
  r.metrics = evaluate(tracking, spots, truth, match_radius);
  return r;
}

inline void accumulate(ConnectionMetrics& total, const ConnectionMetrics& m) {
  total.computed += m.computed;
  total.false_positives += m.false_positives;
  total.truth_connections += m.truth_connections;
  total.false_negatives += m.false_negatives;
  total.matched_spots += m.matched_spots;
}

struct SweepPoint {
  double snr = 0.0;
  std::size_t spots = 0;
  ConnectionMetrics metrics;  // pooled over seeds
};

/// One pooled point per snr; the same seeds are used at every snr.
inline std::vector<SweepPoint> snr_sweep(SimParams base, std::span<const double> snrs,
                                         std::span<const std::uint64_t> seeds,
                                         const LocalizerParams& lp,
                                         const GraphParams& gp,
                                         double match_radius = kMatchRadius) {
  std::vector<SweepPoint> out;
  for (double snr : snrs) {
    SweepPoint point;
    point.snr = snr;
    for (std::uint64_t seed : seeds) {
      base.snr = snr;
      base.seed = seed;
      const PipelineResult r = run_pipeline(base, lp, gp, match_radius);
      point.spots += r.spots;
      accumulate(point.metrics, r.metrics);
    }
    out.push_back(point);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Diffusion distributions on ground-truth positions

inline std::vector<double> log10_values(std::span<const DiffusionEstimate> estimates) {
  std::vector<double> v;
  v.reserve(estimates.size());
  for (const DiffusionEstimate& e : estimates) v.push_back(log10_D(e));
  return v;
}

/// Linear-interpolated empirical quantile.
inline double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw InvalidArgument("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - lo) * (values[hi] - values[lo]);
}

inline double median(std::vector<double> values) {
  return quantile(std::move(values), 0.5);
}

inline double fraction_above(std::span<const double> values, double threshold) {
  if (values.empty()) return 0.0;
  const auto n = std::count_if(values.begin(), values.end(),
                               [&](double v) { return v > threshold; });
  return static_cast<double>(n) / static_cast<double>(values.size());
}

struct RadiusRun {
  std::vector<double> truth;     // log10 D of ground-truth tracks
  std::vector<double> tracked;   // log10 D after tracking
  std::vector<double> feedback;  // after feedback_loop, if requested
  int feedback_iterations = 0;
};

/// Tracks ground-truth positions of `sim` (blinking as configured) and
/// estimates D per track; `feedback_rounds` > 0 also runs the feedback loop.
inline RadiusRun radius_experiment(const SimParams& sim, const GraphParams& gp,
                                   int feedback_rounds = 0,
                                   const DistributionOptions& options = {}) {
  const TruthSpots ts = truth_spots(simulate_walks(sim));
  RadiusRun run;
  run.truth = log10_values(diffusion_distribution(truth_tracking(ts), ts.spots, options));
  run.tracked = log10_values(
      diffusion_distribution(solve(build_graph(ts.spots, gp)), ts.spots, options));
  if (feedback_rounds > 0) {
    const FeedbackReport report = feedback_loop(ts.spots, gp, feedback_rounds);
    run.feedback = log10_values(diffusion_distribution(report.tracking, ts.spots, options));
    run.feedback_iterations = report.iterations;
  }
  return run;
}

inline void append(RadiusRun& total, const RadiusRun& run) {
  total.truth.insert(total.truth.end(), run.truth.begin(), run.truth.end());
  total.tracked.insert(total.tracked.end(), run.tracked.begin(), run.tracked.end());
  total.feedback.insert(total.feedback.end(), run.feedback.begin(), run.feedback.end());
  total.feedback_iterations = std::max(total.feedback_iterations, run.feedback_iterations);
}

// ---------------------------------------------------------------------------
// Arc-count scaling

/// `density` points per frame, uniform over the field.
inline SpotSet uniform_spots(int density, int frames, int field, std::uint64_t seed) {
  std::mt19937_64 rng(splitmix64(seed));
  std::uniform_real_distribution<double> pos(0.0, field);
  std::vector<Spot> spots;
  spots.reserve(static_cast<std::size_t>(density) * frames);
  for (int f = 0; f < frames; ++f) {
    for (int k = 0; k < density; ++k) {
      const double x = pos(rng);
      const double y = pos(rng);
      spots.push_back(Spot{static_cast<SpotId>(spots.size()), f, x, y, 1.0, 1.0, false});
    }
  }
  Calibration cal;
  cal.image_width = cal.image_height = field;
  return SpotSet(std::move(spots), frames, cal);
}

/// Least-squares slope of log y against log x.
inline double power_law_exponent(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw InvalidArgument("power-law fit needs >= 2 paired samples");
  }
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= x.size();
  my /= y.size();
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  if (!(sxx > 0)) throw InvalidArgument("power-law fit needs distinct x values");
  return sxy / sxx;
}

}  // namespace blinktrack
