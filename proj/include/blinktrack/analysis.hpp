#pragma once

// Track statistics: mean squared displacement, diffusion coefficients,
// tracking-radius selection from the 2D displacement law, leap (outlier
// link) detection, the forbid-and-reoptimize feedback loop, and
// ground-truth connection metrics.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <vector>

#include "blinktrack/graphgen.hpp"
#include "blinktrack/model.hpp"
#include "blinktrack/simulator.hpp"
#include "blinktrack/solver.hpp"

namespace blinktrack {

// ---------------------------------------------------------------------------
// MSD and diffusion coefficients

struct MsdPoint {
  int lag = 0;         // frames
  double msd = 0.0;    // px^2
  std::size_t pairs = 0;
};

/// Time-averaged MSD over all ordered point pairs of the track whose frame
/// difference equals the lag, for lags 1..max_lag that have a pair.
inline std::vector<MsdPoint> msd(const Track& track, const SpotSet& spots,
                                 int max_lag, std::size_t min_points = 2) {
  if (track.points.size() < std::max<std::size_t>(min_points, 2)) {
    throw InvalidArgument("track too short for MSD: " +
                          std::to_string(track.points.size()) + " points");
  }
  std::vector<double> sum(static_cast<std::size_t>(max_lag) + 1, 0.0);
  std::vector<std::size_t> count(sum.size(), 0);
  std::vector<const Spot*> pts;
  pts.reserve(track.points.size());
  for (SpotId id : track.points) pts.push_back(&spots.by_id(id));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      const int lag = pts[j]->frame - pts[i]->frame;
      if (lag > max_lag) break;
      if (lag < 1) continue;
      sum[lag] += squared_distance(*pts[i], *pts[j]);
      ++count[lag];
    }
  }
  std::vector<MsdPoint> curve;
  for (int lag = 1; lag <= max_lag; ++lag) {
    if (count[lag] > 0) {
      curve.push_back(MsdPoint{lag, sum[lag] / static_cast<double>(count[lag]),
                               count[lag]});
    }
  }
  return curve;
}

struct DiffusionEstimate {
  std::size_t track_id = 0;
  double D = 0.0;          // m^2/s
  double intercept = 0.0;  // px^2, localization-noise floor
  std::size_t n_points = 0;
  bool clamped = false;    // negative slope clamped to D = 0
  std::vector<MsdPoint> msd_curve;
};

/// Weighted (by pair count) least-squares line MSD = a + b * lag over the
/// first `n_fit` lags; D = b * px^2 / (4 * frame_interval).
inline DiffusionEstimate estimate_D(std::span<const MsdPoint> curve,
                                    const Calibration& calibration,
                                    int n_fit = 3) {
  const std::size_t used = std::min<std::size_t>(curve.size(), static_cast<std::size_t>(n_fit));
  if (used < 2) throw InvalidArgument("degenerate MSD curve: need >= 2 lags");
  double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t k = 0; k < used; ++k) {
    const double w = static_cast<double>(curve[k].pairs);
    const double x = curve[k].lag;
    const double y = curve[k].msd;
    sw += w;
    sx += w * x;
    sy += w * y;
    sxx += w * x * x;
    sxy += w * x * y;
  }
  const double det = sw * sxx - sx * sx;
  if (!(det > 0)) throw InvalidArgument("degenerate MSD curve: lags coincide");
  const double slope = (sw * sxy - sx * sy) / det;
  DiffusionEstimate est;
  est.intercept = (sy - slope * sx) / sw;
  est.msd_curve.assign(curve.begin(), curve.end());
  const double px2 = calibration.pixel_size * calibration.pixel_size;
  if (slope < 0) {
    est.D = 0.0;
    est.clamped = true;
  } else {
    est.D = slope * px2 / (4.0 * calibration.frame_interval);
  }
  return est;
}

struct DistributionOptions {
  std::size_t min_points = 5;
  int max_lag = 3;
  int n_fit = 3;
};

/// Diffusion estimates of all tracks with at least `min_points` points and
/// two usable lags.
inline std::vector<DiffusionEstimate> diffusion_distribution(
    const Tracking& tracking, const SpotSet& spots,
    const DistributionOptions& options = {}) {
  std::vector<DiffusionEstimate> out;
  for (std::size_t t = 0; t < tracking.tracks.size(); ++t) {
    const Track& track = tracking.tracks[t];
    if (track.points.size() < options.min_points) continue;
    const auto curve = msd(track, spots, options.max_lag, options.min_points);
    if (std::min<std::size_t>(curve.size(), options.n_fit) < 2) continue;
    DiffusionEstimate est = estimate_D(curve, spots.calibration(), options.n_fit);
    est.track_id = t;
    est.n_points = track.points.size();
    out.push_back(std::move(est));
  }
  return out;
}

/// log10 of D with clamped (zero) estimates mapped to -20.
inline double log10_D(const DiffusionEstimate& est) {
  return std::log10(std::max(est.D, 1e-20));
}

inline void write_distribution_csv(std::ostream& out,
                                   std::span<const DiffusionEstimate> estimates) {
  out << "track_id,n_points,log10_D\n";
  for (const DiffusionEstimate& e : estimates) {
    out << e.track_id << ',' << e.n_points << ','
        << detail::format_number(log10_D(e)) << '\n';
  }
}

/// Histogram of log10 D with fixed-width bins starting at `first_left`.
inline void write_histogram_csv(std::ostream& out,
                                std::span<const DiffusionEstimate> estimates,
                                double first_left = -17.0, double bin_width = 0.1,
                                int bins = 80) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
  for (const DiffusionEstimate& e : estimates) {
    const double k = std::floor((log10_D(e) - first_left) / bin_width);
    if (k >= 0 && k < bins) ++counts[static_cast<std::size_t>(k)];
  }
  out << "bin_left,count\n";
  for (int k = 0; k < bins; ++k) {
    out << detail::format_number(first_left + k * bin_width) << ',' << counts[k]
        << '\n';
  }
}

// ---------------------------------------------------------------------------
// Displacement law

/// Probability that a 2D Brownian displacement after `seconds` stays within
/// `radius` px: 1 - exp(-R^2 / 4Dt).
inline double displacement_probability(double radius, double D, double seconds,
                                       const Calibration& calibration) {
  const double r = radius * calibration.pixel_size;
  return 1.0 - std::exp(-r * r / (4.0 * D * seconds));
}

/// Radius (px) containing a displacement over `gap` frames with probability p.
inline double radius_for_quantile(double D, double gap, double p,
                                  const Calibration& calibration) {
  if (!(p > 0 && p < 1)) throw InvalidArgument("quantile must lie in (0, 1)");
  return std::sqrt(4.0 * D * gap * calibration.frame_interval *
                   std::log(1.0 / (1.0 - p))) /
         calibration.pixel_size;
}

// ---------------------------------------------------------------------------
// Leaps

inline constexpr double kLeapQuantile = 0.99;
inline constexpr double kLeapFloor = 3.0;  // px

/// Per-track leap threshold: radius_for_quantile at p = 0.99 for the track's
/// robust D, estimated from the median squared step (a 2D Brownian r^2/4Dt is
/// Exp(1), median ln 2). Steps over g frames are normalized by sqrt(g).
/// Never below 3 px.
inline double robust_leap_threshold(std::vector<double> normalized_sq_steps,
                                    const Calibration& calibration) {
  if (normalized_sq_steps.empty()) return kLeapFloor;
  const std::size_t mid = normalized_sq_steps.size() / 2;
  std::nth_element(normalized_sq_steps.begin(), normalized_sq_steps.begin() + mid,
                   normalized_sq_steps.end());
  const double median = normalized_sq_steps[mid];
  const double px2 = calibration.pixel_size * calibration.pixel_size;
  const double D = median / std::log(2.0) * px2 / (4.0 * calibration.frame_interval);
  return std::max(kLeapFloor, radius_for_quantile(D, 1.0, kLeapQuantile, calibration));
}

/// Links whose gap-normalized displacement exceeds the threshold (a fixed
/// one, or robust_leap_threshold per track). Joins are never leaps.
inline std::set<ArcKey> detect_leaps(const Tracking& tracking, const SpotSet& spots,
                                     std::optional<double> threshold_radius = {}) {
  std::set<ArcKey> leaps;
  std::vector<double> steps;
  std::vector<ArcKey> keys;
  for (const Track& track : tracking.tracks) {
    steps.clear();
    keys.clear();
    for (std::size_t k = 1; k < track.points.size(); ++k) {
      const Spot& a = spots.by_id(track.points[k - 1]);
      const Spot& b = spots.by_id(track.points[k]);
      const int gap = b.frame - a.frame;
      if (gap < 1) continue;
      steps.push_back(squared_distance(a, b) / gap);
      keys.push_back(ArcKey{a.id, b.id});
    }
    if (steps.empty()) continue;
    const double limit = threshold_radius
                             ? *threshold_radius
                             : robust_leap_threshold(steps, spots.calibration());
    for (std::size_t k = 0; k < steps.size(); ++k) {
      if (std::sqrt(steps[k]) > limit) leaps.insert(keys[k]);
    }
  }
  return leaps;
}

// ---------------------------------------------------------------------------
// Feedback loop

struct FeedbackReport {
  int iterations = 0;  // number of solve rounds
  bool converged = false;
  std::vector<std::set<ArcKey>> removed;  // arcs forbidden after each round
  std::vector<double> objectives;         // optimum of each round
  std::set<ArcKey> forbidden;             // all arcs forbidden in total
  Tracking tracking;
};

/// Solve, forbid detected leaps, re-optimize; repeat until no leaps remain
/// or `max_iterations` rounds have been solved.
inline FeedbackReport feedback_loop(const SpotSet& spots, const GraphParams& params,
                                    int max_iterations,
                                    std::optional<double> leap_threshold = {}) {
  if (max_iterations < 1) throw InvalidArgument("max iterations must be >= 1");
  const CandidateGraph graph = build_graph(spots, params);
  TrackSolver solver(graph);
  FeedbackReport report;
  report.tracking = solver.solve();
  report.forbidden = params.forbidden_arcs;
  for (int round = 1;; ++round) {
    report.iterations = round;
    report.objectives.push_back(report.tracking.objective);
    std::set<ArcKey> leaps = detect_leaps(report.tracking, spots, leap_threshold);
    if (leaps.empty()) {
      report.converged = true;
      break;
    }
    if (round == max_iterations) break;
    report.forbidden.insert(leaps.begin(), leaps.end());
    report.tracking = solver.forbid(leaps);
    report.removed.push_back(std::move(leaps));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Ground-truth evaluation

struct ConnectionMetrics {
  std::size_t computed = 0;           // links in the tracking
  std::size_t false_positives = 0;
  std::size_t truth_connections = 0;  // between represented truth points
  std::size_t false_negatives = 0;
  std::size_t matched_spots = 0;

  double fp_rate() const {
    return computed ? static_cast<double>(false_positives) / computed : 0.0;
  }
  double fn_rate() const {
    return truth_connections
               ? static_cast<double>(false_negatives) / truth_connections
               : 0.0;
  }
};

/// Each spot is matched to the nearest visible truth particle of its frame
/// within `match_radius` (several spots may match one particle). A particle
/// is represented in a frame if some spot matched it there; its truth
/// connections join consecutive represented frames, spanning blink gaps. An
/// inter-frame link is correct if both ends match the same particle in
/// consecutive represented frames; a join is correct if both ends match the
/// same particle.
inline ConnectionMetrics evaluate(const Tracking& tracking, const SpotSet& spots,
                                  const GroundTruth& truth, double match_radius) {
  const int frames = spots.frames();
  // Truth points per frame as spots whose id is the particle index.
  std::vector<std::vector<Spot>> by_frame(static_cast<std::size_t>(std::max(frames, 0)));
  for (std::size_t p = 0; p < truth.trajectories.size(); ++p) {
    for (const TruthPoint& pt : truth.trajectories[p]) {
      if (!pt.visible || pt.frame < 0 || pt.frame >= frames) continue;
      by_frame[pt.frame].push_back(
          Spot{static_cast<SpotId>(p), pt.frame, pt.x, pt.y, 1.0, 0.0, false});
    }
  }
  const double cell = std::max(match_radius, 1e-6);
  std::vector<int> particle(spots.size(), -1);
  ConnectionMetrics metrics;
  {
    std::size_t begin = 0;
    for (int f = 0; f < frames; ++f) {
      std::size_t end = begin;
      while (end < spots.size() && spots[end].frame == f) ++end;
      if (begin < end && !by_frame[f].empty()) {
        const detail::FrameGrid grid(by_frame[f], 0, cell);
        for (std::size_t i = begin; i < end; ++i) {
          double best = std::numeric_limits<double>::infinity();
          grid.for_each_within(spots[i], match_radius, 1,
                               [&](std::uint32_t, const Spot& t) {
                                 const double d = squared_distance(spots[i], t);
                                 if (d < best ||
                                     (d == best && t.id < particle[i])) {
                                   best = d;
                                   particle[i] = static_cast<int>(t.id);
                                 }
                               });
          if (particle[i] >= 0) ++metrics.matched_spots;
        }
      }
      begin = end;
    }
  }

  // next_represented[(p, f)] = following represented frame of particle p.
  std::map<std::pair<int, int>, int> next_represented;
  {
    std::vector<std::set<int>> frames_of(truth.trajectories.size());
    for (std::size_t i = 0; i < spots.size(); ++i) {
      if (particle[i] >= 0) frames_of[particle[i]].insert(spots[i].frame);
    }
    for (std::size_t p = 0; p < frames_of.size(); ++p) {
      int prev = -1;
      for (int f : frames_of[p]) {
        if (prev >= 0) {
          next_represented[{static_cast<int>(p), prev}] = f;
          ++metrics.truth_connections;
        }
        prev = f;
      }
    }
  }

  std::set<std::pair<int, int>> found;
  for (const Track& track : tracking.tracks) {
    for (std::size_t k = 1; k < track.points.size(); ++k) {
      const std::size_t a = spots.index_of(track.points[k - 1]);
      const std::size_t b = spots.index_of(track.points[k]);
      ++metrics.computed;
      const int pa = particle[a];
      const int pb = particle[b];
      if (pa < 0 || pa != pb) {
        ++metrics.false_positives;
        continue;
      }
      if (spots[a].frame == spots[b].frame) continue;  // correct join
      auto it = next_represented.find({pa, spots[a].frame});
      if (it != next_represented.end() && it->second == spots[b].frame) {
        found.insert({pa, spots[a].frame});
      } else {
        ++metrics.false_positives;
      }
    }
  }
  metrics.false_negatives = metrics.truth_connections - found.size();
  return metrics;
}

/// Ground-truth tracking over truth_spots(truth): one track per particle
/// with at least one visible in-field point.
inline Tracking truth_tracking(const TruthSpots& ts) {
  std::map<int, Track> by_particle;
  for (std::size_t i = 0; i < ts.spots.size(); ++i) {
    by_particle[ts.particle_of[i]].points.push_back(ts.spots[i].id);
  }
  Tracking tracking;
  for (auto& [p, track] : by_particle) tracking.tracks.push_back(std::move(track));
  return tracking;
}

}  // namespace blinktrack
