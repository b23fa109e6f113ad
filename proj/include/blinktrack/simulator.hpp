#pragma once

// Ground-truth generator: 2D Brownian walks, power-law blinking, rendered
// movies with Gaussian spots and white noise.
//
// Random streams are derived from the master seed per particle (walk,
// blinking) and per frame (noise), so results do not depend on the order in
// which particles or frames are processed.

#include <array>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "blinktrack/model.hpp"

namespace blinktrack {

struct SimParams {
  double diffusion_coefficient = 1e-13;  // m^2/s
  int n_particles = 100;
  int n_frames = 500;
  int field = 500;  // px, square
  double snr = 3.0;  // peak amplitude / noise sd; infinity disables noise
  bool blinking = false;
  double tau = 1.0;    // s
  double alpha = -2.0;
  int t_max_state = 100;  // frames
  std::uint64_t seed = 1;

  double pixel_size = 100e-9;
  double frame_interval = 0.1;
  double psf_sigma = fwhm_to_sigma(300e-9) / 100e-9;
  double amplitude = 1.0;
  double background = 0.1;

  Calibration calibration() const {
    return Calibration{pixel_size, frame_interval, field, field, psf_sigma};
  }

  void validate() const {
    calibration().validate();
    if (!(diffusion_coefficient >= 0)) {
      throw InvalidArgument("diffusion coefficient must be >= 0");
    }
    if (n_particles < 0) throw InvalidArgument("particle count must be >= 0");
    if (n_frames < 2) throw InvalidArgument("need at least 2 frames");
    if (!(snr > 0)) throw InvalidArgument("snr must be > 0");
    if (!(alpha < -1)) throw InvalidArgument("alpha must be < -1");
    if (!(tau > 0)) throw InvalidArgument("tau must be > 0");
    if (t_max_state < 1) throw InvalidArgument("t_max_state must be >= 1");
    if (!(amplitude > 0)) throw InvalidArgument("amplitude must be > 0");
  }

  /// Per-axis standard deviation of one frame step, in px.
  double step_sigma() const {
    return std::sqrt(2.0 * diffusion_coefficient * frame_interval) / pixel_size;
  }
};

struct TruthPoint {
  int frame = 0;
  double x = 0.0;
  double y = 0.0;
  bool visible = true;

  friend bool operator==(const TruthPoint&, const TruthPoint&) = default;
};

struct GroundTruth {
  std::vector<std::vector<TruthPoint>> trajectories;  // [particle][frame]
  SimParams params;
  Calibration calibration;
};

// ---------------------------------------------------------------------------
// Random streams

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

enum class Stream : std::uint64_t { kWalk = 1, kBlink = 2, kNoise = 3 };

inline std::mt19937_64 make_stream(std::uint64_t seed, Stream kind,
                                   std::uint64_t index) {
  const std::uint64_t base =
      splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(kind)));
  return std::mt19937_64(splitmix64(base + index));
}

// ---------------------------------------------------------------------------
// Blinking

/// Normalized pmf over on/off durations k = 1..t_max_state frames,
/// pmf(k) proportional to (k * frame_interval / tau)^alpha. Index 0 is k = 1.
inline std::vector<double> blink_duration_pmf(const SimParams& params) {
  std::vector<double> pmf(static_cast<std::size_t>(params.t_max_state));
  double total = 0.0;
  for (int k = 1; k <= params.t_max_state; ++k) {
    pmf[k - 1] = std::pow(k * params.frame_interval / params.tau, params.alpha);
    total += pmf[k - 1];
  }
  for (double& p : pmf) p /= total;
  return pmf;
}

/// Fair-coin initial state, then alternating states whose durations are
/// drawn from blink_duration_pmf.
inline std::vector<bool> blinking_sequence(const SimParams& params, int n_frames,
                                           std::mt19937_64& rng) {
  std::vector<bool> visible(static_cast<std::size_t>(n_frames), true);
  if (!params.blinking) return visible;
  const auto pmf = blink_duration_pmf(params);
  std::discrete_distribution<int> duration(pmf.begin(), pmf.end());
  bool on = std::bernoulli_distribution(0.5)(rng);
  int frame = 0;
  while (frame < n_frames) {
    const int length = duration(rng) + 1;
    const int stop = std::min(n_frames, frame + length);
    for (; frame < stop; ++frame) visible[frame] = on;
    on = !on;
  }
  return visible;
}

/// Visibility per particle and frame. All true when blinking is off.
inline std::vector<std::vector<bool>> simulate_blinking(const SimParams& params,
                                                        int n_frames) {
  std::vector<std::vector<bool>> result;
  result.reserve(params.n_particles);
  for (int p = 0; p < params.n_particles; ++p) {
    auto rng = make_stream(params.seed, Stream::kBlink, static_cast<std::uint64_t>(p));
    result.push_back(blinking_sequence(params, n_frames, rng));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Walks

/// Uniform start in [0, field)^2, then i.i.d. Gaussian per-axis increments
/// with sd step_sigma(). Particles may leave the field.
inline GroundTruth simulate_walks(const SimParams& params) {
  params.validate();
  GroundTruth truth;
  truth.params = params;
  truth.calibration = params.calibration();
  const double sigma = params.step_sigma();
  const auto visibility = simulate_blinking(params, params.n_frames);
  truth.trajectories.resize(params.n_particles);
  for (int p = 0; p < params.n_particles; ++p) {
    auto rng = make_stream(params.seed, Stream::kWalk, static_cast<std::uint64_t>(p));
    std::uniform_real_distribution<double> start(0.0, params.field);
    std::normal_distribution<double> step(0.0, 1.0);
    double x = start(rng);
    double y = start(rng);
    auto& traj = truth.trajectories[p];
    traj.reserve(params.n_frames);
    for (int f = 0; f < params.n_frames; ++f) {
      if (f > 0) {
        x += sigma * step(rng);
        y += sigma * step(rng);
      }
      traj.push_back(TruthPoint{f, x, y, visibility[p][f]});
    }
  }
  return truth;
}

/// Concatenates the particles of two simulations over the same frames.
inline GroundTruth combine(GroundTruth a, const GroundTruth& b) {
  if (a.calibration != b.calibration ||
      a.params.n_frames != b.params.n_frames) {
    throw InvalidArgument("cannot combine simulations with different layouts");
  }
  a.trajectories.insert(a.trajectories.end(), b.trajectories.begin(),
                        b.trajectories.end());
  a.params.n_particles += b.params.n_particles;
  return a;
}

inline bool inside_field(const TruthPoint& p, const Calibration& cal) {
  return p.x >= 0 && p.x < cal.image_width && p.y >= 0 && p.y < cal.image_height;
}

/// Visible in-field ground-truth positions as spots, ids in (frame, particle)
/// order, unit quality. `particle_of[i]` gives the particle of spot index i.
struct TruthSpots {
  SpotSet spots;
  std::vector<int> particle_of;
};

inline TruthSpots truth_spots(const GroundTruth& truth) {
  const int frames = truth.trajectories.empty()
                         ? truth.params.n_frames
                         : static_cast<int>(truth.trajectories.front().size());
  std::vector<Spot> spots;
  std::vector<int> particle;
  for (int f = 0; f < frames; ++f) {
    for (std::size_t p = 0; p < truth.trajectories.size(); ++p) {
      const TruthPoint& pt = truth.trajectories[p][f];
      if (!pt.visible || !inside_field(pt, truth.calibration)) continue;
      spots.push_back(Spot{static_cast<SpotId>(spots.size()), f, pt.x, pt.y, 1.0,
                           truth.params.amplitude, false});
      particle.push_back(static_cast<int>(p));
    }
  }
  return TruthSpots{SpotSet(std::move(spots), frames, truth.calibration),
                    std::move(particle)};
}

// ---------------------------------------------------------------------------
// Movies

struct Movie {
  int width = 0;
  int height = 0;
  int n_frames = 0;
  Calibration calibration;
  std::vector<float> pixels;  // frame-major, row-major

  float at(int frame, int x, int y) const {
    return pixels[(static_cast<std::size_t>(frame) * height + y) * width + x];
  }
  std::span<const float> frame(int f) const {
    const std::size_t size = static_cast<std::size_t>(width) * height;
    return std::span<const float>(pixels).subspan(f * size, size);
  }

  void validate() const {
    if (width <= 0 || height <= 0 || n_frames < 0) {
      throw InvalidArgument("invalid movie dimensions");
    }
    if (pixels.size() != static_cast<std::size_t>(width) * height * n_frames) {
      throw InvalidArgument("movie pixel count does not match its dimensions");
    }
    for (float v : pixels) {
      if (!std::isfinite(v)) throw InvalidArgument("movie has non-finite pixels");
    }
  }
};

/// Adds amplitude * exp(-r^2 / 2 sigma^2) at every pixel center within
/// 3 sigma of (x, y).
inline void add_gaussian_spot(std::vector<double>& frame, int width, int height,
                              double x, double y, double amplitude,
                              double sigma) {
  const double half = 3.0 * sigma;
  const int x0 = std::max(0, static_cast<int>(std::ceil(x - half - 0.5)));
  const int x1 = std::min(width - 1, static_cast<int>(std::floor(x + half - 0.5)));
  const int y0 = std::max(0, static_cast<int>(std::ceil(y - half - 0.5)));
  const int y1 = std::min(height - 1, static_cast<int>(std::floor(y + half - 0.5)));
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int py = y0; py <= y1; ++py) {
    const double dy = py + 0.5 - y;
    for (int px = x0; px <= x1; ++px) {
      const double dx = px + 0.5 - x;
      frame[static_cast<std::size_t>(py) * width + px] +=
          amplitude * std::exp(-(dx * dx + dy * dy) * inv);
    }
  }
}

inline Movie render_movie(const GroundTruth& truth, const SimParams& params) {
  params.validate();
  Movie movie;
  movie.width = movie.height = params.field;
  movie.n_frames = truth.trajectories.empty()
                       ? params.n_frames
                       : static_cast<int>(truth.trajectories.front().size());
  movie.calibration = params.calibration();
  const std::size_t frame_size = static_cast<std::size_t>(movie.width) * movie.height;
  movie.pixels.resize(frame_size * movie.n_frames);
  const double noise_sd = std::isinf(params.snr) ? 0.0 : params.amplitude / params.snr;

  std::vector<double> buffer(frame_size);
  for (int f = 0; f < movie.n_frames; ++f) {
    std::fill(buffer.begin(), buffer.end(), params.background);
    for (const auto& traj : truth.trajectories) {
      const TruthPoint& pt = traj[f];
      if (!pt.visible) continue;
      add_gaussian_spot(buffer, movie.width, movie.height, pt.x, pt.y,
                        params.amplitude, params.psf_sigma);
    }
    if (noise_sd > 0) {
      auto rng = make_stream(params.seed, Stream::kNoise, static_cast<std::uint64_t>(f));
      std::normal_distribution<double> noise(0.0, noise_sd);
      for (double& v : buffer) v += noise(rng);
    }
    std::transform(buffer.begin(), buffer.end(),
                   movie.pixels.begin() + static_cast<std::ptrdiff_t>(f * frame_size),
                   [](double v) { return static_cast<float>(v); });
  }
  return movie;
}

// ---------------------------------------------------------------------------
// Movie container: "SMMV", u32 version, u32 width, u32 height, u32 frames,
// f64 pixel size (m), f64 frame interval (s), f32 pixels. Little-endian.

namespace detail {

template <typename T>
void put_le(std::ostream& out, T value) {
  auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  out.write(bytes.data(), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  std::array<char, sizeof(T)> bytes{};
  if (!in.read(bytes.data(), sizeof(T))) {
    throw FormatError("movie file is truncated");
  }
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  return std::bit_cast<T>(bytes);
}

}  // namespace detail

inline constexpr std::uint32_t kMovieVersion = 1;

inline void write_movie(std::ostream& out, const Movie& movie) {
  movie.validate();
  out.write("SMMV", 4);
  detail::put_le<std::uint32_t>(out, kMovieVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(movie.width));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(movie.height));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(movie.n_frames));
  detail::put_le<double>(out, movie.calibration.pixel_size);
  detail::put_le<double>(out, movie.calibration.frame_interval);
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(movie.pixels.data()),
              static_cast<std::streamsize>(movie.pixels.size() * sizeof(float)));
  } else {
    for (float v : movie.pixels) detail::put_le<float>(out, v);
  }
}

/// The container carries no PSF width; `psf_sigma` fills the calibration.
inline Movie read_movie(std::istream& in,
                        double psf_sigma = Calibration{}.psf_sigma) {
  char magic[4] = {};
  if (!in.read(magic, 4) || std::memcmp(magic, "SMMV", 4) != 0) {
    throw FormatError("not an SMMV movie (bad magic bytes)");
  }
  const auto version = detail::get_le<std::uint32_t>(in);
  if (version != kMovieVersion) {
    throw FormatError("unsupported movie version " + std::to_string(version));
  }
  Movie movie;
  movie.width = static_cast<int>(detail::get_le<std::uint32_t>(in));
  movie.height = static_cast<int>(detail::get_le<std::uint32_t>(in));
  movie.n_frames = static_cast<int>(detail::get_le<std::uint32_t>(in));
  movie.calibration.pixel_size = detail::get_le<double>(in);
  movie.calibration.frame_interval = detail::get_le<double>(in);
  movie.calibration.image_width = movie.width;
  movie.calibration.image_height = movie.height;
  movie.calibration.psf_sigma = psf_sigma;
  const std::size_t count =
      static_cast<std::size_t>(movie.width) * movie.height * movie.n_frames;
  movie.pixels.resize(count);
  for (std::size_t i = 0; i < count; ++i) movie.pixels[i] = detail::get_le<float>(in);
  try {
    movie.calibration.validate();
    movie.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("invalid movie: ") + e.what());
  }
  return movie;
}

/// Binary 16-bit PGM of one frame, min-max scaled to 0..65535.
inline void write_pgm(std::ostream& out, const Movie& movie, int frame) {
  const auto pixels = movie.frame(frame);
  const auto [lo, hi] = std::minmax_element(pixels.begin(), pixels.end());
  const double range = *hi > *lo ? static_cast<double>(*hi) - *lo : 1.0;
  out << "P5\n" << movie.width << ' ' << movie.height << "\n65535\n";
  for (float v : pixels) {
    const auto level = static_cast<std::uint16_t>(
        std::lround((static_cast<double>(v) - *lo) / range * 65535.0));
    const char bytes[2] = {static_cast<char>(level >> 8),
                           static_cast<char>(level & 0xff)};
    out.write(bytes, 2);
  }
}

// ---------------------------------------------------------------------------
// Ground-truth CSV: particle_id,frame,x,y,visible

inline constexpr std::string_view kTruthCsvHeader = "particle_id,frame,x,y,visible";

inline void write_truth_csv(std::ostream& out, const GroundTruth& truth) {
  out << kTruthCsvHeader << '\n';
  for (std::size_t p = 0; p < truth.trajectories.size(); ++p) {
    for (const TruthPoint& pt : truth.trajectories[p]) {
      out << p << ',' << pt.frame << ',' << detail::format_number(pt.x) << ','
          << detail::format_number(pt.y) << ',' << (pt.visible ? 1 : 0) << '\n';
    }
  }
}

/// Rows must be grouped by particle id (0, 1, ...) and cover the same frames.
inline GroundTruth read_truth_csv(std::istream& in, const Calibration& calibration) {
  const auto rows = detail::read_csv_rows(in, kTruthCsvHeader);
  GroundTruth truth;
  truth.calibration = calibration;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& f = rows[r];
    const auto particle = detail::parse_field<std::size_t>(f[0], r + 2);
    TruthPoint pt;
    pt.frame = detail::parse_field<int>(f[1], r + 2);
    pt.x = detail::parse_field<double>(f[2], r + 2);
    pt.y = detail::parse_field<double>(f[3], r + 2);
    const int visible = detail::parse_field<int>(f[4], r + 2);
    if (visible != 0 && visible != 1) {
      throw FormatError("line " + std::to_string(r + 2) + ": visible must be 0 or 1");
    }
    pt.visible = visible == 1;
    if (particle == truth.trajectories.size()) truth.trajectories.emplace_back();
    if (particle + 1 != truth.trajectories.size()) {
      throw FormatError("line " + std::to_string(r + 2) +
                        ": particle ids must be consecutive and grouped");
    }
    auto& traj = truth.trajectories.back();
    if (pt.frame != static_cast<int>(traj.size())) {
      throw FormatError("line " + std::to_string(r + 2) +
                        ": frames must run 0, 1, 2, ... per particle");
    }
    traj.push_back(pt);
  }
  truth.params.n_particles = static_cast<int>(truth.trajectories.size());
  truth.params.n_frames =
      truth.trajectories.empty() ? 0 : static_cast<int>(truth.trajectories.front().size());
  for (const auto& traj : truth.trajectories) {
    if (static_cast<int>(traj.size()) != truth.params.n_frames) {
      throw FormatError("all particles must cover the same frames");
    }
  }
  truth.params.field = calibration.image_width;
  truth.params.pixel_size = calibration.pixel_size;
  truth.params.frame_interval = calibration.frame_interval;
  truth.params.psf_sigma = calibration.psf_sigma;
  return truth;
}

}  // namespace blinktrack
