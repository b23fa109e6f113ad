#pragma once

// Domain types shared by every stage of the pipeline: calibration, spots,
// tracks and the CSV formats used to exchange them.
//
// Spatial coordinates are (x, y) in pixels, time is an integer frame index.
// Pixel (i, j) covers [i, i+1) x [j, j+1), so its center sits at (i+0.5, j+0.5).

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace blinktrack {

// ---------------------------------------------------------------------------
// Errors

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad parameters supplied by the caller.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Malformed input file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// An internal invariant does not hold (missing arc, failed optimality proof).
class InvariantError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Calibration

/// Standard deviation of a Gaussian with the given full width at half maximum.
constexpr double fwhm_to_sigma(double fwhm) {
  return fwhm / (2.0 * 1.1774100225154747);  // sqrt(2 ln 2)
}

struct Calibration {
  double pixel_size = 100e-9;   // m / px
  double frame_interval = 0.1;  // s / frame
  int image_width = 500;        // px
  int image_height = 500;       // px
  // 300 nm diffraction-limited width read as FWHM.
  double psf_sigma = fwhm_to_sigma(300e-9) / 100e-9;  // px

  void validate() const {
    if (!(pixel_size > 0) || !(frame_interval > 0) || image_width <= 0 ||
        image_height <= 0 || !(psf_sigma > 0)) {
      throw InvalidArgument("calibration values must be strictly positive");
    }
  }

  friend bool operator==(const Calibration&, const Calibration&) = default;
};

// ---------------------------------------------------------------------------
// Spots

using SpotId = std::int64_t;

struct Spot {
  SpotId id = 0;
  int frame = 0;
  double x = 0.0;
  double y = 0.0;
  double quality = 1.0;
  double amplitude = 0.0;
  // Set by the localizer when the Gaussian fit diverged and the position
  // comes from the intensity centroid.
  bool centroid_fallback = false;

  friend bool operator==(const Spot&, const Spot&) = default;
};

/// Squared spatial distance in px^2.
inline double squared_distance(const Spot& a, const Spot& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return dx * dx + dy * dy;
}

/// Immutable, validated collection of spots sorted by (frame, id).
class SpotSet {
 public:
  SpotSet() = default;

  SpotSet(std::vector<Spot> spots, int frames, Calibration calibration)
      : spots_(std::move(spots)), frames_(frames), calibration_(calibration) {
    calibration_.validate();
    if (frames_ < 0) throw InvalidArgument("frame count must be non-negative");
    std::sort(spots_.begin(), spots_.end(), [](const Spot& a, const Spot& b) {
      return a.frame != b.frame ? a.frame < b.frame : a.id < b.id;
    });
    index_.reserve(spots_.size());
    for (std::size_t i = 0; i < spots_.size(); ++i) {
      const Spot& s = spots_[i];
      if (s.frame < 0 || s.frame >= frames_) {
        throw InvalidArgument("spot " + std::to_string(s.id) + " has frame " +
                              std::to_string(s.frame) + " outside [0, " +
                              std::to_string(frames_) + ")");
      }
      if (!(s.x >= 0 && s.x < calibration_.image_width && s.y >= 0 &&
            s.y < calibration_.image_height)) {
        throw InvalidArgument("spot " + std::to_string(s.id) +
                              " lies outside the image");
      }
      if (!(s.quality >= 0)) {
        throw InvalidArgument("spot " + std::to_string(s.id) +
                              " has negative quality");
      }
      if (!index_.emplace(s.id, i).second) {
        throw InvalidArgument("duplicate spot id " + std::to_string(s.id));
      }
    }
  }

  /// Frame count inferred as max frame + 1.
  static SpotSet from_spots(std::vector<Spot> spots, Calibration calibration) {
    int frames = 0;
    for (const Spot& s : spots) frames = std::max(frames, s.frame + 1);
    return SpotSet(std::move(spots), frames, calibration);
  }

  const std::vector<Spot>& spots() const { return spots_; }
  std::size_t size() const { return spots_.size(); }
  bool empty() const { return spots_.empty(); }
  int frames() const { return frames_; }
  const Calibration& calibration() const { return calibration_; }
  const Spot& operator[](std::size_t index) const { return spots_[index]; }

  bool contains(SpotId id) const { return index_.contains(id); }

  std::size_t index_of(SpotId id) const {
    auto it = index_.find(id);
    if (it == index_.end()) {
      throw InvalidArgument("unknown spot id " + std::to_string(id));
    }
    return it->second;
  }

  const Spot& by_id(SpotId id) const { return spots_[index_of(id)]; }

 private:
  std::vector<Spot> spots_;
  int frames_ = 0;
  Calibration calibration_;
  std::unordered_map<SpotId, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Tracks

struct Track {
  std::vector<SpotId> points;

  friend bool operator==(const Track&, const Track&) = default;
};

struct Tracking {
  std::vector<Track> tracks;
  double objective = 0.0;

  double log_likelihood() const { return -objective; }
  std::size_t link_count() const {
    std::size_t links = 0;
    for (const Track& t : tracks) links += t.points.size() - 1;
    return links;
  }
};

/// Throws InvariantError unless every spot of `spots` occurs in exactly one
/// track and frames are non-decreasing along each track.
inline void check_partition(const Tracking& tracking, const SpotSet& spots) {
  std::vector<char> seen(spots.size(), 0);
  std::size_t covered = 0;
  for (const Track& track : tracking.tracks) {
    if (track.points.empty()) throw InvariantError("empty track");
    int last_frame = -1;
    for (SpotId id : track.points) {
      if (!spots.contains(id)) {
        throw InvariantError("track references unknown spot " +
                             std::to_string(id));
      }
      const std::size_t idx = spots.index_of(id);
      if (seen[idx]) {
        throw InvariantError("spot " + std::to_string(id) +
                             " appears in more than one track position");
      }
      seen[idx] = 1;
      ++covered;
      if (spots[idx].frame < last_frame) {
        throw InvariantError("track goes backwards in time at spot " +
                             std::to_string(id));
      }
      last_frame = spots[idx].frame;
    }
  }
  if (covered != spots.size()) {
    throw InvariantError("tracking covers " + std::to_string(covered) +
                         " of " + std::to_string(spots.size()) + " spots");
  }
}

// ---------------------------------------------------------------------------
// CSV helpers

namespace detail {

/// Shortest decimal representation that parses back to the same double.
inline std::string format_number(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw Error("number formatting failed");
  return std::string(buf, end);
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

template <typename T>
T parse_field(std::string_view text, std::size_t line_no) {
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw FormatError("line " + std::to_string(line_no) + ": cannot parse '" +
                      std::string(text) + "'");
  }
  return value;
}

/// Reads the header line and all data rows; enforces the expected header and
/// column count.
inline std::vector<std::vector<std::string>> read_csv_rows(
    std::istream& in, std::string_view header) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("missing CSV header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != header) {
    throw FormatError("unexpected CSV header '" + line + "', expected '" +
                      std::string(header) + "'");
  }
  const std::size_t columns = split_fields(header).size();
  std::vector<std::vector<std::string>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_fields(line);
    if (fields.size() != columns) {
      throw FormatError("line " + std::to_string(line_no) + ": expected " +
                        std::to_string(columns) + " fields, got " +
                        std::to_string(fields.size()));
    }
    rows.emplace_back(fields.begin(), fields.end());
  }
  return rows;
}

}  // namespace detail

inline constexpr std::string_view kSpotCsvHeader = "frame,x,y,quality,amplitude";
inline constexpr std::string_view kTrackCsvHeader = "track_id,frame,x,y";

inline void write_spots_csv(std::ostream& out, const SpotSet& spots) {
  out << kSpotCsvHeader << '\n';
  for (const Spot& s : spots.spots()) {
    out << s.frame << ',' << detail::format_number(s.x) << ','
        << detail::format_number(s.y) << ',' << detail::format_number(s.quality)
        << ',' << detail::format_number(s.amplitude) << '\n';
  }
}

/// Spot ids are the 0-based row numbers. `frames` < 0 infers max frame + 1.
inline SpotSet read_spots_csv(std::istream& in, const Calibration& calibration,
                              int frames = -1) {
  const auto rows = detail::read_csv_rows(in, kSpotCsvHeader);
  std::vector<Spot> spots;
  spots.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& f = rows[r];
    Spot s;
    s.id = static_cast<SpotId>(r);
    s.frame = detail::parse_field<int>(f[0], r + 2);
    s.x = detail::parse_field<double>(f[1], r + 2);
    s.y = detail::parse_field<double>(f[2], r + 2);
    s.quality = detail::parse_field<double>(f[3], r + 2);
    s.amplitude = detail::parse_field<double>(f[4], r + 2);
    spots.push_back(s);
  }
  try {
    return frames < 0 ? SpotSet::from_spots(std::move(spots), calibration)
                      : SpotSet(std::move(spots), frames, calibration);
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("invalid spot table: ") + e.what());
  }
}

/// One row per track point; track ids are positions in `tracking.tracks`.
inline void write_tracks_csv(std::ostream& out, const Tracking& tracking,
                             const SpotSet& spots) {
  out << kTrackCsvHeader << '\n';
  for (std::size_t t = 0; t < tracking.tracks.size(); ++t) {
    for (SpotId id : tracking.tracks[t].points) {
      const Spot& s = spots.by_id(id);
      out << t << ',' << s.frame << ',' << detail::format_number(s.x) << ','
          << detail::format_number(s.y) << '\n';
    }
  }
}

/// Tracks reloaded from CSV, with a synthetic spot set (ids = row numbers).
struct TrackTable {
  SpotSet spots;
  Tracking tracking;
  std::vector<std::int64_t> track_ids;  // as written in the file, per track
};

inline TrackTable read_tracks_csv(std::istream& in,
                                  const Calibration& calibration) {
  const auto rows = detail::read_csv_rows(in, kTrackCsvHeader);
  std::vector<Spot> spots;
  Tracking tracking;
  std::vector<std::int64_t> track_ids;
  std::int64_t current = -1;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& f = rows[r];
    const auto track_id = detail::parse_field<std::int64_t>(f[0], r + 2);
    Spot s;
    s.id = static_cast<SpotId>(r);
    s.frame = detail::parse_field<int>(f[1], r + 2);
    s.x = detail::parse_field<double>(f[2], r + 2);
    s.y = detail::parse_field<double>(f[3], r + 2);
    if (track_id != current) {
      if (track_id < current) {
        throw FormatError("line " + std::to_string(r + 2) +
                          ": track ids must be grouped and increasing");
      }
      tracking.tracks.emplace_back();
      track_ids.push_back(track_id);
      current = track_id;
    }
    tracking.tracks.back().points.push_back(s.id);
    spots.push_back(s);
  }
  try {
    return TrackTable{SpotSet::from_spots(std::move(spots), calibration),
                      std::move(tracking), std::move(track_ids)};
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("invalid track table: ") + e.what());
  }
}

}  // namespace blinktrack
