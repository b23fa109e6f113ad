#pragma once

// Candidate arcs for the track-partition problem.
//
// Every spot may be linked to one successor in a later frame (at most
// max_frame_gap frames later, within tracking_radius) or, as a "join", to a
// duplicate detection in the same frame. Linking costs the squared
// space-time distance; leaving a spot without predecessor or successor costs
// a penalty. Arcs costing more than the two penalties they save can never be
// part of an optimum, which is what makes the radius cut-off safe.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "blinktrack/model.hpp"

namespace blinktrack {

/// Directed link between two spots, identified by spot ids.
struct ArcKey {
  SpotId source = 0;
  SpotId target = 0;

  auto operator<=>(const ArcKey&) const = default;
};

struct GraphParams {
  double tracking_radius = 5.0;  // px
  int max_frame_gap = 3;         // frames
  // Start/end penalty C. Unset means (R^2 + g_max^2) / 2.
  std::optional<double> penalty;
  double join_radius = 2.0;  // px, 0 disables joins
  bool quality_scaling = false;
  double quality_floor = 0.2;
  std::set<ArcKey> forbidden_arcs;

  double resolved_penalty() const {
    if (penalty) return *penalty;
    return 0.5 * (tracking_radius * tracking_radius +
                  static_cast<double>(max_frame_gap) * max_frame_gap);
  }

  void validate() const {
    if (!(tracking_radius > 0)) {
      throw InvalidArgument("tracking radius must be > 0");
    }
    if (max_frame_gap < 1) throw InvalidArgument("max frame gap must be >= 1");
    if (!(resolved_penalty() > 0)) throw InvalidArgument("penalty must be > 0");
    if (!(join_radius >= 0)) throw InvalidArgument("join radius must be >= 0");
    if (!(quality_floor > 0 && quality_floor <= 1)) {
      throw InvalidArgument("quality floor must lie in (0, 1]");
    }
  }
};

/// Squared space-time distance in px^2 + frame^2.
inline double arc_cost(const Spot& a, const Spot& b) {
  const double dt = static_cast<double>(b.frame - a.frame);
  return squared_distance(a, b) + dt * dt;
}

/// Same-frame link: spatial cost plus the mean of the end penalty of `a`
/// and the start penalty of `b`, the two penalties the link avoids.
inline double join_cost(const Spot& a, const Spot& b, double end_penalty_a,
                        double start_penalty_b) {
  return squared_distance(a, b) + 0.5 * (end_penalty_a + start_penalty_b);
}

inline double join_cost(const Spot& a, const Spot& b, double penalty) {
  return join_cost(a, b, penalty, penalty);
}

/// C * clamp(quality / reference, floor, 1). A non-positive reference
/// disables the scaling.
inline double quality_penalty(double quality, double penalty, double reference,
                              double floor = 0.2) {
  if (!(reference > 0)) return penalty;
  return penalty * std::clamp(quality / reference, floor, 1.0);
}

struct Arc {
  std::uint32_t source = 0;  // node index
  std::uint32_t target = 0;  // node index
  double cost = 0.0;
  bool is_join = false;

  friend bool operator==(const Arc&, const Arc&) = default;
};

struct GraphNode {
  SpotId id = 0;
  int frame = 0;
};

/// Data of the tracking LP: nodes in (frame, id) order, arcs sorted by
/// (source, target), per-node start (c2) and end (c3) penalties.
class CandidateGraph {
 public:
  CandidateGraph() = default;

  CandidateGraph(std::vector<GraphNode> nodes, std::vector<Arc> arcs,
                 std::vector<double> start_penalty,
                 std::vector<double> end_penalty, GraphParams params = {})
      : nodes_(std::move(nodes)),
        arcs_(std::move(arcs)),
        start_penalty_(std::move(start_penalty)),
        end_penalty_(std::move(end_penalty)),
        params_(std::move(params)) {
    const std::size_t n = nodes_.size();
    if (start_penalty_.size() != n || end_penalty_.size() != n) {
      throw InvalidArgument("penalty vectors must match the node count");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (i > 0 && !(std::pair(nodes_[i - 1].frame, nodes_[i - 1].id) <
                     std::pair(nodes_[i].frame, nodes_[i].id))) {
        throw InvalidArgument("graph nodes must be sorted by (frame, id)");
      }
      if (!(start_penalty_[i] >= 0) || !(end_penalty_[i] >= 0)) {
        throw InvalidArgument("penalties must be non-negative");
      }
      index_.emplace(nodes_[i].id, static_cast<std::uint32_t>(i));
    }
    std::sort(arcs_.begin(), arcs_.end(), [](const Arc& a, const Arc& b) {
      return std::pair(a.source, a.target) < std::pair(b.source, b.target);
    });
    for (std::size_t k = 0; k < arcs_.size(); ++k) {
      const Arc& a = arcs_[k];
      if (a.source >= n || a.target >= n) {
        throw InvalidArgument("arc endpoint out of range");
      }
      if (k > 0 && arcs_[k - 1].source == a.source &&
          arcs_[k - 1].target == a.target) {
        throw InvalidArgument("duplicate arc");
      }
      const GraphNode& s = nodes_[a.source];
      const GraphNode& t = nodes_[a.target];
      const bool forward = s.frame < t.frame && !a.is_join;
      const bool join = a.is_join && s.frame == t.frame && s.id < t.id;
      if (!forward && !join) {
        throw InvalidArgument("arc " + std::to_string(s.id) + "->" +
                              std::to_string(t.id) +
                              " violates the time ordering");
      }
      if (!(a.cost >= 0) || !std::isfinite(a.cost)) {
        throw InvalidArgument("arc costs must be finite and non-negative");
      }
    }
    out_begin_.assign(n + 1, 0);
    for (const Arc& a : arcs_) ++out_begin_[a.source + 1];
    for (std::size_t i = 0; i < n; ++i) out_begin_[i + 1] += out_begin_[i];
  }

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t arc_count() const { return arcs_.size(); }
  const std::vector<GraphNode>& nodes() const { return nodes_; }
  const std::vector<Arc>& arcs() const { return arcs_; }
  const std::vector<double>& start_penalty() const { return start_penalty_; }
  const std::vector<double>& end_penalty() const { return end_penalty_; }
  const GraphParams& params() const { return params_; }

  std::span<const Arc> out_arcs(std::uint32_t node) const {
    return std::span<const Arc>(arcs_).subspan(
        out_begin_[node], out_begin_[node + 1] - out_begin_[node]);
  }

  std::optional<std::uint32_t> node_index(SpotId id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::optional<std::size_t> find_arc(std::uint32_t source,
                                      std::uint32_t target) const {
    const auto out = out_arcs(source);
    auto it = std::lower_bound(
        out.begin(), out.end(), target,
        [](const Arc& a, std::uint32_t t) { return a.target < t; });
    if (it == out.end() || it->target != target) return std::nullopt;
    return out_begin_[source] + static_cast<std::size_t>(it - out.begin());
  }

  std::optional<std::size_t> find_arc(const ArcKey& key) const {
    auto s = node_index(key.source);
    auto t = node_index(key.target);
    if (!s || !t) return std::nullopt;
    return find_arc(*s, *t);
  }

  ArcKey key(const Arc& arc) const {
    return ArcKey{nodes_[arc.source].id, nodes_[arc.target].id};
  }

  /// Copy of this graph keeping only arcs for which `keep` returns true.
  template <typename Pred>
  CandidateGraph filtered(Pred keep) const {
    std::vector<Arc> kept;
    kept.reserve(arcs_.size());
    for (const Arc& a : arcs_) {
      if (keep(a)) kept.push_back(a);
    }
    return CandidateGraph(nodes_, std::move(kept), start_penalty_,
                          end_penalty_, params_);
  }

  CandidateGraph without_arcs(const std::set<ArcKey>& removed) const {
    CandidateGraph g = filtered(
        [&](const Arc& a) { return !removed.contains(key(a)); });
    g.params_.forbidden_arcs.insert(removed.begin(), removed.end());
    return g;
  }

 private:
  std::vector<GraphNode> nodes_;
  std::vector<Arc> arcs_;
  std::vector<double> start_penalty_;
  std::vector<double> end_penalty_;
  GraphParams params_;
  std::unordered_map<SpotId, std::uint32_t> index_;
  std::vector<std::size_t> out_begin_{0};
};

namespace detail {

/// Uniform grid over one frame's spots, cell edge `cell`.
class FrameGrid {
 public:
  FrameGrid(std::span<const Spot> spots, std::uint32_t first_index, double cell)
      : spots_(spots), first_(first_index), inv_cell_(1.0 / cell) {
    for (std::uint32_t k = 0; k < spots.size(); ++k) {
      cells_[key(cell_of(spots[k].x), cell_of(spots[k].y))].push_back(k);
    }
  }

  /// Calls fn(node_index, spot) for every spot within `radius` of `q`, where
  /// `reach` is the number of neighbouring cells scanned in each direction.
  template <typename Fn>
  void for_each_within(const Spot& q, double radius, int reach, Fn&& fn) const {
    const std::int64_t cx = cell_of(q.x);
    const std::int64_t cy = cell_of(q.y);
    const double r2 = radius * radius;
    for (std::int64_t dx = -reach; dx <= reach; ++dx) {
      for (std::int64_t dy = -reach; dy <= reach; ++dy) {
        auto it = cells_.find(key(cx + dx, cy + dy));
        if (it == cells_.end()) continue;
        for (std::uint32_t k : it->second) {
          if (squared_distance(q, spots_[k]) <= r2) fn(first_ + k, spots_[k]);
        }
      }
    }
  }

 private:
  std::int64_t cell_of(double v) const {
    return static_cast<std::int64_t>(std::floor(v * inv_cell_));
  }
  static std::int64_t key(std::int64_t cx, std::int64_t cy) {
    return (cx << 32) ^ (cy & 0xffffffff);
  }

  std::span<const Spot> spots_;
  std::uint32_t first_;
  double inv_cell_;
  std::unordered_map<std::int64_t, std::vector<std::uint32_t>> cells_;
};

inline double median_quality(const SpotSet& spots) {
  if (spots.empty()) return 0.0;
  std::vector<double> q;
  q.reserve(spots.size());
  for (const Spot& s : spots.spots()) q.push_back(s.quality);
  const std::size_t mid = q.size() / 2;
  std::nth_element(q.begin(), q.begin() + mid, q.end());
  if (q.size() % 2 == 1) return q[mid];
  const double upper = q[mid];
  const double lower = *std::max_element(q.begin(), q.begin() + mid);
  return 0.5 * (lower + upper);
}

}  // namespace detail

/// Builds the candidate graph with a uniform grid of cell edge R: for each
/// spot only the 3x3 cell neighbourhood in each admissible later frame is
/// scanned.
inline CandidateGraph build_graph(const SpotSet& spots,
                                  const GraphParams& params) {
  params.validate();
  const std::size_t n = spots.size();
  const double C = params.resolved_penalty();

  std::vector<GraphNode> nodes(n);
  std::vector<double> start(n, C);
  std::vector<double> end(n, C);
  const double q_ref =
      params.quality_scaling ? detail::median_quality(spots) : 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    nodes[i] = GraphNode{spots[i].id, spots[i].frame};
    if (params.quality_scaling) {
      start[i] = end[i] =
          quality_penalty(spots[i].quality, C, q_ref, params.quality_floor);
    }
  }

  // frame_begin[f] .. frame_begin[f+1] is the index range of frame f.
  const int frames = spots.frames();
  std::vector<std::uint32_t> frame_begin(static_cast<std::size_t>(frames) + 1, 0);
  for (const Spot& s : spots.spots()) ++frame_begin[s.frame + 1];
  for (int f = 0; f < frames; ++f) frame_begin[f + 1] += frame_begin[f];

  const double R = params.tracking_radius;
  std::vector<detail::FrameGrid> grids;
  grids.reserve(frames);
  const std::span<const Spot> all(spots.spots());
  for (int f = 0; f < frames; ++f) {
    grids.emplace_back(all.subspan(frame_begin[f], frame_begin[f + 1] - frame_begin[f]),
                       frame_begin[f], R);
  }
  const int join_reach =
      static_cast<int>(std::ceil(params.join_radius / R - 1e-12));

  std::vector<Arc> arcs;
  for (std::uint32_t i = 0; i < n; ++i) {
    const Spot& a = spots[i];
    const auto admit = [&](std::uint32_t j, const Spot& b, bool join) {
      if (!params.forbidden_arcs.empty() &&
          params.forbidden_arcs.contains(ArcKey{a.id, b.id})) {
        return;
      }
      const double cost = join ? join_cost(a, b, end[i], start[j]) : arc_cost(a, b);
      arcs.push_back(Arc{i, j, cost, join});
    };
    if (params.join_radius > 0) {
      grids[a.frame].for_each_within(
          a, params.join_radius, std::max(join_reach, 1),
          [&](std::uint32_t j, const Spot& b) {
            if (a.id < b.id) admit(j, b, true);
          });
    }
    const int last = std::min(frames - 1, a.frame + params.max_frame_gap);
    for (int f = a.frame + 1; f <= last; ++f) {
      grids[f].for_each_within(a, R, 1, [&](std::uint32_t j, const Spot& b) {
        admit(j, b, false);
      });
    }
  }
  return CandidateGraph(std::move(nodes), std::move(arcs), std::move(start),
                        std::move(end), params);
}

/// Debug dump: `source_id,target_id,cost,is_join`.
inline void write_graph_csv(std::ostream& out, const CandidateGraph& graph) {
  out << "source_id,target_id,cost,is_join\n";
  for (const Arc& a : graph.arcs()) {
    out << graph.nodes()[a.source].id << ',' << graph.nodes()[a.target].id << ','
        << detail::format_number(a.cost) << ',' << (a.is_join ? 1 : 0) << '\n';
  }
}

/// Sum of the costs of all links used by `tracking` plus the start penalty
/// of every track head and the end penalty of every track tail.
inline double recompute_objective(const Tracking& tracking,
                                  const CandidateGraph& graph) {
  double total = 0.0;
  for (const Track& track : tracking.tracks) {
    if (track.points.empty()) throw InvariantError("empty track");
    std::optional<std::uint32_t> prev;
    for (SpotId id : track.points) {
      const auto node = graph.node_index(id);
      if (!node) {
        throw InvariantError("track references spot " + std::to_string(id) +
                             " missing from the graph");
      }
      if (prev) {
        const auto arc = graph.find_arc(*prev, *node);
        if (!arc) {
          throw InvariantError("missing arc " +
                               std::to_string(graph.nodes()[*prev].id) + "->" +
                               std::to_string(id));
        }
        total += graph.arcs()[*arc].cost;
      }
      prev = node;
    }
    total += graph.start_penalty()[*graph.node_index(track.points.front())];
    total += graph.end_penalty()[*prev];
  }
  return total;
}

}  // namespace blinktrack
