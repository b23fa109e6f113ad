#pragma once

// Exact solver for the track-partition LP.
//
// The constraint matrix of the LP is the incidence matrix of a bipartite
// graph (out-copies x in-copies of the spots), so the LP optimum is a
// min-cost matching in which every out-copy is either matched to an in-copy
// of a later spot (arc cost) or left alone (end penalty), and every in-copy
// is either matched or left alone (start penalty).
//
// TrackSolver turns this into a square sparse assignment problem
//
//            | in-copy R_j        | end slot E_i
//   ---------+--------------------+------------------------
//   out L_i  | c1(i,j) per arc    | c3(i)  (only E_i)
//   start D_j| c2(j)   (only R_j) | 0 per arc (i,j)
//
// which always has a perfect matching and whose optimum equals the LP
// optimum. It is solved by successive shortest augmenting paths with column
// potentials, so all reduced costs stay non-negative and Dijkstra applies.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <queue>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "blinktrack/graphgen.hpp"
#include "blinktrack/model.hpp"

namespace blinktrack {

/// Raised when an optimality certificate cannot be built or does not verify.
class CertificateError : public InvariantError {
 public:
  using InvariantError::InvariantError;
};

/// Raised by brute_force above its enumeration budget.
class SizeLimitError : public Error {
 public:
  using Error::Error;
};

inline constexpr double kOptimalityTolerance = 1e-9;

// ---------------------------------------------------------------------------
// Successor/predecessor view of a tracking

namespace detail {

inline constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();

struct LinkView {
  std::vector<std::uint32_t> successor;    // node -> node or kNone
  std::vector<std::uint32_t> predecessor;  // node -> node or kNone
  std::vector<std::size_t> successor_arc;  // node -> arc index (if successor)
};

/// Converts a tracking to link arrays over the graph's node indices. Throws
/// InvariantError if the tracking is not a partition of the graph's nodes or
/// uses a pair that is not an arc.
inline LinkView link_view(const Tracking& tracking, const CandidateGraph& graph) {
  const std::size_t n = graph.node_count();
  LinkView view{std::vector<std::uint32_t>(n, kNone),
                std::vector<std::uint32_t>(n, kNone),
                std::vector<std::size_t>(n, 0)};
  std::vector<char> seen(n, 0);
  std::size_t covered = 0;
  for (const Track& track : tracking.tracks) {
    if (track.points.empty()) throw InvariantError("empty track");
    std::uint32_t prev = kNone;
    for (SpotId id : track.points) {
      const auto node = graph.node_index(id);
      if (!node) {
        throw InvariantError("track references spot " + std::to_string(id) +
                             " missing from the graph");
      }
      if (seen[*node]) {
        throw InvariantError("spot " + std::to_string(id) +
                             " appears twice in the tracking");
      }
      seen[*node] = 1;
      ++covered;
      if (prev != kNone) {
        const auto arc = graph.find_arc(prev, *node);
        if (!arc) {
          throw InvariantError("missing arc " +
                               std::to_string(graph.nodes()[prev].id) + "->" +
                               std::to_string(id));
        }
        view.successor[prev] = *node;
        view.successor_arc[prev] = *arc;
        view.predecessor[*node] = prev;
      }
      prev = *node;
    }
  }
  if (covered != n) {
    throw InvariantError("tracking covers " + std::to_string(covered) + " of " +
                         std::to_string(n) + " spots");
  }
  return view;
}

/// Assembles tracks by following successor links from every head, in node
/// order, and prices them.
inline Tracking assemble_tracking(const CandidateGraph& graph,
                                  std::span<const std::uint32_t> successor,
                                  std::span<const std::size_t> successor_arc) {
  const std::size_t n = graph.node_count();
  std::vector<char> has_pred(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (successor[i] != kNone) has_pred[successor[i]] = 1;
  }
  Tracking tracking;
  double objective = 0.0;
  for (std::uint32_t head = 0; head < n; ++head) {
    if (has_pred[head]) continue;
    Track track;
    std::uint32_t node = head;
    objective += graph.start_penalty()[head];
    while (true) {
      track.points.push_back(graph.nodes()[node].id);
      if (successor[node] == kNone) break;
      objective += graph.arcs()[successor_arc[node]].cost;
      node = successor[node];
    }
    objective += graph.end_penalty()[node];
    tracking.tracks.push_back(std::move(track));
  }
  tracking.objective = objective;
  return tracking;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Matching instance

struct MatchingEdge {
  std::uint32_t row = 0;
  std::uint32_t col = 0;
  double cost = 0.0;
};

/// Square sparse assignment problem derived 1:1 from a CandidateGraph.
/// Rows: out-copies L_i (0..n) then start slots D_j (n..2n).
/// Columns: in-copies R_j (0..n) then end slots E_i (n..2n).
/// Edge ids: 2a for L_i-R_j of arc a, 2a+1 for D_j-E_i of arc a, then the
/// n end edges L_i-E_i, then the n start edges D_j-R_j.
class MatchingInstance {
 public:
  explicit MatchingInstance(const CandidateGraph& graph)
      : nodes_(static_cast<std::uint32_t>(graph.node_count())),
        arcs_(graph.arc_count()) {
    const std::uint32_t n = nodes_;
    edges_.resize(2 * arcs_ + 2 * static_cast<std::size_t>(n));
    for (std::size_t a = 0; a < arcs_; ++a) {
      const Arc& arc = graph.arcs()[a];
      edges_[2 * a] = {arc.source, arc.target, arc.cost};
      edges_[2 * a + 1] = {n + arc.target, n + arc.source, 0.0};
    }
    for (std::uint32_t i = 0; i < n; ++i) {
      edges_[end_edge(i)] = {i, n + i, graph.end_penalty()[i]};
      edges_[start_edge(i)] = {n + i, i, graph.start_penalty()[i]};
    }
    // CSR by row, columns ascending inside each row.
    row_begin_.assign(2 * static_cast<std::size_t>(n) + 1, 0);
    for (const MatchingEdge& e : edges_) ++row_begin_[e.row + 1];
    for (std::size_t r = 0; r < 2 * static_cast<std::size_t>(n); ++r) {
      row_begin_[r + 1] += row_begin_[r];
    }
    row_edges_.resize(edges_.size());
    std::vector<std::size_t> fill(row_begin_.begin(), row_begin_.end() - 1);
    for (std::uint32_t e = 0; e < edges_.size(); ++e) {
      row_edges_[fill[edges_[e].row]++] = e;
    }
    for (std::size_t r = 0; r < 2 * static_cast<std::size_t>(n); ++r) {
      std::sort(row_edges_.begin() + static_cast<std::ptrdiff_t>(row_begin_[r]),
                row_edges_.begin() + static_cast<std::ptrdiff_t>(row_begin_[r + 1]),
                [&](std::uint32_t x, std::uint32_t y) {
                  return edges_[x].col < edges_[y].col;
                });
    }
  }

  std::uint32_t size() const { return 2 * nodes_; }
  std::uint32_t node_count() const { return nodes_; }
  const std::vector<MatchingEdge>& edges() const { return edges_; }
  std::span<const std::uint32_t> row(std::uint32_t r) const {
    return std::span<const std::uint32_t>(row_edges_)
        .subspan(row_begin_[r], row_begin_[r + 1] - row_begin_[r]);
  }

  static std::uint32_t arc_edge(std::size_t arc) {
    return static_cast<std::uint32_t>(2 * arc);
  }
  static std::uint32_t transpose_edge(std::size_t arc) {
    return static_cast<std::uint32_t>(2 * arc + 1);
  }
  std::uint32_t end_edge(std::uint32_t node) const {
    return static_cast<std::uint32_t>(2 * arcs_ + node);
  }
  std::uint32_t start_edge(std::uint32_t node) const {
    return static_cast<std::uint32_t>(2 * arcs_ + nodes_ + node);
  }

 private:
  std::uint32_t nodes_;
  std::size_t arcs_;
  std::vector<MatchingEdge> edges_;
  std::vector<std::size_t> row_begin_;
  std::vector<std::uint32_t> row_edges_;
};

// ---------------------------------------------------------------------------
// Solver

/// Stateful solver. Keeps the matching and the column potentials so that arcs
/// can later be forbidden and the optimum repaired instead of recomputed.
/// The graph must outlive the solver. Not thread-safe.
class TrackSolver {
 public:
  explicit TrackSolver(const CandidateGraph& graph)
      : graph_(&graph), instance_(graph) {
    const std::size_t size = instance_.size();
    alive_.assign(instance_.edges().size(), 1);
    potential_.assign(size, 0.0);
    dist_.assign(size, 0.0);
    stamp_.assign(size, 0);
    done_.assign(size, 0);
    pred_edge_.assign(size, detail::kNone);
    clear_matching();
  }

  /// Optimum from scratch.
  Tracking solve() {
    clear_matching();
    std::fill(potential_.begin(), potential_.end(), 0.0);
    for (std::uint32_t r = 0; r < instance_.size(); ++r) augment(r);
    return tracking();
  }

  /// Loads `previous` as the current matching and derives potentials from
  /// shortest paths in its residual graph. Returns false if `previous` is
  /// not optimal (the residual graph has a negative cycle), leaving the
  /// solver state unspecified.
  bool warm_start(const Tracking& previous) {
    const auto view = detail::link_view(previous, *graph_);
    clear_matching();
    const std::uint32_t n = instance_.node_count();
    for (std::uint32_t i = 0; i < n; ++i) {
      if (view.successor[i] != detail::kNone) {
        const std::size_t a = view.successor_arc[i];
        if (!alive_[MatchingInstance::arc_edge(a)]) return false;
        match(MatchingInstance::arc_edge(a));
        match(MatchingInstance::transpose_edge(a));
      } else {
        match(instance_.end_edge(i));
      }
      if (view.predecessor[i] == detail::kNone) match(instance_.start_edge(i));
    }
    return fit_potentials();
  }

  /// Removes the given arcs (unknown or already removed ones are ignored)
  /// and repairs the optimum by re-augmenting from the rows they freed.
  Tracking forbid(const std::set<ArcKey>& arcs) {
    std::vector<std::uint32_t> freed;
    for (const ArcKey& key : arcs) {
      const auto a = graph_->find_arc(key);
      if (!a) continue;
      for (std::uint32_t e : {MatchingInstance::arc_edge(*a),
                              MatchingInstance::transpose_edge(*a)}) {
        if (!alive_[e]) continue;
        alive_[e] = 0;
        const MatchingEdge& edge = instance_.edges()[e];
        if (row_edge_[edge.row] == e) {
          row_edge_[edge.row] = detail::kNone;
          col_row_[edge.col] = detail::kNone;
          freed.push_back(edge.row);
        }
      }
    }
    std::sort(freed.begin(), freed.end());
    std::size_t repairs = 0;
    for (std::uint32_t r : freed) {
      augment(r);
      if (++repairs > graph_->node_count()) return solve();
    }
    return tracking();
  }

  /// Tracking encoded by the current (complete) matching.
  Tracking tracking() const {
    const std::uint32_t n = instance_.node_count();
    std::vector<std::uint32_t> successor(n, detail::kNone);
    std::vector<std::size_t> successor_arc(n, 0);
    for (std::uint32_t i = 0; i < n; ++i) {
      const std::uint32_t e = row_edge_[i];
      if (e == detail::kNone) throw InvariantError("incomplete matching");
      if (e < instance_.end_edge(0)) {
        successor[i] = instance_.edges()[e].col;
        successor_arc[i] = e / 2;
      }
    }
    return detail::assemble_tracking(*graph_, successor, successor_arc);
  }

  bool arc_alive(std::size_t arc) const {
    return alive_[MatchingInstance::arc_edge(arc)] != 0;
  }
  std::size_t augmentations() const { return augmentations_; }

 private:
  void clear_matching() {
    row_edge_.assign(instance_.size(), detail::kNone);
    col_row_.assign(instance_.size(), detail::kNone);
  }

  void match(std::uint32_t e) {
    const MatchingEdge& edge = instance_.edges()[e];
    row_edge_[edge.row] = e;
    col_row_[edge.col] = edge.row;
  }

  /// Shortest augmenting path from free row `root` (Dijkstra on reduced
  /// costs, ties broken by column index), then potential update.
  void augment(std::uint32_t root) {
    ++augmentations_;
    ++epoch_;
    finalized_.clear();
    const auto& edges = instance_.edges();

    using Entry = std::pair<double, std::uint32_t>;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;

    const auto relax = [&](std::uint32_t row, double base, double row_pot) {
      for (std::uint32_t e : instance_.row(row)) {
        if (!alive_[e]) continue;
        const std::uint32_t c = edges[e].col;
        if (stamp_[c] == epoch_ && done_[c]) continue;
        const double reduced =
            std::max(0.0, edges[e].cost - row_pot - potential_[c]);
        const double d = base + reduced;
        if (stamp_[c] != epoch_ || d < dist_[c]) {
          stamp_[c] = epoch_;
          done_[c] = 0;
          dist_[c] = d;
          pred_edge_[c] = e;
          heap.emplace(d, c);
        }
      }
    };

    double root_pot = std::numeric_limits<double>::infinity();
    for (std::uint32_t e : instance_.row(root)) {
      if (alive_[e]) {
        root_pot = std::min(root_pot, edges[e].cost - potential_[edges[e].col]);
      }
    }
    relax(root, 0.0, root_pot);

    std::uint32_t free_col = detail::kNone;
    while (!heap.empty()) {
      const auto [d, c] = heap.top();
      heap.pop();
      if (done_[c] || d > dist_[c]) continue;
      done_[c] = 1;
      finalized_.push_back(c);
      const std::uint32_t row = col_row_[c];
      if (row == detail::kNone) {
        free_col = c;
        break;
      }
      const MatchingEdge& m = edges[row_edge_[row]];
      relax(row, d, m.cost - potential_[c]);
    }
    if (free_col == detail::kNone) {
      throw InvariantError("no augmenting path from row " + std::to_string(root));
    }

    const double total = dist_[free_col];
    for (std::uint32_t c : finalized_) potential_[c] += dist_[c] - total;

    std::uint32_t c = free_col;
    while (true) {
      const std::uint32_t e = pred_edge_[c];
      const std::uint32_t row = edges[e].row;
      const std::uint32_t prev_edge = row_edge_[row];
      match(e);
      if (row == root) break;
      c = edges[prev_edge].col;
    }
  }

  /// Bellman-Ford (queue-based) on the residual graph of the current perfect
  /// matching: unmatched edges row -> col with +cost, matched edges
  /// col -> row with -cost. Column potentials are the distances.
  bool fit_potentials() {
    const std::uint32_t size = instance_.size();
    const auto& edges = instance_.edges();
    // Node ids: rows 0..size, columns size..2*size.
    const std::uint32_t total = 2 * size;
    std::vector<double> d(total, 0.0);
    std::vector<std::uint32_t> pushes(total, 1);
    std::vector<char> queued(total, 1);
    std::deque<std::uint32_t> queue;
    for (std::uint32_t v = 0; v < total; ++v) queue.push_back(v);
    const double eps = 1e-12 * cost_scale();
    while (!queue.empty()) {
      const std::uint32_t v = queue.front();
      queue.pop_front();
      queued[v] = 0;
      const auto push = [&](std::uint32_t w, double nd) {
        if (nd < d[w] - eps) {
          d[w] = nd;
          if (!queued[w]) {
            if (++pushes[w] > total + 1) return false;
            queued[w] = 1;
            queue.push_back(w);
          }
        }
        return true;
      };
      if (v < size) {
        for (std::uint32_t e : instance_.row(v)) {
          if (!alive_[e] || row_edge_[v] == e) continue;
          if (!push(size + edges[e].col, d[v] + edges[e].cost)) return false;
        }
      } else {
        const std::uint32_t row = col_row_[v - size];
        if (row != detail::kNone &&
            !push(row, d[v] - edges[row_edge_[row]].cost)) {
          return false;
        }
      }
    }
    for (std::uint32_t c = 0; c < size; ++c) potential_[c] = d[size + c];
    return true;
  }

  double cost_scale() const {
    double scale = 1.0;
    for (const MatchingEdge& e : instance_.edges()) scale = std::max(scale, e.cost);
    return scale;
  }

  const CandidateGraph* graph_;
  MatchingInstance instance_;
  std::vector<char> alive_;
  std::vector<std::uint32_t> row_edge_;  // row -> matched edge
  std::vector<std::uint32_t> col_row_;   // col -> matched row
  std::vector<double> potential_;        // column potentials

  // Dijkstra scratch space, reset lazily per augmentation via epoch stamps.
  std::vector<double> dist_;
  std::vector<std::uint32_t> stamp_;
  std::vector<char> done_;
  std::vector<std::uint32_t> pred_edge_;
  std::vector<std::uint32_t> finalized_;
  std::uint32_t epoch_ = 0;
  std::size_t augmentations_ = 0;
};

/// Most likely tracking: an integral optimum of the tracking LP.
inline Tracking solve(const CandidateGraph& graph) {
  return TrackSolver(graph).solve();
}

// ---------------------------------------------------------------------------
// Brute-force oracle

/// Exact optimum by enumerating every successor assignment in which each
/// spot has at most one predecessor and at most one successor. Meant as a
/// test oracle; exponential.
inline Tracking brute_force(const CandidateGraph& graph,
                            std::size_t max_points = 14) {
  const std::size_t n = graph.node_count();
  if (n > max_points) {
    throw SizeLimitError("brute force limited to " + std::to_string(max_points) +
                         " points, got " + std::to_string(n));
  }
  std::vector<std::uint32_t> succ(n, detail::kNone), best_succ(n, detail::kNone);
  std::vector<std::size_t> succ_arc(n, 0), best_arc(n, 0);
  std::vector<char> has_pred(n, 0);
  double best = std::numeric_limits<double>::infinity();

  const std::function<void(std::uint32_t, double)> visit =
      [&](std::uint32_t i, double partial) {
        if (partial >= best) return;  // all remaining terms are >= 0
        if (i == n) {
          double total = partial;
          for (std::size_t j = 0; j < n; ++j) {
            if (!has_pred[j]) total += graph.start_penalty()[j];
          }
          if (total < best) {
            best = total;
            best_succ = succ;
            best_arc = succ_arc;
          }
          return;
        }
        const auto out = graph.out_arcs(i);
        for (std::size_t k = 0; k < out.size(); ++k) {
          const Arc& a = out[k];
          if (has_pred[a.target]) continue;
          has_pred[a.target] = 1;
          succ[i] = a.target;
          succ_arc[i] = *graph.find_arc(i, a.target);
          visit(i + 1, partial + a.cost);
          has_pred[a.target] = 0;
        }
        succ[i] = detail::kNone;
        visit(i + 1, partial + graph.end_penalty()[i]);
      };
  visit(0, 0.0);
  return detail::assemble_tracking(graph, best_succ, best_arc);
}

// ---------------------------------------------------------------------------
// Optimality certificate

/// Dual solution of the tracking LP: one potential per in-copy (start
/// constraint) and per out-copy (end constraint).
struct DualCertificate {
  std::vector<double> in_potential;
  std::vector<double> out_potential;
  double dual_objective = 0.0;
};

/// Largest cost magnitude, at least 1; tolerances scale with it.
inline double cost_scale(const CandidateGraph& graph) {
  double scale = 1.0;
  for (const Arc& a : graph.arcs()) scale = std::max(scale, a.cost);
  for (double c : graph.start_penalty()) scale = std::max(scale, c);
  for (double c : graph.end_penalty()) scale = std::max(scale, c);
  return scale;
}

/// Checks dual feasibility, complementary slackness with `tracking` and
/// zero duality gap. Returns a description of the first violation, if any.
inline std::optional<std::string> check_certificate(const DualCertificate& cert,
                                                    const Tracking& tracking,
                                                    const CandidateGraph& graph) {
  const std::size_t n = graph.node_count();
  if (cert.in_potential.size() != n || cert.out_potential.size() != n) {
    return "certificate size does not match the graph";
  }
  const auto view = detail::link_view(tracking, graph);
  const double tol = kOptimalityTolerance * cost_scale(graph);
  const auto& alpha = cert.in_potential;
  const auto& beta = cert.out_potential;

  for (std::size_t k = 0; k < graph.arc_count(); ++k) {
    const Arc& a = graph.arcs()[k];
    const double reduced = a.cost - beta[a.source] - alpha[a.target];
    if (reduced < -tol) {
      return "negative reduced cost " + std::to_string(reduced) + " on arc " +
             std::to_string(graph.nodes()[a.source].id) + "->" +
             std::to_string(graph.nodes()[a.target].id);
    }
    const bool used = view.successor[a.source] == a.target;
    if (used && std::abs(reduced) > tol) {
      return "used arc is not tight";
    }
  }
  for (std::size_t v = 0; v < n; ++v) {
    const double start_slack = graph.start_penalty()[v] - alpha[v];
    const double end_slack = graph.end_penalty()[v] - beta[v];
    if (start_slack < -tol || end_slack < -tol) {
      return "penalty constraint violated at node " + std::to_string(v);
    }
    if (view.predecessor[v] == detail::kNone && std::abs(start_slack) > tol) {
      return "track head is not tight";
    }
    if (view.successor[v] == detail::kNone && std::abs(end_slack) > tol) {
      return "track tail is not tight";
    }
  }
  const double primal = recompute_objective(tracking, graph);
  if (std::abs(primal - cert.dual_objective) > tol * static_cast<double>(2 * n + 1)) {
    return "duality gap " + std::to_string(primal - cert.dual_objective);
  }
  return std::nullopt;
}

/// Builds LP dual potentials proving that `tracking` is optimal for `graph`.
///
/// Works on the transshipment network L_i -> R_j (c1), L_i -> H (c3),
/// H -> R_j (c2) with unit supplies on L and demands on R; the tracking is a
/// feasible flow and is optimal iff its residual graph has no negative cycle.
/// Shortest-path distances p then give alpha_j = p(R_j) - p(H) and
/// beta_i = p(H) - p(L_i). Throws CertificateError otherwise.
inline DualCertificate certify(const Tracking& tracking,
                               const CandidateGraph& graph) {
  const auto view = detail::link_view(tracking, graph);
  const std::uint32_t n = static_cast<std::uint32_t>(graph.node_count());
  const std::uint32_t hub = 2 * n;
  const std::uint32_t total = 2 * n + 1;

  struct ResidualArc {
    std::uint32_t to;
    double cost;
  };
  std::vector<std::vector<ResidualArc>> out(total);
  for (const Arc& a : graph.arcs()) {
    out[a.source].push_back({n + a.target, a.cost});
    if (view.successor[a.source] == a.target) {
      out[n + a.target].push_back({a.source, -a.cost});
    }
  }
  for (std::uint32_t v = 0; v < n; ++v) {
    out[v].push_back({hub, graph.end_penalty()[v]});
    if (view.successor[v] == detail::kNone) {
      out[hub].push_back({v, -graph.end_penalty()[v]});
    }
    out[hub].push_back({n + v, graph.start_penalty()[v]});
    if (view.predecessor[v] == detail::kNone) {
      out[n + v].push_back({hub, -graph.start_penalty()[v]});
    }
  }

  std::vector<double> p(total, 0.0);
  std::vector<std::uint32_t> pushes(total, 1);
  std::vector<char> queued(total, 1);
  std::deque<std::uint32_t> queue;
  for (std::uint32_t v = 0; v < total; ++v) queue.push_back(v);
  const double eps = 1e-12 * cost_scale(graph);
  while (!queue.empty()) {
    const std::uint32_t v = queue.front();
    queue.pop_front();
    queued[v] = 0;
    for (const ResidualArc& arc : out[v]) {
      const double nd = p[v] + arc.cost;
      if (nd < p[arc.to] - eps) {
        p[arc.to] = nd;
        if (!queued[arc.to]) {
          if (++pushes[arc.to] > total + 1) {
            throw CertificateError(
                "tracking is not optimal: residual graph has a negative cycle");
          }
          queued[arc.to] = 1;
          queue.push_back(arc.to);
        }
      }
    }
  }

  DualCertificate cert;
  cert.in_potential.resize(n);
  cert.out_potential.resize(n);
  for (std::uint32_t v = 0; v < n; ++v) {
    cert.in_potential[v] = p[n + v] - p[hub];
    cert.out_potential[v] = p[hub] - p[v];
    cert.dual_objective += cert.in_potential[v] + cert.out_potential[v];
  }
  if (auto failure = check_certificate(cert, tracking, graph)) {
    throw CertificateError("certificate check failed: " + *failure);
  }
  return cert;
}

// ---------------------------------------------------------------------------
// Re-optimization

/// Optimum of `graph` without `removed_arcs`, starting from `previous`, an
/// optimum of `graph`. If no removed arc is used, `previous` stays optimal
/// and is returned as is; otherwise only the freed rows are re-augmented.
inline Tracking reoptimize(const CandidateGraph& graph,
                           const std::set<ArcKey>& removed_arcs,
                           const Tracking& previous) {
  bool touches = false;
  for (const Track& track : previous.tracks) {
    for (std::size_t k = 1; k < track.points.size() && !touches; ++k) {
      touches = removed_arcs.contains(ArcKey{track.points[k - 1], track.points[k]});
    }
  }
  if (!touches) return previous;

  TrackSolver solver(graph);
  if (!solver.warm_start(previous)) return solve(graph.without_arcs(removed_arcs));
  return solver.forbid(removed_arcs);
}

}  // namespace blinktrack
