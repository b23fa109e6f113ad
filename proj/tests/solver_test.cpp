#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "blinktrack/experiments.hpp"
#include "blinktrack/solver.hpp"

using namespace blinktrack;

namespace {

struct RandomInstance {
  int max_points = 10;
  double arc_probability = 0.5;
  double join_probability = 0.2;
  bool constant_penalty = true;
};

CandidateGraph random_graph(std::mt19937_64& rng, const RandomInstance& shape = {}) {
  const int n = std::uniform_int_distribution<int>(0, shape.max_points)(rng);
  std::vector<int> frames(n);
  for (int& f : frames) f = std::uniform_int_distribution<int>(0, 4)(rng);
  std::sort(frames.begin(), frames.end());
  std::vector<GraphNode> nodes;
  for (int i = 0; i < n; ++i) nodes.push_back(GraphNode{3 * i + 1, frames[i]});

  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double C = 0.5 + 20.0 * u(rng);
  std::vector<double> start(n, C), end(n, C);
  if (!shape.constant_penalty) {
    for (int i = 0; i < n; ++i) {
      start[i] = C * (0.2 + 0.8 * u(rng));
      end[i] = C * (0.2 + 0.8 * u(rng));
    }
  }
  std::vector<Arc> arcs;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (frames[i] < frames[j] && u(rng) < shape.arc_probability) {
        arcs.push_back(Arc{static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j),
                           50.0 * u(rng), false});
      } else if (frames[i] == frames[j] && i < j && u(rng) < shape.join_probability) {
        arcs.push_back(Arc{static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j),
                           0.5 * (end[i] + start[j]) + 10.0 * u(rng), true});
      }
    }
  }
  // Occasional integer costs to provoke ties.
  if (u(rng) < 0.3) {
    for (Arc& a : arcs) a.cost = std::round(a.cost);
  }
  return CandidateGraph(nodes, arcs, start, end);
}

// Independent oracle: every subset of arcs with in/out degree <= 1.
double subset_optimum(const CandidateGraph& g) {
  const std::size_t m = g.arc_count();
  const std::size_t n = g.node_count();
  double best = std::numeric_limits<double>::infinity();
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << m); ++mask) {
    std::vector<int> in(n, 0), out(n, 0);
    double cost = 0;
    bool ok = true;
    for (std::size_t k = 0; k < m && ok; ++k) {
      if (!(mask >> k & 1)) continue;
      const Arc& a = g.arcs()[k];
      ok = ++out[a.source] == 1 && ++in[a.target] == 1;
      cost += a.cost;
    }
    if (!ok) continue;
    for (std::size_t v = 0; v < n; ++v) {
      if (!in[v]) cost += g.start_penalty()[v];
      if (!out[v]) cost += g.end_penalty()[v];
    }
    best = std::min(best, cost);
  }
  return best;
}

void expect_degree_constraints(const Tracking& t, const CandidateGraph& g) {
  std::vector<int> pred(g.node_count(), 0), succ(g.node_count(), 0), seen(g.node_count(), 0);
  for (const Track& track : t.tracks) {
    ASSERT_FALSE(track.points.empty());
    for (std::size_t k = 0; k < track.points.size(); ++k) {
      const auto v = *g.node_index(track.points[k]);
      ++seen[v];
      if (k > 0) {
        const auto u = *g.node_index(track.points[k - 1]);
        ASSERT_TRUE(g.find_arc(u, v));
        ++succ[u];
        ++pred[v];
      }
    }
  }
  for (std::size_t v = 0; v < g.node_count(); ++v) {
    EXPECT_EQ(seen[v], 1);
    EXPECT_LE(pred[v], 1);
    EXPECT_LE(succ[v], 1);
  }
}

CandidateGraph pair_graph(double cost, double C) {
  return CandidateGraph({{0, 0}, {1, 1}}, {{0, 1, cost, false}}, {C, C}, {C, C});
}

}  // namespace

TEST(Solve, CheapArcLinks) {
  const auto t = solve(pair_graph(10, 20));
  ASSERT_EQ(t.tracks.size(), 1u);
  EXPECT_EQ(t.tracks[0].points, (std::vector<SpotId>{0, 1}));
  EXPECT_DOUBLE_EQ(t.objective, 50.0);
  EXPECT_DOUBLE_EQ(t.log_likelihood(), -50.0);
}

TEST(Solve, ExpensiveArcRejected) {
  const auto t = solve(pair_graph(50, 20));
  EXPECT_EQ(t.tracks.size(), 2u);
  EXPECT_DOUBLE_EQ(t.objective, 80.0);
}

TEST(Solve, Empty) {
  const auto t = solve(CandidateGraph{});
  EXPECT_TRUE(t.tracks.empty());
  EXPECT_EQ(t.objective, 0.0);
}

TEST(BruteForce, Examples) {
  EXPECT_EQ(brute_force(CandidateGraph{}).objective, 0.0);
  const auto one = brute_force(CandidateGraph({{0, 0}}, {}, {12.5}, {12.5}));
  EXPECT_DOUBLE_EQ(one.objective, 25.0);

  // Three collinear points 1 px apart in frames 0, 1, 2.
  Calibration cal;
  cal.image_width = cal.image_height = 16;
  GraphParams p;
  p.tracking_radius = 5;
  p.penalty = 12.5;
  const SpotSet spaced({{0, 0, 1, 1, 1, 0, false}, {1, 1, 2, 1, 1, 0, false},
                        {2, 2, 3, 1, 1, 0, false}},
                       3, cal);
  const auto g = build_graph(spaced, p);
  const auto t = brute_force(g);
  ASSERT_EQ(t.tracks.size(), 1u);
  EXPECT_EQ(t.tracks[0].points.size(), 3u);
  EXPECT_DOUBLE_EQ(t.objective, 2.0 + 2.0 + 2 * 12.5);
  // Coincident positions leave only the time terms: 1 + 1 + 2C.
  const SpotSet stacked({{0, 0, 1, 1, 1, 0, false}, {1, 1, 1, 1, 1, 0, false},
                         {2, 2, 1, 1, 1, 0, false}},
                        3, cal);
  EXPECT_DOUBLE_EQ(brute_force(build_graph(stacked, p)).objective, 2.0 + 2 * 12.5);
}

TEST(BruteForce, SizeLimit) {
  std::vector<GraphNode> nodes;
  for (int i = 0; i < 15; ++i) nodes.push_back({i, i});
  CandidateGraph g(nodes, {}, std::vector<double>(15, 1), std::vector<double>(15, 1));
  EXPECT_THROW(brute_force(g), SizeLimitError);
}

TEST(BruteForce, AgreesWithSubsetEnumeration) {
  std::mt19937_64 rng(101);
  int checked = 0;
  while (checked < 300) {
    RandomInstance shape;
    shape.max_points = 7;
    shape.constant_penalty = checked % 2 == 0;
    const auto g = random_graph(rng, shape);
    if (g.arc_count() > 16) continue;
    EXPECT_NEAR(brute_force(g).objective, subset_optimum(g), 1e-9);
    ++checked;
  }
}

TEST(Solve, MatchesOracleOnRandomInstances) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    RandomInstance shape;
    shape.constant_penalty = trial % 3 != 0;
    shape.arc_probability = 0.2 + 0.7 * (trial % 5) / 4.0;
    const auto g = random_graph(rng, shape);
    const Tracking t = solve(g);
    const Tracking oracle = brute_force(g);
    ASSERT_NEAR(t.objective, oracle.objective, 1e-9) << "trial " << trial;
    EXPECT_NEAR(recompute_objective(t, g), t.objective, 1e-9);
    expect_degree_constraints(t, g);
    EXPECT_NO_THROW(certify(t, g)) << "trial " << trial;
  }
}

TEST(Solve, Deterministic) {
  const SpotSet spots = uniform_spots(60, 20, 64, 3);
  const auto g = build_graph(spots, GraphParams{});
  const auto a = solve(g);
  const auto b = solve(g);
  EXPECT_EQ(a.tracks, b.tracks);
  EXPECT_EQ(a.objective, b.objective);
}

TEST(Solve, LargerInstanceCertifies) {
  const SpotSet spots = uniform_spots(150, 40, 128, 8);
  GraphParams p;
  p.join_radius = 1.0;
  const auto g = build_graph(spots, p);
  const auto t = solve(g);
  check_partition(t, spots);
  EXPECT_NEAR(recompute_objective(t, g), t.objective, 1e-9 * cost_scale(g) * spots.size());
  EXPECT_NO_THROW(certify(t, g));
}

TEST(PenaltyBoundPruning, RemovingExpensiveArcsKeepsOptimum) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const auto g = random_graph(rng);
    const double C = g.node_count() ? g.start_penalty()[0] : 1.0;
    const auto pruned = g.filtered([&](const Arc& a) { return a.cost <= 2 * C; });
    const auto full = solve(g);
    EXPECT_NEAR(full.objective, solve(pruned).objective, 1e-9);
    // Every used arc of the optimum already obeys the bound.
    const auto view = detail::link_view(full, g);
    for (std::size_t v = 0; v < g.node_count(); ++v) {
      if (view.successor[v] != detail::kNone) {
        EXPECT_LE(g.arcs()[view.successor_arc[v]].cost, 2 * C + 1e-12);
      }
    }
  }
}

TEST(Certificate, PenaltyPotentialsProveSingletons) {
  // All arcs at least c2 + c3: singletons optimal, alpha = c2, beta = c3.
  CandidateGraph g({{0, 0}, {1, 1}, {2, 2}}, {{0, 1, 45, false}, {1, 2, 40, false}},
                   {20, 20, 20}, {20, 20, 20});
  const auto t = solve(g);
  EXPECT_EQ(t.tracks.size(), 3u);
  DualCertificate cert{{20, 20, 20}, {20, 20, 20}, 120};
  EXPECT_FALSE(check_certificate(cert, t, g));
  // Zero potentials are dual feasible but leave a duality gap.
  DualCertificate zero{{0, 0, 0}, {0, 0, 0}, 0};
  EXPECT_TRUE(check_certificate(zero, t, g));
  const auto built = certify(t, g);
  EXPECT_NEAR(built.dual_objective, t.objective, 1e-9);
}

TEST(Certificate, RejectsSuboptimalTracking) {
  std::mt19937_64 rng(5);
  int rejected = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const auto g = random_graph(rng);
    const auto t = solve(g);
    // Cut the first link whose cost is strictly below the penalties it saves.
    Tracking worse = t;
    bool mutated = false;
    for (std::size_t k = 0; k < worse.tracks.size() && !mutated; ++k) {
      auto& pts = worse.tracks[k].points;
      for (std::size_t i = 1; i < pts.size() && !mutated; ++i) {
        const auto u = *g.node_index(pts[i - 1]);
        const auto v = *g.node_index(pts[i]);
        const double c = g.arcs()[*g.find_arc(u, v)].cost;
        if (c < g.end_penalty()[u] + g.start_penalty()[v] - 1e-6) {
          Track tail{std::vector<SpotId>(pts.begin() + i, pts.end())};
          pts.resize(i);
          worse.tracks.push_back(tail);
          mutated = true;
        }
      }
    }
    if (!mutated) continue;
    worse.objective = recompute_objective(worse, g);
    ASSERT_GT(worse.objective, t.objective);
    EXPECT_THROW(certify(worse, g), CertificateError);
    ++rejected;
  }
  EXPECT_GT(rejected, 50);
}

TEST(Reoptimize, UnusedArcKeepsTracking) {
  CandidateGraph g({{0, 0}, {1, 1}, {2, 1}}, {{0, 1, 1, false}, {0, 2, 30, false}},
                   {20, 20, 20}, {20, 20, 20});
  const auto t = solve(g);
  const auto r = reoptimize(g, {ArcKey{0, 2}}, t);
  EXPECT_EQ(r.tracks, t.tracks);
  EXPECT_EQ(r.objective, t.objective);
}

TEST(Reoptimize, RemovingOnlyLinkGivesSingletons) {
  const auto g = pair_graph(10, 20);
  const auto r = reoptimize(g, {ArcKey{0, 1}}, solve(g));
  EXPECT_EQ(r.tracks.size(), 2u);
  EXPECT_DOUBLE_EQ(r.objective, 80.0);
}

TEST(Reoptimize, MatchesOracleAfterRemovingUsedArc) {
  std::mt19937_64 rng(99);
  int tested = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const auto g = random_graph(rng);
    const auto t = solve(g);
    std::vector<ArcKey> used;
    for (const Track& tr : t.tracks) {
      for (std::size_t k = 1; k < tr.points.size(); ++k) {
        used.push_back(ArcKey{tr.points[k - 1], tr.points[k]});
      }
    }
    if (used.empty()) continue;
    std::set<ArcKey> removed{used[std::uniform_int_distribution<std::size_t>(
        0, used.size() - 1)(rng)]};
    if (trial % 2 == 0) {
      const Arc& extra = g.arcs()[std::uniform_int_distribution<std::size_t>(
          0, g.arc_count() - 1)(rng)];
      removed.insert(g.key(extra));
    }
    const auto reduced = g.without_arcs(removed);
    const auto r = reoptimize(g, removed, t);
    ASSERT_NEAR(r.objective, brute_force(reduced).objective, 1e-9) << "trial " << trial;
    EXPECT_NEAR(recompute_objective(r, reduced), r.objective, 1e-9);
    EXPECT_NO_THROW(certify(r, reduced));
    ++tested;
  }
  EXPECT_GT(tested, 200);
}

TEST(TrackSolver, RepeatedForbidMatchesFreshSolve) {
  const SpotSet spots = uniform_spots(40, 25, 64, 21);
  const auto g = build_graph(spots, GraphParams{});
  TrackSolver solver(g);
  Tracking t = solver.solve();
  std::set<ArcKey> forbidden;
  std::mt19937_64 rng(4);
  for (int round = 0; round < 10; ++round) {
    std::set<ArcKey> batch;
    for (const Track& tr : t.tracks) {
      for (std::size_t k = 1; k < tr.points.size(); ++k) {
        if (rng() % 4 == 0) batch.insert(ArcKey{tr.points[k - 1], tr.points[k]});
      }
    }
    forbidden.insert(batch.begin(), batch.end());
    const std::size_t before = solver.augmentations();
    t = solver.forbid(batch);
    EXPECT_LE(solver.augmentations() - before, 2 * batch.size() + 1);
    const auto reduced = g.without_arcs(forbidden);
    EXPECT_NEAR(t.objective, solve(reduced).objective, 1e-9 * spots.size());
    EXPECT_NO_THROW(certify(t, reduced));
    for (const ArcKey& k : forbidden) EXPECT_FALSE(solver.arc_alive(*g.find_arc(k)));
  }
}

TEST(TrackSolver, WarmStartDetectsOptimality) {
  const SpotSet spots = uniform_spots(20, 10, 40, 2);
  const auto g = build_graph(spots, GraphParams{});
  const auto best = solve(g);
  TrackSolver solver(g);
  EXPECT_TRUE(solver.warm_start(best));
  EXPECT_NEAR(solver.tracking().objective, best.objective, 1e-9);

  Tracking singletons;
  for (const Spot& s : spots.spots()) singletons.tracks.push_back(Track{{s.id}});
  TrackSolver other(g);
  if (best.link_count() > 0) {
    EXPECT_FALSE(other.warm_start(singletons));
  }
}
