// blinktrack command-line driver: simulate -> localize -> track -> analyze
// -> evaluate, plus S/N sweeps and the density-vs-time benchmark.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "blinktrack/analysis.hpp"
#include "blinktrack/experiments.hpp"
#include "blinktrack/graphgen.hpp"
#include "blinktrack/localizer.hpp"
#include "blinktrack/model.hpp"
#include "blinktrack/simulator.hpp"
#include "blinktrack/solver.hpp"

namespace {

using json = nlohmann::ordered_json;
using namespace blinktrack;

constexpr const char* kVersion = "0.1.0";

// Exit 1, same as a usage error.
struct IoError : Error {
  using Error::Error;
};

std::ofstream open_out(const std::string& path, bool binary = false) {
  std::ofstream f(path, binary ? std::ios::out | std::ios::binary : std::ios::out);
  if (!f) throw IoError("cannot open " + path + " for writing");
  return f;
}

std::ifstream open_in(const std::string& path, bool binary = false) {
  std::ifstream f(path, binary ? std::ios::in | std::ios::binary : std::ios::in);
  if (!f) throw IoError("cannot open " + path);
  return f;
}

void finish(std::ofstream& f, const std::string& path) {
  f.flush();
  if (!f) throw IoError("write failed: " + path);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Command line as given, kept for the manifest.
std::vector<std::string> g_args;

void write_manifest(const std::string& path, const std::string& command,
                    json parameters) {
  json m;
  m["tool"] = "blinktrack";
  m["version"] = kVersion;
  m["command"] = command;
  m["args"] = g_args;
  m["parameters"] = std::move(parameters);
  auto f = open_out(path);
  f << m.dump(2) << '\n';
  finish(f, path);
}

// ---------------------------------------------------------------------------
// Shared option groups

struct CalibrationOpts {
  Calibration cal;
  void add(CLI::App* app) {
    app->add_option("--pixel-size", cal.pixel_size, "m per px")->capture_default_str();
    app->add_option("--frame-interval", cal.frame_interval, "s per frame")
        ->capture_default_str();
    app->add_option("--width", cal.image_width, "image width, px")->capture_default_str();
    app->add_option("--height", cal.image_height, "image height, px")->capture_default_str();
  }
  json to_json() const {
    return {{"pixel_size", cal.pixel_size},
            {"frame_interval", cal.frame_interval},
            {"width", cal.image_width},
            {"height", cal.image_height}};
  }
};

struct SimOpts {
  bool desk = false;
  std::optional<double> D, snr, tau, alpha, psf_sigma, pixel_size, frame_interval;
  std::optional<int> particles, frames, field, t_max_state;
  std::optional<std::uint64_t> seed;
  std::optional<bool> blinking;

  void add(CLI::App* app) {
    app->add_flag("--desk", desk,
                  "128 px field, 100 frames, 50 particles, D 1e-13 (other flags override)");
    app->add_option("--D", D, "diffusion coefficient, m^2/s [1e-13]");
    app->add_option("--particles", particles, "particle count [100]");
    app->add_option("--frames", frames, "frame count [500]");
    app->add_option("--field", field, "square field edge, px [500]");
    app->add_option("--snr", snr, "peak amplitude / noise sd; inf disables noise [3]");
    app->add_option("--blinking", blinking, "true/false [false]");
    app->add_option("--tau", tau, "blinking time constant, s [1]");
    app->add_option("--alpha", alpha, "blinking power-law exponent, < -1 [-2]");
    app->add_option("--t-max-state", t_max_state, "longest on/off state, frames [100]");
    app->add_option("--seed", seed, "random seed [1]");
    app->add_option("--psf-sigma", psf_sigma, "PSF sd, px [1.274]");
    app->add_option("--sim-pixel-size", pixel_size, "m per px [1e-7]");
    app->add_option("--sim-frame-interval", frame_interval, "s per frame [0.1]");
  }

  SimParams resolve() const {
    SimParams p = desk ? desk_preset() : SimParams{};
    if (D) p.diffusion_coefficient = *D;
    if (particles) p.n_particles = *particles;
    if (frames) p.n_frames = *frames;
    if (field) p.field = *field;
    if (snr) p.snr = *snr;
    if (blinking) p.blinking = *blinking;
    if (tau) p.tau = *tau;
    if (alpha) p.alpha = *alpha;
    if (t_max_state) p.t_max_state = *t_max_state;
    if (seed) p.seed = *seed;
    if (psf_sigma) p.psf_sigma = *psf_sigma;
    if (pixel_size) p.pixel_size = *pixel_size;
    if (frame_interval) p.frame_interval = *frame_interval;
    p.validate();
    return p;
  }
};

json to_json(const SimParams& p) {
  return {{"diffusion_coefficient", p.diffusion_coefficient},
          {"n_particles", p.n_particles},
          {"n_frames", p.n_frames},
          {"field", p.field},
          {"snr", std::isfinite(p.snr) ? json(p.snr) : json("inf")},
          {"blinking", p.blinking},
          {"tau", p.tau},
          {"alpha", p.alpha},
          {"t_max_state", p.t_max_state},
          {"seed", p.seed},
          {"pixel_size", p.pixel_size},
          {"frame_interval", p.frame_interval},
          {"psf_sigma", p.psf_sigma},
          {"amplitude", p.amplitude},
          {"background", p.background}};
}

struct LocalizerOpts {
  LocalizerParams lp;
  void add(CLI::App* app) {
    app->add_option("--threshold", lp.detection_threshold,
                    "detection level, multiples of filtered-noise sd")
        ->capture_default_str();
    app->add_option("--fit-window", lp.fit_window, "fit window edge, px, odd")
        ->capture_default_str();
    app->add_option("--max-fit-iterations", lp.max_fit_iterations)->capture_default_str();
    app->add_option("--fit-tolerance", lp.fit_tolerance, "px")->capture_default_str();
    app->add_option("--min-separation", lp.min_separation, "px")->capture_default_str();
  }
  json to_json() const {
    return {{"detection_threshold", lp.detection_threshold},
            {"fit_window", lp.fit_window},
            {"max_fit_iterations", lp.max_fit_iterations},
            {"fit_tolerance", lp.fit_tolerance},
            {"min_separation", lp.min_separation}};
  }
};

struct GraphOpts {
  GraphParams gp;
  std::optional<double> penalty;
  void add(CLI::App* app) {
    app->add_option("--radius", gp.tracking_radius, "tracking radius R, px")
        ->capture_default_str();
    app->add_option("--gap", gp.max_frame_gap, "largest frame gap g_max")
        ->capture_default_str();
    app->add_option("--penalty", penalty, "start/end penalty C [(R^2 + g_max^2) / 2]");
    app->add_option("--join-radius", gp.join_radius, "same-frame join radius, px")
        ->capture_default_str();
    app->add_flag("--quality-scaling", gp.quality_scaling,
                  "scale penalties by spot quality relative to the median");
    app->add_option("--quality-floor", gp.quality_floor)->capture_default_str();
  }
  GraphParams resolve() const {
    GraphParams p = gp;
    if (penalty) p.penalty = *penalty;
    p.validate();
    return p;
  }
};

json to_json(const GraphParams& p) {
  return {{"tracking_radius", p.tracking_radius},
          {"max_frame_gap", p.max_frame_gap},
          {"penalty", p.resolved_penalty()},
          {"join_radius", p.join_radius},
          {"quality_scaling", p.quality_scaling},
          {"quality_floor", p.quality_floor}};
}

json to_json(const ConnectionMetrics& m) {
  return {{"computed", m.computed},
          {"false_positives", m.false_positives},
          {"fp_rate", m.fp_rate()},
          {"truth_connections", m.truth_connections},
          {"false_negatives", m.false_negatives},
          {"fn_rate", m.fn_rate()},
          {"matched_spots", m.matched_spots}};
}

std::string manifest_path(const std::string& given, const std::string& output) {
  return given.empty() ? output + ".manifest.json" : given;
}

std::vector<double> parse_doubles(const std::string& list) {
  std::vector<double> v;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InvalidArgument("not a number list: " + list);
    }
  }
  if (v.empty()) throw InvalidArgument("empty list");
  return v;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateCmd {
  SimOpts sim;
  std::string movie, truth, truth_spots_csv, truth_tracks_csv, pgm, manifest;
  int pgm_frame = 0;

  void add(CLI::App& root) {
    auto* app = root.add_subcommand("simulate", "synthetic blinking random walks and movie");
    sim.add(app);
    app->add_option("--out-movie", movie, "SMMV movie")->required();
    app->add_option("--out-truth", truth, "ground-truth CSV")->required();
    app->add_option("--out-truth-spots", truth_spots_csv,
                    "visible in-field truth positions as a spot CSV");
    app->add_option("--out-truth-tracks", truth_tracks_csv,
                    "visible in-field truth positions as a track CSV");
    app->add_option("--pgm", pgm, "export one frame as PGM");
    app->add_option("--pgm-frame", pgm_frame, "frame for --pgm")->capture_default_str();
    app->add_option("--manifest", manifest, "[<out-movie>.manifest.json]");
    app->callback([this] { run(); });
  }

  void run() {
    const SimParams p = sim.resolve();
    const GroundTruth gt = simulate_walks(p);
    const Movie m = render_movie(gt, p);
    {
      auto f = open_out(movie, true);
      write_movie(f, m);
      finish(f, movie);
    }
    {
      auto f = open_out(truth);
      write_truth_csv(f, gt);
      finish(f, truth);
    }
    if (!truth_spots_csv.empty() || !truth_tracks_csv.empty()) {
      const TruthSpots ts = truth_spots(gt);
      if (!truth_spots_csv.empty()) {
        auto f = open_out(truth_spots_csv);
        write_spots_csv(f, ts.spots);
        finish(f, truth_spots_csv);
      }
      if (!truth_tracks_csv.empty()) {
        auto f = open_out(truth_tracks_csv);
        write_tracks_csv(f, truth_tracking(ts), ts.spots);
        finish(f, truth_tracks_csv);
      }
    }
    if (!pgm.empty()) {
      if (pgm_frame < 0 || pgm_frame >= m.n_frames) {
        throw InvalidArgument("--pgm-frame out of range");
      }
      auto f = open_out(pgm, true);
      write_pgm(f, m, pgm_frame);
      finish(f, pgm);
    }
    write_manifest(manifest_path(manifest, movie), "simulate",
                   {{"simulation", to_json(p)},
                    {"outputs",
                     {{"movie", movie},
                      {"truth", truth},
                      {"truth_spots", truth_spots_csv},
                      {"truth_tracks", truth_tracks_csv},
                      {"pgm", pgm},
                      {"pgm_frame", pgm_frame}}}});
  }
};

// ---------------------------------------------------------------------------
// localize

struct LocalizeCmd {
  LocalizerOpts loc;
  std::string movie, out, manifest;
  std::optional<double> psf_sigma;

  void add(CLI::App& root) {
    auto* app = root.add_subcommand("localize", "detect and fit spots in a movie");
    loc.add(app);
    app->add_option("--movie", movie, "SMMV movie")->required();
    app->add_option("--out", out, "spot CSV")->required();
    app->add_option("--psf-sigma", psf_sigma, "PSF sd, px [1.274]");
    app->add_option("--manifest", manifest, "[<out>.manifest.json]");
    app->callback([this] { run(); });
  }

  void run() {
    const double sigma = psf_sigma.value_or(Calibration{}.psf_sigma);
    auto in = open_in(movie, true);
    const Movie m = read_movie(in, sigma);
    const SpotSet spots = localize_movie(m, loc.lp);
    auto f = open_out(out);
    write_spots_csv(f, spots);
    finish(f, out);
    write_manifest(manifest_path(manifest, out), "localize",
                   {{"localizer", loc.to_json()},
                    {"psf_sigma", sigma},
                    {"inputs", {{"movie", movie}}},
                    {"outputs", {{"spots", out}}},
                    {"spots", spots.size()}});
  }
};

// ---------------------------------------------------------------------------
// track

struct TrackCmd {
  CalibrationOpts cal;
  GraphOpts graph;
  std::string spots_csv, out, report, graph_csv, manifest;
  int feedback = 0;
  std::optional<double> leap_threshold;
  bool no_certify = false;

  void add(CLI::App& root) {
    auto* app = root.add_subcommand("track", "optimal tracking of a spot CSV");
    cal.add(app);
    graph.add(app);
    app->add_option("--spots", spots_csv, "spot CSV")->required();
    app->add_option("--out", out, "track CSV")->required();
    app->add_option("--feedback", feedback,
                    "rounds of leap removal and re-optimization (0 = off)")
        ->capture_default_str();
    app->add_option("--leap-threshold", leap_threshold,
                    "squared step per frame gap counted as a leap, px^2 [robust]");
    app->add_option("--report", report, "JSON report [stdout]");
    app->add_option("--graph", graph_csv, "dump the candidate graph as CSV");
    app->add_flag("--no-certify", no_certify, "skip the optimality certificate");
    app->add_option("--manifest", manifest, "[<out>.manifest.json]");
    app->callback([this] { run(); });
  }

  void run() {
    const GraphParams gp = graph.resolve();
    if (feedback < 0) throw InvalidArgument("--feedback must be >= 0");
    auto in = open_in(spots_csv);
    const SpotSet spots = read_spots_csv(in, cal.cal);

    auto t0 = std::chrono::steady_clock::now();
    const CandidateGraph g = build_graph(spots, gp);
    const double build_seconds = seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    TrackSolver solver(g);
    Tracking tracking = solver.solve();
    const double solve_seconds = seconds_since(t0);

    double feedback_seconds = 0.0;
    json fb = nullptr;
    if (feedback > 0) {
      t0 = std::chrono::steady_clock::now();
      std::set<ArcKey> forbidden;
      int rounds = 0;
      bool converged = false;
      std::vector<double> objectives{tracking.objective};
      while (true) {
        std::set<ArcKey> leaps = detect_leaps(tracking, spots, leap_threshold);
        if (leaps.empty()) {
          converged = true;
          break;
        }
        if (rounds == feedback) break;
        forbidden.insert(leaps.begin(), leaps.end());
        tracking = solver.forbid(leaps);
        objectives.push_back(tracking.objective);
        ++rounds;
      }
      feedback_seconds = seconds_since(t0);
      fb = {{"rounds", rounds},
            {"converged", converged},
            {"forbidden_arcs", forbidden.size()},
            {"objectives", objectives}};
    }

    bool certified = false;
    if (!no_certify) {
      // Certify against the graph the final tracking was solved on.
      std::set<ArcKey> dead;
      for (std::size_t k = 0; k < g.arc_count(); ++k) {
        if (!solver.arc_alive(k)) dead.insert(g.key(g.arcs()[k]));
      }
      certify(tracking, dead.empty() ? g : g.without_arcs(dead));
      certified = true;
    }

    {
      auto f = open_out(out);
      write_tracks_csv(f, tracking, spots);
      finish(f, out);
    }
    if (!graph_csv.empty()) {
      auto f = open_out(graph_csv);
      write_graph_csv(f, g);
      finish(f, graph_csv);
    }

    json r;
    r["spots"] = spots.size();
    r["arcs"] = g.arc_count();
    r["tracks"] = tracking.tracks.size();
    r["objective"] = tracking.objective;
    r["certified"] = certified;
    r["feedback"] = fb;
    r["timing"] = {{"build_seconds", build_seconds},
                   {"solve_seconds", solve_seconds},
                   {"feedback_seconds", feedback_seconds}};
    if (report.empty()) {
      std::cout << r.dump(2) << '\n';
    } else {
      auto f = open_out(report);
      f << r.dump(2) << '\n';
      finish(f, report);
    }

    write_manifest(manifest_path(manifest, out), "track",
                   {{"calibration", cal.to_json()},
                    {"graph", to_json(gp)},
                    {"feedback", feedback},
                    {"leap_threshold", leap_threshold ? json(*leap_threshold) : json(nullptr)},
                    {"certify", !no_certify},
                    {"inputs", {{"spots", spots_csv}}},
                    {"outputs", {{"tracks", out}, {"report", report}, {"graph", graph_csv}}},
                    {"objective", tracking.objective}});
  }
};

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeCmd {
  CalibrationOpts cal;
  DistributionOptions options;
  std::string tracks, out, histogram, manifest;

  void add(CLI::App& root) {
    auto* app = root.add_subcommand("analyze", "per-track diffusion coefficients");
    cal.add(app);
    app->add_option("--tracks", tracks, "track CSV")->required();
    app->add_option("--out", out, "distribution CSV")->required();
    app->add_option("--histogram", histogram, "log10 D histogram CSV");
    app->add_option("--min-points", options.min_points)->capture_default_str();
    app->add_option("--max-lag", options.max_lag)->capture_default_str();
    app->add_option("--n-fit", options.n_fit, "lags used in the line fit")
        ->capture_default_str();
    app->add_option("--manifest", manifest, "[<out>.manifest.json]");
    app->callback([this] { run(); });
  }

  void run() {
    if (options.min_points < 2 || options.max_lag < 1 || options.n_fit < 2) {
      throw InvalidArgument("need min-points >= 2, max-lag >= 1, n-fit >= 2");
    }
    auto in = open_in(tracks);
    const TrackTable table = read_tracks_csv(in, cal.cal);
    std::vector<DiffusionEstimate> est =
        diffusion_distribution(table.tracking, table.spots, options);
    for (DiffusionEstimate& e : est) {
      e.track_id = static_cast<std::size_t>(table.track_ids[e.track_id]);
    }
    {
      auto f = open_out(out);
      write_distribution_csv(f, est);
      finish(f, out);
    }
    if (!histogram.empty()) {
      auto f = open_out(histogram);
      write_histogram_csv(f, est);
      finish(f, histogram);
    }
    write_manifest(manifest_path(manifest, out), "analyze",
                   {{"calibration", cal.to_json()},
                    {"min_points", options.min_points},
                    {"max_lag", options.max_lag},
                    {"n_fit", options.n_fit},
                    {"inputs", {{"tracks", tracks}}},
                    {"outputs", {{"distribution", out}, {"histogram", histogram}}}});
  }
};

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateCmd {
  CalibrationOpts cal;
  std::string tracks, truth, out, manifest;
  double match_radius = kMatchRadius;

  void add(CLI::App& root) {
    auto* app = root.add_subcommand("evaluate", "connection errors against ground truth");
    cal.add(app);
    app->add_option("--tracks", tracks, "track CSV")->required();
    app->add_option("--truth", truth, "ground-truth CSV")->required();
    app->add_option("--match-radius", match_radius, "px")->capture_default_str();
    app->add_option("--out", out, "metrics JSON [stdout]");
    app->add_option("--manifest", manifest, "[<out>.manifest.json, none with stdout]");
    app->callback([this] { run(); });
  }

  void run() {
    if (!(match_radius > 0)) throw InvalidArgument("--match-radius must be > 0");
    auto tin = open_in(tracks);
    const TrackTable table = read_tracks_csv(tin, cal.cal);
    auto gin = open_in(truth);
    const GroundTruth gt = read_truth_csv(gin, cal.cal);
    const ConnectionMetrics m = evaluate(table.tracking, table.spots, gt, match_radius);
    const json j = to_json(m);
    if (out.empty()) {
      std::cout << j.dump(2) << '\n';
    } else {
      auto f = open_out(out);
      f << j.dump(2) << '\n';
      finish(f, out);
    }
    if (!out.empty() || !manifest.empty()) {
      write_manifest(manifest_path(manifest, out), "evaluate",
                     {{"calibration", cal.to_json()},
                      {"match_radius", match_radius},
                      {"inputs", {{"tracks", tracks}, {"truth", truth}}},
                      {"outputs", {{"metrics", out}}}});
    }
  }
};

// ---------------------------------------------------------------------------
// sweep

struct SweepCmd {
  SimOpts sim;
  LocalizerOpts loc;
  std::string snrs = "1,2,3,4,5";
  std::string seeds = "1,2,3";
  std::optional<double> radius;
  int gap = 1;
  bool no_quality_scaling = false;
  double match_radius = kMatchRadius;
  unsigned jobs = 0;
  std::string out, json_out, manifest;

  void add(CLI::App& root) {
    auto* app = root.add_subcommand(
        "sweep", "full pipeline over an S/N grid, error rates pooled over seeds");
    sim.add(app);
    loc.add(app);
    app->add_option("--snrs", snrs, "comma list")->capture_default_str();
    app->add_option("--seeds", seeds, "comma list")->capture_default_str();
    app->add_option("--radius", radius, "px [99% one-frame displacement radius]");
    app->add_option("--gap", gap, "g_max")->capture_default_str();
    app->add_flag("--no-quality-scaling", no_quality_scaling);
    app->add_option("--match-radius", match_radius, "px")->capture_default_str();
    app->add_option("--jobs", jobs, "worker threads [hardware]");
    app->add_option("--out", out, "sweep CSV")->required();
    app->add_option("--json", json_out, "sweep JSON");
    app->add_option("--manifest", manifest, "[<out>.manifest.json]");
    app->callback([this] { run(); });
  }

  void run() {
    const SimParams base = sim.resolve();
    loc.lp.validate();
    GraphParams gp = radius_rule(base, gap);
    if (radius) gp.tracking_radius = *radius;
    gp.quality_scaling = !no_quality_scaling;
    gp.validate();
    const std::vector<double> snr_list = parse_doubles(snrs);
    std::vector<std::uint64_t> seed_list;
    for (double s : parse_doubles(seeds)) {
      if (s < 0 || s != std::floor(s)) throw InvalidArgument("seeds must be integers >= 0");
      seed_list.push_back(static_cast<std::uint64_t>(s));
    }
    for (double s : snr_list) {
      if (!(s > 0)) throw InvalidArgument("snr must be > 0");
    }

    // One task per (snr, seed); results land in fixed slots so the output
    // does not depend on scheduling.
    const std::size_t n = snr_list.size() * seed_list.size();
    std::vector<PipelineResult> results(n);
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i; (i = next++) < n;) {
        SimParams p = base;
        p.snr = snr_list[i / seed_list.size()];
        p.seed = seed_list[i % seed_list.size()];
        try {
          results[i] = run_pipeline(p, loc.lp, gp, match_radius);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    };
    const unsigned threads = std::max(
        1u, std::min<unsigned>(jobs ? jobs : std::thread::hardware_concurrency(),
                               static_cast<unsigned>(n)));
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }

    auto f = open_out(out);
    f << "snr,seeds,truth_points,spots,computed,false_positives,fp_rate,"
         "truth_connections,false_negatives,fn_rate\n";
    json points = json::array();
    for (std::size_t s = 0; s < snr_list.size(); ++s) {
      std::size_t truth_points = 0, spot_count = 0;
      ConnectionMetrics m;
      for (std::size_t k = 0; k < seed_list.size(); ++k) {
        const PipelineResult& r = results[s * seed_list.size() + k];
        truth_points += r.truth_points;
        spot_count += r.spots;
        accumulate(m, r.metrics);
      }
      f << detail::format_number(snr_list[s]) << ',' << seed_list.size() << ','
        << truth_points << ',' << spot_count << ',' << m.computed << ','
        << m.false_positives << ',' << detail::format_number(m.fp_rate()) << ','
        << m.truth_connections << ',' << m.false_negatives << ','
        << detail::format_number(m.fn_rate()) << '\n';
      json p = to_json(m);
      p["snr"] = snr_list[s];
      p["truth_points"] = truth_points;
      p["spots"] = spot_count;
      points.push_back(std::move(p));
    }
    finish(f, out);
    if (!json_out.empty()) {
      auto jf = open_out(json_out);
      jf << json{{"points", points}}.dump(2) << '\n';
      finish(jf, json_out);
    }
    write_manifest(manifest_path(manifest, out), "sweep",
                   {{"simulation", to_json(base)},
                    {"localizer", loc.to_json()},
                    {"graph", to_json(gp)},
                    {"snrs", snr_list},
                    {"seeds", seed_list},
                    {"match_radius", match_radius},
                    {"outputs", {{"csv", out}, {"json", json_out}}}});
  }
};

// ---------------------------------------------------------------------------
// bench

struct BenchCmd {
  std::string densities = "50,100,150,200";
  std::string diffusion = "1e-13";
  std::string radii = "5";
  int frames = 100;
  int field = 500;
  int gap = 3;
  std::uint64_t seed = 1;
  std::string out, manifest;

  void add(CLI::App& root) {
    auto* app = root.add_subcommand(
        "bench", "graph-build and solve time against particles per frame");
    app->add_option("--densities", densities, "particles per frame, comma list")
        ->capture_default_str();
    app->add_option("--D", diffusion, "diffusion coefficients, comma list")
        ->capture_default_str();
    app->add_option("--radii", radii, "tracking radii, px, comma list")
        ->capture_default_str();
    app->add_option("--frames", frames)->capture_default_str();
    app->add_option("--field", field, "px")->capture_default_str();
    app->add_option("--gap", gap, "g_max")->capture_default_str();
    app->add_option("--seed", seed)->capture_default_str();
    app->add_option("--out", out, "CSV")->required();
    app->add_option("--manifest", manifest, "[<out>.manifest.json]");
    app->callback([this] { run(); });
  }

  void run() {
    const auto dens = parse_doubles(densities);
    const auto ds = parse_doubles(diffusion);
    const auto rs = parse_doubles(radii);
    auto f = open_out(out);
    f << "density,D,radius,frames,spots,arcs,objective,build_seconds,solve_seconds\n";
    for (double d : ds) {
      for (double r : rs) {
        for (double density : dens) {
          if (density < 0 || density != std::floor(density)) {
            throw InvalidArgument("densities must be integers >= 0");
          }
          SimParams p;
          p.diffusion_coefficient = d;
          p.n_particles = static_cast<int>(density);
          p.n_frames = frames;
          p.field = field;
          p.seed = seed;
          p.validate();
          const TruthSpots ts = truth_spots(simulate_walks(p));
          GraphParams gp;
          gp.tracking_radius = r;
          gp.max_frame_gap = gap;
          auto t0 = std::chrono::steady_clock::now();
          const CandidateGraph g = build_graph(ts.spots, gp);
          const double build = seconds_since(t0);
          t0 = std::chrono::steady_clock::now();
          const Tracking t = solve(g);
          const double solve_s = seconds_since(t0);
          f << detail::format_number(density) << ',' << detail::format_number(d) << ','
            << detail::format_number(r) << ',' << frames << ',' << ts.spots.size() << ','
            << g.arc_count() << ',' << detail::format_number(t.objective) << ','
            << build << ',' << solve_s << '\n';
        }
      }
    }
    finish(f, out);
    write_manifest(manifest_path(manifest, out), "bench",
                   {{"densities", dens},
                    {"D", ds},
                    {"radii", rs},
                    {"frames", frames},
                    {"field", field},
                    {"gap", gap},
                    {"seed", seed},
                    {"outputs", {{"csv", out}}}});
  }
};

int run(std::vector<std::string> args) {
  CLI::App app{"blinktrack: tracking of blinking single molecules"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(0, 1);
  std::string replay;
  app.add_option("--replay", replay, "re-run the command recorded in a manifest");

  SimulateCmd simulate;
  LocalizeCmd localize;
  TrackCmd track;
  AnalyzeCmd analyze;
  EvaluateCmd evaluate_cmd;
  SweepCmd sweep;
  BenchCmd bench;
  simulate.add(app);
  localize.add(app);
  track.add(app);
  analyze.add(app);
  evaluate_cmd.add(app);
  sweep.add(app);
  bench.add(app);

  g_args = args;
  std::reverse(args.begin(), args.end());  // CLI11 wants them reversed
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  if (!replay.empty()) {
    if (app.get_subcommands().size() > 0) {
      throw InvalidArgument("--replay takes no subcommand");
    }
    auto in = open_in(replay);
    json m;
    try {
      m = json::parse(in);
      std::vector<std::string> recorded = m.at("args").get<std::vector<std::string>>();
      if (m.at("tool") != "blinktrack") throw FormatError("not a blinktrack manifest");
      return run(std::move(recorded));
    } catch (const json::exception& e) {
      throw FormatError(std::string("bad manifest: ") + e.what());
    }
  }
  if (app.get_subcommands().empty()) {
    std::cerr << app.help();
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(std::vector<std::string>(argv + 1, argv + argc));
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return 2;
  } catch (const InvariantError& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 3;
  }
}
