/******************************************************************************
 * Copyright 2026 The mapfuse Authors. All Rights Reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *****************************************************************************/

#include "mapfuse/cli.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mapfuse/baseline.hpp"
#include "mapfuse/bundle.hpp"
#include "mapfuse/compress.hpp"
#include "mapfuse/io.hpp"
#include "mapfuse/merge.hpp"
#include "mapfuse/stats.hpp"

namespace mapfuse {

namespace {

using nlohmann::json;

// Value given on the command line, if any.
template <typename T>
struct Flag {
  T value{};
  CLI::Option* opt = nullptr;

  std::optional<T> get() const { return opt != nullptr && opt->count() > 0 ? std::optional<T>(value) : std::nullopt; }
};

template <typename T>
Flag<T>& add(CLI::App* app, const std::string& name, Flag<T>& flag, const std::string& help) {
  flag.opt = app->add_option(name, flag.value, help);
  return flag;
}

template <typename T>
T parse_env(const std::string& text, const std::string& name) {
  if constexpr (std::is_same_v<T, std::string>) {
    return text;
  } else if constexpr (std::is_same_v<T, bool>) {
    return text == "1" || text == "true" || text == "yes";
  } else {
    T v{};
    const char* end = text.data() + text.size();
    const auto res = std::from_chars(text.data(), end, v);
    if (res.ec != std::errc{} || res.ptr != end) throw Error(ErrorKind::kInvalidArgument, "bad value in " + name);
    return v;
  }
}

// Precedence: command-line flag, MAPFUSE_<KEY> environment variable, --config file, default.
class Settings {
 public:
  explicit Settings(const std::string& path) {
    if (path.empty()) return;
    try {
      config_ = json::parse(read_text(path));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kParse, "config " + path + ": " + e.what());
    }
    if (!config_.is_object()) throw Error(ErrorKind::kParse, "config " + path + " must be a JSON object");
  }

  template <typename T>
  T get(const Flag<T>& flag, const std::string& key, T fallback) const {
    if (auto v = flag.get()) return *v;
    std::string env = "MAPFUSE_" + key;
    std::transform(env.begin(), env.end(), env.begin(), [](unsigned char c) { return std::toupper(c); });
    if (const char* v = std::getenv(env.c_str())) return parse_env<T>(v, env);
    if (config_.contains(key)) {
      try {
        return config_.at(key).get<T>();
      } catch (const json::exception& e) {
        throw Error(ErrorKind::kParse, "config key " + key + ": " + e.what());
      }
    }
    return fallback;
  }

 private:
  json config_ = json::object();
};

std::vector<std::string> split(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
std::vector<T> split_numbers(const std::string& text, const char* what) {
  std::vector<T> out;
  for (const auto& s : split(text)) out.push_back(parse_env<T>(s, what));
  return out;
}

json transform_json(const SimilarityTransform& t) {
  json rot = json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) rot.push_back(t.rotation(r, c));
  }
  return {{"scale", t.scale}, {"rotation", rot}, {"translation", {t.translation.x(), t.translation.y(), t.translation.z()}}};
}

json report_json(const BundleReport& r) {
  return {{"squared_residual", r.squared_residual},
          {"gradient_norm", r.gradient_norm},
          {"iterations", r.iterations},
          {"converged", r.converged}};
}

json bands_json(const std::vector<BandCheck>& bands, bool& all) {
  json out = json::array();
  all = true;
  for (const auto& b : bands) {
    out.push_back({{"name", b.name}, {"pass", b.pass}, {"detail", b.detail}});
    all = all && b.pass;
  }
  return out;
}

void emit(std::ostream& out, const json& doc) { out << doc.dump(2) << "\n"; }

struct BundleArgs {
  std::string input;
  Flag<std::string> out;
  Flag<int> max_iterations;
  Flag<double> tolerance;
};

struct CompressArgs {
  std::string input;
  Flag<std::string> anchors, corr, out;
  Flag<int> map_index;
  Flag<double> tolerance;
  bool with_recovery = false;
  bool allow_non_optimal = false;
};

struct MergeArgs {
  std::vector<std::string> inputs;
  Flag<std::string> corr, recompress;
  Flag<double> sigma, test_level;
  Flag<int> max_iterations;
  bool free_first = false;
};

struct SimulateArgs {
  std::string experiment;
  Flag<std::uint64_t> seed;
  Flag<int> runs, jobs, points, cameras, maps, anchors;
  Flag<double> sigma, visibility, level, displacement;
  Flag<std::string> out, thresholds, pair_counts;
};

struct ProcrustesArgs {
  std::vector<std::string> inputs;
  Flag<std::string> out;
};

int cmd_bundle(const BundleArgs& a, const Settings& cfg, std::ostream& out, std::ostream& err) {
  const SceneMap map = load_map(a.input);
  BundleOptions opts;
  opts.max_iterations = cfg.get(a.max_iterations, "max_iterations", opts.max_iterations);
  opts.gradient_norm_tolerance = cfg.get(a.tolerance, "tolerance", opts.gradient_norm_tolerance);
  const BundleResult res = bundle_adjust(map, opts);
  json doc{{"command", "bundle"}, {"report", report_json(res.report)}};
  if (auto path = a.out.get()) {
    save_map(*path, res.map);
    doc["output"] = *path;
  }
  err << "bundle: " << res.report.iterations << " iterations, a^2 = " << res.report.squared_residual
      << (res.report.converged ? "" : " (not converged)") << "\n";
  emit(out, doc);
  return res.report.converged ? kExitOk : kExitNotConverged;
}

int cmd_compress(const CompressArgs& a, const Settings& cfg, std::ostream& out, std::ostream& err) {
  const SceneMap map = load_map(a.input);
  std::vector<TrackId> anchors;
  if (auto list = a.anchors.get()) {
    anchors = split_numbers<TrackId>(*list, "--anchors");
  } else if (auto path = a.corr.get()) {
    const Correspondences corr = load_correspondences(*path);
    const int k = cfg.get(a.map_index, "map_index", 0);
    if (k < 0 || k >= corr.num_maps()) throw Error(ErrorKind::kInvalidArgument, "--map-index out of range");
    for (int g : corr.to_global[k]) {
      if (g < 0 || g >= corr.num_global()) throw Error(ErrorKind::kParse, "correspondence index out of range");
      anchors.push_back(corr.global_ids[g]);
    }
  } else {
    throw Error(ErrorKind::kInvalidArgument, "compress needs --anchors or --corr");
  }
  CompressOptions opts;
  opts.with_recovery = a.with_recovery;
  opts.require_optimum = !a.allow_non_optimal;
  opts.optimum_tolerance = cfg.get(a.tolerance, "tolerance", opts.optimum_tolerance);
  CompressedMap cmap;
  try {
    cmap = compress_map(map, anchors, opts);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kNotConverged) throw;
    emit(out, {{"error", {{"kind", to_string(e.kind())}, {"message", e.what()}, {"gradient_norm", gradient_norm(map)}}}});
    err << "error: " << e.what() << "\n";
    return kExitCompression;
  }
  err << "compress: R is " << cmap.r.rows() << "x" << cmap.r.cols() << "\n";
  json doc{{"command", "compress"},
           {"anchors", cmap.num_anchors()},
           {"r_rows", cmap.r.rows()},
           {"r_cols", cmap.r.cols()},
           {"a", cmap.a},
           {"eta_res", cmap.eta_res},
           {"d_dof", cmap.d_dof},
           {"with_recovery", cmap.recovery.has_value()}};
  if (auto path = a.out.get()) {
    save_footprint(*path, cmap);
    doc["output"] = *path;
  }
  emit(out, doc);
  return kExitOk;
}

int cmd_merge(const MergeArgs& a, const Settings& cfg, std::ostream& out, std::ostream& err) {
  std::vector<CompressedMap> cmaps;
  for (const auto& path : a.inputs) cmaps.push_back(load_footprint(path));
  const Correspondences corr =
      a.corr.get() ? load_correspondences(*a.corr.get()) : Correspondences::from_track_ids(cmaps);
  MergeOptions opts;
  opts.lm.max_iterations = cfg.get(a.max_iterations, "max_iterations", opts.lm.max_iterations);
  opts.fix_first_transform = !a.free_first;
  const MergeSolution sol = merge_bundle(cmaps, corr, opts);

  json q = json::array();
  for (int g = 0; g < corr.num_global(); ++g) q.push_back({sol.q(3 * g), sol.q(3 * g + 1), sol.q(3 * g + 2)});
  json transforms = json::array();
  for (const auto& t : sol.transforms) transforms.push_back(transform_json(t));
  const double a_tilde = merge_a_tilde(cmaps, sol);
  json doc{{"command", "merge"},
           {"global_ids", sol.global_ids},
           {"q", q},
           {"transforms", transforms},
           {"a_bar_squared", sol.a_bar * sol.a_bar},
           {"a_tilde", a_tilde},
           {"report", report_json(sol.report)}};

  const long dof = dof_delta(corr);
  doc["dof_delta"] = dof;
  const double level = cfg.get(a.test_level, "test_level", 0.99);
  std::optional<double> sigma = a.sigma.get();
  if (!sigma) sigma = cfg.get(a.sigma, "sigma", std::numeric_limits<double>::quiet_NaN());
  if (std::isnan(*sigma)) {
    sigma = estimate_sigma(cmaps);
    doc["sigma_source"] = "estimated";
  } else {
    doc["sigma_source"] = "given";
  }
  doc["sigma"] = *sigma;
  if (dof > 0) {
    const ChangeTestResult test = change_test(a_tilde, gamma_params(*sigma, dof), level);
    doc["test"] = {{"alpha", test.params.alpha}, {"nu", test.params.nu},       {"p_value", test.p_value},
                   {"threshold", test.threshold}, {"level", test.level},        {"rejected", test.rejected}};
    err << "merge: a_tilde = " << a_tilde << ", threshold = " << test.threshold
        << (test.rejected ? " -> change detected" : " -> consistent") << "\n";
  } else {
    doc["test"] = nullptr;
    err << "merge: degrees-of-freedom delta " << dof << ", no test\n";
  }
  if (auto path = a.recompress.get()) {
    save_footprint(*path, recompress_merge(cmaps, corr, sol));
    doc["recompressed"] = *path;
  }
  emit(out, doc);
  return sol.report.converged ? kExitOk : kExitNotConverged;
}

int cmd_simulate(const SimulateArgs& a, const Settings& cfg, std::ostream& out, std::ostream& err) {
  const std::uint64_t seed = cfg.get(a.seed, "seed", std::uint64_t{1});
  const int jobs = cfg.get(a.jobs, "jobs", 1);
  json results;
  std::vector<BandCheck> bands;
  std::vector<ExperimentRecord> records;
  int runs = 0;

  auto box_spec = [&](double sigma, double visibility) {
    BoxSceneSpec s;
    s.sigma = cfg.get(a.sigma, "sigma", sigma);
    s.visibility_fraction = cfg.get(a.visibility, "visibility", visibility);
    s.n_points = cfg.get(a.points, "points", s.n_points);
    s.n_cameras = cfg.get(a.cameras, "cameras", s.n_cameras);
    s.n_maps = cfg.get(a.maps, "maps", s.n_maps);
    s.seed = seed;
    return s;
  };

  if (a.experiment == "hist") {
    HistogramOptions o;
    runs = o.runs = cfg.get(a.runs, "runs", 2000);
    o.jobs = jobs;
    o.master_seed = seed;
    o.anchors = cfg.get(a.anchors, "anchors", o.anchors);
    o.level = cfg.get(a.level, "level", o.level);
    const HistogramResult r = run_histogram_experiment(box_spec(0.05, 1.0), o);
    records = r.records;
    results = {{"alpha", r.params.alpha}, {"nu", r.params.nu},          {"dof_delta", r.dof},
               {"mean", r.empirical_mean}, {"expected_mean", r.params.mean()}, {"ks", r.ks},
               {"mean_a2", r.mean_a2},    {"expected_a2", r.expected_a2},   {"false_alarm_rate", r.false_alarm_rate},
               {"failures", r.failures}};
    bands = check_bands(r);
  } else if (a.experiment == "earlystop") {
    EarlyStopOptions o;
    runs = o.runs = cfg.get(a.runs, "runs", 200);
    o.jobs = jobs;
    o.master_seed = seed;
    const std::string grid = cfg.get(a.thresholds, "thresholds", std::string());
    o.thresholds = grid.empty() ? log_grid(1e1, 1e-8, 10) : split_numbers<double>(grid, "--thresholds");
    const EarlyStopResult r = run_early_stop_experiment(box_spec(0.005, 0.8), o);
    records = r.records;
    results = {{"thresholds", r.thresholds},   {"mean_ours", r.mean_ours}, {"mean_procrustes", r.mean_procrustes},
               {"mean_full", r.mean_full},     {"mean_individual", r.mean_individual}, {"failures", r.failures}};
    bands = check_bands(r);
  } else if (a.experiment == "loop") {
    RoomSceneSpec s;
    s.sigma = cfg.get(a.sigma, "sigma", s.sigma);
    s.points_per_wall = cfg.get(a.points, "points", s.points_per_wall);
    s.cameras_per_wall = cfg.get(a.cameras, "cameras", s.cameras_per_wall);
    const std::string pairs = cfg.get(a.pair_counts, "pair_counts", std::string());
    if (!pairs.empty()) {
      const auto c = split_numbers<int>(pairs, "--pair-counts");
      if (c.size() != 4) throw Error(ErrorKind::kInvalidArgument, "--pair-counts needs four numbers");
      s.pair_counts = std::array<int, 4>{c[0], c[1], c[2], c[3]};
    }
    LoopOptions o;
    runs = o.runs = cfg.get(a.runs, "runs", 300);
    o.jobs = jobs;
    o.master_seed = seed;
    const LoopResult r = run_loop_closure_experiment(s, o);
    records = r.records;
    results = {{"rate_full", r.rate_full},
               {"rate_ours_with_1_4", r.rate_ours_b},
               {"rate_ours_without_1_4", r.rate_ours_a},
               {"rate_procrustes", r.rate_procrustes},
               {"rate_with_beats_without", r.rate_b_beats_a},
               {"rate_with_halves_without", r.rate_b_halves_a},
               {"mean_rmse_ours_successes", r.mean_rmse_b_success},
               {"failures", r.failures}};
    bands = check_bands(r);
  } else if (a.experiment == "change") {
    ChangeOptions o;
    runs = o.runs = cfg.get(a.runs, "runs", 200);
    o.jobs = jobs;
    o.master_seed = seed;
    o.anchors = cfg.get(a.anchors, "anchors", o.anchors);
    o.level = cfg.get(a.level, "level", o.level);
    o.displacement_sigmas = cfg.get(a.displacement, "displacement", o.displacement_sigmas);
    const ChangeResult r = run_change_experiment(box_spec(0.05, 1.0), o);
    records = r.records;
    results = {{"detection_rate", r.detection_rate}, {"false_alarm_rate", r.false_alarm_rate}, {"failures", r.failures}};
    bands = check_bands(r);
  } else {
    throw Error(ErrorKind::kInvalidArgument, "unknown experiment '" + a.experiment + "' (hist, earlystop, loop, change)");
  }

  bool pass = true;
  json doc{{"command", "simulate"}, {"experiment", a.experiment}, {"seed", seed}, {"runs", runs}};
  doc["config_hash"] = records.empty() ? "" : records.front().config_hash;
  doc["results"] = results;
  doc["bands"] = bands_json(bands, pass);
  doc["pass"] = pass;
  if (auto prefix = a.out.get()) {
    write_text(*prefix + ".csv", records_csv(records));
    doc["csv"] = *prefix + ".csv";
    doc["summary"] = *prefix + ".json";
    write_text(*prefix + ".json", doc.dump(2) + "\n");
  }
  err << "simulate " << a.experiment << ": " << runs << " runs, bands " << (pass ? "pass" : "fail") << "\n";
  emit(out, doc);
  return kExitOk;
}

int cmd_procrustes(const ProcrustesArgs& a, std::ostream& out) {
  std::vector<PointSet> sets;
  for (const auto& path : a.inputs) sets.push_back(point_set(load_map(path)));
  const PointSet merged = average_merge(sets);
  json xyz = json::array();
  for (const auto& p : merged.xyz) xyz.push_back({p.x(), p.y(), p.z()});
  json doc{{"command", "procrustes"}, {"ids", merged.ids}, {"xyz", xyz}};
  if (auto path = a.out.get()) {
    SceneMap m;
    for (std::size_t i = 0; i < merged.ids.size(); ++i) m.points.push_back({merged.xyz[i], merged.ids[i]});
    save_map(*path, m);
    doc["output"] = *path;
  }
  emit(out, doc);
  return kExitOk;
}

}  // namespace

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kNotConverged:
    case ErrorKind::kSingularAuxiliary:
    case ErrorKind::kDegenerateAnchors:
      return kExitCompression;
    case ErrorKind::kInsufficientOverlap:
    case ErrorKind::kDegenerateCorrespondences:
      return kExitOverlap;
    default:
      return kExitInput;
  }
}

std::string records_csv(const std::vector<ExperimentRecord>& records) {
  std::string out =
      "run,seed,config_hash,ok,threshold,a_tilde,rmse_ours,rmse_ours_without_1_4,rmse_procrustes,rmse_full,"
      "rmse_individual,success_ours,success_ours_without_1_4,success_procrustes,success_full,rejected,"
      "rejected_clean\n";
  char buf[1024];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%d,%llu,%s,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%d,%d,%d,%d,%d\n",
                  r.run, static_cast<unsigned long long>(r.seed), r.config_hash.c_str(), r.ok ? 1 : 0,
                  r.threshold, r.a_tilde, r.rmse_ours, r.rmse_ours_a, r.rmse_procrustes, r.rmse_full,
                  r.rmse_individual, r.success_ours, r.success_ours_a, r.success_procrustes, r.success_full,
                  r.rejected, r.rejected_clean);
    out += buf;
  }
  return out;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Merge SfM maps through compressed residual footprints", "mapfuse"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON file with default option values")->check(CLI::ExistingFile);

  BundleArgs bundle;
  auto* b = app.add_subcommand("bundle", "Bundle-adjust a map file");
  b->add_option("input", bundle.input, "map file")->required();
  add(b, "--out", bundle.out, "write the optimized map here");
  add(b, "--max-iterations", bundle.max_iterations, "LM iteration cap");
  add(b, "--tolerance", bundle.tolerance, "gradient-norm stop");

  CompressArgs compress;
  auto* c = app.add_subcommand("compress", "Compress a converged map into a footprint");
  c->add_option("input", compress.input, "map file")->required();
  add(c, "--anchors", compress.anchors, "comma-separated anchor track ids");
  add(c, "--corr", compress.corr, "correspondence file naming the anchors");
  add(c, "--map-index", compress.map_index, "map of --corr to take anchors from");
  add(c, "--out", compress.out, "footprint file to write");
  add(c, "--tolerance", compress.tolerance, "relative gradient tolerance of the optimum check");
  c->add_flag("--with-recovery", compress.with_recovery, "store ds/dq and the auxiliary parameters");
  c->add_flag("--allow-non-optimal", compress.allow_non_optimal, "skip the optimum check");

  MergeArgs merge;
  auto* m = app.add_subcommand("merge", "Merge footprints and test the merge");
  m->add_option("footprints", merge.inputs, "footprint files")->required();
  add(m, "--corr", merge.corr, "correspondence file (default: match by track id)");
  add(m, "--sigma", merge.sigma, "image noise level (default: estimated)");
  add(m, "--test-level", merge.test_level, "level of the change test");
  add(m, "--recompress", merge.recompress, "write the footprint of the merged map");
  add(m, "--max-iterations", merge.max_iterations, "LM iteration cap");
  m->add_flag("--free-first-transform", merge.free_first, "optimize T_1 as well");

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Run a simulated experiment");
  s->add_option("experiment", sim.experiment, "hist | earlystop | loop | change")->required();
  add(s, "--seed", sim.seed, "master seed");
  add(s, "--runs", sim.runs, "number of runs");
  add(s, "--jobs", sim.jobs, "worker threads");
  add(s, "--out", sim.out, "output prefix for <prefix>.csv and <prefix>.json");
  add(s, "--sigma", sim.sigma, "image noise");
  add(s, "--visibility", sim.visibility, "camera visibility fraction");
  add(s, "--points", sim.points, "points (per wall for loop)");
  add(s, "--cameras", sim.cameras, "cameras per map");
  add(s, "--maps", sim.maps, "maps per run");
  add(s, "--anchors", sim.anchors, "anchors per map");
  add(s, "--thresholds", sim.thresholds, "comma-separated early-stop thresholds");
  add(s, "--level", sim.level, "change-test level");
  add(s, "--pair-counts", sim.pair_counts, "shared points per corner, four numbers");
  add(s, "--displacement", sim.displacement, "change size in units of sigma");

  ProcrustesArgs proc;
  auto* p = app.add_subcommand("procrustes", "Register-and-average baseline");
  p->add_option("maps", proc.inputs, "map files")->required();
  add(p, "--out", proc.out, "write the averaged points as a map file");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    emit(out, {{"error", {{"kind", to_string(ErrorKind::kInvalidArgument)}, {"message", e.what()}}}});
    err << "error: " << e.what() << "\n";
    return kExitInput;
  }

  try {
    const Settings cfg(config_path);
    if (b->parsed()) return cmd_bundle(bundle, cfg, out, err);
    if (c->parsed()) return cmd_compress(compress, cfg, out, err);
    if (m->parsed()) return cmd_merge(merge, cfg, out, err);
    if (s->parsed()) return cmd_simulate(sim, cfg, out, err);
    return cmd_procrustes(proc, out);
  } catch (const Error& e) {
    emit(out, {{"error", {{"kind", to_string(e.kind())}, {"message", e.what()}}}});
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    emit(out, {{"error", {{"kind", to_string(ErrorKind::kNumericalFailure)}, {"message", e.what()}}}});
    err << "error: " << e.what() << "\n";
    return kExitInput;
  }
}

}  // namespace mapfuse
