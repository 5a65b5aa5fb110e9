// metric-align: command-line front end for template rendering, anchor
// alignment, query pose estimation, dataset generation and evaluation.

#include "metric_align/align.hpp"
#include "metric_align/error.hpp"
#include "metric_align/evaluate.hpp"
#include "metric_align/io.hpp"
#include "metric_align/match.hpp"
#include "metric_align/mesh.hpp"
#include "metric_align/metrics.hpp"
#include "metric_align/raster.hpp"
#include "metric_align/scenegen.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace metric_align;

namespace {

enum Exit : int { kOk = 0, kIo = 2, kRender = 3, kEstimation = 4, kFormat = 5 };

int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::kIoFailure:
      return kIo;
    case ErrorCode::kEmptyRender:
      return kRender;
    case ErrorCode::kFormatError:
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kEmptyModel:
    case ErrorCode::kNonPositiveDepth:
      return kFormat;
    default:
      return kEstimation;
  }
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIoFailure, "cannot create " + dir.string() + ": " + ec.message());
}

void echo_config(const fs::path& dir, const std::string& command, json cfg) {
  cfg["command"] = command;
  write_json(dir / (command + ".config.json"), cfg);
}

CameraIntrinsics default_intrinsics() { return {572.0, 572.0, 320.0, 240.0, 640, 480}; }

// Rigid pose from either {"R","t"} or {"scale","pose"}.
RigidTransform read_pose_file(const fs::path& path) {
  const json j = read_json(path);
  try {
    if (j.contains("pose")) return scaled_pose_from_json(j).pose();
    return rigid_transform_from_json(j);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormatError, path.string() + ": " + e.what());
  }
}

struct MatcherOptions {
  std::string kind = "auto";
  double noise = 0.0;
  double outliers = 0.0;
  int max_matches = 500;
  std::uint64_t seed = 0;

  void add_to(CLI::App* app) {
    app->add_option("--matcher", kind, "auto | oracle | depth-patch (auto: oracle when gt.json exists)")
        ->check(CLI::IsMember({"auto", "oracle", "depth-patch"}));
    app->add_option("--match-noise", noise, "Oracle pixel noise sigma");
    app->add_option("--match-outliers", outliers, "Oracle outlier fraction");
    app->add_option("--max-matches", max_matches, "Pairs per template");
    app->add_option("--seed", seed, "Matcher and RANSAC seed");
  }
  json to_json() const {
    return {{"matcher", kind}, {"match_noise", noise}, {"match_outliers", outliers}, {"max_matches", max_matches},
            {"seed", seed}};
  }
  MatcherConfig config() const {
    MatcherConfig c;
    c.pixel_noise_sigma = noise;
    c.outlier_fraction = outliers;
    c.max_matches = max_matches;
    c.rng_seed = seed;
    return c;
  }
  std::unique_ptr<Matcher> make(const fs::path& obs_dir, std::string& resolved) const {
    const auto gt = load_ground_truth(obs_dir);
    resolved = kind;
    if (kind == "auto") resolved = gt ? "oracle" : "depth-patch";
    if (resolved == "oracle") {
      if (!gt) throw Error(ErrorCode::kIoFailure, "oracle matcher needs " + (obs_dir / "gt.json").string());
      return std::make_unique<OracleMatcher>(*gt, config());
    }
    return std::make_unique<DepthPatchMatcher>(config());
  }
};

// ---------------------------------------------------------------------------

struct TemplatesCmd {
  std::string mesh, intrinsics, out;
  int n = 42;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("templates", "Render depth/mask templates of the normalized mesh");
    c->add_option("--mesh", mesh, "Mesh (OBJ or PLY)")->required();
    c->add_option("--intrinsics", intrinsics, "Intrinsics JSON (default 572/572/320/240, 640x480)");
    c->add_option("-n,--n", n, "Number of viewpoints")->check(CLI::PositiveNumber);
    c->add_option("--out", out, "Output bundle directory")->required();
  }
  int run() const {
    const CameraIntrinsics k = intrinsics.empty() ? default_intrinsics() : intrinsics_from_json(read_json(intrinsics));
    const TriangleMesh normalized = normalize_mesh(load_mesh(mesh));
    const auto views = sample_viewpoints(n, template_radius(normalized, k));
    const auto templates = render_templates(normalized, k, views);
    make_dir(out);
    save_template_bundle(out, templates);
    echo_config(out, "templates",
                {{"mesh", mesh}, {"intrinsics", intrinsics}, {"resolved_intrinsics", to_json(k)}, {"n", n}, {"out", out}});
    std::cout << "wrote " << templates.size() << " templates to " << out << "\n";
    return kOk;
  }
};

struct AlignCmd {
  std::string mesh, obs, templates, out;
  MatcherOptions matcher;
  int max_iterations = 10;
  std::string rematch = "current-render";
  bool no_scale_reopt = false;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("align", "Coarse-to-fine metric alignment of the mesh to an anchor observation");
    c->add_option("--mesh", mesh, "Mesh at arbitrary scale")->required();
    c->add_option("--obs", obs, "Anchor observation directory")->required();
    c->add_option("--templates", templates, "Template bundle from 'templates'")->required();
    c->add_option("--out", out, "Output directory")->required();
    c->add_option("--max-iterations", max_iterations, "Fine-stage iteration cap")->check(CLI::NonNegativeNumber);
    c->add_option("--rematch", rematch, "Fine-stage scale source: current-render | coarse-template")
        ->check(CLI::IsMember({"current-render", "coarse-template"}));
    c->add_flag("--no-scale-reopt", no_scale_reopt, "Skip scale re-estimation during fine alignment");
    matcher.add_to(c);
  }
  int run() const {
    const TriangleMesh normalized = normalize_mesh(load_mesh(mesh));
    const Observation o = load_observation(obs);
    const auto tmpl = load_template_bundle(templates);
    std::string resolved;
    const auto m = matcher.make(obs, resolved);

    CoarseConfig cc;
    cc.ransac.seed = matcher.seed;
    const CoarseResult coarse = coarse_align(o, tmpl, *m, cc);
    FineConfig fc;
    fc.max_iterations = max_iterations;
    fc.scale_reoptimization = !no_scale_reopt;
    fc.rematch_source = rematch == "coarse-template" ? RematchSource::kCoarseTemplate : RematchSource::kCurrentRender;
    fc.rematch.ransac.seed = matcher.seed;
    const IcpRefiner refiner;
    const AlignmentResult r = fine_align(normalized, o, coarse, refiner, *m, tmpl, fc);

    make_dir(out);
    write_json(fs::path(out) / "result.json", {{"scale", r.pose.scale()},
                                               {"coarse_scale", r.coarse_scale},
                                               {"cumulative_scale", r.cumulative_scale},
                                               {"iterations", r.iterations},
                                               {"converged", r.converged},
                                               {"selected_view", coarse.selected_view},
                                               {"match_count", coarse.match_count},
                                               {"pose", to_json(r.pose)}});
    write_json(fs::path(out) / "pose.json", to_json(r.pose.pose()));
    write_json(fs::path(out) / "trace.json", trace_to_json(r));
    write_obj(scale_mesh(normalized, r.pose.scale()), fs::path(out) / "metric_mesh.obj");
    json cfg = {{"mesh", mesh},         {"obs", obs},           {"templates", templates},
                {"out", out},           {"max_iterations", max_iterations}, {"rematch", rematch},
                {"no_scale_reopt", no_scale_reopt}, {"resolved_matcher", resolved}};
    cfg.update(matcher.to_json());
    echo_config(out, "align", cfg);
    std::cout << "scale " << r.pose.scale() << " after " << r.iterations << " iterations"
              << (r.converged ? " (converged)" : "") << "\n";
    return kOk;
  }
};

struct PoseCmd {
  std::string mesh, obs, templates, out;
  double scale = 0.0;
  int top_m = 5;
  int refine_steps = 6;
  MatcherOptions matcher;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("pose", "Estimate the pose of the metric mesh in a query observation");
    c->add_option("--mesh", mesh, "Metric mesh written by 'align'")->required();
    c->add_option("--obs", obs, "Query observation directory")->required();
    c->add_option("--templates", templates, "Template bundle of the normalized mesh")->required();
    c->add_option("--out", out, "Output directory")->required();
    c->add_option("--scale", scale, "Metric scale of the templates (default: mesh radius about its origin)");
    c->add_option("--top-m", top_m, "Template hypotheses")->check(CLI::NonNegativeNumber);
    c->add_option("--refine-steps", refine_steps, "Refiner steps per hypothesis")->check(CLI::NonNegativeNumber);
    matcher.add_to(c);
  }
  int run() const {
    const TriangleMesh metric = load_mesh(mesh);
    const double s = scale > 0.0 ? scale : bounding_radius(metric);
    const Observation o = load_observation(obs);
    const auto tmpl = scale_templates(load_template_bundle(templates), s);
    std::string resolved;
    const auto m = matcher.make(obs, resolved);
    QueryConfig qc;
    qc.top_m = top_m;
    qc.refine_steps = refine_steps;
    qc.coarse.ransac.seed = matcher.seed;
    const IcpRefiner refiner;
    const QueryResult q = estimate_query_pose(metric, o, tmpl, *m, refiner, qc);

    make_dir(out);
    write_json(fs::path(out) / "pose.json", to_json(q.pose));
    json hyps = json::array();
    for (const HypothesisScore& h : q.hypotheses) hyps.push_back({{"score", h.score}, {"pose", to_json(h.hypothesis)}});
    write_json(fs::path(out) / "result.json", {{"best_index", q.best_index}, {"hypotheses", hyps}});
    json cfg = {{"mesh", mesh},   {"obs", obs},           {"templates", templates},       {"out", out},
                {"scale", s},     {"top_m", top_m},       {"refine_steps", refine_steps}, {"resolved_matcher", resolved}};
    cfg.update(matcher.to_json());
    echo_config(out, "pose", cfg);
    std::cout << "best hypothesis " << q.best_index << " score " << q.hypotheses[q.best_index].score << "\n";
    return kOk;
  }
};

struct RelposeCmd {
  std::string anchor, query, out;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("relpose", "Anchor-to-query relative transform from two absolute poses");
    c->add_option("--anchor", anchor, "Anchor pose JSON")->required();
    c->add_option("--query", query, "Query pose JSON")->required();
    c->add_option("--out", out, "Output directory")->required();
  }
  int run() const {
    const RigidTransform m = relative_pose(read_pose_file(anchor), read_pose_file(query));
    make_dir(out);
    write_json(fs::path(out) / "relpose.json", to_json(m));
    echo_config(out, "relpose", {{"anchor", anchor}, {"query", query}, {"out", out}});
    return kOk;
  }
};

struct GenCmd {
  std::string out;
  const json* file = nullptr;
  std::optional<int> scenes, targets, occluders, cameras;
  std::optional<std::uint64_t> seed;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("gen", "Generate a synthetic BOP-style dataset");
    c->add_option("--out", out, "Dataset directory")->required();
    c->add_option("--scenes", scenes, "Scene count (default 20)");
    c->add_option("--seed", seed, "Master seed");
    c->add_option("--targets", targets, "Targets per scene");
    c->add_option("--occluders", occluders, "Occluders per scene");
    c->add_option("--cameras", cameras, "Cameras per scene");
  }
  int run() const {
    const json base = file ? *file : json::object();
    SceneConfig cfg;
    try {
      cfg = scene_config_from_json(base);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kFormatError, std::string("bad scene config: ") + e.what());
    }
    int n = base.value("scenes", 20);
    if (scenes) n = *scenes;
    if (seed) cfg.rng_seed = *seed;
    if (targets) cfg.target_count = *targets;
    if (occluders) cfg.occluder_count = *occluders;
    if (cameras) cfg.camera_count = *cameras;
    if (n < 0) throw Error(ErrorCode::kInvalidArgument, "scene count must be >= 0");
    const MeshLibrary lib{builtin_targets(), builtin_occluders()};
    const DatasetManifest m = generate_dataset(lib, cfg, std::size_t(n), out);
    json echo = to_json(cfg);
    echo["scenes"] = n;
    echo["out"] = out;
    echo_config(out, "gen", echo);
    std::cout << "wrote " << m.scenes.size() << " scenes, " << m.annotation_count << " annotations\n";
    return kOk;
  }
};

struct StatsCmd {
  std::string dataset, out;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("stats", "Pose statistics and histograms of a dataset");
    c->add_option("--dataset", dataset, "Dataset directory")->required();
    c->add_option("--out", out, "Output directory")->required();
  }
  int run() const {
    const PoseStats s = dataset_stats(dataset);
    make_dir(out);
    write_json(fs::path(out) / "stats.json", to_json(s));
    write_histogram_svg(fs::path(out) / "azimuth.svg", s.azimuth, "azimuth (deg)");
    write_histogram_svg(fs::path(out) / "elevation.svg", s.elevation, "elevation (deg)");
    write_histogram_svg(fs::path(out) / "distance.svg", s.distance, "distance (m)");
    write_histogram_svg(fs::path(out) / "visibility.svg", s.visibility, "visible fraction");
    echo_config(out, "stats", {{"dataset", dataset}, {"out", out}});
    std::cout << s.azimuth.total() << " annotations\n";
    return kOk;
  }
};

struct EvalCmd {
  std::string dataset, estimates, out;
  double min_visibility = 0.1;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("eval", "Evaluate an estimates CSV against a dataset");
    c->add_option("--dataset", dataset, "Dataset directory")->required();
    c->add_option("--estimates", estimates, "Estimates CSV")->required();
    c->add_option("--out", out, "Output directory")->required();
    c->add_option("--min-visibility", min_visibility, "Skip annotations less visible than this");
  }
  int run() const {
    const auto est = read_estimates_csv(estimates);
    EvalConfig cfg;
    cfg.min_visibility = min_visibility;
    const EvalResult r = evaluate_dataset(dataset, est, cfg);
    make_dir(out);
    write_report_csv(fs::path(out) / "report.csv", r.rows);
    write_report_json(fs::path(out) / "report.json", r.rows);
    write_json(fs::path(out) / "summary.json", {{"evaluated", r.rows.size() + r.missing},
                                                {"missing", r.missing},
                                                {"vsd_recall", r.recall.vsd_recall},
                                                {"mssd_recall", r.recall.mssd_recall},
                                                {"mspd_recall", r.recall.mspd_recall},
                                                {"ar", r.recall.ar}});
    echo_config(out, "eval",
                {{"dataset", dataset}, {"estimates", estimates}, {"out", out}, {"min_visibility", min_visibility}});
    std::cout << "AR " << r.recall.ar << " over " << r.rows.size() + r.missing << " annotations (" << r.missing
              << " missing)\n";
    return kOk;
  }
};

struct EstimatesCmd {
  std::string from_gt, out;
  std::vector<std::string> entries;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("estimates", "Assemble an estimates CSV");
    c->add_option("--from-gt", from_gt, "Use every annotation of this dataset");
    c->add_option("--entry", entries, "scene,image,obj,pose.json (repeatable)");
    c->add_option("--out", out, "Output directory")->required();
  }
  int run() const {
    std::vector<Estimate> rows;
    if (!from_gt.empty()) rows = ground_truth_estimates(from_gt);
    for (const std::string& e : entries) {
      const auto p1 = e.find(','), p2 = e.find(',', p1 + 1), p3 = e.find(',', p2 + 1);
      if (p1 == std::string::npos || p2 == std::string::npos || p3 == std::string::npos) {
        throw Error(ErrorCode::kFormatError, "entry must be scene,image,obj,pose.json: " + e);
      }
      Estimate est;
      try {
        est.scene = std::stoi(e.substr(0, p1));
        est.image = std::stoi(e.substr(p1 + 1, p2 - p1 - 1));
        est.obj = std::stoi(e.substr(p2 + 1, p3 - p2 - 1));
      } catch (const std::exception&) {
        throw Error(ErrorCode::kFormatError, "entry must be scene,image,obj,pose.json: " + e);
      }
      est.pose = read_pose_file(e.substr(p3 + 1));
      rows.push_back(est);
    }
    make_dir(out);
    write_estimates_csv(fs::path(out) / "estimates.csv", rows);
    echo_config(out, "estimates", {{"from_gt", from_gt}, {"entries", entries}, {"out", out}});
    return kOk;
  }
};

// Two views of one isolated target: anchor/ and query/ observations with
// ground-truth sidecars, the mesh, the expected relative pose and a matching
// one-scene dataset for 'eval'.
struct FixtureCmd {
  std::string out;
  std::uint64_t seed = 7;
  double scale = 0.08;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("make-fixture", "Write a synthetic anchor/query fixture");
    c->add_option("--out", out, "Fixture directory")->required();
    c->add_option("--seed", seed, "Scene seed");
    c->add_option("--scale", scale, "Bounding radius of the target in meters")->check(CLI::PositiveNumber);
  }
  int run() const {
    const TriangleMesh target = scale_mesh(normalize_mesh(make_blob(seed, 1.0, 4)), scale);
    SceneConfig cfg;
    cfg.target_count = 1;
    cfg.occluder_count = 0;
    cfg.camera_count = 2;
    cfg.ground_plane = false;
    cfg.drop_to_plane = false;
    cfg.distance_min = 0.45;
    cfg.distance_max = 0.6;
    cfg.eccentric_noise_sigma = 0.01;
    cfg.rng_seed = seed;
    const MeshLibrary lib{{target}, {}};
    const fs::path root(out);
    make_dir(root);
    generate_dataset(lib, cfg, 1, root / "dataset");
    write_obj(target, root / "mesh.obj");

    const fs::path scene = root / "dataset" / "scene_000000";
    const json gt = read_json(scene / "scene_gt.json");
    RigidTransform poses[2];
    const char* names[2] = {"anchor", "query"};
    for (int i = 0; i < 2; ++i) {
      const json& ann = gt.at(std::to_string(i)).at(0);
      Mat3 r;
      for (int j = 0; j < 9; ++j) r(j / 3, j % 3) = ann.at("cam_R_m2c").at(std::size_t(j)).get<double>();
      const json& t = ann.at("cam_t_m2c");
      poses[i] = RigidTransform(r, Vec3(t[0].get<double>(), t[1].get<double>(), t[2].get<double>()) / 1000.0);
      char id[16];
      std::snprintf(id, sizeof id, "%06d", i);
      Observation obs;
      obs.depth = read_depth_png(scene / "depth" / (std::string(id) + ".png"));
      obs.mask = read_mask_png(scene / "mask_visib" / (std::string(id) + "_000000.png"));
      obs.intrinsics = cfg.intrinsics;
      save_observation(root / names[i], obs);
      save_ground_truth(root / names[i], ScaledModelPose(scale, poses[i]));
    }
    write_json(root / "expected_relpose.json", to_json(relative_pose(poses[0], poses[1])));
    write_json(root / "fixture.json", {{"seed", seed},
                                       {"scale", scale},
                                       {"scene", 0},
                                       {"obj", 1},
                                       {"anchor_image", 0},
                                       {"query_image", 1},
                                       {"tolerance_deg", 1.0},
                                       {"tolerance_m", 0.005}});
    echo_config(root, "make-fixture", {{"out", out}, {"seed", seed}, {"scale", scale}});
    return kOk;
  }
};

// --config FILE: a JSON object whose keys name long options of the chosen
// subcommand. Values become defaults, so explicit flags still win.
std::optional<json> load_config_arg(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    std::string path;
    if (std::strcmp(argv[i], "--config") == 0 && i + 1 < argc) {
      path = argv[i + 1];
    } else if (std::strncmp(argv[i], "--config=", 9) == 0) {
      path = argv[i] + 9;
    } else {
      continue;
    }
    const json j = read_json(path);
    if (!j.is_object()) throw Error(ErrorCode::kFormatError, path + ": config must be a JSON object");
    return std::optional<json>(std::in_place, j);
  }
  return std::nullopt;
}

void apply_config(CLI::App* sub, const json& cfg) {
  for (const auto& [key, value] : cfg.items()) {
    std::string name = key;
    std::replace(name.begin(), name.end(), '_', '-');
    CLI::Option* opt = nullptr;
    try {
      opt = sub->get_option("--" + name);
    } catch (const CLI::OptionNotFound&) {
      continue;
    }
    if (value.is_string()) {
      opt->default_val(value.get<std::string>());
    } else if (value.is_boolean()) {
      opt->default_val(value.get<bool>() ? "true" : "false");
    } else if (value.is_number()) {
      opt->default_val(value.dump());
    } else {
      continue;
    }
    opt->required(false);  // the file supplies it
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Metric-scale mesh alignment and relative pose toolkit", "metric-align"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON config; flags override its values");

  TemplatesCmd templates;
  AlignCmd align;
  PoseCmd pose;
  RelposeCmd relpose;
  GenCmd gen;
  StatsCmd stats;
  EvalCmd eval;
  EstimatesCmd estimates;
  FixtureCmd fixture;
  templates.add(app);
  align.add(app);
  pose.add(app);
  relpose.add(app);
  gen.add(app);
  stats.add(app);
  eval.add(app);
  estimates.add(app);
  fixture.add(app);
  for (CLI::App* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    std::optional<json> cfg = load_config_arg(argc, argv);
    if (cfg) {
      for (CLI::App* sub : app.get_subcommands({})) {
        if (sub->get_name() != "gen") apply_config(sub, *cfg);
      }
      gen.file = &*cfg;
    }
    try {
      app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      return app.exit(e);
    }

    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "templates") return templates.run();
    if (cmd == "align") return align.run();
    if (cmd == "pose") return pose.run();
    if (cmd == "relpose") return relpose.run();
    if (cmd == "gen") return gen.run();
    if (cmd == "stats") return stats.run();
    if (cmd == "eval") return eval.run();
    if (cmd == "estimates") return estimates.run();
    if (cmd == "make-fixture") return fixture.run();
    return kFormat;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: IoFailure: " << e.what() << "\n";
    return kIo;
  } catch (const json::exception& e) {
    std::cerr << "error: FormatError: " << e.what() << "\n";
    return kFormat;
  }
}
