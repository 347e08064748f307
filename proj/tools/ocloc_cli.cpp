// Command-line harness for the observation-constrained localization
// pipeline: synthetic scene generation, map building, batch localization and
// pose-accuracy evaluation.
//
// Exit codes: 0 success, 2 config error, 3 ingestion error, 4 localization
// precondition, 5 evaluation error.

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ocloc/colmap_ingest.hpp"
#include "ocloc/formats.hpp"
#include "ocloc/map.hpp"
#include "ocloc/map_io.hpp"
#include "ocloc/pipeline.hpp"
#include "ocloc/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIngest = 3;
constexpr int kExitLocalize = 4;
constexpr int kExitEvaluate = 5;

json default_config() {
  return json{
      {"seed", 0},
      {"workers", 1},
      {"scene",
       {{"n_landmarks", 200},
        {"n_db_images", 20},
        {"n_queries", 50},
        {"extent_m", 10.0},
        {"local_dim", 32},
        {"global_dim", 16},
        {"n_semantic_classes", 8},
        {"min_covisible", 30},
        {"max_kp_per_image", 0},
        {"camera",
         {{"fx", 500.0},
          {"fy", 500.0},
          {"cx", 320.0},
          {"cy", 240.0},
          {"width", 640},
          {"height", 480}}}}},
      {"noise",
       {{"pixel_sigma", 0.0},
        {"descriptor_sigma", 0.0},
        {"label_flip_rate", 0.0},
        {"outlier_match_rate", 0.0}}},
      {"map", {{"max_reproj_px", 4.0}}},
      {"retrieval",
       {{"topk", 20},
        {"dbscan_eps", 2.0},
        {"dbscan_min_pts", 2},
        {"min_matches", 12},
        {"ratio", 0.8}}},
      {"pnp",
       {{"inlier_px", 8.0},
        {"max_iters", 5000},
        {"min_inliers", 12},
        {"confidence", 0.999}}},
      {"refiner",
       {{"enabled", true},
        {"reproj_threshold_px", 10.0},
        {"distance_slack", 1.1},
        {"angle_slack", 0.1},
        {"mc_fractions", json::array({30, 50, 70})},
        {"mc_trials", 10},
        {"max_rounds", 10},
        {"use_semantic", true},
        {"match_ratio", 0.8},
        {"min_matches", 8}}}};
}

// Reject any key that does not exist in the default schema.
void validate_keys(const json& value, const json& schema,
                   const std::string& prefix) {
  for (const auto& [key, sub] : value.items()) {
    const auto path = prefix.empty() ? key : prefix + "." + key;
    if (!schema.contains(key)) {
      throw std::runtime_error("unknown config key: " + path);
    }
    if (sub.is_object()) {
      if (!schema.at(key).is_object()) {
        throw std::runtime_error("config key is not a section: " + path);
      }
      validate_keys(sub, schema.at(key), path);
    }
  }
}

void merge_into(json& base, const json& overlay) {
  for (const auto& [key, sub] : overlay.items()) {
    if (sub.is_object() && base.contains(key) && base.at(key).is_object()) {
      merge_into(base.at(key), sub);
    } else {
      base[key] = sub;
    }
  }
}

json load_config(const std::string& config_path,
                 const std::vector<std::string>& overrides) {
  json cfg = default_config();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw std::runtime_error("cannot open config file " + config_path);
    json user = json::parse(in);
    validate_keys(user, cfg, "");
    merge_into(cfg, user);
  }
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("override must be key=value: " + ov);
    }
    const std::string path = ov.substr(0, eq);
    const std::string value = ov.substr(eq + 1);
    // build a nested object from the dotted path
    json leaf;
    try {
      leaf = json::parse(value);
    } catch (const json::parse_error&) {
      leaf = value;  // bare string
    }
    json nested = leaf;
    std::vector<std::string> parts;
    std::stringstream ss(path);
    std::string part;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
      nested = json{{*it, nested}};
    }
    validate_keys(nested, cfg, "");
    merge_into(cfg, nested);
  }
  return cfg;
}

ocloc::SceneConfig scene_config_from(const json& cfg) {
  ocloc::SceneConfig sc;
  const auto& s = cfg.at("scene");
  sc.n_landmarks = s.at("n_landmarks").get<size_t>();
  sc.n_db_images = s.at("n_db_images").get<size_t>();
  sc.n_queries = s.at("n_queries").get<size_t>();
  sc.extent_m = s.at("extent_m").get<double>();
  sc.local_dim = s.at("local_dim").get<int>();
  sc.global_dim = s.at("global_dim").get<int>();
  sc.n_semantic_classes = s.at("n_semantic_classes").get<int>();
  sc.min_covisible = s.at("min_covisible").get<size_t>();
  sc.max_kp_per_image = s.at("max_kp_per_image").get<size_t>();
  const auto& c = s.at("camera");
  sc.camera = ocloc::PinholeCamera(
      c.at("fx").get<double>(), c.at("fy").get<double>(),
      c.at("cx").get<double>(), c.at("cy").get<double>(),
      c.at("width").get<int>(), c.at("height").get<int>());
  sc.seed = cfg.at("seed").get<uint64_t>();
  return sc;
}

ocloc::NoiseConfig noise_config_from(const json& cfg) {
  ocloc::NoiseConfig nc;
  const auto& n = cfg.at("noise");
  nc.pixel_sigma = n.at("pixel_sigma").get<double>();
  nc.descriptor_sigma = n.at("descriptor_sigma").get<double>();
  nc.label_flip_rate = n.at("label_flip_rate").get<double>();
  nc.outlier_match_rate = n.at("outlier_match_rate").get<double>();
  nc.seed = cfg.at("seed").get<uint64_t>() + 1;
  return nc;
}

ocloc::PipelineConfig pipeline_config_from(const json& cfg) {
  ocloc::PipelineConfig pc;
  const auto& r = cfg.at("retrieval");
  pc.topk = r.at("topk").get<size_t>();
  pc.dbscan_eps = r.at("dbscan_eps").get<double>();
  pc.dbscan_min_pts = r.at("dbscan_min_pts").get<size_t>();
  pc.fm.min_matches = r.at("min_matches").get<size_t>();
  pc.fm.match.ratio = r.at("ratio").get<double>();
  const auto& p = cfg.at("pnp");
  ocloc::PnpConfig pnp;
  pnp.inlier_px = p.at("inlier_px").get<double>();
  pnp.max_iters = p.at("max_iters").get<int>();
  pnp.min_inliers = p.at("min_inliers").get<int>();
  pnp.confidence = p.at("confidence").get<double>();
  pc.fm.pnp = pnp;
  const auto& f = cfg.at("refiner");
  pc.refine = f.at("enabled").get<bool>();
  pc.refiner.reproj_threshold_px = f.at("reproj_threshold_px").get<double>();
  pc.refiner.distance_slack = f.at("distance_slack").get<double>();
  pc.refiner.angle_slack = f.at("angle_slack").get<double>();
  pc.refiner.mc_fractions = f.at("mc_fractions").get<std::vector<int>>();
  pc.refiner.mc_trials = f.at("mc_trials").get<int>();
  pc.refiner.max_rounds = f.at("max_rounds").get<int>();
  pc.refiner.use_semantic = f.at("use_semantic").get<bool>();
  pc.refiner.match_ratio = f.at("match_ratio").get<double>();
  pc.refiner.min_matches = f.at("min_matches").get<size_t>();
  pc.refiner.pnp = pnp;
  pc.seed = cfg.at("seed").get<uint64_t>();
  return pc;
}

int cmd_gen(const json& cfg, const std::string& out_dir) {
  const auto scene = ocloc::add_noise(
      ocloc::generate_scene(scene_config_from(cfg)), noise_config_from(cfg));
  fs::create_directories(out_dir);
  ocloc::export_scene(scene, out_dir);
  std::cerr << "wrote scene: " << scene.gt_map.images.size() << " images, "
            << scene.gt_map.landmarks.size() << " landmarks, "
            << scene.queries.size() << " queries -> " << out_dir << "\n";
  return 0;
}

int cmd_build_map(const json& cfg, const std::string& input_dir,
                  const std::string& out_map) {
  auto model = ocloc::ingest_colmap_text(fs::path(input_dir) / "model");
  const fs::path feat_dir = fs::path(input_dir) / "features";
  if (!fs::is_directory(feat_dir)) {
    throw ocloc::IngestError("missing sidecar features directory: " +
                             feat_dir.string());
  }
  for (auto& img : model.images) {
    const auto feat = ocloc::load_sidecar(feat_dir / (img.name + ".feat"));
    ocloc::overlay_sidecar(img, feat);
  }
  ocloc::MapBuildConfig mb;
  mb.max_reproj_px = cfg.at("map").at("max_reproj_px").get<double>();
  ocloc::MapBuildStats stats;
  const auto map = ocloc::build_map(model.images, model.tracks, mb, &stats);
  ocloc::save_map(map, out_map);
  std::cerr << "built map: kept " << stats.kept << "/" << stats.tracks_in
            << " tracks (dropped " << stats.dropped_short << " short, "
            << stats.dropped_degenerate << " degenerate, "
            << stats.dropped_reproj << " high-error), mean reproj err "
            << stats.mean_reproj_err << " px -> " << out_map << "\n";
  return 0;
}

int cmd_localize(const json& cfg, const std::string& map_path,
                 const std::string& queries_dir, const std::string& out_poses,
                 std::string log_path) {
  const auto map = ocloc::load_map(map_path);
  auto queries = ocloc::load_queries(queries_dir);  // sorted by name
  for (const auto& q : queries) {
    if (!q.keypoints.empty() &&
        q.keypoints.front().descriptor.size() !=
            static_cast<Eigen::Index>(map.local_dim)) {
      throw std::invalid_argument("local descriptor dimension mismatch for " +
                                  q.name);
    }
    if (q.global_descriptor.size() !=
        static_cast<Eigen::Index>(map.global_dim)) {
      throw std::invalid_argument("global descriptor dimension mismatch for " +
                                  q.name);
    }
  }

  const ocloc::ObservationIndex obs_index(map);
  const auto base_cfg = pipeline_config_from(cfg);
  const int workers = std::max(1, cfg.at("workers").get<int>());

  std::vector<ocloc::LocalizeResult> results(queries.size());
  std::atomic<size_t> next{0};
  auto work = [&]() {
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= queries.size()) break;
      ocloc::PipelineConfig pc = base_cfg;
      pc.seed = base_cfg.seed + 0x9e3779b9ULL * (i + 1);
      results[i] = ocloc::localize_query(queries[i], map, obs_index, pc);
      std::cerr << "localized " << (i + 1) << "/" << queries.size() << "\n";
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  std::vector<ocloc::PoseLine> lines;
  for (size_t i = 0; i < queries.size(); ++i) {
    ocloc::PoseLine pl;
    pl.name = queries[i].name;
    if (results[i].estimate) {
      pl.pose = results[i].estimate->pose;
    } else {
      pl.failure_reason = results[i].failure_reason;
    }
    lines.push_back(std::move(pl));
  }
  ocloc::write_pose_file(lines, out_poses);

  if (log_path.empty()) log_path = out_poses + ".jsonl";
  std::ofstream log(log_path, std::ios::trunc);
  for (size_t i = 0; i < queries.size(); ++i) {
    json entry{{"name", queries[i].name},
               {"candidates_tried", results[i].candidates_tried},
               {"candidates_solved", results[i].candidates_solved},
               {"rounds_accepted", results[i].refine_outcome.rounds_accepted}};
    if (results[i].estimate) {
      entry["inliers"] = results[i].estimate->inliers.size();
      if (results[i].estimate->uncertainty) {
        entry["sigma_t"] = results[i].estimate->uncertainty->sigma_t;
        entry["sigma_r"] = results[i].estimate->uncertainty->sigma_r;
      }
    } else {
      entry["failed"] = results[i].failure_reason;
    }
    log << entry.dump() << "\n";
  }
  return 0;
}

int cmd_evaluate(const std::string& poses_path, const std::string& gt_path,
                 const std::vector<double>& thresh, bool as_json) {
  const auto result_lines = ocloc::read_pose_file(poses_path);
  const auto gt_lines = ocloc::read_pose_file(gt_path);
  std::map<std::string, ocloc::Pose> gt;
  for (const auto& l : gt_lines) {
    if (l.pose) gt[l.name] = *l.pose;
  }
  std::vector<std::pair<std::string, ocloc::Pose>> results;
  for (const auto& l : result_lines) {
    if (l.pose) results.emplace_back(l.name, *l.pose);
  }
  std::array<ocloc::EvalThreshold, 3> thresholds{
      ocloc::EvalThreshold{thresh[0], thresh[1]},
      ocloc::EvalThreshold{thresh[2], thresh[3]},
      ocloc::EvalThreshold{thresh[4], thresh[5]}};
  const auto report = ocloc::evaluate(results, gt, thresholds);
  if (as_json) {
    json out{{"accuracy", report.accuracy_pct},
             {"median_trans_m", report.median_trans_m},
             {"median_rot_deg", report.median_rot_deg},
             {"n_queries", gt.size()},
             {"n_localized", results.size()}};
    std::cout << out.dump(2) << "\n";
  } else {
    std::cout << "accuracy: "
              << ocloc::format_accuracy_triple(report.accuracy_pct) << "\n"
              << "median translation error [m]: " << report.median_trans_m
              << "\n"
              << "median rotation error [deg]: " << report.median_rot_deg
              << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "ocloc - observation-constrained visual localization pipeline.\n"
      "Config file: JSON with sections scene/noise/map/retrieval/pnp/refiner;\n"
      "unknown keys are rejected. Every key can be overridden with\n"
      "--set section.key=value. Run with --dump-config to see all defaults."};
  app.require_subcommand(0, 1);

  std::string config_path;
  std::vector<std::string> overrides;
  bool dump_config = false;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--set", overrides,
                 "Override a config value, e.g. --set retrieval.topk=10 or "
                 "--set seed=7 (repeatable; dotted path into the config)");
  app.add_flag("--dump-config", dump_config,
               "Print the effective config (all defaults merged) and exit");

  auto* gen = app.add_subcommand("gen", "Generate a synthetic scene");
  std::string gen_out;
  gen->add_option("--out", gen_out, "Output scene directory")->required();

  auto* build = app.add_subcommand(
      "build-map", "Build an observation-constraints map from a scene "
                   "directory (SFM text model + sidecar features)");
  std::string build_in, build_out;
  build->add_option("--input", build_in, "Scene directory")->required();
  build->add_option("--out", build_out, "Output map file")->required();

  auto* loc = app.add_subcommand("localize", "Localize query images");
  std::string loc_map, loc_queries, loc_out, loc_log;
  loc->add_option("--map", loc_map, "Map file")->required();
  loc->add_option("--queries", loc_queries,
                  "Query directory (sidecars + cameras.txt)")
      ->required();
  loc->add_option("--out", loc_out, "Output pose file")->required();
  loc->add_option("--log", loc_log,
                  "JSON-lines per-query log (default <out>.jsonl)");

  auto* eval = app.add_subcommand("evaluate", "Evaluate poses against ground truth");
  std::string eval_poses, eval_gt;
  std::vector<double> eval_thresh = {0.25, 2.0, 0.5, 5.0, 5.0, 10.0};
  bool eval_json = false;
  eval->add_option("--poses", eval_poses, "Estimated pose file")->required();
  eval->add_option("--gt", eval_gt, "Ground-truth pose file")->required();
  eval->add_option("--thresholds", eval_thresh,
                   "Three (trans_m, rot_deg) pairs, 6 numbers "
                   "(default 0.25 2 0.5 5 5 10)")
      ->expected(6);
  eval->add_flag("--json", eval_json, "Machine-readable JSON report");

  CLI11_PARSE(app, argc, argv);

  json cfg;
  try {
    cfg = load_config(config_path, overrides);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
  if (dump_config) {
    std::cout << cfg.dump(2) << "\n";
    return 0;
  }

  try {
    if (gen->parsed()) return cmd_gen(cfg, gen_out);
    if (build->parsed()) {
      try {
        return cmd_build_map(cfg, build_in, build_out);
      } catch (const ocloc::IngestError& e) {
        std::cerr << "ingestion error: " << e.what() << "\n";
        return kExitIngest;
      } catch (const ocloc::FormatError& e) {
        std::cerr << "ingestion error: " << e.what() << "\n";
        return kExitIngest;
      }
    }
    if (loc->parsed()) {
      try {
        return cmd_localize(cfg, loc_map, loc_queries, loc_out, loc_log);
      } catch (const std::invalid_argument& e) {
        std::cerr << "localization error: " << e.what() << "\n";
        return kExitLocalize;
      }
    }
    if (eval->parsed()) {
      try {
        return cmd_evaluate(eval_poses, eval_gt, eval_thresh, eval_json);
      } catch (const ocloc::PoseFileError& e) {
        std::cerr << "evaluation error: " << e.what() << "\n";
        return kExitEvaluate;
      } catch (const std::invalid_argument& e) {
        std::cerr << "evaluation error: " << e.what() << "\n";
        return kExitEvaluate;
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  std::cout << app.help() << "\n";
  return 0;
}
