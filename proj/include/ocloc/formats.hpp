#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ocloc/colmap_ingest.hpp"
#include "ocloc/map.hpp"
#include "ocloc/map_io.hpp"
#include "ocloc/synthetic.hpp"

namespace ocloc {

struct PoseFileError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One result line in the benchmark submission convention:
//   name qw qx qy qz tx ty tz        (world-to-camera)
//   name FAILED <reason>             (no pose produced)
struct PoseLine {
  std::string name;
  std::optional<Pose> pose;
  std::string failure_reason;
};

namespace detail {

inline std::string fmt_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline void write_pose_file(const std::vector<PoseLine>& lines,
                            const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("write_pose_file: cannot open " + path.string());
  for (const auto& l : lines) {
    if (l.pose) {
      out << l.name << ' ' << detail::fmt_real(l.pose->q.w()) << ' '
          << detail::fmt_real(l.pose->q.x()) << ' '
          << detail::fmt_real(l.pose->q.y()) << ' '
          << detail::fmt_real(l.pose->q.z()) << ' '
          << detail::fmt_real(l.pose->t.x()) << ' '
          << detail::fmt_real(l.pose->t.y()) << ' '
          << detail::fmt_real(l.pose->t.z()) << '\n';
    } else {
      out << l.name << " FAILED " << l.failure_reason << '\n';
    }
  }
}

inline std::vector<PoseLine> read_pose_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_pose_file: cannot open " + path.string());
  std::vector<PoseLine> lines;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    PoseLine pl;
    std::string second;
    if (!(ss >> pl.name >> second)) {
      throw PoseFileError("malformed pose line " + std::to_string(lineno) +
                          " in " + path.filename().string());
    }
    if (second == "FAILED") {
      std::getline(ss, pl.failure_reason);
      if (!pl.failure_reason.empty() && pl.failure_reason.front() == ' ') {
        pl.failure_reason.erase(0, 1);
      }
      lines.push_back(std::move(pl));
      continue;
    }
    double qw, qx, qy, qz, tx, ty, tz;
    try {
      qw = std::stod(second);
    } catch (const std::exception&) {
      throw PoseFileError("malformed quaternion at line " +
                          std::to_string(lineno) + " in " +
                          path.filename().string());
    }
    if (!(ss >> qx >> qy >> qz >> tx >> ty >> tz)) {
      throw PoseFileError("malformed pose line " + std::to_string(lineno) +
                          " in " + path.filename().string());
    }
    const Eigen::Quaterniond q(qw, qx, qy, qz);
    if (!(std::abs(q.norm() - 1.0) <= 1e-3)) {  // also catches NaN
      throw PoseFileError("non-unit quaternion at line " +
                          std::to_string(lineno) + " in " +
                          path.filename().string());
    }
    pl.pose = Pose(q, Eigen::Vector3d(tx, ty, tz));
    lines.push_back(std::move(pl));
  }
  return lines;
}

// Query intrinsics list: one line per query,
//   name fx fy cx cy width height
inline void write_camera_list(
    const std::vector<std::pair<std::string, PinholeCamera>>& cams,
    const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("write_camera_list: cannot open " + path.string());
  for (const auto& [name, cam] : cams) {
    out << name << ' ' << detail::fmt_real(cam.fx) << ' '
        << detail::fmt_real(cam.fy) << ' ' << detail::fmt_real(cam.cx) << ' '
        << detail::fmt_real(cam.cy) << ' ' << cam.width << ' ' << cam.height
        << '\n';
  }
}

inline std::map<std::string, PinholeCamera> read_camera_list(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_camera_list: cannot open " + path.string());
  std::map<std::string, PinholeCamera> cams;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string name;
    double fx, fy, cx, cy;
    int w, h;
    if (!(ss >> name >> fx >> fy >> cx >> cy >> w >> h)) {
      throw PoseFileError("malformed camera line " + std::to_string(lineno) +
                          " in " + path.filename().string());
    }
    cams.emplace(name, PinholeCamera(fx, fy, cx, cy, w, h));
  }
  return cams;
}

// Copy descriptors, labels, scores and the global descriptor from a sidecar
// onto an ingested image (which carries only pixel positions and poses).
inline void overlay_sidecar(ImageRecord& img, const SidecarFeatures& feat) {
  if (feat.keypoints.size() != img.keypoints.size()) {
    throw FormatError("overlay_sidecar: keypoint count mismatch for " +
                      img.name);
  }
  for (size_t i = 0; i < img.keypoints.size(); ++i) {
    img.keypoints[i].descriptor = feat.keypoints[i].descriptor;
    img.keypoints[i].semantic_label = feat.keypoints[i].semantic_label;
    img.keypoints[i].score = feat.keypoints[i].score;
  }
  img.global_descriptor = feat.global_descriptor;
}

// Write a synthetic scene in the same formats the pipeline ingests: an SFM
// text model plus per-image sidecar features, query sidecars with an
// intrinsics list, and the ground-truth query poses.
inline void export_scene(const SyntheticScene& scene,
                         const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "model");
  fs::create_directories(dir / "features");
  fs::create_directories(dir / "queries");

  {
    std::ofstream out(dir / "model" / "cameras.txt", std::ios::trunc);
    out << "# CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]\n";
    const auto& cam = scene.cfg.camera;
    out << "1 PINHOLE " << cam.width << ' ' << cam.height << ' '
        << detail::fmt_real(cam.fx) << ' ' << detail::fmt_real(cam.fy) << ' '
        << detail::fmt_real(cam.cx) << ' ' << detail::fmt_real(cam.cy) << '\n';
  }
  {
    // keypoint -> landmark id, for the POINT3D_ID column
    std::map<std::pair<uint32_t, uint32_t>, uint64_t> obs;
    for (size_t t = 0; t < scene.tracks.size(); ++t) {
      for (const auto& el : scene.tracks[t].elements) {
        obs[{el.image_id, el.keypoint_index}] = static_cast<uint64_t>(t);
      }
    }
    std::ofstream out(dir / "model" / "images.txt", std::ios::trunc);
    out << "# IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME\n";
    out << "# POINTS2D[] as (X, Y, POINT3D_ID)\n";
    for (const auto& img : scene.gt_map.images) {
      out << img.id << ' ' << detail::fmt_real(img.pose.q.w()) << ' '
          << detail::fmt_real(img.pose.q.x()) << ' '
          << detail::fmt_real(img.pose.q.y()) << ' '
          << detail::fmt_real(img.pose.q.z()) << ' '
          << detail::fmt_real(img.pose.t.x()) << ' '
          << detail::fmt_real(img.pose.t.y()) << ' '
          << detail::fmt_real(img.pose.t.z()) << " 1 " << img.name << '\n';
      for (size_t k = 0; k < img.keypoints.size(); ++k) {
        const auto it = obs.find({img.id, static_cast<uint32_t>(k)});
        const long long pid =
            it == obs.end() ? -1 : static_cast<long long>(it->second);
        if (k > 0) out << ' ';
        out << detail::fmt_real(img.keypoints[k].px.x()) << ' '
            << detail::fmt_real(img.keypoints[k].px.y()) << ' ' << pid;
      }
      out << '\n';
    }
  }
  {
    std::ofstream out(dir / "model" / "points3D.txt", std::ios::trunc);
    out << "# POINT3D_ID X Y Z R G B ERROR TRACK[] as (IMAGE_ID, POINT2D_IDX)\n";
    for (const auto& lm : scene.gt_map.landmarks) {
      if (lm.track.elements.size() < 2) continue;
      out << lm.id << ' ' << detail::fmt_real(lm.X.x()) << ' '
          << detail::fmt_real(lm.X.y()) << ' ' << detail::fmt_real(lm.X.z())
          << ' ' << int(lm.color[0]) << ' ' << int(lm.color[1]) << ' '
          << int(lm.color[2]) << ' ' << detail::fmt_real(lm.mean_reproj_err);
      for (const auto& el : lm.track.elements) {
        out << ' ' << el.image_id << ' ' << el.keypoint_index;
      }
      out << '\n';
    }
  }
  for (const auto& img : scene.gt_map.images) {
    SidecarFeatures feat{img.keypoints, img.global_descriptor};
    save_sidecar(feat, dir / "features" / (img.name + ".feat"));
  }

  std::vector<std::pair<std::string, PinholeCamera>> qcams;
  std::vector<PoseLine> gt_lines;
  for (size_t i = 0; i < scene.queries.size(); ++i) {
    const auto& q = scene.queries[i];
    SidecarFeatures feat{q.keypoints, q.global_descriptor};
    save_sidecar(feat, dir / "queries" / (q.name + ".feat"));
    qcams.emplace_back(q.name, q.camera);
    gt_lines.push_back({q.name, scene.query_gt[i], ""});
  }
  write_camera_list(qcams, dir / "queries" / "cameras.txt");
  write_pose_file(gt_lines, dir / "query_gt.txt");
}

// Load queries written by export_scene (sidecars + intrinsics list).
inline std::vector<QueryImage> load_queries(const std::filesystem::path& dir) {
  const auto cams = read_camera_list(dir / "cameras.txt");
  std::vector<QueryImage> queries;
  for (const auto& [name, cam] : cams) {
    QueryImage q;
    q.name = name;
    q.camera = cam;
    const auto feat = load_sidecar(dir / (name + ".feat"));
    q.keypoints = feat.keypoints;
    q.global_descriptor = feat.global_descriptor;
    queries.push_back(std::move(q));
  }
  return queries;
}

}  // namespace ocloc
