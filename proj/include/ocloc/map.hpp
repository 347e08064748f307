#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "ocloc/geometry.hpp"

namespace ocloc {

// Local and global descriptors are carried as float32 end to end (matching
// the on-disk precision).
using DescriptorF = Eigen::VectorXf;

struct Keypoint {
  Pixel px;
  DescriptorF descriptor;
  uint16_t semantic_label = 0;  // 0 = unknown
  float score = 0.0f;
};

struct ImageRecord {
  uint32_t id = 0;
  std::string name;
  PinholeCamera camera;
  Pose pose;
  std::vector<Keypoint> keypoints;
  DescriptorF global_descriptor;
};

// A query to be localized: no pose, otherwise shaped like an ImageRecord.
struct QueryImage {
  std::string name;
  PinholeCamera camera;
  std::vector<Keypoint> keypoints;
  DescriptorF global_descriptor;
};

struct TrackElement {
  uint32_t image_id = 0;
  uint32_t keypoint_index = 0;
};

struct Track {
  std::vector<TrackElement> elements;
};

// Per-landmark visible-field parameters: max visible distance L, mean view
// direction (unit), and max view angle theta = twice the largest deviation
// of a track view direction from the mean.
struct ObservationConstraints {
  double max_distance = 0.0;       // L, meters
  Eigen::Vector3d mean_dir{0, 0, 1};  // unit n
  double max_angle = 0.0;          // theta, radians in [0, 2pi]
  bool degenerate = false;         // mean direction vanished; full visibility
};

inline ObservationConstraints compute_observation_constraints(
    const Point3& X, const std::vector<Point3>& centers) {
  if (centers.empty()) {
    throw std::invalid_argument("compute_observation_constraints: no centers");
  }
  ObservationConstraints oc;
  std::vector<Eigen::Vector3d> dirs;
  dirs.reserve(centers.size());
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& c : centers) {
    const Eigen::Vector3d d = c - X;
    const double len = d.norm();
    if (len <= 1e-9) {
      throw std::invalid_argument(
          "compute_observation_constraints: center coincides with point");
    }
    dirs.push_back(d / len);
    oc.max_distance = std::max(oc.max_distance, len);
    mean += dirs.back();
  }
  mean /= static_cast<double>(centers.size());
  if (mean.norm() < 1e-6) {
    oc.degenerate = true;
    oc.mean_dir = Eigen::Vector3d::UnitZ();
    oc.max_angle = 2.0 * M_PI;
    return oc;
  }
  oc.mean_dir = mean.normalized();
  double max_dev = 0.0;
  for (const auto& d : dirs) {
    max_dev = std::max(max_dev, std::acos(clamp_unit(oc.mean_dir.dot(d))));
  }
  oc.max_angle = 2.0 * max_dev;
  return oc;
}

// Mode of the non-zero labels; ties broken by smallest label id; all-zero or
// empty input -> 0 (unknown).
inline int vote_semantic_label(const std::vector<int>& labels) {
  std::map<int, size_t> counts;
  for (int l : labels) {
    if (l != 0) ++counts[l];
  }
  int best = 0;
  size_t best_count = 0;
  for (const auto& [label, count] : counts) {
    if (count > best_count) {
      best = label;
      best_count = count;
    }
  }
  return best;
}

struct Landmark {
  uint64_t id = 0;
  Point3 X{0, 0, 0};
  std::array<uint8_t, 3> color{128, 128, 128};
  int semantic_label = 0;
  DescriptorF descriptor;
  Track track;
  ObservationConstraints oc;
  double mean_reproj_err = 0.0;
};

struct LandmarkMap {
  std::vector<ImageRecord> images;
  std::vector<Landmark> landmarks;
  uint32_t local_dim = 0;
  uint32_t global_dim = 0;
  std::map<uint32_t, std::string> label_palette;

  const ImageRecord* find_image(uint32_t id) const {
    auto it = image_index_.find(id);
    return it == image_index_.end() ? nullptr : &images[it->second];
  }

  const Landmark* find_landmark(uint64_t id) const {
    auto it = landmark_index_.find(id);
    return it == landmark_index_.end() ? nullptr : &landmarks[it->second];
  }

  void rebuild_index() {
    image_index_.clear();
    for (size_t i = 0; i < images.size(); ++i) {
      image_index_[images[i].id] = i;
    }
    landmark_index_.clear();
    for (size_t i = 0; i < landmarks.size(); ++i) {
      landmark_index_[landmarks[i].id] = i;
    }
  }

 private:
  std::unordered_map<uint32_t, size_t> image_index_;
  std::unordered_map<uint64_t, size_t> landmark_index_;
};

struct MapBuildConfig {
  double max_reproj_px = 4.0;
};

struct MapBuildStats {
  size_t tracks_in = 0;
  size_t kept = 0;
  size_t dropped_short = 0;
  size_t dropped_degenerate = 0;
  size_t dropped_reproj = 0;
  double mean_reproj_err = 0.0;  // over kept landmarks
};

// Triangulate every track, refine, filter by mean reprojection error, vote
// semantic labels and compute observation constraints from the track's
// camera centers.
inline LandmarkMap build_map(const std::vector<ImageRecord>& images,
                             const std::vector<Track>& tracks,
                             const MapBuildConfig& cfg = {},
                             MapBuildStats* stats_out = nullptr) {
  LandmarkMap map;
  map.images = images;
  map.rebuild_index();
  if (!images.empty()) {
    map.local_dim = images.front().keypoints.empty()
                        ? 0
                        : static_cast<uint32_t>(
                              images.front().keypoints.front().descriptor.size());
    map.global_dim =
        static_cast<uint32_t>(images.front().global_descriptor.size());
  }

  MapBuildStats stats;
  stats.tracks_in = tracks.size();
  double reproj_sum = 0.0;

  for (const auto& track : tracks) {
    std::vector<View> views;
    std::vector<const Keypoint*> kps;
    views.reserve(track.elements.size());
    for (const auto& el : track.elements) {
      const ImageRecord* img = map.find_image(el.image_id);
      if (img == nullptr || el.keypoint_index >= img->keypoints.size()) {
        throw std::invalid_argument("build_map: unresolvable track element");
      }
      const Keypoint& kp = img->keypoints[el.keypoint_index];
      views.push_back({img->camera, img->pose, kp.px});
      kps.push_back(&kp);
    }
    if (views.size() < 2) {
      ++stats.dropped_short;
      continue;
    }

    Point3 X;
    try {
      X = triangulate(views);
    } catch (const TriangulationError&) {
      ++stats.dropped_degenerate;
      continue;
    }

    double err_sum = 0.0;
    for (const auto& v : views) {
      err_sum += reprojection_error(v.camera, v.pose, X, v.observation);
    }
    const double mean_err = err_sum / static_cast<double>(views.size());
    if (mean_err > cfg.max_reproj_px) {
      ++stats.dropped_reproj;
      continue;
    }

    Landmark lm;
    lm.id = static_cast<uint64_t>(map.landmarks.size());
    lm.X = X;
    lm.track = track;
    lm.mean_reproj_err = mean_err;

    Eigen::VectorXd desc_sum = Eigen::VectorXd::Zero(kps.front()->descriptor.size());
    std::vector<int> labels;
    labels.reserve(kps.size());
    for (const Keypoint* kp : kps) {
      desc_sum += kp->descriptor.cast<double>();
      labels.push_back(kp->semantic_label);
    }
    const double norm = desc_sum.norm();
    if (norm > 1e-12) desc_sum /= norm;
    lm.descriptor = desc_sum.cast<float>();
    lm.semantic_label = vote_semantic_label(labels);

    std::vector<Point3> centers;
    centers.reserve(views.size());
    for (const auto& v : views) centers.push_back(v.pose.center());
    lm.oc = compute_observation_constraints(X, centers);

    reproj_sum += mean_err;
    map.landmarks.push_back(std::move(lm));
    ++stats.kept;
  }

  if (stats.kept > 0) {
    stats.mean_reproj_err = reproj_sum / static_cast<double>(stats.kept);
  }
  map.rebuild_index();
  if (stats_out != nullptr) *stats_out = stats;
  if (map.landmarks.empty()) {
    throw std::runtime_error("build_map: no landmarks survived filtering");
  }
  return map;
}

}  // namespace ocloc
