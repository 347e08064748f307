#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <optional>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "ocloc/descriptor_ops.hpp"
#include "ocloc/map.hpp"
#include "ocloc/pnp.hpp"

namespace ocloc {

struct Candidate {
  uint32_t image_id = 0;
  double distance = 0.0;
  std::optional<PoseEstimate> pose_estimate;
};

// Nearest database images by Euclidean distance on L2-normalized (and
// optionally PCA-reduced) global descriptors.
inline std::vector<Candidate> retrieve_topk(const DescriptorF& query_gd,
                                            const LandmarkMap& map, size_t k,
                                            const PcaModel* pca = nullptr) {
  if (map.images.empty()) {
    throw std::invalid_argument("retrieve_topk: map has no images");
  }
  auto embed = [&](const DescriptorF& gd) {
    Descriptor v = l2_normalize(gd.cast<double>());
    if (pca != nullptr) v = pca_apply(*pca, v);
    return v;
  };
  const Descriptor q = embed(query_gd);
  std::vector<Descriptor> db;
  db.reserve(map.images.size());
  for (const auto& img : map.images) {
    if (img.global_descriptor.size() != query_gd.size()) {
      throw std::invalid_argument("retrieve_topk: descriptor dimension mismatch");
    }
    db.push_back(embed(img.global_descriptor));
  }
  std::vector<Candidate> out;
  for (const auto& r : knn_search(q, db, k)) {
    out.push_back({map.images[r.index].id, r.distance, std::nullopt});
  }
  return out;
}

// Reverse lookup (image id, keypoint index) -> landmark id, built once per
// map from the landmark tracks.
class ObservationIndex {
 public:
  explicit ObservationIndex(const LandmarkMap& map) {
    for (const auto& lm : map.landmarks) {
      for (const auto& el : lm.track.elements) {
        index_[key(el.image_id, el.keypoint_index)] = lm.id;
      }
    }
  }

  std::optional<uint64_t> landmark_for(uint32_t image_id,
                                       uint32_t kp_index) const {
    auto it = index_.find(key(image_id, kp_index));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

 private:
  static uint64_t key(uint32_t image_id, uint32_t kp_index) {
    return (static_cast<uint64_t>(image_id) << 32) | kp_index;
  }
  std::unordered_map<uint64_t, uint64_t> index_;
};

struct FmPnpConfig {
  MatchConfig match;
  PnpConfig pnp;
  size_t min_matches = 12;
};

// Feature-match PnP against one retrieved candidate: 2D-2D matching, lift
// candidate keypoints to landmarks through their tracks, then PnP-RANSAC.
inline std::optional<PoseEstimate> fm_pnp(const QueryImage& query,
                                          uint32_t candidate_image_id,
                                          const LandmarkMap& map,
                                          const ObservationIndex& obs_index,
                                          const FmPnpConfig& cfg = {}) {
  const ImageRecord* cand = map.find_image(candidate_image_id);
  if (cand == nullptr) {
    throw std::invalid_argument("fm_pnp: candidate image not in map");
  }
  const auto pairs = match_2d2d(query.keypoints, cand->keypoints, cfg.match);

  std::vector<Match2D3D> matches;
  for (const auto& [qi, ci] : pairs) {
    const auto lm_id = obs_index.landmark_for(candidate_image_id, ci);
    if (!lm_id) continue;  // keypoint on no track
    matches.push_back({qi, *lm_id, 0.0});
  }
  if (matches.size() < cfg.min_matches || matches.size() < 4) {
    return std::nullopt;
  }
  return pnp_ransac(matches, query.keypoints, query.camera, map, cfg.pnp);
}

struct PoseCluster {
  std::vector<size_t> members;  // indices into the estimate sequence
  size_t total_inliers = 0;
  size_t representative = 0;  // member index with most inliers
  bool is_noise = false;
};

// Standard DBSCAN over camera-center positions. Noise points are kept as
// singleton clusters flagged as noise.
inline std::vector<PoseCluster> cluster_poses_dbscan(
    const std::vector<PoseEstimate>& estimates, double eps, size_t min_pts) {
  if (eps <= 0.0 || min_pts < 1) {
    throw std::invalid_argument("cluster_poses_dbscan: invalid parameters");
  }
  const size_t n = estimates.size();
  std::vector<Point3> centers(n);
  for (size_t i = 0; i < n; ++i) centers[i] = estimates[i].pose.center();

  auto neighbors_of = [&](size_t i) {
    std::vector<size_t> nb;
    for (size_t j = 0; j < n; ++j) {
      if ((centers[i] - centers[j]).norm() <= eps) nb.push_back(j);
    }
    return nb;
  };

  constexpr int kUnvisited = -1;
  constexpr int kNoise = -2;
  std::vector<int> label(n, kUnvisited);
  int next_cluster = 0;
  for (size_t i = 0; i < n; ++i) {
    if (label[i] != kUnvisited) continue;
    auto nb = neighbors_of(i);
    if (nb.size() < min_pts) {
      label[i] = kNoise;
      continue;
    }
    const int cid = next_cluster++;
    label[i] = cid;
    std::deque<size_t> seeds(nb.begin(), nb.end());
    while (!seeds.empty()) {
      const size_t j = seeds.front();
      seeds.pop_front();
      if (label[j] == kNoise) label[j] = cid;
      if (label[j] != kUnvisited) continue;
      label[j] = cid;
      auto nb_j = neighbors_of(j);
      if (nb_j.size() >= min_pts) {
        seeds.insert(seeds.end(), nb_j.begin(), nb_j.end());
      }
    }
  }

  std::vector<PoseCluster> clusters(static_cast<size_t>(next_cluster));
  for (size_t i = 0; i < n; ++i) {
    if (label[i] >= 0) {
      clusters[static_cast<size_t>(label[i])].members.push_back(i);
    } else {
      PoseCluster noise;
      noise.members.push_back(i);
      noise.is_noise = true;
      clusters.push_back(std::move(noise));
    }
  }
  for (auto& c : clusters) {
    size_t best_inl = 0;
    c.representative = c.members.front();
    for (size_t m : c.members) {
      c.total_inliers += estimates[m].inliers.size();
      if (estimates[m].inliers.size() > best_inl) {
        best_inl = estimates[m].inliers.size();
        c.representative = m;
      }
    }
  }
  return clusters;
}

struct InitialSelection {
  size_t best_estimate = 0;        // index into the estimate sequence
  std::vector<size_t> reordered;   // all estimate indices, re-ranked
};

// Winning cluster = max total inliers (tie: smaller mean retrieval distance,
// then lower representative index). Candidates are re-ordered with the
// winning cluster's members first, by descending inliers.
inline InitialSelection select_initial_pose(
    const std::vector<PoseCluster>& clusters,
    const std::vector<PoseEstimate>& estimates,
    const std::vector<double>& retrieval_distances) {
  if (clusters.empty()) {
    throw std::runtime_error("select_initial_pose: no pose hypothesis");
  }
  auto mean_distance = [&](const PoseCluster& c) {
    double s = 0.0;
    for (size_t m : c.members) s += retrieval_distances[m];
    return s / static_cast<double>(c.members.size());
  };

  size_t best = 0;
  for (size_t i = 1; i < clusters.size(); ++i) {
    const auto& a = clusters[i];
    const auto& b = clusters[best];
    if (a.total_inliers != b.total_inliers) {
      if (a.total_inliers > b.total_inliers) best = i;
    } else if (mean_distance(a) != mean_distance(b)) {
      if (mean_distance(a) < mean_distance(b)) best = i;
    } else if (a.representative < b.representative) {
      best = i;
    }
  }

  InitialSelection sel;
  sel.best_estimate = clusters[best].representative;

  std::vector<size_t> winners = clusters[best].members;
  std::stable_sort(winners.begin(), winners.end(), [&](size_t a, size_t b) {
    return estimates[a].inliers.size() > estimates[b].inliers.size();
  });
  std::vector<char> in_winner(estimates.size(), 0);
  for (size_t m : winners) in_winner[m] = 1;
  sel.reordered = winners;
  for (size_t i = 0; i < estimates.size(); ++i) {
    if (!in_winner[i]) sel.reordered.push_back(i);
  }
  return sel;
}

}  // namespace ocloc
