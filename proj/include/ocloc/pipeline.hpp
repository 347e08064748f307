#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ocloc/map.hpp"
#include "ocloc/refiner.hpp"
#include "ocloc/retrieval.hpp"

namespace ocloc {

struct PipelineConfig {
  size_t topk = 20;
  double dbscan_eps = 2.0;
  size_t dbscan_min_pts = 2;
  FmPnpConfig fm;
  RefinerConfig refiner;
  bool refine = true;
  uint64_t seed = 0;
};

struct LocalizeResult {
  std::optional<PoseEstimate> estimate;
  std::string failure_reason;  // set when estimate is absent
  std::optional<PoseEstimate> initial;  // retrieval + FM-PnP hypothesis
  RefineOutcome refine_outcome;
  size_t candidates_tried = 0;
  size_t candidates_solved = 0;
};

// Full localization of one query: top-K retrieval, per-candidate FM-PnP,
// DBSCAN clustering with inlier-based selection, then iterative refinement
// under observation constraints.
inline LocalizeResult localize_query(const QueryImage& query,
                                     const LandmarkMap& map,
                                     const ObservationIndex& obs_index,
                                     const PipelineConfig& cfg = {}) {
  LocalizeResult result;

  const auto candidates = retrieve_topk(query.global_descriptor, map, cfg.topk);
  result.candidates_tried = candidates.size();

  std::vector<PoseEstimate> estimates;
  std::vector<double> distances;
  for (size_t i = 0; i < candidates.size(); ++i) {
    FmPnpConfig fm_cfg = cfg.fm;
    fm_cfg.pnp.seed = cfg.seed * 0x100000001b3ULL + i;
    std::optional<PoseEstimate> est;
    try {
      est = fm_pnp(query, candidates[i].image_id, map, obs_index, fm_cfg);
    } catch (const std::exception&) {
      est = std::nullopt;
    }
    if (est) {
      estimates.push_back(std::move(*est));
      distances.push_back(candidates[i].distance);
    }
  }
  result.candidates_solved = estimates.size();
  if (estimates.empty()) {
    result.failure_reason = "no retrieval hypothesis (all FM-PnP failed)";
    return result;
  }

  const auto clusters =
      cluster_poses_dbscan(estimates, cfg.dbscan_eps, cfg.dbscan_min_pts);
  const auto selection = select_initial_pose(clusters, estimates, distances);
  result.initial = estimates[selection.best_estimate];

  if (!cfg.refine) {
    result.estimate = result.initial;
    return result;
  }

  RefinerConfig ref_cfg = cfg.refiner;
  ref_cfg.seed = cfg.seed ^ 0xa5a5a5a5a5a5a5a5ULL;
  result.refine_outcome = refine_iteratively(*result.initial, query, map, ref_cfg);
  result.estimate = result.refine_outcome.estimate;
  return result;
}

}  // namespace ocloc
