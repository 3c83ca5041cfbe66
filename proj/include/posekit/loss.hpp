#pragma once

// Reference implementation of the joint training objective:
//   sum over stages of the per-class heatmap loss   (samples with keypoints)
// + sum over granularities of the viewpoint CE loss (samples with viewpoints)
// The model computes the same quantity in its own precision; tests compare.

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "posekit/binning.hpp"
#include "posekit/error.hpp"
#include "posekit/heatmap.hpp"
#include "posekit/upsample.hpp"

namespace posekit {

struct AnnotationMask {
  bool has_viewpoint = false;
  bool has_keypoints = false;

  bool valid() const { return has_viewpoint || has_keypoints; }

  static AnnotationMask both() { return {true, true}; }
  static AnnotationMask viewpoint_only() { return {true, false}; }
  static AnnotationMask keypoints_only() { return {false, true}; }

  friend bool operator==(const AnnotationMask&, const AnnotationMask&) = default;
};

inline void validate(const AnnotationMask& mask) {
  if (!mask.valid()) {
    throw Error(ErrorCode::validation, "sample carries neither viewpoint nor keypoint annotations");
  }
}

// One granularity: (azimuth, elevation, tilt).
using AngleProbs = std::array<ProbVector, 3>;
// Indexed like kBinSizes.
using GranularityProbs = std::array<AngleProbs, 3>;
// Ground-truth bin per angle.
using AngleBins = std::array<int, 3>;

inline constexpr double kLogFloor = 1e-12;

inline AngleBins viewpoint_bins(const Viewpoint& vp, int bin_size) {
  AngleBins bins{};
  for (AngleKind kind : kAngleKinds) {
    bins[static_cast<int>(kind)] = bin_of(make_scheme(kind, bin_size), angle_of(vp, kind));
  }
  return bins;
}

// Cross entropy of class c's three distributions at one granularity.
inline double viewpoint_loss(std::span<const AngleProbs> per_class, int c, const AngleBins& gt) {
  const AngleProbs& probs = per_class[static_cast<size_t>(c)];
  double sum = 0.0;
  for (int a = 0; a < 3; ++a) {
    const ProbVector& pv = probs[a];
    if (gt[a] < 0 || gt[a] >= pv.size()) throw Error(ErrorCode::out_of_range, "ground-truth bin out of range");
    sum -= std::log(std::max(pv[gt[a]], kLogFloor));
  }
  return sum;
}

struct LossWeights {
  double keypoint = 1.0;
  double viewpoint = 1.0;
};

// Everything the objective reads for one sample.
struct SampleLossInput {
  int class_id = 0;
  AnnotationMask mask;
  // [stage][stacked map] predicted heatmaps over all classes.
  std::vector<std::vector<Heatmap<double>>> stage_heatmaps;
  // K_c ground-truth maps; read only when mask.has_keypoints.
  std::vector<Heatmap<double>> gt_heatmaps;
  // [class] predicted distributions; read only when mask.has_viewpoint.
  std::vector<GranularityProbs> viewpoint_probs;
  std::optional<Viewpoint> gt_viewpoint;
};

struct LossBreakdown {
  double keypoint = 0.0;
  double viewpoint = 0.0;
  double total = 0.0;
};

inline LossBreakdown sample_loss(const SampleLossInput& s, const ClassLayout& layout,
                                 const LossWeights& weights = {}) {
  validate(s.mask);
  LossBreakdown out;
  if (s.mask.has_keypoints) {
    for (const auto& stage : s.stage_heatmaps) {
      out.keypoint += stage_keypoint_loss<double>(stage, s.gt_heatmaps, layout, s.class_id);
    }
  }
  if (s.mask.has_viewpoint) {
    if (!s.gt_viewpoint) throw Error(ErrorCode::validation, "viewpoint mask set without a viewpoint label");
    std::vector<AngleProbs> per_class(s.viewpoint_probs.size());
    for (size_t g = 0; g < kBinSizes.size(); ++g) {
      for (size_t c = 0; c < per_class.size(); ++c) per_class[c] = s.viewpoint_probs[c][g];
      out.viewpoint += viewpoint_loss(per_class, s.class_id, viewpoint_bins(*s.gt_viewpoint, kBinSizes[g]));
    }
  }
  out.total = weights.keypoint * out.keypoint + weights.viewpoint * out.viewpoint;
  return out;
}

inline LossBreakdown total_loss(std::span<const SampleLossInput> batch, const ClassLayout& layout,
                                const LossWeights& weights = {}) {
  if (batch.empty()) throw Error(ErrorCode::empty_batch, "loss of an empty batch");
  LossBreakdown sum;
  for (const auto& s : batch) {
    const LossBreakdown l = sample_loss(s, layout, weights);
    sum.keypoint += l.keypoint;
    sum.viewpoint += l.viewpoint;
    sum.total += l.total;
  }
  return sum;
}

}  // namespace posekit
