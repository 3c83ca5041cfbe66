#pragma once

// Central finite differences against the reference loss evaluated on
// forward outputs. Shares no code with the model's reverse pass.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "posekit/loss.hpp"
#include "posekit/model.hpp"

namespace gradcheck {

using namespace posekit;

// ReLU sign pattern of every unit in the batch. Two parameter vectors with
// the same pattern lie in one linear piece of the network.
inline std::vector<bool> activation_pattern(const Model<double>& model, const Params<double>& p,
                                            std::span<const ModelSample<double>> batch) {
  std::vector<bool> pat;
  for (const auto& s : batch) {
    const auto c = model.forward_cache(p, s.image, s.class_id);
    for (const auto& l : c.backbone_pre)
      for (double x : l) pat.push_back(x > 0);
    for (const auto& l : c.stage_pre)
      for (double x : l) pat.push_back(x > 0);
    for (double x : c.fc1_pre) pat.push_back(x > 0);
  }
  return pat;
}

// Smallest |pre-activation| over the batch.
inline double kink_margin(const Model<double>& model, const Params<double>& p,
                          std::span<const ModelSample<double>> batch) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& s : batch) {
    const auto c = model.forward_cache(p, s.image, s.class_id);
    for (const auto& l : c.backbone_pre)
      for (double x : l) m = std::min(m, std::abs(x));
    for (const auto& l : c.stage_pre)
      for (double x : l) m = std::min(m, std::abs(x));
    for (double x : c.fc1_pre) m = std::min(m, std::abs(x));
  }
  return m;
}

// Batch loss rebuilt from forward outputs with the heatmap and viewpoint
// loss primitives.
inline double reference_loss(const Model<double>& model, const Params<double>& p,
                             std::span<const ModelSample<double>> batch, const LossWeights& w = {}) {
  double total = 0.0;
  for (const auto& s : batch) {
    const ModelOutput out = model.forward(p, s.image, s.class_id);
    if (s.mask.has_keypoints)
      for (const auto& stage : out.stage_heatmaps)
        total += w.keypoint * stage_keypoint_loss<double>(stage, s.gt_heatmaps, model.layout(), s.class_id);
    if (s.mask.has_viewpoint)
      for (int g = 0; g < 3; ++g) {
        std::vector<AngleProbs> per_class;
        for (const auto& c : out.viewpoint) per_class.push_back(c[g]);
        total += w.viewpoint * viewpoint_loss(per_class, s.class_id, s.gt_bins[g]);
      }
  }
  return total;
}

struct Mismatch {
  std::string param;
  size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel = 0.0;
  bool straddles_kink = false;  // the +-step stencil changed a ReLU sign
};

struct Report {
  size_t checked = 0;
  size_t kink_stencils = 0;
  double max_rel = 0.0;
  std::vector<Mismatch> failures;
};

// Relative error |a - n| / max(|a|, |n|, floor); the floor keeps gradients
// that are zero up to rounding from producing meaningless ratios.
inline double relative_error(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

inline Report check_all(const Model<double>& model, const Params<double>& params,
                        std::span<const ModelSample<double>> batch, const Params<double>& analytic, double step,
                        double tol, double floor, const LossWeights& w = {}) {
  Report r;
  const std::vector<bool> base = activation_pattern(model, params, batch);
  Params<double> p = params;
  for (size_t t = 0; t < p.tensors.size(); ++t) {
    for (size_t j = 0; j < p.tensors[t].size(); ++j) {
      const double orig = p.tensors[t].values[j];
      p.tensors[t].values[j] = orig + step;
      const double lp = reference_loss(model, p, batch, w);
      bool kink = activation_pattern(model, p, batch) != base;
      p.tensors[t].values[j] = orig - step;
      const double lm = reference_loss(model, p, batch, w);
      kink = kink || activation_pattern(model, p, batch) != base;
      p.tensors[t].values[j] = orig;
      const double num = (lp - lm) / (2 * step);
      const double ana = analytic.tensors[t].values[j];
      const double rel = relative_error(ana, num, floor);
      ++r.checked;
      if (kink) ++r.kink_stencils;
      r.max_rel = std::max(r.max_rel, rel);
      if (rel > tol) r.failures.push_back({p.tensors[t].name, j, ana, num, rel, kink});
    }
  }
  return r;
}

}  // namespace gradcheck
