#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "posekit/error.hpp"

namespace posekit {

template <typename S = double>
struct Heatmap {
  int width = 0;
  int height = 0;
  std::vector<S> values;

  Heatmap() = default;
  Heatmap(int w, int h, S fill = S(0)) : width(w), height(h), values(static_cast<size_t>(w) * h, fill) {}

  S& at(int x, int y) { return values[static_cast<size_t>(y) * width + x]; }
  S at(int x, int y) const { return values[static_cast<size_t>(y) * width + x]; }

  bool same_shape(const Heatmap& o) const { return width == o.width && height == o.height; }
  friend bool operator==(const Heatmap&, const Heatmap&) = default;
};

struct Keypoint2D {
  double x = 0.0;
  double y = 0.0;
  bool visible = false;

  friend bool operator==(const Keypoint2D&, const Keypoint2D&) = default;
};

// Heatmap cell i covers input pixels [i*stride, (i+1)*stride); its center is
// the sample location of value i. Continuous pixel coordinates use the same
// convention: pixel k spans [k, k+1).
constexpr double to_heatmap_coord(double pixel, int stride) { return pixel / stride - 0.5; }
constexpr double from_heatmap_coord(double cell, int stride) { return (cell + 0.5) * stride; }

// Number of heatmaps per class and their offsets in the stacked channel list.
class ClassLayout {
 public:
  ClassLayout() = default;
  explicit ClassLayout(std::vector<int> keypoints_per_class)
      : counts_(std::move(keypoints_per_class)) {
    if (counts_.empty()) throw Error(ErrorCode::invalid_argument, "at least one class required");
    offsets_.reserve(counts_.size());
    int total = 0;
    for (int k : counts_) {
      if (k <= 0) throw Error(ErrorCode::invalid_argument, "every class needs >= 1 keypoint");
      offsets_.push_back(total);
      total += k;
    }
    total_ = total;
  }

  int num_classes() const { return static_cast<int>(counts_.size()); }
  int num_keypoints(int c) const { return counts_.at(c); }
  int offset(int c) const { return offsets_.at(c); }
  int total() const { return total_; }
  const std::vector<int>& counts() const { return counts_; }

  friend bool operator==(const ClassLayout&, const ClassLayout&) = default;

 private:
  std::vector<int> counts_;
  std::vector<int> offsets_;
  int total_ = 0;
};

// `kp` is in heatmap coordinates. Invisible keypoints get an all-zero map.
template <typename S = double>
Heatmap<S> render_gt_heatmap(const Keypoint2D& kp, int width, int height, double sigma) {
  if (width <= 0 || height <= 0) throw Error(ErrorCode::invalid_argument, "heatmap size must be positive");
  if (!(sigma > 0.0)) throw Error(ErrorCode::invalid_argument, "sigma must be positive");
  Heatmap<S> h(width, height);
  if (!kp.visible) return h;
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double dx = x - kp.x, dy = y - kp.y;
      h.at(x, y) = static_cast<S>(std::exp(-(dx * dx + dy * dy) * inv));
    }
  }
  return h;
}

struct DecodedKeypoint {
  int x = 0;
  int y = 0;
  double confidence = 0.0;

  bool visible() const { return confidence > 0.0; }
};

// Pixel argmax, first in row-major order on ties.
template <typename S>
DecodedKeypoint decode(const Heatmap<S>& h) {
  DecodedKeypoint best;
  if (h.values.empty()) return best;
  best.confidence = static_cast<double>(h.values.front());
  for (int y = 0; y < h.height; ++y) {
    for (int x = 0; x < h.width; ++x) {
      const double v = static_cast<double>(h.at(x, y));
      if (v > best.confidence) best = {x, y, v};
    }
  }
  if (best.confidence < 0.0) best.confidence = 0.0;
  return best;
}

// (1/K_c) sum_k sum_pixels (gt_k - pred_k)^2 over the maps of one class.
template <typename S>
double stage_keypoint_loss(std::span<const Heatmap<S>> pred, std::span<const Heatmap<S>> gt) {
  if (pred.size() != gt.size() || pred.empty()) {
    throw Error(ErrorCode::shape_mismatch, "prediction and ground truth need the same non-zero number of maps");
  }
  double sum = 0.0;
  for (size_t k = 0; k < pred.size(); ++k) {
    if (!pred[k].same_shape(gt[k])) throw Error(ErrorCode::shape_mismatch, "heatmap sizes differ");
    for (size_t i = 0; i < pred[k].values.size(); ++i) {
      const double d = static_cast<double>(gt[k].values[i]) - static_cast<double>(pred[k].values[i]);
      sum += d * d;
    }
  }
  return sum / static_cast<double>(pred.size());
}

// Same loss read from the full stacked list of one stage: only class c's
// maps enter, the rest are ignored.
template <typename S>
double stage_keypoint_loss(std::span<const Heatmap<S>> all_pred, std::span<const Heatmap<S>> gt,
                           const ClassLayout& layout, int c) {
  if (static_cast<int>(all_pred.size()) != layout.total() ||
      static_cast<int>(gt.size()) != layout.num_keypoints(c)) {
    throw Error(ErrorCode::shape_mismatch, "heatmap count does not match the class layout");
  }
  return stage_keypoint_loss(all_pred.subspan(layout.offset(c), layout.num_keypoints(c)), gt);
}

}  // namespace posekit
