#pragma once

// Dataset directory I/O, cropping, augmentation with the IoU acceptance
// rule, and the uniform source-mixing sampler.
//
// Layout: manifest.json, images/NNNNNN.png, annot/NNNNNN.json. Annotation
// coordinates are full-image pixels.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "posekit/error.hpp"
#include "posekit/geometry.hpp"
#include "posekit/heatmap.hpp"
#include "posekit/image.hpp"
#include "posekit/json_io.hpp"
#include "posekit/loss.hpp"
#include "posekit/model.hpp"
#include "posekit/synthgen.hpp"

namespace posekit {

// M: both annotations, N: viewpoint only, O: keypoints only.
enum class SourceTag { M, N, O };

constexpr const char* to_string(SourceTag t) {
  switch (t) {
    case SourceTag::M: return "M";
    case SourceTag::N: return "N";
    case SourceTag::O: return "O";
  }
  return "?";
}

inline SourceTag parse_source_tag(const std::string& s) {
  if (s == "M") return SourceTag::M;
  if (s == "N") return SourceTag::N;
  if (s == "O") return SourceTag::O;
  throw Error(ErrorCode::config, "unknown source tag '" + s + "' (expected M, N or O)");
}

inline AnnotationMask mask_for(SourceTag t) {
  switch (t) {
    case SourceTag::M: return AnnotationMask::both();
    case SourceTag::N: return AnnotationMask::viewpoint_only();
    case SourceTag::O: return AnnotationMask::keypoints_only();
  }
  return {};
}

struct ClassInfo {
  std::string name;
  int num_keypoints = 0;
  std::vector<std::pair<int, int>> flip_pairs;
  std::vector<Vec3> keypoints_3d;
};

struct Annotation {
  int class_id = 0;
  BBox bbox;
  std::optional<Viewpoint> viewpoint;
  std::optional<std::vector<Keypoint2D>> keypoints;
};

inline json annotation_to_json(const Annotation& a, const std::vector<ClassInfo>& classes) {
  json j{{"class", classes.at(a.class_id).name},
         {"bbox", {plain(a.bbox.x), plain(a.bbox.y), plain(a.bbox.w), plain(a.bbox.h)}},
         {"viewpoint", nullptr},
         {"keypoints", nullptr}};
  if (a.viewpoint)
    j["viewpoint"] = {{"az", plain(a.viewpoint->azimuth())},
                      {"el", plain(a.viewpoint->elevation())},
                      {"ti", plain(a.viewpoint->tilt())}};
  if (a.keypoints) {
    j["keypoints"] = json::array();
    for (const auto& k : *a.keypoints) j["keypoints"].push_back({{"x", plain(k.x)}, {"y", plain(k.y)}, {"visible", k.visible}});
  }
  return j;
}

inline int class_index(const std::vector<ClassInfo>& classes, const std::string& name) {
  for (size_t i = 0; i < classes.size(); ++i)
    if (classes[i].name == name) return static_cast<int>(i);
  throw Error(ErrorCode::validation, "unknown class '" + name + "'");
}

inline Annotation annotation_from_json(const json& j, const std::vector<ClassInfo>& classes, const std::string& where) {
  Annotation a;
  a.class_id = class_index(classes, field<std::string>(j, "class", where));
  const auto box = field<std::vector<double>>(j, "bbox", where);
  if (box.size() != 4) throw Error(ErrorCode::parse, where + ": bbox needs 4 numbers [x, y, w, h]");
  a.bbox = {box[0], box[1], box[2], box[3]};
  if (!(a.bbox.w > 0) || !(a.bbox.h > 0)) throw Error(ErrorCode::degenerate_bbox, where + ": bbox has zero area");
  if (!j.contains("viewpoint") || !j.contains("keypoints"))
    throw Error(ErrorCode::parse, where + ": 'viewpoint' and 'keypoints' must be present (null when absent)");
  if (!j["viewpoint"].is_null()) {
    const json& v = j["viewpoint"];
    try {
      a.viewpoint = Viewpoint(field<double>(v, "az", where), field<double>(v, "el", where), field<double>(v, "ti", where));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::parse) throw;
      throw Error(ErrorCode::validation, where + ": " + e.what());
    }
  }
  if (!j["keypoints"].is_null()) {
    if (!j["keypoints"].is_array()) throw Error(ErrorCode::parse, where + ": keypoints must be a list or null");
    std::vector<Keypoint2D> kps;
    for (const auto& k : j["keypoints"])
      kps.push_back({field<double>(k, "x", where), field<double>(k, "y", where), field<bool>(k, "visible", where)});
    if (static_cast<int>(kps.size()) != classes[a.class_id].num_keypoints)
      throw Error(ErrorCode::validation, where + ": class '" + classes[a.class_id].name + "' expects " +
                                             std::to_string(classes[a.class_id].num_keypoints) + " keypoints, got " +
                                             std::to_string(kps.size()));
    a.keypoints = std::move(kps);
  }
  if (!a.viewpoint && !a.keypoints) throw Error(ErrorCode::validation, where + ": no viewpoint and no keypoints");
  return a;
}

struct DatasetEntry {
  std::string id;
  int class_id = 0;
  std::filesystem::path image;
  std::filesystem::path annot;
  SourceTag source = SourceTag::M;
};

struct Dataset {
  std::filesystem::path root;
  std::vector<ClassInfo> classes;
  std::vector<DatasetEntry> entries;

  size_t size() const { return entries.size(); }
  std::vector<int> keypoint_counts() const {
    std::vector<int> k;
    for (const auto& c : classes) k.push_back(c.num_keypoints);
    return k;
  }
  Annotation annotation(size_t i) const {
    const auto& e = entries.at(i);
    Annotation a = annotation_from_json(read_json(root / e.annot), classes, (root / e.annot).string());
    if (a.class_id != e.class_id)
      throw Error(ErrorCode::validation, (root / e.annot).string() + ": class differs from the manifest");
    return a;
  }
  Image image(size_t i) const { return read_png(root / entries.at(i).image); }
};

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const std::filesystem::path mpath = dir / "manifest.json";
  const std::string where = mpath.string();
  if (!std::filesystem::exists(mpath)) throw Error(ErrorCode::io, "no manifest at '" + where + "'");
  const json m = read_json(mpath);
  Dataset d;
  d.root = dir;
  const json classes = field<json>(m, "classes", where);
  if (!classes.is_array() || classes.empty()) throw Error(ErrorCode::validation, where + ": no classes");
  for (const auto& c : classes) {
    ClassInfo ci;
    ci.name = field<std::string>(c, "name", where);
    ci.num_keypoints = field<int>(c, "num_keypoints", where);
    if (ci.num_keypoints <= 0) throw Error(ErrorCode::validation, where + ": class '" + ci.name + "' has no keypoints");
    if (c.contains("flip_pairs"))
      for (const auto& p : c["flip_pairs"]) {
        const auto ab = p.get<std::vector<int>>();
        if (ab.size() != 2 || ab[0] < 0 || ab[1] < 0 || ab[0] >= ci.num_keypoints || ab[1] >= ci.num_keypoints)
          throw Error(ErrorCode::validation, where + ": bad flip pair in class '" + ci.name + "'");
        ci.flip_pairs.emplace_back(ab[0], ab[1]);
      }
    if (c.contains("keypoints_3d"))
      for (const auto& p : c["keypoints_3d"]) {
        const auto v = p.get<std::vector<double>>();
        if (v.size() != 3) throw Error(ErrorCode::parse, where + ": keypoints_3d entries need 3 numbers");
        ci.keypoints_3d.emplace_back(v[0], v[1], v[2]);
      }
    d.classes.push_back(std::move(ci));
  }
  for (const auto& s : field<json>(m, "samples", where)) {
    DatasetEntry e;
    e.id = field<std::string>(s, "id", where);
    e.class_id = class_index(d.classes, field<std::string>(s, "class", where));
    e.image = field<std::string>(s, "image", where);
    e.annot = field<std::string>(s, "annot", where);
    e.source = s.contains("source") ? parse_source_tag(s["source"].get<std::string>()) : SourceTag::M;
    d.entries.push_back(std::move(e));
  }
  if (d.entries.empty()) throw Error(ErrorCode::empty_source, "dataset '" + where + "' lists no samples");
  return d;
}

// Training labels live on a 2^-20 grid: coordinates and angles stay
// exactly representable through mirroring and wrap-around, so a double
// flip restores them bit for bit.
inline double snap(double v) {
  constexpr double kGrid = 1048576.0;
  const double r = std::round(v * kGrid) / kGrid;
  return r == 0.0 ? 0.0 : r;
}

inline Viewpoint snapped_viewpoint(double az, double el, double ti) {
  return Viewpoint(snap(wrap_360(az)), snap(el), snap(wrap_180(ti)));
}

// Uniform scale about the box center into a square crop.
struct CropTransform {
  Vec2 box_center{0, 0};
  double scale = 1.0;
  double crop_size = 64.0;

  Vec2 to_crop(const Vec2& p) const { return (p - box_center) * scale + Vec2(crop_size / 2, crop_size / 2); }
  Vec2 to_image(const Vec2& q) const { return (q - Vec2(crop_size / 2, crop_size / 2)) / scale + box_center; }
};

inline constexpr double kBoxTolerance = 1e-9;

inline void check_bbox(const BBox& b, int width, int height) {
  if (!(b.w > 0) || !(b.h > 0)) throw Error(ErrorCode::degenerate_bbox, "bounding box has zero area");
  if (b.x < -kBoxTolerance || b.y < -kBoxTolerance || b.x + b.w > width + kBoxTolerance ||
      b.y + b.h > height + kBoxTolerance)
    throw Error(ErrorCode::out_of_range, "bounding box extends outside the image");
}

// Aspect-preserving resize of the box content into a target x target
// square; the short axis is padded symmetrically with `fill`.
inline std::pair<Image, CropTransform> crop_image(const Image& img, const BBox& box, int target, float fill) {
  check_bbox(box, img.width, img.height);
  if (target <= 0) throw Error(ErrorCode::invalid_argument, "crop size must be positive");
  const CropTransform t{box.center(), target / std::max(box.w, box.h), double(target)};
  Image out(target, target, fill);
  for (int y = 0; y < target; ++y)
    for (int x = 0; x < target; ++x) {
      const Vec2 p = t.to_image(Vec2(x + 0.5, y + 0.5));
      if (p.x() < box.x || p.y() < box.y || p.x() > box.x + box.w || p.y() > box.y + box.h) continue;
      for (int c = 0; c < Image::kChannels; ++c) out.at(c, x, y) = sample_bilinear(img, c, p.x(), p.y(), fill);
    }
  return {std::move(out), t};
}

struct TrainingSample {
  Image crop;
  int class_id = 0;
  AnnotationMask mask;
  std::optional<Viewpoint> viewpoint;
  std::optional<std::vector<Keypoint2D>> keypoints;  // crop pixels
  SourceTag source = SourceTag::M;
  BBox bbox;  // object box in crop pixels
  CropTransform transform;

  void validate(int num_keypoints) const {
    posekit::validate(mask);
    if (mask.has_viewpoint != viewpoint.has_value())
      throw Error(ErrorCode::validation, "viewpoint flag disagrees with the viewpoint label");
    if (mask.has_keypoints != keypoints.has_value())
      throw Error(ErrorCode::validation, "keypoint flag disagrees with the keypoint labels");
    if (keypoints && static_cast<int>(keypoints->size()) != num_keypoints)
      throw Error(ErrorCode::validation, "keypoint list length differs from the class keypoint count");
  }
};

// Crops an annotated image and keeps only the annotations the source tag
// grants; a tag asking for a missing annotation is an error.
inline TrainingSample make_training_sample(const Image& img, const Annotation& a, SourceTag tag, int crop_size,
                                           float fill, int num_keypoints) {
  TrainingSample s;
  auto [crop, t] = crop_image(img, a.bbox, crop_size, fill);
  s.crop = std::move(crop);
  s.transform = t;
  s.class_id = a.class_id;
  s.source = tag;
  s.mask = mask_for(tag);
  const Vec2 lo = t.to_crop(Vec2(a.bbox.x, a.bbox.y)), hi = t.to_crop(Vec2(a.bbox.x + a.bbox.w, a.bbox.y + a.bbox.h));
  s.bbox = {lo.x(), lo.y(), hi.x() - lo.x(), hi.y() - lo.y()};
  if (s.mask.has_viewpoint) {
    if (!a.viewpoint) throw Error(ErrorCode::validation, std::string("source ") + to_string(tag) + " needs a viewpoint label");
    s.viewpoint = snapped_viewpoint(a.viewpoint->azimuth(), a.viewpoint->elevation(), a.viewpoint->tilt());
  }
  if (s.mask.has_keypoints) {
    if (!a.keypoints) throw Error(ErrorCode::validation, std::string("source ") + to_string(tag) + " needs keypoint labels");
    std::vector<Keypoint2D> kps;
    for (const auto& k : *a.keypoints) {
      const Vec2 q = t.to_crop(Vec2(k.x, k.y));
      const bool inside = q.x() >= 0 && q.y() >= 0 && q.x() < crop_size && q.y() < crop_size;
      kps.push_back({snap(q.x()), snap(q.y()), k.visible && inside});
    }
    s.keypoints = std::move(kps);
  }
  s.validate(num_keypoints);
  return s;
}

struct AugmentParams {
  bool flip = false;
  double rotation = 0.0;  // degrees
  double scale = 1.0;
  Vec2 translation{0, 0};  // crop pixels

  void validate() const {
    if (!(rotation >= -45.0 && rotation <= 45.0)) throw Error(ErrorCode::out_of_range, "rotation must be in [-45, 45]");
    if (!(scale >= 0.4 && scale <= 1.0)) throw Error(ErrorCode::out_of_range, "scale must be in [0.4, 1.0]");
    if (!translation.allFinite()) throw Error(ErrorCode::invalid_argument, "translation must be finite");
  }
  bool is_identity() const { return !flip && rotation == 0.0 && scale == 1.0 && translation == Vec2(0, 0); }
};

struct AugmentRanges {
  bool flip = true;
  double max_rotation = 45.0;
  double min_scale = 0.4, max_scale = 1.0;
  double max_translation = 6.0;
  // Each of rotation, scale and translation is drawn with this
  // probability and left at identity otherwise. A box scaled by s has
  // IoU <= s^2, so drawing all three every time would reject nearly
  // every augmentation under the 0.8 rule.
  double component_probability = 0.5;

  AugmentParams draw(std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    AugmentParams p;
    p.flip = flip && u(rng) < 0.5;
    if (u(rng) < component_probability) p.rotation = uniform_in(rng, -max_rotation, max_rotation);
    if (u(rng) < component_probability) p.scale = uniform_in(rng, min_scale, max_scale);
    if (u(rng) < component_probability)
      p.translation = Vec2(uniform_in(rng, -max_translation, max_translation),
                           uniform_in(rng, -max_translation, max_translation));
    return p;
  }
};

// p -> c + s * Rot(rho) * Flip(p - c) + t, with Rot(rho) = [[cos, -sin],
// [sin, cos]] in image axes (x right, y down) and Flip mirroring x.
struct AugmentTransform {
  Vec2 center{0, 0};
  AugmentParams params;

  Eigen::Matrix2d linear() const {
    const double r = deg_to_rad(params.rotation), c = std::cos(r), s = std::sin(r);
    Eigen::Matrix2d m;
    m << c, -s, s, c;
    m *= params.scale;
    if (params.flip) m.col(0) *= -1.0;
    return m;
  }
  Vec2 apply(const Vec2& p) const { return center + linear() * (p - center) + params.translation; }
  Vec2 inverse(const Vec2& q) const { return center + linear().inverse() * (q - center - params.translation); }
};

using Quad = std::array<Vec2, 4>;

inline Quad box_corners(const BBox& b) {
  return {Vec2(b.x, b.y), Vec2(b.x + b.w, b.y), Vec2(b.x + b.w, b.y + b.h), Vec2(b.x, b.y + b.h)};
}

namespace detail {

inline double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

inline double polygon_area(const std::vector<Vec2>& p) {
  double a = 0;
  for (size_t i = 0; i < p.size(); ++i) a += cross2(p[i], p[(i + 1) % p.size()]);
  return std::abs(a) / 2;
}

// Point inside (or on) a convex polygon of either orientation.
inline bool in_convex(const std::vector<Vec2>& poly, const Vec2& q) {
  bool pos = false, neg = false;
  for (size_t i = 0; i < poly.size(); ++i) {
    const double c = cross2(poly[(i + 1) % poly.size()] - poly[i], q - poly[i]);
    if (c > 1e-12) pos = true;
    if (c < -1e-12) neg = true;
  }
  return !(pos && neg);
}

inline std::optional<Vec2> segment_intersection(const Vec2& p, const Vec2& p2, const Vec2& q, const Vec2& q2) {
  const Vec2 r = p2 - p, s = q2 - q;
  const double den = cross2(r, s);
  if (std::abs(den) < 1e-15) return std::nullopt;
  const double t = cross2(q - p, s) / den, u = cross2(q - p, r) / den;
  if (t < 0 || t > 1 || u < 0 || u > 1) return std::nullopt;
  return p + t * r;
}

}  // namespace detail

// Intersection-over-union of two convex polygons: the intersection is the
// hull of mutually contained vertices and edge crossings.
inline double convex_iou(const std::vector<Vec2>& a, const std::vector<Vec2>& b) {
  std::vector<Vec2> pts;
  for (const auto& v : a)
    if (detail::in_convex(b, v)) pts.push_back(v);
  for (const auto& v : b)
    if (detail::in_convex(a, v)) pts.push_back(v);
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t j = 0; j < b.size(); ++j)
      if (auto x = detail::segment_intersection(a[i], a[(i + 1) % a.size()], b[j], b[(j + 1) % b.size()]))
        pts.push_back(*x);
  double inter = 0.0;
  if (pts.size() >= 3) {
    Vec2 c(0, 0);
    for (const auto& p : pts) c += p;
    c /= static_cast<double>(pts.size());
    std::sort(pts.begin(), pts.end(), [&](const Vec2& p, const Vec2& q) {
      return std::atan2(p.y() - c.y(), p.x() - c.x()) < std::atan2(q.y() - c.y(), q.x() - c.x());
    });
    inter = detail::polygon_area(pts);
  }
  const double uni = detail::polygon_area(a) + detail::polygon_area(b) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

inline constexpr double kMinAugmentIou = 0.8;

// IoU of the transformed box (a rotated quadrilateral) against the original.
inline double augment_iou(const BBox& box, const AugmentTransform& t) {
  const Quad q = box_corners(box);
  std::vector<Vec2> orig(q.begin(), q.end()), moved;
  for (const auto& v : q) moved.push_back(t.apply(v));
  return convex_iou(moved, orig);
}

// Applies the transform to pixels, keypoints and labels; nothing when the
// transformed box overlaps the original by IoU <= 0.8.
inline std::optional<TrainingSample> augment(const TrainingSample& s, const AugmentParams& params,
                                             const std::vector<std::pair<int, int>>& flip_pairs, float fill = 0.5f) {
  params.validate();
  const double size = s.crop.width;
  const AugmentTransform t{Vec2(size / 2, s.crop.height / 2.0), params};
  if (!(augment_iou(s.bbox, t) > kMinAugmentIou)) return std::nullopt;
  if (params.is_identity()) return s;
  TrainingSample out = s;
  for (int y = 0; y < s.crop.height; ++y)
    for (int x = 0; x < s.crop.width; ++x) {
      const Vec2 src = t.inverse(Vec2(x + 0.5, y + 0.5));
      for (int c = 0; c < Image::kChannels; ++c) out.crop.at(c, x, y) = sample_bilinear(s.crop, c, src.x(), src.y(), fill);
    }
  if (s.keypoints) {
    std::vector<Keypoint2D> kps(s.keypoints->size());
    for (size_t k = 0; k < kps.size(); ++k) {
      const Keypoint2D& in = (*s.keypoints)[k];
      const Vec2 q = t.apply(Vec2(in.x, in.y));
      const bool inside = q.x() >= 0 && q.y() >= 0 && q.x() < s.crop.width && q.y() < s.crop.height;
      kps[k] = {snap(q.x()), snap(q.y()), in.visible && inside};
    }
    if (params.flip) {
      std::vector<Keypoint2D> swapped = kps;
      for (auto [a, b] : flip_pairs) {
        swapped[a] = kps[b];
        swapped[b] = kps[a];
      }
      kps = std::move(swapped);
    }
    out.keypoints = std::move(kps);
  }
  if (s.viewpoint) {
    double az = s.viewpoint->azimuth(), ti = s.viewpoint->tilt();
    if (params.flip) {
      az = 360.0 - az;
      ti = -ti;
    }
    out.viewpoint = snapped_viewpoint(az, s.viewpoint->elevation(), ti + params.rotation);
  }
  // The object box follows as the axis-aligned hull of its moved corners.
  double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
  for (const auto& v : box_corners(s.bbox)) {
    const Vec2 q = t.apply(v);
    x0 = std::min(x0, q.x());
    y0 = std::min(y0, q.y());
    x1 = std::max(x1, q.x());
    y1 = std::max(y1, q.y());
  }
  out.bbox = {x0, y0, x1 - x0, y1 - y0};
  return out;
}

// Rejected augmentations fall back to the unmodified sample.
inline TrainingSample augment_or_keep(const TrainingSample& s, const AugmentParams& params,
                                      const std::vector<std::pair<int, int>>& flip_pairs, float fill = 0.5f) {
  auto a = augment(s, params, flip_pairs, fill);
  return a ? std::move(*a) : s;
}

// Targets in the model's heatmap grid; bins at every granularity.
template <typename S>
ModelSample<S> to_model_sample(const TrainingSample& s, int stride, int heatmap_size, double sigma) {
  ModelSample<S> m;
  m.image = s.crop;
  m.class_id = s.class_id;
  m.mask = s.mask;
  if (s.keypoints)
    for (const auto& k : *s.keypoints)
      m.gt_heatmaps.push_back(render_gt_heatmap<S>(
          Keypoint2D{to_heatmap_coord(k.x, stride), to_heatmap_coord(k.y, stride), k.visible}, heatmap_size,
          heatmap_size, sigma));
  if (s.viewpoint)
    for (size_t g = 0; g < kBinSizes.size(); ++g) m.gt_bins[g] = viewpoint_bins(*s.viewpoint, kBinSizes[g]);
  return m;
}

struct Draw {
  int source = 0;
  size_t index = 0;
  friend bool operator==(const Draw&, const Draw&) = default;
};

// Each batch slot picks a source uniformly, then a sample uniformly within
// it. Batch b depends only on (seed, b).
class MixSampler {
 public:
  MixSampler(std::vector<size_t> sizes, std::uint64_t seed) : sizes_(std::move(sizes)), seed_(seed) {
    if (sizes_.empty()) throw Error(ErrorCode::empty_source, "sampler needs at least one source");
    for (size_t i = 0; i < sizes_.size(); ++i)
      if (sizes_[i] == 0) throw Error(ErrorCode::empty_source, "source " + std::to_string(i) + " is empty");
  }

  std::vector<Draw> batch(std::uint64_t batch_index, int batch_size) const {
    if (batch_size <= 0) throw Error(ErrorCode::invalid_argument, "batch size must be positive");
    std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                      static_cast<std::uint32_t>(batch_index), static_cast<std::uint32_t>(batch_index >> 32), 0x6d6978u};
    std::mt19937_64 rng(seq);
    std::vector<Draw> out;
    for (int i = 0; i < batch_size; ++i) {
      const int src = static_cast<int>(std::uniform_int_distribution<size_t>(0, sizes_.size() - 1)(rng));
      out.push_back({src, std::uniform_int_distribution<size_t>(0, sizes_[src] - 1)(rng)});
    }
    return out;
  }

  size_t num_sources() const { return sizes_.size(); }

 private:
  std::vector<size_t> sizes_;
  std::uint64_t seed_;
};

}  // namespace posekit
