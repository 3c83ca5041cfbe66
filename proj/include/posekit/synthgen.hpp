#pragma once

// Procedural synthetic data: parametric class meshes with keypoint spheres,
// random viewpoints, a z-buffer rasterizer and occlusion-aware keypoint
// projection. Every sample draws from its own (seed, index) stream.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "posekit/error.hpp"
#include "posekit/geometry.hpp"
#include "posekit/heatmap.hpp"
#include "posekit/image.hpp"
#include "posekit/json_io.hpp"
#include "posekit/parallel.hpp"

namespace posekit {

using Rgb = std::array<float, 3>;

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<Rgb> colors;  // one per triangle

  static constexpr double kMinArea = 1e-12;

  void add_triangle(int a, int b, int c, const Rgb& color) {
    triangles.push_back({a, b, c});
    colors.push_back(color);
  }

  int add_vertex(const Vec3& v) {
    vertices.push_back(v);
    return static_cast<int>(vertices.size()) - 1;
  }

  void validate() const {
    if (colors.size() != triangles.size()) throw Error(ErrorCode::validation, "mesh needs one color per triangle");
    const int n = static_cast<int>(vertices.size());
    for (size_t t = 0; t < triangles.size(); ++t) {
      const auto& tri = triangles[t];
      for (int i : tri)
        if (i < 0 || i >= n) throw Error(ErrorCode::validation, "triangle " + std::to_string(t) + " index out of range");
      const double area =
          0.5 * (vertices[tri[1]] - vertices[tri[0]]).cross(vertices[tri[2]] - vertices[tri[0]]).norm();
      if (!(area > kMinArea)) throw Error(ErrorCode::validation, "triangle " + std::to_string(t) + " is degenerate");
    }
  }
};

// Axis-aligned box, outward-facing triangles.
inline void add_box(Mesh& m, const Vec3& lo, const Vec3& hi, const Rgb& color) {
  int v[8];
  for (int i = 0; i < 8; ++i)
    v[i] = m.add_vertex(Vec3(i & 1 ? hi.x() : lo.x(), i & 2 ? hi.y() : lo.y(), i & 4 ? hi.z() : lo.z()));
  const int faces[6][4] = {{0, 2, 3, 1}, {4, 5, 7, 6}, {0, 1, 5, 4}, {2, 6, 7, 3}, {0, 4, 6, 2}, {1, 3, 7, 5}};
  for (const auto& f : faces) {
    m.add_triangle(v[f[0]], v[f[1]], v[f[2]], color);
    m.add_triangle(v[f[0]], v[f[2]], v[f[3]], color);
  }
}

// Cylinder with its axis along x, capped; each cap is a fan around its center.
inline void add_cylinder_x(Mesh& m, const Vec3& center, double radius, double half_width, int segments,
                           const Rgb& color) {
  const int c0 = m.add_vertex(center - Vec3(half_width, 0, 0));
  const int c1 = m.add_vertex(center + Vec3(half_width, 0, 0));
  std::vector<int> ring0, ring1;
  for (int i = 0; i < segments; ++i) {
    const double a = 2 * kPi * i / segments;
    const Vec3 off(0, radius * std::cos(a), radius * std::sin(a));
    ring0.push_back(m.add_vertex(m.vertices[c0] + off));
    ring1.push_back(m.add_vertex(m.vertices[c1] + off));
  }
  const Rgb cap{color[0] * 0.6f, color[1] * 0.6f, color[2] * 0.6f};
  for (int i = 0; i < segments; ++i) {
    const int j = (i + 1) % segments;
    m.add_triangle(ring0[i], ring0[j], ring1[j], color);
    m.add_triangle(ring0[i], ring1[j], ring1[i], color);
    m.add_triangle(c0, ring0[j], ring0[i], cap);
    m.add_triangle(c1, ring1[i], ring1[j], cap);
  }
}

struct KeypointSphere {
  Vec3 center;
  int keypoint_id = 0;
  double radius = 0.03;  // metadata only
};

struct ClassSpec {
  std::string name;
  Mesh mesh;
  std::vector<KeypointSphere> keypoints;
  std::vector<std::pair<int, int>> flip_pairs;  // left/right swaps

  int num_keypoints() const { return static_cast<int>(keypoints.size()); }

  void validate() const {
    mesh.validate();
    for (int i = 0; i < num_keypoints(); ++i)
      if (keypoints[i].keypoint_id != i)
        throw Error(ErrorCode::validation, name + ": keypoint spheres must be listed in id order");
    for (auto [a, b] : flip_pairs)
      if (a < 0 || b < 0 || a >= num_keypoints() || b >= num_keypoints() || a == b)
        throw Error(ErrorCode::validation, name + ": bad flip pair");
  }
};

// Keypoint centers are stored at annotation precision so the manifest
// reproduces them exactly.
inline Vec3 plain_vec(const Vec3& v) { return {plain(v.x()), plain(v.y()), plain(v.z())}; }

// Object frame: x lateral, -y is the front, z up; centered on the origin.
inline ClassSpec car_spec() {
  ClassSpec s;
  s.name = "car";
  const Vec3 c(0, 0, 0.45);
  add_box(s.mesh, Vec3(-0.45, -1.0, 0.15) - c, Vec3(0.45, 1.0, 0.55) - c, {0.75f, 0.15f, 0.12f});
  add_box(s.mesh, Vec3(-0.38, -0.45, 0.55) - c, Vec3(0.38, 0.55, 0.9) - c, {0.35f, 0.45f, 0.65f});
  for (double x : {-0.47, 0.47})
    for (double y : {-0.62, 0.62}) add_cylinder_x(s.mesh, Vec3(x, y, 0.18) - c, 0.18, 0.06, 16, {0.1f, 0.1f, 0.1f});
  // Outer wheel hubs, then roof corners.
  const std::array<Vec3, 8> kp{Vec3(0.53, -0.62, 0.18), Vec3(-0.53, -0.62, 0.18), Vec3(0.53, 0.62, 0.18),
                               Vec3(-0.53, 0.62, 0.18), Vec3(0.38, -0.45, 0.9),   Vec3(-0.38, -0.45, 0.9),
                               Vec3(0.38, 0.55, 0.9),   Vec3(-0.38, 0.55, 0.9)};
  for (int i = 0; i < 8; ++i) s.keypoints.push_back({plain_vec(kp[i] - c), i, 0.03});
  s.flip_pairs = {{0, 1}, {2, 3}, {4, 5}, {6, 7}};
  return s;
}

inline ClassSpec chair_spec() {
  ClassSpec s;
  s.name = "chair";
  const Vec3 c(0, 0, 0.55);
  const Rgb wood{0.55f, 0.38f, 0.2f};
  add_box(s.mesh, Vec3(-0.45, -0.45, 0.45) - c, Vec3(0.45, 0.45, 0.55) - c, {0.2f, 0.55f, 0.3f});
  for (double x : {-0.45, 0.39})
    for (double y : {-0.45, 0.39}) add_box(s.mesh, Vec3(x, y, 0.0) - c, Vec3(x + 0.06, y + 0.06, 0.45) - c, wood);
  add_box(s.mesh, Vec3(-0.45, 0.37, 0.55) - c, Vec3(0.45, 0.45, 1.1) - c, {0.25f, 0.4f, 0.6f});
  const std::array<Vec3, 6> kp{Vec3(0.45, -0.45, 0.55), Vec3(-0.45, -0.45, 0.55), Vec3(0.45, 0.37, 0.55),
                               Vec3(-0.45, 0.37, 0.55), Vec3(0.45, 0.37, 1.1),    Vec3(-0.45, 0.37, 1.1)};
  for (int i = 0; i < 6; ++i) s.keypoints.push_back({plain_vec(kp[i] - c), i, 0.03});
  s.flip_pairs = {{0, 1}, {2, 3}, {4, 5}};
  return s;
}

inline ClassSpec builtin_class(const std::string& name) {
  if (name == "car") return car_spec();
  if (name == "chair") return chair_spec();
  throw Error(ErrorCode::config, "unknown synthetic class '" + name + "' (known: car, chair)");
}

struct ViewpointRanges {
  double azimuth_min = 0.0, azimuth_max = 360.0;
  double elevation_min = -15.0, elevation_max = 60.0;
  double tilt_min = -30.0, tilt_max = 30.0;

  void validate() const {
    if (!(azimuth_min <= azimuth_max) || azimuth_min < 0.0 || azimuth_max > 360.0)
      throw Error(ErrorCode::config, "azimuth range must lie in [0, 360]");
    if (!(elevation_min <= elevation_max) || elevation_min < -90.0 || elevation_max > 90.0)
      throw Error(ErrorCode::config, "elevation range must lie in [-90, 90]");
    if (!(tilt_min <= tilt_max) || tilt_min < -180.0 || tilt_max > 180.0)
      throw Error(ErrorCode::config, "tilt range must lie in [-180, 180]");
  }
};

// Draws an angle in [lo, hi]; a point range returns it exactly.
inline double uniform_in(std::mt19937_64& rng, double lo, double hi) {
  if (lo == hi) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Viewpoint sample_viewpoint(std::mt19937_64& rng, const ViewpointRanges& r) {
  r.validate();
  const double az = uniform_in(rng, r.azimuth_min, r.azimuth_max);
  const double el = uniform_in(rng, r.elevation_min, r.elevation_max);
  const double ti = uniform_in(rng, r.tilt_min, r.tilt_max);
  return Viewpoint(az, el, ti == 180.0 ? -180.0 : ti);
}

struct BBox {
  double x = 0, y = 0, w = 0, h = 0;

  double area() const { return w * h; }
  Vec2 center() const { return {x + w / 2, y + h / 2}; }
  friend bool operator==(const BBox&, const BBox&) = default;
};

struct RenderResult {
  Image image;
  std::vector<double> depth;  // +inf where nothing was drawn
  std::vector<int> triangle;  // -1 where nothing was drawn

  int width() const { return image.width; }
  int height() const { return image.height; }
  double depth_at(int x, int y) const { return depth[static_cast<size_t>(y) * width() + x]; }
  int triangle_at(int x, int y) const { return triangle[static_cast<size_t>(y) * width() + x]; }

  // Tight pixel box of the silhouette.
  BBox bbox() const {
    int x0 = width(), y0 = height(), x1 = -1, y1 = -1;
    for (int y = 0; y < height(); ++y)
      for (int x = 0; x < width(); ++x)
        if (triangle_at(x, y) >= 0) {
          x0 = std::min(x0, x);
          y0 = std::min(y0, y);
          x1 = std::max(x1, x);
          y1 = std::max(y1, y);
        }
    if (x1 < 0) throw Error(ErrorCode::empty_render, "no geometry was rendered");
    return {double(x0), double(y0), double(x1 - x0 + 1), double(y1 - y0 + 1)};
  }
};

namespace detail {

struct ScreenVertex {
  double x = 0, y = 0, z = 0;  // pixel coordinates and camera depth
  bool valid = false;
};

inline constexpr double kNearPlane = 1e-6;

inline std::vector<ScreenVertex> project_vertices(const Mesh& mesh, const Camera& cam) {
  std::vector<ScreenVertex> sv(mesh.vertices.size());
  for (size_t i = 0; i < sv.size(); ++i) {
    const Vec3 pc = cam.to_camera(mesh.vertices[i]);
    if (pc.z() > kNearPlane) {
      const Projection p = project_camera_point(cam, pc);
      sv[i] = {p.x, p.y, p.depth, true};
    }
  }
  return sv;
}

inline double edge(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

// Perspective-correct depth of the triangle at pixel position (px, py), or
// nothing when the position lies outside it.
inline std::optional<double> triangle_depth_at(const ScreenVertex& a, const ScreenVertex& b, const ScreenVertex& c,
                                               double px, double py) {
  if (!a.valid || !b.valid || !c.valid) return std::nullopt;
  const double area = edge(a.x, a.y, b.x, b.y, c.x, c.y);
  if (std::abs(area) < 1e-12) return std::nullopt;
  const double w0 = edge(b.x, b.y, c.x, c.y, px, py) / area;
  const double w1 = edge(c.x, c.y, a.x, a.y, px, py) / area;
  const double w2 = edge(a.x, a.y, b.x, b.y, px, py) / area;
  if (w0 < 0 || w1 < 0 || w2 < 0) return std::nullopt;
  return 1.0 / (w0 / a.z + w1 / b.z + w2 / c.z);
}

}  // namespace detail

// Two-sided flat-shaded rasterization sampled at pixel centers. Triangles
// with a vertex at or behind the near plane are skipped.
inline RenderResult render(const Mesh& mesh, const Camera& cam, const Image& background) {
  if (background.width != cam.width() || background.height != cam.height())
    throw Error(ErrorCode::shape_mismatch, "background size differs from the camera image size");
  const int w = cam.width(), h = cam.height();
  RenderResult r{background, std::vector<double>(static_cast<size_t>(w) * h, std::numeric_limits<double>::infinity()),
                 std::vector<int>(static_cast<size_t>(w) * h, -1)};
  const auto sv = detail::project_vertices(mesh, cam);
  const Vec3 light = Vec3(-0.3, -0.5, -1.0).normalized();
  for (size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto& tri = mesh.triangles[t];
    const auto &a = sv[tri[0]], &b = sv[tri[1]], &c = sv[tri[2]];
    if (!a.valid || !b.valid || !c.valid) continue;
    const Vec3 n = (cam.to_camera(mesh.vertices[tri[1]]) - cam.to_camera(mesh.vertices[tri[0]]))
                       .cross(cam.to_camera(mesh.vertices[tri[2]]) - cam.to_camera(mesh.vertices[tri[0]]))
                       .normalized();
    const float shade = static_cast<float>(0.35 + 0.65 * std::abs(n.dot(light)));
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.x, b.x, c.x}))));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(std::max({a.x, b.x, c.x}))));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.y, b.y, c.y}))));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(std::max({a.y, b.y, c.y}))));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const auto d = detail::triangle_depth_at(a, b, c, x + 0.5, y + 0.5);
        if (!d) continue;
        const size_t i = static_cast<size_t>(y) * w + x;
        if (*d < r.depth[i]) {
          r.depth[i] = *d;
          r.triangle[i] = static_cast<int>(t);
          const Rgb& col = mesh.colors[t];
          r.image.set_rgb(x, y, {col[0] * shade, col[1] * shade, col[2] * shade});
        }
      }
  }
  bool any = false;
  for (int id : r.triangle) any = any || id >= 0;
  if (!any) throw Error(ErrorCode::empty_render, "no triangle projects inside the image");
  return r;
}

inline RenderResult render(const Mesh& mesh, const Camera& cam, float fill = 0.5f) {
  return render(mesh, cam, Image(cam.width(), cam.height(), fill));
}

// Gradient between two random colours plus low-frequency value noise.
inline Image procedural_background(std::mt19937_64& rng, int w, int h) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Rgb c0{float(u(rng)), float(u(rng)), float(u(rng))};
  const Rgb c1{float(u(rng)), float(u(rng)), float(u(rng))};
  const double angle = 2 * kPi * u(rng);
  const double dx = std::cos(angle), dy = std::sin(angle);
  constexpr int kGrid = 6;
  std::array<double, (kGrid + 1) * (kGrid + 1)> noise;
  for (double& v : noise) v = u(rng) - 0.5;
  Image img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double nx = (x + 0.5) / w, ny = (y + 0.5) / h;
      const double t = std::clamp(0.5 + (nx - 0.5) * dx + (ny - 0.5) * dy, 0.0, 1.0);
      const double gx = nx * kGrid, gy = ny * kGrid;
      const int ix = std::min(static_cast<int>(gx), kGrid - 1), iy = std::min(static_cast<int>(gy), kGrid - 1);
      const double fx = gx - ix, fy = gy - iy;
      auto at = [&](int i, int j) { return noise[j * (kGrid + 1) + i]; };
      const double n = (1 - fy) * ((1 - fx) * at(ix, iy) + fx * at(ix + 1, iy)) +
                       fy * ((1 - fx) * at(ix, iy + 1) + fx * at(ix + 1, iy + 1));
      for (int c = 0; c < 3; ++c)
        img.at(c, x, y) = static_cast<float>(std::clamp((1 - t) * c0[c] + t * c1[c] + 0.25 * n, 0.0, 1.0));
    }
  return img;
}

// Depth-buffer occlusion tolerance, object units.
inline constexpr double kOcclusionEpsilon = 1e-3;

// Projects each sphere center. A keypoint is occluded when a triangle drawn
// near its pixel covers its exact sub-pixel position at a depth more than
// epsilon in front of it; surface contact within epsilon stays visible.
// Off-image and behind-camera keypoints are invisible.
inline std::vector<Keypoint2D> project_keypoints(const Mesh& mesh, std::span<const KeypointSphere> spheres,
                                                 const Camera& cam, const RenderResult& buffers) {
  if (buffers.width() != cam.width() || buffers.height() != cam.height())
    throw Error(ErrorCode::shape_mismatch, "render buffers do not match the camera");
  const auto sv = detail::project_vertices(mesh, cam);
  constexpr int kReach = 2;
  std::vector<Keypoint2D> out;
  for (const auto& s : spheres) {
    const Vec3 pc = cam.to_camera(s.center);
    if (!(pc.z() > 0.0)) {
      out.push_back({0.0, 0.0, false});
      continue;
    }
    const Projection p = project_camera_point(cam, pc);
    Keypoint2D kp{p.x, p.y, false};
    if (p.x >= 0 && p.y >= 0 && p.x < cam.width() && p.y < cam.height()) {
      kp.visible = true;
      const int px = static_cast<int>(p.x), py = static_cast<int>(p.y);
      std::vector<int> seen;
      for (int y = std::max(0, py - kReach); y <= std::min(cam.height() - 1, py + kReach) && kp.visible; ++y)
        for (int x = std::max(0, px - kReach); x <= std::min(cam.width() - 1, px + kReach); ++x) {
          const int t = buffers.triangle_at(x, y);
          if (t < 0 || std::find(seen.begin(), seen.end(), t) != seen.end()) continue;
          seen.push_back(t);
          const auto& tri = mesh.triangles[t];
          const auto d = detail::triangle_depth_at(sv[tri[0]], sv[tri[1]], sv[tri[2]], p.x, p.y);
          if (d && *d < p.depth - kOcclusionEpsilon) {
            kp.visible = false;
            break;
          }
        }
    }
    out.push_back(kp);
  }
  return out;
}

struct GeneratorOptions {
  int image_size = 96;
  // Defaults keep every keypoint of the built-in classes inside the frame.
  double focal = 90.0;
  double distance_min = 4.0, distance_max = 5.0;
  double max_offset = 0.2;  // object shift off the optical axis, world units
  ViewpointRanges ranges;

  void validate() const {
    ranges.validate();
    if (image_size < 16) throw Error(ErrorCode::config, "image_size must be at least 16");
    if (!(focal > 0)) throw Error(ErrorCode::config, "focal must be positive");
    if (!(distance_min > 1.5) || !(distance_min <= distance_max))
      throw Error(ErrorCode::config, "distance range must satisfy 1.5 < min <= max");
    if (!(max_offset >= 0)) throw Error(ErrorCode::config, "max_offset must be non-negative");
  }
};

struct SynthCamera {
  Viewpoint viewpoint;
  double distance = 4.0;
  double focal = 90.0;
  Vec2 offset{0, 0};
  int size = 96;

  Camera camera() const { return camera_for_viewpoint(viewpoint, distance, focal, size, size, offset); }
};

struct SynthSample {
  Image image;
  SynthCamera camera;
  std::vector<Keypoint2D> keypoints;
  BBox bbox;
};

// Per-sample stream, identical no matter which worker draws it.
inline std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

// Sampled parameters are rounded to the annotation precision before use,
// so the stored labels describe exactly the rendered camera.
inline SynthSample synthesize(const ClassSpec& spec, const GeneratorOptions& opt, std::mt19937_64& rng) {
  const Viewpoint raw = sample_viewpoint(rng, opt.ranges);
  SynthCamera sc;
  sc.viewpoint = Viewpoint(plain(raw.azimuth()), plain(raw.elevation()), plain(raw.tilt()));
  sc.distance = plain(uniform_in(rng, opt.distance_min, opt.distance_max));
  sc.focal = plain(opt.focal);
  sc.offset = Vec2(plain(uniform_in(rng, -opt.max_offset, opt.max_offset)),
                   plain(uniform_in(rng, -opt.max_offset, opt.max_offset)));
  sc.size = opt.image_size;
  Mesh mesh = spec.mesh;
  const float jitter = static_cast<float>(uniform_in(rng, 0.85, 1.15));
  for (auto& c : mesh.colors)
    for (float& v : c) v = std::min(1.0f, v * jitter);
  const Image bg = procedural_background(rng, opt.image_size, opt.image_size);
  const Camera cam = sc.camera();
  RenderResult rr = render(mesh, cam, bg);
  SynthSample s{Image{}, sc, project_keypoints(mesh, spec.keypoints, cam, rr), rr.bbox()};
  s.image = std::move(rr.image);
  for (auto& k : s.keypoints) {
    k.x = plain(k.x);
    k.y = plain(k.y);
  }
  return s;
}

struct DatasetSummary {
  std::filesystem::path manifest;
  int samples = 0;
  int visible_keypoints = 0;
  int total_keypoints = 0;
};

inline std::string sample_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d", index);
  return buf;
}

inline json synth_annotation_json(const ClassSpec& spec, const SynthSample& s) {
  json kps = json::array();
  for (const auto& k : s.keypoints) kps.push_back({{"x", plain(k.x)}, {"y", plain(k.y)}, {"visible", k.visible}});
  const Viewpoint& vp = s.camera.viewpoint;
  return {{"class", spec.name},
          {"bbox", {plain(s.bbox.x), plain(s.bbox.y), plain(s.bbox.w), plain(s.bbox.h)}},
          {"viewpoint", {{"az", plain(vp.azimuth())}, {"el", plain(vp.elevation())}, {"ti", plain(vp.tilt())}}},
          {"keypoints", kps},
          {"camera",
           {{"distance", s.camera.distance},
            {"focal", s.camera.focal},
            {"offset", {s.camera.offset.x(), s.camera.offset.y()}}}}};
}

inline json class_manifest_json(const ClassSpec& spec) {
  json pairs = json::array(), pts = json::array();
  for (auto [a, b] : spec.flip_pairs) pairs.push_back({a, b});
  for (const auto& k : spec.keypoints) pts.push_back({plain(k.center.x()), plain(k.center.y()), plain(k.center.z())});
  return {{"name", spec.name}, {"num_keypoints", spec.num_keypoints()}, {"flip_pairs", pairs}, {"keypoints_3d", pts}};
}

// Writes images/, annot/ and manifest.json. Samples are class-major; all
// samples are marked as carrying both annotation kinds.
inline DatasetSummary generate_dataset(const std::vector<ClassSpec>& specs, int n_per_class, std::uint64_t seed,
                                       const std::filesystem::path& out_dir, const GeneratorOptions& opt = {}) {
  if (specs.empty()) throw Error(ErrorCode::invalid_argument, "at least one class is required");
  if (n_per_class <= 0) throw Error(ErrorCode::invalid_argument, "samples per class must be positive");
  opt.validate();
  for (const auto& s : specs) {
    s.validate();
  }
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  fs::create_directories(out_dir / "annot", ec);
  if (ec) throw Error(ErrorCode::io, "cannot create '" + out_dir.string() + "': " + ec.message());
  const int total = static_cast<int>(specs.size()) * n_per_class;
  std::vector<int> visible(total, 0);
  parallel_for(total, [&](int i) {
    const ClassSpec& spec = specs[i / n_per_class];
    auto rng = sample_rng(seed, static_cast<std::uint64_t>(i));
    const SynthSample s = synthesize(spec, opt, rng);
    for (const auto& k : s.keypoints) visible[i] += k.visible;
    write_png(out_dir / "images" / (sample_id(i) + ".png"), s.image);
    write_json(out_dir / "annot" / (sample_id(i) + ".json"), synth_annotation_json(spec, s));
  });
  json classes = json::array(), samples = json::array();
  for (const auto& s : specs) classes.push_back(class_manifest_json(s));
  DatasetSummary sum;
  for (int i = 0; i < total; ++i) {
    const std::string id = sample_id(i);
    samples.push_back({{"id", id},
                       {"class", specs[i / n_per_class].name},
                       {"image", "images/" + id + ".png"},
                       {"annot", "annot/" + id + ".json"},
                       {"source", "M"}});
    sum.visible_keypoints += visible[i];
    sum.total_keypoints += specs[i / n_per_class].num_keypoints();
  }
  const json manifest{{"format", "posekit-dataset"},
                      {"version", 1},
                      {"seed", seed},
                      {"image_size", opt.image_size},
                      {"classes", classes},
                      {"samples", samples}};
  sum.manifest = out_dir / "manifest.json";
  write_json(sum.manifest, manifest);
  sum.samples = total;
  return sum;
}

}  // namespace posekit
