#include "posekit/synthgen.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "scene_checks.hpp"

using namespace posekit;
namespace fs = std::filesystem;

namespace {

// Camera at the world origin looking along +y (azimuth 0 convention),
// with the world origin placed `distance` in front of it.
Camera front_camera(double distance, int size = 64, double focal = 50.0) {
  return camera_for_viewpoint(Viewpoint(0, 0, 0), distance, focal, size, size);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("posekit_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Mesh, Validation) {
  Mesh m;
  m.add_vertex({0, 0, 0});
  m.add_vertex({1, 0, 0});
  m.add_vertex({0, 1, 0});
  m.add_triangle(0, 1, 2, {1, 1, 1});
  EXPECT_NO_THROW(m.validate());
  m.add_triangle(0, 1, 3, {1, 1, 1});
  EXPECT_THROW(m.validate(), Error);
  m.triangles.back() = {0, 1, 1};
  EXPECT_THROW(m.validate(), Error);
}

TEST(ClassSpec, BuiltinsAreMirrorSymmetric) {
  for (const auto& spec : {car_spec(), chair_spec()}) {
    EXPECT_NO_THROW(spec.validate());
    for (auto [a, b] : spec.flip_pairs) {
      const Vec3 pa = spec.keypoints[a].center, pb = spec.keypoints[b].center;
      EXPECT_EQ(pa.x(), -pb.x());
      EXPECT_EQ(pa.y(), pb.y());
      EXPECT_EQ(pa.z(), pb.z());
    }
  }
  EXPECT_EQ(car_spec().num_keypoints(), 8);
  EXPECT_EQ(chair_spec().num_keypoints(), 6);
  EXPECT_THROW(builtin_class("boat"), Error);
}

TEST(SampleViewpoint, AzimuthIsUniform) {
  std::mt19937_64 rng(1);
  const ViewpointRanges r;
  std::vector<long> counts(24, 0);
  for (int i = 0; i < 10000; ++i) {
    const Viewpoint vp = sample_viewpoint(rng, r);
    ASSERT_GE(vp.elevation(), r.elevation_min);
    ASSERT_LE(vp.elevation(), r.elevation_max);
    ASSERT_GE(vp.tilt(), r.tilt_min);
    ASSERT_LE(vp.tilt(), r.tilt_max);
    ++counts[static_cast<int>(vp.azimuth() / 15.0)];
  }
  EXPECT_GT(testing_oracles::chi_square_uniform_p(counts), 0.01);
}

TEST(SampleViewpoint, PointRange) {
  std::mt19937_64 rng(2);
  const ViewpointRanges r{40.0, 40.0, 12.5, 12.5, -7.0, -7.0};
  const Viewpoint vp = sample_viewpoint(rng, r);
  EXPECT_EQ(vp.azimuth(), 40.0);
  EXPECT_EQ(vp.elevation(), 12.5);
  EXPECT_EQ(vp.tilt(), -7.0);
  EXPECT_THROW(sample_viewpoint(rng, ViewpointRanges{0, 360, 10, 100, 0, 0}), Error);
}

TEST(Render, SingleTriangleAtCenter) {
  // Triangle in the plane y = 0 (facing the camera at y = -4).
  Mesh m;
  m.add_vertex({-0.5, 0, -0.5});
  m.add_vertex({0.5, 0, -0.5});
  m.add_vertex({0, 0, 0.5});
  m.add_triangle(0, 1, 2, {1, 0, 0});
  const Camera cam = front_camera(4.0);
  const RenderResult r = render(m, cam);
  EXPECT_NEAR(r.depth_at(32, 32), 4.0, 1e-9);
  EXPECT_EQ(r.triangle_at(32, 32), 0);
  EXPECT_TRUE(std::isinf(r.depth_at(0, 0)));
  EXPECT_EQ(r.triangle_at(0, 0), -1);
  EXPECT_EQ(r.image.at(1, 0, 0), 0.5f);
}

TEST(Render, NearerTriangleWins) {
  Mesh m;
  for (double y : {0.0, -1.0}) {
    m.add_vertex({-1, y, -1});
    m.add_vertex({1, y, -1});
    m.add_vertex({0, y, 1});
  }
  m.add_triangle(0, 1, 2, {1, 0, 0});
  m.add_triangle(3, 4, 5, {0, 1, 0});
  const RenderResult r = render(m, front_camera(4.0));
  EXPECT_EQ(r.triangle_at(32, 32), 1);
  EXPECT_NEAR(r.depth_at(32, 32), 3.0, 1e-9);
  // Draw order must not matter.
  std::swap(m.triangles[0], m.triangles[1]);
  const RenderResult r2 = render(m, front_camera(4.0));
  EXPECT_EQ(r2.triangle_at(32, 32), 0);
  EXPECT_NEAR(r2.depth_at(32, 32), 3.0, 1e-9);
}

TEST(Render, CubeSilhouetteMatchesCornerProjection) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Mesh m;
    add_box(m, Vec3(-0.5, -0.5, -0.5), Vec3(0.5, 0.5, 0.5), {0.5f, 0.5f, 0.5f});
    const Viewpoint vp = sample_viewpoint(rng, ViewpointRanges{0, 360, -60, 60, -40, 40});
    const Camera cam = camera_for_viewpoint(vp, 4.0, 60.0, 80, 80);
    const BBox box = render(m, cam).bbox();
    double x0 = 1e9, y0 = 1e9, x1 = -1e9, y1 = -1e9;
    for (const Vec3& v : m.vertices) {
      const Projection p = project_point(cam, v);
      x0 = std::min(x0, p.x);
      y0 = std::min(y0, p.y);
      x1 = std::max(x1, p.x);
      y1 = std::max(y1, p.y);
    }
    EXPECT_NEAR(box.x, x0, 1.0);
    EXPECT_NEAR(box.y, y0, 1.0);
    EXPECT_NEAR(box.x + box.w, x1, 1.0);
    EXPECT_NEAR(box.y + box.h, y1, 1.0);
  }
}

TEST(Render, EmptyRender) {
  Mesh m;
  m.add_vertex({10, 0, 10});
  m.add_vertex({11, 0, 10});
  m.add_vertex({10, 0, 11});
  m.add_triangle(0, 1, 2, {1, 1, 1});
  EXPECT_THROW(render(m, front_camera(4.0)), Error);
  // Entirely behind the camera.
  Mesh b;
  b.add_vertex({-1, -9, -1});
  b.add_vertex({1, -9, -1});
  b.add_vertex({0, -9, 1});
  b.add_triangle(0, 1, 2, {1, 1, 1});
  try {
    render(b, front_camera(4.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::empty_render);
  }
}

TEST(ProjectKeypoints, VisibleInFrontOccludedBehindWall) {
  // Wall at y = 0, keypoints in front of it, behind it and on it.
  Mesh wall;
  add_box(wall, Vec3(-1, 0, -1), Vec3(1, 0.1, 1), {0.8f, 0.8f, 0.8f});
  const std::vector<KeypointSphere> spheres{
      {Vec3(0.2, -0.5, 0.1), 0}, {Vec3(0.2, 0.5, 0.1), 1}, {Vec3(-0.3, 0.0, 0.25), 2}, {Vec3(3.0, 0.5, 0.0), 3}};
  const Camera cam = front_camera(4.0);
  const RenderResult r = render(wall, cam);
  const auto kps = project_keypoints(wall, spheres, cam, r);
  ASSERT_EQ(kps.size(), 4u);
  EXPECT_TRUE(kps[0].visible);
  const Projection p0 = project_point(cam, spheres[0].center);
  EXPECT_NEAR(kps[0].x, p0.x, 1e-12);
  EXPECT_NEAR(kps[0].y, p0.y, 1e-12);
  EXPECT_NEAR(p0.x, 32 + 50 * 0.2 / 3.5, 1e-12);
  EXPECT_FALSE(kps[1].visible);
  EXPECT_TRUE(kps[2].visible) << "surface contact stays visible";
  // Off to the side but unobstructed: projects outside the 64 px frame.
  EXPECT_FALSE(kps[3].visible);
}

TEST(ProjectKeypoints, BehindCameraIsInvisible) {
  Mesh wall;
  add_box(wall, Vec3(-1, 0, -1), Vec3(1, 0.1, 1), {0.8f, 0.8f, 0.8f});
  const Camera cam = front_camera(4.0);
  const std::vector<KeypointSphere> spheres{{Vec3(0, -6, 0), 0}};
  EXPECT_FALSE(project_keypoints(wall, spheres, cam, render(wall, cam))[0].visible);
}

TEST(Synthesize, OcclusionSoundAndProjectionConsistent) {
  int visible = 0, total = 0;
  for (const auto& spec : {car_spec(), chair_spec()})
    for (int i = 0; i < 40; ++i) {
      auto rng = sample_rng(11, i);
      const SynthSample s = synthesize(spec, GeneratorOptions{}, rng);
      const auto v = scene_checks::check_sample(spec, spec.mesh, s.camera.camera(), s.keypoints);
      EXPECT_EQ(v.unexplained_invisible, 0) << spec.name << " " << i;
      EXPECT_EQ(v.bad_reprojection, 0) << spec.name << " " << i;
      for (const auto& k : s.keypoints) {
        if (!k.visible) continue;
        EXPECT_GE(k.x, 0);
        EXPECT_LT(k.x, s.image.width);
      }
      visible += v.visible;
      total += v.visible + v.invisible;
    }
  // Self-occluding shapes hide some keypoints and show others.
  EXPECT_GT(visible, 0);
  EXPECT_LT(visible, total);
}

TEST(Synthesize, DefaultsKeepKeypointsInFrame) {
  for (const auto& spec : {car_spec(), chair_spec()})
    for (int i = 0; i < 200; ++i) {
      auto rng = sample_rng(12, i);
      const SynthSample s = synthesize(spec, GeneratorOptions{}, rng);
      for (const auto& k : s.keypoints) {
        ASSERT_GT(k.x, 0.0);
        ASSERT_GT(k.y, 0.0);
        ASSERT_LT(k.x, 96.0);
        ASSERT_LT(k.y, 96.0);
      }
    }
}

TEST(Synthesize, BoundingBoxIsTight) {
  for (int i = 0; i < 20; ++i) {
    auto rng = sample_rng(13, i);
    const ClassSpec spec = car_spec();
    const SynthSample s = synthesize(spec, GeneratorOptions{}, rng);
    const RenderResult r = render(spec.mesh, s.camera.camera());
    const BBox b = s.bbox;
    EXPECT_EQ(r.bbox(), b);
    // Each border row/column of the box holds foreground, so shrinking
    // by 2 px on any side drops some of it.
    auto any_fg = [&](int x0, int x1, int y0, int y1) {
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x)
          if (r.triangle_at(x, y) >= 0) return true;
      return false;
    };
    const int x = int(b.x), y = int(b.y), w = int(b.w), h = int(b.h);
    EXPECT_TRUE(any_fg(x, x + 2, y, y + h));
    EXPECT_TRUE(any_fg(x + w - 2, x + w, y, y + h));
    EXPECT_TRUE(any_fg(x, x + w, y, y + 2));
    EXPECT_TRUE(any_fg(x, x + w, y + h - 2, y + h));
    EXPECT_FALSE(any_fg(0, r.width(), 0, y));
    EXPECT_FALSE(any_fg(0, x, 0, r.height()));
  }
}

TEST(GenerateDataset, CountsAndLayout) {
  const fs::path dir = temp_dir("gen_counts");
  const auto sum = generate_dataset({car_spec(), chair_spec()}, 10, 7, dir);
  EXPECT_EQ(sum.samples, 20);
  const json m = read_json(dir / "manifest.json");
  ASSERT_EQ(m["samples"].size(), 20u);
  EXPECT_EQ(m["classes"][0]["num_keypoints"], 8);
  EXPECT_EQ(m["classes"][1]["num_keypoints"], 6);
  for (const auto& s : m["samples"]) {
    EXPECT_EQ(s["source"], "M");
    EXPECT_TRUE(fs::exists(dir / s["image"].get<std::string>()));
    const json a = read_json(dir / s["annot"].get<std::string>());
    EXPECT_FALSE(a["viewpoint"].is_null());
    EXPECT_FALSE(a["keypoints"].is_null());
    EXPECT_EQ(a["bbox"].size(), 4u);
  }
  EXPECT_GT(sum.visible_keypoints, 0);
  EXPECT_LT(sum.visible_keypoints, sum.total_keypoints);
  EXPECT_THROW(generate_dataset({car_spec()}, 0, 7, dir), Error);
}

TEST(GenerateDataset, NumbersArePlainDecimals) {
  const fs::path dir = temp_dir("gen_plain");
  generate_dataset({car_spec()}, 12, 8, dir);
  const std::regex exp_number("[0-9][eE][-+]?[0-9]");
  for (const auto& e : fs::directory_iterator(dir / "annot"))
    EXPECT_FALSE(std::regex_search(slurp(e.path()), exp_number)) << e.path();
  EXPECT_FALSE(std::regex_search(slurp(dir / "manifest.json"), exp_number));
}

TEST(GenerateDataset, ByteIdenticalAcrossRunsAndWorkerCounts) {
  const fs::path a = temp_dir("gen_a"), b = temp_dir("gen_b");
  setenv("POSEKIT_THREADS", "1", 1);
  generate_dataset({car_spec(), chair_spec()}, 4, 9, a);
  setenv("POSEKIT_THREADS", "3", 1);
  generate_dataset({car_spec(), chair_spec()}, 4, 9, b);
  unsetenv("POSEKIT_THREADS");
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
  }
}

TEST(GenerateDataset, UnwritableDirectory) {
  try {
    generate_dataset({car_spec()}, 1, 1, "/proc/posekit_no_such_dir");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::io);
    EXPECT_NE(std::string(e.what()).find("/proc/posekit_no_such_dir"), std::string::npos);
  }
}
