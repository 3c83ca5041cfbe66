#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "posekit/eval.hpp"

using namespace posekit;

namespace {

// Naive references: a counting loop and a sort-based median.
double naive_acc(const std::vector<double>& e) {
  int ok = 0;
  for (double v : e)
    if (v < kAccThreshold) ok = ok + 1;
  return double(ok) / double(e.size());
}

double naive_median_deg(std::vector<double> e) {
  for (auto& v : e) v = v * 180.0 / kPi;
  std::sort(e.begin(), e.end());
  if (e.size() % 2 == 1) return e[e.size() / 2];
  return (e[e.size() / 2 - 1] + e[e.size() / 2]) / 2;
}

Viewpoint random_viewpoint(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> az(0, 360), el(-90, 90), ti(-180, 180);
  return Viewpoint(az(rng), el(rng), ti(rng));
}

}  // namespace

TEST(Pck, ExactPredictionsScoreOne) {
  const std::vector<Keypoint2D> gt{{1, 2, true}, {5, 5, true}, {9, 1, false}};
  EXPECT_EQ(*pck(gt, gt, {0, 0, 10, 10}), 1.0);
}

TEST(Pck, StrictThreshold) {
  const BBox box{0, 0, 100, 50};
  const std::vector<Keypoint2D> gt{{20, 20, true}};
  EXPECT_EQ(*pck(std::vector<Keypoint2D>{{29.9, 20, true}}, gt, box), 1.0);
  EXPECT_EQ(*pck(std::vector<Keypoint2D>{{30.0, 20, true}}, gt, box), 0.0);
  EXPECT_EQ(*pck(std::vector<Keypoint2D>{{26, 28, true}}, gt, box), 0.0);  // 6-8-10 triangle
}

TEST(Pck, OnlyVisibleScoredAndUndefinedWhenNone) {
  const std::vector<Keypoint2D> gt{{0, 0, false}, {10, 10, true}};
  const std::vector<Keypoint2D> pred{{90, 90, true}, {10, 10, true}};
  EXPECT_EQ(*pck(pred, gt, {0, 0, 20, 20}), 1.0);
  const std::vector<Keypoint2D> hidden{{0, 0, false}, {1, 1, false}};
  EXPECT_FALSE(pck(pred, hidden, {0, 0, 20, 20}).has_value());
  EXPECT_THROW(pck(std::vector<Keypoint2D>{{0, 0, true}}, hidden, {0, 0, 1, 1}), Error);
}

TEST(Pck, MonotoneInAlpha) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 8);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Keypoint2D> gt, pred;
    for (int k = 0; k < 12; ++k) {
      gt.push_back({50 + n(rng), 50 + n(rng), k % 5 != 0});
      pred.push_back({gt.back().x + n(rng), gt.back().y + n(rng), true});
    }
    double prev = -1;
    for (double a = 0.01; a < 0.6; a += 0.01) {
      const double v = *pck(pred, gt, {0, 0, 100, 60}, a);
      EXPECT_GE(v, prev);
      prev = v;
    }
  }
}

TEST(Viewpoint, AccExamples) {
  const std::vector<Viewpoint> gt{Viewpoint(0, 0, 0), Viewpoint(0, 0, 0)};
  EXPECT_EQ(acc_pi6(gt, gt), 1.0);
  EXPECT_EQ(acc_pi6(std::vector<Viewpoint>{Viewpoint(20, 0, 0), Viewpoint(40, 0, 0)}, gt), 0.5);
  EXPECT_EQ(acc_pi6(std::vector<Viewpoint>{Viewpoint(0, 0, 20), Viewpoint(0, -40, 0)}, gt), 0.5);
  for (const Viewpoint& v : {Viewpoint(30, 0, 0), Viewpoint(0, 30, 0), Viewpoint(0, 0, -30), Viewpoint(330, 0, 0)})
    EXPECT_EQ(acc_pi6(std::vector<Viewpoint>{v}, std::vector<Viewpoint>{Viewpoint(0, 0, 0)}), 0.0);
  EXPECT_EQ(acc_pi6(std::vector<Viewpoint>{Viewpoint(29.999, 0, 0)}, std::vector<Viewpoint>{Viewpoint(0, 0, 0)}), 1.0);
  EXPECT_THROW(acc_pi6(gt, std::vector<Viewpoint>{Viewpoint()}), Error);
  EXPECT_THROW(acc_pi6(std::vector<Viewpoint>{}, std::vector<Viewpoint>{}), Error);
}

TEST(Viewpoint, MedianConventions) {
  auto rad = [](std::vector<double> d) {
    for (auto& v : d) v = deg_to_rad(v);
    return d;
  };
  EXPECT_NEAR(med_error_of(rad({4, 6, 10})), 6, 1e-12);
  EXPECT_NEAR(med_error_of(rad({20, 4, 10, 6})), 8, 1e-12);
  EXPECT_EQ(med_error_of(rad({0, 0, 0})), 0);
  EXPECT_THROW(med_error_of(std::vector<double>{}), Error);
  const std::vector<Viewpoint> gt{Viewpoint(10, 10, 10)};
  EXPECT_NEAR(med_error(gt, gt), 0, 1e-12);
}

TEST(Viewpoint, MatchesOracleAndNaiveReference) {
  std::mt19937_64 rng(77);
  std::vector<double> lib, ref;
  for (int i = 0; i < 1000; ++i) {
    const Viewpoint a = random_viewpoint(rng), b = random_viewpoint(rng);
    lib.push_back(viewpoint_error(a, b));
    ref.push_back(testing_oracles::log_geodesic(rotation_from_viewpoint(b).matrix(), rotation_from_viewpoint(a).matrix()));
    ASSERT_NEAR(lib.back(), ref.back(), 1e-9);
  }
  EXPECT_EQ(acc_pi6_of(lib), naive_acc(lib));
  EXPECT_EQ(acc_pi6_of(lib), naive_acc(ref));
  EXPECT_EQ(med_error_of(lib), naive_median_deg(lib));
  lib.pop_back();
  EXPECT_EQ(med_error_of(lib), naive_median_deg(lib));
}

TEST(Viewpoint, MedianBelow30ImpliesAccAboveHalf) {
  std::mt19937_64 rng(4);
  std::exponential_distribution<double> spread(1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const double s = 5 + 40 * spread(rng);
    std::normal_distribution<double> n(0, s);
    std::vector<Viewpoint> gt, pred;
    for (int i = 0; i < 25; ++i) {
      gt.push_back(random_viewpoint(rng));
      pred.push_back(Viewpoint(gt.back().azimuth() + n(rng), std::clamp(gt.back().elevation() + n(rng), -90.0, 90.0),
                               gt.back().tilt() + n(rng)));
    }
    if (med_error(pred, gt) < 30) {
      EXPECT_GT(acc_pi6(pred, gt), 0.5);
    }
  }
}

TEST(Viewpoint, ReorderingInvariant) {
  std::mt19937_64 rng(9);
  std::vector<Viewpoint> gt, pred;
  for (int i = 0; i < 41; ++i) {
    gt.push_back(random_viewpoint(rng));
    pred.push_back(random_viewpoint(rng));
  }
  const double acc = acc_pi6(pred, gt), med = med_error(pred, gt);
  std::vector<int> order(41);
  for (int i = 0; i < 41; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Viewpoint> g2, p2;
  for (int i : order) {
    g2.push_back(gt[i]);
    p2.push_back(pred[i]);
  }
  EXPECT_EQ(acc_pi6(p2, g2), acc);
  EXPECT_EQ(med_error(p2, g2), med);
}

TEST(Report, UnweightedAverageAndExclusion) {
  ClassResults a{"car", 10, {8, 10}, {0.1, 0.2}}, b{"chair", 30, {18, 30}, {0.9, 0.05, 0.1}};
  const MetricsReport r = build_report({a, b});
  EXPECT_NEAR(*r.average.pck, 0.7, 1e-12);
  EXPECT_EQ(r.average.n_samples, 40);
  EXPECT_NEAR(*r.average.acc_pi6, (1.0 + 2.0 / 3) / 2, 1e-12);
  ClassResults c{"sofa", 5, {0, 0}, {0.1}};
  const MetricsReport r2 = build_report({a, c});
  EXPECT_FALSE(r2.classes[1].pck);
  EXPECT_NEAR(*r2.average.pck, 0.8, 1e-12);
  EXPECT_EQ(*r2.classes[1].acc_pi6, 1.0);
  EXPECT_THROW(build_report({ClassResults{"x", 1, {}, {}}}), Error);
}

TEST(Report, CsvRoundTrip) {
  ClassResults a{"car", 10, {7, 9}, {0.1, 0.7, 0.3}}, b{"chair", 3, {0, 0}, {0.01}};
  const MetricsReport r = build_report({a, b});
  const auto path = std::filesystem::temp_directory_path() / "posekit_report.csv";
  write_report_csv(path, r);
  const MetricsReport back = read_report_csv(path);
  ASSERT_EQ(back.classes.size(), 2u);
  EXPECT_EQ(back.classes[0].name, "car");
  EXPECT_EQ(*back.classes[0].pck, plain(*r.classes[0].pck));
  EXPECT_EQ(*back.classes[0].med_error_deg, plain(*r.classes[0].med_error_deg));
  EXPECT_FALSE(back.classes[1].pck);
  EXPECT_EQ(back.average.name, "average");
  EXPECT_EQ(*back.average.acc_pi6, plain(*r.average.acc_pi6));
  EXPECT_EQ(back.average.n_samples, 13);
  std::filesystem::remove(path);
}
