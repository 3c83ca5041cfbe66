#pragma once

// PCK[alpha], Acc(pi/6), MedError and per-class report tables.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "posekit/error.hpp"
#include "posekit/geometry.hpp"
#include "posekit/heatmap.hpp"
#include "posekit/json_io.hpp"
#include "posekit/synthgen.hpp"

namespace posekit {

struct PckCount {
  long correct = 0;
  long scored = 0;

  // Undefined when nothing was scorable.
  std::optional<double> value() const {
    if (scored == 0) return std::nullopt;
    return static_cast<double>(correct) / static_cast<double>(scored);
  }
  PckCount& operator+=(const PckCount& o) {
    correct += o.correct;
    scored += o.scored;
    return *this;
  }
};

// Only gt-visible keypoints are scored; correct iff the error is strictly
// below alpha * max(h, w).
inline PckCount pck_count(std::span<const Keypoint2D> pred, std::span<const Keypoint2D> gt, const BBox& box,
                          double alpha = 0.1) {
  if (pred.size() != gt.size()) throw Error(ErrorCode::shape_mismatch, "pck: prediction and ground-truth lengths differ");
  if (!(alpha > 0)) throw Error(ErrorCode::invalid_argument, "pck: alpha must be positive");
  const double thresh = alpha * std::max(box.w, box.h);
  PckCount c;
  for (size_t k = 0; k < gt.size(); ++k) {
    if (!gt[k].visible) continue;
    ++c.scored;
    if (std::hypot(pred[k].x - gt[k].x, pred[k].y - gt[k].y) < thresh) ++c.correct;
  }
  return c;
}

inline std::optional<double> pck(std::span<const Keypoint2D> pred, std::span<const Keypoint2D> gt, const BBox& box,
                                 double alpha = 0.1) {
  return pck_count(pred, gt, box, alpha).value();
}

inline double viewpoint_error(const Viewpoint& pred, const Viewpoint& gt) {
  return geodesic_distance(rotation_from_viewpoint(gt), rotation_from_viewpoint(pred));
}

// An exact 30 degree rotation evaluates to within a few ulps of pi/6 on
// either side; the band keeps boundary cases on the incorrect side.
inline constexpr double kAccThreshold = kPi / 6 - 1e-12;

inline bool acc_correct(double error_rad) { return error_rad < kAccThreshold; }

inline double acc_pi6_of(std::span<const double> errors_rad) {
  if (errors_rad.empty()) throw Error(ErrorCode::invalid_argument, "acc_pi6: no predictions");
  long ok = 0;
  for (double e : errors_rad) ok += acc_correct(e);
  return static_cast<double>(ok) / static_cast<double>(errors_rad.size());
}

// Median in degrees; the mean of the middle pair for even counts.
inline double med_error_of(std::span<const double> errors_rad) {
  if (errors_rad.empty()) throw Error(ErrorCode::invalid_argument, "med_error: no predictions");
  std::vector<double> d;
  for (double e : errors_rad) d.push_back(rad_to_deg(e));
  std::sort(d.begin(), d.end());
  const size_t n = d.size();
  return n % 2 ? d[n / 2] : (d[n / 2 - 1] + d[n / 2]) / 2;
}

inline std::vector<double> viewpoint_errors(std::span<const Viewpoint> pred, std::span<const Viewpoint> gt) {
  if (pred.size() != gt.size()) throw Error(ErrorCode::shape_mismatch, "viewpoint lists differ in length");
  std::vector<double> e;
  for (size_t i = 0; i < gt.size(); ++i) e.push_back(viewpoint_error(pred[i], gt[i]));
  return e;
}

inline double acc_pi6(std::span<const Viewpoint> pred, std::span<const Viewpoint> gt) {
  const auto e = viewpoint_errors(pred, gt);
  return acc_pi6_of(e);
}

inline double med_error(std::span<const Viewpoint> pred, std::span<const Viewpoint> gt) {
  const auto e = viewpoint_errors(pred, gt);
  return med_error_of(e);
}

// Per-sample outcomes accumulated for one class.
struct ClassResults {
  std::string name;
  long n_samples = 0;
  PckCount keypoints;
  std::vector<double> viewpoint_errors;  // radians

  void add_keypoints(std::span<const Keypoint2D> pred, std::span<const Keypoint2D> gt, const BBox& box,
                     double alpha = 0.1) {
    keypoints += pck_count(pred, gt, box, alpha);
  }
  void add_viewpoint(const Viewpoint& pred, const Viewpoint& gt) { viewpoint_errors.push_back(viewpoint_error(pred, gt)); }
};

struct ClassMetrics {
  std::string name;
  std::optional<double> pck;
  std::optional<double> acc_pi6;
  std::optional<double> med_error_deg;
  long n_samples = 0;
};

struct MetricsReport {
  std::vector<ClassMetrics> classes;
  ClassMetrics average;
};

namespace detail {

inline std::optional<double> mean_defined(const std::vector<std::optional<double>>& v) {
  double s = 0;
  int n = 0;
  for (const auto& x : v)
    if (x) {
      s += *x;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return s / n;
}

}  // namespace detail

// Averages are unweighted over classes with a defined value.
inline MetricsReport build_report(const std::vector<ClassResults>& results) {
  MetricsReport r;
  std::vector<std::optional<double>> p, a, m;
  for (const auto& c : results) {
    ClassMetrics cm{c.name, c.keypoints.value(), std::nullopt, std::nullopt, c.n_samples};
    if (!c.viewpoint_errors.empty()) {
      cm.acc_pi6 = acc_pi6_of(c.viewpoint_errors);
      cm.med_error_deg = med_error_of(c.viewpoint_errors);
    }
    p.push_back(cm.pck);
    a.push_back(cm.acc_pi6);
    m.push_back(cm.med_error_deg);
    r.average.n_samples += c.n_samples;
    r.classes.push_back(std::move(cm));
  }
  r.average.name = "average";
  r.average.pck = detail::mean_defined(p);
  r.average.acc_pi6 = detail::mean_defined(a);
  r.average.med_error_deg = detail::mean_defined(m);
  if (!r.average.pck && !r.average.acc_pi6)
    throw Error(ErrorCode::validation, "report has no class with a defined metric");
  return r;
}

inline constexpr const char* kCsvHeader = "class,pck,acc_pi6,med_error_deg,n_samples";
inline constexpr const char* kUndefined = "NA";

inline std::string report_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << kCsvHeader << "\n";
  auto cell = [&](const std::optional<double>& v) {
    if (v) {
      os << std::fixed << std::setprecision(4) << plain(*v);
    } else {
      os << kUndefined;
    }
  };
  auto row = [&](const ClassMetrics& c) {
    os << c.name << ",";
    cell(c.pck);
    os << ",";
    cell(c.acc_pi6);
    os << ",";
    cell(c.med_error_deg);
    os << "," << c.n_samples << "\n";
  };
  for (const auto& c : r.classes) row(c);
  row(r.average);
  return os.str();
}

inline void write_report_csv(const std::filesystem::path& path, const MetricsReport& r) {
  write_text(path, report_csv(r));
}

// The last row is the average.
inline MetricsReport read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader)
    throw Error(ErrorCode::parse, path.string() + ": unexpected CSV header");
  std::vector<ClassMetrics> rows;
  auto num = [&](const std::string& s) -> std::optional<double> {
    if (s == kUndefined) return std::nullopt;
    try {
      size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw Error(ErrorCode::parse, path.string() + ": bad number '" + s + "'");
    }
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string x;
    while (std::getline(ss, x, ',')) f.push_back(x);
    if (f.size() != 5) throw Error(ErrorCode::parse, path.string() + ": expected 5 columns in '" + line + "'");
    const auto n = num(f[4]);
    if (!n) throw Error(ErrorCode::parse, path.string() + ": n_samples missing");
    rows.push_back({f[0], num(f[1]), num(f[2]), num(f[3]), static_cast<long>(*n)});
  }
  if (rows.empty()) throw Error(ErrorCode::parse, path.string() + ": no rows");
  MetricsReport r;
  r.average = rows.back();
  rows.pop_back();
  r.classes = std::move(rows);
  return r;
}

}  // namespace posekit
