#pragma once

// Cubic-convolution upsampling of per-bin probabilities onto a 1-degree grid.

#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "posekit/binning.hpp"
#include "posekit/error.hpp"

namespace posekit {

class ProbVector {
 public:
  static constexpr double kSumTolerance = 1e-6;

  ProbVector() = default;

  ProbVector(BinningScheme scheme, std::vector<double> probs)
      : scheme_(std::move(scheme)), probs_(std::move(probs)) {
    if (static_cast<int>(probs_.size()) != scheme_.count()) {
      throw Error(ErrorCode::validation,
                  "probability vector has " + std::to_string(probs_.size()) +
                      " entries, scheme has " + std::to_string(scheme_.count()));
    }
    double sum = 0.0;
    for (double p : probs_) {
      if (!(p >= 0.0) || !std::isfinite(p)) {
        throw Error(ErrorCode::validation, "probabilities must be finite and >= 0");
      }
      sum += p;
    }
    if (std::abs(sum - 1.0) > kSumTolerance) {
      throw Error(ErrorCode::validation,
                  "probabilities sum to " + std::to_string(sum) + ", expected 1");
    }
  }

  static ProbVector uniform(const BinningScheme& scheme) {
    return ProbVector(scheme, std::vector<double>(scheme.count(), 1.0 / scheme.count()));
  }

  static ProbVector one_hot(const BinningScheme& scheme, int index) {
    std::vector<double> p(scheme.count(), 0.0);
    p.at(index) = 1.0;
    return ProbVector(scheme, std::move(p));
  }

  const BinningScheme& scheme() const { return scheme_; }
  std::span<const double> probs() const { return probs_; }
  double operator[](int i) const { return probs_[i]; }
  int size() const { return static_cast<int>(probs_.size()); }

 private:
  BinningScheme scheme_ = make_scheme(AngleKind::azimuth, 15);
  std::vector<double> probs_ = std::vector<double>(24, 1.0 / 24);
};

struct FineCurve {
  AngleKind kind = AngleKind::azimuth;
  int first_degree = 0;  // degree of values[0]
  std::vector<double> values;

  int degree_at(int i) const { return first_degree + i; }
  int size() const { return static_cast<int>(values.size()); }
};

// Integer-degree grid covering the full range of `kind`: 360 samples for
// circular angles, 181 for elevation.
inline int fine_first_degree(AngleKind kind) {
  switch (kind) {
    case AngleKind::azimuth: return 0;
    case AngleKind::elevation: return -90;
    case AngleKind::tilt: return -180;
  }
  return 0;
}

inline int fine_count(AngleKind kind) {
  return kind == AngleKind::elevation ? 181 : 360;
}

// Keys cubic convolution kernel.
constexpr double keys_kernel(double x, double a = -0.5) {
  const double ax = x < 0 ? -x : x;
  if (ax <= 1.0) return (a + 2.0) * ax * ax * ax - (a + 3.0) * ax * ax + 1.0;
  if (ax < 2.0) return a * ax * ax * ax - 5.0 * a * ax * ax + 8.0 * a * ax - 4.0 * a;
  return 0.0;
}

// Interpolated value at an arbitrary angle. Circular schemes index bins
// modulo the count; bounded schemes replicate the edge bins.
inline double interpolate_at(const ProbVector& pv, double angle) {
  const BinningScheme& s = pv.scheme();
  const double b = s.bin_size();
  const double x = (angle - s.first_center()) / b;
  const int base = static_cast<int>(std::floor(x));
  const int n = s.count();
  double value = 0.0;
  for (int j = base - 1; j <= base + 2; ++j) {
    const double w = keys_kernel(x - j);
    if (w == 0.0) continue;
    const int idx = s.circular() ? ((j % n) + n) % n : std::clamp(j, 0, n - 1);
    value += pv[idx] * w;
  }
  return value;
}

inline FineCurve upsample(const ProbVector& pv) {
  FineCurve curve;
  curve.kind = pv.scheme().kind();
  curve.first_degree = fine_first_degree(curve.kind);
  const int n = fine_count(curve.kind);
  curve.values.resize(n);
  const BinningScheme& s = pv.scheme();
  const int b = s.bin_size();
  const int bins = s.count();
  const int c0 = static_cast<int>(s.first_center());
  // Integer offsets keep the fractional position identical for every
  // degree with the same remainder, so circular shifts are exact.
  for (int i = 0; i < n; ++i) {
    const int d = curve.first_degree + i - c0;
    const int r = ((d % b) + b) % b;
    const int base = (d - r) / b;
    const double t = static_cast<double>(r) / b;
    double value = 0.0;
    for (int j = -1; j <= 2; ++j) {
      const double w = keys_kernel(t - j);
      if (w == 0.0) continue;
      const int k = base + j;
      const int idx = s.circular() ? ((k % bins) + bins) % bins : std::clamp(k, 0, bins - 1);
      value += pv[idx] * w;
    }
    curve.values[i] = value;
  }
  return curve;
}

// Values within this distance of the maximum count as ties.
inline constexpr double kArgmaxTieTolerance = 1e-12;

// Argmax degree of the upsampled curve; ties go to the smaller angle.
inline double predict_angle(const ProbVector& pv) {
  const FineCurve curve = upsample(pv);
  double best = curve.values.front();
  for (double v : curve.values) best = std::max(best, v);
  for (int i = 0; i < curve.size(); ++i) {
    if (curve.values[i] >= best - kArgmaxTieTolerance) return curve.degree_at(i);
  }
  return curve.first_degree;
}

// Baseline without upsampling: center of the most probable bin.
inline double predict_angle_bin_center(const ProbVector& pv) {
  int best = 0;
  for (int i = 1; i < pv.size(); ++i) {
    if (pv[i] > pv[best]) best = i;
  }
  return center_of(pv.scheme(), best);
}

}  // namespace posekit
