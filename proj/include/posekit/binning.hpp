#pragma once

#include <array>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "posekit/error.hpp"
#include "posekit/geometry.hpp"

namespace posekit {

enum class AngleKind { azimuth = 0, elevation = 1, tilt = 2 };
enum class Topology { circular, bounded };

inline constexpr std::array<AngleKind, 3> kAngleKinds{
    AngleKind::azimuth, AngleKind::elevation, AngleKind::tilt};

// Granularities trained jointly, finest first.
inline constexpr std::array<int, 3> kBinSizes{15, 30, 60};

constexpr const char* to_string(AngleKind kind) {
  switch (kind) {
    case AngleKind::azimuth: return "azimuth";
    case AngleKind::elevation: return "elevation";
    case AngleKind::tilt: return "tilt";
  }
  return "?";
}

inline AngleKind parse_angle_kind(const std::string& s) {
  if (s == "azimuth") return AngleKind::azimuth;
  if (s == "elevation") return AngleKind::elevation;
  if (s == "tilt") return AngleKind::tilt;
  throw Error(ErrorCode::validation, "unknown angle kind '" + s + "'");
}

// Angle of `kind` taken from a viewpoint.
inline double angle_of(const Viewpoint& vp, AngleKind kind) {
  switch (kind) {
    case AngleKind::azimuth: return vp.azimuth();
    case AngleKind::elevation: return vp.elevation();
    case AngleKind::tilt: return vp.tilt();
  }
  return 0.0;
}

class BinningScheme {
 public:
  AngleKind kind() const { return kind_; }
  int bin_size() const { return bin_size_; }
  int count() const { return static_cast<int>(centers_.size()); }
  const std::vector<double>& centers() const { return centers_; }
  Topology topology() const { return topology_; }
  bool circular() const { return topology_ == Topology::circular; }

  // First center; the grid is first_center() + i * bin_size().
  double first_center() const { return centers_.front(); }

  friend BinningScheme make_scheme(AngleKind kind, int bin_size);
  friend bool operator==(const BinningScheme&, const BinningScheme&) = default;

 private:
  AngleKind kind_ = AngleKind::azimuth;
  int bin_size_ = 15;
  std::vector<double> centers_;
  Topology topology_ = Topology::circular;
};

inline BinningScheme make_scheme(AngleKind kind, int bin_size) {
  if (bin_size != 15 && bin_size != 30 && bin_size != 60) {
    throw Error(ErrorCode::unsupported_bin_size,
                "unsupported bin size " + std::to_string(bin_size) +
                    " (expected 15, 30 or 60)");
  }
  BinningScheme s;
  s.kind_ = kind;
  s.bin_size_ = bin_size;
  switch (kind) {
    case AngleKind::azimuth:
      s.topology_ = Topology::circular;
      for (int i = 0; i < 360 / bin_size; ++i) s.centers_.push_back(i * bin_size);
      break;
    case AngleKind::tilt:
      s.topology_ = Topology::circular;
      for (int i = 0; i < 360 / bin_size; ++i)
        s.centers_.push_back(-180.0 + i * bin_size);
      break;
    case AngleKind::elevation:
      s.topology_ = Topology::bounded;
      for (int i = 0; i <= 180 / bin_size; ++i)
        s.centers_.push_back(-90.0 + i * bin_size);
      break;
  }
  return s;
}

// Angular extent covered by bin `index`. Bounded outer bins are half width.
inline double bin_width(const BinningScheme& s, int index) {
  if (!s.circular() && (index == 0 || index == s.count() - 1)) {
    return s.bin_size() / 2.0;
  }
  return s.bin_size();
}

inline double center_of(const BinningScheme& s, int index) {
  if (index < 0 || index >= s.count()) {
    throw Error(ErrorCode::out_of_range,
                "bin index " + std::to_string(index) + " outside [0, " +
                    std::to_string(s.count()) + ")");
  }
  return s.centers()[index];
}

// Nearest center; circular schemes measure distance around the circle.
// An angle exactly halfway between two centers goes to the lower index.
inline int bin_of(const BinningScheme& s, double angle) {
  if (!std::isfinite(angle)) {
    throw Error(ErrorCode::out_of_range, "angle must be finite");
  }
  const double b = s.bin_size();
  if (s.circular()) {
    const double a = s.kind() == AngleKind::tilt ? wrap_180(angle) : wrap_360(angle);
    const double x = (a - s.first_center()) / b;
    const int idx = static_cast<int>(std::ceil(x - 0.5));
    return idx % s.count();
  }
  if (angle < -90.0 || angle > 90.0) {
    std::ostringstream os;
    os << to_string(s.kind()) << " " << angle << " outside [-90, 90]";
    throw Error(ErrorCode::out_of_range, os.str());
  }
  const double x = (angle - s.first_center()) / b;
  const int idx = static_cast<int>(std::ceil(x - 0.5));
  return std::clamp(idx, 0, s.count() - 1);
}

}  // namespace posekit
