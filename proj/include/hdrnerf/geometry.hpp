#pragma once

#include <algorithm>
#include <array>
#include <cmath>

namespace hdrnerf {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  constexpr double operator[](int i) const { return i == 0 ? x : i == 1 ? y : z; }
  constexpr double& operator[](int i) { return i == 0 ? x : i == 1 ? y : z; }

  friend constexpr Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend constexpr Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend constexpr Vec3 operator-(Vec3 a) { return {-a.x, -a.y, -a.z}; }
  friend constexpr Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
  friend constexpr Vec3 operator*(Vec3 a, double s) { return s * a; }
  friend constexpr Vec3 operator/(Vec3 a, double s) { return {a.x / s, a.y / s, a.z / s}; }
  friend constexpr bool operator==(Vec3 a, Vec3 b) = default;
};

constexpr double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(Vec3 a, Vec3 b) { return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x}; }
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalize(Vec3 a) { return a / norm(a); }
inline Vec3 abs(Vec3 a) { return {std::abs(a.x), std::abs(a.y), std::abs(a.z)}; }

// Row-major 3x3.
struct Mat3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  constexpr double operator()(int r, int c) const { return m[r * 3 + c]; }
  constexpr double& operator()(int r, int c) { return m[r * 3 + c]; }

  constexpr Vec3 operator*(Vec3 v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }

  constexpr Vec3 column(int c) const { return {m[c], m[3 + c], m[6 + c]}; }
  friend constexpr bool operator==(const Mat3&, const Mat3&) = default;
};

/// Largest deviation of R^T R from the identity.
inline double orthonormality_error(const Mat3& r) {
  double worst = 0.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const double d = dot(r.column(i), r.column(j)) - (i == j ? 1.0 : 0.0);
      worst = std::max(worst, std::abs(d));
    }
  }
  return worst;
}

struct Aabb {
  Vec3 min{-1, -1, -1};
  Vec3 max{1, 1, 1};

  constexpr Vec3 center() const { return 0.5 * (min + max); }
  constexpr Vec3 half_extent() const { return 0.5 * (max - min); }

  // Maps the box onto [-1, 1]^3.
  constexpr Vec3 normalize(Vec3 p) const {
    const Vec3 c = center(), h = half_extent();
    return {(p.x - c.x) / h.x, (p.y - c.y) / h.y, (p.z - c.z) / h.z};
  }

  constexpr bool contains(Vec3 p) const {
    return p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y && p.z >= min.z && p.z <= max.z;
  }
  friend constexpr bool operator==(const Aabb&, const Aabb&) = default;
};

}  // namespace hdrnerf
