#pragma once

// Structured grid on x1 in [x1_min, x1_max] times the periodic circle x2 in [0, 2 pi).
// Planes are stored row-major with x1 fastest: index = j * n1 + i.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "rarewave/errors.hpp"

namespace rarewave {

using Plane = std::vector<double>;

struct Grid {
  int n1 = 0, n2 = 0;
  double x1_min = 0.0, x1_max = 1.0;
  double dx1 = 0.0, dx2 = 0.0;

  Grid() = default;
  Grid(int n1_, int n2_, double lo, double hi) : n1(n1_), n2(n2_), x1_min(lo), x1_max(hi) {
    if (n1 < 8 || n2 < 8) throw DomainError("grid needs n1, n2 >= 8");
    if (!(hi > lo)) throw DomainError("grid needs x1_max > x1_min");
    dx1 = (hi - lo) / n1;
    dx2 = 2.0 * std::numbers::pi / n2;
  }

  std::size_t size() const { return static_cast<std::size_t>(n1) * n2; }
  std::size_t at(int i, int j) const { return static_cast<std::size_t>(j) * n1 + i; }
  double x1(int i) const { return x1_min + (i + 0.5) * dx1; }
  double x2(int j) const { return (j + 0.5) * dx2; }
  int wrap2(int j) const { return (j % n2 + n2) % n2; }
  double cell_area() const { return dx1 * dx2; }

  bool operator==(const Grid& o) const {
    return n1 == o.n1 && n2 == o.n2 && x1_min == o.x1_min && x1_max == o.x1_max;
  }
};

inline void require_same_grid(const Grid& a, const Grid& b) {
  if (!(a == b)) throw PreconditionError("mismatched grids");
}

// Neumaier-compensated sum in fixed order; reproducible for any thread count.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = s_ + x;
    if (std::abs(s_) >= std::abs(x)) c_ += (s_ - t) + x;
    else c_ += (x - t) + s_;
    s_ = t;
  }
  double value() const { return s_ + c_; }

 private:
  double s_ = 0.0, c_ = 0.0;
};

// Centered differences. x1 edges fall back to one-sided second order.
inline double d1(const Plane& f, const Grid& g, int i, int j) {
  const std::size_t k = g.at(i, j);
  if (i == 0) return (-3.0 * f[k] + 4.0 * f[k + 1] - f[k + 2]) / (2.0 * g.dx1);
  if (i == g.n1 - 1) return (3.0 * f[k] - 4.0 * f[k - 1] + f[k - 2]) / (2.0 * g.dx1);
  return (f[k + 1] - f[k - 1]) / (2.0 * g.dx1);
}

inline double d2(const Plane& f, const Grid& g, int i, int j) {
  return (f[g.at(i, g.wrap2(j + 1))] - f[g.at(i, g.wrap2(j - 1))]) / (2.0 * g.dx2);
}

inline Plane diff1(const Plane& f, const Grid& g) {
  Plane out(g.size());
#pragma omp parallel for schedule(static)
  for (int j = 0; j < g.n2; ++j)
    for (int i = 0; i < g.n1; ++i) out[g.at(i, j)] = d1(f, g, i, j);
  return out;
}

inline Plane diff2(const Plane& f, const Grid& g) {
  Plane out(g.size());
#pragma omp parallel for schedule(static)
  for (int j = 0; j < g.n2; ++j)
    for (int i = 0; i < g.n1; ++i) out[g.at(i, j)] = d2(f, g, i, j);
  return out;
}

template <class F>
Plane map_plane(const Grid& g, F&& f) {
  Plane out(g.size());
#pragma omp parallel for schedule(static)
  for (int j = 0; j < g.n2; ++j)
    for (int i = 0; i < g.n1; ++i) out[g.at(i, j)] = f(g.at(i, j));
  return out;
}

inline double max_abs(const Plane& f) {
  double m = 0.0;
  for (double x : f) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace rarewave
