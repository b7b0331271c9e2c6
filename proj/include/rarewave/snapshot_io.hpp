#pragma once

// RWL1 snapshot files: magic "RWL1", little-endian header
// (n1:u32, n2:u32, x1_min, x1_max, t, gamma, k0 : f64), then the planes rho, rho v1, rho v2.
// Derived planes (foliation, second frame) may follow in a trailer:
// magic "XPL1", count:u32, then per plane a u32 name length, the name bytes, and the plane.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "rarewave/euler2d.hpp"

namespace rarewave {

struct NamedPlane {
  std::string name;
  Plane data;
};

struct Snapshot {
  FlowField field;
  std::vector<NamedPlane> extra;
};

namespace detail {

template <class T>
void put_le(std::ostream& os, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(std::istream& is) {
  unsigned char b[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(T))) throw std::runtime_error("truncated RWL1 file");
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

inline void put_plane(std::ostream& os, const Plane& p) {
  if constexpr (std::endian::native == std::endian::little)
    os.write(reinterpret_cast<const char*>(p.data()), static_cast<std::streamsize>(p.size() * 8));
  else
    for (double x : p) put_le(os, x);
}

inline Plane get_plane(std::istream& is, std::size_t n) {
  Plane p(n);
  if constexpr (std::endian::native == std::endian::little) {
    if (!is.read(reinterpret_cast<char*>(p.data()), static_cast<std::streamsize>(n * 8)))
      throw std::runtime_error("truncated RWL1 plane");
  } else {
    for (auto& x : p) x = get_le<double>(is);
  }
  return p;
}

}  // namespace detail

inline void write_snapshot(const std::string& path, const FlowField& f,
                           const std::vector<NamedPlane>& extra = {}) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path);
  os.write("RWL1", 4);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(f.grid.n1));
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(f.grid.n2));
  for (double v : {f.grid.x1_min, f.grid.x1_max, f.time, f.gas.gamma, f.gas.k0}) detail::put_le(os, v);
  detail::put_plane(os, f.rho);
  detail::put_plane(os, f.m1);
  detail::put_plane(os, f.m2);
  if (!extra.empty()) {
    os.write("XPL1", 4);
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(extra.size()));
    for (const auto& e : extra) {
      if (e.data.size() != f.grid.size()) throw PreconditionError("extra plane size mismatch: " + e.name);
      detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
      os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      detail::put_plane(os, e.data);
    }
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline Snapshot read_snapshot(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "RWL1", 4) != 0)
    throw std::runtime_error("not an RWL1 file: " + path);
  const auto n1 = detail::get_le<std::uint32_t>(is);
  const auto n2 = detail::get_le<std::uint32_t>(is);
  const double lo = detail::get_le<double>(is), hi = detail::get_le<double>(is);
  const double t = detail::get_le<double>(is);
  const double gamma = detail::get_le<double>(is), k0 = detail::get_le<double>(is);
  Snapshot s;
  const Grid g(static_cast<int>(n1), static_cast<int>(n2), lo, hi);
  s.field = FlowField(PolytropicGas(gamma, k0), g, t);
  s.field.rho = detail::get_plane(is, g.size());
  s.field.m1 = detail::get_plane(is, g.size());
  s.field.m2 = detail::get_plane(is, g.size());
  if (is.read(magic, 4)) {
    if (std::memcmp(magic, "XPL1", 4) != 0) throw std::runtime_error("bad trailer in " + path);
    const auto count = detail::get_le<std::uint32_t>(is);
    for (std::uint32_t q = 0; q < count; ++q) {
      const auto len = detail::get_le<std::uint32_t>(is);
      std::string nm(len, '\0');
      if (!is.read(nm.data(), len)) throw std::runtime_error("truncated plane name");
      s.extra.push_back({nm, detail::get_plane(is, g.size())});
    }
  }
  return s;
}

}  // namespace rarewave
