#ifndef ATMDG_COMMON_HPP
#define ATMDG_COMMON_HPP

#include <cstdint>
#include <stdexcept>
#include <string>

namespace atmdg {

/// Invalid domain geometry, bad mesh file, bad mapping.
class MeshError : public std::runtime_error {
public:
  explicit MeshError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-admissible state (rho <= 0, p <= 0, non-finite values).
class StateError : public std::runtime_error {
public:
  explicit StateError(const std::string& what) : std::runtime_error(what) {}
};

/// Linear or fixed-point solver failure.
class SolverError : public std::runtime_error {
public:
  explicit SolverError(const std::string& what) : std::runtime_error(what) {}
};

/// Configuration file / case definition problems.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct Vec2 {
  double x = 0.0;
  double z = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.z + b.z}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.z - b.z}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.z}; }

} // namespace atmdg

#endif
