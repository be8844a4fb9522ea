#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace hedra {

// Vectors are stored single-width; all distance math accumulates in double so
// that merge and step-split paths produce bitwise-identical results.
using Embedding = std::vector<float>;

enum class Metric : std::uint8_t { L2 = 0, Cosine = 1 };

inline double squared_l2(const Embedding& a, const Embedding& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("squared_l2: dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc;
}

inline double squared_l2(const float* a, const float* b, std::size_t dim) {
  double acc = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc;
}

inline Embedding normalized(Embedding v) {
  double norm = 0.0;
  for (float x : v) norm += static_cast<double>(x) * static_cast<double>(x);
  norm = std::sqrt(norm);
  if (norm == 0.0) return v;
  for (float& x : v) x = static_cast<float>(x / norm);
  return v;
}

inline void check_finite(const Embedding& v, const char* what) {
  for (float x : v) {
    if (!std::isfinite(x)) throw std::invalid_argument(std::string(what) + ": non-finite value");
  }
}

// Distance used for semantic comparisons (drift, cache admission thresholds).
// Cosine corpora are pre-normalized at ingest, so squared L2 serves both metrics.
inline double embedding_distance(const Embedding& a, const Embedding& b) {
  return squared_l2(a, b);
}

}  // namespace hedra
