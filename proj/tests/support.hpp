#pragma once

// Conversions between library states on the four-atom space and the
// oracle's amplitude maps.

#include <vector>

#include "oracle/oracle.hpp"
#include "qlink/linalg.hpp"

namespace support {

inline oracle::Amp to_amp(const qlink::StateVector& psi) {
  oracle::Amp out;
  const auto& s = *psi.space();
  for (std::size_t i = 0; i < psi.dim(); ++i) {
    const qlink::cplx v = psi.amplitudes()[static_cast<Eigen::Index>(i)];
    if (v == qlink::cplx{}) continue;
    out[{static_cast<int>(s.digit(i, 0)), static_cast<int>(s.digit(i, 1)), static_cast<int>(s.digit(i, 2)),
         static_cast<int>(s.digit(i, 3))}] = v;
  }
  return out;
}

inline qlink::Vector to_vector(const oracle::Amp& a, const qlink::HilbertSpace& s) {
  qlink::Vector v = qlink::Vector::Zero(static_cast<Eigen::Index>(s.total_dim()));
  for (const auto& [k, x] : a) {
    const std::vector<std::size_t> d = {std::size_t(k[0]), std::size_t(k[1]), std::size_t(k[2]), std::size_t(k[3])};
    v[static_cast<Eigen::Index>(s.index(d))] = x;
  }
  return v;
}

/// |psi - ref| with both taken as given (no normalization, no phase).
inline double distance(const qlink::StateVector& psi, const oracle::Amp& ref) {
  return (psi.amplitudes() - to_vector(ref, *psi.space())).norm();
}

/// 1 - |<a|b>|^2 / (|a|^2 |b|^2).
inline double infidelity(const qlink::StateVector& psi, const oracle::Amp& ref) {
  const qlink::Vector r = to_vector(ref, *psi.space());
  const double n = psi.amplitudes().squaredNorm() * r.squaredNorm();
  return 1.0 - std::norm(r.dot(psi.amplitudes())) / n;
}

}  // namespace support
