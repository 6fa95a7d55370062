#pragma once

#include <vector>

#include "ccmcf/types.hpp"

namespace ccmcf::fft {

// Column-wise transforms of an (n_t x modes) column-major matrix, backed by FFTW.
// Forward uses the e^{-j w t} kernel and is unnormalized; inverse applies 1/n_t.
// Plans are created once per shape with FFTW_ESTIMATE so results do not depend on planner timing.

void forward(CMatrix& a);
void inverse(CMatrix& a);
void forward(CVector& a);
void inverse(CVector& a);

/// Angular frequency of every DFT bin in FFTW order, rad/s.
std::vector<double> omega_grid(Eigen::Index n, double dt);

/// Frequency of bin `k` in FFTW order, Hz.
inline double bin_frequency(Eigen::Index k, Eigen::Index n, double dt) {
  const Eigen::Index signed_k = (k < (n + 1) / 2) ? k : k - n;
  return static_cast<double>(signed_k) / (static_cast<double>(n) * dt);
}

/// Bin index holding frequency offset `m` bins (m may be negative).
inline Eigen::Index bin_index(Eigen::Index m, Eigen::Index n) { return ((m % n) + n) % n; }

inline bool is_power_of_two(Eigen::Index n) { return n > 0 && (n & (n - 1)) == 0; }

}  // namespace ccmcf::fft
