#pragma once

#include "ccmcf/types.hpp"

namespace ccmcf {

/// 2N complex baseband envelopes (sqrt(W)) sampled on a common time grid.
/// Column i is mode i; modes are ordered core-major: mode 2c + p is polarization p of core c.
struct MultimodeField {
  CMatrix samples;                    // n_t x 2N
  double dt = 0.0;                    // s
  double f0 = kReferenceFrequency;    // Hz

  MultimodeField() = default;
  MultimodeField(Eigen::Index n_t, Eigen::Index modes, double dt_, double f0_ = kReferenceFrequency);

  [[nodiscard]] Eigen::Index size() const { return samples.rows(); }
  [[nodiscard]] Eigen::Index modes() const { return samples.cols(); }

  /// Time-averaged power summed over all modes, W.
  [[nodiscard]] double total_power() const;
  /// Time-averaged power of each mode, W.
  [[nodiscard]] RVector mode_powers() const;
  /// Energy summed over modes, J.
  [[nodiscard]] double energy() const { return total_power() * dt * static_cast<double>(size()); }
  [[nodiscard]] double sample_rate() const { return 1.0 / dt; }

  /// Throws DimensionError unless n_t is a power of two, there are 2N >= 2 modes, and dt > 0.
  void validate() const;
};

}  // namespace ccmcf
