#pragma once

#include <span>
#include <variant>
#include <vector>

#include "ccmcf/mdl_model.hpp"

namespace ccmcf {

/// Mode-independent fiber response exp(-alpha L/2 + j beta2/2 w^2 L).
struct FiberResponse {
  double length_km = 0.0;
  double alpha_per_km = 0.0;    // power attenuation, nepers/km
  double beta2_s2_per_km = 0.0;

  [[nodiscard]] Complex at(double omega) const {
    return std::exp(Complex(-0.5 * alpha_per_km * length_km, 0.5 * beta2_s2_per_km * omega * omega * length_km));
  }
};

/// Frequency-flat amplifier; ASE with one-sided PSD `ase_psd` (W/Hz per mode) is added at its output.
struct AmplifierGain {
  double power_gain = 1.0;
  double ase_psd = 0.0;
};

using LinearElement = std::variant<FiberResponse, CouplingSection, AmplifierGain>;

/// Every linear element a link applied, in transmission order.
struct ChannelRecord {
  Eigen::Index modes = 0;
  std::vector<LinearElement> elements;

  void append(LinearElement e) { elements.push_back(std::move(e)); }
  [[nodiscard]] bool frequency_flat() const;
  /// Upper bound on cond(H(w)) valid at every frequency.
  [[nodiscard]] double condition_bound() const;
};

/// Explicit H(w) of the whole record on a frequency grid.
TransferMatrix compose(const ChannelRecord& record, std::span<const double> omega_grid);

/// Spectrum rows X (one row per bin, one column per mode) are replaced by H(w) x.
void apply_channel(const ChannelRecord& record, std::span<const double> omega, CMatrix& X);

/// Spectrum rows X are replaced by H(w)^{-1} x, without forming H.
void apply_channel_inverse(const ChannelRecord& record, std::span<const double> omega, CMatrix& X);

}  // namespace ccmcf
