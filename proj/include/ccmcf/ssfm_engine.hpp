#pragma once

#include <optional>
#include <span>
#include <vector>

#include "ccmcf/channel_record.hpp"
#include "ccmcf/field.hpp"
#include "ccmcf/mdl_model.hpp"
#include "ccmcf/random.hpp"

namespace ccmcf {

struct FiberConfig {
  double attenuation_db_per_km = 0.2;
  double dispersion_ps_per_nm_km = 17.0;
  double gamma_per_w_km = 0.3167;  // Manakov-averaged, already divided by the core count
  double smd_ps_per_sqrt_km = 0.0;
  double waveplate_length_km = 0.1;
  double span_length_km = 100.0;

  /// Power attenuation in nepers/km.
  [[nodiscard]] double alpha_per_km() const { return attenuation_db_per_km / kNepersToDb; }
  /// beta2 = -D lambda^2 / (2 pi c) at the wavelength of carrier f0, s^2/km.
  [[nodiscard]] double beta2_s2_per_km(double f0 = kReferenceFrequency) const;
  [[nodiscard]] std::size_t waveplates_per_span() const;
  [[nodiscard]] FiberResponse response() const { return {span_length_km, alpha_per_km(), beta2_s2_per_km()}; }

  void validate() const;
  friend bool operator==(const FiberConfig&, const FiberConfig&) = default;
};

struct AmplifierConfig {
  double gain_db = 20.0;
  double noise_figure_db = 6.0;
  bool ase_enabled = true;

  /// One-sided ASE PSD per mode, W/Hz: n_sp h nu (G - 1) with n_sp = F G / (2 (G - 1)); zero when G = 1.
  [[nodiscard]] double ase_psd(double f0 = kReferenceFrequency) const;

  void validate() const;
  friend bool operator==(const AmplifierConfig&, const AmplifierConfig&) = default;
};

struct StepController {
  double initial_step_km = 1.0;
  double local_error_target = 1e-4;
  double min_step_km = 1e-6;

  void validate() const;
  friend bool operator==(const StepController&, const StepController&) = default;
};

/// Counters reported by the adaptive propagator.
struct PropagationStats {
  std::size_t accepted_steps = 0;
  std::size_t rejected_steps = 0;
  double max_local_error = 0.0;
};

/// Channel randomness for one span: fiber waveplates (empty when the fiber has no SMD) and the
/// optional lumped MDL element at span end.
struct SpanRealization {
  FiberConfig fiber;
  std::vector<CouplingSection> waveplates;
  std::optional<CouplingSection> mdl_element;
  AmplifierConfig amplifier;
};

/// Draws waveplates (Haar coupling + SMD delays) and the lumped element for one span.
SpanRealization draw_span(const FiberConfig& fiber, const AmplifierConfig& amplifier, std::optional<double> element_sigma_g,
                          Eigen::Index modes, RandomStream& rng);

// Elementary operators. All take and return time-domain fields.

MultimodeField linear_half_step(MultimodeField field, const FiberConfig& fiber, double length_km);
MultimodeField nonlinear_step(MultimodeField field, const FiberConfig& fiber, double effective_length_km);
MultimodeField apply_waveplate(MultimodeField field, const CouplingSection& section);
MultimodeField amplify_with_ase(MultimodeField field, const AmplifierConfig& amp, RandomStream& rng);

/// Symmetric split-step over one span with step-doubling local error control.
/// `sections` holds one waveplate per segment (or is empty for an uncoupled, dispersion-free-of-SMD fiber).
MultimodeField propagate_span(MultimodeField field, const FiberConfig& fiber, const StepController& controller,
                              std::span<const CouplingSection> sections, PropagationStats* stats = nullptr);

struct LinkResult {
  MultimodeField rx;
  ChannelRecord record;
  PropagationStats stats;
};

/// For each span: fiber propagation, lumped MDL element, amplifier with ASE.
/// `rng` drives ASE only; all channel randomness is already in `spans`.
LinkResult run_link(MultimodeField tx, std::span<const SpanRealization> spans, const StepController& controller,
                    RandomStream& rng);

/// Thrown when the adaptive step falls below StepController::min_step_km.
class NonConvergenceError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace ccmcf
