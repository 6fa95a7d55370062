#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ccmcf/channel_record.hpp"
#include "ccmcf/field.hpp"
#include "ccmcf/random.hpp"

namespace ccmcf {

struct WdmConfig {
  int num_channels = 5;
  double symbol_rate_baud = 64e9;
  double spacing_hz = 75e9;
  Eigen::Index symbols_per_block = 65536;
  double power_per_channel_dbm = 5.0;  // x + y, per core and channel
  double rolloff = 0.1;
  int samples_per_symbol = 16;

  [[nodiscard]] Eigen::Index samples() const { return symbols_per_block * samples_per_symbol; }
  [[nodiscard]] double dt() const { return 1.0 / (symbol_rate_baud * samples_per_symbol); }
  [[nodiscard]] double power_per_polarization_w() const { return 0.5 * dbm_to_watt(power_per_channel_dbm); }
  [[nodiscard]] int center_channel() const { return num_channels / 2; }
  /// Carrier offset of channel `k` (0-based) from the grid center, Hz.
  [[nodiscard]] double channel_offset_hz(int k) const { return (k - 0.5 * (num_channels - 1)) * spacing_hz; }
  /// Same offset in DFT bins; validate() guarantees it is an integer.
  [[nodiscard]] Eigen::Index channel_offset_bins(int k) const;

  void validate() const;
  friend bool operator==(const WdmConfig&, const WdmConfig&) = default;
};

/// Transmitted symbols: symbols[k] is (symbols_per_block x 2N) for WDM channel k, unit sample power per stream.
struct SymbolFrame {
  std::vector<CMatrix> symbols;
};

enum class ScenarioTag { Ase, Nli, Both };

std::string to_string(ScenarioTag tag);
ScenarioTag parse_scenario_tag(const std::string& s);

/// Per-realization SNR of the channel under test.
struct SnrRecord {
  std::uint64_t realization_id = 0;
  ScenarioTag tag = ScenarioTag::Both;
  double sweep_value = 0.0;
  int core = 0;
  double P_x = 0.0, P_y = 0.0;  // W
  double N_x = 0.0, N_y = 0.0;  // W
  double snr_db = 0.0;          // (P_x + P_y) / (N_x + N_y)
  double snr_x_db = 0.0;
  double snr_y_db = 0.0;

  /// Fills the dB fields from the powers.
  void finalize();
};

/// sqrt of the unit-height raised-cosine spectrum.
double rrc_spectrum(double f, double symbol_rate, double rolloff);

/// Bins of one WDM channel on the simulation grid.
struct ChannelBand {
  std::vector<Eigen::Index> bins;      // index into the full FFT grid
  std::vector<Eigen::Index> baseband;  // signed bin offset from the channel carrier
  std::vector<double> omega;           // angular frequency of each full-grid bin, rad/s
  std::vector<double> filter;          // RRC amplitude at each bin
};

ChannelBand channel_band(const WdmConfig& cfg, int channel);

std::pair<MultimodeField, SymbolFrame> generate_wdm(const WdmConfig& cfg, int num_cores, RandomStream& rng);

/// Thrown when H(w) is singular or its condition number exceeds 1e8.
class EqualizationError : public NumericalError {
 public:
  EqualizationError(const std::string& what, double frequency_hz) : NumericalError(what), frequency_hz(frequency_hz) {}
  double frequency_hz;
};

inline constexpr double kMaxConditionNumber = 1e8;

/// Throws EqualizationError if H(w) of `record` is singular or ill-conditioned at any of `omega`.
/// Only composes H explicitly when the record's cheap condition bound exceeds the limit.
void check_invertible(const ChannelRecord& record, std::span<const double> omega);

/// Full-grid zero forcing. `channel.omega` must be the field's FFT grid (fft::omega_grid).
MultimodeField zero_forcing_equalize(MultimodeField rx, const TransferMatrix& channel);

/// Zero forcing restricted to `band`: returns the equalized spectrum rows (band.bins x 2N) of the
/// forward-transformed `rx_spectrum`.
CMatrix zero_forcing_equalize_band(const CMatrix& rx_spectrum, const ChannelRecord& record, const ChannelBand& band);

struct PolarizationSymbols {
  CVector x;
  CVector y;
};

/// Matched-filter output of `channel` for the two polarizations of `core`, sampled at symbol instants.
/// Output is scaled so a noiseless back-to-back link returns sqrt(P_pol) * symbols.
PolarizationSymbols demodulate_cut(const MultimodeField& field, const WdmConfig& cfg, int core, int channel);

/// Same, starting from band spectrum rows (band.bins x 2N) as returned by zero_forcing_equalize_band.
PolarizationSymbols demodulate_band(const CMatrix& band_spectrum, const ChannelBand& band, const WdmConfig& cfg, int core);

/// Thrown when the rx/tx cross-correlation is zero.
class UndefinedPhaseError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

struct PhaseRecovery {
  PolarizationSymbols rotated;
  double theta_x = 0.0;
  double theta_y = 0.0;
};

/// Ideal data-aided block-average phase recovery, one rotation per polarization.
PhaseRecovery carrier_phase_recover(const PolarizationSymbols& rx, const PolarizationSymbols& tx);

/// Gain-normalized error-vector SNR estimate. Infinite when the noise is exactly zero.
SnrRecord estimate_snr(const PolarizationSymbols& rx, const PolarizationSymbols& tx);

/// Transmitted symbols of `channel` for `core` as a polarization pair.
PolarizationSymbols cut_symbols(const SymbolFrame& frame, int core, int channel);

}  // namespace ccmcf
