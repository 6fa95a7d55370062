#include "ccmcf/transceiver.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/SVD>

#include "ccmcf/fft.hpp"

namespace ccmcf {
namespace {

double bin_spacing_hz(const WdmConfig& cfg) {
  return cfg.symbol_rate_baud / static_cast<double>(cfg.symbols_per_block);
}

// Largest |b| with nonzero RRC response.
Eigen::Index band_half_width_bins(const WdmConfig& cfg) {
  const double edge = 0.5 * (1.0 + cfg.rolloff) * static_cast<double>(cfg.symbols_per_block);
  return static_cast<Eigen::Index>(std::ceil(edge));
}

void require_core(const WdmConfig&, Eigen::Index modes, int core) {
  if (core < 0 || 2 * static_cast<Eigen::Index>(core) + 2 > modes)
    throw DimensionError("core index out of range");
}

void check_condition(const CMatrix& H, double omega) {
  Eigen::JacobiSVD<CMatrix> svd(H);
  const auto& sv = svd.singularValues();
  const double smin = sv(sv.size() - 1);
  if (smin > 0.0 && sv(0) / smin <= kMaxConditionNumber) return;
  const double f = omega / (2.0 * kPi);
  std::ostringstream os;
  os << "channel matrix is singular or ill-conditioned at " << f << " Hz";
  throw EqualizationError(os.str(), f);
}

void require_channel(const WdmConfig& cfg, int channel) {
  if (channel < 0 || channel >= cfg.num_channels) throw DimensionError("channel index out of range");
}

}  // namespace

Eigen::Index WdmConfig::channel_offset_bins(int k) const {
  return static_cast<Eigen::Index>(std::llround(channel_offset_hz(k) / bin_spacing_hz(*this)));
}

void WdmConfig::validate() const {
  std::vector<std::string> errors;
  if (num_channels < 1 || num_channels % 2 == 0) errors.emplace_back("num_channels must be odd and positive");
  if (!(symbol_rate_baud > 0.0)) errors.emplace_back("symbol_rate_baud must be positive");
  if (!(rolloff >= 0.0 && rolloff <= 1.0)) errors.emplace_back("rolloff must lie in [0, 1]");
  if (!(spacing_hz >= symbol_rate_baud * (1.0 + rolloff)))
    errors.emplace_back("spacing_hz must be at least symbol_rate_baud * (1 + rolloff)");
  if (!fft::is_power_of_two(symbols_per_block)) errors.emplace_back("symbols_per_block must be a power of two");
  if (samples_per_symbol < 1 || !fft::is_power_of_two(samples_per_symbol))
    errors.emplace_back("samples_per_symbol must be a power of two");
  if (!std::isfinite(power_per_channel_dbm)) errors.emplace_back("power_per_channel_dbm must be finite");

  if (errors.empty()) {
    const double m = spacing_hz / bin_spacing_hz(*this);
    if (std::abs(m - std::round(m)) > 1e-6 * std::max(1.0, std::abs(m)))
      errors.emplace_back("spacing_hz must be an integer multiple of symbol_rate_baud / symbols_per_block");
    const Eigen::Index reach = channel_offset_bins(num_channels - 1) + band_half_width_bins(*this);
    if (2 * reach >= samples()) errors.emplace_back("WDM band exceeds the simulation bandwidth");
  }
  if (!errors.empty()) {
    std::ostringstream os;
    for (std::size_t i = 0; i < errors.size(); ++i) os << (i ? "; " : "") << errors[i];
    throw ConfigError(os.str());
  }
}

std::string to_string(ScenarioTag tag) {
  switch (tag) {
    case ScenarioTag::Ase: return "ASE";
    case ScenarioTag::Nli: return "NLI";
    case ScenarioTag::Both: return "BOTH";
  }
  return "BOTH";
}

ScenarioTag parse_scenario_tag(const std::string& s) {
  if (s == "ASE") return ScenarioTag::Ase;
  if (s == "NLI") return ScenarioTag::Nli;
  if (s == "BOTH") return ScenarioTag::Both;
  throw ConfigError("unknown scenario tag '" + s + "' (expected ASE, NLI or BOTH)");
}

void SnrRecord::finalize() {
  auto db = [](double p, double n) {
    if (n == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(p / n);
  };
  snr_db = db(P_x + P_y, N_x + N_y);
  snr_x_db = db(P_x, N_x);
  snr_y_db = db(P_y, N_y);
}

double rrc_spectrum(double f, double symbol_rate, double rolloff) {
  const double af = std::abs(f);
  const double f1 = 0.5 * (1.0 - rolloff) * symbol_rate;
  const double f2 = 0.5 * (1.0 + rolloff) * symbol_rate;
  if (af <= f1) return 1.0;
  if (af >= f2) return 0.0;
  return std::sqrt(0.5 * (1.0 + std::cos(kPi / (rolloff * symbol_rate) * (af - f1))));
}

ChannelBand channel_band(const WdmConfig& cfg, int channel) {
  require_channel(cfg, channel);
  const Eigen::Index n_t = cfg.samples();
  const Eigen::Index center = cfg.channel_offset_bins(channel);
  const Eigen::Index half = band_half_width_bins(cfg);
  const double df = bin_spacing_hz(cfg);
  ChannelBand band;
  for (Eigen::Index b = -half; b <= half; ++b) {
    const double h = rrc_spectrum(static_cast<double>(b) * df, cfg.symbol_rate_baud, cfg.rolloff);
    if (h <= 0.0) continue;
    band.bins.push_back(fft::bin_index(center + b, n_t));
    band.baseband.push_back(b);
    band.omega.push_back(2.0 * kPi * static_cast<double>(center + b) * df);
    band.filter.push_back(h);
  }
  return band;
}

std::pair<MultimodeField, SymbolFrame> generate_wdm(const WdmConfig& cfg, int num_cores, RandomStream& rng) {
  cfg.validate();
  if (num_cores < 1) throw DimensionError("num_cores must be positive");
  const Eigen::Index modes = 2 * static_cast<Eigen::Index>(num_cores);
  const Eigen::Index n_sym = cfg.symbols_per_block;
  const Eigen::Index n_t = cfg.samples();
  const double scale = std::sqrt(cfg.power_per_polarization_w()) * cfg.samples_per_symbol;

  MultimodeField field(n_t, modes, cfg.dt());
  CMatrix spectrum = CMatrix::Zero(n_t, modes);
  SymbolFrame frame;
  frame.symbols.reserve(static_cast<std::size_t>(cfg.num_channels));
  const RandomStream symbol_root = rng.fork("symbols");

  for (int k = 0; k < cfg.num_channels; ++k) {
    CMatrix s(n_sym, modes);
    for (Eigen::Index i = 0; i < modes; ++i) {
      RandomStream stream = symbol_root.fork((static_cast<std::uint64_t>(k) << 16) | static_cast<std::uint64_t>(i));
      for (Eigen::Index t = 0; t < n_sym; ++t) s(t, i) = stream.complex_gaussian();
      s.col(i) /= std::sqrt(s.col(i).squaredNorm() / static_cast<double>(n_sym));
    }
    CMatrix X = s;
    fft::forward(X);
    const ChannelBand band = channel_band(cfg, k);
    for (std::size_t r = 0; r < band.bins.size(); ++r) {
      const Eigen::Index q = fft::bin_index(band.baseband[r], n_sym);
      spectrum.row(band.bins[r]) += (scale * band.filter[r]) * X.row(q);
    }
    frame.symbols.push_back(std::move(s));
  }
  fft::inverse(spectrum);
  field.samples = std::move(spectrum);
  return {std::move(field), std::move(frame)};
}

void check_invertible(const ChannelRecord& record, std::span<const double> omega) {
  if (record.condition_bound() <= kMaxConditionNumber) return;
  const TransferMatrix tm = compose(record, omega);
  for (std::size_t r = 0; r < tm.H.size(); ++r) check_condition(tm.H[r], omega[r]);
}

MultimodeField zero_forcing_equalize(MultimodeField rx, const TransferMatrix& channel) {
  rx.validate();
  const Eigen::Index n_t = rx.size();
  if (static_cast<Eigen::Index>(channel.H.size()) != n_t || channel.omega.size() != channel.H.size())
    throw DimensionError("transfer matrix grid does not match the field");
  fft::forward(rx.samples);
  for (Eigen::Index b = 0; b < n_t; ++b) {
    const CMatrix& H = channel.H[static_cast<std::size_t>(b)];
    if (H.rows() != rx.modes() || H.cols() != rx.modes()) throw DimensionError("transfer matrix size differs from mode count");
    check_condition(H, channel.omega[static_cast<std::size_t>(b)]);
    const CVector x = rx.samples.row(b).transpose();
    rx.samples.row(b) = H.partialPivLu().solve(x).transpose();
  }
  fft::inverse(rx.samples);
  return rx;
}

CMatrix zero_forcing_equalize_band(const CMatrix& rx_spectrum, const ChannelRecord& record, const ChannelBand& band) {
  if (rx_spectrum.cols() != record.modes) throw DimensionError("spectrum mode count differs from channel record");
  CMatrix X(static_cast<Eigen::Index>(band.bins.size()), rx_spectrum.cols());
  for (std::size_t r = 0; r < band.bins.size(); ++r) {
    if (band.bins[r] >= rx_spectrum.rows()) throw DimensionError("band bin outside the spectrum");
    X.row(static_cast<Eigen::Index>(r)) = rx_spectrum.row(band.bins[r]);
  }
  check_invertible(record, band.omega);
  apply_channel_inverse(record, band.omega, X);
  return X;
}

PolarizationSymbols demodulate_band(const CMatrix& band_spectrum, const ChannelBand& band, const WdmConfig& cfg, int core) {
  require_core(cfg, band_spectrum.cols(), core);
  if (static_cast<std::size_t>(band_spectrum.rows()) != band.bins.size())
    throw DimensionError("band spectrum rows differ from band size");
  const Eigen::Index n_sym = cfg.symbols_per_block;
  CMatrix folded = CMatrix::Zero(n_sym, 2);
  for (std::size_t r = 0; r < band.bins.size(); ++r) {
    const Eigen::Index q = fft::bin_index(band.baseband[r], n_sym);
    const auto row = static_cast<Eigen::Index>(r);
    folded.row(q) += band.filter[r] * band_spectrum.block(row, 2 * core, 1, 2);
  }
  fft::inverse(folded);
  folded /= static_cast<double>(cfg.samples_per_symbol);
  return {folded.col(0), folded.col(1)};
}

PolarizationSymbols demodulate_cut(const MultimodeField& field, const WdmConfig& cfg, int core, int channel) {
  require_channel(cfg, channel);
  require_core(cfg, field.modes(), core);
  if (field.size() != cfg.samples()) throw DimensionError("field length differs from the WDM grid");
  CMatrix spectrum = field.samples.middleCols(2 * core, 2);
  fft::forward(spectrum);
  const ChannelBand band = channel_band(cfg, channel);
  CMatrix rows(static_cast<Eigen::Index>(band.bins.size()), 2);
  for (std::size_t r = 0; r < band.bins.size(); ++r) rows.row(static_cast<Eigen::Index>(r)) = spectrum.row(band.bins[r]);
  return demodulate_band(rows, band, cfg, 0);
}

PhaseRecovery carrier_phase_recover(const PolarizationSymbols& rx, const PolarizationSymbols& tx) {
  if (rx.x.size() != tx.x.size() || rx.y.size() != tx.y.size()) throw DimensionError("rx and tx lengths differ");
  auto angle = [](const CVector& r, const CVector& t) {
    const Complex c = (r.array() * t.array().conjugate()).sum();
    if (!(std::abs(c) > 0.0)) throw UndefinedPhaseError("zero cross-correlation between rx and tx");
    return std::arg(c);
  };
  PhaseRecovery out;
  out.theta_x = angle(rx.x, tx.x);
  out.theta_y = angle(rx.y, tx.y);
  out.rotated.x = rx.x * std::polar(1.0, -out.theta_x);
  out.rotated.y = rx.y * std::polar(1.0, -out.theta_y);
  return out;
}

SnrRecord estimate_snr(const PolarizationSymbols& rx, const PolarizationSymbols& tx) {
  if (rx.x.size() == 0 || rx.y.size() == 0) throw DimensionError("estimate_snr needs nonempty symbol arrays");
  if (rx.x.size() != tx.x.size() || rx.y.size() != tx.y.size()) throw DimensionError("rx and tx lengths differ");
  auto measure = [](const CVector& r, const CVector& t, double& P, double& N) {
    const double n = static_cast<double>(r.size());
    const double tx_power = t.squaredNorm() / n;
    if (!(tx_power > 0.0)) throw DimensionError("reference symbols have zero power");
    const Complex c = (r.array() * t.array().conjugate()).sum() / n / tx_power;
    P = std::norm(c) * tx_power;
    N = (r - c * t).squaredNorm() / n;
  };
  SnrRecord rec;
  measure(rx.x, tx.x, rec.P_x, rec.N_x);
  measure(rx.y, tx.y, rec.P_y, rec.N_y);
  rec.finalize();
  return rec;
}

PolarizationSymbols cut_symbols(const SymbolFrame& frame, int core, int channel) {
  if (channel < 0 || static_cast<std::size_t>(channel) >= frame.symbols.size()) throw DimensionError("channel index out of range");
  const CMatrix& s = frame.symbols[static_cast<std::size_t>(channel)];
  if (core < 0 || 2 * core + 2 > s.cols()) throw DimensionError("core index out of range");
  return {s.col(2 * core), s.col(2 * core + 1)};
}

}  // namespace ccmcf
