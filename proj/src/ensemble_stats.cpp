#include "ccmcf/ensemble_stats.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "ccmcf/fft.hpp"

namespace ccmcf {

std::string to_string(ScenarioKind k) { return k == ScenarioKind::MdlMatrix ? "mdl_matrix" : "link"; }
std::string to_string(Engine e) { return e == Engine::Ssfm ? "ssfm" : "oracle"; }
std::string to_string(SweepVariable v) {
  switch (v) {
    case SweepVariable::None: return "none";
    case SweepVariable::SmdCoeff: return "smd_ps_per_sqrt_km";
    case SweepVariable::MdlPeakToPeak: return "mdl_element_pp_db";
    case SweepVariable::NumChannels: return "num_channels";
  }
  return "none";
}

std::optional<double> ElementConfig::resolved_sigma_g() const {
  if (sigma_g) return sigma_g;
  if (peak_to_peak_db) return sigma_g_from_peak_to_peak_db(*peak_to_peak_db);
  return std::nullopt;
}

std::vector<double> SweepSpec::points() const {
  if (variable == SweepVariable::None) return {0.0};
  return values;
}

Scenario Scenario::at_sweep_point(double value) const {
  Scenario s = *this;
  switch (sweep.variable) {
    case SweepVariable::None: break;
    case SweepVariable::SmdCoeff: s.link.fiber.smd_ps_per_sqrt_km = value; break;
    case SweepVariable::MdlPeakToPeak: s.link.element = ElementConfig{value, std::nullopt}; break;
    case SweepVariable::NumChannels: s.link.wdm.num_channels = static_cast<int>(std::lround(value)); break;
  }
  if (!sweep.power_dbm.empty()) {
    const auto it = std::find(sweep.values.begin(), sweep.values.end(), value);
    if (it == sweep.values.end()) throw ConfigError("value is not a sweep point");
    s.link.wdm.power_per_channel_dbm = sweep.power_dbm[static_cast<std::size_t>(it - sweep.values.begin())];
  }
  s.sweep = SweepSpec{};
  return s;
}

void Scenario::validate() const {
  std::vector<std::string> errors;
  auto collect = [&](const std::string& prefix, const auto& check) {
    try {
      check();
    } catch (const ConfigError& e) {
      errors.push_back(prefix + e.what());
    }
  };

  if (num_realizations < 1) errors.emplace_back("num_realizations must be >= 1");
  if (tags.empty()) errors.emplace_back("at least one scenario tag is required");
  if (std::set<ScenarioTag>(tags.begin(), tags.end()).size() != tags.size()) errors.emplace_back("scenario tags repeat");
  if (binning.fixed_width && !(*binning.fixed_width > 0.0)) errors.emplace_back("fixed bin width must be positive");

  if (kind == ScenarioKind::MdlMatrix) {
    if (matrix.num_modes < 2 || matrix.num_modes % 2 != 0) errors.emplace_back("matrix.num_modes must be even and >= 2");
    if (matrix.num_sections < 1) errors.emplace_back("matrix.num_sections must be >= 1");
    if (!(matrix.sigma_g >= 0.0)) errors.emplace_back("matrix.sigma_g must be >= 0");
    if (sweep.variable != SweepVariable::None) errors.emplace_back("matrix scenarios do not support sweeps");
  } else {
    if (link.num_cores < 1) errors.emplace_back("link.num_cores must be >= 1");
    if (link.num_spans < 1) errors.emplace_back("link.num_spans must be >= 1");
    collect("fiber: ", [&] { link.fiber.validate(); });
    collect("amplifier: ", [&] { link.amplifier.validate(); });
    collect("step: ", [&] { link.step.validate(); });
    collect("wdm: ", [&] { link.wdm.validate(); });
    if (link.element.peak_to_peak_db && link.element.sigma_g)
      errors.emplace_back("element: give either peak_to_peak_db or sigma_g, not both");
    if (link.element.peak_to_peak_db && !(*link.element.peak_to_peak_db >= 0.0))
      errors.emplace_back("element: peak_to_peak_db must be >= 0");
    if (link.element.sigma_g && !(*link.element.sigma_g >= 0.0)) errors.emplace_back("element: sigma_g must be >= 0");
    if (link.cut_core < 0 || link.cut_core >= link.num_cores) errors.emplace_back("cut_core must index an existing core");
    if (link.cut_channel && (*link.cut_channel < 0 || *link.cut_channel >= link.wdm.num_channels))
      errors.emplace_back("cut_channel must index an existing WDM channel");
    if (engine == Engine::Oracle && (tags.size() != 1 || tags.front() != ScenarioTag::Ase))
      errors.emplace_back("the oracle engine computes ASE-only SNR; tags must be [ASE]");

    if (sweep.variable == SweepVariable::None) {
      if (!sweep.values.empty() || !sweep.power_dbm.empty())
        errors.emplace_back("sweep values given without a sweep variable");
    } else {
      if (sweep.values.empty()) errors.emplace_back("sweep needs at least one value");
      if (!sweep.power_dbm.empty() && sweep.power_dbm.size() != sweep.values.size())
        errors.emplace_back("sweep power list must match the sweep values in length");
      if (std::set<double>(sweep.values.begin(), sweep.values.end()).size() != sweep.values.size())
        errors.emplace_back("sweep values repeat");
      for (double v : sweep.values) {
        if (sweep.variable == SweepVariable::SmdCoeff && !(v >= 0.0)) errors.emplace_back("SMD sweep values must be >= 0");
        if (sweep.variable == SweepVariable::MdlPeakToPeak && !(v >= 0.0)) errors.emplace_back("MDL sweep values must be >= 0");
        if (sweep.variable == SweepVariable::NumChannels) {
          if (v != std::round(v) || v < 1 || static_cast<long>(v) % 2 == 0) {
            errors.emplace_back("channel-count sweep values must be odd positive integers");
            continue;
          }
          if (sweep.power_dbm.empty() || sweep.power_dbm.size() == sweep.values.size())
            collect("wdm at " + std::to_string(static_cast<long>(v)) + " channels: ",
                    [&] { at_sweep_point(v).link.wdm.validate(); });
          if (link.cut_channel && *link.cut_channel >= static_cast<int>(v))
            errors.emplace_back("cut_channel exceeds a swept channel count");
        }
      }
    }
  }
  if (!errors.empty()) {
    std::ostringstream os;
    os << "invalid scenario '" << name << "': ";
    for (std::size_t i = 0; i < errors.size(); ++i) os << (i ? "; " : "") << errors[i];
    throw ConfigError(os.str());
  }
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

namespace {

double quantile_sorted(const std::vector<double>& s, double q) {
  const double pos = q * static_cast<double>(s.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(i);
  if (i + 1 >= s.size()) return s.back();
  return s[i] + frac * (s[i + 1] - s[i]);
}

void require_finite(std::span<const double> x) {
  for (double v : x)
    if (!std::isfinite(v)) throw NumericalError("statistics input contains non-finite values");
}

}  // namespace

double Histogram::integral() const {
  double s = 0.0;
  for (std::size_t i = 0; i < density.size(); ++i) s += density[i] * bin_width(i);
  return s;
}

Histogram histogram_on_edges(std::span<const double> samples, std::vector<double> edges) {
  if (edges.size() < 2) throw DimensionError("histogram needs at least one bin");
  Histogram h;
  h.edges = std::move(edges);
  const std::size_t nb = h.edges.size() - 1;
  h.counts.assign(nb, 0);
  h.samples = samples.size();
  for (double v : samples) {
    if (v < h.edges.front() || v > h.edges.back()) continue;
    auto it = std::upper_bound(h.edges.begin(), h.edges.end(), v);
    std::size_t i = static_cast<std::size_t>(it - h.edges.begin());
    i = std::min(i == 0 ? 0 : i - 1, nb - 1);
    ++h.counts[i];
  }
  h.density.resize(nb);
  const double n = static_cast<double>(std::max<std::size_t>(h.samples, 1));
  for (std::size_t i = 0; i < nb; ++i) h.density[i] = static_cast<double>(h.counts[i]) / (n * h.bin_width(i));
  return h;
}

Histogram estimate_pdf(std::span<const double> samples, const BinningPolicy& policy) {
  if (samples.size() < kMinPdfSamples)
    throw DimensionError("estimate_pdf needs at least " + std::to_string(kMinPdfSamples) + " samples");
  require_finite(samples);
  if (policy.fixed_width && !(*policy.fixed_width > 0.0)) throw ConfigError("fixed bin width must be positive");
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const double lo = sorted.front();
  const double hi = sorted.back();
  const double n = static_cast<double>(sorted.size());

  if (lo == hi) {
    const double half = policy.fixed_width ? 0.5 * *policy.fixed_width : 0.5;
    Histogram h = histogram_on_edges(samples, {lo - half, lo + half});
    h.warning = "degenerate sample: all values equal, single bin";
    return h;
  }

  std::vector<double> edges;
  if (policy.fixed_width) {
    const double w = *policy.fixed_width;
    const double start = std::floor(lo / w) * w;
    const auto nb = static_cast<std::size_t>(std::floor((hi - start) / w)) + 1;
    for (std::size_t i = 0; i <= nb; ++i) edges.push_back(start + static_cast<double>(i) * w);
  } else {
    const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
    double width = 2.0 * iqr / std::cbrt(n);
    if (!(width > 0.0)) width = (hi - lo) / std::ceil(std::sqrt(n));
    const auto nb = static_cast<std::size_t>(std::max(1.0, std::ceil((hi - lo) / width)));
    const double w = (hi - lo) / static_cast<double>(nb);
    for (std::size_t i = 0; i <= nb; ++i) edges.push_back(lo + static_cast<double>(i) * w);
    edges.back() = hi;
  }
  return histogram_on_edges(samples, std::move(edges));
}

double ks_distance(const Histogram& h, const std::function<double(double)>& cdf) {
  double cum = 0.0;
  double d = std::abs(cdf(h.edges.front()));
  for (std::size_t i = 0; i < h.bins(); ++i) {
    cum += h.density[i] * h.bin_width(i);
    d = std::max(d, std::abs(cum - cdf(h.edges[i + 1])));
  }
  return d;
}

double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw DimensionError("ks_two_sample needs nonempty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

std::size_t count_peaks(const Histogram& h, double sigmas) {
  const std::size_t n = h.bins();
  if (n == 0) return 0;
  if (n == 1) return h.counts[0] > 0 ? 1 : 0;
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    int k = 0;
    for (std::size_t j = (i == 0 ? 0 : i - 1); j <= std::min(n - 1, i + 1); ++j, ++k) sum += static_cast<double>(h.counts[j]);
    s[i] = sum / k;
  }
  std::size_t peaks = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double left_n = i == 0 ? 0.0 : s[i - 1];
    const double right_n = i + 1 == n ? 0.0 : s[i + 1];
    if (!(s[i] > left_n && s[i] >= right_n)) continue;
    // Lowest point before reaching higher ground (the histogram is zero beyond its ends).
    double left_base = 0.0;
    for (std::size_t j = i; j-- > 0;) {
      if (s[j] > s[i]) {
        left_base = *std::min_element(s.begin() + static_cast<std::ptrdiff_t>(j), s.begin() + static_cast<std::ptrdiff_t>(i));
        break;
      }
    }
    double right_base = 0.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      if (s[j] > s[i]) {
        right_base = *std::min_element(s.begin() + static_cast<std::ptrdiff_t>(i) + 1, s.begin() + static_cast<std::ptrdiff_t>(j));
        break;
      }
    }
    if (s[i] - std::max(left_base, right_base) > sigmas * std::sqrt(s[i])) ++peaks;
  }
  return peaks;
}

double sample_mean(std::span<const double> x) {
  if (x.empty()) return 0.0;
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sample_std(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = sample_mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(x.size() - 1));
}

Moments moments(std::span<const double> x) {
  Moments m;
  m.count = x.size();
  if (x.empty()) return m;
  m.mean = sample_mean(x);
  m.std = sample_std(x);
  double m2 = 0.0, m3 = 0.0;
  for (double v : x) {
    const double d = v - m.mean;
    m2 += d * d;
    m3 += d * d * d;
  }
  m2 /= static_cast<double>(x.size());
  m3 /= static_cast<double>(x.size());
  m.skewness = m2 > 0.0 ? m3 / std::pow(m2, 1.5) : 0.0;
  return m;
}

double correlation(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("correlation inputs differ in length");
  if (x.size() < 2) return 0.0;
  const double mx = sample_mean(x);
  const double my = sample_mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

ConfidenceInterval bootstrap_ci(std::span<const double> x, const std::function<double(std::span<const double>)>& statistic,
                                RandomStream rng, std::size_t resamples, double level) {
  if (x.empty()) throw DimensionError("bootstrap needs samples");
  if (resamples < 2) throw ConfigError("bootstrap needs at least two resamples");
  std::vector<double> stats(resamples);
  std::vector<double> buf(x.size());
  const double n = static_cast<double>(x.size());
  for (std::size_t r = 0; r < resamples; ++r) {
    for (auto& v : buf) v = x[std::min(x.size() - 1, static_cast<std::size_t>(rng.uniform() * n))];
    stats[r] = statistic(buf);
  }
  std::sort(stats.begin(), stats.end());
  const double a = 0.5 * (1.0 - level);
  return {quantile_sorted(stats, a), quantile_sorted(stats, 1.0 - a)};
}

std::vector<double> delta_snr(std::span<const SnrRecord> records) {
  if (records.size() < 2) throw DimensionError("delta_snr needs at least two records");
  std::vector<double> d(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) d[i] = records[i].snr_db;
  const double m = sample_mean(d);
  for (auto& v : d) v -= m;
  return d;
}

OrderStatistics order_statistics_pdfs(std::span<const SingularSpectrum> spectra, const BinningPolicy& policy) {
  if (spectra.empty()) throw DimensionError("order statistics need at least one spectrum");
  const Eigen::Index m = spectra.front().g_sorted.size();
  std::vector<std::vector<double>> columns(static_cast<std::size_t>(m));
  std::vector<double> pooled;
  pooled.reserve(spectra.size() * static_cast<std::size_t>(m));
  for (const auto& s : spectra) {
    if (s.g_sorted.size() != m) throw DimensionError("spectra differ in mode count");
    for (Eigen::Index i = 0; i < m; ++i) {
      const double db = kNepersToDb * s.g_sorted(i);
      columns[static_cast<std::size_t>(i)].push_back(db);
      pooled.push_back(db);
    }
  }
  OrderStatistics out;
  const Histogram pooled_hist = estimate_pdf(pooled, policy);
  for (const auto& c : columns) out.marginals.push_back(histogram_on_edges(c, pooled_hist.edges));

  out.mixture = pooled_hist;
  std::fill(out.mixture.density.begin(), out.mixture.density.end(), 0.0);
  for (const auto& h : out.marginals)
    for (std::size_t b = 0; b < h.bins(); ++b) out.mixture.density[b] += h.density[b];
  for (auto& d : out.mixture.density) d /= static_cast<double>(m);
  return out;
}

// ---------------------------------------------------------------------------
// Matrix-only linear SNR
// ---------------------------------------------------------------------------

ChannelRecord link_channel_record(std::span<const SpanRealization> spans, Eigen::Index modes, double f0) {
  ChannelRecord rec;
  rec.modes = modes;
  for (const auto& span : spans) {
    rec.append(span.fiber.response());
    for (const auto& w : span.waveplates) rec.append(w);
    if (span.mdl_element) rec.append(*span.mdl_element);
    const double psd = span.amplifier.ase_enabled ? span.amplifier.ase_psd(f0) : 0.0;
    rec.append(AmplifierGain{db_to_linear(span.amplifier.gain_db), psd});
  }
  return rec;
}

namespace {

// out(b) = mag * exp(j (w0 + b dw) tau) with one exact anchor every 64 entries.
void fill_phasors(Eigen::ArrayXcd& out, double w0, double dw, double tau, double mag) {
  constexpr Eigen::Index kBlock = 64;
  const Complex step = std::polar(1.0, dw * tau);
  for (Eigen::Index start = 0; start < out.size(); start += kBlock) {
    Complex p = std::polar(mag, (w0 + dw * static_cast<double>(start)) * tau);
    const Eigen::Index end = std::min(out.size(), start + kBlock);
    for (Eigen::Index b = start; b < end; ++b) {
      out(b) = p;
      p *= step;
    }
  }
}

}  // namespace

std::vector<SnrRecord> linear_snr_oracle(const ChannelRecord& record, const WdmConfig& wdm, int channel,
                                         std::span<const int> cores) {
  wdm.validate();
  if (channel < 0) channel = wdm.center_channel();
  const Eigen::Index n = record.modes;
  for (int c : cores)
    if (c < 0 || 2 * c + 2 > n) throw DimensionError("core index out of range");
  const ChannelBand band = channel_band(wdm, channel);

  // Frequency-flat records need one bin; its weight is the whole matched-filter energy.
  const bool flat = record.frequency_flat();
  std::vector<double> omega;
  std::vector<double> weight;
  if (flat) {
    const auto mid = band.omega.size() / 2;
    omega.push_back(band.omega[mid]);
    double w = 0.0;
    for (double h : band.filter) w += h * h;
    weight.push_back(w);
  } else {
    omega = band.omega;
    for (double h : band.filter) weight.push_back(h * h);
  }
  check_invertible(record, omega);

  const auto B = static_cast<Eigen::Index>(omega.size());
  const auto P = static_cast<Eigen::Index>(2 * cores.size());
  const double dw = B > 1 ? omega[1] - omega[0] : 0.0;
  for (Eigen::Index b = 1; b < B; ++b)
    if (std::abs(omega[static_cast<std::size_t>(b)] - omega[0] - dw * static_cast<double>(b)) > 1e-9 * std::abs(dw) * B)
      throw NumericalError("oracle band grid is not uniform");

  // Row block p occupies rows [p B, (p + 1) B); each row is e_mode^T H_{1..k}^{-1} at one bin.
  CMatrix R = CMatrix::Zero(P * B, n);
  for (Eigen::Index p = 0; p < P; ++p) {
    const Eigen::Index mode = 2 * cores[static_cast<std::size_t>(p / 2)] + (p % 2);
    R.block(p * B, mode, B, 1).setOnes();
  }
  Eigen::ArrayXd scalar_power = Eigen::ArrayXd::Ones(B);  // |1/scalar|^2 of fibers and amplifiers so far
  Eigen::ArrayXd acc = Eigen::ArrayXd::Zero(P * B);
  CMatrix pending = CMatrix::Identity(n, n);
  bool pending_identity = true;
  Eigen::ArrayXcd phasor(B);

  auto flush = [&] {
    if (!pending_identity) R = R * pending;
    pending.setIdentity();
    pending_identity = true;
  };

  for (const auto& e : record.elements) {
    if (const auto* f = std::get_if<FiberResponse>(&e)) {
      for (Eigen::Index b = 0; b < B; ++b) scalar_power(b) /= std::norm(f->at(omega[static_cast<std::size_t>(b)]));
    } else if (const auto* a = std::get_if<AmplifierGain>(&e)) {
      scalar_power /= a->power_gain;
      if (a->ase_psd > 0.0) {
        flush();
        const Eigen::ArrayXd rows = R.rowwise().squaredNorm().array();
        for (Eigen::Index p = 0; p < P; ++p) acc.segment(p * B, B) += a->ase_psd * scalar_power * rows.segment(p * B, B);
      }
    } else {
      const auto& s = std::get<CouplingSection>(e);
      const RVector& g = s.gains.values();
      if (s.delays.is_zero()) {
        const RVector inv = (-0.5 * (g.array() + s.mean_gain)).exp().matrix();
        pending = pending * s.U * inv.cast<Complex>().asDiagonal() * s.V.adjoint();
        pending_identity = false;
      } else {
        R = R * (pending * s.U);
        const RVector& tau = s.delays.values();
        for (Eigen::Index i = 0; i < n; ++i) {
          fill_phasors(phasor, omega[0], dw, tau(i), std::exp(-0.5 * (g(i) + s.mean_gain)));
          for (Eigen::Index p = 0; p < P; ++p) R.block(p * B, i, B, 1).array() *= phasor;
        }
        pending = s.V.adjoint();
        pending_identity = false;
      }
    }
  }

  const double df = wdm.symbol_rate_baud / static_cast<double>(wdm.symbols_per_block);
  const Eigen::Map<const Eigen::ArrayXd> wts(weight.data(), B);
  const double p_pol = wdm.power_per_polarization_w();
  std::vector<SnrRecord> out;
  for (std::size_t c = 0; c < cores.size(); ++c) {
    SnrRecord rec;
    rec.tag = ScenarioTag::Ase;
    rec.core = cores[c];
    rec.P_x = p_pol;
    rec.P_y = p_pol;
    const auto px = static_cast<Eigen::Index>(2 * c);
    rec.N_x = df * (wts * acc.segment(px * B, B)).sum();
    rec.N_y = df * (wts * acc.segment((px + 1) * B, B)).sum();
    rec.finalize();
    out.push_back(rec);
  }
  return out;
}

SnrRecord linear_snr_oracle(const ChannelRecord& record, const WdmConfig& wdm, int channel, int core) {
  const int cores[] = {core};
  return linear_snr_oracle(record, wdm, channel, cores).front();
}

// ---------------------------------------------------------------------------
// Ensembles
// ---------------------------------------------------------------------------

SingularSpectrum matrix_realization(const MatrixEnsembleConfig& cfg, RandomStream rng) {
  CMatrix M = CMatrix::Identity(cfg.num_modes, cfg.num_modes);
  for (int k = 0; k < cfg.num_sections; ++k) {
    RandomStream s = rng.fork(static_cast<std::uint64_t>(k));
    M = section_response(make_mdl_element(cfg.num_modes, cfg.sigma_g, s), 0.0) * M;
  }
  return singular_gains(M);
}

namespace {

std::vector<int> recorded_cores(const LinkConfig& link) {
  std::vector<int> cores;
  if (link.record_all_cores)
    for (int c = 0; c < link.num_cores; ++c) cores.push_back(c);
  else
    cores.push_back(link.cut_core);
  return cores;
}

std::vector<SpanRealization> draw_link(const Scenario& s, std::uint64_t realization_id) {
  const LinkConfig& link = s.link;
  const RandomStream root = RandomStream::keyed(s.master_seed, realization_id, "channel");
  const auto sigma = link.element.resolved_sigma_g();
  std::vector<SpanRealization> spans;
  spans.reserve(static_cast<std::size_t>(link.num_spans));
  for (int k = 0; k < link.num_spans; ++k) {
    RandomStream rs = root.fork(static_cast<std::uint64_t>(k));
    spans.push_back(draw_span(link.fiber, link.amplifier, sigma, link.modes(), rs));
  }
  return spans;
}

}  // namespace

std::vector<SnrRecord> link_realization(const Scenario& s, std::uint64_t realization_id, double sweep_value) {
  const LinkConfig& link = s.link;
  const std::vector<SpanRealization> spans = draw_link(s, realization_id);
  const std::vector<int> cores = recorded_cores(link);
  const int channel = link.resolved_cut_channel();
  std::vector<SnrRecord> out;

  if (s.engine == Engine::Oracle) {
    out = linear_snr_oracle(link_channel_record(spans, link.modes()), link.wdm, channel, cores);
  } else {
    RandomStream sym = RandomStream::keyed(s.master_seed, realization_id, "symbols");
    auto [tx, frame] = generate_wdm(link.wdm, link.num_cores, sym);
    const ChannelBand band = channel_band(link.wdm, channel);
    for (ScenarioTag tag : s.tags) {
      std::vector<SpanRealization> tagged = spans;
      for (auto& span : tagged) {
        if (tag == ScenarioTag::Ase) span.fiber.gamma_per_w_km = 0.0;
        if (tag == ScenarioTag::Nli) span.amplifier.ase_enabled = false;
      }
      RandomStream ase = RandomStream::keyed(s.master_seed, realization_id, "ase");
      LinkResult res = run_link(tx, tagged, link.step, ase);
      fft::forward(res.rx.samples);
      const CMatrix eq = zero_forcing_equalize_band(res.rx.samples, res.record, band);
      for (int core : cores) {
        const PolarizationSymbols ref = cut_symbols(frame, core, channel);
        const PhaseRecovery pr = carrier_phase_recover(demodulate_band(eq, band, link.wdm, core), ref);
        SnrRecord rec = estimate_snr(pr.rotated, ref);
        rec.tag = tag;
        rec.core = core;
        out.push_back(rec);
      }
    }
  }
  for (auto& r : out) {
    r.realization_id = realization_id;
    r.sweep_value = sweep_value;
  }
  return out;
}

EnsembleSummary run_ensemble(const Scenario& scenario, unsigned workers, const ProgressCallback& progress) {
  scenario.validate();
  const std::vector<double> points = scenario.sweep.points();
  std::vector<Scenario> at_point;
  for (double v : points) at_point.push_back(scenario.at_sweep_point(v));
  const std::size_t n_real = static_cast<std::size_t>(scenario.num_realizations);
  const std::size_t jobs = points.size() * n_real;

  struct JobResult {
    std::vector<SnrRecord> records;
    std::optional<SingularSpectrum> spectrum;
    std::optional<std::string> failure;
    std::exception_ptr fatal;
  };
  std::vector<JobResult> results(jobs);
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex progress_mutex;

  auto work = [&] {
    for (std::size_t j = next++; j < jobs; j = next++) {
      const std::size_t point = j / n_real;
      const std::uint64_t r = j % n_real;
      JobResult& out = results[j];
      try {
        const Scenario& s = at_point[point];
        if (s.kind == ScenarioKind::MdlMatrix)
          out.spectrum = matrix_realization(s.matrix, RandomStream::keyed(s.master_seed, r, "matrix"));
        else
          out.records = link_realization(s, r, points[point]);
      } catch (const NumericalError& e) {
        out.failure = e.what();
      } catch (...) {
        out.fatal = std::current_exception();
      }
      const std::size_t d = ++done;
      if (progress) {
        std::lock_guard lock(progress_mutex);
        progress(d, jobs);
      }
    }
  };

  const unsigned threads = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(jobs)));
  if (threads == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  EnsembleSummary summary;
  summary.scenario_name = scenario.name;
  summary.requested_realizations = scenario.num_realizations;
  for (std::size_t j = 0; j < jobs; ++j) {
    JobResult& r = results[j];
    if (r.fatal) std::rethrow_exception(r.fatal);
    if (r.failure) {
      summary.failures.push_back({j % n_real, points[j / n_real], *r.failure});
      continue;
    }
    if (r.spectrum) summary.spectra.push_back(std::move(*r.spectrum));
    for (auto& rec : r.records) summary.records.push_back(rec);
  }
  if (static_cast<double>(summary.failures.size()) > 0.01 * static_cast<double>(jobs)) {
    std::ostringstream os;
    os << summary.failures.size() << " of " << jobs << " realizations failed; first: " << summary.failures.front().message;
    throw EnsembleError(os.str(), summary.failures);
  }
  summarize(summary, scenario);
  return summary;
}

namespace {

std::vector<double> finite_snr(std::span<const SnrRecord> recs, double SnrRecord::*field) {
  std::vector<double> v;
  v.reserve(recs.size());
  for (const auto& r : recs) v.push_back(r.*field);
  return v;
}

bool all_finite(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace

void summarize(EnsembleSummary& summary, const Scenario& scenario) {
  const BinningPolicy& policy = scenario.binning;
  summary.groups.clear();
  summary.order_stats.reset();
  summary.mdl_db.reset();

  if (!summary.spectra.empty()) {
    std::vector<double> pp;
    for (const auto& s : summary.spectra) pp.push_back(peak_to_peak_db(s));
    summary.mdl_db = moments(pp);
    if (summary.spectra.size() >= kMinPdfSamples) summary.order_stats = order_statistics_pdfs(summary.spectra, policy);
  }

  // Groups keyed by (tag, sweep value) in first-seen order.
  std::vector<std::pair<ScenarioTag, double>> keys;
  for (const auto& r : summary.records) {
    const std::pair<ScenarioTag, double> k{r.tag, r.sweep_value};
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
  }
  const int cut_core = scenario.link.cut_core;
  for (std::size_t gi = 0; gi < keys.size(); ++gi) {
    const auto [tag, sweep] = keys[gi];
    std::vector<SnrRecord> cut;
    std::map<std::uint64_t, std::vector<double>> per_pol;  // realization -> per-pol SNRs over all cores
    for (const auto& r : summary.records) {
      if (r.tag != tag || r.sweep_value != sweep) continue;
      if (r.core == cut_core) cut.push_back(r);
      per_pol[r.realization_id].push_back(r.snr_x_db);
      per_pol[r.realization_id].push_back(r.snr_y_db);
    }
    GroupStats g;
    g.tag = tag;
    g.sweep_value = sweep;
    const std::vector<double> snr = finite_snr(cut, &SnrRecord::snr_db);
    g.snr.count = snr.size();
    if (!snr.empty() && all_finite(snr)) {
      g.snr = moments(snr);
      if (snr.size() >= 2) {
        const RandomStream boot = RandomStream::keyed(scenario.master_seed, gi, "bootstrap");
        g.mean_ci = bootstrap_ci(snr, sample_mean, boot.fork("mean"));
        g.std_ci = bootstrap_ci(snr, sample_std, boot.fork("std"));
        const std::vector<double> d = delta_snr(cut);
        g.delta = moments(d);
        g.corr_xy = correlation(finite_snr(cut, &SnrRecord::snr_x_db), finite_snr(cut, &SnrRecord::snr_y_db));
        if (d.size() >= kMinPdfSamples) g.delta_pdf = estimate_pdf(d, policy);
      }
    }
    if (scenario.link.record_all_cores && per_pol.size() >= 2) {
      std::vector<double> pooled;
      for (const auto& [id, v] : per_pol) pooled.insert(pooled.end(), v.begin(), v.end());
      if (all_finite(pooled)) {
        const double m = sample_mean(pooled);
        double best = 0.0, worst = 0.0;
        for (const auto& [id, v] : per_pol) {
          best += *std::max_element(v.begin(), v.end()) - m;
          worst += *std::min_element(v.begin(), v.end()) - m;
        }
        g.pooled_best_mean = best / static_cast<double>(per_pol.size());
        g.pooled_worst_mean = worst / static_cast<double>(per_pol.size());
      }
    }
    summary.groups.push_back(std::move(g));
  }
}

std::vector<SweepRow> sweep_summary(std::span<const SnrRecord> records, std::uint64_t seed, int core) {
  std::vector<std::pair<ScenarioTag, double>> keys;
  for (const auto& r : records) {
    const std::pair<ScenarioTag, double> k{r.tag, r.sweep_value};
    if (r.core == core && std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
  }
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    std::vector<double> snr;
    for (const auto& r : records)
      if (r.core == core && r.tag == keys[i].first && r.sweep_value == keys[i].second) snr.push_back(r.snr_db);
    SweepRow row;
    row.tag = keys[i].first;
    row.sweep_value = keys[i].second;
    row.count = snr.size();
    if (all_finite(snr)) {
      const Moments m = moments(snr);
      row.mean_db = m.mean;
      row.std_db = m.std;
      row.skewness = m.skewness;
      const RandomStream boot = RandomStream::keyed(seed, i, "sweep-bootstrap");
      row.mean_ci = bootstrap_ci(snr, sample_mean, boot.fork("mean"));
      row.std_ci = snr.size() >= 2 ? bootstrap_ci(snr, sample_std, boot.fork("std")) : ConfidenceInterval{};
    } else {
      row.mean_db = row.std_db = std::numeric_limits<double>::infinity();
    }
    rows.push_back(row);
  }
  std::sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
    return a.tag != b.tag ? a.tag < b.tag : a.sweep_value < b.sweep_value;
  });
  return rows;
}

}  // namespace ccmcf
