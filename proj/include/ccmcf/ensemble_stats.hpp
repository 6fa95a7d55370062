#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ccmcf/channel_record.hpp"
#include "ccmcf/mdl_model.hpp"
#include "ccmcf/ssfm_engine.hpp"
#include "ccmcf/transceiver.hpp"

namespace ccmcf {

// ---------------------------------------------------------------------------
// Scenario description
// ---------------------------------------------------------------------------

enum class ScenarioKind { MdlMatrix, Link };
enum class Engine { Ssfm, Oracle };
enum class SweepVariable { None, SmdCoeff, MdlPeakToPeak, NumChannels };

std::string to_string(ScenarioKind k);
std::string to_string(Engine e);
std::string to_string(SweepVariable v);

/// Cascade of delay-free coupling sections, analysed at a single frequency.
struct MatrixEnsembleConfig {
  int num_modes = 8;
  int num_sections = 256;
  double sigma_g = 0.014;

  friend bool operator==(const MatrixEnsembleConfig&, const MatrixEnsembleConfig&) = default;
};

/// Lumped MDL element at each span end. At most one of the two fields is set; neither means no element.
struct ElementConfig {
  std::optional<double> peak_to_peak_db;
  std::optional<double> sigma_g;

  [[nodiscard]] std::optional<double> resolved_sigma_g() const;
  friend bool operator==(const ElementConfig&, const ElementConfig&) = default;
};

struct LinkConfig {
  int num_cores = 4;
  int num_spans = 10;
  FiberConfig fiber;
  AmplifierConfig amplifier;
  ElementConfig element;
  StepController step;
  WdmConfig wdm;
  int cut_core = 0;
  std::optional<int> cut_channel;  // default: center channel
  bool record_all_cores = false;

  [[nodiscard]] int modes() const { return 2 * num_cores; }
  [[nodiscard]] int resolved_cut_channel() const { return cut_channel.value_or(wdm.center_channel()); }
  friend bool operator==(const LinkConfig&, const LinkConfig&) = default;
};

struct BinningPolicy {
  std::optional<double> fixed_width;  // Freedman-Diaconis when unset
  friend bool operator==(const BinningPolicy&, const BinningPolicy&) = default;
};

struct SweepSpec {
  SweepVariable variable = SweepVariable::None;
  std::vector<double> values;
  std::vector<double> power_dbm;  // optional per-point channel power, same length as values

  /// Sweep values, or a single 0 when there is no sweep.
  [[nodiscard]] std::vector<double> points() const;
  friend bool operator==(const SweepSpec&, const SweepSpec&) = default;
};

struct Scenario {
  std::string name = "scenario";
  ScenarioKind kind = ScenarioKind::Link;
  MatrixEnsembleConfig matrix;
  LinkConfig link;
  std::vector<ScenarioTag> tags{ScenarioTag::Both};
  Engine engine = Engine::Ssfm;
  SweepSpec sweep;
  std::uint64_t num_realizations = 100;
  std::uint64_t master_seed = 1;
  BinningPolicy binning;

  /// Throws ConfigError listing every violated bound.
  void validate() const;
  /// The scenario at one sweep point.
  [[nodiscard]] Scenario at_sweep_point(double value) const;
  friend bool operator==(const Scenario&, const Scenario&) = default;
};

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

struct Histogram {
  std::vector<double> edges;          // size bins + 1
  std::vector<double> density;        // integrates to 1
  std::vector<std::size_t> counts;
  std::size_t samples = 0;
  std::string warning;                // set for degenerate inputs

  [[nodiscard]] std::size_t bins() const { return density.size(); }
  [[nodiscard]] double bin_width(std::size_t i) const { return edges[i + 1] - edges[i]; }
  [[nodiscard]] double center(std::size_t i) const { return 0.5 * (edges[i] + edges[i + 1]); }
  [[nodiscard]] double integral() const;
};

inline constexpr std::size_t kMinPdfSamples = 30;

/// Density histogram. Throws DimensionError for fewer than kMinPdfSamples samples.
Histogram estimate_pdf(std::span<const double> samples, const BinningPolicy& policy = {});
/// Density histogram on given edges; samples outside are dropped from the counts but not from the normalisation.
Histogram histogram_on_edges(std::span<const double> samples, std::vector<double> edges);

/// Max |F_hist - F| over the histogram edges, with F_hist the piecewise-linear CDF of the histogram.
double ks_distance(const Histogram& h, const std::function<double(double)>& cdf);
/// Two-sample Kolmogorov-Smirnov statistic.
double ks_two_sample(std::vector<double> a, std::vector<double> b);

/// Local maxima of a histogram after 3-bin smoothing whose prominence exceeds `sigmas` Poisson standard deviations.
std::size_t count_peaks(const Histogram& h, double sigmas = 2.0);

struct Moments {
  std::size_t count = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1)
  double skewness = 0.0;
};

Moments moments(std::span<const double> x);
double correlation(std::span<const double> x, std::span<const double> y);

struct ConfidenceInterval {
  double lo = 0.0;
  double hi = 0.0;
  [[nodiscard]] bool contains(double v) const { return lo <= v && v <= hi; }
};

inline constexpr std::size_t kBootstrapResamples = 1000;

/// Percentile bootstrap interval of `statistic`.
ConfidenceInterval bootstrap_ci(std::span<const double> x, const std::function<double(std::span<const double>)>& statistic,
                                RandomStream rng, std::size_t resamples = kBootstrapResamples, double level = 0.95);
double sample_mean(std::span<const double> x);
double sample_std(std::span<const double> x);

/// SNR deviation from the ensemble mean, dB. Needs at least two records.
std::vector<double> delta_snr(std::span<const SnrRecord> records);

struct OrderStatistics {
  std::vector<Histogram> marginals;  // i-th sorted gain, dB
  Histogram mixture;                 // pooled, same edges as the marginals
};

/// Histograms of 4.343 * g_(i) for every order statistic plus the pooled mixture.
OrderStatistics order_statistics_pdfs(std::span<const SingularSpectrum> spectra, const BinningPolicy& policy = {});

// ---------------------------------------------------------------------------
// Matrix-only linear SNR
// ---------------------------------------------------------------------------

/// ASE-only SNR of `channel` after zero forcing, for each core in `cores`, from the channel record alone.
/// Noise of amplifier k reaches the equalizer output through H_{1..k}^{-1}; only the CUT band is evaluated, and a
/// single bin suffices when the record has no delays.
std::vector<SnrRecord> linear_snr_oracle(const ChannelRecord& record, const WdmConfig& wdm, int channel,
                                         std::span<const int> cores);
SnrRecord linear_snr_oracle(const ChannelRecord& record, const WdmConfig& wdm, int channel = -1, int core = 0);

/// The channel record a link would produce, without propagating a field.
ChannelRecord link_channel_record(std::span<const SpanRealization> spans, Eigen::Index modes,
                                  double f0 = kReferenceFrequency);

// ---------------------------------------------------------------------------
// Ensembles
// ---------------------------------------------------------------------------

struct RealizationFailure {
  std::uint64_t realization_id = 0;
  double sweep_value = 0.0;
  std::string message;
};

/// Moments of one (tag, sweep point) group on the CUT core.
struct GroupStats {
  ScenarioTag tag = ScenarioTag::Both;
  double sweep_value = 0.0;
  Moments snr;                         // snr_db
  ConfidenceInterval mean_ci;
  ConfidenceInterval std_ci;
  Moments delta;                       // delta SNR
  double corr_xy = 0.0;                // corr(dSNR_x, dSNR_y)
  std::optional<Histogram> delta_pdf;  // needs kMinPdfSamples records
  std::optional<double> pooled_best_mean;   // all-core records only
  std::optional<double> pooled_worst_mean;
};

struct EnsembleSummary {
  std::string scenario_name;
  std::uint64_t requested_realizations = 0;
  std::vector<SnrRecord> records;
  std::vector<SingularSpectrum> spectra;  // matrix scenarios
  std::vector<GroupStats> groups;
  std::optional<OrderStatistics> order_stats;
  std::optional<Moments> mdl_db;          // peak-to-peak MDL, matrix scenarios
  std::vector<RealizationFailure> failures;
};

class EnsembleError : public NumericalError {
 public:
  EnsembleError(const std::string& what, std::vector<RealizationFailure> f) : NumericalError(what), failures(std::move(f)) {}
  std::vector<RealizationFailure> failures;
};

using ProgressCallback = std::function<void(std::size_t done, std::size_t total)>;

/// Peak-to-peak MDL of one matrix realization (helper for matrix scenarios and tests).
SingularSpectrum matrix_realization(const MatrixEnsembleConfig& cfg, RandomStream rng);

/// SNR records of one link realization: one per tag and recorded core.
std::vector<SnrRecord> link_realization(const Scenario& scenario, std::uint64_t realization_id, double sweep_value);

/// Runs every (sweep point, realization) job on `workers` threads. Results depend only on the scenario.
EnsembleSummary run_ensemble(const Scenario& scenario, unsigned workers = 1, const ProgressCallback& progress = {});

/// Recomputes groups, order statistics and MDL moments from records/spectra, binned per scenario.binning.
void summarize(EnsembleSummary& summary, const Scenario& scenario);

struct SweepRow {
  ScenarioTag tag = ScenarioTag::Both;
  double sweep_value = 0.0;
  std::size_t count = 0;
  double mean_db = 0.0;
  double std_db = 0.0;
  ConfidenceInterval mean_ci;
  ConfidenceInterval std_ci;
  double skewness = 0.0;
};

/// Mean/std of snr_db per (tag, sweep point) on `core`, with bootstrap 95% intervals.
std::vector<SweepRow> sweep_summary(std::span<const SnrRecord> records, std::uint64_t seed, int core = 0);

}  // namespace ccmcf
