#include <doctest.h>

#include <cmath>
#include <numeric>

#include "ccmcf/ensemble_stats.hpp"

using namespace ccmcf;

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

std::vector<double> normal_samples(std::size_t n, std::uint64_t seed) {
  RandomStream rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.gaussian();
  return v;
}

WdmConfig small_wdm(Eigen::Index symbols = 2048) {
  WdmConfig w;
  w.num_channels = 3;
  w.symbols_per_block = symbols;
  w.samples_per_symbol = 8;
  return w;
}

Scenario small_link(int cores, int spans) {
  Scenario s;
  s.name = "small";
  s.link.num_cores = cores;
  s.link.num_spans = spans;
  s.link.wdm = small_wdm();
  s.tags = {ScenarioTag::Ase};
  s.num_realizations = 4;
  return s;
}

SnrRecord with_snr(double db) {
  SnrRecord r;
  r.snr_db = db;
  return r;
}

}  // namespace

TEST_CASE("delta_snr subtracts the ensemble mean") {
  const std::vector<SnrRecord> two{with_snr(17.2), with_snr(16.8)};
  const auto d = delta_snr(two);
  CHECK(d[0] == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(d[1] == doctest::Approx(-0.2).epsilon(1e-12));

  const std::vector<SnrRecord> flat{with_snr(15.0), with_snr(15.0), with_snr(15.0)};
  for (double v : delta_snr(flat)) CHECK(v == 0.0);

  std::vector<SnrRecord> many;
  RandomStream rng(3);
  for (int i = 0; i < 500; ++i) many.push_back(with_snr(18.0 + rng.gaussian()));
  const auto dm = delta_snr(many);
  CHECK(std::abs(sample_mean(dm)) < 1e-12);

  const std::vector<SnrRecord> one{with_snr(1.0)};
  CHECK_THROWS_AS(delta_snr(one), DimensionError);
}

TEST_CASE("estimate_pdf recovers known distributions") {
  SUBCASE("standard normal, Freedman-Diaconis") {
    const auto x = normal_samples(100000, 11);
    const Histogram h = estimate_pdf(x);
    CHECK(h.integral() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(ks_distance(h, normal_cdf) < 0.01);
    CHECK(count_peaks(h) == 1);
  }
  SUBCASE("uniform on [0, 1]") {
    RandomStream rng(12);
    std::vector<double> x(1000000);
    for (auto& v : x) v = 1.0 - rng.uniform();
    const Histogram fd = estimate_pdf(x);
    CHECK(fd.bins() > 50);
    for (double d : fd.density) CHECK(d == doctest::Approx(1.0).epsilon(0.05));
    const Histogram fixed = estimate_pdf(x, BinningPolicy{0.1});
    CHECK(fixed.bins() == 10);
    CHECK(fixed.edges.front() == 0.0);
    for (double d : fixed.density) CHECK(d == doctest::Approx(1.0).epsilon(0.05));
  }
  SUBCASE("degenerate sample") {
    const std::vector<double> x(40, 2.5);
    const Histogram h = estimate_pdf(x);
    CHECK(h.bins() == 1);
    CHECK_FALSE(h.warning.empty());
    CHECK(h.integral() == doctest::Approx(1.0));
  }
  SUBCASE("too few samples") {
    const std::vector<double> x(29, 1.0);
    CHECK_THROWS_AS(estimate_pdf(x), DimensionError);
  }
}

TEST_CASE("count_peaks separates modes") {
  auto x = normal_samples(20000, 21);
  for (std::size_t i = 0; i < x.size() / 2; ++i) x[i] += 8.0;
  CHECK(count_peaks(estimate_pdf(x)) == 2);
}

TEST_CASE("moments, correlation and bootstrap") {
  const std::vector<double> x{1, 2, 3, 4, 10};
  const Moments m = moments(x);
  CHECK(m.mean == doctest::Approx(4.0));
  CHECK(m.std == doctest::Approx(std::sqrt(50.0 / 4.0)));
  CHECK(m.skewness > 0.0);

  const std::vector<double> y{2, 4, 6, 8, 20};
  const std::vector<double> z{-1, -2, -3, -4, -10};
  CHECK(correlation(x, y) == doctest::Approx(1.0));
  CHECK(correlation(x, z) == doctest::Approx(-1.0));

  const auto s = normal_samples(400, 31);
  const ConfidenceInterval ci = bootstrap_ci(s, sample_mean, RandomStream(5));
  CHECK(ci.contains(sample_mean(s)));
  CHECK(ci.contains(0.0));
  CHECK(ci.hi - ci.lo == doctest::Approx(2 * 1.96 / 20.0).epsilon(0.2));
  const ConfidenceInterval again = bootstrap_ci(s, sample_mean, RandomStream(5));
  CHECK(again.lo == ci.lo);
  CHECK(again.hi == ci.hi);
}

TEST_CASE("order statistics pooling") {
  MatrixEnsembleConfig cfg{2, 256, 0.0076};
  std::vector<SingularSpectrum> spectra;
  for (std::uint64_t r = 0; r < 2000; ++r) spectra.push_back(matrix_realization(cfg, RandomStream::keyed(9, r, "matrix")));
  const OrderStatistics os = order_statistics_pdfs(spectra);
  REQUIRE(os.marginals.size() == 2);
  for (std::size_t b = 0; b < os.mixture.bins(); ++b) {
    CHECK(os.mixture.density[b] == 0.5 * (os.marginals[0].density[b] + os.marginals[1].density[b]));
    CHECK(os.mixture.counts[b] == os.marginals[0].counts[b] + os.marginals[1].counts[b]);
  }
  CHECK(os.mixture.integral() == doctest::Approx(1.0).epsilon(1e-9));

  std::vector<double> low, high;
  for (const auto& s : spectra) {
    low.push_back(-kNepersToDb * s.g_sorted(0));
    high.push_back(kNepersToDb * s.g_sorted(1));
  }
  CHECK(ks_two_sample(low, high) < 0.02);

  std::vector<SingularSpectrum> ident(40, singular_gains(CMatrix::Identity(4, 4)));
  const OrderStatistics io = order_statistics_pdfs(ident);
  REQUIRE(io.mixture.bins() == 1);
  CHECK(io.mixture.edges[0] < 0.0);
  CHECK(io.mixture.edges[1] > 0.0);
  CHECK(io.mixture.density[0] * io.mixture.bin_width(0) == doctest::Approx(1.0));
}

TEST_CASE("linear_snr_oracle: analytic anchors") {
  SUBCASE("ten-span link without MDL or SMD") {
    Scenario s;
    s.link.num_spans = 10;
    RandomStream rng(1);
    const std::vector<SpanRealization> spans(10, draw_span(s.link.fiber, s.link.amplifier, std::nullopt, 8, rng));
    const ChannelRecord rec = link_channel_record(spans, 8);
    const SnrRecord r = linear_snr_oracle(rec, s.link.wdm);
    const double S = s.link.amplifier.ase_psd();
    CHECK(S == doctest::Approx(2.551e-17).epsilon(1e-3));
    CHECK(r.N_x == doctest::Approx(10 * S * 64e9).epsilon(1e-9));
    CHECK(r.N_y == doctest::Approx(10 * S * 64e9).epsilon(1e-9));
    CHECK(r.P_x + r.P_y == doctest::Approx(3.162e-3).epsilon(1e-3));
    CHECK(r.snr_db == doctest::Approx(19.86).epsilon(0.05 / 19.86));
  }
  SUBCASE("single amplifier at the receiver") {
    ChannelRecord rec;
    rec.modes = 2;
    rec.append(AmplifierGain{1.0, 1e-17});
    const WdmConfig w = small_wdm();
    const SnrRecord r = linear_snr_oracle(rec, w);
    CHECK(r.N_x == doctest::Approx(1e-17 * w.symbol_rate_baud).epsilon(1e-12));
    CHECK(r.N_y == doctest::Approx(1e-17 * w.symbol_rate_baud).epsilon(1e-12));
  }
}

TEST_CASE("linear_snr_oracle matches explicit per-bin composition") {
  const int modes = 4;
  FiberConfig fiber;
  fiber.span_length_km = 20.0;
  fiber.waveplate_length_km = 2.0;
  fiber.smd_ps_per_sqrt_km = 3.0;
  AmplifierConfig amp;
  amp.gain_db = 4.0;
  RandomStream rng(77);
  std::vector<SpanRealization> spans;
  for (int k = 0; k < 2; ++k) {
    RandomStream rs = rng.fork(static_cast<std::uint64_t>(k));
    spans.push_back(draw_span(fiber, amp, sigma_g_from_peak_to_peak_db(1.0), modes, rs));
  }
  const ChannelRecord rec = link_channel_record(spans, modes);
  REQUIRE_FALSE(rec.frequency_flat());
  const WdmConfig w = small_wdm(256);
  const int ch = 2;
  const int cores[] = {0, 1};
  const auto fast = linear_snr_oracle(rec, w, ch, cores);

  // Brute force: T_k = H_{1..k}^{-1} composed explicitly at every band bin.
  const ChannelBand band = channel_band(w, ch);
  std::vector<double> noise(modes, 0.0);
  ChannelRecord prefix;
  prefix.modes = modes;
  for (const auto& e : rec.elements) {
    prefix.append(e);
    const auto* a = std::get_if<AmplifierGain>(&e);
    if (!a) continue;
    const TransferMatrix H = compose(prefix, band.omega);
    for (std::size_t b = 0; b < band.bins.size(); ++b) {
      const CMatrix T = H.H[b].inverse();
      for (int p = 0; p < modes; ++p) noise[p] += band.filter[b] * band.filter[b] * a->ase_psd * T.row(p).squaredNorm();
    }
  }
  const double df = w.symbol_rate_baud / static_cast<double>(w.symbols_per_block);
  for (int c = 0; c < 2; ++c) {
    CHECK(fast[c].core == c);
    CHECK(fast[c].N_x == doctest::Approx(df * noise[2 * c]).epsilon(1e-9));
    CHECK(fast[c].N_y == doctest::Approx(df * noise[2 * c + 1]).epsilon(1e-9));
  }
}

TEST_CASE("oracle flat path equals the band path") {
  RandomStream rng(5);
  ChannelRecord rec;
  rec.modes = 4;
  FiberConfig fiber;
  for (int k = 0; k < 3; ++k) {
    RandomStream rs = rng.fork(static_cast<std::uint64_t>(k));
    rec.append(fiber.response());
    rec.append(make_mdl_element(4, 0.2, rs));
    rec.append(AmplifierGain{100.0, 2e-17});
  }
  REQUIRE(rec.frequency_flat());
  const WdmConfig w = small_wdm(256);
  const SnrRecord flat = linear_snr_oracle(rec, w, 0, 1);
  // A zero-length dispersive fiber with a tiny delay section forces the band path without changing H.
  ChannelRecord forced = rec;
  RVector tau = RVector::Zero(4);
  tau(0) = 1e-30;
  tau(1) = -1e-30;
  forced.elements.insert(forced.elements.begin(),
                         CouplingSection{CMatrix::Identity(4, 4), CMatrix::Identity(4, 4), GainVector::zeros(4),
                                         DelayVector(tau), 0.0});
  REQUIRE_FALSE(forced.frequency_flat());
  const SnrRecord band = linear_snr_oracle(forced, w, 0, 1);
  CHECK(band.N_x == doctest::Approx(flat.N_x).epsilon(1e-9));
  CHECK(band.N_y == doctest::Approx(flat.N_y).epsilon(1e-9));
}

TEST_CASE("scenario validation lists every violation") {
  Scenario s = small_link(2, 2);
  s.link.wdm.spacing_hz = 50e9;
  s.num_realizations = 0;
  s.engine = Engine::Oracle;
  s.tags = {ScenarioTag::Both};
  try {
    s.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("num_realizations") != std::string::npos);
    CHECK(msg.find("spacing") != std::string::npos);
    CHECK(msg.find("oracle") != std::string::npos);
  }
  Scenario sw = small_link(1, 1);
  sw.sweep = {SweepVariable::NumChannels, {3, 4}};
  CHECK_THROWS_AS(sw.validate(), ConfigError);
  sw.sweep = {SweepVariable::NumChannels, {1, 3}};
  CHECK_NOTHROW(sw.validate());
  CHECK(sw.at_sweep_point(1).link.wdm.num_channels == 1);
  CHECK(sw.at_sweep_point(1).link.resolved_cut_channel() == 0);
}

TEST_CASE("run_ensemble is reproducible under any worker count") {
  Scenario s = small_link(2, 2);
  s.engine = Engine::Oracle;
  s.link.fiber.span_length_km = 10.0;
  s.link.fiber.waveplate_length_km = 1.0;
  s.link.fiber.smd_ps_per_sqrt_km = 2.0;
  s.link.element.peak_to_peak_db = 1.0;
  s.link.record_all_cores = true;
  s.num_realizations = 12;
  s.sweep = {SweepVariable::MdlPeakToPeak, {0.5, 1.0}};
  const EnsembleSummary a = run_ensemble(s, 1);
  const EnsembleSummary b = run_ensemble(s, 3);
  REQUIRE(a.records.size() == 12 * 2 * 2);
  REQUIRE(b.records.size() == a.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].realization_id == b.records[i].realization_id);
    CHECK(a.records[i].N_x == b.records[i].N_x);
    CHECK(a.records[i].N_y == b.records[i].N_y);
  }
  REQUIRE(a.groups.size() == 2);
  CHECK(a.groups[0].snr.mean == b.groups[0].snr.mean);
  CHECK(a.groups[1].std_ci.lo == b.groups[1].std_ci.lo);
  CHECK(a.groups[0].pooled_best_mean.has_value());
  CHECK(*a.groups[0].pooled_best_mean > 0.0);
  CHECK(*a.groups[0].pooled_worst_mean < 0.0);
  // Common random numbers: larger MDL elements lower the mean SNR on the same channel draws.
  CHECK(a.groups[1].snr.mean < a.groups[0].snr.mean);
}

TEST_CASE("run_ensemble: one realization, no histogram") {
  Scenario s = small_link(1, 1);
  s.engine = Engine::Oracle;
  s.num_realizations = 1;
  const EnsembleSummary sum = run_ensemble(s);
  REQUIRE(sum.records.size() == 1);
  REQUIRE(sum.groups.size() == 1);
  CHECK_FALSE(sum.groups[0].delta_pdf.has_value());
}

TEST_CASE("matrix ensembles carry MDL moments and order statistics") {
  Scenario s;
  s.kind = ScenarioKind::MdlMatrix;
  s.matrix = {4, 16, 0.05};
  s.num_realizations = 50;
  const EnsembleSummary sum = run_ensemble(s, 2);
  CHECK(sum.spectra.size() == 50);
  REQUIRE(sum.mdl_db.has_value());
  CHECK(sum.mdl_db->mean > 0.0);
  REQUIRE(sum.order_stats.has_value());
  CHECK(sum.order_stats->marginals.size() == 4);
  for (const auto& sp : sum.spectra) CHECK(std::abs(sp.sum()) < 1e-9);
}

TEST_CASE("SSFM ASE-only ensemble without channel randomness is tight") {
  Scenario s = small_link(1, 2);
  s.link.wdm = small_wdm(16384);
  s.num_realizations = 20;
  const EnsembleSummary sum = run_ensemble(s);
  REQUIRE(sum.groups.size() == 1);
  CHECK(sum.groups[0].snr.count == 20);
  CHECK(sum.groups[0].snr.std < 0.05);
  // Two spans of the default amplifier: SNR = P / (2 S Rs) per polarization.
  const double expect = linear_to_db(s.link.wdm.power_per_polarization_w() /
                                     (2 * s.link.amplifier.ase_psd() * s.link.wdm.symbol_rate_baud));
  CHECK(sum.groups[0].snr.mean == doctest::Approx(expect).epsilon(0.05 / expect));
}

TEST_CASE("SSFM and oracle agree on a linear link with MDL and SMD") {
  Scenario s = small_link(2, 2);
  s.link.wdm = small_wdm(16384);
  s.link.fiber.span_length_km = 50.0;
  s.link.fiber.waveplate_length_km = 1.0;
  s.link.fiber.smd_ps_per_sqrt_km = 2.0;
  s.link.amplifier.gain_db = 10.0;
  s.link.element.peak_to_peak_db = 1.0;
  s.link.record_all_cores = true;
  for (std::uint64_t r = 0; r < 2; ++r) {
    const auto ssfm = link_realization(s, r, 0.0);
    Scenario o = s;
    o.engine = Engine::Oracle;
    const auto oracle = link_realization(o, r, 0.0);
    REQUIRE(ssfm.size() == oracle.size());
    for (std::size_t i = 0; i < ssfm.size(); ++i) {
      CHECK(ssfm[i].core == oracle[i].core);
      CHECK(ssfm[i].snr_db == doctest::Approx(oracle[i].snr_db).epsilon(0.1 / oracle[i].snr_db));
    }
  }
}

TEST_CASE("sweep_summary tables") {
  std::vector<SnrRecord> recs;
  RandomStream rng(8);
  for (double v : {8.0, 0.0}) {
    for (int r = 0; r < 50; ++r) {
      SnrRecord x = with_snr(15.0 + v / 8.0 + 0.1 * rng.gaussian());
      x.sweep_value = v;
      x.tag = ScenarioTag::Nli;
      recs.push_back(x);
    }
  }
  const auto rows = sweep_summary(recs, 1);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].sweep_value == 0.0);
  CHECK(rows[1].sweep_value == 8.0);
  CHECK(rows[0].count == 50);
  CHECK(rows[1].mean_db - rows[0].mean_db == doctest::Approx(1.0).epsilon(0.05));
  CHECK(rows[0].mean_ci.contains(rows[0].mean_db));
  CHECK(rows[1].std_ci.contains(rows[1].std_db));

  const std::vector<SnrRecord> single(recs.begin(), recs.begin() + 50);
  CHECK(sweep_summary(single, 1).size() == 1);
}
