#include <doctest.h>

#include <cmath>
#include <limits>

#include "ccmcf/fft.hpp"
#include "ccmcf/ssfm_engine.hpp"
#include "ccmcf/transceiver.hpp"

using namespace ccmcf;

namespace {

WdmConfig small_wdm(int channels = 5, Eigen::Index symbols = 4096, int sps = 8) {
  WdmConfig cfg;
  cfg.num_channels = channels;
  cfg.symbols_per_block = symbols;
  cfg.samples_per_symbol = sps;
  return cfg;
}

double relative_error(const CVector& a, const CVector& b) { return (a - b).norm() / b.norm(); }

PolarizationSymbols awgn(const PolarizationSymbols& tx, double snr_db, RandomStream& rng) {
  const double var = std::pow(10.0, -snr_db / 10.0);
  PolarizationSymbols rx = tx;
  for (Eigen::Index k = 0; k < rx.x.size(); ++k) {
    rx.x(k) += rng.complex_gaussian(var);
    rx.y(k) += rng.complex_gaussian(var);
  }
  return rx;
}

PolarizationSymbols gaussian_symbols(Eigen::Index n, RandomStream& rng) {
  PolarizationSymbols s{CVector(n), CVector(n)};
  for (Eigen::Index k = 0; k < n; ++k) {
    s.x(k) = rng.complex_gaussian();
    s.y(k) = rng.complex_gaussian();
  }
  return s;
}

}  // namespace

TEST_CASE("WdmConfig validation") {
  CHECK_NOTHROW(WdmConfig{}.validate());
  WdmConfig a = small_wdm();
  a.spacing_hz = 60e9;
  CHECK_THROWS_AS(a.validate(), ConfigError);
  WdmConfig b = small_wdm();
  b.num_channels = 4;
  CHECK_THROWS_AS(b.validate(), ConfigError);
  WdmConfig c = small_wdm();
  c.symbols_per_block = 3000;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  WdmConfig d = small_wdm(9, 4096, 4);  // 9 x 75 GHz does not fit in 256 GHz
  CHECK_THROWS_AS(d.validate(), ConfigError);
  try {
    WdmConfig e = small_wdm();
    e.spacing_hz = 10e9;
    e.rolloff = 2.0;
    e.validate();
  } catch (const ConfigError& err) {
    const std::string msg = err.what();
    CHECK(msg.find("rolloff") != std::string::npos);
    CHECK(msg.find("spacing") != std::string::npos);
  }
}

TEST_CASE("rrc spectrum shape") {
  CHECK(rrc_spectrum(0.0, 64e9, 0.1) == 1.0);
  CHECK(rrc_spectrum(28.8e9, 64e9, 0.1) == 1.0);
  CHECK(rrc_spectrum(32e9, 64e9, 0.1) == doctest::Approx(std::sqrt(0.5)));
  CHECK(rrc_spectrum(35.2e9, 64e9, 0.1) == 0.0);
  // Nyquist: |h(f)|^2 + |h(f - Rs)|^2 = 1 on the transition band.
  for (double f : {29e9, 30.5e9, 33e9, 35e9}) {
    const double a = rrc_spectrum(f, 64e9, 0.1);
    const double b = rrc_spectrum(f - 64e9, 64e9, 0.1);
    CHECK(a * a + b * b == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("generate_wdm: occupied bandwidth of a single channel") {
  const WdmConfig cfg = small_wdm(1, 4096, 8);
  RandomStream rng(1);
  auto [field, frame] = generate_wdm(cfg, 1, rng);
  CMatrix s = field.samples;
  fft::forward(s);
  const double peak = s.col(0).cwiseAbs2().maxCoeff();
  double fmin = 0.0, fmax = 0.0;
  for (Eigen::Index k = 0; k < s.rows(); ++k) {
    if (std::norm(s(k, 0)) < 1e-12 * peak) continue;
    const double f = fft::bin_frequency(k, s.rows(), field.dt);
    fmin = std::min(fmin, f);
    fmax = std::max(fmax, f);
  }
  CHECK(fmax - fmin == doctest::Approx(64e9 * 1.1).epsilon(0.01));
}

TEST_CASE("generate_wdm: per-core power and symbol statistics") {
  const WdmConfig cfg = small_wdm(5, 65536, 8);
  RandomStream rng(2);
  auto [field, frame] = generate_wdm(cfg, 2, rng);
  REQUIRE(field.modes() == 4);
  REQUIRE(frame.symbols.size() == 5);
  const RVector p = field.mode_powers();
  for (int core = 0; core < 2; ++core)
    CHECK(10.0 * std::log10((p(2 * core) + p(2 * core + 1)) / 1e-3) == doctest::Approx(5.0 + 10.0 * std::log10(5.0)).epsilon(0.05 / 12.0));

  for (const auto& s : frame.symbols)
    for (Eigen::Index i = 0; i < s.cols(); ++i) {
      CHECK(s.col(i).squaredNorm() / static_cast<double>(s.rows()) == doctest::Approx(1.0).epsilon(0.02));
      const Complex rho = (s.col(i).head(s.rows() - 1).array() * s.col(i).tail(s.rows() - 1).array().conjugate()).sum() /
                          s.col(i).squaredNorm();
      CHECK(std::abs(rho) < 0.02);
    }
  // Distinct substreams.
  CHECK(std::abs(frame.symbols[0].col(0).dot(frame.symbols[1].col(0))) / 65536.0 < 0.02);
  CHECK(std::abs(frame.symbols[2].col(0).dot(frame.symbols[2].col(3))) / 65536.0 < 0.02);
}

TEST_CASE("demodulate_cut: back-to-back recovery, neighbour selection, leakage") {
  const WdmConfig cfg = small_wdm(5, 4096, 8);
  RandomStream rng(3);
  auto [field, frame] = generate_wdm(cfg, 2, rng);
  const double amp = std::sqrt(cfg.power_per_polarization_w());
  for (int core = 0; core < 2; ++core)
    for (int ch = 0; ch < 5; ++ch) {
      const PolarizationSymbols rx = demodulate_cut(field, cfg, core, ch);
      const PolarizationSymbols tx = cut_symbols(frame, core, ch);
      CHECK(relative_error(rx.x / amp, tx.x) < 1e-6);
      CHECK(relative_error(rx.y / amp, tx.y) < 1e-6);
    }

  // Leakage: the CUT alone versus the CUT plus four neighbours.
  const WdmConfig single = small_wdm(1, 4096, 8);
  RandomStream rng1(3);
  auto [alone, frame1] = generate_wdm(single, 1, rng1);
  const PolarizationSymbols a = demodulate_cut(alone, single, 0, 0);
  const PolarizationSymbols tx = cut_symbols(frame1, 0, 0);
  const double leak_db = 10.0 * std::log10((a.x / amp - tx.x).squaredNorm() / tx.x.squaredNorm());
  MESSAGE("single-channel residual: " << leak_db << " dB");
  const PolarizationSymbols crowded = demodulate_cut(field, cfg, 0, 2);
  const double crowd_db =
      10.0 * std::log10((crowded.x / amp - cut_symbols(frame, 0, 2).x).squaredNorm() / cut_symbols(frame, 0, 2).x.squaredNorm());
  CHECK(crowd_db < -40.0);

  CHECK_THROWS_AS(demodulate_cut(field, cfg, 2, 0), DimensionError);
  CHECK_THROWS_AS(demodulate_cut(field, cfg, 0, 5), DimensionError);
}

TEST_CASE("demodulation: power bookkeeping over channels and modes") {
  const WdmConfig cfg = small_wdm(3, 4096, 8);
  RandomStream rng(4);
  auto [field, frame] = generate_wdm(cfg, 2, rng);
  double demod = 0.0;
  for (int core = 0; core < 2; ++core)
    for (int ch = 0; ch < 3; ++ch) {
      const PolarizationSymbols r = demodulate_cut(field, cfg, core, ch);
      demod += (r.x.squaredNorm() + r.y.squaredNorm()) / 4096.0;
    }
  CHECK(demod == doctest::Approx(field.total_power()).epsilon(0.01));
}

TEST_CASE("zero_forcing_equalize: identity and exact inversion of a linear link") {
  const WdmConfig cfg = small_wdm(3, 1024, 8);
  RandomStream rng(5);
  auto [tx, frame] = generate_wdm(cfg, 2, rng);
  const auto omega = fft::omega_grid(tx.size(), tx.dt);

  TransferMatrix eye{omega, std::vector<CMatrix>(omega.size(), CMatrix::Identity(4, 4))};
  CHECK((zero_forcing_equalize(tx, eye).samples - tx.samples).norm() < 1e-12 * tx.samples.norm());

  FiberConfig fiber;
  fiber.gamma_per_w_km = 0.0;
  fiber.span_length_km = 2.0;
  fiber.smd_ps_per_sqrt_km = 3.0;
  AmplifierConfig amp;
  amp.ase_enabled = false;
  amp.gain_db = 0.4;
  std::vector<SpanRealization> spans;
  for (int s = 0; s < 2; ++s) {
    RandomStream srng = rng.fork(static_cast<std::uint64_t>(s));
    spans.push_back(draw_span(fiber, amp, 0.115, 4, srng));
  }
  RandomStream ase(6);
  const LinkResult link = run_link(tx, spans, StepController{}, ase);
  const MultimodeField eq = zero_forcing_equalize(link.rx, compose(link.record, omega));
  CHECK((eq.samples - tx.samples).norm() < 1e-9 * tx.samples.norm());

  // Band-restricted path gives the same CUT symbols.
  CMatrix spec = link.rx.samples;
  fft::forward(spec);
  const ChannelBand band = channel_band(cfg, 1);
  const PolarizationSymbols via_band = demodulate_band(zero_forcing_equalize_band(spec, link.record, band), band, cfg, 1);
  const PolarizationSymbols via_full = demodulate_cut(eq, cfg, 1, 1);
  CHECK(relative_error(via_band.x, via_full.x) < 1e-9);
  CHECK(relative_error(via_band.y, via_full.y) < 1e-9);
}

TEST_CASE("zero_forcing_equalize: singular channel reports its frequency") {
  const Eigen::Index n = 64;
  const double dt = 1e-12;
  MultimodeField rx(n, 2, dt);
  const auto omega = fft::omega_grid(n, dt);
  TransferMatrix tm{omega, std::vector<CMatrix>(omega.size(), CMatrix::Identity(2, 2))};
  tm.H[5](1, 1) = 1e-10;
  try {
    zero_forcing_equalize(rx, tm);
    FAIL("expected EqualizationError");
  } catch (const EqualizationError& e) {
    CHECK(e.frequency_hz == doctest::Approx(fft::bin_frequency(5, n, dt)));
  }
}

TEST_CASE("zero_forcing_equalize: equalized white noise has covariance S (H^dagger H)^-1") {
  // Two-span toy link with lumped elements only; noise added at the receiver.
  const Eigen::Index n = 4096;
  const Eigen::Index modes = 4;
  const double dt = 1e-12;
  const double psd = 1e-15;
  RandomStream rng(7);
  ChannelRecord rec;
  rec.modes = modes;
  for (int s = 0; s < 2; ++s) rec.append(make_mdl_element(modes, 0.3, rng));
  const auto omega = fft::omega_grid(n, dt);
  const TransferMatrix tm = compose(rec, omega);
  const CMatrix h = tm.H.front();
  const CMatrix expected = psd * (h.adjoint() * h).inverse();  // S H^-1 H^-dagger

  CMatrix cov = CMatrix::Zero(modes, modes);
  const int draws = 8;
  for (int d = 0; d < draws; ++d) {
    MultimodeField noise(n, modes, dt);
    for (Eigen::Index i = 0; i < modes; ++i)
      for (Eigen::Index k = 0; k < n; ++k) noise.samples(k, i) = rng.complex_gaussian(psd / dt);
    MultimodeField eq = zero_forcing_equalize(noise, tm);
    fft::forward(eq.samples);
    // Spectral covariance in W/Hz averaged over bins; one bin contributes |Y|^2 dt / n.
    cov += eq.samples.transpose() * eq.samples.conjugate() * (dt / (static_cast<double>(n) * static_cast<double>(n)));
  }
  cov /= static_cast<double>(draws);
  CHECK((cov - expected).norm() / expected.norm() < 0.05);
}

TEST_CASE("carrier_phase_recover") {
  RandomStream rng(8);
  const PolarizationSymbols tx = gaussian_symbols(65536, rng);
  const Complex rot = std::polar(1.0, 0.3);
  const PolarizationSymbols rx{tx.x * rot, tx.y * rot};
  const PhaseRecovery pr = carrier_phase_recover(rx, tx);
  CHECK(pr.theta_x == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(pr.theta_y == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(relative_error(pr.rotated.x, tx.x) < 1e-12);

  const PhaseRecovery same = carrier_phase_recover(tx, tx);
  CHECK(std::abs(same.theta_x) < 1e-15);
  CHECK(relative_error(same.rotated.x, tx.x) < 1e-15);

  const PhaseRecovery noisy = carrier_phase_recover(awgn(rx, 20.0, rng), tx);
  CHECK(std::abs(noisy.theta_x - 0.3) < 0.002);
  CHECK(std::abs(noisy.theta_y - 0.3) < 0.002);

  const PolarizationSymbols zero{CVector::Zero(16), CVector::Zero(16)};
  const PolarizationSymbols ref{CVector::Ones(16), CVector::Ones(16)};
  CHECK_THROWS_AS(carrier_phase_recover(zero, ref), UndefinedPhaseError);
  CHECK_THROWS_AS(carrier_phase_recover(PolarizationSymbols{CVector::Ones(4), CVector::Ones(4)}, ref), DimensionError);
}

TEST_CASE("estimate_snr") {
  RandomStream rng(9);
  const PolarizationSymbols tx = gaussian_symbols(65536, rng);

  const SnrRecord clean = estimate_snr(tx, tx);
  CHECK(clean.N_x < 1e-30);
  CHECK(clean.snr_db > 60.0);

  const SnrRecord r20 = estimate_snr(awgn(tx, 20.0, rng), tx);
  CHECK(r20.snr_db == doctest::Approx(20.0).epsilon(0.1 / 20.0));
  CHECK(r20.snr_db == 10.0 * std::log10((r20.P_x + r20.P_y) / (r20.N_x + r20.N_y)));
  CHECK(r20.P_x >= 0.0);
  CHECK(r20.N_y >= 0.0);

  // Two independent 20 dB impairments combine to 16.99 dB.
  const PolarizationSymbols both = awgn(awgn(tx, 20.0, rng), 20.0, rng);
  CHECK(estimate_snr(both, tx).snr_db == doctest::Approx(16.99).epsilon(0.2 / 17.0));

  // A deterministic complex gain is removed.
  const PolarizationSymbols scaled{tx.x * Complex(0.3, -0.1), tx.y * 2.0};
  const SnrRecord g = estimate_snr(scaled, tx);
  CHECK(g.P_x == doctest::Approx(0.1 * tx.x.squaredNorm() / 65536.0).epsilon(1e-12));
  CHECK(g.N_x < 1e-25);

  CHECK_THROWS_AS(estimate_snr(PolarizationSymbols{}, PolarizationSymbols{}), DimensionError);
}

TEST_CASE("scenario tags round-trip") {
  for (ScenarioTag t : {ScenarioTag::Ase, ScenarioTag::Nli, ScenarioTag::Both}) CHECK(parse_scenario_tag(to_string(t)) == t);
  CHECK_THROWS_AS(parse_scenario_tag("ase"), ConfigError);
}
