#include "ccmcf/mdl_model.hpp"

#include <algorithm>
#include <cmath>

namespace ccmcf {

GainVector::GainVector(RVector g) : g_(std::move(g)) {
  if (g_.size() < 2 || g_.size() % 2 != 0) throw DimensionError("gain vector length must be 2N with N >= 1");
  if (!g_.allFinite()) throw ConfigError("gain vector has non-finite entries");
  if (std::abs(g_.sum()) > 1e-12) throw ConfigError("gain vector must be trace-free (sum of gains = 0)");
}

GainVector GainVector::alternating(Eigen::Index modes, double sigma) {
  RVector g(modes);
  for (Eigen::Index i = 0; i < modes; ++i) g(i) = (i % 2 == 0) ? -sigma : sigma;
  return GainVector(std::move(g));
}

GainVector GainVector::zeros(Eigen::Index modes) { return GainVector(RVector::Zero(modes)); }

DelayVector::DelayVector(RVector tau) : tau_(std::move(tau)) {
  if (tau_.size() < 2 || tau_.size() % 2 != 0) throw DimensionError("delay vector length must be 2N with N >= 1");
  if (!tau_.allFinite()) throw ConfigError("delay vector has non-finite entries");
  if (std::abs(tau_.mean()) > 1e-18) throw ConfigError("delay vector must have zero mean");
}

DelayVector DelayVector::zeros(Eigen::Index modes) { return DelayVector(RVector::Zero(modes)); }

CMatrix sample_haar_unitary(Eigen::Index dim, RandomStream& rng) {
  if (dim <= 0) throw DimensionError("Haar unitary dimension must be positive");
  CMatrix z(dim, dim);
  for (Eigen::Index c = 0; c < dim; ++c)
    for (Eigen::Index r = 0; r < dim; ++r) z(r, c) = rng.complex_gaussian();

  Eigen::HouseholderQR<CMatrix> qr(z);
  CMatrix q = qr.householderQ();
  const CMatrix& r = qr.matrixQR();
  for (Eigen::Index c = 0; c < dim; ++c) {
    const double mag = std::abs(r(c, c));
    const Complex phase = mag > 0.0 ? r(c, c) / mag : Complex(1.0, 0.0);
    q.col(c) *= phase;
  }
  return q;
}

CouplingSection make_section(GainVector gains, DelayVector delays, double mean_gain, RandomStream& rng) {
  if (gains.size() != delays.size()) throw DimensionError("gain and delay vectors differ in length");
  const Eigen::Index n = gains.size();
  CouplingSection s{sample_haar_unitary(n, rng), CMatrix(), std::move(gains), std::move(delays), mean_gain};
  s.U = sample_haar_unitary(n, rng);
  return s;
}

CouplingSection make_mdl_element(Eigen::Index modes, double sigma_g, RandomStream& rng) {
  return make_section(GainVector::alternating(modes, sigma_g), DelayVector::zeros(modes), 0.0, rng);
}

double sigma_g_from_peak_to_peak_db(double pp_db) { return pp_db / (2.0 * kNepersToDb); }

CMatrix section_response(const CouplingSection& s, double omega) {
  const Eigen::Index n = s.modes();
  CVector d(n);
  const RVector& g = s.gains.values();
  const RVector& tau = s.delays.values();
  const double common = std::exp(0.5 * s.mean_gain);
  for (Eigen::Index i = 0; i < n; ++i) d(i) = common * std::exp(Complex(0.5 * g(i), -omega * tau(i)));
  return s.V * d.asDiagonal() * s.U.adjoint();
}

TransferMatrix compose(std::span<const CouplingSection> sections, std::span<const double> omega_grid) {
  if (sections.empty()) throw DimensionError("compose needs at least one section");
  if (omega_grid.empty()) throw DimensionError("compose needs a nonempty frequency grid");
  const Eigen::Index n = sections.front().modes();
  for (const auto& s : sections)
    if (s.modes() != n) throw DimensionError("sections differ in mode count");

  TransferMatrix tm;
  tm.omega.assign(omega_grid.begin(), omega_grid.end());
  tm.H.reserve(omega_grid.size());
  for (double w : omega_grid) {
    CMatrix h = section_response(sections.front(), w);
    for (std::size_t k = 1; k < sections.size(); ++k) h = section_response(sections[k], w) * h;
    tm.H.push_back(std::move(h));
  }
  return tm;
}

SingularSpectrum singular_gains(const CMatrix& M) {
  if (!M.allFinite()) throw NumericalError("singular_gains: matrix has non-finite entries");
  Eigen::JacobiSVD<CMatrix> svd(M);
  RVector g = (2.0 * svd.singularValues().array().log()).matrix();
  std::sort(g.data(), g.data() + g.size());
  return {std::move(g)};
}

double peak_to_peak_db(const SingularSpectrum& s) { return kNepersToDb * (s.g_max() - s.g_min()); }

DelayVector calibrate_smd_delays(double kappa, double section_length, Eigen::Index modes, RandomStream& rng) {
  if (kappa < 0.0) throw ConfigError("SMD coefficient must be nonnegative");
  if (section_length <= 0.0) throw ConfigError("section length must be positive");
  if (modes < 2 || modes % 2 != 0) throw DimensionError("mode count must be 2N with N >= 1");
  if (kappa == 0.0) return DelayVector::zeros(modes);

  // Re-centering i.i.d. draws shrinks the marginal variance by (n-1)/n; compensate so every entry
  // keeps standard deviation kappa*sqrt(length).
  const double n = static_cast<double>(modes);
  const double sigma = kappa * std::sqrt(section_length) * std::sqrt(n / (n - 1.0));
  RVector tau(modes);
  for (Eigen::Index i = 0; i < modes; ++i) tau(i) = sigma * rng.gaussian();
  tau.array() -= tau.mean();
  tau.array() -= tau.mean();
  return DelayVector(std::move(tau));
}

}  // namespace ccmcf
