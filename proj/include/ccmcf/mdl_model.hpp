#pragma once

#include <span>
#include <vector>

#include "ccmcf/random.hpp"
#include "ccmcf/types.hpp"

namespace ccmcf {

/// Trace-free log-power gains of one section (power gain of mode i is e^{g_i}).
class GainVector {
 public:
  explicit GainVector(RVector g);

  /// g_i = (-1)^i sigma for i = 1..modes; modes must be even.
  static GainVector alternating(Eigen::Index modes, double sigma);
  static GainVector zeros(Eigen::Index modes);

  [[nodiscard]] const RVector& values() const { return g_; }
  [[nodiscard]] Eigen::Index size() const { return g_.size(); }
  [[nodiscard]] bool is_zero() const { return (g_.array() == 0.0).all(); }

  friend bool operator==(const GainVector& a, const GainVector& b) { return a.g_ == b.g_; }

 private:
  RVector g_;
};

/// Zero-mean per-mode group delays of one section, seconds.
class DelayVector {
 public:
  explicit DelayVector(RVector tau);

  static DelayVector zeros(Eigen::Index modes);

  [[nodiscard]] const RVector& values() const { return tau_; }
  [[nodiscard]] Eigen::Index size() const { return tau_.size(); }
  [[nodiscard]] bool is_zero() const { return (tau_.array() == 0.0).all(); }

 private:
  RVector tau_;
};

/// One waveplate / lumped MDL element: e^{mean_gain/2} V diag(e^{g_i/2 - j w tau_i}) U^dagger.
struct CouplingSection {
  CMatrix V;
  CMatrix U;
  GainVector gains;
  DelayVector delays;
  double mean_gain = 0.0;  // nepers of power

  [[nodiscard]] Eigen::Index modes() const { return V.rows(); }
};

/// Frequency-resolved channel matrix H(w) on an arbitrary grid of angular frequency offsets.
struct TransferMatrix {
  std::vector<double> omega;  // rad/s
  std::vector<CMatrix> H;

  [[nodiscard]] std::size_t size() const { return omega.size(); }
  [[nodiscard]] Eigen::Index modes() const { return H.empty() ? 0 : H.front().rows(); }
};

/// Log squared singular values, ascending.
struct SingularSpectrum {
  RVector g_sorted;

  [[nodiscard]] double g_min() const { return g_sorted(0); }
  [[nodiscard]] double g_max() const { return g_sorted(g_sorted.size() - 1); }
  [[nodiscard]] double sum() const { return g_sorted.sum(); }
};

/// Haar-distributed unitary: QR of a complex Ginibre matrix with the phases of diag(R) moved into Q.
CMatrix sample_haar_unitary(Eigen::Index dim, RandomStream& rng);

CouplingSection make_section(GainVector gains, DelayVector delays, double mean_gain, RandomStream& rng);

/// Lumped MDL element with alternating gains +-sigma_g and no delay.
CouplingSection make_mdl_element(Eigen::Index modes, double sigma_g, RandomStream& rng);

/// sigma_g giving an element peak-to-peak MDL of `pp_db` under the alternating-gain construction.
double sigma_g_from_peak_to_peak_db(double pp_db);

CMatrix section_response(const CouplingSection& s, double omega);

/// H(w) = M_K(w) ... M_1(w), section 0 of the list traversed first.
TransferMatrix compose(std::span<const CouplingSection> sections, std::span<const double> omega_grid);

SingularSpectrum singular_gains(const CMatrix& M);

/// 10 log10 of max/min squared singular value.
double peak_to_peak_db(const SingularSpectrum& s);

/// 1 ps/sqrt(km) expressed in s/sqrt(m).
inline constexpr double kPsPerSqrtKm = 1e-12 / 31.622776601683793;

/// Zero-mean Gaussian delays for one waveplate of length `section_length` (m) of a fiber with SMD
/// coefficient `kappa` (s/sqrt(m)). Each returned entry has standard deviation kappa*sqrt(length).
DelayVector calibrate_smd_delays(double kappa, double section_length, Eigen::Index modes, RandomStream& rng);

}  // namespace ccmcf
