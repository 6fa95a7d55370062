#include "ccmcf/ssfm_engine.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "ccmcf/fft.hpp"

namespace ccmcf {

double FiberConfig::beta2_s2_per_km(double f0) const {
  const double lambda = kSpeedOfLight / f0;                       // m
  const double d = dispersion_ps_per_nm_km * 1e-12 / 1e-9;       // s/m per km
  return -d * lambda * lambda / (2.0 * kPi * kSpeedOfLight);      // s^2/km
}

std::size_t FiberConfig::waveplates_per_span() const {
  return static_cast<std::size_t>(std::llround(span_length_km / waveplate_length_km));
}

void FiberConfig::validate() const {
  if (!(attenuation_db_per_km >= 0.0)) throw ConfigError("fiber attenuation must be >= 0 dB/km");
  if (!(gamma_per_w_km >= 0.0)) throw ConfigError("fiber nonlinear coefficient must be >= 0");
  if (!(smd_ps_per_sqrt_km >= 0.0)) throw ConfigError("fiber SMD coefficient must be >= 0");
  if (!(span_length_km > 0.0)) throw ConfigError("span length must be positive");
  if (!(waveplate_length_km > 0.0)) throw ConfigError("waveplate length must be positive");
  if (!std::isfinite(dispersion_ps_per_nm_km)) throw ConfigError("dispersion must be finite");
  const double ratio = span_length_km / waveplate_length_km;
  if (std::abs(ratio - std::round(ratio)) > 1e-6 * ratio)
    throw ConfigError("waveplate length must divide the span length");
}

double AmplifierConfig::ase_psd(double f0) const {
  const double g = db_to_linear(gain_db);
  if (g == 1.0) return 0.0;
  const double f = db_to_linear(noise_figure_db);
  const double nsp = f * g / (2.0 * (g - 1.0));
  return nsp * kPlanck * f0 * (g - 1.0);
}

void AmplifierConfig::validate() const {
  if (!(gain_db >= 0.0)) throw ConfigError("amplifier gain must be >= 0 dB");
  if (!std::isfinite(noise_figure_db)) throw ConfigError("amplifier noise figure must be finite");
}

void StepController::validate() const {
  if (!(min_step_km > 0.0)) throw ConfigError("minimum step must be positive");
  if (!(min_step_km <= initial_step_km)) throw ConfigError("minimum step must not exceed the initial step");
  if (!(local_error_target > 0.0)) throw ConfigError("local error target must be positive");
}

SpanRealization draw_span(const FiberConfig& fiber, const AmplifierConfig& amplifier, std::optional<double> element_sigma_g,
                          Eigen::Index modes, RandomStream& rng) {
  SpanRealization span{fiber, {}, std::nullopt, amplifier};
  if (fiber.smd_ps_per_sqrt_km > 0.0) {
    const std::size_t count = fiber.waveplates_per_span();
    const double kappa = fiber.smd_ps_per_sqrt_km * kPsPerSqrtKm;
    const double length_m = fiber.waveplate_length_km * 1e3;
    span.waveplates.reserve(count);
    RandomStream coupling = rng.fork("waveplates");
    for (std::size_t k = 0; k < count; ++k) {
      RandomStream plate = coupling.fork(k);
      DelayVector tau = calibrate_smd_delays(kappa, length_m, modes, plate);
      span.waveplates.push_back(make_section(GainVector::zeros(modes), std::move(tau), 0.0, plate));
    }
  }
  if (element_sigma_g) {
    RandomStream element = rng.fork("mdl_element");
    span.mdl_element = make_mdl_element(modes, *element_sigma_g, element);
  }
  return span;
}

namespace {

constexpr Eigen::Index kPhasorBlock = 64;

// X(k, i) *= exp((g_i + mean)/2 - j w_k tau_i) on the full FFT grid.
void scale_by_diagonal(CMatrix& X, const CouplingSection& s, double dt) {
  const Eigen::Index n = X.rows();
  const double dw = 2.0 * kPi / (static_cast<double>(n) * dt);
  const RVector& g = s.gains.values();
  const RVector& tau = s.delays.values();
  const bool blocked = n % (2 * kPhasorBlock) == 0;
  std::vector<Complex> table(kPhasorBlock);
  for (Eigen::Index i = 0; i < X.cols(); ++i) {
    const double mag = std::exp(0.5 * (g(i) + s.mean_gain));
    if (tau(i) == 0.0) {
      X.col(i) *= mag;
      continue;
    }
    if (!blocked) {
      for (Eigen::Index k = 0; k < n; ++k) X(k, i) *= std::polar(mag, -2.0 * kPi * fft::bin_frequency(k, n, dt) * tau(i));
      continue;
    }
    for (Eigen::Index r = 0; r < kPhasorBlock; ++r) table[static_cast<std::size_t>(r)] = std::polar(1.0, -dw * static_cast<double>(r) * tau(i));
    for (Eigen::Index start = 0; start < n; start += kPhasorBlock) {
      const Eigen::Index k0 = start < n / 2 ? start : start - n;
      const Complex anchor = std::polar(mag, -dw * static_cast<double>(k0) * tau(i));
      Complex* col = X.col(i).data() + start;
      for (Eigen::Index r = 0; r < kPhasorBlock; ++r) col[r] *= anchor * table[static_cast<std::size_t>(r)];
    }
  }
}

void apply_nonlinear_phase(CMatrix& A, double gamma, double effective_length) {
  if (gamma == 0.0 || effective_length == 0.0) return;
  const Eigen::ArrayXd total = A.cwiseAbs2().rowwise().sum().array();
  const double k = gamma * effective_length;
  Eigen::ArrayXcd phasor(total.size());
  for (Eigen::Index t = 0; t < total.size(); ++t) phasor(t) = std::polar(1.0, k * total(t));
  A.array().colwise() *= phasor;
}

// Length over which the midpoint power, held constant, gives the same nonlinear phase as the
// exponentially decaying power over a step h.
double midpoint_effective_length(double h, double alpha) {
  if (alpha == 0.0) return h;
  return 2.0 * std::sinh(0.5 * alpha * h) / alpha;
}

class SpanPropagator {
 public:
  SpanPropagator(Eigen::Index n, double dt, const FiberConfig& fiber, double f0, const StepController& controller,
                 PropagationStats* stats)
      : dt_(dt), fiber_(fiber), controller_(controller), stats_(stats), omega_(fft::omega_grid(n, dt)),
        alpha_(fiber.alpha_per_km()), beta2_(fiber.beta2_s2_per_km(f0)), gamma_(fiber.gamma_per_w_km),
        step_(controller.initial_step_km) {}

  // X: frequency-domain spectrum on entry and exit.
  void run(CMatrix& X, std::span<const CouplingSection> sections) {
    if (sections.empty()) {
      max_step_ = fiber_.span_length_km;
      segment(X, fiber_.span_length_km);
      return;
    }
    if (sections.size() != fiber_.waveplates_per_span())
      throw DimensionError("waveplate list does not cover the span");
    const Eigen::Index m = X.cols();
    for (const auto& s : sections)
      if (s.modes() != m) throw DimensionError("waveplate dimension differs from field");
    max_step_ = fiber_.waveplate_length_km;
    X = X * sections.front().U.conjugate();
    for (std::size_t k = 0; k < sections.size(); ++k) {
      segment(X, fiber_.waveplate_length_km);
      scale_by_diagonal(X, sections[k], dt_);
      if (k + 1 < sections.size())
        X = X * (sections[k].V.transpose() * sections[k + 1].U.conjugate());
      else
        X = X * sections[k].V.transpose();
    }
  }

 private:
  const Eigen::ArrayXcd& linear_operator(double h) {
    if (auto it = linear_cache_.find(h); it != linear_cache_.end()) return it->second;
    if (linear_cache_.size() > 16) linear_cache_.clear();
    Eigen::ArrayXcd op(static_cast<Eigen::Index>(omega_.size()));
    const double mag = std::exp(-0.5 * alpha_ * h);
    for (std::size_t k = 0; k < omega_.size(); ++k)
      op(static_cast<Eigen::Index>(k)) = std::polar(mag, 0.5 * beta2_ * omega_[k] * omega_[k] * h);
    return linear_cache_.emplace(h, std::move(op)).first->second;
  }

  void linear(CMatrix& X, double h) { X.array().colwise() *= linear_operator(h); }

  void nonlinear(CMatrix& X, double h) {
    fft::inverse(X);
    apply_nonlinear_phase(X, gamma_, midpoint_effective_length(h, alpha_));
    fft::forward(X);
  }

  void segment(CMatrix& X, double length) {
    if (gamma_ == 0.0) {
      linear(X, length);
      return;
    }
    double remaining = length;
    while (remaining > 0.0) {
      double h = std::min(step_, remaining);
      if (remaining - h < 1e-9 * length) h = remaining;

      // Capped steps already verified well inside the target skip the doubling for a few segments.
      if (unchecked_ > 0 && h >= max_step_ * (1.0 - 1e-12)) {
        --unchecked_;
        linear(X, 0.5 * h);
        nonlinear(X, h);
        linear(X, 0.5 * h);
        remaining -= h;
        if (stats_) ++stats_->accepted_steps;
        continue;
      }

      coarse_ = X;
      linear(coarse_, 0.5 * h);
      nonlinear(coarse_, h);
      linear(coarse_, 0.5 * h);

      fine_ = X;
      linear(fine_, 0.25 * h);
      nonlinear(fine_, 0.5 * h);
      linear(fine_, 0.5 * h);
      nonlinear(fine_, 0.5 * h);
      linear(fine_, 0.25 * h);

      const double norm = fine_.norm();
      const double err = norm > 0.0 ? (fine_ - coarse_).norm() / norm : 0.0;
      const double target = controller_.local_error_target;
      if (err > 2.0 * target) {
        if (stats_) ++stats_->rejected_steps;
        step_ = 0.5 * h;
        if (step_ < controller_.min_step_km)
          throw NonConvergenceError("SSFM step fell below the minimum step size");
        continue;
      }
      X.swap(fine_);
      remaining -= h;
      if (stats_) {
        ++stats_->accepted_steps;
        stats_->max_local_error = std::max(stats_->max_local_error, err);
      }
      constexpr double kGrowth = 1.2599210498948732;  // 2^(1/3)
      if (err > target)
        step_ = h / kGrowth;
      else if (err < 0.5 * target)
        step_ = std::max(step_, h * kGrowth);
      else
        step_ = std::max(step_, h);
      step_ = std::min(step_, max_step_);
      if (h >= max_step_ * (1.0 - 1e-12) && err < 0.5 * target) unchecked_ = kUncheckedSegments;
    }
  }

  double dt_;
  const FiberConfig& fiber_;
  const StepController& controller_;
  PropagationStats* stats_;
  std::vector<double> omega_;
  double alpha_;
  double beta2_;
  double gamma_;
  double step_;
  double max_step_ = 0.0;
  static constexpr int kUncheckedSegments = 7;
  int unchecked_ = 0;
  std::map<double, Eigen::ArrayXcd> linear_cache_;
  CMatrix coarse_;
  CMatrix fine_;
};

void check_section(const MultimodeField& field, const CouplingSection& s) {
  if (s.modes() != field.modes()) throw DimensionError("section dimension differs from field");
}

}  // namespace

MultimodeField linear_half_step(MultimodeField field, const FiberConfig& fiber, double length_km) {
  if (length_km < 0.0) throw ConfigError("linear step length must be >= 0");
  if (length_km == 0.0) return field;
  const auto omega = fft::omega_grid(field.size(), field.dt);
  const double beta2 = fiber.beta2_s2_per_km(field.f0);
  const double mag = std::exp(-0.5 * fiber.alpha_per_km() * length_km);
  Eigen::ArrayXcd op(field.size());
  for (Eigen::Index k = 0; k < field.size(); ++k) {
    const double w = omega[static_cast<std::size_t>(k)];
    op(k) = std::polar(mag, 0.5 * beta2 * w * w * length_km);
  }
  fft::forward(field.samples);
  field.samples.array().colwise() *= op;
  fft::inverse(field.samples);
  return field;
}

MultimodeField nonlinear_step(MultimodeField field, const FiberConfig& fiber, double effective_length_km) {
  if (effective_length_km < 0.0) throw ConfigError("effective length must be >= 0");
  apply_nonlinear_phase(field.samples, fiber.gamma_per_w_km, effective_length_km);
  return field;
}

MultimodeField apply_waveplate(MultimodeField field, const CouplingSection& section) {
  check_section(field, section);
  fft::forward(field.samples);
  field.samples = field.samples * section.U.conjugate();
  scale_by_diagonal(field.samples, section, field.dt);
  field.samples = field.samples * section.V.transpose();
  fft::inverse(field.samples);
  return field;
}

MultimodeField amplify_with_ase(MultimodeField field, const AmplifierConfig& amp, RandomStream& rng) {
  const double g = db_to_linear(amp.gain_db);
  field.samples *= std::sqrt(g);
  if (!amp.ase_enabled) return field;
  const double psd = amp.ase_psd(field.f0);
  if (psd == 0.0) return field;
  const double variance = psd / field.dt;
  for (Eigen::Index i = 0; i < field.modes(); ++i)
    for (Eigen::Index k = 0; k < field.size(); ++k) field.samples(k, i) += rng.complex_gaussian(variance);
  return field;
}

MultimodeField propagate_span(MultimodeField field, const FiberConfig& fiber, const StepController& controller,
                              std::span<const CouplingSection> sections, PropagationStats* stats) {
  field.validate();
  fiber.validate();
  controller.validate();
  SpanPropagator prop(field.size(), field.dt, fiber, field.f0, controller, stats);
  fft::forward(field.samples);
  prop.run(field.samples, sections);
  fft::inverse(field.samples);
  return field;
}

LinkResult run_link(MultimodeField tx, std::span<const SpanRealization> spans, const StepController& controller,
                    RandomStream& rng) {
  tx.validate();
  controller.validate();
  LinkResult result{std::move(tx), ChannelRecord{}, PropagationStats{}};
  MultimodeField& field = result.rx;
  result.record.modes = field.modes();

  for (std::size_t s = 0; s < spans.size(); ++s) {
    const SpanRealization& span = spans[s];
    span.fiber.validate();
    span.amplifier.validate();
    if (span.mdl_element) check_section(field, *span.mdl_element);

    SpanPropagator prop(field.size(), field.dt, span.fiber, field.f0, controller, &result.stats);
    fft::forward(field.samples);
    prop.run(field.samples, span.waveplates);
    result.record.append(span.fiber.response());
    for (const auto& w : span.waveplates) result.record.append(w);

    if (span.mdl_element) {
      const CouplingSection& element = *span.mdl_element;
      field.samples = field.samples * element.U.conjugate();
      scale_by_diagonal(field.samples, element, field.dt);
      field.samples = field.samples * element.V.transpose();
      result.record.append(element);
    }
    fft::inverse(field.samples);

    RandomStream ase = rng.fork(static_cast<std::uint64_t>(s));
    field = amplify_with_ase(std::move(field), span.amplifier, ase);
    const double psd = span.amplifier.ase_enabled ? span.amplifier.ase_psd(field.f0) : 0.0;
    result.record.append(AmplifierGain{db_to_linear(span.amplifier.gain_db), psd});
  }
  return result;
}

}  // namespace ccmcf
