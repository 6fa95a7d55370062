#include "ccmcf/channel_record.hpp"

#include <cmath>

namespace ccmcf {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};

// Multiplies column i of row b by exp(sign*(g_i/2 + mean/2) - j*sign*w_b*tau_i).
void scale_by_section_diagonal(const CouplingSection& s, std::span<const double> omega, double sign, CMatrix& X) {
  const RVector& g = s.gains.values();
  const RVector& tau = s.delays.values();
  for (Eigen::Index i = 0; i < X.cols(); ++i) {
    const double mag = std::exp(sign * 0.5 * (g(i) + s.mean_gain));
    for (Eigen::Index b = 0; b < X.rows(); ++b)
      X(b, i) *= std::polar(mag, -sign * omega[static_cast<std::size_t>(b)] * tau(i));
  }
}

CVector section_diagonal(const CouplingSection& s, double sign) {
  return (sign * 0.5 * (s.gains.values().array() + s.mean_gain)).exp().cast<Complex>().matrix();
}

}  // namespace

bool ChannelRecord::frequency_flat() const {
  for (const auto& e : elements)
    if (const auto* s = std::get_if<CouplingSection>(&e); s != nullptr && !s->delays.is_zero()) return false;
  return true;
}

double ChannelRecord::condition_bound() const {
  double log_bound = 0.0;
  for (const auto& e : elements)
    if (const auto* s = std::get_if<CouplingSection>(&e)) {
      const RVector& g = s->gains.values();
      log_bound += 0.5 * (g.maxCoeff() - g.minCoeff());
    }
  return std::exp(log_bound);
}

TransferMatrix compose(const ChannelRecord& record, std::span<const double> omega_grid) {
  if (omega_grid.empty()) throw DimensionError("compose needs a nonempty frequency grid");
  TransferMatrix tm;
  tm.omega.assign(omega_grid.begin(), omega_grid.end());
  tm.H.reserve(omega_grid.size());
  for (double w : omega_grid) {
    CMatrix h = CMatrix::Identity(record.modes, record.modes);
    Complex scalar(1.0, 0.0);
    for (const auto& e : record.elements) {
      std::visit(Overloaded{[&](const FiberResponse& f) { scalar *= f.at(w); },
                            [&](const AmplifierGain& a) { scalar *= std::sqrt(a.power_gain); },
                            [&](const CouplingSection& s) { h = section_response(s, w) * h; }},
                 e);
    }
    tm.H.push_back(scalar * h);
  }
  return tm;
}

void apply_channel(const ChannelRecord& record, std::span<const double> omega, CMatrix& X) {
  if (X.cols() != record.modes) throw DimensionError("spectrum mode count differs from channel record");
  if (static_cast<std::size_t>(X.rows()) != omega.size()) throw DimensionError("spectrum rows differ from grid size");
  const Eigen::Index n = record.modes;
  CMatrix pending = CMatrix::Identity(n, n);
  Eigen::ArrayXcd scalar = Eigen::ArrayXcd::Ones(X.rows());
  double amp = 1.0;

  for (const auto& e : record.elements) {
    if (const auto* f = std::get_if<FiberResponse>(&e)) {
      for (Eigen::Index b = 0; b < X.rows(); ++b) scalar(b) *= f->at(omega[static_cast<std::size_t>(b)]);
    } else if (const auto* a = std::get_if<AmplifierGain>(&e)) {
      amp *= std::sqrt(a->power_gain);
    } else {
      const auto& s = std::get<CouplingSection>(e);
      if (s.delays.is_zero()) {
        pending = pending * s.U.conjugate() * section_diagonal(s, 1.0).asDiagonal() * s.V.transpose();
      } else {
        X = X * (pending * s.U.conjugate());
        scale_by_section_diagonal(s, omega, 1.0, X);
        pending = s.V.transpose();
      }
    }
  }
  X = X * pending;
  X.array().colwise() *= scalar * amp;
}

void apply_channel_inverse(const ChannelRecord& record, std::span<const double> omega, CMatrix& X) {
  if (X.cols() != record.modes) throw DimensionError("spectrum mode count differs from channel record");
  if (static_cast<std::size_t>(X.rows()) != omega.size()) throw DimensionError("spectrum rows differ from grid size");
  const Eigen::Index n = record.modes;
  CMatrix pending = CMatrix::Identity(n, n);
  Eigen::ArrayXcd scalar = Eigen::ArrayXcd::Ones(X.rows());
  double amp = 1.0;

  for (auto it = record.elements.rbegin(); it != record.elements.rend(); ++it) {
    const auto& e = *it;
    if (const auto* f = std::get_if<FiberResponse>(&e)) {
      for (Eigen::Index b = 0; b < X.rows(); ++b) scalar(b) /= f->at(omega[static_cast<std::size_t>(b)]);
    } else if (const auto* a = std::get_if<AmplifierGain>(&e)) {
      amp /= std::sqrt(a->power_gain);
    } else {
      const auto& s = std::get<CouplingSection>(e);
      if (s.delays.is_zero()) {
        pending = pending * s.V.conjugate() * section_diagonal(s, -1.0).asDiagonal() * s.U.transpose();
      } else {
        X = X * (pending * s.V.conjugate());
        scale_by_section_diagonal(s, omega, -1.0, X);
        pending = s.U.transpose();
      }
    }
  }
  X = X * pending;
  X.array().colwise() *= scalar * amp;
}

}  // namespace ccmcf
