#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace ccmcf {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RVector = Eigen::VectorXd;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kSpeedOfLight = 299792458.0;     // m/s
inline constexpr double kPlanck = 6.62607015e-34;        // J s
inline constexpr double kNepersToDb = 4.342944819032518;  // 10 / ln(10)
inline constexpr double kReferenceWavelength = 1550e-9;   // m

/// Center frequency of the reference wavelength, Hz.
inline constexpr double kReferenceFrequency = kSpeedOfLight / kReferenceWavelength;

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
inline double linear_to_db(double x) { return 10.0 * std::log10(x); }
inline double dbm_to_watt(double dbm) { return 1e-3 * db_to_linear(dbm); }

/// Invalid sizes or mismatched dimensions between matrices, vectors and fields.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A physical or configuration parameter is out of its allowed range.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Numerical failure (non-finite input, singular matrices, step underflow).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ccmcf
