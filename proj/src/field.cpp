#include "ccmcf/field.hpp"

#include "ccmcf/fft.hpp"

namespace ccmcf {

MultimodeField::MultimodeField(Eigen::Index n_t, Eigen::Index modes, double dt_, double f0_)
    : samples(CMatrix::Zero(n_t, modes)), dt(dt_), f0(f0_) {
  validate();
}

double MultimodeField::total_power() const {
  if (size() == 0) return 0.0;
  return samples.squaredNorm() / static_cast<double>(size());
}

RVector MultimodeField::mode_powers() const {
  return samples.colwise().squaredNorm().transpose() / static_cast<double>(size());
}

void MultimodeField::validate() const {
  if (!fft::is_power_of_two(size())) throw DimensionError("field length must be a power of two");
  if (modes() < 2 || modes() % 2 != 0) throw DimensionError("field must carry 2N >= 2 modes");
  if (!(dt > 0.0)) throw DimensionError("field sample spacing must be positive");
}

}  // namespace ccmcf
