#include "ccmcf/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <tuple>

namespace ccmcf::fft {
namespace {

struct PlanKey {
  int n;
  int howmany;
  int sign;
  bool aligned;
  auto operator<=>(const PlanKey&) const = default;
};

class PlanCache {
 public:
  ~PlanCache() {
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

  fftw_plan get(const PlanKey& key) {
    std::lock_guard lock(mutex_);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    const std::size_t total = static_cast<std::size_t>(key.n) * static_cast<std::size_t>(key.howmany);
    auto* buf = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * total));
    unsigned flags = FFTW_ESTIMATE;
    if (!key.aligned) flags |= FFTW_UNALIGNED;
    int n = key.n;
    fftw_plan plan = fftw_plan_many_dft(1, &n, key.howmany, buf, nullptr, 1, key.n, buf, nullptr, 1, key.n, key.sign, flags);
    fftw_free(buf);
    if (plan == nullptr) throw NumericalError("FFTW failed to create a plan");
    plans_.emplace(key, plan);
    return plan;
  }

 private:
  std::mutex mutex_;
  std::map<PlanKey, fftw_plan> plans_;
};

PlanCache& cache() {
  static PlanCache c;
  return c;
}

void execute(Complex* data, Eigen::Index n, Eigen::Index howmany, int sign) {
  if (n == 0 || howmany == 0) return;
  auto* ptr = reinterpret_cast<fftw_complex*>(data);
  const bool aligned = fftw_alignment_of(reinterpret_cast<double*>(ptr)) == 0;
  fftw_plan plan = cache().get({static_cast<int>(n), static_cast<int>(howmany), sign, aligned});
  fftw_execute_dft(plan, ptr, ptr);
}

}  // namespace

void forward(CMatrix& a) { execute(a.data(), a.rows(), a.cols(), FFTW_FORWARD); }

void inverse(CMatrix& a) {
  execute(a.data(), a.rows(), a.cols(), FFTW_BACKWARD);
  a /= static_cast<double>(a.rows());
}

void forward(CVector& a) { execute(a.data(), a.size(), 1, FFTW_FORWARD); }

void inverse(CVector& a) {
  execute(a.data(), a.size(), 1, FFTW_BACKWARD);
  a /= static_cast<double>(a.size());
}

std::vector<double> omega_grid(Eigen::Index n, double dt) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (Eigen::Index k = 0; k < n; ++k) w[static_cast<std::size_t>(k)] = 2.0 * kPi * bin_frequency(k, n, dt);
  return w;
}

}  // namespace ccmcf::fft
