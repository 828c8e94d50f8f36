#pragma once

// Thin wrapper over FFTW's real-to-complex transforms. Plans are created once per
// size under a lock (FFTW planning is not thread-safe) and executed with the
// new-array interface, which is.

#include <fftw3.h>

#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include "wr/error.hpp"

namespace wr::fft {

using cplx = std::complex<double>;

namespace detail {

struct PlanPair {
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;
};

class PlanCache {
 public:
  ~PlanCache() {
    for (auto& [n, p] : plans_) {
      fftw_destroy_plan(p.forward);
      fftw_destroy_plan(p.inverse);
    }
  }

  const PlanPair& get(std::size_t n) {
    std::lock_guard lock(mutex_);
    auto it = plans_.find(n);
    if (it != plans_.end()) return it->second;
    std::vector<double> r(n);
    std::vector<fftw_complex> c(n / 2 + 1);
    const int ni = static_cast<int>(n);
    PlanPair p;
    p.forward = fftw_plan_dft_r2c_1d(ni, r.data(), c.data(), FFTW_ESTIMATE | FFTW_UNALIGNED);
    p.inverse = fftw_plan_dft_c2r_1d(ni, c.data(), r.data(), FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (!p.forward || !p.inverse) throw Error("FFTW planning failed");
    return plans_.emplace(n, p).first->second;
  }

 private:
  std::mutex mutex_;
  std::map<std::size_t, PlanPair> plans_;
};

inline PlanCache& plans() {
  static PlanCache cache;
  return cache;
}

}  // namespace detail

/// Forward real FFT of length in.size(); returns n/2+1 bins (unnormalized).
inline std::vector<cplx> rfft(std::span<const double> in) {
  const std::size_t n = in.size();
  if (n == 0) throw ArgumentError("rfft of empty input");
  const auto& plan = detail::plans().get(n);
  std::vector<double> buf(in.begin(), in.end());
  std::vector<cplx> out(n / 2 + 1);
  fftw_execute_dft_r2c(plan.forward, buf.data(), reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

/// Inverse of rfft for a length-n signal, normalized so irfft(rfft(x)) == x.
inline std::vector<double> irfft(std::span<const cplx> in, std::size_t n) {
  if (in.size() != n / 2 + 1) throw ArgumentError("irfft bin count does not match length");
  const auto& plan = detail::plans().get(n);
  std::vector<cplx> buf(in.begin(), in.end());  // c2r destroys its input
  std::vector<double> out(n);
  fftw_execute_dft_c2r(plan.inverse, reinterpret_cast<fftw_complex*>(buf.data()), out.data());
  const double scale = 1.0 / static_cast<double>(n);
  for (double& v : out) v *= scale;
  return out;
}

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace wr::fft
