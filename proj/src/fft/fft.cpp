#include "cdflow/fft.hpp"

#include <cmath>
#include <mutex>
#include <numbers>
#include <shared_mutex>
#include <unordered_map>
#include <utility>

#include "cdflow/error.hpp"
#include "cdflow/simd/kernels.hpp"

namespace cdflow::fft {
namespace {

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

double* as_doubles(Complex* z) { return reinterpret_cast<double*>(z); }
const double* as_doubles(const Complex* z) {
  return reinterpret_cast<const double*>(z);
}

void check_finite(std::span<const Complex> x) {
  if (x.empty()) throw DimensionError("transform length must be >= 1");
  for (const Complex& v : x)
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
      throw NonFiniteError();
}

}  // namespace

Plan::Plan(std::size_t n) : n_(n), pow2_(is_pow2(n)) {
  if (n == 0) throw DimensionError("transform length must be >= 1");
  const double two_pi = 2.0 * std::numbers::pi;
  if (pow2_) {
    fwd_twiddles_.reserve(n);
    inv_twiddles_.reserve(n);
    for (std::size_t h = 1; h < n; h <<= 1) {
      for (std::size_t j = 0; j < h; ++j) {
        const double angle = two_pi * static_cast<double>(j) /
                             static_cast<double>(2 * h);
        fwd_twiddles_.emplace_back(std::cos(angle), -std::sin(angle));
        inv_twiddles_.emplace_back(std::cos(angle), std::sin(angle));
      }
    }
    bitrev_.resize(n);
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < n) ++bits;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (std::size_t b = 0; b < bits; ++b)
        if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
      bitrev_[i] = r;
    }
    return;
  }

  // Bluestein: X_k = w_k * sum_j (x_j w_j) conj(w_{k-j}),  w_k = e^{-i pi k^2/n}
  const std::size_t m = next_pow2(2 * n - 1);
  inner_ = plan_for(m);
  chirp_.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    // k^2 mod 2n keeps the angle argument small and exact.
    const std::size_t q = (k * k) % (2 * n);
    const double angle = std::numbers::pi * static_cast<double>(q) /
                         static_cast<double>(n);
    chirp_[k] = Complex(std::cos(angle), -std::sin(angle));
  }
  filter_.assign(m, Complex(0.0, 0.0));
  filter_[0] = std::conj(chirp_[0]);
  for (std::size_t k = 1; k < n; ++k) {
    filter_[k] = std::conj(chirp_[k]);
    filter_[m - k] = std::conj(chirp_[k]);
  }
  inner_->forward(filter_.data());
}

void Plan::radix2(Complex* data, const std::vector<Complex>& twiddles) const {
  for (std::size_t i = 0; i < n_; ++i) {
    const std::size_t r = bitrev_[i];
    if (i < r) std::swap(data[i], data[r]);
  }
  if (n_ >= 2) {
    for (std::size_t i = 0; i < n_; i += 2) {
      const Complex a = data[i];
      const Complex b = data[i + 1];
      data[i] = Complex(a.real() + b.real(), a.imag() + b.imag());
      data[i + 1] = Complex(a.real() - b.real(), a.imag() - b.imag());
    }
  }
  const simd::KernelTable& k = simd::active();
  for (std::size_t h = 2; h < n_; h <<= 1) {
    const double* tw = as_doubles(twiddles.data() + (h - 1));
    for (std::size_t g = 0; g < n_; g += 2 * h) {
      k.butterfly(as_doubles(data + g), as_doubles(data + g + h), tw, h);
    }
  }
}

void Plan::bluestein(Complex* data) const {
  thread_local ComplexVec scratch;
  const std::size_t m = inner_->size();
  scratch.assign(m, Complex(0.0, 0.0));
  for (std::size_t k = 0; k < n_; ++k) scratch[k] = data[k];
  const simd::KernelTable& kt = simd::active();
  kt.cmul(as_doubles(scratch.data()), as_doubles(chirp_.data()), n_);
  inner_->forward(scratch.data());
  kt.cmul(as_doubles(scratch.data()), as_doubles(filter_.data()), m);
  inner_->inverse(scratch.data());
  for (std::size_t k = 0; k < n_; ++k) data[k] = scratch[k];
  kt.cmul(as_doubles(data), as_doubles(chirp_.data()), n_);
}

void Plan::forward(Complex* data) const {
  if (n_ == 1) return;
  if (pow2_)
    radix2(data, fwd_twiddles_);
  else
    bluestein(data);
}

void Plan::inverse(Complex* data) const {
  if (n_ == 1) return;
  const double scale = 1.0 / static_cast<double>(n_);
  if (pow2_) {
    radix2(data, inv_twiddles_);
    for (std::size_t k = 0; k < n_; ++k) data[k] *= scale;
    return;
  }
  // conj(F conj(X)) = n F^{-1} X
  for (std::size_t k = 0; k < n_; ++k) data[k] = std::conj(data[k]);
  bluestein(data);
  for (std::size_t k = 0; k < n_; ++k)
    data[k] = Complex(data[k].real() * scale, -data[k].imag() * scale);
}

std::shared_ptr<const Plan> plan_for(std::size_t n) {
  static std::shared_mutex mutex;
  static std::unordered_map<std::size_t, std::shared_ptr<const Plan>> cache;
  {
    std::shared_lock lock(mutex);
    if (auto it = cache.find(n); it != cache.end()) return it->second;
  }
  // Built outside the lock: a Bluestein plan recursively asks for its
  // power-of-two inner plan.
  auto plan = std::make_shared<const Plan>(n);
  std::unique_lock lock(mutex);
  auto [it, inserted] = cache.emplace(n, std::move(plan));
  return it->second;
}

ComplexVec dft_forward(std::span<const Complex> x) {
  check_finite(x);
  ComplexVec out(x.begin(), x.end());
  plan_for(out.size())->forward(out.data());
  return out;
}

ComplexVec dft_inverse(std::span<const Complex> x) {
  check_finite(x);
  ComplexVec out(x.begin(), x.end());
  plan_for(out.size())->inverse(out.data());
  return out;
}

std::size_t spectrum_pair_count(std::size_t n) { return (n + 1) / 2 - 1; }

void spectrum_encode(std::span<const double> real_signal,
                     std::span<double> packed) {
  const std::size_t n = real_signal.size();
  if (n == 0 || packed.size() != n)
    throw DimensionError("spectrum_encode: length mismatch");
  ComplexVec z(n);
  for (std::size_t j = 0; j < n; ++j) {
    if (!std::isfinite(real_signal[j])) throw NonFiniteError();
    z[j] = Complex(real_signal[j], 0.0);
  }
  plan_for(n)->forward(z.data());
  packed[0] = z[0].real();
  const std::size_t pairs = spectrum_pair_count(n);
  for (std::size_t k = 1; k <= pairs; ++k) {
    packed[2 * k - 1] = z[k].real();
    packed[2 * k] = z[k].imag();
  }
  if (n % 2 == 0 && n > 1) packed[n - 1] = z[n / 2].real();
}

void spectrum_decode(std::span<const double> packed, std::span<Complex> full) {
  const std::size_t n = packed.size();
  if (n == 0 || full.size() != n)
    throw DimensionError("spectrum_decode: length mismatch");
  full[0] = Complex(packed[0], 0.0);
  const std::size_t pairs = spectrum_pair_count(n);
  for (std::size_t k = 1; k <= pairs; ++k) {
    const Complex v(packed[2 * k - 1], packed[2 * k]);
    full[k] = v;
    full[n - k] = std::conj(v);
  }
  if (n % 2 == 0 && n > 1) full[n / 2] = Complex(packed[n - 1], 0.0);
}

HermitianSpectrum HermitianSpectrum::encode(
    std::span<const double> real_signal) {
  HermitianSpectrum s(real_signal.size());
  spectrum_encode(real_signal, s.packed_);
  return s;
}

ComplexVec HermitianSpectrum::decode() const {
  ComplexVec full(packed_.size());
  spectrum_decode(packed_, full);
  return full;
}

}  // namespace cdflow::fft
