#pragma once

// Discrete Fourier transforms of arbitrary length.
//
// Convention: X_k = sum_j x_j exp(-2 pi i jk / n) (unnormalized forward),
// inverse carries the 1/n. Powers of two use an iterative radix-2 transform;
// every other length goes through Bluestein's chirp-z algorithm on a padded
// power-of-two transform, so all lengths are O(n log n).

#include <complex>
#include <cstddef>
#include <memory>
#include <span>
#include <vector>

namespace cdflow::fft {

using Complex = std::complex<double>;
using ComplexVec = std::vector<Complex>;

class Plan {
 public:
  explicit Plan(std::size_t n);

  std::size_t size() const { return n_; }

  // In-place transforms over `data[0..n)`.
  void forward(Complex* data) const;
  void inverse(Complex* data) const;

 private:
  void radix2(Complex* data, const std::vector<Complex>& twiddles) const;
  void bluestein(Complex* data) const;

  std::size_t n_;
  bool pow2_;
  // radix-2: per-stage twiddles concatenated; stage with half-size h starts
  // at offset h - 1.
  std::vector<Complex> fwd_twiddles_;
  std::vector<Complex> inv_twiddles_;
  std::vector<std::size_t> bitrev_;
  // Bluestein
  std::vector<Complex> chirp_;
  std::vector<Complex> filter_;  // transform of the conjugate chirp
  std::shared_ptr<const Plan> inner_;
};

// Plan for length n from the process-wide cache. Concurrent lookups share a
// reader lock; construction of a new length is serialized.
std::shared_ptr<const Plan> plan_for(std::size_t n);

// Checked out-of-place transforms. Throw NonFiniteError on NaN/Inf input and
// DimensionError on empty input.
ComplexVec dft_forward(std::span<const Complex> x);
ComplexVec dft_inverse(std::span<const Complex> x);

// Real-storage encoding of a Hermitian spectrum (the transform of a real
// vector). Layout for length n:
//   [0]            Re X_0
//   [2k-1], [2k]   Re X_k, Im X_k      for 1 <= k < ceil(n/2)
//   [n-1]          Re X_{n/2}          if n is even
std::size_t spectrum_pair_count(std::size_t n);

void spectrum_encode(std::span<const double> real_signal,
                     std::span<double> packed);
void spectrum_decode(std::span<const double> packed, std::span<Complex> full);

class HermitianSpectrum {
 public:
  explicit HermitianSpectrum(std::size_t n) : packed_(n, 0.0) {}
  explicit HermitianSpectrum(std::vector<double> packed)
      : packed_(std::move(packed)) {}

  static HermitianSpectrum encode(std::span<const double> real_signal);

  std::size_t size() const { return packed_.size(); }
  std::span<const double> packed() const { return packed_; }
  std::span<double> packed() { return packed_; }
  ComplexVec decode() const;

 private:
  std::vector<double> packed_;
};

}  // namespace cdflow::fft
