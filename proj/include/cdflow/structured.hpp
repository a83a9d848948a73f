#pragma once

// Diagonal and circulant factors and their alternating product
//
//   W = D_1 C_2 D_3 ... C_{2m-2} D_{2m-1}
//
// stored as m diagonal vectors and m-1 circulant eigenvalue spectra. The chain
// is applied right-to-left to column vectors (D_{2m-1} first). A circulant
// circ(c) has first column c, so circ(c) x is the circular convolution c * x;
// its eigenvalues are F c. Spectra are the stored parameters (Hermitian
// packing, see fft.hpp), so the log-determinant never needs a transform.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cdflow/fft.hpp"
#include "cdflow/linalg.hpp"
#include "cdflow/random.hpp"

namespace cdflow::structured {

// Entries with magnitude below this are treated as singular.
inline constexpr double kEpsInvert = 1e-12;

// rows x cols real matrix stored column-major: each column (one length-n
// vector the chain acts on) is contiguous.
class ColumnBatch {
 public:
  ColumnBatch() = default;
  ColumnBatch(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static ColumnBatch from_matrix(const linalg::Matrix& m);
  linalg::Matrix to_matrix() const;

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& operator()(std::size_t i, std::size_t j) { return data_[j * rows_ + i]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[j * rows_ + i]; }

  std::span<double> col(std::size_t j) { return {data_.data() + j * rows_, rows_}; }
  std::span<const double> col(std::size_t j) const {
    return {data_.data() + j * rows_, rows_};
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  friend bool operator==(const ColumnBatch&, const ColumnBatch&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

class CDChain {
 public:
  // Identity chain with m diagonal and m-1 circulant factors of size n.
  CDChain(std::size_t n, std::size_t m);

  // Identity plus N(0, noise^2) on every stored parameter.
  static CDChain near_identity(std::size_t n, std::size_t m, double noise,
                               rng::Engine& g);

  // From time-domain factors: m diagonals and m-1 circulant first columns.
  // Encodes each column once.
  static CDChain from_time_domain(
      const std::vector<std::vector<double>>& diagonals,
      const std::vector<std::vector<double>>& circulant_columns);

  // Flat parameters in factor order D_1, C_2, ..., D_{2m-1}.
  static CDChain from_parameters(std::size_t n, std::size_t m,
                                 std::vector<double> params);

  std::size_t dim() const { return n_; }
  std::size_t diagonal_count() const { return m_; }
  std::size_t circulant_count() const { return m_ - 1; }
  std::size_t factor_count() const { return 2 * m_ - 1; }
  std::size_t parameter_count() const { return params_.size(); }

  // Factor f in storage order; even f are diagonals, odd f packed spectra.
  static bool is_diagonal(std::size_t f) { return f % 2 == 0; }
  std::span<double> factor(std::size_t f) {
    return {params_.data() + f * n_, n_};
  }
  std::span<const double> factor(std::size_t f) const {
    return {params_.data() + f * n_, n_};
  }
  std::span<double> diagonal(std::size_t j) { return factor(2 * j); }
  std::span<const double> diagonal(std::size_t j) const { return factor(2 * j); }
  std::span<double> spectrum(std::size_t j) { return factor(2 * j + 1); }
  std::span<const double> spectrum(std::size_t j) const {
    return factor(2 * j + 1);
  }

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  // Throws SingularFactorError on the first entry below kEpsInvert.
  void check_invertible() const;

  friend bool operator==(const CDChain&, const CDChain&) = default;

 private:
  std::size_t n_;
  std::size_t m_;
  std::vector<double> params_;
};

std::vector<double> diag_matvec(std::span<const double> d,
                                std::span<const double> x);

// Single real vector through one circulant; checks the imaginary residue.
std::vector<double> circ_matvec(std::span<const double> packed_spectrum,
                                std::span<const double> x);

ColumnBatch chain_matvec(const CDChain& w, const ColumnBatch& x);
ColumnBatch chain_inverse_apply(const CDChain& w, const ColumnBatch& y);

// log|det W|, O(mn), no transform.
double chain_logdet(const CDChain& w);

// Dense W; n <= 4096.
linalg::Matrix chain_materialize(const CDChain& w);

struct ChainGradients {
  ColumnBatch input;                // d<ybar, W x>/dx
  std::vector<double> parameters;   // same layout as CDChain::parameters()
};

ChainGradients chain_vjp(const CDChain& w, const ColumnBatch& x,
                         const ColumnBatch& ybar);

// d log|det W| / d parameters.
std::vector<double> logdet_grad(const CDChain& w);

// Largest singular value of each factor, storage order.
std::vector<double> factor_sigma_max(const CDChain& w);

// Scales any factor whose largest singular value exceeds target down to it.
void spectral_rescale_in_place(CDChain& w, double target);
CDChain chain_spectral_rescale(CDChain w, double target);

struct FitOptions {
  std::size_t steps = 2000;
  double lr = 5e-2;
  double init_noise = 0.1;
};

struct FitResult {
  CDChain chain;
  std::vector<double> loss_history;  // one entry per step, non-increasing
};

// Minimizes ||W - M||_F / ||M||_F with Adam and an accept-if-improved guard:
// a step that raises the loss is reverted and the learning rate halved; after
// 50 consecutive accepted steps the rate grows by 1.1 (capped at lr).
FitResult fit_dense(const linalg::Matrix& target, std::size_t m,
                    const FitOptions& options, std::uint64_t seed);

double relative_frobenius_error(const CDChain& w, const linalg::Matrix& target);

// Binary "CDC1" format: magic, n, m (u32 LE), then the (2m-1) factor vectors
// as f64 LE in factor order. The JSON sidecar sits next to it as <path>.json.
std::vector<char> encode_chain(const CDChain& w);
CDChain decode_chain(std::span<const char> bytes);
void save_chain(const CDChain& w, const std::filesystem::path& path,
                std::uint64_t seed);
CDChain load_chain(const std::filesystem::path& path);

}  // namespace cdflow::structured
