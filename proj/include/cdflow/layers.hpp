#pragma once

// Invertible flow layers. Every layer is immutable during forward, inverse
// and backward; per-call state lives in a LayerCache returned by forward, so
// batch shards can run concurrently against one set of parameters.
//
// Log-determinants are per sample: forward adds each sample's log|det J| into
// logdet[b]. backward takes the cotangent of the output and of each sample's
// log-det, accumulates parameter gradients into grad (same layout as
// parameters()) and returns the input cotangent.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cdflow/random.hpp"
#include "cdflow/structured.hpp"
#include "cdflow/tensor.hpp"

namespace cdflow::flow {

struct LayerCache {
  virtual ~LayerCache() = default;
};

class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  virtual Tensor4 forward(const Tensor4& x, std::span<double> logdet,
                          std::unique_ptr<LayerCache>* cache) const = 0;
  virtual Tensor4 inverse(const Tensor4& y) const = 0;
  virtual Tensor4 backward(const LayerCache& cache, const Tensor4& dy,
                           std::span<const double> dlogdet, std::span<double> grad) const = 0;

  virtual std::span<double> parameters() = 0;
  virtual std::span<const double> parameters() const = 0;
  // Trainable degrees of freedom; may be smaller than parameters().size()
  // when structurally zero entries are stored.
  virtual std::size_t free_parameter_count() const { return parameters().size(); }

  virtual std::unique_ptr<Layer> clone() const = 0;
};

// y = scale * (x + bias) per channel.
class ActNorm final : public Layer {
 public:
  explicit ActNorm(std::size_t channels);

  std::string kind() const override { return "actnorm"; }
  bool initialized() const { return initialized_; }
  void set_initialized(bool v) { initialized_ = v; }
  // Data-dependent init: per-channel output mean 0 and population std 1.
  void initialize(const Tensor4& x);
  // Initializes from x on first use, then applies the layer.
  Tensor4 forward_init(const Tensor4& x, std::span<double> logdet);

  std::size_t channels() const { return params_.size() / 2; }
  std::span<double> scale() { return std::span(params_).first(channels()); }
  std::span<double> bias() { return std::span(params_).subspan(channels()); }
  std::span<const double> scale() const { return std::span(params_).first(channels()); }
  std::span<const double> bias() const { return std::span(params_).subspan(channels()); }

  Tensor4 forward(const Tensor4& x, std::span<double> logdet,
                  std::unique_ptr<LayerCache>* cache) const override;
  Tensor4 inverse(const Tensor4& y) const override;
  Tensor4 backward(const LayerCache& cache, const Tensor4& dy, std::span<const double> dlogdet,
                   std::span<double> grad) const override;

  std::span<double> parameters() override { return params_; }
  std::span<const double> parameters() const override { return params_; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ActNorm>(*this); }

 private:
  std::vector<double> params_;  // scale then bias
  bool initialized_ = false;
};

// Invertible 1x1 convolutions: each spatial position's channel vector is
// multiplied by the same C x C matrix.
enum class LinearKind { kCD, kDense, kLower, kUpper, kLU };

std::string to_string(LinearKind k);
LinearKind linear_kind_from_string(const std::string& s);

class LinearLayer : public Layer {
 public:
  virtual LinearKind linear_kind() const = 0;
  virtual std::size_t dim() const = 0;
  // Dense equivalent, for oracles and the layer-type study.
  virtual linalg::Matrix matrix() const = 0;
  virtual double weight_logdet() const = 0;
};

class CDConv final : public LinearLayer {
 public:
  CDConv(std::size_t channels, std::size_t m);
  explicit CDConv(structured::CDChain chain) : chain_(std::move(chain)) {}

  std::string kind() const override { return "cdconv"; }
  LinearKind linear_kind() const override { return LinearKind::kCD; }
  std::size_t dim() const override { return chain_.dim(); }
  linalg::Matrix matrix() const override { return structured::chain_materialize(chain_); }
  double weight_logdet() const override { return structured::chain_logdet(chain_); }

  structured::CDChain& chain() { return chain_; }
  const structured::CDChain& chain() const { return chain_; }

  Tensor4 forward(const Tensor4& x, std::span<double> logdet,
                  std::unique_ptr<LayerCache>* cache) const override;
  Tensor4 inverse(const Tensor4& y) const override;
  Tensor4 backward(const LayerCache& cache, const Tensor4& dy, std::span<const double> dlogdet,
                   std::span<double> grad) const override;

  std::span<double> parameters() override { return chain_.parameters(); }
  std::span<const double> parameters() const override { return chain_.parameters(); }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<CDConv>(*this); }

 private:
  structured::CDChain chain_;
};

// Dense (F), lower-triangular (L), upper-triangular (U) and PLU-factored
// (LU) weights, stored as row-major n x n blocks. Structural zeros are kept in
// storage with zero gradient.
class MatrixConv final : public LinearLayer {
 public:
  // For kLU the stored blocks are [L (strict lower used), U (upper used)] and
  // W = P L U, P a fixed cyclic shift of the rows by `shift`. kDense starts at
  // that shift, the others at the identity; N(0, noise^2) is added to every
  // free entry. Triangular kinds cannot permute and ignore `shift`.
  MatrixConv(LinearKind kind, std::size_t channels, double noise, rng::Engine& g,
             std::size_t shift = 0);
  MatrixConv(LinearKind kind, std::size_t channels, std::vector<double> params,
             std::size_t shift = 0);

  std::string kind() const override;
  LinearKind linear_kind() const override { return kind_; }
  std::size_t dim() const override { return n_; }
  linalg::Matrix matrix() const override;
  double weight_logdet() const override;

  Tensor4 forward(const Tensor4& x, std::span<double> logdet,
                  std::unique_ptr<LayerCache>* cache) const override;
  Tensor4 inverse(const Tensor4& y) const override;
  Tensor4 backward(const LayerCache& cache, const Tensor4& dy, std::span<const double> dlogdet,
                   std::span<double> grad) const override;

  std::span<double> parameters() override { return params_; }
  std::span<const double> parameters() const override { return params_; }
  std::size_t free_parameter_count() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<MatrixConv>(*this); }
  std::size_t shift() const { return shift_; }

 private:
  bool is_free(std::size_t block, std::size_t i, std::size_t j) const;

  LinearKind kind_;
  std::size_t n_;
  std::size_t shift_ = 0;  // kLU only
  std::vector<double> params_;
};

// Zero-padded k x k convolution layer of the coupling conditioner.
struct ConvShape {
  std::size_t in = 0, out = 0, kernel = 1;
  std::size_t weight_count() const { return out * in * kernel * kernel; }
  std::size_t parameter_count() const { return weight_count() + out; }
};

// Affine coupling: the first ceil(C/2) channels pass through and condition a
// scale-and-shift of the rest, s = sigmoid(shat + 2). The conditioner is
// conv(k) -> ReLU -> conv(k) -> ReLU -> conv(k) with the last layer zero, so a
// fresh coupling is the identity.
class AffineCoupling final : public Layer {
 public:
  AffineCoupling(std::size_t channels, std::size_t hidden, std::size_t kernel, rng::Engine& g);
  AffineCoupling(std::size_t channels, std::size_t hidden, std::size_t kernel,
                 std::vector<double> params);

  std::string kind() const override { return "coupling"; }
  std::size_t pass_channels() const { return (channels_ + 1) / 2; }
  std::size_t transformed_channels() const { return channels_ - pass_channels(); }
  std::size_t hidden() const { return hidden_; }
  std::size_t kernel() const { return kernel_; }
  const std::vector<ConvShape>& convs() const { return convs_; }

  Tensor4 forward(const Tensor4& x, std::span<double> logdet,
                  std::unique_ptr<LayerCache>* cache) const override;
  Tensor4 inverse(const Tensor4& y) const override;
  Tensor4 backward(const LayerCache& cache, const Tensor4& dy, std::span<const double> dlogdet,
                   std::span<double> grad) const override;

  std::span<double> parameters() override { return params_; }
  std::span<const double> parameters() const override { return params_; }
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<AffineCoupling>(*this);
  }

 private:
  AffineCoupling(std::size_t channels, std::size_t hidden, std::size_t kernel);

  std::size_t channels_, hidden_, kernel_;
  std::vector<ConvShape> convs_;
  std::vector<double> params_;
};

}  // namespace cdflow::flow
