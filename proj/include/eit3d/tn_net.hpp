#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "eit3d/tensor.hpp"

namespace eit3d {

/// Decoder layout. Three fully connected layers (each followed by dropout),
/// a reshape to (channels[0], latent, latent, latent), then four transposed
/// convolutions. The first three are followed by batch norm and leaky ReLU;
/// the last by tanh. The cube output is resampled to output_grid (x, y, z).
struct Architecture {
  std::string preset = "full";
  int input_len = 208;
  std::array<int, 3> fc_sizes{256, 512, 1024};
  double dropout_rate = 0.2;
  int latent_side = 4;
  std::array<int, 5> channels{16, 128, 64, 32, 1};
  ConvGeometry conv{};
  double leaky_slope = 0.2;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
  std::array<int, 3> output_grid{32, 32, 40};

  static Architecture full();
  static Architecture desk();
  static Architecture from_preset(const std::string& name);

  int cube_side() const;
  int output_size() const { return output_grid[0] * output_grid[1] * output_grid[2]; }
  void validate() const;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

void to_json(nlohmann::json& j, const Architecture& a);
void from_json(const nlohmann::json& j, Architecture& a);

enum class Mode { Train, Eval };

/// One learnable or buffered tensor. Decay is false for biases and batch
/// norm affine parameters.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool decay = false;
};

template <class T>
class Network {
 public:
  explicit Network(const Architecture& arch);

  const Architecture& arch() const { return arch_; }

  /// Fan-in scaled uniform weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases
  /// zero; batch norm scale 1, shift 0, running mean 0, running variance 1.
  void initialize(std::uint64_t seed);

  /// x is (B, input_len); returns (B, z, y, x) with x fastest. Train mode
  /// uses batch statistics and, if dropout is on, masks drawn from
  /// dropout_seed; eval mode is deterministic. Throws Numeric naming the layer
  /// if a non-finite value appears.
  Tensor<T> forward(const Tensor<T>& x, Mode mode, std::uint64_t dropout_seed = 0, bool dropout = true);
  /// Eval-mode forward that leaves the network untouched; safe to call
  /// concurrently.
  Tensor<T> infer(const Tensor<T>& x) const;

  /// Gradients of a scalar loss w.r.t. every parameter, given dL/d(output)
  /// of the last train-mode forward pass. Overwrites the grad tensors.
  void backward(const Tensor<T>& grad_output);

  std::vector<Parameter<T>>& parameters() { return params_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }
  /// Batch-norm running means and variances, in layer order.
  std::vector<Parameter<T>>& buffers() { return buffers_; }
  const std::vector<Parameter<T>>& buffers() const { return buffers_; }

  Parameter<T>& parameter(const std::string& name);

  template <class U>
  Network<U> cast() const;

 private:
  struct BnCache {
    Tensor<T> xhat;
    std::vector<T> inv_std;
  };
  struct Cache {
    bool valid = false;
    std::vector<Tensor<T>> fc_in;      // input of each FC layer
    std::vector<Tensor<T>> fc_mask;    // dropout scale per FC output (empty if off)
    std::vector<Tensor<T>> conv_in;    // input of each transposed conv
    std::vector<Tensor<T>> pre_act;    // BN output (or conv output for the last layer)
    std::vector<BnCache> bn;
    Tensor<T> cube;                    // tanh output before resampling
  };

  Tensor<T> run(const Tensor<T>& x, std::uint64_t dropout_seed, bool dropout, Cache* cache,
                std::vector<Parameter<T>>* running) const;

  int fc_w(int l) const { return 2 * l; }
  int fc_b(int l) const { return 2 * l + 1; }
  int conv_w(int l) const;
  int bn_gamma(int l) const { return conv_w(l) + 1; }
  int bn_beta(int l) const { return conv_w(l) + 2; }
  int last_bias() const { return static_cast<int>(params_.size()) - 1; }

  Architecture arch_;
  std::vector<Parameter<T>> params_;
  std::vector<Parameter<T>> buffers_;
  Cache cache_;
};

struct AdamWConfig {
  double learning_rate = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Decoupled-weight-decay Adam. step() advances t by one and updates
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2,
///   theta <- theta - lr (m_hat / (sqrt(v_hat) + eps) + wd theta)
/// with wd applied only to parameters whose decay flag is set.
template <class T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}
  void step(std::vector<Parameter<T>>& params);
  long steps() const { return t_; }
  const std::vector<std::vector<double>>& first_moment() const { return m_; }
  const std::vector<std::vector<double>>& second_moment() const { return v_; }

 private:
  AdamWConfig cfg_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Single-tensor AdamW update at step t (1-based); the building block of AdamW::step.
template <class T>
void adamw_update(std::span<T> theta, std::span<const T> grad, std::span<double> m, std::span<double> v,
                  long t, const AdamWConfig& cfg, bool decay);

}  // namespace eit3d
