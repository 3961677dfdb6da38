#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "eit3d/dataset.hpp"
#include "eit3d/error.hpp"
#include "eit3d/tn_net.hpp"

namespace eit3d {

struct TrainConfig {
  double learning_rate = 0.002;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int epochs = 300;
  int batch_size = 442;
  double train_noise_snr_db = 35.0;
  std::uint64_t seed = 0;
  bool dropout = true;

  void validate() const;
  AdamWConfig adamw() const { return {learning_rate, beta1, beta2, eps, weight_decay}; }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochLoss {
  int epoch = 0;  // 1-based
  double train = 0.0;
  double validation = 0.0;

  friend bool operator==(const EpochLoss&, const EpochLoss&) = default;
};

struct TrainedModel {
  Network<float> network;
  std::vector<EpochLoss> history;
  int best_epoch = 0;  // 0 for an untrained model
  TrainConfig config;
};

/// Raised when the validation loss stops being finite; carries the history so far.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, std::vector<EpochLoss> history)
      : Error(ErrorKind::Numeric, what), history_(std::move(history)) {}
  const std::vector<EpochLoss>& history() const { return history_; }

 private:
  std::vector<EpochLoss> history_;
};

using EpochCallback = std::function<void(const EpochLoss&)>;

/// Mini-batch AdamW on MSE against the stored volumes. Each epoch shuffles
/// the training split with derive_seed(seed, epoch), and each batch adds
/// fresh noise at train_noise_snr_db with seeds derived from (epoch, batch).
/// Validation MSE is noise-free in eval mode. Returns the parameters of the
/// epoch with the lowest validation loss.
TrainedModel train_model(const Dataset& ds, const Architecture& arch, const TrainConfig& config,
                         const EpochCallback& on_epoch = {});

/// Eval-mode reconstruction of one normalized frame.
VoxelVolume reconstruct(const Network<float>& net, std::span<const float> frame);

/// Mean squared error over the records in `indices`, eval mode, noise-free.
double evaluate_mse(const Network<float>& net, const Dataset& ds, const std::vector<int>& indices, int batch_size);

/// Mean squared error and its gradient w.r.t. the prediction.
template <class T>
double mse_loss(const Tensor<T>& prediction, const Tensor<T>& target, Tensor<T>* grad);

}  // namespace eit3d
