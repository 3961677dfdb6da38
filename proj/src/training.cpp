#include "eit3d/training.hpp"

#include <algorithm>
#include <cmath>

#include "eit3d/rng.hpp"

namespace eit3d {

void TrainConfig::validate() const {
  require(std::isfinite(learning_rate) && learning_rate > 0.0, "learning rate must be positive");
  require(std::isfinite(weight_decay) && weight_decay >= 0.0, "weight decay must be non-negative");
  require(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0, "betas must lie in (0, 1)");
  require(eps > 0.0, "epsilon must be positive");
  require(epochs >= 0, "epoch count must be non-negative");
  require(batch_size > 0, "batch size must be positive");
  require(std::isfinite(train_noise_snr_db), "training SNR must be finite");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate},
                     {"weight_decay", c.weight_decay},
                     {"betas", {c.beta1, c.beta2}},
                     {"eps", c.eps},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"train_noise_snr_db", c.train_noise_snr_db},
                     {"seed", c.seed},
                     {"dropout", c.dropout}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const char* keys[] = {"learning_rate", "weight_decay", "betas", "eps", "epochs",
                               "batch_size", "train_noise_snr_db", "seed", "dropout"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::none_of(std::begin(keys), std::end(keys), [&](const char* k) { return it.key() == k; })) {
      fail(ErrorKind::Format, "unknown training key '" + it.key() + "'");
    }
  }
  if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
  if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay").get<double>();
  if (j.contains("betas")) {
    const auto b = j.at("betas").get<std::array<double, 2>>();
    c.beta1 = b[0];
    c.beta2 = b[1];
  }
  if (j.contains("eps")) c.eps = j.at("eps").get<double>();
  if (j.contains("epochs")) c.epochs = j.at("epochs").get<int>();
  if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
  if (j.contains("train_noise_snr_db")) c.train_noise_snr_db = j.at("train_noise_snr_db").get<double>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("dropout")) c.dropout = j.at("dropout").get<bool>();
}

template <class T>
double mse_loss(const Tensor<T>& prediction, const Tensor<T>& target, Tensor<T>* grad) {
  require(prediction.size() == target.size() && prediction.size() > 0,
          "loss needs equally sized, non-empty tensors: " + shape_string(prediction.shape) + " vs " +
              shape_string(target.shape));
  const double n = static_cast<double>(prediction.size());
  if (grad) *grad = Tensor<T>(prediction.shape);
  double s = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double e = static_cast<double>(prediction.data[i]) - static_cast<double>(target.data[i]);
    s += e * e;
    if (grad) grad->data[i] = static_cast<T>(2.0 * e / n);
  }
  return s / n;
}

template double mse_loss(const Tensor<float>&, const Tensor<float>&, Tensor<float>*);
template double mse_loss(const Tensor<double>&, const Tensor<double>&, Tensor<double>*);

namespace {

constexpr std::uint64_t kInitStream = 0x494E4954;     // "INIT"
constexpr std::uint64_t kShuffleStream = 0x5348554646; // "SHUFF"
constexpr std::uint64_t kDropoutStream = 0x44524F50;   // "DROP"

void gather(const Dataset& ds, const std::vector<int>& idx, std::size_t begin, std::size_t end,
            Tensor<float>& x, Tensor<float>& y) {
  const int n = static_cast<int>(end - begin);
  const int flen = ds.frame_length();
  x = Tensor<float>({n, flen});
  y = Tensor<float>({n, kGridZ, kGridY, kGridX});
  for (int b = 0; b < n; ++b) {
    const DatasetRecord& r = ds.pairs[idx[begin + b]];
    std::copy(r.frame.begin(), r.frame.end(), x.data.begin() + static_cast<std::ptrdiff_t>(b) * flen);
    std::copy(r.volume.data.begin(), r.volume.data.end(),
              y.data.begin() + static_cast<std::ptrdiff_t>(b) * kVoxelCount);
  }
}

struct Snapshot {
  std::vector<std::vector<float>> params, buffers;

  explicit Snapshot(const Network<float>& net) {
    for (const auto& p : net.parameters()) params.push_back(p.value.data);
    for (const auto& p : net.buffers()) buffers.push_back(p.value.data);
  }
  void restore(Network<float>& net) const {
    for (std::size_t i = 0; i < params.size(); ++i) net.parameters()[i].value.data = params[i];
    for (std::size_t i = 0; i < buffers.size(); ++i) net.buffers()[i].value.data = buffers[i];
  }
};

void check_output_grid(const Architecture& arch) {
  require(arch.output_grid == std::array<int, 3>{kGridX, kGridY, kGridZ},
          "network output grid must match the 32 x 32 x 40 voxel grid");
}

}  // namespace

VoxelVolume reconstruct(const Network<float>& net, std::span<const float> frame) {
  check_output_grid(net.arch());
  require(static_cast<int>(frame.size()) == net.arch().input_len,
          "frame has " + std::to_string(frame.size()) + " entries, network expects " +
              std::to_string(net.arch().input_len));
  Tensor<float> x({1, static_cast<int>(frame.size())});
  std::copy(frame.begin(), frame.end(), x.data.begin());
  VoxelVolume v;
  v.data = net.infer(x).data;
  return v;
}

double evaluate_mse(const Network<float>& net, const Dataset& ds, const std::vector<int>& indices, int batch_size) {
  require(!indices.empty(), "cannot evaluate on an empty index set");
  double total = 0.0;
  for (std::size_t b = 0; b < indices.size(); b += static_cast<std::size_t>(batch_size)) {
    const std::size_t e = std::min(indices.size(), b + static_cast<std::size_t>(batch_size));
    Tensor<float> x, y;
    gather(ds, indices, b, e, x, y);
    total += mse_loss<float>(net.infer(x), y, nullptr) * static_cast<double>(e - b);
  }
  return total / static_cast<double>(indices.size());
}

TrainedModel train_model(const Dataset& ds, const Architecture& arch, const TrainConfig& config,
                         const EpochCallback& on_epoch) {
  config.validate();
  arch.validate();
  check_output_grid(arch);
  require(!ds.split.train.empty(), "training split is empty");
  require(!ds.split.validation.empty(), "validation split is empty");
  require(arch.input_len == ds.frame_length(),
          "architecture input length " + std::to_string(arch.input_len) + " does not match frame length " +
              std::to_string(ds.frame_length()));

  TrainedModel model{Network<float>(arch), {}, 0, config};
  Network<float>& net = model.network;
  net.initialize(derive_seed(config.seed, kInitStream));
  AdamW<float> opt(config.adamw());
  Snapshot best(net);
  double best_val = 0.0;
  const int eval_batch = std::min(config.batch_size, 16);

  std::vector<int> order = ds.split.train;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    order = ds.split.train;
    Rng shuffle(derive_seed(config.seed, kShuffleStream, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle.below(i)]);
    }

    double train_sum = 0.0;
    std::uint64_t batch_no = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(config.batch_size), ++batch_no) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(config.batch_size));
      Tensor<float> x, y;
      gather(ds, order, b, e, x, y);
      const std::uint64_t batch_seed = derive_seed(config.seed, static_cast<std::uint64_t>(epoch), batch_no);
      const int flen = ds.frame_length();
      for (std::size_t k = 0; k < e - b; ++k) {
        std::span<float> row(x.data.data() + k * static_cast<std::size_t>(flen), static_cast<std::size_t>(flen));
        if (std::all_of(row.begin(), row.end(), [](float v) { return v == 0.0f; })) continue;
        const std::vector<float> noisy = add_awgn(row, config.train_noise_snr_db, derive_seed(batch_seed, k));
        std::copy(noisy.begin(), noisy.end(), row.begin());
      }
      try {
        Tensor<float> out = net.forward(x, Mode::Train, derive_seed(batch_seed, kDropoutStream), config.dropout);
        Tensor<float> grad;
        train_sum += mse_loss(out, y, &grad) * static_cast<double>(e - b);
        net.backward(grad);
        opt.step(net.parameters());
      } catch (const TrainingDiverged&) {
        throw;
      } catch (const Error& err) {
        if (err.kind() != ErrorKind::Numeric) throw;
        throw TrainingDiverged("training diverged in epoch " + std::to_string(epoch) + ": " + err.what(),
                               model.history);
      }
    }

    EpochLoss rec;
    rec.epoch = epoch;
    rec.train = train_sum / static_cast<double>(order.size());
    rec.validation = evaluate_mse(net, ds, ds.split.validation, eval_batch);
    model.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (!std::isfinite(rec.validation) || !std::isfinite(rec.train)) {
      throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) +
                                 " (validation loss " + std::to_string(rec.validation) + ")",
                             model.history);
    }
    if (model.best_epoch == 0 || rec.validation < best_val) {
      best_val = rec.validation;
      model.best_epoch = epoch;
      best = Snapshot(net);
    }
  }
  best.restore(net);
  return model;
}

}  // namespace eit3d
