#include "eit3d/tn_net.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "eit3d/error.hpp"
#include "eit3d/rng.hpp"

namespace eit3d {

Architecture Architecture::full() { return Architecture{}; }

Architecture Architecture::desk() {
  Architecture a;
  a.preset = "desk";
  a.fc_sizes = {64, 128, 512};
  a.channels = {8, 32, 16, 8, 1};
  return a;
}

Architecture Architecture::from_preset(const std::string& name) {
  if (name == "full") return full();
  if (name == "desk") return desk();
  fail(ErrorKind::InvalidArgument, "unknown architecture preset '" + name + "' (expected full or desk)");
}

int Architecture::cube_side() const {
  int s = latent_side;
  for (int l = 0; l < 4; ++l) s = conv.out_extent(s);
  return s;
}

void Architecture::validate() const {
  require(input_len > 0, "input length must be positive");
  for (int f : fc_sizes) require(f > 0, "fully connected sizes must be positive");
  for (int c : channels) require(c > 0, "channel counts must be positive");
  require(channels[4] == 1, "the last transposed convolution must produce one channel");
  require(dropout_rate >= 0.0 && dropout_rate < 1.0, "dropout rate must be in [0, 1)");
  require(latent_side > 0, "latent side must be positive");
  const long latent = static_cast<long>(channels[0]) * latent_side * latent_side * latent_side;
  require(latent == fc_sizes[2], "last fully connected size " + std::to_string(fc_sizes[2]) +
                                     " does not reshape into " + std::to_string(channels[0]) + " x " +
                                     std::to_string(latent_side) + "^3");
  require(conv.kernel > 0 && conv.stride > 0 && conv.padding >= 0, "invalid convolution geometry");
  int s = latent_side;
  for (int l = 0; l < 4; ++l) {
    s = conv.out_extent(s);
    require(s > 0, "transposed convolution chain collapses to an empty volume");
  }
  for (int g : output_grid) require(g > 0, "output grid extents must be positive");
  require(leaky_slope >= 0.0, "leaky slope must be non-negative");
  require(bn_eps > 0.0 && bn_momentum > 0.0 && bn_momentum <= 1.0, "invalid batch norm settings");
}

void to_json(nlohmann::json& j, const Architecture& a) {
  j = nlohmann::json{{"preset", a.preset},
                     {"input_len", a.input_len},
                     {"fc_sizes", a.fc_sizes},
                     {"dropout_rate", a.dropout_rate},
                     {"latent_side", a.latent_side},
                     {"channels", a.channels},
                     {"kernel", a.conv.kernel},
                     {"stride", a.conv.stride},
                     {"padding", a.conv.padding},
                     {"leaky_slope", a.leaky_slope},
                     {"bn_eps", a.bn_eps},
                     {"bn_momentum", a.bn_momentum},
                     {"output_grid", a.output_grid}};
}

void from_json(const nlohmann::json& j, Architecture& a) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    static const char* keys[] = {"preset", "input_len", "fc_sizes", "dropout_rate", "latent_side",
                                 "channels", "kernel", "stride", "padding", "leaky_slope",
                                 "bn_eps", "bn_momentum", "output_grid"};
    if (std::none_of(std::begin(keys), std::end(keys), [&](const char* k) { return it.key() == k; })) {
      fail(ErrorKind::Format, "unknown architecture key '" + it.key() + "'");
    }
  }
  // Known presets supply the base values; any other name is just a label for
  // the explicit fields that follow.
  if (j.contains("preset")) {
    const auto name = j.at("preset").get<std::string>();
    if (name == "full" || name == "desk") a = Architecture::from_preset(name);
    a.preset = name;
  }
  if (j.contains("input_len")) a.input_len = j.at("input_len").get<int>();
  if (j.contains("fc_sizes")) a.fc_sizes = j.at("fc_sizes").get<std::array<int, 3>>();
  if (j.contains("dropout_rate")) a.dropout_rate = j.at("dropout_rate").get<double>();
  if (j.contains("latent_side")) a.latent_side = j.at("latent_side").get<int>();
  if (j.contains("channels")) a.channels = j.at("channels").get<std::array<int, 5>>();
  if (j.contains("kernel")) a.conv.kernel = j.at("kernel").get<int>();
  if (j.contains("stride")) a.conv.stride = j.at("stride").get<int>();
  if (j.contains("padding")) a.conv.padding = j.at("padding").get<int>();
  if (j.contains("leaky_slope")) a.leaky_slope = j.at("leaky_slope").get<double>();
  if (j.contains("bn_eps")) a.bn_eps = j.at("bn_eps").get<double>();
  if (j.contains("bn_momentum")) a.bn_momentum = j.at("bn_momentum").get<double>();
  if (j.contains("output_grid")) a.output_grid = j.at("output_grid").get<std::array<int, 3>>();
}

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
void check_finite(const Tensor<T>& t, const std::string& layer) {
  for (T v : t.data) {
    if (!std::isfinite(static_cast<double>(v))) {
      fail(ErrorKind::Numeric, "non-finite activation after layer " + layer);
    }
  }
}

}  // namespace

template <class T>
Network<T>::Network(const Architecture& arch) : arch_(arch) {
  arch_.validate();
  const int k = arch_.conv.kernel;
  int in = arch_.input_len;
  for (int l = 0; l < 3; ++l) {
    const std::string p = "fc" + std::to_string(l + 1);
    params_.push_back({p + ".weight", Tensor<T>({arch_.fc_sizes[l], in}), Tensor<T>({arch_.fc_sizes[l], in}), true});
    params_.push_back({p + ".bias", Tensor<T>({arch_.fc_sizes[l]}), Tensor<T>({arch_.fc_sizes[l]}), false});
    in = arch_.fc_sizes[l];
  }
  // Convolutions feeding batch norm carry no bias: the normalization would cancel it.
  for (int l = 0; l < 4; ++l) {
    const std::string p = "deconv" + std::to_string(l + 1);
    const std::vector<int> ws{arch_.channels[l], arch_.channels[l + 1], k, k, k};
    params_.push_back({p + ".weight", Tensor<T>(ws), Tensor<T>(ws), true});
    const int c = arch_.channels[l + 1];
    if (l < 3) {
      const std::string b = "bn" + std::to_string(l + 1);
      params_.push_back({b + ".weight", Tensor<T>({c}, T(1)), Tensor<T>({c}), false});
      params_.push_back({b + ".bias", Tensor<T>({c}), Tensor<T>({c}), false});
      buffers_.push_back({b + ".running_mean", Tensor<T>({c}), {}, false});
      buffers_.push_back({b + ".running_var", Tensor<T>({c}, T(1)), {}, false});
    } else {
      params_.push_back({p + ".bias", Tensor<T>({c}), Tensor<T>({c}), false});
    }
  }
}

template <class T>
int Network<T>::conv_w(int l) const {
  return 6 + 3 * l;
}

template <class T>
Parameter<T>& Network<T>::parameter(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  for (auto& p : buffers_)
    if (p.name == name) return p;
  fail(ErrorKind::InvalidArgument, "no parameter named '" + name + "'");
}

template <class T>
void Network<T>::initialize(std::uint64_t seed) {
  Rng rng(seed);
  const int taps_per_output = [&] {
    const int r = arch_.conv.kernel / arch_.conv.stride;
    return std::max(1, r * r * r);
  }();
  for (int l = 0; l < 3; ++l) {
    Parameter<T>& w = params_[fc_w(l)];
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.value.dim(1)));
    for (T& v : w.value.data) v = static_cast<T>(rng.uniform(-bound, bound));
    params_[fc_b(l)].value.zero();
  }
  for (int l = 0; l < 4; ++l) {
    Parameter<T>& w = params_[conv_w(l)];
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.value.dim(0)) * taps_per_output);
    for (T& v : w.value.data) v = static_cast<T>(rng.uniform(-bound, bound));
    if (l < 3) {
      std::fill(params_[bn_gamma(l)].value.data.begin(), params_[bn_gamma(l)].value.data.end(), T(1));
      params_[bn_beta(l)].value.zero();
      buffers_[2 * l].value.zero();
      std::fill(buffers_[2 * l + 1].value.data.begin(), buffers_[2 * l + 1].value.data.end(), T(1));
    } else {
      params_[last_bias()].value.zero();
    }
  }
  cache_ = Cache{};
}

template <class T>
Tensor<T> Network<T>::run(const Tensor<T>& x, std::uint64_t dropout_seed, bool dropout, Cache* cache,
                          std::vector<Parameter<T>>* running) const {
  if (x.rank() != 2 || x.dim(1) != arch_.input_len) {
    fail(ErrorKind::InvalidArgument, "network input must be (batch, " + std::to_string(arch_.input_len) +
                                         "), got " + shape_string(x.shape));
  }
  const int batch = x.dim(0);
  require(batch > 0, "empty batch");
  const bool train = cache != nullptr;
  const bool use_dropout = train && dropout && arch_.dropout_rate > 0.0;
  check_finite(x, "input");

  Tensor<T> h = x;
  for (int l = 0; l < 3; ++l) {
    const Tensor<T>& w = params_[fc_w(l)].value;
    const Tensor<T>& b = params_[fc_b(l)].value;
    const int out = w.dim(0), in = w.dim(1);
    Tensor<T> y({batch, out});
    Eigen::Map<const RowMat<T>> xm(h.data.data(), batch, in);
    Eigen::Map<const RowMat<T>> wm(w.data.data(), out, in);
    Eigen::Map<RowMat<T>> ym(y.data.data(), batch, out);
    ym.noalias() = xm * wm.transpose();
    ym.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.data.data(), out);
    Tensor<T> mask;
    if (use_dropout) {
      mask = Tensor<T>({batch, out});
      Rng rng(derive_seed(dropout_seed, static_cast<std::uint64_t>(l)));
      const T keep_scale = static_cast<T>(1.0 / (1.0 - arch_.dropout_rate));
      for (std::size_t i = 0; i < y.size(); ++i) {
        mask.data[i] = rng.uniform() < arch_.dropout_rate ? T(0) : keep_scale;
        y.data[i] *= mask.data[i];
      }
    }
    check_finite(y, "fc" + std::to_string(l + 1));
    if (train) {
      cache->fc_in.push_back(std::move(h));
      cache->fc_mask.push_back(std::move(mask));
    }
    h = std::move(y);
  }

  const int ls = arch_.latent_side;
  h.reshape({batch, arch_.channels[0], ls, ls, ls});
  for (int l = 0; l < 4; ++l) {
    const Tensor<T> no_bias;
    const Tensor<T>& bias = l == 3 ? params_[last_bias()].value : no_bias;
    Tensor<T> y = conv_transpose3d_forward(h, params_[conv_w(l)].value, bias, arch_.conv);
    check_finite(y, "deconv" + std::to_string(l + 1));
    if (train) cache->conv_in.push_back(std::move(h));
    if (l < 3) {
      const int c = y.dim(1);
      const std::size_t spatial = y.size() / (static_cast<std::size_t>(batch) * c);
      const Tensor<T>& gamma = params_[bn_gamma(l)].value;
      const Tensor<T>& beta = params_[bn_beta(l)].value;
      const Tensor<T>& run_mean = buffers_[2 * l].value;
      const Tensor<T>& run_var = buffers_[2 * l + 1].value;
      BnCache bc;
      if (train) {
        bc.xhat = Tensor<T>(y.shape);
        bc.inv_std.resize(c);
      }
      const double count = static_cast<double>(batch) * static_cast<double>(spatial);
      for (int ch = 0; ch < c; ++ch) {
        double mean, var;
        if (train) {
          double s = 0.0;
          for (int b = 0; b < batch; ++b) {
            const T* p = y.data.data() + (static_cast<std::size_t>(b) * c + ch) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) s += static_cast<double>(p[i]);
          }
          mean = s / count;
          double ss = 0.0;
          for (int b = 0; b < batch; ++b) {
            const T* p = y.data.data() + (static_cast<std::size_t>(b) * c + ch) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
              const double d = static_cast<double>(p[i]) - mean;
              ss += d * d;
            }
          }
          var = ss / count;
          const double m = arch_.bn_momentum;
          const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
          if (running) {
            T& rm = (*running)[2 * l].value.data[ch];
            T& rv = (*running)[2 * l + 1].value.data[ch];
            rm = static_cast<T>((1.0 - m) * static_cast<double>(rm) + m * mean);
            rv = static_cast<T>((1.0 - m) * static_cast<double>(rv) + m * unbiased);
          }
        } else {
          mean = static_cast<double>(run_mean.data[ch]);
          var = static_cast<double>(run_var.data[ch]);
        }
        const T inv_std = static_cast<T>(1.0 / std::sqrt(var + arch_.bn_eps));
        const T mu = static_cast<T>(mean);
        const T g = gamma.data[ch], be = beta.data[ch];
        if (train) bc.inv_std[ch] = inv_std;
        for (int b = 0; b < batch; ++b) {
          const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * spatial;
          T* p = y.data.data() + off;
          for (std::size_t i = 0; i < spatial; ++i) {
            const T xh = (p[i] - mu) * inv_std;
            if (train) bc.xhat.data[off + i] = xh;
            p[i] = g * xh + be;
          }
        }
      }
      check_finite(y, "bn" + std::to_string(l + 1));
      if (train) {
        cache->bn.push_back(std::move(bc));
        cache->pre_act.push_back(y);
      }
      const T slope = static_cast<T>(arch_.leaky_slope);
      for (T& v : y.data) v = v > T(0) ? v : slope * v;
    } else {
      for (T& v : y.data) v = std::tanh(v);
      check_finite(y, "tanh");
      if (train) cache->cube = y;
    }
    h = std::move(y);
  }

  const auto& og = arch_.output_grid;
  Tensor<T> out = trilinear_resample(h, og[2], og[1], og[0]);
  out.reshape({batch, og[2], og[1], og[0]});
  check_finite(out, "resample");
  if (cache) cache->valid = true;
  return out;
}

template <class T>
Tensor<T> Network<T>::forward(const Tensor<T>& x, Mode mode, std::uint64_t dropout_seed, bool dropout) {
  cache_ = Cache{};
  if (mode == Mode::Eval) return run(x, 0, false, nullptr, nullptr);
  // Statistics are committed only once the pass has succeeded.
  std::vector<Parameter<T>> running = buffers_;
  Tensor<T> y = run(x, dropout_seed, dropout, &cache_, &running);
  buffers_ = std::move(running);
  return y;
}

template <class T>
Tensor<T> Network<T>::infer(const Tensor<T>& x) const {
  return run(x, 0, false, nullptr, nullptr);
}

template <class T>
void Network<T>::backward(const Tensor<T>& grad_output) {
  if (!cache_.valid) {
    fail(ErrorKind::InvalidArgument, "backward needs a preceding forward pass in train mode");
  }
  const auto& og = arch_.output_grid;
  const int batch = cache_.cube.dim(0);
  const std::vector<int> want{batch, og[2], og[1], og[0]};
  if (grad_output.shape != want) {
    fail(ErrorKind::InvalidArgument, "output gradient " + shape_string(grad_output.shape) +
                                         " does not match network output " + shape_string(want));
  }
  for (auto& p : params_) p.grad.zero();

  Tensor<T> g = grad_output;
  g.reshape({batch, 1, og[2], og[1], og[0]});
  const int side = cache_.cube.dim(2);
  g = trilinear_resample_adjoint(g, side, side, side);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const T y = cache_.cube.data[i];
    g.data[i] *= T(1) - y * y;
  }

  for (int l = 3; l >= 0; --l) {
    if (l < 3) {
      const Tensor<T>& pre = cache_.pre_act[l];
      const T slope = static_cast<T>(arch_.leaky_slope);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (!(pre.data[i] > T(0))) g.data[i] *= slope;
      }
      const BnCache& bc = cache_.bn[l];
      const int c = g.dim(1);
      const std::size_t spatial = g.size() / (static_cast<std::size_t>(batch) * c);
      const double count = static_cast<double>(batch) * static_cast<double>(spatial);
      const Tensor<T>& gamma = params_[bn_gamma(l)].value;
      Tensor<T>& dgamma = params_[bn_gamma(l)].grad;
      Tensor<T>& dbeta = params_[bn_beta(l)].grad;
      for (int ch = 0; ch < c; ++ch) {
        double sum_dy = 0.0, sum_dy_xh = 0.0;
        for (int b = 0; b < batch; ++b) {
          const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * spatial;
          for (std::size_t i = 0; i < spatial; ++i) {
            sum_dy += static_cast<double>(g.data[off + i]);
            sum_dy_xh += static_cast<double>(g.data[off + i]) * static_cast<double>(bc.xhat.data[off + i]);
          }
        }
        dgamma.data[ch] = static_cast<T>(sum_dy_xh);
        dbeta.data[ch] = static_cast<T>(sum_dy);
        // dx = gamma * inv_std * (dy - mean(dy) - xhat * mean(dy * xhat))
        const T k = gamma.data[ch] * bc.inv_std[ch];
        const T mdy = static_cast<T>(sum_dy / count);
        const T mdx = static_cast<T>(sum_dy_xh / count);
        for (int b = 0; b < batch; ++b) {
          const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * spatial;
          for (std::size_t i = 0; i < spatial; ++i) {
            g.data[off + i] = k * (g.data[off + i] - mdy - bc.xhat.data[off + i] * mdx);
          }
        }
      }
    }
    Tensor<T> dx;
    Tensor<T>* db = l == 3 ? &params_[last_bias()].grad : nullptr;
    conv_transpose3d_backward(cache_.conv_in[l], params_[conv_w(l)].value, g, arch_.conv, &dx,
                              params_[conv_w(l)].grad, db);
    g = std::move(dx);
  }

  g.reshape({batch, arch_.fc_sizes[2]});
  for (int l = 2; l >= 0; --l) {
    const Tensor<T>& mask = cache_.fc_mask[l];
    if (!mask.data.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) g.data[i] *= mask.data[i];
    }
    const Tensor<T>& xin = cache_.fc_in[l];
    Parameter<T>& w = params_[fc_w(l)];
    Parameter<T>& b = params_[fc_b(l)];
    const int out = w.value.dim(0), in = w.value.dim(1);
    Eigen::Map<const RowMat<T>> gm(g.data.data(), batch, out);
    Eigen::Map<const RowMat<T>> xm(xin.data.data(), batch, in);
    Eigen::Map<RowMat<T>>(w.grad.data.data(), out, in).noalias() = gm.transpose() * xm;
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.grad.data.data(), out) = gm.colwise().sum();
    if (l > 0) {
      Tensor<T> dx({batch, in});
      Eigen::Map<RowMat<T>>(dx.data.data(), batch, in).noalias() =
          gm * Eigen::Map<const RowMat<T>>(w.value.data.data(), out, in);
      g = std::move(dx);
    }
  }
}

template <class T>
template <class U>
Network<U> Network<T>::cast() const {
  Network<U> out(arch_);
  auto copy = [](const std::vector<Parameter<T>>& src, std::vector<Parameter<U>>& dst) {
    for (std::size_t i = 0; i < src.size(); ++i) {
      dst[i].value.data.assign(src[i].value.data.begin(), src[i].value.data.end());
    }
  };
  copy(params_, out.parameters());
  copy(buffers_, out.buffers());
  return out;
}

template <class T>
void adamw_update(std::span<T> theta, std::span<const T> grad, std::span<double> m, std::span<double> v,
                  long t, const AdamWConfig& cfg, bool decay) {
  require(theta.size() == grad.size() && m.size() == theta.size() && v.size() == theta.size(),
          "AdamW state does not match the parameter size");
  require(t >= 1, "AdamW step counter starts at 1");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  const double wd = decay ? cfg.weight_decay : 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = static_cast<double>(grad[i]);
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    const double th = static_cast<double>(theta[i]);
    theta[i] = static_cast<T>(th - cfg.learning_rate * (mhat / (std::sqrt(vhat) + cfg.eps) + wd * th));
  }
}

template <class T>
void AdamW<T>::step(std::vector<Parameter<T>>& params) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.value.size(), 0.0);
      v_.emplace_back(p.value.size(), 0.0);
    }
  }
  require(m_.size() == params.size(), "AdamW was built for a different parameter list");
  ++t_;
  for (std::size_t i = 0; i < params.size(); ++i) {
    adamw_update<T>(params[i].value.data, params[i].grad.data, m_[i], v_[i], t_, cfg_, params[i].decay);
  }
}

template class Network<float>;
template class Network<double>;
template Network<double> Network<float>::cast<double>() const;
template Network<float> Network<double>::cast<float>() const;
template Network<float> Network<float>::cast<float>() const;
template class AdamW<float>;
template class AdamW<double>;
template void adamw_update<float>(std::span<float>, std::span<const float>, std::span<double>,
                                  std::span<double>, long, const AdamWConfig&, bool);
template void adamw_update<double>(std::span<double>, std::span<const double>, std::span<double>,
                                   std::span<double>, long, const AdamWConfig&, bool);

}  // namespace eit3d
