#include "eit3d/tensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include <Eigen/Core>

#include "eit3d/error.hpp"

namespace eit3d {

template <class T>
Tensor<T>::Tensor(std::vector<int> s, T fill) : shape(std::move(s)), data(shape_numel(shape), fill) {}

template <class T>
void Tensor<T>::zero() {
  std::fill(data.begin(), data.end(), T(0));
}

template <class T>
Tensor<T>& Tensor<T>::reshape(std::vector<int> s) {
  if (shape_numel(s) != data.size()) {
    fail(ErrorKind::InvalidArgument,
         "cannot reshape " + shape_string(shape) + " to " + shape_string(s));
  }
  shape = std::move(s);
  return *this;
}

std::string shape_string(const std::vector<int>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? ", " : "") + std::to_string(shape[i]);
  return s + ")";
}

std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    require(d >= 0, "negative extent in shape " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

namespace {

template <class T>
using ColMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

struct ConvDims {
  int batch, cin, cout, d, h, w, od, oh, ow, k;
  bool batched;
  int n_in() const { return d * h * w; }
  int n_out() const { return od * oh * ow; }
  int taps() const { return k * k * k; }
};

template <class T>
ConvDims conv_dims(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, const ConvGeometry& g) {
  require(g.kernel > 0 && g.stride > 0 && g.padding >= 0, "invalid transposed-convolution geometry");
  if (x.rank() != 4 && x.rank() != 5) {
    fail(ErrorKind::InvalidArgument,
         "transposed convolution input must be (C, D, H, W) or (B, C, D, H, W), got " +
             shape_string(x.shape));
  }
  ConvDims c{};
  c.batched = x.rank() == 5;
  const int off = c.batched ? 1 : 0;
  c.batch = c.batched ? x.dim(0) : 1;
  c.cin = x.dim(off);
  c.d = x.dim(off + 1);
  c.h = x.dim(off + 2);
  c.w = x.dim(off + 3);
  c.k = g.kernel;
  if (w.rank() != 5 || w.dim(0) != c.cin || w.dim(2) != g.kernel || w.dim(3) != g.kernel ||
      w.dim(4) != g.kernel) {
    fail(ErrorKind::InvalidArgument, "transposed convolution weight " + shape_string(w.shape) +
                                         " does not fit input " + shape_string(x.shape) +
                                         " with kernel " + std::to_string(g.kernel));
  }
  c.cout = w.dim(1);
  if (!bias.data.empty() && (bias.rank() != 1 || bias.dim(0) != c.cout)) {
    fail(ErrorKind::InvalidArgument,
         "bias " + shape_string(bias.shape) + " does not match weight " + shape_string(w.shape));
  }
  c.od = g.out_extent(c.d);
  c.oh = g.out_extent(c.h);
  c.ow = g.out_extent(c.w);
  require(c.od > 0 && c.oh > 0 && c.ow > 0,
          "transposed convolution of " + shape_string(x.shape) + " has an empty output");
  return c;
}

// Visits every (input voxel, tap) pair that lands inside the output, as
// f(input index, tap index, output index).
template <class F>
void for_each_tap(const ConvDims& c, const ConvGeometry& g, F&& f) {
  const int k = c.k;
  for (int kd = 0; kd < k; ++kd)
    for (int kh = 0; kh < k; ++kh)
      for (int kw = 0; kw < k; ++kw) {
        const int tap = (kd * k + kh) * k + kw;
        for (int id = 0; id < c.d; ++id) {
          const int od = id * g.stride - g.padding + kd;
          if (od < 0 || od >= c.od) continue;
          for (int ih = 0; ih < c.h; ++ih) {
            const int oh = ih * g.stride - g.padding + kh;
            if (oh < 0 || oh >= c.oh) continue;
            const int in_row = (id * c.h + ih) * c.w;
            const int out_row = (od * c.oh + oh) * c.ow;
            for (int iw = 0; iw < c.w; ++iw) {
              const int ow = iw * g.stride - g.padding + kw;
              if (ow < 0 || ow >= c.ow) continue;
              f(in_row + iw, tap, out_row + ow);
            }
          }
        }
      }
}

}  // namespace

template <class T>
Tensor<T> conv_transpose3d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                                   const ConvGeometry& g) {
  const ConvDims c = conv_dims(x, w, bias, g);
  std::vector<int> out_shape{c.cout, c.od, c.oh, c.ow};
  if (c.batched) out_shape.insert(out_shape.begin(), c.batch);
  Tensor<T> y(out_shape);

  const int nin = c.n_in(), nout = c.n_out(), taps = c.taps();
  // Weight viewed column-major as (C_out * taps) x C_in.
  const Eigen::Map<const ColMat<T>> wm(w.data.data(), static_cast<Eigen::Index>(c.cout) * taps, c.cin);
  ColMat<T> cols(nin, static_cast<Eigen::Index>(c.cout) * taps);
  for (int b = 0; b < c.batch; ++b) {
    const Eigen::Map<const ColMat<T>> xm(x.data.data() + static_cast<std::size_t>(b) * c.cin * nin, nin, c.cin);
    cols.noalias() = xm * wm.transpose();
    T* yb = y.data.data() + static_cast<std::size_t>(b) * c.cout * nout;
    for (int co = 0; co < c.cout; ++co) {
      T* yc = yb + static_cast<std::size_t>(co) * nout;
      if (!bias.data.empty()) std::fill(yc, yc + nout, bias.data[co]);
      const T* col0 = cols.data() + static_cast<std::size_t>(co) * taps * nin;
      for_each_tap(c, g, [&](int n, int tap, int o) { yc[o] += col0[static_cast<std::size_t>(tap) * nin + n]; });
    }
  }
  return y;
}

template <class T>
void conv_transpose3d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                               const ConvGeometry& g, Tensor<T>* dx, Tensor<T>& dw, Tensor<T>* db) {
  const Tensor<T> no_bias;
  const ConvDims c = conv_dims(x, w, no_bias, g);
  std::vector<int> out_shape{c.cout, c.od, c.oh, c.ow};
  if (c.batched) out_shape.insert(out_shape.begin(), c.batch);
  if (dy.shape != out_shape) {
    fail(ErrorKind::InvalidArgument, "output gradient " + shape_string(dy.shape) +
                                         " does not match forward output " + shape_string(out_shape));
  }
  require(dw.shape == w.shape, "weight gradient shape " + shape_string(dw.shape) + " != " + shape_string(w.shape));
  if (db) require(db->rank() == 1 && db->dim(0) == c.cout, "bias gradient has the wrong shape");
  if (dx) {
    dx->shape = x.shape;
    dx->data.assign(x.size(), T(0));
  }

  const int nin = c.n_in(), nout = c.n_out(), taps = c.taps();
  const Eigen::Map<const ColMat<T>> wm(w.data.data(), static_cast<Eigen::Index>(c.cout) * taps, c.cin);
  Eigen::Map<ColMat<T>> dwm(dw.data.data(), static_cast<Eigen::Index>(c.cout) * taps, c.cin);
  ColMat<T> cols(nin, static_cast<Eigen::Index>(c.cout) * taps);
  for (int b = 0; b < c.batch; ++b) {
    const T* dyb = dy.data.data() + static_cast<std::size_t>(b) * c.cout * nout;
    cols.setZero();
    for (int co = 0; co < c.cout; ++co) {
      const T* dyc = dyb + static_cast<std::size_t>(co) * nout;
      T* col0 = cols.data() + static_cast<std::size_t>(co) * taps * nin;
      for_each_tap(c, g, [&](int n, int tap, int o) { col0[static_cast<std::size_t>(tap) * nin + n] = dyc[o]; });
      if (db) {
        T s = 0;
        for (int o = 0; o < nout; ++o) s += dyc[o];
        db->data[co] += s;
      }
    }
    const Eigen::Map<const ColMat<T>> xm(x.data.data() + static_cast<std::size_t>(b) * c.cin * nin, nin, c.cin);
    dwm.noalias() += cols.transpose() * xm;
    if (dx) {
      Eigen::Map<ColMat<T>> dxm(dx->data.data() + static_cast<std::size_t>(b) * c.cin * nin, nin, c.cin);
      dxm.noalias() = cols * wm;
    }
  }
}

namespace {

struct Lerp {
  std::vector<int> i0;
  std::vector<double> f;
};

Lerp lerp_axis(int in, int out) {
  require(in >= 1 && out >= 1, "resample extents must be positive");
  Lerp l;
  l.i0.resize(out);
  l.f.resize(out);
  for (int o = 0; o < out; ++o) {
    const double src = out == 1 ? 0.0 : static_cast<double>(o) * (in - 1) / (out - 1);
    int i = static_cast<int>(std::floor(src));
    i = std::clamp(i, 0, std::max(0, in - 2));
    l.i0[o] = i;
    l.f[o] = in == 1 ? 0.0 : src - i;
  }
  return l;
}

// Visits every output voxel with its eight (source offset, weight) corners.
template <class F>
void for_each_corner(int d, int h, int w, int od, int oh, int ow, F&& f) {
  const Lerp ld = lerp_axis(d, od), lh = lerp_axis(h, oh), lw = lerp_axis(w, ow);
  const int sd = d > 1 ? h * w : 0, sh = h > 1 ? w : 0, sw = w > 1 ? 1 : 0;
  for (int a = 0; a < od; ++a)
    for (int b = 0; b < oh; ++b)
      for (int c = 0; c < ow; ++c) {
        const int base = (ld.i0[a] * h + lh.i0[b]) * w + lw.i0[c];
        const double fd = ld.f[a], fh = lh.f[b], fw = lw.f[c];
        const int o = (a * oh + b) * ow + c;
        f(o, base, (1 - fd) * (1 - fh) * (1 - fw));
        f(o, base + sw, (1 - fd) * (1 - fh) * (fw));
        f(o, base + sh, (1 - fd) * (fh) * (1 - fw));
        f(o, base + sh + sw, (1 - fd) * (fh) * (fw));
        f(o, base + sd, (fd) * (1 - fh) * (1 - fw));
        f(o, base + sd + sw, (fd) * (1 - fh) * (fw));
        f(o, base + sd + sh, (fd) * (fh) * (1 - fw));
        f(o, base + sd + sh + sw, (fd) * (fh) * (fw));
      }
}

}  // namespace

template <class T>
Tensor<T> trilinear_resample(const Tensor<T>& x, int out_d, int out_h, int out_w) {
  require(x.rank() >= 3, "trilinear resample needs at least three axes, got " + shape_string(x.shape));
  const int r = x.rank();
  const int d = x.dim(r - 3), h = x.dim(r - 2), w = x.dim(r - 1);
  std::vector<int> shape = x.shape;
  shape[r - 3] = out_d;
  shape[r - 2] = out_h;
  shape[r - 1] = out_w;
  Tensor<T> y(shape);
  const std::size_t nin = static_cast<std::size_t>(d) * h * w;
  const std::size_t nout = static_cast<std::size_t>(out_d) * out_h * out_w;
  const std::size_t outer = nin ? x.size() / nin : 0;
  for (std::size_t n = 0; n < outer; ++n) {
    const T* src = x.data.data() + n * nin;
    T* dst = y.data.data() + n * nout;
    for_each_corner(d, h, w, out_d, out_h, out_w,
                    [&](int o, int s, double wt) { dst[o] += static_cast<T>(wt) * src[s];
                    });
  }
  return y;
}

template <class T>
Tensor<T> trilinear_resample_adjoint(const Tensor<T>& dy, int in_d, int in_h, int in_w) {
  require(dy.rank() >= 3, "trilinear adjoint needs at least three axes, got " + shape_string(dy.shape));
  const int r = dy.rank();
  const int od = dy.dim(r - 3), oh = dy.dim(r - 2), ow = dy.dim(r - 1);
  std::vector<int> shape = dy.shape;
  shape[r - 3] = in_d;
  shape[r - 2] = in_h;
  shape[r - 1] = in_w;
  Tensor<T> dx(shape);
  const std::size_t nin = static_cast<std::size_t>(in_d) * in_h * in_w;
  const std::size_t nout = static_cast<std::size_t>(od) * oh * ow;
  const std::size_t outer = nout ? dy.size() / nout : 0;
  for (std::size_t n = 0; n < outer; ++n) {
    const T* src = dy.data.data() + n * nout;
    T* dst = dx.data.data() + n * nin;
    for_each_corner(in_d, in_h, in_w, od, oh, ow,
                    [&](int o, int s, double wt) { dst[s] += static_cast<T>(wt) * src[o];
                    });
  }
  return dx;
}

template struct Tensor<float>;
template struct Tensor<double>;
template Tensor<float> conv_transpose3d_forward(const Tensor<float>&, const Tensor<float>&,
                                                const Tensor<float>&, const ConvGeometry&);
template Tensor<double> conv_transpose3d_forward(const Tensor<double>&, const Tensor<double>&,
                                                 const Tensor<double>&, const ConvGeometry&);
template void conv_transpose3d_backward(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                        const ConvGeometry&, Tensor<float>*, Tensor<float>&,
                                        Tensor<float>*);
template void conv_transpose3d_backward(const Tensor<double>&, const Tensor<double>&,
                                        const Tensor<double>&, const ConvGeometry&, Tensor<double>*,
                                        Tensor<double>&, Tensor<double>*);
template Tensor<float> trilinear_resample(const Tensor<float>&, int, int, int);
template Tensor<double> trilinear_resample(const Tensor<double>&, int, int, int);
template Tensor<float> trilinear_resample_adjoint(const Tensor<float>&, int, int, int);
template Tensor<double> trilinear_resample_adjoint(const Tensor<double>&, int, int, int);

}  // namespace eit3d
