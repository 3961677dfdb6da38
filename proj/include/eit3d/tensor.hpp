#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace eit3d {

/// Dense row-major array, last axis fastest.
template <class T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, T fill = T(0));

  std::size_t size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  void zero();
  Tensor& reshape(std::vector<int> s);
};

std::string shape_string(const std::vector<int>& shape);
std::size_t shape_numel(const std::vector<int>& shape);

struct ConvGeometry {
  int kernel = 4;
  int stride = 2;
  int padding = 1;
  int out_extent(int in) const { return (in - 1) * stride - 2 * padding + kernel; }

  friend bool operator==(const ConvGeometry&, const ConvGeometry&) = default;
};

/// Transposed 3-D convolution. x is (C_in, D, H, W) or (B, C_in, D, H, W),
/// w is (C_in, C_out, k, k, k), bias is (C_out) or empty. Every input element
/// scatters x * w[ci, co] into the output block starting at i * stride - padding.
template <class T>
Tensor<T> conv_transpose3d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                                   const ConvGeometry& g);

/// Adjoint of the above. dw (and db when non-null) are accumulated into;
/// dx, when non-null, is overwritten.
template <class T>
void conv_transpose3d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                               const ConvGeometry& g, Tensor<T>* dx, Tensor<T>& dw, Tensor<T>* db);

/// Align-corners trilinear resampling of the last three axes of a
/// (..., D, H, W) tensor to (..., out_d, out_h, out_w).
template <class T>
Tensor<T> trilinear_resample(const Tensor<T>& x, int out_d, int out_h, int out_w);

/// Adjoint of trilinear_resample: spreads dy back onto the source grid.
template <class T>
Tensor<T> trilinear_resample_adjoint(const Tensor<T>& dy, int in_d, int in_h, int in_w);

}  // namespace eit3d
