#pragma once

#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "eit3d/forward_solver.hpp"
#include "eit3d/mesh.hpp"
#include "eit3d/volume.hpp"

namespace eit3d {

/// Linearized map from per-voxel conductivity change (S/m) to frame change (V),
/// one column per inside voxel in VoxelMap::inside_voxels order.
struct Jacobian {
  Eigen::MatrixXd matrix;
  ConductivityField reference_sigma;
};

/// Per-element sensitivities dV_row / d sigma_e = -int_e grad(u_drive) . grad(u_meas),
/// where u_meas is the field of unit current through the row's measurement
/// pair. Costs one factorization plus one solve per distinct electrode pair.
template <class Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> compute_element_jacobian(
    const Mesh& mesh, const ConductivityField& sigma_ref, const ElectrodeModel& electrodes,
    const Protocol& protocol, double amplitude = 1e-3);

/// Element sensitivities summed into the voxel that owns each element.
Jacobian compute_jacobian(const Mesh& mesh, const ConductivityField& sigma_ref,
                          const ElectrodeModel& electrodes, const Protocol& protocol,
                          const VoxelMap& vmap, double amplitude = 1e-3);

/// Rescales rows to the normalized-frame / normalized-contrast units used by
/// the datasets: J_ij * contrast_scale / |v_ref_i|.
Eigen::MatrixXd normalize_jacobian(const Jacobian& jacobian, const MeasurementFrame& reference,
                                   double contrast_scale);

struct Regularizer {
  Eigen::SparseMatrix<double> matrix;
};

/// 6-neighbour Laplacian over inside voxels: 6 on the diagonal, -1 per inside
/// neighbour. Voxels outside the tank are fixed at zero, which makes the
/// operator symmetric positive definite.
Regularizer build_laplace_regularizer(const VoxelMap& vmap);

/// 1e-3 * trace(J^T J) / trace(L^T L).
double default_lambda(const Eigen::MatrixXd& jacobian, const Regularizer& reg);

/// Precomputed one-step Gauss-Newton operator R = (J^T J + lambda L^T L)^{-1} J^T.
///
/// Small problems are solved with a dense factorization of the normal matrix.
/// Large ones use the push-through identity
///   (S + J^T J)^{-1} J^T = S^{-1} J^T (I + J S^{-1} J^T)^{-1},  S = lambda L^T L,
/// which needs only a sparse factorization of L and an m x m dense solve.
class OneStepReconstructor {
 public:
  OneStepReconstructor(const Eigen::MatrixXd& jacobian, const Regularizer& reg, double lambda);

  double lambda() const { return lambda_; }
  const Eigen::MatrixXd& operator_matrix() const { return op_; }
  /// Conductivity change per column.
  Eigen::VectorXd solve(const Eigen::VectorXd& delta_v) const;

  static constexpr int kDenseLimit = 3000;

 private:
  double lambda_;
  Eigen::MatrixXd op_;
};

/// Scatters column values back to the grid; outside voxels are zero.
VoxelVolume scatter_to_grid(const Eigen::VectorXd& columns, const VoxelMap& vmap);

VoxelVolume one_step_reconstruct(const Eigen::MatrixXd& jacobian, const Regularizer& reg,
                                 double lambda, const std::vector<double>& delta_v,
                                 const VoxelMap& vmap);

}  // namespace eit3d
