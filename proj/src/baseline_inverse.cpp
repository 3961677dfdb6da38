#include "eit3d/baseline_inverse.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/OrderingMethods>
#include <Eigen/SparseCholesky>

#include "eit3d/error.hpp"

namespace eit3d {

template <class Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> compute_element_jacobian(
    const Mesh& mesh, const ConductivityField& sigma_ref, const ElectrodeModel& electrodes,
    const Protocol& protocol, double amplitude) {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  protocol.validate(electrodes.count());
  const CemSystem<Scalar> system(mesh, sigma_ref, electrodes);
  const int ne = mesh.tet_count();

  std::vector<Eigen::Matrix<Scalar, 4, 3>> grads(ne);
  std::vector<Scalar> vols(ne);
  for (int t = 0; t < ne; ++t) tet_gradients<Scalar>(mesh, t, grads[t], vols[t]);

  // Element gradients of the field driven through (pos, neg) at the given amplitude.
  std::map<std::pair<int, int>, Eigen::Matrix<Scalar, Eigen::Dynamic, 3>> fields;
  auto field = [&](int pos, int neg) -> const Eigen::Matrix<Scalar, Eigen::Dynamic, 3>& {
    auto key = std::make_pair(pos, neg);
    auto it = fields.find(key);
    if (it != fields.end()) return it->second;
    const auto u = system.solve(StimulationPattern{pos, neg, 1.0}).nodal_u;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 3> g(ne, 3);
    for (int t = 0; t < ne; ++t) {
      Eigen::Matrix<Scalar, 1, 3> acc = Eigen::Matrix<Scalar, 1, 3>::Zero();
      for (int i = 0; i < 4; ++i) acc += u[mesh.tets[t][i]] * grads[t].row(i);
      g.row(t) = acc;
    }
    return fields.emplace(key, std::move(g)).first->second;
  };

  Mat jac(protocol.size(), ne);
  const Scalar amp = static_cast<Scalar>(amplitude);
  for (int r = 0; r < protocol.size(); ++r) {
    const ProtocolRow& row = protocol.rows[r];
    const auto& gd = field(row.inject_pos, row.inject_neg);
    const auto& gm = field(row.meas_pos, row.meas_neg);
    for (int t = 0; t < ne; ++t) jac(r, t) = -amp * vols[t] * gd.row(t).dot(gm.row(t));
  }
  return jac;
}

template Eigen::MatrixXd compute_element_jacobian<double>(const Mesh&, const ConductivityField&,
                                                          const ElectrodeModel&, const Protocol&,
                                                          double);
template Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>
compute_element_jacobian<long double>(const Mesh&, const ConductivityField&, const ElectrodeModel&,
                                      const Protocol&, double);

Jacobian compute_jacobian(const Mesh& mesh, const ConductivityField& sigma_ref,
                          const ElectrodeModel& electrodes, const Protocol& protocol,
                          const VoxelMap& vmap, double amplitude) {
  require(static_cast<int>(vmap.voxel_of_tet.size()) == mesh.tet_count(),
          "voxel map was built for a different mesh");
  const Eigen::MatrixXd elem =
      compute_element_jacobian<double>(mesh, sigma_ref, electrodes, protocol, amplitude);
  Jacobian j;
  j.reference_sigma = sigma_ref;
  j.matrix = Eigen::MatrixXd::Zero(protocol.size(), vmap.inside_count());
  for (int t = 0; t < mesh.tet_count(); ++t) {
    j.matrix.col(vmap.column_of_voxel[vmap.voxel_of_tet[t]]) += elem.col(t);
  }
  if (!j.matrix.allFinite()) fail(ErrorKind::Numeric, "non-finite entry in Jacobian");
  return j;
}

Eigen::MatrixXd normalize_jacobian(const Jacobian& jacobian, const MeasurementFrame& reference,
                                   double contrast_scale) {
  require(static_cast<Eigen::Index>(reference.values.size()) == jacobian.matrix.rows(),
          "reference frame length does not match Jacobian rows");
  Eigen::MatrixXd out = jacobian.matrix;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double v = std::abs(reference.values[i]);
    require(v > 0.0, "reference frame row " + std::to_string(i + 1) + " is zero");
    out.row(i) *= contrast_scale / v;
  }
  return out;
}

Regularizer build_laplace_regularizer(const VoxelMap& vmap) {
  const int n = vmap.inside_count();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(n) * 7);
  const auto& d = vmap.grid_dims;
  static constexpr int kOffsets[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0},
                                         {0, 1, 0},  {0, 0, -1}, {0, 0, 1}};
  for (int c = 0; c < n; ++c) {
    const auto [i, j, k] = vmap.unravel(vmap.inside_voxels[c]);
    trip.emplace_back(c, c, 6.0);
    for (const auto& o : kOffsets) {
      const int a = i + o[0], b = j + o[1], e = k + o[2];
      if (a < 0 || b < 0 || e < 0 || a >= d[0] || b >= d[1] || e >= d[2]) continue;
      const int nb = vmap.column_of_voxel[vmap.linear(a, b, e)];
      if (nb != VoxelMap::kOutside) trip.emplace_back(c, nb, -1.0);
    }
  }
  Regularizer reg;
  reg.matrix.resize(n, n);
  reg.matrix.setFromTriplets(trip.begin(), trip.end());
  return reg;
}

double default_lambda(const Eigen::MatrixXd& jacobian, const Regularizer& reg) {
  const double tl = reg.matrix.squaredNorm();
  require(tl > 0.0, "default lambda needs a non-zero regularizer");
  return 1e-3 * jacobian.squaredNorm() / tl;
}

OneStepReconstructor::OneStepReconstructor(const Eigen::MatrixXd& jac, const Regularizer& reg,
                                           double lambda)
    : lambda_(lambda) {
  require(std::isfinite(lambda) && lambda >= 0.0, "lambda must be a finite non-negative number");
  const Eigen::Index n = jac.cols();
  const Eigen::Index m = jac.rows();
  require(reg.matrix.cols() == n, "regularizer size does not match Jacobian columns");

  if (n <= kDenseLimit) {
    Eigen::MatrixXd normal = jac.transpose() * jac;
    if (lambda > 0.0) {
      const Eigen::MatrixXd l = Eigen::MatrixXd(reg.matrix);
      normal += lambda * (l.transpose() * l);
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);
    const Eigen::VectorXd d = ldlt.vectorD().cwiseAbs();
    const bool singular = d.size() > 0 && !(d.minCoeff() > 1e-13 * d.maxCoeff());
    if (ldlt.info() != Eigen::Success || singular || !(ldlt.rcond() > 1e-13)) {
      fail(ErrorKind::Numeric,
           "normal matrix J^T J + lambda L^T L is singular (lambda = " + std::to_string(lambda) +
               "); use lambda > 0");
    }
    op_ = ldlt.solve(jac.transpose());
    return;
  }

  if (lambda == 0.0) {
    fail(ErrorKind::Numeric, "normal matrix J^T J is singular with " + std::to_string(n) +
                                 " unknowns and " + std::to_string(m) +
                                 " measurements at lambda = 0; use lambda > 0");
  }
  const Eigen::SparseMatrix<double>& l = reg.matrix;
  require(l.rows() == n, "large-problem path needs a square regularizer");
  Eigen::MatrixXd y;
  const bool symmetric = (Eigen::SparseMatrix<double>(l.transpose()) - l).norm() == 0.0;
  if (symmetric) {
    Eigen::SimplicialLLT<Eigen::SparseMatrix<double>, Eigen::Lower, Eigen::AMDOrdering<int>> llt(l);
    if (llt.info() != Eigen::Success) {
      fail(ErrorKind::Numeric, "regularizer is not positive definite; cannot factor L");
    }
    y = llt.solve(Eigen::MatrixXd(llt.solve(jac.transpose())));
  } else {
    const Eigen::SparseMatrix<double> ltl = l.transpose() * l;
    Eigen::SimplicialLLT<Eigen::SparseMatrix<double>, Eigen::Lower, Eigen::AMDOrdering<int>> llt(ltl);
    if (llt.info() != Eigen::Success) {
      fail(ErrorKind::Numeric, "L^T L is singular; cannot form the reconstruction operator");
    }
    y = llt.solve(jac.transpose());
  }
  y /= lambda;
  Eigen::MatrixXd g = jac * y;
  g.diagonal().array() += 1.0;
  Eigen::LLT<Eigen::MatrixXd> small(g);
  if (small.info() != Eigen::Success) fail(ErrorKind::Numeric, "data-space system is singular");
  op_ = small.solve(y.transpose()).transpose();
}

Eigen::VectorXd OneStepReconstructor::solve(const Eigen::VectorXd& delta_v) const {
  require(delta_v.size() == op_.cols(),
          "frame has " + std::to_string(delta_v.size()) + " entries, operator expects " +
              std::to_string(op_.cols()));
  return op_ * delta_v;
}

VoxelVolume scatter_to_grid(const Eigen::VectorXd& columns, const VoxelMap& vmap) {
  require(columns.size() == vmap.inside_count(), "column vector does not match voxel map");
  VoxelVolume v;
  for (int c = 0; c < vmap.inside_count(); ++c) {
    v.data[vmap.inside_voxels[c]] = static_cast<float>(columns[c]);
  }
  return v;
}

VoxelVolume one_step_reconstruct(const Eigen::MatrixXd& jacobian, const Regularizer& reg,
                                 double lambda, const std::vector<double>& delta_v,
                                 const VoxelMap& vmap) {
  const OneStepReconstructor rec(jacobian, reg, lambda);
  return scatter_to_grid(rec.solve(Eigen::Map<const Eigen::VectorXd>(
                             delta_v.data(), static_cast<Eigen::Index>(delta_v.size()))),
                         vmap);
}

}  // namespace eit3d
