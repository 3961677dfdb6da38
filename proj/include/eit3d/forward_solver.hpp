#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "eit3d/mesh.hpp"

namespace eit3d {

/// One conductivity per tetrahedron (S/m).
struct ConductivityField {
  std::vector<double> per_element_sigma;
  double background_sigma = 1.0;

  static ConductivityField homogeneous(const Mesh& mesh, double sigma);
  /// Throws InvalidArgument on a size mismatch or a non-positive/non-finite value.
  void validate(int tet_count) const;
};

/// Contact impedance per electrode (Ohm m^2).
struct ElectrodeModel {
  std::vector<double> contact_impedance;

  static ElectrodeModel uniform(int count, double z);
  int count() const { return static_cast<int>(contact_impedance.size()); }
  void validate() const;
};

/// +amplitude into inject_pos, -amplitude out of inject_neg. Indices 0-based.
struct StimulationPattern {
  int inject_pos = 0;
  int inject_neg = 1;
  double amplitude = 1e-3;

  void validate(int electrode_count) const;
};

struct ProtocolRow {
  int inject_pos;
  int inject_neg;
  int meas_pos;
  int meas_neg;

  friend bool operator==(const ProtocolRow&, const ProtocolRow&) = default;
};

struct Protocol {
  std::vector<ProtocolRow> rows;
  std::string id;

  int size() const { return static_cast<int>(rows.size()); }
  /// Checks electrode ranges and that no measurement pair touches its drive pair.
  void validate(int electrode_count) const;
};

/// Adjacent drive/measure protocol. Injections alternate between rings over
/// the ring-local pairs (0,1), (2,3), ...; each injection is followed by every
/// same-ring adjacent measurement pair (m, m+1) that avoids both injecting
/// electrodes. Electrode e of ring r has global index r * electrodes_per_ring + e.
/// For 16 electrodes and 2 rings this yields 16 x 13 = 208 rows.
Protocol generate_adjacent_protocol(int electrodes_per_ring = 16, int rings = 2);

/// One "ip in mp mn" line per row, 1-based electrode indices.
void write_protocol_text(const Protocol& protocol, std::ostream& out);
Protocol read_protocol_text(std::istream& in, std::string id = "custom");

template <class Scalar>
struct PotentialFieldT {
  std::vector<Scalar> nodal_u;
  std::vector<Scalar> electrode_U;
};
using PotentialField = PotentialFieldT<double>;

struct MeasurementFrame {
  std::vector<double> values;
  std::string protocol_id;
};

/// Assembled complete-electrode-model system over (nodal potentials,
/// electrode potentials) with linear tetrahedra, plus its sparse Cholesky
/// factorization.
///
/// The raw matrix has the constant vector in its kernel. Grounding adds the
/// rank-one term alpha * e e^T over the electrode unknowns; for any
/// charge-balanced right-hand side the solution of the augmented system
/// satisfies sum(U) = 0 and the raw equations exactly, and the augmented
/// matrix is positive definite.
///
/// Scalar is double for production and long double for wide-precision checks.
template <class Scalar>
class CemSystem {
 public:
  using Sparse = Eigen::SparseMatrix<Scalar>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  CemSystem(const Mesh& mesh, const ConductivityField& sigma, const ElectrodeModel& electrodes);
  ~CemSystem();
  CemSystem(CemSystem&&) noexcept;
  CemSystem& operator=(CemSystem&&) noexcept;

  int node_count() const { return nodes_; }
  int electrode_count() const { return electrodes_; }
  int unknowns() const { return nodes_ + electrodes_; }

  /// Pure conductivity block (no contact terms).
  const Sparse& stiffness() const { return stiffness_; }
  /// Full CEM matrix before grounding.
  const Sparse& matrix() const { return matrix_; }
  Scalar grounding_weight() const { return alpha_; }

  /// Solve for arbitrary electrode currents; they must sum to zero.
  PotentialFieldT<Scalar> solve_currents(const std::vector<Scalar>& currents) const;
  PotentialFieldT<Scalar> solve(const StimulationPattern& stim) const;

  /// Relative residual ||A x - b|| / ||b|| of the last solve.
  double last_residual() const { return last_residual_; }

 private:
  struct Factor;
  int nodes_ = 0;
  int electrodes_ = 0;
  Scalar alpha_ = 0;
  Sparse stiffness_;
  Sparse matrix_;
  std::unique_ptr<Factor> factor_;
  mutable double last_residual_ = 0.0;
};

extern template class CemSystem<double>;
extern template class CemSystem<long double>;

using SystemMatrix = CemSystem<double>;

SystemMatrix assemble_cem_system(const Mesh& mesh, const ConductivityField& sigma,
                                 const ElectrodeModel& electrodes);
PotentialField solve_stimulation(const SystemMatrix& system, const StimulationPattern& stim);

/// One assembly and factorization, one solve per distinct injection pair,
/// then U[meas_pos] - U[meas_neg] per protocol row.
template <class Scalar>
std::vector<Scalar> simulate_voltages(const Mesh& mesh, const ConductivityField& sigma,
                                      const ElectrodeModel& electrodes, const Protocol& protocol,
                                      double amplitude = 1e-3);

MeasurementFrame simulate_frame(const Mesh& mesh, const ConductivityField& sigma,
                                const ElectrodeModel& electrodes, const Protocol& protocol,
                                double amplitude = 1e-3);

/// Barycentric gradients of a linear tetrahedron (rows 0..3) and its volume.
template <class Scalar>
void tet_gradients(const Mesh& mesh, int t, Eigen::Matrix<Scalar, 4, 3>& grads, Scalar& volume);

}  // namespace eit3d
