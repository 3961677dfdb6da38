#include "eit3d/forward_solver.hpp"

#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include <Eigen/CholmodSupport>
#include <Eigen/LU>
#include <Eigen/OrderingMethods>
#include <Eigen/SparseCholesky>

#include "eit3d/error.hpp"

namespace eit3d {

ConductivityField ConductivityField::homogeneous(const Mesh& mesh, double sigma) {
  ConductivityField f;
  f.per_element_sigma.assign(mesh.tet_count(), sigma);
  f.background_sigma = sigma;
  return f;
}

void ConductivityField::validate(int tet_count) const {
  require(static_cast<int>(per_element_sigma.size()) == tet_count,
          "conductivity field has " + std::to_string(per_element_sigma.size()) +
              " values for a mesh with " + std::to_string(tet_count) + " elements");
  for (std::size_t t = 0; t < per_element_sigma.size(); ++t) {
    const double s = per_element_sigma[t];
    require(std::isfinite(s) && s > 0.0,
            "non-positive or non-finite conductivity " + std::to_string(s) + " in element " +
                std::to_string(t));
  }
}

ElectrodeModel ElectrodeModel::uniform(int count, double z) {
  ElectrodeModel m;
  m.contact_impedance.assign(count, z);
  return m;
}

void ElectrodeModel::validate() const {
  for (std::size_t l = 0; l < contact_impedance.size(); ++l) {
    const double z = contact_impedance[l];
    require(std::isfinite(z) && z > 0.0,
            "contact impedance of electrode " + std::to_string(l + 1) + " must be positive");
  }
}

void StimulationPattern::validate(int electrode_count) const {
  require(inject_pos >= 0 && inject_pos < electrode_count && inject_neg >= 0 &&
              inject_neg < electrode_count,
          "stimulation electrode index out of range");
  require(inject_pos != inject_neg, "stimulation needs two distinct electrodes");
  require(std::isfinite(amplitude) && amplitude >= 0.0, "stimulation amplitude must be >= 0");
}

void Protocol::validate(int electrode_count) const {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const ProtocolRow& r = rows[i];
    for (int e : {r.inject_pos, r.inject_neg, r.meas_pos, r.meas_neg}) {
      require(e >= 0 && e < electrode_count,
              "protocol row " + std::to_string(i + 1) + " references electrode outside 1.." +
                  std::to_string(electrode_count));
    }
    require(r.inject_pos != r.inject_neg && r.meas_pos != r.meas_neg,
            "protocol row " + std::to_string(i + 1) + " uses the same electrode twice in a pair");
    for (int m : {r.meas_pos, r.meas_neg}) {
      require(m != r.inject_pos && m != r.inject_neg,
              "protocol row " + std::to_string(i + 1) + " measures on an injecting electrode");
    }
  }
}

Protocol generate_adjacent_protocol(int electrodes_per_ring, int rings) {
  require(electrodes_per_ring >= 4, "adjacent protocol needs at least 4 electrodes per ring");
  require(rings >= 1, "adjacent protocol needs at least one ring");
  Protocol p;
  p.id = "adjacent-" + std::to_string(electrodes_per_ring) + "x" + std::to_string(rings);
  const int pairs = electrodes_per_ring / 2;
  for (int k = 0; k < pairs; ++k) {
    for (int r = 0; r < rings; ++r) {
      const int base = r * electrodes_per_ring;
      const int a = 2 * k;
      const int b = 2 * k + 1;
      for (int m = 0; m < electrodes_per_ring; ++m) {
        const int n = (m + 1) % electrodes_per_ring;
        if (m == a || m == b || n == a || n == b) continue;
        p.rows.push_back({base + a, base + b, base + m, base + n});
      }
    }
  }
  return p;
}

void write_protocol_text(const Protocol& protocol, std::ostream& out) {
  for (const ProtocolRow& r : protocol.rows) {
    out << r.inject_pos + 1 << ' ' << r.inject_neg + 1 << ' ' << r.meas_pos + 1 << ' '
        << r.meas_neg + 1 << '\n';
  }
}

Protocol read_protocol_text(std::istream& in, std::string id) {
  Protocol p;
  p.id = std::move(id);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    int v[4];
    if (!(ls >> v[0])) continue;
    if (!(ls >> v[1] >> v[2] >> v[3])) {
      fail(ErrorKind::Format, "protocol line " + std::to_string(lineno) + ": expected 4 indices");
    }
    std::string extra;
    if (ls >> extra) {
      fail(ErrorKind::Format, "protocol line " + std::to_string(lineno) + ": trailing text");
    }
    for (int x : v) {
      if (x < 1) fail(ErrorKind::Format, "protocol line " + std::to_string(lineno) + ": indices are 1-based");
    }
    p.rows.push_back({v[0] - 1, v[1] - 1, v[2] - 1, v[3] - 1});
  }
  return p;
}

template <class Scalar>
void tet_gradients(const Mesh& mesh, int t, Eigen::Matrix<Scalar, 4, 3>& grads, Scalar& volume) {
  const Tet& e = mesh.tets[t];
  Eigen::Matrix<Scalar, 3, 3> d;
  const Point3& p0 = mesh.nodes[e[0]];
  for (int c = 0; c < 3; ++c) {
    const Point3 diff = mesh.nodes[e[c + 1]] - p0;
    for (int r = 0; r < 3; ++r) d(r, c) = static_cast<Scalar>(diff[r]);
  }
  // Rows of d^{-1} are the gradients of barycentric coordinates 1..3.
  const Eigen::Matrix<Scalar, 3, 3> inv = d.inverse();
  for (int i = 0; i < 3; ++i) grads.row(i + 1) = inv.row(i);
  grads.row(0) = -(grads.row(1) + grads.row(2) + grads.row(3));
  volume = d.determinant() / Scalar(6);
}

namespace {
// CHOLMOD's supernodal factorisation for double; Eigen's simplicial one for
// the extended-precision path, which CHOLMOD does not support.
template <class Scalar>
struct Cholesky {
  using type = Eigen::SimplicialLLT<Eigen::SparseMatrix<Scalar>, Eigen::Lower, Eigen::AMDOrdering<int>>;
};
template <>
struct Cholesky<double> {
  using type = Eigen::CholmodSimplicialLLT<Eigen::SparseMatrix<double>, Eigen::Lower>;
};
}  // namespace

template <class Scalar>
struct CemSystem<Scalar>::Factor {
  Sparse augmented;
  typename Cholesky<Scalar>::type llt;
};

template <class Scalar>
CemSystem<Scalar>::CemSystem(const Mesh& mesh, const ConductivityField& sigma,
                             const ElectrodeModel& electrodes)
    : nodes_(mesh.node_count()), electrodes_(electrodes.count()), factor_(std::make_unique<Factor>()) {
  sigma.validate(mesh.tet_count());
  electrodes.validate();
  require(electrodes.count() == mesh.electrode_count(),
          "electrode model has " + std::to_string(electrodes.count()) + " electrodes, mesh has " +
              std::to_string(mesh.electrode_count()));

  using Triplet = Eigen::Triplet<Scalar>;
  std::vector<Triplet> k_trip;
  k_trip.reserve(static_cast<std::size_t>(mesh.tet_count()) * 16);
  Eigen::Matrix<Scalar, 4, 3> g;
  Scalar vol;
  for (int t = 0; t < mesh.tet_count(); ++t) {
    tet_gradients<Scalar>(mesh, t, g, vol);
    const Scalar s = static_cast<Scalar>(sigma.per_element_sigma[t]) * vol;
    const Eigen::Matrix<Scalar, 4, 4> ke = s * (g * g.transpose());
    const Tet& e = mesh.tets[t];
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) k_trip.emplace_back(e[i], e[j], ke(i, j));
  }
  stiffness_.resize(nodes_, nodes_);
  stiffness_.setFromTriplets(k_trip.begin(), k_trip.end());

  std::vector<Triplet> trip = std::move(k_trip);
  Scalar diag_sum = 0;
  for (int l = 0; l < electrodes_; ++l) {
    const Scalar inv_z = Scalar(1) / static_cast<Scalar>(electrodes.contact_impedance[l]);
    const int ul = nodes_ + l;
    for (int b : mesh.electrode_patch[l]) {
      const Tri& f = mesh.boundary_tris[b];
      const Point3 cr = (mesh.nodes[f[1]] - mesh.nodes[f[0]]).cross(mesh.nodes[f[2]] - mesh.nodes[f[0]]);
      Eigen::Matrix<Scalar, 3, 1> crs(cr.x(), cr.y(), cr.z());
      const Scalar area = crs.norm() / Scalar(2);
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
          trip.emplace_back(f[i], f[j], inv_z * area * (i == j ? Scalar(2) : Scalar(1)) / Scalar(12));
        }
        trip.emplace_back(f[i], ul, -inv_z * area / Scalar(3));
        trip.emplace_back(ul, f[i], -inv_z * area / Scalar(3));
      }
      trip.emplace_back(ul, ul, inv_z * area);
      diag_sum += inv_z * area;
    }
  }
  const int n = unknowns();
  matrix_.resize(n, n);
  matrix_.setFromTriplets(trip.begin(), trip.end());

  alpha_ = diag_sum / static_cast<Scalar>(electrodes_);
  for (int l = 0; l < electrodes_; ++l)
    for (int m = 0; m < electrodes_; ++m) trip.emplace_back(nodes_ + l, nodes_ + m, alpha_);
  factor_->augmented.resize(n, n);
  factor_->augmented.setFromTriplets(trip.begin(), trip.end());
  factor_->llt.compute(factor_->augmented);
  if (factor_->llt.info() != Eigen::Success) {
    fail(ErrorKind::Numeric,
         "CEM system is singular after grounding (sparse Cholesky failed on " + std::to_string(n) +
             " unknowns); check that every electrode patch is connected to the mesh");
  }
}

template <class Scalar>
CemSystem<Scalar>::~CemSystem() = default;
template <class Scalar>
CemSystem<Scalar>::CemSystem(CemSystem&&) noexcept = default;
template <class Scalar>
CemSystem<Scalar>& CemSystem<Scalar>::operator=(CemSystem&&) noexcept = default;

template <class Scalar>
PotentialFieldT<Scalar> CemSystem<Scalar>::solve_currents(const std::vector<Scalar>& currents) const {
  require(static_cast<int>(currents.size()) == electrodes_, "one current per electrode required");
  Vector b = Vector::Zero(unknowns());
  Scalar net = 0, scale = 0;
  for (int l = 0; l < electrodes_; ++l) {
    b[nodes_ + l] = currents[l];
    net += currents[l];
    scale = std::max<Scalar>(scale, std::abs(currents[l]));
  }
  require(std::abs(net) <= Scalar(1e-12) * scale, "electrode currents must sum to zero");

  PotentialFieldT<Scalar> out;
  out.nodal_u.assign(nodes_, Scalar(0));
  out.electrode_U.assign(electrodes_, Scalar(0));
  const Scalar bnorm = b.norm();
  if (bnorm == Scalar(0)) {
    last_residual_ = 0.0;
    return out;
  }

  Vector x = factor_->llt.solve(b);
  Vector r = b - factor_->augmented * x;
  double rel = static_cast<double>(r.norm() / bnorm);
  for (int it = 0; it < 3 && rel > 1e-11; ++it) {
    x += factor_->llt.solve(r);
    r = b - factor_->augmented * x;
    rel = static_cast<double>(r.norm() / bnorm);
  }

  // Shift by the kernel vector so that sum(U) vanishes to rounding.
  Scalar mean_u = 0;
  for (int l = 0; l < electrodes_; ++l) mean_u += x[nodes_ + l];
  mean_u /= static_cast<Scalar>(electrodes_);
  x.array() -= mean_u;

  const Vector raw = b - matrix_ * x;
  last_residual_ = static_cast<double>(raw.norm() / bnorm);
  if (!(last_residual_ <= 1e-10)) {
    std::ostringstream msg;
    msg << "CEM solve did not converge: relative residual " << last_residual_ << " > 1e-10";
    fail(ErrorKind::Numeric, msg.str());
  }
  for (int i = 0; i < nodes_; ++i) out.nodal_u[i] = x[i];
  for (int l = 0; l < electrodes_; ++l) out.electrode_U[l] = x[nodes_ + l];
  return out;
}

template <class Scalar>
PotentialFieldT<Scalar> CemSystem<Scalar>::solve(const StimulationPattern& stim) const {
  stim.validate(electrodes_);
  std::vector<Scalar> currents(electrodes_, Scalar(0));
  currents[stim.inject_pos] = static_cast<Scalar>(stim.amplitude);
  currents[stim.inject_neg] = -static_cast<Scalar>(stim.amplitude);
  return solve_currents(currents);
}

template class CemSystem<double>;
template class CemSystem<long double>;
template void tet_gradients<double>(const Mesh&, int, Eigen::Matrix<double, 4, 3>&, double&);
template void tet_gradients<long double>(const Mesh&, int, Eigen::Matrix<long double, 4, 3>&,
                                         long double&);

SystemMatrix assemble_cem_system(const Mesh& mesh, const ConductivityField& sigma,
                                 const ElectrodeModel& electrodes) {
  return SystemMatrix(mesh, sigma, electrodes);
}

PotentialField solve_stimulation(const SystemMatrix& system, const StimulationPattern& stim) {
  return system.solve(stim);
}

template <class Scalar>
std::vector<Scalar> simulate_voltages(const Mesh& mesh, const ConductivityField& sigma,
                                      const ElectrodeModel& electrodes, const Protocol& protocol,
                                      double amplitude) {
  protocol.validate(electrodes.count());
  const CemSystem<Scalar> system(mesh, sigma, electrodes);
  std::map<std::pair<int, int>, std::vector<Scalar>> drives;
  std::vector<Scalar> out;
  out.reserve(protocol.rows.size());
  for (const ProtocolRow& row : protocol.rows) {
    auto key = std::make_pair(row.inject_pos, row.inject_neg);
    auto it = drives.find(key);
    if (it == drives.end()) {
      StimulationPattern stim{row.inject_pos, row.inject_neg, amplitude};
      it = drives.emplace(key, system.solve(stim).electrode_U).first;
    }
    out.push_back(it->second[row.meas_pos] - it->second[row.meas_neg]);
  }
  return out;
}

template std::vector<double> simulate_voltages<double>(const Mesh&, const ConductivityField&,
                                                       const ElectrodeModel&, const Protocol&, double);
template std::vector<long double> simulate_voltages<long double>(const Mesh&, const ConductivityField&,
                                                                 const ElectrodeModel&,
                                                                 const Protocol&, double);

MeasurementFrame simulate_frame(const Mesh& mesh, const ConductivityField& sigma,
                                const ElectrodeModel& electrodes, const Protocol& protocol,
                                double amplitude) {
  MeasurementFrame f;
  f.values = simulate_voltages<double>(mesh, sigma, electrodes, protocol, amplitude);
  f.protocol_id = protocol.id;
  return f;
}

}  // namespace eit3d
