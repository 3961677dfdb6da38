#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "eit3d/baseline_inverse.hpp"

using namespace eit3d;
using fixtures::rel_diff;

namespace {

Regularizer dense_reg(const Eigen::MatrixXd& m) { return {m.sparseView()}; }

}  // namespace

TEST_CASE("laplacian regularizer") {
  const VoxelMap& vm = fixtures::vmap(16);
  const Regularizer reg = build_laplace_regularizer(vm);
  const auto& l = reg.matrix;
  REQUIRE(l.rows() == vm.inside_count());
  REQUIRE(l.cols() == vm.inside_count());

  const Eigen::SparseMatrix<double> lt = l.transpose();
  CHECK((l - lt).norm() == 0.0);

  const Eigen::VectorXd one = Eigen::VectorXd::Ones(l.cols());
  const Eigen::VectorXd l1 = l * one;
  int interior = 0;
  for (int c = 0; c < vm.inside_count(); ++c) {
    CHECK(l.coeff(c, c) == 6.0);
    const auto [i, j, k] = vm.unravel(vm.inside_voxels[c]);
    int nb = 0;
    for (auto [di, dj, dk] : {std::array{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}}) {
      const int a = i + di, b = j + dj, z = k + dk;
      if (a < 0 || b < 0 || z < 0 || a >= 32 || b >= 32 || z >= 40) continue;
      const int col = vm.column_of_voxel[vm.linear(a, b, z)];
      if (col == VoxelMap::kOutside) continue;
      ++nb;
      REQUIRE(l.coeff(c, col) == -1.0);
    }
    REQUIRE(l1[c] == 6.0 - nb);
    if (nb == 6) ++interior;
  }
  CHECK(interior > vm.inside_count() / 2);
}

TEST_CASE("one-step operator on toy problems") {
  SUBCASE("identity Jacobian, zero regularizer") {
    const OneStepReconstructor r(Eigen::MatrixXd::Identity(2, 2), dense_reg(Eigen::MatrixXd::Zero(2, 2)), 0.0);
    const Eigen::VectorXd x = r.solve(Eigen::Vector2d(1, 2));
    CHECK(x[0] == doctest::Approx(1.0));
    CHECK(x[1] == doctest::Approx(2.0));
  }
  SUBCASE("zero data, linearity, damping") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd;
    Eigen::MatrixXd j(6, 10), lm = Eigen::MatrixXd::Identity(10, 10);
    for (int a = 0; a < j.size(); ++a) j.data()[a] = nd(rng);
    Eigen::VectorXd dv(6);
    for (int a = 0; a < 6; ++a) dv[a] = nd(rng);

    const OneStepReconstructor r(j, dense_reg(lm), 0.1);
    CHECK(r.solve(Eigen::VectorXd::Zero(6)).norm() == 0.0);
    CHECK((r.solve(2.0 * dv) - 2.0 * r.solve(dv)).norm() <= 1e-12 * r.solve(dv).norm());

    double prev = 1e300;
    for (double lam : {1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0}) {
      const double n = OneStepReconstructor(j, dense_reg(lm), lam).solve(dv).norm();
      CHECK(n < prev);
      prev = n;
    }
    CHECK(OneStepReconstructor(j, dense_reg(lm), 1e9).solve(dv).norm() < 1e-6);
  }
  SUBCASE("under-determined problem needs lambda > 0") {
    Eigen::MatrixXd j(2, 3);
    j << 1, 0, 1, 0, 1, 1;
    CHECK_THROWS_AS(OneStepReconstructor(j, dense_reg(Eigen::MatrixXd::Identity(3, 3)), 0.0), Error);
    CHECK_THROWS_AS(OneStepReconstructor(j, dense_reg(Eigen::MatrixXd::Identity(3, 3)), -1.0), Error);
    CHECK_NOTHROW(OneStepReconstructor(j, dense_reg(Eigen::MatrixXd::Identity(3, 3)), 1e-3));
  }
}

TEST_CASE("large path satisfies the normal equations") {
  const int n = OneStepReconstructor::kDenseLimit + 40;
  const int m = 12;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  Eigen::MatrixXd j(m, n);
  for (int a = 0; a < j.size(); ++a) j.data()[a] = nd(rng);
  std::vector<Eigen::Triplet<double>> t;
  for (int i = 0; i < n; ++i) {
    t.emplace_back(i, i, 3.0);
    if (i + 1 < n) {
      t.emplace_back(i, i + 1, -1.0);
      t.emplace_back(i + 1, i, -1.0);
    }
  }
  Regularizer reg;
  reg.matrix.resize(n, n);
  reg.matrix.setFromTriplets(t.begin(), t.end());
  const double lambda = 0.05;
  const OneStepReconstructor r(j, reg, lambda);
  const Eigen::MatrixXd& op = r.operator_matrix();
  REQUIRE(op.rows() == n);
  REQUIRE(op.cols() == m);
  // (J^T J + lambda L^T L) R - J^T, evaluated without forming n x n matrices.
  const Eigen::MatrixXd lhs = j.transpose() * (j * op) + lambda * (reg.matrix.transpose() * (reg.matrix * op));
  CHECK((lhs - j.transpose()).norm() <= 1e-9 * j.norm());

  CHECK_THROWS_AS(OneStepReconstructor(j, reg, 0.0), Error);
}

TEST_CASE("element sensitivities match finite differences") {
  const Mesh& mesh = fixtures::mesh(8);
  const auto z = fixtures::electrodes();
  const Protocol p = generate_adjacent_protocol();
  const auto sigma = ConductivityField::homogeneous(mesh, 1.0);
  const Eigen::MatrixXd je = compute_element_jacobian<double>(mesh, sigma, z, p);
  REQUIRE(je.rows() == 208);
  REQUIRE(je.cols() == mesh.tet_count());

  // Elements on electrode 0, one at the axis, one near the bottom.
  std::vector<int> elems;
  const int tri = mesh.electrode_patch[0].front();
  for (int t = 0; t < mesh.tet_count() && elems.empty(); ++t) {
    int shared = 0;
    for (int v : mesh.tets[t])
      for (int w : mesh.boundary_tris[tri]) shared += v == w;
    if (shared == 3) elems.push_back(t);
  }
  int best = 0, low = 0;
  for (int t = 0; t < mesh.tet_count(); ++t) {
    const Point3 c = mesh.tet_centroid(t);
    if ((c - Point3(0, 0, 0.15)).norm() < (mesh.tet_centroid(best) - Point3(0, 0, 0.15)).norm()) best = t;
    if (c.z() < mesh.tet_centroid(low).z()) low = t;
  }
  elems.push_back(best);
  elems.push_back(low);
  REQUIRE(elems.size() == 3);

  for (int e : elems) {
    const double h = 1e-3;
    auto up = sigma, dn = sigma;
    up.per_element_sigma[e] += h;
    dn.per_element_sigma[e] -= h;
    const auto vu = simulate_frame(mesh, up, z, p).values;
    const auto vd = simulate_frame(mesh, dn, z, p).values;
    const double scale = je.col(e).cwiseAbs().maxCoeff();
    REQUIRE(scale > 0.0);
    double worst = 0;
    for (int i = 0; i < 208; ++i) worst = std::max(worst, std::abs((vu[i] - vd[i]) / (2 * h) - je(i, e)) / scale);
    CAPTURE(e);
    CHECK(worst < 1e-4);
  }

  SUBCASE("sensitivity density peaks near the electrodes") {
    std::vector<double> dens(mesh.tet_count());
    for (int t = 0; t < mesh.tet_count(); ++t) dens[t] = je.col(t).norm() / mesh.tet_volume(t);
    std::vector<double> sorted = dens;
    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
    CHECK(dens[elems[0]] >= sorted[sorted.size() / 2]);
    CHECK(dens[elems[0]] > dens[elems[1]]);
  }
}

TEST_CASE("voxel Jacobian and normalization") {
  const Mesh& mesh = fixtures::mesh(8);
  const VoxelMap& vm = fixtures::vmap(8);
  const auto z = fixtures::electrodes();
  const Protocol p = generate_adjacent_protocol();
  const auto sigma = ConductivityField::homogeneous(mesh, 1.0);
  const Jacobian jac = compute_jacobian(mesh, sigma, z, p, vm);
  REQUIRE(jac.matrix.rows() == 208);
  REQUIRE(jac.matrix.cols() == vm.inside_count());

  // Voxel columns are element columns summed by owner.
  const Eigen::MatrixXd je = compute_element_jacobian<double>(mesh, sigma, z, p);
  Eigen::VectorXd total = Eigen::VectorXd::Zero(208);
  for (int t = 0; t < mesh.tet_count(); ++t) total += je.col(t);
  CHECK((jac.matrix.rowwise().sum() - total).norm() <= 1e-10 * total.norm());

  const MeasurementFrame ref = simulate_frame(mesh, sigma, z, p);
  const Eigen::MatrixXd nj = normalize_jacobian(jac, ref, 0.5);
  for (int i : {0, 50, 207}) {
    const int c = static_cast<int>(vm.inside_count() / 2);
    CHECK(rel_diff(nj(i, c), jac.matrix(i, c) * 0.5 / std::abs(ref.values[i])) <= 1e-14);
  }
  MeasurementFrame bad = ref;
  bad.values[3] = 0.0;
  CHECK_THROWS_AS(normalize_jacobian(jac, bad, 0.5), Error);

  SUBCASE("scatter leaves outside voxels at zero") {
    const VoxelVolume v = scatter_to_grid(Eigen::VectorXd::Ones(vm.inside_count()), vm);
    for (int idx = 0; idx < vm.voxel_count(); ++idx) REQUIRE(v.data[idx] == (vm.inside(idx) ? 1.0f : 0.0f));
  }
}
