#include <set>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "eit3d/phantom.hpp"

using namespace eit3d;
using fixtures::rel_diff;

TEST_CASE("adjacent protocol") {
  const Protocol p = generate_adjacent_protocol(16, 2);
  REQUIRE(p.size() == 208);
  CHECK_NOTHROW(p.validate(32));

  std::map<std::pair<int, int>, int> per_injection;
  for (const auto& r : p.rows) {
    CHECK(r.meas_pos != r.inject_pos);
    CHECK(r.meas_pos != r.inject_neg);
    CHECK(r.meas_neg != r.inject_pos);
    CHECK(r.meas_neg != r.inject_neg);
    // Same ring, adjacent pairs.
    CHECK(r.inject_pos / 16 == r.meas_pos / 16);
    CHECK((r.inject_neg - r.inject_pos + 16) % 16 == 1);
    CHECK((r.meas_neg % 16) == (r.meas_pos % 16 + 1) % 16);
    ++per_injection[{r.inject_pos, r.inject_neg}];
  }
  CHECK(per_injection.size() == 16);
  for (const auto& [k, n] : per_injection) CHECK(n == 13);
  // Injections alternate between rings.
  CHECK(p.rows.front().inject_pos / 16 == 0);
  CHECK(p.rows[13].inject_pos / 16 == 1);

  CHECK(generate_adjacent_protocol(8, 2).size() == 2 * 4 * 5);
  CHECK_THROWS_AS(generate_adjacent_protocol(3, 2), Error);
}

TEST_CASE("protocol text round trip and malformed input") {
  const Protocol p = generate_adjacent_protocol();
  std::stringstream s;
  write_protocol_text(p, s);
  const Protocol q = read_protocol_text(s);
  CHECK(q.rows == p.rows);

  std::istringstream bad("1 2 4\n");
  CHECK_THROWS_AS(read_protocol_text(bad), Error);
  std::istringstream zero("0 1 3 4\n");
  CHECK_THROWS_AS(read_protocol_text(zero), Error);
  Protocol touching;
  touching.rows.push_back({0, 1, 1, 2});
  CHECK_THROWS_AS(touching.validate(32), Error);
}

TEST_CASE("assembly") {
  const Mesh& m = fixtures::mesh(8);
  const auto sigma = ConductivityField::homogeneous(m, 1.0);
  const SystemMatrix sys = assemble_cem_system(m, sigma, fixtures::electrodes());

  SUBCASE("symmetric") {
    const Eigen::SparseMatrix<double> a = sys.matrix();
    const Eigen::SparseMatrix<double> at = a.transpose();
    CHECK((a - at).norm() <= 1e-14 * a.norm());
  }
  SUBCASE("stiffness annihilates constants") {
    const Eigen::VectorXd one = Eigen::VectorXd::Ones(sys.node_count());
    CHECK((sys.stiffness() * one).lpNorm<Eigen::Infinity>() <= 1e-12 * sys.stiffness().norm());
    // The full CEM operator annihilates (1 on nodes, 1 on electrodes) too.
    const Eigen::VectorXd all = Eigen::VectorXd::Ones(sys.unknowns());
    CHECK((sys.matrix() * all).lpNorm<Eigen::Infinity>() <= 1e-12 * sys.matrix().norm());
  }
  SUBCASE("doubling contact impedance only touches electrode coupling") {
    const SystemMatrix sys2 = assemble_cem_system(m, sigma, fixtures::electrodes(2e-3));
    CHECK((sys.stiffness() - sys2.stiffness()).norm() == 0.0);
    std::set<int> electrode_nodes;
    for (int e = 0; e < m.electrode_count(); ++e)
      for (int b : m.electrode_patch[e])
        for (int v : m.boundary_tris[b]) electrode_nodes.insert(v);
    const Eigen::SparseMatrix<double> diff = sys.matrix() - sys2.matrix();
    int changed = 0;
    for (int k = 0; k < diff.outerSize(); ++k) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(diff, k); it; ++it) {
        if (it.value() == 0.0) continue;
        ++changed;
        const bool row_e = it.row() >= sys.node_count() || electrode_nodes.count(static_cast<int>(it.row()));
        const bool col_e = it.col() >= sys.node_count() || electrode_nodes.count(static_cast<int>(it.col()));
        CHECK((row_e && col_e));
      }
    }
    CHECK(changed > 0);
  }
  SUBCASE("non-positive conductivity is rejected") {
    auto bad = sigma;
    bad.per_element_sigma[3] = 0.0;
    CHECK_THROWS_AS(assemble_cem_system(m, bad, fixtures::electrodes()), Error);
    bad.per_element_sigma[3] = std::nan("");
    CHECK_THROWS_AS(assemble_cem_system(m, bad, fixtures::electrodes()), Error);
  }
}

TEST_CASE("solves") {
  const Mesh& m = fixtures::mesh(10);
  const auto sigma = ConductivityField::homogeneous(m, 1.0);
  const SystemMatrix sys = assemble_cem_system(m, sigma, fixtures::electrodes());

  SUBCASE("residual and grounding") {
    for (auto [p, n] : {std::pair{0, 1}, std::pair{16, 17}, std::pair{3, 21}}) {
      const PotentialField f = solve_stimulation(sys, {p, n, 1e-3});
      CHECK(sys.last_residual() <= 1e-10);
      double sum = 0, mx = 0;
      for (double u : f.electrode_U) {
        sum += u;
        mx = std::max(mx, std::abs(u));
      }
      CHECK(std::abs(sum) <= 1e-9 * mx);
      CHECK(f.electrode_U[p] > f.electrode_U[n]);
    }
  }
  SUBCASE("zero amplitude gives a zero field") {
    const PotentialField f = sys.solve_currents(std::vector<double>(32, 0.0));
    for (double u : f.nodal_u) REQUIRE(u == 0.0);
    for (double u : f.electrode_U) REQUIRE(u == 0.0);
  }
  SUBCASE("linear in amplitude") {
    const PotentialField a = solve_stimulation(sys, {0, 1, 1e-3});
    const PotentialField b = solve_stimulation(sys, {0, 1, 2e-3});
    for (int l = 0; l < 32; ++l) CHECK(rel_diff(2.0 * a.electrode_U[l], b.electrode_U[l]) <= 1e-10);
  }
  SUBCASE("unbalanced currents are rejected") {
    std::vector<double> c(32, 0.0);
    c[0] = 1e-3;
    CHECK_THROWS_AS(sys.solve_currents(c), Error);
    CHECK_THROWS_AS(solve_stimulation(sys, {2, 2, 1e-3}), Error);
  }
}

TEST_CASE("frame properties") {
  const Mesh& m = fixtures::mesh(10);
  const Protocol p = generate_adjacent_protocol();
  const auto sigma = ConductivityField::homogeneous(m, 1.0);
  const auto z = fixtures::electrodes();
  const MeasurementFrame base = simulate_frame(m, sigma, z, p);
  REQUIRE(base.values.size() == 208u);

  SUBCASE("bit-identical reruns") {
    const MeasurementFrame again = simulate_frame(m, sigma, z, p);
    CHECK(again.values == base.values);
  }
  SUBCASE("scaling covariance") {
    const auto s2 = ConductivityField::homogeneous(m, 2.0);
    const MeasurementFrame f = simulate_frame(m, s2, fixtures::electrodes(0.5e-3), p);
    for (int i = 0; i < 208; ++i) CHECK(rel_diff(f.values[i], 0.5 * base.values[i]) <= 1e-8);
  }
  SUBCASE("reciprocity") {
    Protocol swapped;
    for (const auto& r : p.rows) swapped.rows.push_back({r.meas_pos, r.meas_neg, r.inject_pos, r.inject_neg});
    const MeasurementFrame f = simulate_frame(m, sigma, z, swapped);
    for (int i = 0; i < 208; ++i) CHECK(rel_diff(f.values[i], base.values[i]) <= 1e-6);
  }
  SUBCASE("a conductive inclusion lowers the mean voltage") {
    Phantom ph;
    ph.objects.push_back({Shape::Sphere, Point3(0, 0, 0.15), {0.04, 0, 0}, 0.0, 0.8});
    const auto s = embed_in_mesh(ph, m, 1.0, 0.5);
    const MeasurementFrame f = simulate_frame(m, s, z, p);
    double a = 0, b = 0;
    for (int i = 0; i < 208; ++i) {
      a += std::abs(base.values[i]);
      b += std::abs(f.values[i]);
    }
    CHECK(b < a);
  }
  SUBCASE("wide precision agrees with double") {
    const auto wide = simulate_voltages<long double>(m, sigma, z, p);
    for (int i = 0; i < 208; ++i) CHECK(rel_diff(static_cast<double>(wide[i]), base.values[i]) <= 1e-8);
  }
}

TEST_CASE("mesh refinement self-consistency, resolution 16 vs 24") {
  const Protocol p = generate_adjacent_protocol();
  const auto z = fixtures::electrodes();
  const Mesh& a = fixtures::mesh(16);
  const Mesh b = build_tank_mesh({}, 24);
  const auto fa = simulate_frame(a, ConductivityField::homogeneous(a, 1.0), z, p);
  const auto fb = simulate_frame(b, ConductivityField::homogeneous(b, 1.0), z, p);
  double worst = 0;
  for (int i = 0; i < 208; ++i) worst = std::max(worst, std::abs(fa.values[i] - fb.values[i]) / std::abs(fb.values[i]));
  MESSAGE("max relative difference " << worst);
  CHECK(worst < 0.05);
}
