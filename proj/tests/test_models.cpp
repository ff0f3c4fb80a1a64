#include <doctest.h>

#include "modlink/error.hpp"
#include "modlink/models.hpp"
#include "support.hpp"

using namespace modlink;
using namespace testing;

namespace {

Vector generalized_eigenvalues(const SparseMatrix& k, const SparseMatrix& m) {
  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> eig{Matrix(k), Matrix(m)};
  return eig.eigenvalues();
}

double first_beam_frequency(Index elements, bool clamped, Index skip) {
  const double l = 1.0, ei = 1.0, rho_a = 1.0;
  const auto b = beam_matrices(elements, l, ei, rho_a, clamped);
  return std::sqrt(generalized_eigenvalues(b.stiffness, b.mass)(skip));
}

}  // namespace

TEST_CASE("chain matrices") {
  ChainSpec s;
  s.n = 1;
  CHECK(Matrix(make_chain(s).stiffness())(0, 0) == 1.0);

  s.n = 2;
  s.stiffness = 3.0;
  Matrix k2(2, 2);
  k2 << 6, -3, -3, 3;
  CHECK(Matrix(make_chain(s).stiffness()) == k2);

  s.n = 5;
  s.stiffness = 1.0;
  s.boundary = ChainBoundary::free_free;
  const auto lam = generalized_eigenvalues(make_chain(s).stiffness(), make_chain(s).mass());
  CHECK(std::abs(lam(0)) <= 1e-14);
  CHECK(lam(1) > 1e-3);

  s.boundary = ChainBoundary::fixed_fixed;
  s.damping = 0.5;
  s.io_dofs = {0, 4};
  const auto sys = make_chain(s);
  CHECK(Matrix(sys.stiffness())(4, 4) == 2.0);
  CHECK(Matrix(sys.damping())(0, 0) == 1.0);
  CHECK(sys.ports().inputs.size() == 2);
  CHECK(sys.ports().outputs[1].label == "q4");

  s.n = 0;
  CHECK_THROWS_AS(make_chain(s), ValidationError);
}

TEST_CASE("beam matrices converge to the continuous beam") {
  // Euler-Bernoulli, unit properties: clamped-clamped and free-free share
  // beta_1 L = 4.7300407.
  const double exact = 4.7300407448627 * 4.7300407448627;
  const double coarse = first_beam_frequency(16, true, 0), fine = first_beam_frequency(64, true, 0);
  CHECK(std::abs(fine / exact - 1.0) < 0.01);
  CHECK(std::abs(fine - exact) < std::abs(coarse - exact));
  CHECK(std::abs(first_beam_frequency(64, false, 2) / exact - 1.0) < 0.01);

  const auto free = beam_matrices(8, 1.0, 1.0, 1.0, false);
  const auto lam = generalized_eigenvalues(free.stiffness, free.mass);
  CHECK(std::abs(lam(0)) <= 1e-10);
  CHECK(std::abs(lam(1)) <= 1e-10);
  CHECK(lam(2) > 1.0);
  CHECK(free.node_of_dof.size() == 9);

  const auto clamped = beam_matrices(8, 1.0, 1.0, 1.0, true);
  CHECK(clamped.node_of_dof.front() == 1);
  CHECK(clamped.node_of_dof.back() == 7);
  CHECK(Matrix(clamped.mass).sum() == doctest::Approx(7.0 / 8.0));
  CHECK_THROWS_AS(beam_matrices(1, 1.0, 1.0, 1.0, false), ValidationError);
}

TEST_CASE("two-stage bench") {
  const auto a = make_two_stage_bench();
  const auto b = make_two_stage_bench();
  REQUIRE(a.subsystems.size() == 2);
  for (std::size_t j = 0; j < 2; ++j) {
    CHECK(Matrix(a.subsystems[j].stiffness()) == Matrix(b.subsystems[j].stiffness()));
    CHECK(Matrix(a.subsystems[j].damping()) == Matrix(b.subsystems[j].damping()));
    const Matrix m(a.subsystems[j].mass()), k(a.subsystems[j].stiffness());
    CHECK((m - m.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK((k - k.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * k.cwiseAbs().maxCoeff());
    CHECK(m.diagonal().minCoeff() > 0.0);
  }
  CHECK(a.subsystems[0].n_dof() == 63);
  CHECK(a.subsystems[1].n_dof() == 33);
  CHECK(a.interfaces.size() == 1);
  CHECK(a.interfaces[0].springs.size() == 3);
  CHECK(a.interfaces[0].side_ell.points.size() == 9);
  CHECK(a.static_interfaces[0].side_ell.points.size() == 63);
  CHECK(a.omega_max == doctest::Approx(2 * M_PI * 400.0));

  // Rail clamped, carriage free-free with two rigid modes.
  CHECK(undamped_modes(a.subsystems[0].mass(), a.subsystems[0].stiffness()).n_rigid == 0);
  CHECK(undamped_modes(a.subsystems[1].mass(), a.subsystems[1].stiffness()).n_rigid == 2);

  StageModelConfig two;
  two.interfaces = 2;
  const auto c = make_two_stage_bench(two);
  REQUIRE(c.interfaces.size() == 2);
  CHECK(c.interfaces[0].springs.size() == 2);
  CHECK(c.interfaces[1].springs.size() == 1);
  CHECK(c.interfaces[1].id == "guide1");
}

TEST_CASE("bench configuration validation collects every issue") {
  StageModelConfig cfg;
  cfg.n_v = 1;
  cfg.zeta = 1.5;
  cfg.spring_stiffness = -1.0;
  cfg.interfaces = 3;
  try {
    cfg.validate();
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(e.issues().size() >= 4);
  }
  StageModelConfig off_mesh;
  off_mesh.n_v = 8;  // 0.32 / 7 is not a multiple of the element length
  CHECK_THROWS_AS(make_two_stage_bench(off_mesh), ValidationError);
  StageModelConfig outside;
  outside.anchors = {0.04, 0.4};
  CHECK_THROWS_AS(outside.validate(), ValidationError);
}

TEST_CASE("make_operating_grid") {
  const auto one = make_operating_grid({{-0.02, 0.02, 3}});
  REQUIRE(one.size() == 3);
  CHECK(one[0].offsets == std::vector<double>{-0.02});
  CHECK(std::abs(one[1].offsets[0]) <= 1e-18);
  CHECK(one[2].offsets == std::vector<double>{0.02});

  CHECK(make_operating_grid({{0.0, 0.1, 1}})[0].offsets == std::vector<double>{0.05});

  const auto grid = make_operating_grid({{0.0, 1.0, 3}, {10.0, 12.0, 3}});
  REQUIRE(grid.size() == 9);
  CHECK(grid[0].offsets == std::vector<double>{0.0, 10.0});
  CHECK(grid[1].offsets == std::vector<double>{0.0, 11.0});
  CHECK(grid[3].offsets == std::vector<double>{0.5, 10.0});
  CHECK(grid[8].offsets == std::vector<double>{1.0, 12.0});

  CHECK(make_operating_grid({}).size() == 1);
  CHECK_THROWS_AS(make_operating_grid({{0.0, 1.0, 0}}), ValidationError);
  CHECK_THROWS_AS(make_operating_grid({{1.0, 0.0, 2}}), ValidationError);
}

TEST_CASE("bench position-dependent model against the static ground truth") {
  const auto omega = frequency_grid(2 * M_PI * 5.0, 2 * M_PI * 400.0, 120);

  SUBCASE("aligned operating point is exact") {
    const BenchAssembly bench(StageModelConfig{});
    const auto gb = bench.frf(omega);
    const auto gs = bench.static_frf(omega);
    const OperatingPoint zero{{0.0}};
    CHECK(siso_rel(bench.posdep(gb, zero), bench.exact(gs, zero)) <= 1e-10);
  }
  SUBCASE("refining the virtual grid does not increase the error") {
    const OperatingPoint op{{0.01}};
    double previous = std::numeric_limits<double>::infinity();
    for (Index n_v : {3, 5, 9, 17}) {
      StageModelConfig cfg;
      cfg.n_v = n_v;
      const BenchAssembly bench(cfg);
      const double err = siso_rel(bench.posdep(bench.frf(omega), op), bench.exact(bench.static_frf(omega), op));
      MESSAGE("n_v = " << n_v << ": " << err);
      CHECK(err <= previous * (1.0 + 1e-9));
      previous = err;
    }
  }
}
