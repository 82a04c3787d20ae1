#include <random>

#include "cmt/objective.hpp"
#include "cmt/pyramid.hpp"
#include "doctest.h"
#include "expect_error.hpp"
#include "phantoms.hpp"

using namespace cmt;
using namespace cmt::test;

namespace {

struct Problem {
  ScalarField tmpl;
  std::vector<ScalarField> targets;
  std::vector<VelocityField> vels;
};

Problem make_problem(int n, int subjects) {
  const Grid g = cube_grid(n);
  Problem p{smooth_image(g, 1), {}, {}};
  for (int s = 0; s < subjects; ++s) {
    p.targets.push_back(smooth_image(g, 10 + static_cast<unsigned>(s)));
    VelocityField v(g, 7);
    static_cast<VectorField&>(v) = smooth_field(g, 0.6, 20 + static_cast<unsigned>(s));
    p.vels.push_back(v);
  }
  return p;
}

}  // namespace

TEST_CASE("objective terms combine with their weights") {
  const Problem p = make_problem(8, 3);
  ObjectiveWeights w;
  w.lambda1 = 0.3;
  w.lambda2 = 0.5;
  w.lambda3 = 2.0;
  w.lambda4 = 1.5;
  const auto v = evaluate_objective(p.tmpl, p.targets, p.vels, w);
  CHECK(v.total == doctest::Approx(0.3 * v.forward_similarity + 0.5 * v.backward_similarity + 2.0 * v.smoothness +
                                   1.5 * v.centering));
  double fwd = 0.0;
  double smooth = 0.0;
  for (std::size_t i = 0; i < p.targets.size(); ++i) {
    fwd += loss_mse(warp_image(p.tmpl, exponentiate(p.vels[i]).forward), p.targets[i]);
    smooth += reg_smoothness(p.vels[i]);
  }
  CHECK(v.forward_similarity == doctest::Approx(fwd / 3.0));
  CHECK(v.smoothness == doctest::Approx(smooth / 3.0));
  CHECK(v.centering == doctest::Approx(reg_centering(p.vels)));
}

TEST_CASE("results do not depend on the thread count") {
  const Problem p = make_problem(10, 4);
  ObjectiveWeights w;
  w.similarity = {SimilarityKind::LNCC, 5};
  const auto a = objective_gradient(p.tmpl, p.targets, p.vels, w, true, 1);
  const auto b = objective_gradient(p.tmpl, p.targets, p.vels, w, true, 3);
  CHECK(a.value.total == b.value.total);
  CHECK(a.template_grad.values() == b.template_grad.values());
  for (std::size_t s = 0; s < a.velocity_grads.size(); ++s) {
    CHECK(a.velocity_grads[s].data == b.velocity_grads[s].data);
  }
}

TEST_CASE("full gradient against central differences") {
  const Problem p = make_problem(6, 2);
  ObjectiveWeights w;
  const auto g = objective_gradient(p.tmpl, p.targets, p.vels, w, true);
  const std::uint64_t sig = objective_cell_signature(p.tmpl, p.vels);
  std::mt19937 rng(4);
  std::uniform_int_distribution<std::size_t> pick(0, p.tmpl.size() * 3 - 1);
  int checked = 0;
  for (int attempt = 0; attempt < 200 && checked < 10; ++attempt) {
    const std::size_t i = pick(rng);
    auto vp = p.vels;
    auto vm = p.vels;
    vp[1][i / 3][static_cast<int>(i % 3)] += 1e-4;
    vm[1][i / 3][static_cast<int>(i % 3)] -= 1e-4;
    if (objective_cell_signature(p.tmpl, vp) != sig || objective_cell_signature(p.tmpl, vm) != sig) continue;
    const double fd = (evaluate_objective(p.tmpl, p.targets, vp, w).total -
                       evaluate_objective(p.tmpl, p.targets, vm, w).total) / 2e-4;
    CHECK(g.velocity_grads[1][i / 3][static_cast<int>(i % 3)] == doctest::Approx(fd).epsilon(1e-4));
    ++checked;
  }
  CHECK(checked == 10);
  // the template enters linearly through MSE: one probe suffices to check scale
  ScalarField tp = p.tmpl;
  tp[100] += 1e-4;
  ScalarField tm = p.tmpl;
  tm[100] -= 1e-4;
  const double fd = (evaluate_objective(tp, p.targets, p.vels, w).total -
                     evaluate_objective(tm, p.targets, p.vels, w).total) / 2e-4;
  CHECK(g.template_grad[100] == doctest::Approx(fd).epsilon(1e-6));
}

TEST_CASE("objective input validation") {
  Problem p = make_problem(5, 2);
  p.vels.pop_back();
  CHECK(error_of([&] { evaluate_objective(p.tmpl, p.targets, p.vels, {}); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("downsample2 block averages and its adjoint") {
  const Grid g = box_grid({5, 4, 3}, Vec3(1, 1, 1));
  std::mt19937 rng(8);
  std::uniform_real_distribution<double> u(0, 1);
  ScalarField f(g, 0.0);
  for (auto& x : f.data()) x = u(rng);
  const ScalarField c = downsample2(f);
  CHECK(c.dims() == Extents{3, 2, 2});
  double block = 0.0;
  for (int k = 0; k < 2; ++k)
    for (int j = 0; j < 2; ++j)
      for (int i = 0; i < 2; ++i) block += f.at(i, j, k);
  CHECK(c.at(0, 0, 0) == doctest::Approx(block / 8.0));
  CHECK(c.grid().same_as(coarser_grid(g)));

  ScalarField y(c.grid(), 0.0);
  for (auto& x : y.data()) x = u(rng);
  double lhs = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) lhs += c[i] * y[i];
  const ScalarField adj = downsample2_adjoint(y, g);
  double rhs = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) rhs += f[i] * adj[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("parallel_for propagates exceptions") {
  CHECK_THROWS_AS(parallel_for(8, 3,
                               [](std::size_t i) {
                                 if (i == 5) throw Error(ErrorCode::Diverged, "x");
                               }),
                  Error);
}
