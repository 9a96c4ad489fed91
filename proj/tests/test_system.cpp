#include "contractive/system.hpp"

#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>

using namespace contractive;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;
using Kind = ContractivityClass::Kind;

TEST_CASE("analytic Jacobians agree with finite differences", "[system][jacobian]") {
  const std::vector<System> systems{builtin("lorenz"), builtin("pendulum"), builtin("near-elliptic"),
                                    builtin("quadratic-drift"), builtin("linear2d", {1.0, -2.0, 0.5, 3.0})};
  for (const auto& sys : systems) {
    INFO(sys.name());
    REQUIRE(sys.has_jacobian());
    for (const auto& x : sample_states(Box::cube(sys.dim(), -5.0, 5.0), 100, 17)) {
      const Matrix fd = fd_field_jacobian([&](const Vector& y) { return sys(y); }, x, 1e-3, 4);
      const Matrix an = sys.analytic_jacobian(x);
      CHECK((fd - an).norm() <= 1e-8 * (1.0 + an.norm()));
    }
  }
}

TEST_CASE("fourth-order stencil beats the second-order one on a smooth field", "[system][jacobian]") {
  const System sys("trig", 2, [](const Vector& x) {
    Vector v(2);
    v << std::sin(3.0 * x[0]) * std::cos(x[1]), std::exp(0.5 * x[0] * x[1]);
    return v;
  });
  Vector x(2);
  x << 0.4, -0.9;
  Matrix exact(2, 2);
  exact << 3.0 * std::cos(1.2) * std::cos(-0.9), -std::sin(1.2) * std::sin(-0.9),
      0.5 * x[1] * std::exp(0.5 * x[0] * x[1]), 0.5 * x[0] * std::exp(0.5 * x[0] * x[1]);
  auto f = [&](const Vector& y) { return sys(y); };
  const double e2 = (fd_field_jacobian(f, x, 1e-3, 2) - exact).norm();
  const double e4 = (fd_field_jacobian(f, x, 1e-3, 4) - exact).norm();
  CHECK(e4 < e2);
  CHECK(e4 < 1e-10);
  // Without an analytic Jacobian, eval_jacobian falls back to differences.
  CHECK((eval_jacobian(sys, x) - exact).norm() < 1e-8);
}

TEST_CASE("Lorenz divergence is the constant -(sigma + 1 + beta)", "[system][lorenz]") {
  const System lor = builtin("lorenz");
  for (const auto& x : sample_states(Box::cube(3, -30.0, 30.0), 50, 4))
    CHECK_THAT(divergence(lor, x), WithinAbs(-41.0 / 3.0, 1e-12));
  const auto cls = classify(lor, Box::cube(3, -20.0, 20.0), 64);
  CHECK(cls.kind == Kind::StronglyContractive);
  CHECK_THAT(cls.bound, WithinRel(-41.0 / 3.0, 1e-12));

  const System other = builtin("lorenz", {16.0, 45.92, 4.0});
  CHECK_THAT(divergence(other, Vector::Ones(3)), WithinAbs(-21.0, 1e-12));
}

TEST_CASE("classification of the builtins", "[system][classify]") {
  CHECK(classify(builtin("pendulum", {0.0}), Box::cube(2, -3.0, 3.0), 64).kind == Kind::VolumePreserving);
  CHECK(classify(builtin("pendulum", {0.2}), Box::cube(2, -3.0, 3.0), 64).kind == Kind::StronglyContractive);
  CHECK(classify(builtin("near-elliptic"), Box::cube(2, -1.0, 1.0), 16).kind == Kind::StronglyContractive);

  const auto drift = classify(builtin("quadratic-drift"), Box::cube(2, -1.0, 1.0), 64);
  CHECK(drift.kind == Kind::Indefinite);
  CHECK(drift.worst().second > 0.0);
  CHECK_THAT(drift.worst().second, WithinAbs(2.0 * drift.worst().first[0], 1e-12));

  // Zero divergence on part of the region, negative elsewhere.
  const System weak("weak", 2, [](const Vector& x) {
    Vector v(2);
    v << -std::pow(std::max(0.0, x[0]), 3), 0.0;
    return v;
  });
  std::vector<Vector> states;
  for (double a : {-1.0, -0.5, 0.5, 1.0}) states.push_back((Vector(2) << a, 0.0).finished());
  CHECK(classify(weak, states).kind == Kind::WeaklyContractive);
}

TEST_CASE("classification does not depend on sample order", "[system][classify][property]") {
  std::mt19937_64 rng(21);
  const std::vector<System> systems{builtin("lorenz"), builtin("pendulum"), builtin("quadratic-drift")};
  for (const auto& sys : systems) {
    auto states = sample_states(Box::cube(sys.dim(), -2.0, 2.0), 40, 8);
    const auto base = classify(sys, states);
    for (int k = 0; k < 10; ++k) {
      std::shuffle(states.begin(), states.end(), rng);
      const auto again = classify(sys, states);
      CHECK(again.kind == base.kind);
      CHECK(again.bound == base.bound);
    }
  }
}

TEST_CASE("builtin registry errors", "[system][registry]") {
  CHECK_THROWS_AS(builtin("duffing"), UnknownNameError);
  CHECK_THROWS_AS(builtin("lorenz", {1.0, 2.0}), PreconditionError);
  CHECK_THROWS_AS(builtin("linear2d"), PreconditionError);
  CHECK_THROWS_AS(builtin("linear-nd", {2.0, 1.0, 0.0, 0.0}), PreconditionError);
  const System nd = builtin("linear-nd", {2.0, 0.0, 1.0, -1.0, -0.1});
  CHECK(nd.dim() == 2);
  CHECK_THAT(divergence(nd, Vector::Zero(2)), WithinAbs(-0.1, 1e-15));
  for (const auto& name : builtin_names()) CHECK_FALSE(name.empty());
}

TEST_CASE("state and field validation", "[system][errors]") {
  const System lor = builtin("lorenz");
  CHECK_THROWS_AS(lor(Vector::Zero(2)), PreconditionError);
  const System blowup("blowup", 1, [](const Vector& x) { return Vector::Constant(1, 1.0 / x[0]); });
  CHECK_THROWS_AS(blowup(Vector::Zero(1)), EvaluationError);
  try {
    blowup(Vector::Zero(1));
  } catch (const EvaluationError& e) {
    CHECK(e.state().size() == 1);
  }
  const System wrong("wrong", 2, [](const Vector&) { return Vector::Zero(3); });
  CHECK_THROWS_AS(wrong(Vector::Zero(2)), EvaluationError);
  CHECK_THROWS_AS(System("empty", 0, [](const Vector& x) { return x; }), PreconditionError);
}
