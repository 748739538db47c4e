#pragma once

#include <doctest.h>

#include <functional>
#include <string>

#include "tpgan/tensor.hpp"

namespace testsup {

using tpgan::Index;
using tpgan::Real;
using tpgan::Shape;
using tpgan::Tensor;

// Central differences, one coordinate at a time.
inline Tensor numeric_grad(const std::function<Real(const Tensor&)>& f, const Tensor& x,
                           Real h = 1e-5) {
  Tensor g(x.shape());
  Tensor xp = x;
  for (Index i = 0; i < x.numel(); ++i) {
    const Real orig = xp[i];
    xp[i] = orig + h;
    const Real fp = f(xp);
    xp[i] = orig - h;
    const Real fm = f(xp);
    xp[i] = orig;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

inline void check_close(const Tensor& got, const Tensor& want, Real rtol, Real atol,
                        const std::string& what = "") {
  REQUIRE(got.shape() == want.shape());
  for (Index i = 0; i < got.numel(); ++i) {
    const Real tol = atol + rtol * std::abs(want[i]);
    INFO(what << " index " << i << ": got " << got[i] << ", want " << want[i]);
    CHECK(std::abs(got[i] - want[i]) <= tol);
  }
}

inline void check_scalar(Real got, Real want, Real rtol, Real atol = 0.0) {
  const Real tol = atol + rtol * std::abs(want);
  INFO("got " << got << ", want " << want);
  CHECK(std::abs(got - want) <= tol);
}

}  // namespace testsup
