#pragma once

#include <functional>

#include "freqclick/autograd.h"
#include "oracles.h"

namespace oracle {

using freqclick::ParamSet;
using freqclick::Tape;
using freqclick::Var;

// Builds the op under test from parameters of `ps`; must be deterministic.
using Build = std::function<Var<double>(Tape<double>&)>;

// Worst rel_err over the trainable parameters of `ps` between the tape's
// gradient of sum(out * R) and central differences, R a fixed random
// projection of the output.
inline double gradcheck(ParamSet<double>& ps, const Build& build, freqclick::Rng& rng, double step = 1e-5) {
  Tensor<double> proj;
  {
    Tape<double> t(false);
    proj = random_tensor(build(t).shape(), rng);
  }
  auto loss = [&] {
    Tape<double> t(false);
    const auto& out = build(t).value();
    double s = 0;
    for (std::size_t i = 0; i < out.numel(); ++i) s += out[i] * proj[i];
    return s;
  };
  ps.zero_grad();
  {
    Tape<double> t;
    auto out = build(t);
    t.backward(freqclick::ag::sum(freqclick::ag::mul(out, t.constant(proj))));
  }
  double worst = 0;
  for (auto* p : ps.trainable()) {
    const auto analytic = p->grad.vec();
    const auto numeric = numeric_grad(p->value.vec(), loss, step);
    worst = std::max(worst, rel_err(analytic, numeric));
  }
  return worst;
}

// Fill every trainable parameter with N(0, scale^2) draws.
inline void randomize(ParamSet<double>& ps, freqclick::Rng& rng, double scale = 0.5) {
  for (auto* p : ps.trainable()) {
    for (auto& v : p->value.vec()) v = rng.normal() * scale;
  }
}

}  // namespace oracle
