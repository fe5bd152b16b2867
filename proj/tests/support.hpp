#pragma once

#include <cmath>
#include <vector>

#include "coag/model.hpp"

namespace coag::testing {

inline ModelParams make_model(double eps, double Z = 1.0,
                              CoagulationPropensity alpha = CoagulationPropensity::constant(1.0),
                              int dim = 3, double box = 1.0) {
  ModelParams p;
  p.dim = dim;
  p.box = box;
  p.epsilon = eps;
  p.Z = Z;
  p.diffusion = DiffusionCoefficient::constant(1.0);
  p.phi = PhiFunction::constant(1.0);
  p.alpha = std::move(alpha);
  p.V = InteractionProfile::bump(dim, 1.0);
  p.tau = [](double n) { return 1.0 / ((n + 1.0) * (n + 1.0)); };
  return p;
}

inline InitialDensity band_uniform(double Z, int dim = 3, double box = 1.0, double m = 1.0,
                                   double hw = 0.01) {
  return InitialDensity(Z, SpatialProfile::uniform(dim, box), MassProfile::band(m, hw));
}

inline InitialDensity gaussian_exp(double Z, int dim = 3, double box = 1.0, double sigma = 0.15) {
  return InitialDensity(Z, SpatialProfile::gaussian(dim, box, std::vector<double>(dim, 0.5 * box), sigma),
                        MassProfile::exponential(1.0));
}

}  // namespace coag::testing
