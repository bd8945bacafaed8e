#pragma once

#include <Eigen/Dense>

#include <functional>

namespace gxe::numerics {

struct NelderMeadOptions {
  double f_tol = 1e-10;       // absolute spread of simplex values
  double f_rel_tol = 1e-14;   // or relative to |f_best|
  double x_tol = 1e-8;        // max distance of a vertex from the best one
  int max_evaluations = 20000;
  double initial_step = 0.1;  // relative; absolute floor below
  double min_step = 0.05;
  double lower_bound = 0.0;   // coordinates are clamped to >= lower_bound
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double f = 0.0;
  int evaluations = 0;
  bool converged = false;
};

/// Nelder-Mead on the box x >= lower_bound, enforced by projecting every
/// trial point onto the box before evaluation.
NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                             const Eigen::VectorXd& x0, const NelderMeadOptions& opt = {});

}  // namespace gxe::numerics
