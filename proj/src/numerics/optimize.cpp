#include "gxestat/numerics/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace gxe::numerics {

NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                             const Eigen::VectorXd& x0, const NelderMeadOptions& opt) {
  const Eigen::Index n = x0.size();
  NelderMeadResult res;
  auto project = [&](Eigen::VectorXd x) {
    return x.cwiseMax(opt.lower_bound).eval();
  };
  auto eval = [&](const Eigen::VectorXd& x) {
    ++res.evaluations;
    double v = f(x);
    return std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
  };

  if (n == 0) {
    res.x = x0;
    res.f = eval(x0);
    res.converged = true;
    return res;
  }

  std::vector<Eigen::VectorXd> pts(static_cast<std::size_t>(n + 1));
  std::vector<double> vals(static_cast<std::size_t>(n + 1));
  pts[0] = project(x0);
  vals[0] = eval(pts[0]);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::VectorXd p = pts[0];
    const double step = std::max(std::fabs(p(i)) * opt.initial_step, opt.min_step);
    p(i) += step;
    pts[static_cast<std::size_t>(i + 1)] = project(p);
    vals[static_cast<std::size_t>(i + 1)] = eval(pts[static_cast<std::size_t>(i + 1)]);
  }

  std::vector<std::size_t> order(pts.size());
  while (res.evaluations < opt.max_evaluations) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
    const std::size_t best = order.front(), worst = order.back(),
                      second = order[order.size() - 2];

    double spread = vals[worst] - vals[best];
    double size = 0.0;
    for (const auto& p : pts) size = std::max(size, (p - pts[best]).cwiseAbs().maxCoeff());
    const bool f_ok = spread <= opt.f_tol || spread <= opt.f_rel_tol * std::fabs(vals[best]);
    if (f_ok && size <= opt.x_tol) {
      res.converged = true;
      break;
    }

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (i != worst) centroid += pts[i];
    centroid /= static_cast<double>(n);

    Eigen::VectorXd xr = project(centroid + (centroid - pts[worst]));
    double fr = eval(xr);
    if (fr < vals[best]) {
      Eigen::VectorXd xe = project(centroid + 2.0 * (centroid - pts[worst]));
      double fe = eval(xe);
      if (fe < fr) {
        pts[worst] = xe;
        vals[worst] = fe;
      } else {
        pts[worst] = xr;
        vals[worst] = fr;
      }
      continue;
    }
    if (fr < vals[second]) {
      pts[worst] = xr;
      vals[worst] = fr;
      continue;
    }
    const bool outside = fr < vals[worst];
    Eigen::VectorXd xc = outside ? project(centroid + 0.5 * (xr - centroid))
                                 : project(centroid + 0.5 * (pts[worst] - centroid));
    double fc = eval(xc);
    if (fc < (outside ? fr : vals[worst])) {
      pts[worst] = xc;
      vals[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i == best) continue;
      pts[i] = project(pts[best] + 0.5 * (pts[i] - pts[best]));
      vals[i] = eval(pts[i]);
    }
  }

  const auto it = std::min_element(vals.begin(), vals.end());
  const auto bi = static_cast<std::size_t>(it - vals.begin());
  res.x = pts[bi];
  res.f = vals[bi];
  return res;
}

}  // namespace gxe::numerics
