#include "gxestat/mixed_model.hpp"

#include "gxestat/error.hpp"
#include "gxestat/numerics/distributions.hpp"
#include "gxestat/numerics/ols.hpp"
#include "gxestat/numerics/optimize.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <unordered_map>

namespace gxe {

namespace {

// Factor bits.
constexpr unsigned kG = 1, kL = 2, kY = 4, kR = 8;

unsigned term_mask(Term t) {
  switch (t) {
    case Term::CLT: return kG;
    case Term::LC: return kL;
    case Term::YR: return kY;
    case Term::RP: return kL | kY | kR;
    case Term::CLT_YR: return kG | kY;
    case Term::CLT_LC: return kG | kL;
    case Term::LC_YR: return kL | kY;
    case Term::CLT_YR_LC: return kG | kL | kY;
  }
  return 0;
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool uses_year(const TrialDataset& ds) { return ds.has_year() && ds.n_years() >= 2; }

// "YR:LC:CLT:RP" style key of a record for a term's factor set. The year is
// left out of keys when the model carries no year terms.
std::string level_key(unsigned mask, bool with_year, const std::string& year,
                      const std::string& loc, const std::string& geno, const std::string& rep) {
  std::string key;
  auto add = [&](const std::string& s) {
    if (!key.empty()) key += ':';
    key += s;
  };
  if ((mask & kY) && with_year) add(year);
  if (mask & kL) add(loc);
  if (mask & kG) add(geno);
  if (mask & kR) add(rep);
  return key;
}

}  // namespace

std::string_view term_name(Term t) noexcept {
  switch (t) {
    case Term::CLT: return "CLT";
    case Term::LC: return "LC";
    case Term::YR: return "YR";
    case Term::RP: return "YR * LC * RP";
    case Term::CLT_YR: return "YR * CLT";
    case Term::CLT_LC: return "LC * CLT";
    case Term::LC_YR: return "YR * LC";
    case Term::CLT_YR_LC: return "YR * LC * CLT";
  }
  return "?";
}

Term parse_term(std::string_view s) {
  unsigned mask = 0;
  std::string tok;
  auto flush = [&] {
    if (tok.empty()) return;
    if (tok == "CLT" || tok == "G")
      mask |= kG;
    else if (tok == "LC" || tok == "L")
      mask |= kL;
    else if (tok == "YR" || tok == "Y")
      mask |= kY;
    else if (tok == "RP" || tok == "R")
      mask |= kR;
    else
      throw Error(ErrorKind::UnknownTerm, "unknown term '" + std::string(s) + "'");
    tok.clear();
  };
  for (char c : s) {
    if (std::isalpha(static_cast<unsigned char>(c)))
      tok += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    else
      flush();
  }
  flush();
  if (mask & kR) return Term::RP;
  for (Term t : kAllTerms)
    if (term_mask(t) == mask) return t;
  throw Error(ErrorKind::UnknownTerm, "unknown term '" + std::string(s) + "'");
}

ModelCase ModelCase::from_id(int id) {
  constexpr Role F = Role::fixed, R = Role::random;
  // CLT, LC, YR, RP, CLT*YR, CLT*LC, LC*YR, CLT*YR*LC
  static const std::array<std::array<Role, 8>, 5> table = {{
      {R, R, R, R, R, R, R, R},
      {F, F, F, R, F, F, F, F},
      {F, R, R, R, R, R, R, R},
      {R, F, R, R, R, R, R, R},
      {F, F, R, R, R, F, R, R},
  }};
  if (id < 1 || id > 5)
    throw Error(ErrorKind::InvalidArgument, "model case must be 1..5, got " + std::to_string(id));
  return ModelCase{id, table[static_cast<std::size_t>(id - 1)]};
}

int DegreesOfFreedom::of(Term t) const {
  switch (t) {
    case Term::CLT: return G - 1;
    case Term::LC: return L - 1;
    case Term::YR: return Y - 1;
    case Term::RP: return (R - 1) * L * Y;
    case Term::CLT_YR: return (G - 1) * (Y - 1);
    case Term::CLT_LC: return (G - 1) * (L - 1);
    case Term::LC_YR: return (L - 1) * (Y - 1);
    case Term::CLT_YR_LC: return (G - 1) * (L - 1) * (Y - 1);
  }
  return 0;
}

DegreesOfFreedom DegreesOfFreedom::from_dataset(const TrialDataset& ds) {
  return {ds.n_genotypes(), ds.n_locations(), ds.n_years(), ds.n_reps()};
}

// ---------------------------------------------------------------------------
// Model construction

Eigen::Index ModelSpec::q() const {
  Eigen::Index s = 0;
  for (const auto& b : random) s += static_cast<Eigen::Index>(b.levels.size());
  return s;
}

const ModelSpec::RandomBlock* ModelSpec::block(Term t) const {
  for (const auto& b : random)
    if (b.term == t) return &b;
  return nullptr;
}

ModelSpec ModelSpec::without(Term t) const {
  ModelSpec s = *this;
  s.random.clear();
  s.random_terms.clear();
  std::vector<double> th;
  for (std::size_t i = 0; i < random.size(); ++i) {
    if (random[i].term == t) continue;
    s.random.push_back(random[i]);
    s.random_terms.push_back(random[i].term);
    if (static_cast<Eigen::Index>(i) < theta_start.size()) th.push_back(theta_start(static_cast<Eigen::Index>(i)));
  }
  if (s.random.size() == random.size())
    throw Error(ErrorKind::UnknownTerm, std::string(term_name(t)) + " is not a random term of the model");
  s.theta_start = Eigen::Map<Eigen::VectorXd>(th.data(), static_cast<Eigen::Index>(th.size()));
  return s;
}

namespace {

std::vector<double> moment_variances(const TrialDataset& ds, const ModelCase& mc,
                                     const std::vector<Term>& random_terms, double& resid_var);

const std::vector<std::string>& factor_levels(const ModelSpec& s, Factor f) {
  switch (f) {
    case Factor::genotype: return s.genotypes;
    case Factor::location: return s.locations;
    case Factor::year: return s.years;
    case Factor::rep: return s.reps;
  }
  return s.genotypes;
}

const std::string& record_label(const TrialRecord& r, Factor f) {
  switch (f) {
    case Factor::genotype: return r.genotype;
    case Factor::location: return r.location;
    case Factor::year: return r.year;
    case Factor::rep: return r.rep;
  }
  return r.genotype;
}

std::string_view factor_tag(Factor f) {
  switch (f) {
    case Factor::genotype: return "CLT";
    case Factor::location: return "LC";
    case Factor::year: return "YR";
    case Factor::rep: return "RP";
  }
  return "";
}

}  // namespace

ModelSpec build_model(const TrialDataset& ds, const ModelCase& model_case) {
  ModelSpec spec;
  spec.model_case = model_case;
  spec.genotypes = ds.genotypes();
  spec.locations = ds.locations();
  spec.years = ds.years();
  spec.reps = ds.reps();
  spec.y = ds.traits();

  if (ds.n_locations() < 2)
    throw Error(ErrorKind::InsufficientLevels, "location factor has a single level");
  if (ds.n_reps() < 2)
    throw Error(ErrorKind::InsufficientLevels, "replication factor has a single level");
  const bool with_year = uses_year(ds);
  if (!with_year)
    spec.warnings.push_back(ds.has_year()
                                ? "year factor has a single level; year terms dropped"
                                : "no year column; year terms dropped");

  std::vector<Term> terms;
  for (Term t : kAllTerms)
    if (with_year || !(term_mask(t) & kY) || t == Term::RP) terms.push_back(t);

  for (Term t : terms) {
    if (model_case.role(t) == Role::fixed)
      spec.fixed_terms.push_back(t);
    else
      spec.random_terms.push_back(t);
  }

  const auto& recs = ds.records();
  const Eigen::Index n = static_cast<Eigen::Index>(recs.size());

  // Fixed design: intercept, then treatment-contrast products per term,
  // dropping columns aliased with earlier ones.
  numerics::IncrementalQr qr(n);
  std::vector<Eigen::VectorXd> cols;
  auto try_add = [&](ModelSpec::FixedColumn def) {
    Eigen::VectorXd c = Eigen::VectorXd::Ones(n);
    for (const auto& [f, lev] : def.indicators) {
      const auto& codes = f == Factor::genotype   ? ds.genotype_codes()
                          : f == Factor::location ? ds.location_codes()
                          : f == Factor::year     ? ds.year_codes()
                                                  : ds.rep_codes();
      for (Eigen::Index i = 0; i < n; ++i)
        if (codes[static_cast<std::size_t>(i)] != lev) c(i) = 0.0;
    }
    if (!qr.add(c)) return;
    cols.push_back(std::move(c));
    spec.fixed_columns.push_back(std::move(def));
  };
  try_add({"(Intercept)", {}});
  for (Term t : spec.fixed_terms) {
    const unsigned m = term_mask(t);
    std::vector<Factor> fs;
    // Column naming order follows the term label (YR, LC, CLT).
    if (m & kY) fs.push_back(Factor::year);
    if (m & kL) fs.push_back(Factor::location);
    if (m & kG) fs.push_back(Factor::genotype);
    std::vector<int> counts;
    for (Factor f : fs) counts.push_back(static_cast<int>(factor_levels(spec, f).size()));
    std::vector<int> lv(fs.size(), 1);
    bool any = std::all_of(counts.begin(), counts.end(), [](int c) { return c >= 2; });
    while (any) {
      ModelSpec::FixedColumn def;
      for (std::size_t k = 0; k < fs.size(); ++k) {
        def.indicators.emplace_back(fs[k], lv[k]);
        if (!def.name.empty()) def.name += ':';
        def.name += std::string(factor_tag(fs[k])) + factor_levels(spec, fs[k])[static_cast<std::size_t>(lv[k])];
      }
      try_add(std::move(def));
      // Odometer with the first factor varying fastest.
      std::size_t k = 0;
      for (; k < fs.size(); ++k) {
        if (++lv[k] < counts[k]) break;
        lv[k] = 1;
      }
      if (k == fs.size()) any = false;
    }
  }
  spec.x.resize(n, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) spec.x.col(static_cast<Eigen::Index>(j)) = cols[j];

  for (Term t : spec.random_terms) {
    ModelSpec::RandomBlock b;
    b.term = t;
    const unsigned m = term_mask(t);
    std::unordered_map<std::string, int> seen;
    b.codes.reserve(recs.size());
    for (const auto& r : recs) {
      auto key = level_key(m, with_year, r.year, r.location, r.genotype, r.rep);
      auto [it, inserted] = seen.emplace(key, static_cast<int>(b.levels.size()));
      if (inserted) b.levels.push_back(key);
      b.codes.push_back(it->second);
    }
    if (b.levels.size() < 2)
      throw Error(ErrorKind::InsufficientLevels,
                  std::string(term_name(t)) + " has a single level");
    spec.random.push_back(std::move(b));
  }

  // Optimizer seed from moment estimates.
  spec.theta_start = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(spec.random.size()));
  if (ds.is_balanced()) {
    double ve = 0.0;
    auto v = moment_variances(ds, model_case, spec.random_terms, ve);
    if (ve > 0.0)
      for (std::size_t i = 0; i < v.size(); ++i)
        spec.theta_start(static_cast<Eigen::Index>(i)) = std::max(std::sqrt(std::max(v[i], 0.0) / ve), 0.1);
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Profiled REML

namespace {

// Cross products precomputed once per spec. The random-effects system is
// sparse (indicator blocks), so it is factored with a fixed symbolic analysis.
struct RemlWork {
  using SpMat = Eigen::SparseMatrix<double>;
  const ModelSpec& spec;
  Eigen::Index n, p, q;
  std::vector<Eigen::Index> offset;  // first column of each block
  SpMat ztz;
  Eigen::MatrixXd ztx, xtx;
  Eigen::VectorXd zty, xty;
  mutable Eigen::SimplicialLLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>> llt;

  explicit RemlWork(const ModelSpec& s) : spec(s), n(s.n()), p(s.x.cols()), q(s.q()) {
    if (n - p <= 0) throw Error(ErrorKind::SingularDesign, "no residual degrees of freedom");
    Eigen::Index off = 0;
    for (const auto& b : s.random) {
      offset.push_back(off);
      off += static_cast<Eigen::Index>(b.levels.size());
    }
    ztx = Eigen::MatrixXd::Zero(q, p);
    zty = Eigen::VectorXd::Zero(q);
    std::vector<Eigen::Triplet<double>> trip;
    std::vector<Eigen::Index> cols(s.random.size());
    for (Eigen::Index i = 0; i < n; ++i) {
      for (std::size_t b = 0; b < s.random.size(); ++b)
        cols[b] = offset[b] + s.random[b].codes[static_cast<std::size_t>(i)];
      for (std::size_t a = 0; a < cols.size(); ++a) {
        for (std::size_t b = 0; b < cols.size(); ++b) trip.emplace_back(cols[a], cols[b], 1.0);
        ztx.row(cols[a]) += s.x.row(i);
        zty(cols[a]) += s.y(i);
      }
    }
    for (Eigen::Index j = 0; j < q; ++j) trip.emplace_back(j, j, 0.0);  // keep the diagonal
    ztz.resize(q, q);
    ztz.setFromTriplets(trip.begin(), trip.end());
    ztz.makeCompressed();
    xtx = s.x.transpose() * s.x;
    xty = s.x.transpose() * s.y;
    if (q > 0) llt.analyzePattern(ztz);
  }

  Eigen::VectorXd lambda(const Eigen::VectorXd& theta) const {
    Eigen::VectorXd lam(q);
    for (std::size_t b = 0; b < spec.random.size(); ++b)
      lam.segment(offset[b], static_cast<Eigen::Index>(spec.random[b].levels.size()))
          .setConstant(theta(static_cast<Eigen::Index>(b)));
    return lam;
  }

  struct Solution {
    double deviance = 0.0;
    double r2 = 0.0;
    Eigen::VectorXd beta, u, lam;
    Eigen::MatrixXd rx;  // upper Cholesky factor of the Schur complement
  };

  Solution solve(const Eigen::VectorXd& theta, bool full) const {
    Solution s;
    s.lam = lambda(theta);
    double logdet_l = 0.0;
    Eigen::VectorXd cu;
    Eigen::MatrixXd rzx;
    if (q > 0) {
      // A = Lambda Z'Z Lambda + I, factored as P' L L' P.
      SpMat a = ztz;
      for (Eigen::Index k = 0; k < a.outerSize(); ++k)
        for (SpMat::InnerIterator it(a, k); it; ++it) {
          it.valueRef() *= s.lam(it.row()) * s.lam(it.col());
          if (it.row() == it.col()) it.valueRef() += 1.0;
        }
      llt.factorize(a);
      if (llt.info() != Eigen::Success)
        throw Error(ErrorKind::SingularDesign, "random-effects system is not positive definite");
      const SpMat& lmat = llt.matrixL();
      for (Eigen::Index k = 0; k < lmat.outerSize(); ++k)
        for (SpMat::InnerIterator it(lmat, k); it; ++it)
          if (it.row() == it.col()) logdet_l += std::log(it.value());
      const auto& perm = llt.permutationP();
      cu = perm * s.lam.cwiseProduct(zty);
      llt.matrixL().solveInPlace(cu);
      rzx = perm * (s.lam.asDiagonal() * ztx);
      llt.matrixL().solveInPlace(rzx);
    } else {
      cu = Eigen::VectorXd(0);
      rzx = Eigen::MatrixXd(0, p);
    }
    Eigen::MatrixXd schur = xtx - rzx.transpose() * rzx;
    Eigen::LLT<Eigen::MatrixXd> lx(schur);
    if (lx.info() != Eigen::Success)
      throw Error(ErrorKind::SingularDesign, "fixed-effects design is rank deficient");
    double logdet_x = 0.0;
    for (Eigen::Index i = 0; i < p; ++i) logdet_x += std::log(lx.matrixLLT()(i, i));
    s.beta = lx.solve(xty - rzx.transpose() * cu);
    if (q > 0) {
      Eigen::VectorXd up = cu - rzx * s.beta;
      llt.matrixU().solveInPlace(up);
      s.u = llt.permutationP().transpose() * up;
    } else {
      s.u = Eigen::VectorXd(0);
    }

    // Penalized residual sum of squares, evaluated directly.
    Eigen::VectorXd resid = spec.y - spec.x * s.beta;
    for (std::size_t b = 0; b < spec.random.size(); ++b) {
      const double th = theta(static_cast<Eigen::Index>(b));
      if (th == 0.0) continue;
      const auto& codes = spec.random[b].codes;
      for (Eigen::Index i = 0; i < n; ++i) resid(i) -= th * s.u(offset[b] + codes[static_cast<std::size_t>(i)]);
    }
    s.r2 = resid.squaredNorm() + s.u.squaredNorm();
    const double dof = static_cast<double>(n - p);
    if (!(s.r2 > 0.0)) {
      s.deviance = -std::numeric_limits<double>::infinity();
    } else {
      s.deviance = 2.0 * logdet_l + 2.0 * logdet_x +
                   dof * (1.0 + std::log(2.0 * std::numbers::pi * s.r2 / dof));
    }
    if (full) s.rx = lx.matrixU();
    return s;
  }

  double deviance(const Eigen::VectorXd& theta) const {
    try {
      return solve(theta, false).deviance;
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
  }
};

MixedModelFit make_fit(std::shared_ptr<const ModelSpec> spec, const RemlWork& w,
                       const Eigen::VectorXd& theta, bool converged, int evals) {
  const auto sol = w.solve(theta, true);
  MixedModelFit fit;
  fit.spec = spec;
  fit.theta = theta;
  fit.converged = converged;
  fit.evaluations = evals;
  const double dof = static_cast<double>(w.n - w.p);
  fit.residual_variance = sol.r2 / dof;
  fit.reml_log_likelihood = -0.5 * sol.deviance;

  for (std::size_t b = 0; b < spec->random.size(); ++b) {
    const double th = theta(static_cast<Eigen::Index>(b));
    VarianceComponent vc;
    vc.term = spec->random[b].term;
    vc.variance = fit.residual_variance * th * th;
    vc.std_dev = std::sqrt(vc.variance);
    vc.at_boundary = th == 0.0;
    fit.variance_components.push_back(vc);

    BlupSet bs;
    bs.term = vc.term;
    bs.levels = spec->random[b].levels;
    const auto m = static_cast<Eigen::Index>(bs.levels.size());
    bs.values = th == 0.0 ? Eigen::VectorXd::Zero(m).eval()
                          : (th * sol.u.segment(w.offset[b], m)).eval();
    fit.blups.push_back(std::move(bs));
  }

  // cov(beta) = sigma^2 (RX^T RX)^-1
  Eigen::MatrixXd rinv = sol.rx.triangularView<Eigen::Upper>().solve(
      Eigen::MatrixXd::Identity(w.p, w.p));
  for (Eigen::Index j = 0; j < w.p; ++j) {
    FixedEffect fe;
    fe.name = spec->fixed_columns[static_cast<std::size_t>(j)].name;
    fe.estimate = sol.beta(j);
    fe.standard_error = std::sqrt(fit.residual_variance * rinv.row(j).squaredNorm());
    fit.fixed_effects.push_back(fe);
  }
  return fit;
}

}  // namespace

double reml_deviance(const ModelSpec& spec, const Eigen::VectorXd& theta) {
  if (theta.size() != static_cast<Eigen::Index>(spec.random.size()))
    throw Error(ErrorKind::DimensionMismatch, "theta size does not match the random terms");
  RemlWork w(spec);
  return w.solve(theta, false).deviance;
}

MixedModelFit fit_reml(const ModelSpec& spec, const RemlOptions& options) {
  return fit_reml(std::make_shared<const ModelSpec>(spec), options);
}

MixedModelFit fit_reml(std::shared_ptr<const ModelSpec> spec, const RemlOptions& options) {
  if (!spec) throw Error(ErrorKind::InvalidArgument, "null model specification");
  if (!spec->y.allFinite()) throw Error(ErrorKind::NonFinite, "trait values must be finite");
  RemlWork w(*spec);
  const auto k = static_cast<Eigen::Index>(spec->random.size());
  auto f = [&](const Eigen::VectorXd& th) { return w.deviance(th); };

  // Exactly-fitting data (all residuals zero) has no defined likelihood.
  {
    Eigen::VectorXd z = Eigen::VectorXd::Zero(k);
    const auto s0 = w.solve(z, false);
    if (!(s0.r2 > 1e-300 * std::max(1.0, spec->y.squaredNorm()))) {
      // Degenerate but well defined: every component 0.
      return make_fit(spec, w, z, true, 1);
    }
  }

  numerics::NelderMeadOptions nm;
  nm.max_evaluations = options.max_evaluations;
  int evals = 0;

  std::vector<Eigen::VectorXd> starts;
  if (options.start_theta) {
    if (options.start_theta->size() != k)
      throw Error(ErrorKind::DimensionMismatch, "start theta size does not match the random terms");
    starts.push_back(options.start_theta->cwiseMax(0.0));
  } else {
    const Eigen::VectorXd base = spec->theta_start.size() == k ? spec->theta_start
                                                               : Eigen::VectorXd::Ones(k).eval();
    // Variance multipliers act on theta through their square root.
    for (double m : options.start_multipliers) starts.push_back(base * std::sqrt(m));
  }
  if (k == 0) starts.assign(1, Eigen::VectorXd(0));

  // Coarse runs from every start, then a full-precision polish of the best.
  numerics::NelderMeadOptions coarse = nm;
  coarse.f_tol = 1e-6;
  coarse.x_tol = 1e-4;
  numerics::NelderMeadResult best;
  best.f = std::numeric_limits<double>::infinity();
  for (const auto& s : starts) {
    auto r = numerics::nelder_mead(f, s, starts.size() > 1 ? coarse : nm);
    evals += r.evaluations;
    if (r.f < best.f || !best.x.size()) best = r;
  }
  // Restart from the optimum: guards against a collapsed simplex.
  if (k > 0) {
    auto r = numerics::nelder_mead(f, best.x, nm);
    evals += r.evaluations;
    if (r.f <= best.f) best = r;
    else best.converged = r.converged;
  }

  // Snap near-boundary components to exactly zero when that costs nothing.
  Eigen::VectorXd theta = best.x;
  double dev = best.f;
  for (Eigen::Index t = 0; t < k; ++t) {
    if (theta(t) == 0.0) continue;
    Eigen::VectorXd trial = theta;
    trial(t) = 0.0;
    const double d = f(trial);
    ++evals;
    if (d <= dev + options.boundary_tol) {
      theta = trial;
      dev = std::min(dev, d);
    }
  }
  const bool converged = best.converged && evals < options.max_evaluations * static_cast<int>(starts.size() + 1);
  return make_fit(spec, w, theta, converged, evals);
}

const VarianceComponent* MixedModelFit::component(Term t) const {
  for (const auto& c : variance_components)
    if (c.term == t) return &c;
  return nullptr;
}

const BlupSet& blup(const MixedModelFit& fit, Term t) {
  for (const auto& b : fit.blups)
    if (b.term == t) return b;
  throw Error(ErrorKind::UnknownTerm, std::string(term_name(t)) + " is not a random term of the fit");
}

Prediction predict(const MixedModelFit& fit, const TrialDataset& ds) {
  const ModelSpec& s = *fit.spec;
  const auto& recs = ds.records();
  const auto n = static_cast<Eigen::Index>(recs.size());
  const bool with_year = std::any_of(s.random_terms.begin(), s.random_terms.end(),
                                     [](Term t) { return t != Term::RP && (term_mask(t) & kY); }) ||
                         std::any_of(s.fixed_terms.begin(), s.fixed_terms.end(),
                                     [](Term t) { return term_mask(t) & kY; });
  Prediction p;
  p.predicted = Eigen::VectorXd::Zero(n);
  for (std::size_t j = 0; j < s.fixed_columns.size(); ++j) {
    const auto& col = s.fixed_columns[j];
    const double b = fit.fixed_effects[j].estimate;
    for (Eigen::Index i = 0; i < n; ++i) {
      bool on = true;
      for (const auto& [f, lev] : col.indicators)
        if (record_label(recs[static_cast<std::size_t>(i)], f) !=
            factor_levels(s, f)[static_cast<std::size_t>(lev)]) {
          on = false;
          break;
        }
      if (on) p.predicted(i) += b;
    }
  }
  for (const auto& bs : fit.blups) {
    std::unordered_map<std::string, double> lookup;
    for (std::size_t l = 0; l < bs.levels.size(); ++l) lookup.emplace(bs.levels[l], bs.values(static_cast<Eigen::Index>(l)));
    const unsigned m = term_mask(bs.term);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& r = recs[static_cast<std::size_t>(i)];
      auto it = lookup.find(level_key(m, with_year, r.year, r.location, r.genotype, r.rep));
      if (it != lookup.end()) p.predicted(i) += it->second;
    }
  }
  p.residuals = ds.traits() - p.predicted;
  return p;
}

// ---------------------------------------------------------------------------
// Balanced ANOVA and expected mean squares

std::vector<BalancedAnovaRow> balanced_anova(const TrialDataset& ds) {
  if (!ds.is_balanced())
    throw Error(ErrorKind::UnbalancedData, "balanced ANOVA requires a complete, balanced trial");
  const int G = ds.n_genotypes(), L = ds.n_locations(), Y = ds.n_years(), R = ds.n_reps();
  const auto& gc = ds.genotype_codes();
  const auto& lc = ds.location_codes();
  const auto& yc = ds.year_codes();
  const auto& rc = ds.rep_codes();
  const std::size_t n = ds.size();
  const Eigen::VectorXd y = ds.traits();

  auto levels_of = [&](unsigned m) {
    int c = 1;
    if (m & kG) c *= G;
    if (m & kL) c *= L;
    if (m & kY) c *= Y;
    if (m & kR) c *= R;
    return c;
  };
  auto cell = [&](unsigned m, std::size_t i) {
    int k = 0;
    if (m & kG) k = k * G + gc[i];
    if (m & kL) k = k * L + lc[i];
    if (m & kY) k = k * Y + yc[i];
    if (m & kR) k = k * R + rc[i];
    return k;
  };
  // Marginal means for every factor subset used.
  std::map<unsigned, std::vector<double>> means;
  auto marginal = [&](unsigned m) -> const std::vector<double>& {
    auto it = means.find(m);
    if (it != means.end()) return it->second;
    std::vector<double> sum(static_cast<std::size_t>(levels_of(m)), 0.0);
    std::vector<int> cnt(sum.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(cell(m, i));
      sum[k] += y(static_cast<Eigen::Index>(i));
      ++cnt[k];
    }
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] /= cnt[k];
    return means.emplace(m, std::move(sum)).first->second;
  };
  auto effect = [&](unsigned s, std::size_t i) {
    if (s == (kL | kY | kR)) return marginal(kL | kY | kR)[static_cast<std::size_t>(cell(kL | kY | kR, i))] -
                                    marginal(kL | kY)[static_cast<std::size_t>(cell(kL | kY, i))];
    double e = 0.0;
    for (unsigned t = s;; t = (t - 1) & s) {
      const double sign = (std::popcount(s) - std::popcount(t)) % 2 ? -1.0 : 1.0;
      e += sign * marginal(t)[static_cast<std::size_t>(cell(t, i))];
      if (t == 0) break;
    }
    return e;
  };

  const bool with_year = Y >= 2;
  const auto dfs = DegreesOfFreedom::from_dataset(ds);
  std::vector<BalancedAnovaRow> rows;
  for (Term t : kAllTerms) {
    const unsigned m = term_mask(t);
    if (!with_year && (m & kY) && t != Term::RP) continue;
    BalancedAnovaRow row;
    row.term = t;
    row.mask = m;
    row.df = dfs.of(t);
    for (std::size_t i = 0; i < n; ++i) {
      const double e = effect(m, i);
      row.ss += e * e;
    }
    row.ms = row.df > 0 ? row.ss / row.df : kNaN;
    row.obs_per_level = static_cast<double>(n) / levels_of(m);
    rows.push_back(row);
  }
  BalancedAnovaRow res;
  res.mask = kG | kL | kY | kR;
  res.df = dfs.residual();
  for (std::size_t i = 0; i < n; ++i) {
    const double e = y(static_cast<Eigen::Index>(i)) -
                     marginal(kG | kL | kY)[static_cast<std::size_t>(cell(kG | kL | kY, i))] -
                     marginal(kL | kY | kR)[static_cast<std::size_t>(cell(kL | kY | kR, i))] +
                     marginal(kL | kY)[static_cast<std::size_t>(cell(kL | kY, i))];
    res.ss += e * e;
  }
  res.ms = res.df > 0 ? res.ss / res.df : kNaN;
  res.obs_per_level = 1.0;
  rows.push_back(res);
  return rows;
}

namespace {

bool strict_subset(unsigned a, unsigned b) { return a != b && (a & b) == a; }

// Coefficients c such that sum_U c_U MS_U (U random rows or the residual) has
// expectation sigma_e^2 + sum_{V random, V strictly contains target} k_V sigma_V^2.
// Returned as (row index, coefficient) pairs.
std::vector<std::pair<std::size_t, double>> ems_denominator(const std::vector<BalancedAnovaRow>& rows,
                                                            const std::vector<bool>& random,
                                                            unsigned target) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i + 1 < rows.size(); ++i)
    if (random[i]) order.push_back(i);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::popcount(rows[a].mask) < std::popcount(rows[b].mask);
  });
  std::vector<double> c(rows.size(), 0.0);
  double total = 0.0;
  for (std::size_t v : order) {
    double want = strict_subset(target, rows[v].mask) ? 1.0 : 0.0;
    for (std::size_t u : order)
      if (u != v && strict_subset(rows[u].mask, rows[v].mask)) want -= c[u];
    c[v] = want;
    total += want;
  }
  c.back() = 1.0 - total;
  std::vector<std::pair<std::size_t, double>> out;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (std::fabs(c[i]) > 1e-12) out.emplace_back(i, c[i]);
  return out;
}

std::vector<bool> random_flags(const std::vector<BalancedAnovaRow>& rows, const ModelCase& mc) {
  std::vector<bool> r(rows.size(), false);
  for (std::size_t i = 0; i + 1 < rows.size(); ++i) r[i] = mc.role(*rows[i].term) == Role::random;
  return r;
}

std::vector<double> moment_variances(const TrialDataset& ds, const ModelCase& mc,
                                     const std::vector<Term>& random_terms, double& resid_var) {
  const auto rows = balanced_anova(ds);
  const auto random = random_flags(rows, mc);
  resid_var = rows.back().ms;
  // Solve the EMS ladder from the largest factor sets down.
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i + 1 < rows.size(); ++i)
    if (random[i]) order.push_back(i);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::popcount(rows[a].mask) > std::popcount(rows[b].mask);
  });
  std::vector<double> sig(rows.size(), 0.0);
  for (std::size_t u : order) {
    double v = rows[u].ms - resid_var;
    for (std::size_t w : order)
      if (strict_subset(rows[u].mask, rows[w].mask)) v -= rows[w].obs_per_level * sig[w];
    sig[u] = v / rows[u].obs_per_level;
  }
  std::vector<double> out;
  for (Term t : random_terms) {
    double v = 0.0;
    for (std::size_t i = 0; i + 1 < rows.size(); ++i)
      if (rows[i].term == t) v = sig[i];
    out.push_back(v);
  }
  return out;
}

SignificanceRow residual_row() {
  SignificanceRow r;
  r.term = "Residual";
  r.kind = RowKind::residual;
  r.statistic = kNaN;
  r.p_value = kNaN;
  r.df1 = kNaN;
  return r;
}

}  // namespace

std::vector<SignificanceRow> test_fixed_terms(const TrialDataset& ds, const ModelCase& model_case) {
  const auto rows = balanced_anova(ds);
  const auto random = random_flags(rows, model_case);
  std::vector<SignificanceRow> out;
  for (Term t : kDisplayOrder) {
    std::size_t i = 0;
    while (i + 1 < rows.size() && rows[i].term != t) ++i;
    if (i + 1 == rows.size() || random[i]) continue;
    const auto& row = rows[i];
    const auto combo = ems_denominator(rows, random, row.mask);
    double denom = 0.0, denom_df = 0.0, sw = 0.0;
    for (auto [k, c] : combo) {
      denom += c * rows[k].ms;
      sw += (c * rows[k].ms) * (c * rows[k].ms) / rows[k].df;
    }
    if (combo.size() == 1 && combo[0].second == 1.0) {
      denom_df = rows[combo[0].first].df;
    } else if (denom > 0.0 && sw > 0.0) {
      denom_df = denom * denom / sw;  // Satterthwaite
    }
    if (!(denom > 0.0) || !(denom_df > 0.0)) {
      // Synthesized denominator not estimable: fall back to the residual.
      denom = rows.back().ms;
      denom_df = rows.back().df;
    }
    SignificanceRow r;
    r.term = std::string(term_name(t));
    r.kind = RowKind::fixed;
    r.mean_square = row.ms;
    r.df1 = row.df;
    r.df2 = denom_df;
    const double scale = std::max(std::fabs(row.ms), std::fabs(denom));
    if (!(row.ms > 1e-14 * std::max(scale, 1e-300)) || row.ms <= 0.0) {
      r.statistic = 0.0;
      r.p_value = 1.0;
    } else if (!(denom > 0.0)) {
      r.statistic = std::numeric_limits<double>::infinity();
      r.p_value = 0.0;
    } else {
      r.statistic = row.ms / denom;
      r.p_value = numerics::f_sf(r.statistic, r.df1, denom_df);
    }
    out.push_back(r);
  }
  auto res = residual_row();
  res.mean_square = rows.back().ms;
  res.df1 = rows.back().df;
  out.push_back(res);
  return out;
}

RandomTermTests test_random_terms(const TrialDataset& ds, const ModelCase& model_case,
                                  const LrtOptions& options) {
  auto spec = std::make_shared<const ModelSpec>(build_model(ds, model_case));
  if (spec->random.empty())
    throw Error(ErrorKind::InvalidArgument, "model case has no random terms to test");

  RandomTermTests out{fit_reml(spec, options.reml), {}};
  const std::size_t k = spec->random.size();
  std::vector<double> reduced_ll(k);

  // Refit each reduced model from the full optimum; if a reduced model
  // beats the full one, the full optimum was not global: refit and repeat.
  for (int round = 0; round < 4; ++round) {
    bool improved = false;
    for (std::size_t t = 0; t < k; ++t) {
      auto rspec = std::make_shared<const ModelSpec>(spec->without(spec->random[t].term));
      RemlOptions ro = options.reml;
      Eigen::VectorXd warm(static_cast<Eigen::Index>(k - 1));
      for (std::size_t j = 0, c = 0; j < k; ++j)
        if (j != t) warm(static_cast<Eigen::Index>(c++)) = out.full_fit.theta(static_cast<Eigen::Index>(j));
      ro.start_theta = warm;
      auto rf = fit_reml(rspec, ro);
      reduced_ll[t] = rf.reml_log_likelihood;
      if (rf.reml_log_likelihood > out.full_fit.reml_log_likelihood + 1e-7) {
        Eigen::VectorXd st(static_cast<Eigen::Index>(k));
        for (std::size_t j = 0, c = 0; j < k; ++j)
          st(static_cast<Eigen::Index>(j)) = j == t ? 0.0 : rf.theta(static_cast<Eigen::Index>(c++));
        RemlOptions fo = options.reml;
        fo.start_theta = st;
        auto refit = fit_reml(spec, fo);
        if (refit.reml_log_likelihood > out.full_fit.reml_log_likelihood) {
          out.full_fit = std::move(refit);
          improved = true;
          break;
        }
      }
    }
    if (!improved) break;
  }

  for (Term t : kDisplayOrder) {
    std::size_t i = 0;
    while (i < k && spec->random[i].term != t) ++i;
    if (i == k) continue;
    const auto& vc = out.full_fit.variance_components[i];
    SignificanceRow r;
    r.term = std::string(term_name(t));
    r.kind = RowKind::random;
    r.statistic = std::max(0.0, -2.0 * (reduced_ll[i] - out.full_fit.reml_log_likelihood));
    r.df1 = 1.0;
    if (r.statistic <= 0.0)
      r.p_value = 1.0;
    else
      r.p_value = numerics::chisq_sf(r.statistic, 1.0) * (options.boundary_correction ? 0.5 : 1.0);
    r.variance = vc.variance;
    r.std_dev = vc.std_dev;
    out.rows.push_back(r);
  }
  auto res = residual_row();
  res.variance = out.full_fit.residual_variance;
  res.std_dev = std::sqrt(out.full_fit.residual_variance);
  out.rows.push_back(res);
  return out;
}

SignificanceResult significance_analysis(const TrialDataset& ds, const ModelCase& model_case,
                                         const LrtOptions& options) {
  SignificanceResult result;
  result.table.case_id = model_case.case_id;
  auto rt = test_random_terms(ds, model_case, options);
  std::vector<SignificanceRow> fixed;
  if (!rt.full_fit.spec->fixed_terms.empty()) fixed = test_fixed_terms(ds, model_case);

  for (Term t : kDisplayOrder) {
    const auto name = term_name(t);
    for (const auto* v : {&rt.rows, &fixed})
      for (const auto& r : *v)
        if (r.kind != RowKind::residual && r.term == name) result.table.rows.push_back(r);
  }
  SignificanceRow res = rt.rows.back();
  if (!fixed.empty()) res.mean_square = fixed.back().mean_square, res.df1 = fixed.back().df1;
  result.table.rows.push_back(res);
  result.fit = std::move(rt.full_fit);
  return result;
}

const SignificanceRow* SignificanceTable::find(std::string_view term) const {
  for (const auto& r : rows)
    if (r.term == term) return &r;
  if (term != "Residual") {
    try {
      const auto name = term_name(parse_term(term));
      for (const auto& r : rows)
        if (r.term == name) return &r;
    } catch (const Error&) {
    }
  }
  return nullptr;
}

namespace {

std::string fmt(std::optional<double> v, int prec) {
  if (!v || std::isnan(*v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, *v);
  return buf;
}

}  // namespace

std::string SignificanceTable::to_text() const {
  bool has_fixed = false, has_random = false;
  for (const auto& r : rows) {
    has_fixed |= r.kind == RowKind::fixed;
    has_random |= r.kind == RowKind::random;
  }
  std::vector<std::string> header = {"Term"};
  if (has_random) header.insert(header.end(), {"Variance", "Std.Dev.", "Chisq", "Pr(>Chisq)"});
  if (has_fixed) header.insert(header.end(), {"Mean Sq", "F value", "Df", "Pr(>F)"});

  std::vector<std::vector<std::string>> cells;
  for (const auto& r : rows) {
    std::vector<std::string> c = {r.term};
    const bool rnd = r.kind == RowKind::random, fx = r.kind == RowKind::fixed;
    if (has_random) {
      c.push_back(fmt(r.variance, 2));
      c.push_back(fmt(r.std_dev, 2));
      c.push_back(rnd ? fmt(r.statistic, 3) : "");
      c.push_back(rnd ? fmt(r.p_value, 3) : "");
    }
    if (has_fixed) {
      c.push_back(fmt(r.mean_square, 3));
      c.push_back(fx ? fmt(r.statistic, 3) : "");
      std::string df;
      if (fx) df = fmt(r.df1, 0) + "," + fmt(r.df2, r.df2 && std::fabs(*r.df2 - std::round(*r.df2)) > 1e-9 ? 2 : 0);
      else if (r.kind == RowKind::residual) df = fmt(r.df1, 0);
      c.push_back(df);
      c.push_back(fx ? fmt(r.p_value, 3) : "");
    }
    cells.push_back(std::move(c));
  }
  std::vector<std::size_t> width(header.size());
  for (std::size_t j = 0; j < header.size(); ++j) {
    width[j] = header[j].size();
    for (const auto& c : cells) width[j] = std::max(width[j], c[j].size());
  }
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& c) {
    for (std::size_t j = 0; j < c.size(); ++j) {
      if (j == 0)
        os << c[j] << std::string(width[j] - c[j].size(), ' ');
      else
        os << "  " << std::string(width[j] - c[j].size(), ' ') << c[j];
    }
    os << '\n';
  };
  line(header);
  for (const auto& c : cells) line(c);
  return os.str();
}

}  // namespace gxe
