#pragma once

#include "gxestat/trial_data.hpp"

#include <Eigen/Dense>

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gxe {

/// Variation sources of the multi-environment trial model. RP is the
/// replication nested within location x year.
enum class Term { CLT, LC, YR, RP, CLT_YR, CLT_LC, LC_YR, CLT_YR_LC };

/// Canonical order (degree-of-freedom table order).
inline constexpr std::array<Term, 8> kAllTerms = {Term::CLT,    Term::LC,     Term::YR,
                                                  Term::RP,     Term::CLT_YR, Term::CLT_LC,
                                                  Term::LC_YR,  Term::CLT_YR_LC};

/// Order used when printing significance tables.
inline constexpr std::array<Term, 8> kDisplayOrder = {Term::CLT_YR_LC, Term::RP,  Term::CLT_LC,
                                                      Term::CLT_YR,    Term::LC_YR, Term::CLT,
                                                      Term::LC,        Term::YR};

/// "YR * LC * CLT", "YR * LC * RP", "LC * CLT", ...
std::string_view term_name(Term t) noexcept;
/// Accepts display names and compact forms such as "CLT*LC" or "clt_lc".
Term parse_term(std::string_view s);

enum class Role { fixed, random };

struct ModelCase {
  int case_id = 1;
  std::array<Role, 8> roles{};  // indexed like kAllTerms

  Role role(Term t) const { return roles[static_cast<std::size_t>(t)]; }
  /// Cases 1..5 of the fixed/random effect table.
  static ModelCase from_id(int id);
};

/// Per-term degrees of freedom for a balanced G x L x Y x R trial.
struct DegreesOfFreedom {
  int G = 0, L = 0, Y = 0, R = 0;

  int of(Term t) const;
  /// The rep df as some reports print it, (R-1)L. It omits the year
  /// factor; `of(Term::RP)` uses the nested count (R-1)LY instead.
  int rp_as_printed() const { return (R - 1) * L; }
  bool rp_discrepancy() const { return rp_as_printed() != of(Term::RP); }
  int residual() const { return (G - 1) * (R - 1) * L * Y; }

  static DegreesOfFreedom from_dataset(const TrialDataset& ds);
};

enum class Factor { genotype, location, year, rep };

/// Design for one model: fixed-effect matrix plus one indicator block per
/// random term. Column definitions are kept so rows can be rebuilt for new data.
struct ModelSpec {
  struct FixedColumn {
    std::string name;
    std::vector<std::pair<Factor, int>> indicators;  // product of level indicators; empty = intercept
  };
  struct RandomBlock {
    Term term;
    std::vector<std::string> levels;  // level keys, e.g. "2009:KN:EarlyCanada"
    std::vector<int> codes;           // per record
  };

  ModelCase model_case;
  std::vector<Term> fixed_terms;   // excluding the intercept
  std::vector<Term> random_terms;  // same order as `random`
  std::vector<FixedColumn> fixed_columns;
  Eigen::MatrixXd x;
  std::vector<RandomBlock> random;
  Eigen::VectorXd y;
  std::vector<std::string> genotypes, locations, years, reps;
  std::vector<std::string> warnings;
  /// Relative standard deviations from the moment (ANOVA) estimates when the
  /// data are balanced, else ones; used to seed the optimizer.
  Eigen::VectorXd theta_start;

  Eigen::Index n() const { return y.size(); }
  Eigen::Index q() const;
  const RandomBlock* block(Term t) const;
  /// Same spec with one random term removed.
  ModelSpec without(Term t) const;
};

ModelSpec build_model(const TrialDataset& ds, const ModelCase& model_case);

struct VarianceComponent {
  Term term;
  double variance = 0.0;
  double std_dev = 0.0;
  bool at_boundary = false;
};

struct FixedEffect {
  std::string name;
  double estimate = 0.0;
  double standard_error = 0.0;
};

struct BlupSet {
  Term term;
  std::vector<std::string> levels;
  Eigen::VectorXd values;
};

struct MixedModelFit {
  std::shared_ptr<const ModelSpec> spec;
  std::vector<VarianceComponent> variance_components;  // aligned with spec->random
  double residual_variance = 0.0;
  std::vector<FixedEffect> fixed_effects;
  double reml_log_likelihood = 0.0;
  std::vector<BlupSet> blups;
  Eigen::VectorXd theta;  // relative standard deviations sigma_t / sigma
  bool converged = false;
  int evaluations = 0;

  const ModelCase& model_case() const { return spec->model_case; }
  const VarianceComponent* component(Term t) const;
};

struct RemlOptions {
  int max_evaluations = 20000;
  /// Starting points are these multiples of the moment (ANOVA) variance
  /// estimates; the best converged optimum wins.
  std::vector<double> start_multipliers = {0.01, 1.0, 10.0};
  /// Overrides the moment start with a single explicit theta.
  std::optional<Eigen::VectorXd> start_theta;
  /// A component is set to exactly zero when doing so raises the deviance by
  /// at most this much.
  double boundary_tol = 1e-9;
};

MixedModelFit fit_reml(const ModelSpec& spec, const RemlOptions& options = {});
MixedModelFit fit_reml(std::shared_ptr<const ModelSpec> spec, const RemlOptions& options = {});

/// REML deviance (-2 log restricted likelihood) at a given theta.
double reml_deviance(const ModelSpec& spec, const Eigen::VectorXd& theta);

/// Conditional modes of one random term: G Z^T V^-1 (y - X beta).
const BlupSet& blup(const MixedModelFit& fit, Term t);

struct Prediction {
  Eigen::VectorXd predicted;
  Eigen::VectorXd residuals;
};

/// X beta + sum_t Z_t u_t for each record of `ds`; random levels the model
/// never saw contribute 0.
Prediction predict(const MixedModelFit& fit, const TrialDataset& ds);

enum class RowKind { fixed, random, residual };

struct SignificanceRow {
  std::string term;
  RowKind kind = RowKind::random;
  double statistic = 0.0;  // chi-square or F; NaN on the residual row
  double df1 = 0.0;
  std::optional<double> df2;
  double p_value = 0.0;    // NaN on the residual row
  std::optional<double> variance;
  std::optional<double> std_dev;
  std::optional<double> mean_square;
};

struct SignificanceTable {
  int case_id = 1;
  std::vector<SignificanceRow> rows;

  const SignificanceRow* find(std::string_view term) const;
  /// Aligned plain text: random terms as Variance / Standard deviation /
  /// chi-square p, fixed terms as Mean square / F / F-test p.
  std::string to_text() const;
};

struct LrtOptions {
  RemlOptions reml;
  /// Halve p-values for the 50:50 chi-square(0)/chi-square(1) boundary mixture.
  bool boundary_correction = false;
};

struct RandomTermTests {
  MixedModelFit full_fit;
  std::vector<SignificanceRow> rows;  // display order, then the residual row
};

/// Likelihood-ratio test for every random term: refit without it and compare
/// REML log-likelihoods (df = 1).
RandomTermTests test_random_terms(const TrialDataset& ds, const ModelCase& model_case,
                                  const LrtOptions& options = {});

/// One row of a balanced-design ANOVA with its expected-mean-square data.
struct BalancedAnovaRow {
  std::optional<Term> term;  // nullopt for the residual
  unsigned mask = 0;         // factor set (genotype, location, year, rep bits)
  int df = 0;
  double ss = 0.0;
  double ms = 0.0;
  double obs_per_level = 0.0;  // coefficient of this term's variance in EMS
};

/// Classical ANOVA for a balanced trial (rep nested in location x year).
/// Throws UnbalancedData otherwise.
std::vector<BalancedAnovaRow> balanced_anova(const TrialDataset& ds);

/// F tests for the fixed terms of a case with denominators from the
/// expected-mean-squares ladder (synthesized with Satterthwaite df when no
/// single mean square matches). Rows in display order plus the residual row.
std::vector<SignificanceRow> test_fixed_terms(const TrialDataset& ds, const ModelCase& model_case);

struct SignificanceResult {
  SignificanceTable table;
  std::optional<MixedModelFit> fit;
};

/// Random-term likelihood-ratio tests and (when the case has fixed terms)
/// balanced-ANOVA F tests, merged in display order with a closing residual row.
SignificanceResult significance_analysis(const TrialDataset& ds, const ModelCase& model_case,
                                         const LrtOptions& options = {});

}  // namespace gxe
