#include "gxestat/pipeline.hpp"

#include "gxestat/error.hpp"

namespace gxe {

SignificanceSection significance_section(const TrialDataset& ds, int case_id, const LrtOptions& lrt) {
  auto res = significance_analysis(ds, ModelCase::from_id(case_id), lrt);
  SignificanceSection s{std::move(res.table), {}, {}};
  if (res.fit) {
    auto p = predict(*res.fit, ds);
    s.predicted.assign(p.predicted.data(), p.predicted.data() + p.predicted.size());
    s.residuals.assign(p.residuals.data(), p.residuals.data() + p.residuals.size());
  }
  return s;
}

AmmiSection ammi_section(const TwoWayTable& table, const AmmiOptions& options) {
  auto a = analyze_ammi(table, options);
  AmmiSection s{std::move(a.fit), std::move(a.selection), {}};
  const int K = static_cast<int>(s.fit.singular_values.size());
  if (K < 2) return s;

  const AmmiFit* plot_fit = &s.fit;
  AmmiFit wider;
  if (s.fit.n_components < 2) {
    wider = fit_ammi(table, 2, options.error);
    plot_fit = &wider;
  }
  auto g = ammi_biplot_data(*plot_fit, {0, 1});
  if (plot_fit == &wider)
    g.warnings.push_back("only " + std::to_string(s.fit.n_components) +
                         " component(s) retained; PC2 shown for display");
  s.biplots.push_back(std::move(g));
  if (s.fit.n_components >= 3) s.biplots.push_back(ammi_biplot_data(s.fit, {0, 1, 2}));
  return s;
}

GgeSection gge_section(const TwoWayTable& table, Centering centering, std::optional<double> svp) {
  GgeSection s{fit_gge(table, centering, svp.value_or(0.5)), {}};
  for (BiplotMode m : kGgeModes)
    s.biplots.push_back(gge_biplot(s.fit.with_svp(svp.value_or(default_svp(m))), m));
  return s;
}

AnalysisBundle run_pipeline(const TrialDataset& ds, const PipelineOptions& options) {
  AnalysisBundle b;
  b.dataset = summarize(ds);
  for (int c : options.cases) b.significance.push_back(significance_section(ds, c, options.lrt));
  b.stability = stability_report(ds, options.stability);
  const auto table = two_way_means(ds, options.grouping);
  auto ammi_opts = options.ammi;
  if (!ammi_opts.error) ammi_opts.error = cell_mean_error(table);
  b.ammi = ammi_section(table, ammi_opts);
  b.gge = gge_section(table, options.centering, options.gge_svp);
  return b;
}

}  // namespace gxe
