#include "gxestat/biplot.hpp"

#include "gxestat/error.hpp"

#include <array>
#include <utility>

namespace gxe {

namespace {

constexpr std::array<std::pair<BiplotMode, std::string_view>, 8> kModeNames{{
    {BiplotMode::pc_scatter, "pc_scatter"},
    {BiplotMode::mean_vs_stability, "mean_vs_stability"},
    {BiplotMode::ranking_genotypes, "ranking_genotypes"},
    {BiplotMode::ranking_environments, "ranking_environments"},
    {BiplotMode::which_won_where, "which_won_where"},
    {BiplotMode::discrim_vs_repr, "discrim_vs_repr"},
    {BiplotMode::env_relationship, "env_relationship"},
    {BiplotMode::ammi, "ammi"},
}};

}  // namespace

std::string_view to_string(BiplotMode m) noexcept {
  for (const auto& [mode, name] : kModeNames)
    if (mode == m) return name;
  return "pc_scatter";
}

BiplotMode parse_biplot_mode(std::string_view s) {
  for (const auto& [mode, name] : kModeNames)
    if (name == s) return mode;
  throw Error(ErrorKind::InvalidArgument, "unknown biplot mode '" + std::string(s) + "'");
}

}  // namespace gxe
