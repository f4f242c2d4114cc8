#include "effectmod/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"

#include "effectmod/errors.hpp"
#include "text_util.hpp"

namespace effectmod {

GammaValue::GammaValue(double gamma) : value(gamma) {
  if (!(gamma >= 1.0))
    throw InputError("gamma must be at least 1, got " + format_double(gamma));
}

namespace {

// Continued fraction for the regularized incomplete beta function, modified
// Lentz iteration. Converges fastest for x < (a+1)/(a+b+2); callers use the
// symmetry I_x(a,b) = 1 - I_{1-x}(b,a) to stay on that side.
double beta_cf(double a, double b, double x) {
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-15;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  throw NumericError("incomplete beta continued fraction failed to converge");
}

double reg_incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  if (x < (a + 1.0) / (a + b + 2.0))
    return std::exp(ln_front) * beta_cf(a, b, x) / a;
  return 1.0 - std::exp(ln_front) * beta_cf(b, a, 1.0 - x) / b;
}

}  // namespace

double binomial_upper_tail(long n, long k, double p) {
  if (n < 0) throw InputError("binomial size must be nonnegative");
  if (p < 0.0 || p > 1.0) throw InputError("binomial probability outside [0,1]");
  if (k <= 0) return 1.0;
  if (k > n) return 0.0;
  // P(X >= k) = I_p(k, n-k+1)
  return reg_incomplete_beta(static_cast<double>(k), static_cast<double>(n - k + 1), p);
}

double binomial_upper_tail_normal(long n, long k, double p) {
  if (n < 0) throw InputError("binomial size must be nonnegative");
  if (p < 0.0 || p > 1.0) throw InputError("binomial probability outside [0,1]");
  if (k <= 0) return 1.0;
  if (k > n) return 0.0;
  const double var = n * p * (1.0 - p);
  if (var == 0.0) return p >= 1.0 ? 1.0 : 0.0;
  const double z = (k - 0.5 - n * p) / std::sqrt(var);
  return 0.5 * std::erfc(z / std::sqrt(2.0));
}

double mcnemar_upper_pvalue(long n_discordant, long n_control_only, const GammaValue& gamma,
                            TailMethod method) {
  if (n_discordant < 0 || n_control_only < 0 || n_control_only > n_discordant)
    throw InputError("need 0 <= T <= D, got D=" + std::to_string(n_discordant) +
                     " T=" + std::to_string(n_control_only));
  if (n_discordant == 0) return 1.0;
  const double p = gamma.p_plus();
  const double tail = method == TailMethod::exact
                          ? binomial_upper_tail(n_discordant, n_control_only, p)
                          : binomial_upper_tail_normal(n_discordant, n_control_only, p);
  return std::clamp(tail, 0.0, 1.0);
}

long evidence_count(const DiscordantSummary& summary, Direction direction) {
  return direction == Direction::benefit ? summary.n_control_only : summary.n_treated_only;
}

std::optional<double> mcnemar_odds_ratio(const DiscordantSummary& summary) {
  if (summary.n_treated_only == 0) return std::nullopt;
  return static_cast<double>(summary.n_control_only) / summary.n_treated_only;
}

std::size_t SensitivityGrid::gamma_index(double gamma) const {
  for (std::size_t i = 0; i < gammas.size(); ++i)
    if (std::fabs(gammas[i] - gamma) < 1e-9) return i;
  throw InputError("gamma " + format_double(gamma) + " is not on the grid");
}

SensitivityGrid gamma_grid_bounds(const std::vector<DiscordantSummary>& summaries,
                                  const std::vector<double>& gammas, Direction direction,
                                  TailMethod method) {
  if (gammas.empty()) throw InputError("gamma grid is empty");
  for (std::size_t i = 1; i < gammas.size(); ++i)
    if (gammas[i] <= gammas[i - 1]) throw InputError("gamma grid must be strictly ascending");

  std::vector<const DiscordantSummary*> groups;
  const DiscordantSummary* pooled = nullptr;
  for (const auto& s : summaries) {
    if (s.group_id == "pooled") pooled = &s;
    else groups.push_back(&s);
  }
  if (groups.empty()) throw InputError("no group summaries given");
  DiscordantSummary synthesized;
  if (!pooled) {
    synthesized.group_id = "pooled";
    for (const auto* g : groups) {
      synthesized.n_pairs += g->n_pairs;
      synthesized.n_discordant += g->n_discordant;
      synthesized.n_control_only += g->n_control_only;
      synthesized.n_treated_only += g->n_treated_only;
      synthesized.n_events_treated += g->n_events_treated;
      synthesized.n_events_control += g->n_events_control;
    }
    pooled = &synthesized;
  }

  SensitivityGrid grid;
  grid.method = method;
  grid.gammas = gammas;
  for (const auto* g : groups) grid.group_ids.push_back(g->group_id);
  grid.group_ids.push_back("pooled");

  for (double gamma : gammas) {
    const GammaValue gv(gamma);
    std::vector<double> row;
    row.reserve(groups.size() + 1);
    for (const auto* g : groups)
      row.push_back(mcnemar_upper_pvalue(g->n_discordant, evidence_count(*g, direction), gv,
                                         method));
    row.push_back(mcnemar_upper_pvalue(pooled->n_discordant, evidence_count(*pooled, direction),
                                       gv, method));
    grid.p_upper.push_back(std::move(row));
  }
  return grid;
}

double amplify(double gamma, double lambda) {
  if (!(gamma >= 1.0)) throw InputError("gamma must be at least 1");
  if (!(lambda > gamma)) throw InputError("lambda must exceed gamma");
  return (gamma * lambda - 1.0) / (lambda - gamma);
}

std::string grid_to_csv(const SensitivityGrid& grid) {
  csv::Table table;
  table.header.push_back("gamma");
  for (const auto& id : grid.group_ids) table.header.push_back(id);
  if (!grid.combined.empty()) table.header.push_back("combined");
  for (std::size_t i = 0; i < grid.gammas.size(); ++i) {
    std::vector<std::string> row;
    row.push_back(format_double(grid.gammas[i]));
    for (double p : grid.p_upper[i]) row.push_back(format_double(p));
    if (!grid.combined.empty()) row.push_back(format_double(grid.combined[i]));
    table.rows.push_back(std::move(row));
  }
  return csv::to_string(table);
}

std::string grid_to_json(const SensitivityGrid& grid) {
  nlohmann::ordered_json j;
  j["gammas"] = grid.gammas;
  j["group_ids"] = grid.group_ids;
  j["p_upper"] = grid.p_upper;
  if (!grid.combined.empty()) j["combined"] = grid.combined;
  j["method"] = grid.method == TailMethod::exact ? "exact" : "normal_approx";
  return j.dump(2) + "\n";
}

}  // namespace effectmod
