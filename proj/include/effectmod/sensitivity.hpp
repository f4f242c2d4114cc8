#ifndef EFFECTMOD_SENSITIVITY_HPP
#define EFFECTMOD_SENSITIVITY_HPP

#include <optional>
#include <string>
#include <vector>

#include "effectmod/pair_store.hpp"

namespace effectmod {

enum class TailMethod { exact, normal_approx };

// One-sided alternative. benefit: treatment prevents events, so evidence is
// an excess of control-only discordant pairs. harm: the reverse.
enum class Direction { benefit, harm };

// Sensitivity parameter: odds of treatment within a pair bounded by gamma,
// so the assignment probability is at most gamma/(1+gamma).
struct GammaValue {
  double value;

  explicit GammaValue(double gamma);  // throws InputError if gamma < 1
  double p_plus() const { return value / (1.0 + value); }
};

// P(X >= k) for X ~ Binomial(n, p), exact, via the regularized incomplete
// beta function evaluated in log space.
double binomial_upper_tail(long n, long k, double p);

// Continuity-corrected normal approximation to the same tail.
double binomial_upper_tail_normal(long n, long k, double p);

// Upper bound on the one-sided McNemar P-value under bias at most gamma:
// P(X >= n_control_only) with X ~ Binomial(n_discordant, gamma/(1+gamma)).
// n_discordant == 0 gives 1 (no evidence).
double mcnemar_upper_pvalue(long n_discordant, long n_control_only,
                            const GammaValue& gamma,
                            TailMethod method = TailMethod::exact);

// The count carrying evidence for the alternative in the given direction.
long evidence_count(const DiscordantSummary& summary, Direction direction);

// Discordant-pair odds ratio, control-only over treated-only; empty when
// the treated-only count is zero (rendered as a dash in reports).
std::optional<double> mcnemar_odds_ratio(const DiscordantSummary& summary);

struct SensitivityGrid {
  std::vector<double> gammas;           // ascending
  std::vector<std::string> group_ids;   // groups..., then "pooled"
  std::vector<std::vector<double>> p_upper;  // [gamma index][group index]
  std::vector<double> combined;         // truncated-product column over the
                                        // group bounds; filled by the
                                        // pipeline, empty otherwise
  TailMethod method = TailMethod::exact;

  std::size_t gamma_index(double gamma) const;  // throws InputError if absent
};

// Upper-bound P-values for each (group, gamma). The input is the summarize()
// output; if no "pooled" entry is present one is synthesized by summation.
SensitivityGrid gamma_grid_bounds(const std::vector<DiscordantSummary>& summaries,
                                  const std::vector<double>& gammas,
                                  Direction direction = Direction::benefit,
                                  TailMethod method = TailMethod::exact);

// Amplification of gamma into a (lambda, delta) pair: an unobserved covariate
// multiplying treatment odds by lambda and outcome odds by delta explains the
// same bias. Requires lambda > gamma >= 1; symmetric in (lambda, delta).
double amplify(double gamma, double lambda);

std::string grid_to_csv(const SensitivityGrid& grid);
std::string grid_to_json(const SensitivityGrid& grid);

}  // namespace effectmod

#endif
