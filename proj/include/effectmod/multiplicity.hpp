#ifndef EFFECTMOD_MULTIPLICITY_HPP
#define EFFECTMOD_MULTIPLICITY_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "effectmod/sensitivity.hpp"

namespace effectmod {

struct TruncatedProductParams {
  double tau = 0.1;     // truncation point, in (0, 1]
  double alpha = 0.05;  // familywise level for closed testing
};

// Product of the p-values that fall at or below tau; 1 when none do.
// Evaluated in log space.
double truncated_product_stat(std::span<const double> pvalues, double tau);

// P(W <= w) for the truncated product of n independent uniforms, in closed
// form. Valid as a combination test when each input is a valid (possibly
// conservative) P-value bound. tau == 1 recovers Fisher's method.
double truncated_product_pvalue(double stat, std::size_t n_pvalues, double tau);

// Convenience: statistic and tail in one step.
double truncated_product_test(std::span<const double> pvalues, double tau);

// Closed testing over all nonempty subsets of groups. A subset L is rejected
// iff every superset K of L has raw combined P-value <= alpha. Exponential in
// the number of groups, hence the guard.
inline constexpr std::size_t kMaxClosedTestingGroups = 20;

struct ClosedTestingReport {
  std::vector<std::string> group_ids;
  double tau = 0.1;
  double alpha = 0.05;
  // Indexed by bitmask over groups; entry 0 (the empty set) is unused and
  // held at 0. adjusted[mask] = max raw combined P over supersets of mask.
  std::vector<double> subset_pvalues;
  std::vector<double> adjusted_subset_pvalues;
  std::vector<double> adjusted_group_pvalues;  // adjusted[{g}] per group
  std::vector<std::string> rejected_groups;    // singletons with adjusted <= alpha

  bool subset_rejected(std::uint32_t mask) const;
  double global_pvalue() const;  // adjusted P of the full set
};

ClosedTestingReport closed_test(std::span<const double> pvalues,
                                std::span<const std::string> group_ids,
                                const TruncatedProductParams& params);

// Ascending scan over gamma locating, for the global hypothesis and each
// single group, the largest visited gamma at which closed testing still
// rejects. The combined bound is nondecreasing in gamma, so the scan stops
// once the global hypothesis survives; 0 records "never rejected".
struct GammaRejectionScan {
  std::vector<double> gammas;          // visited grid points
  std::vector<double> global_pvalues;  // parallel to gammas
  double global_max_gamma = 0.0;
  std::vector<std::string> group_ids;
  std::vector<double> group_max_gamma;  // parallel to group_ids
};

// summaries: per-group counts, any "pooled" entry ignored. The grid is
// 1, 1 + resolution, ..., up to gamma_limit.
GammaRejectionScan max_gamma_rejection(const std::vector<DiscordantSummary>& summaries,
                                       const TruncatedProductParams& params,
                                       double resolution, double gamma_limit,
                                       Direction direction = Direction::benefit,
                                       TailMethod method = TailMethod::exact);

std::string closed_report_to_json(const ClosedTestingReport& report);

}  // namespace effectmod

#endif
