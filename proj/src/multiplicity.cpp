#include "effectmod/multiplicity.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include "json.hpp"

#include "effectmod/errors.hpp"
#include "text_util.hpp"

namespace effectmod {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_tau(double tau) {
  if (!(tau > 0.0) || tau > 1.0) throw InputError("tau must lie in (0, 1]");
}

// Sum of logs of the p-values at or below tau; -inf when one of them is 0,
// 0 when none qualify.
double log_truncated_product(std::span<const double> pvalues, double tau) {
  if (pvalues.empty()) throw InputError("no p-values to combine");
  check_tau(tau);
  double log_w = 0.0;
  for (double p : pvalues) {
    if (p < 0.0 || p > 1.0)
      throw InputError("p-value outside [0,1]: " + format_double(p));
    if (p <= tau) log_w += std::log(p);
  }
  return log_w;
}

// P(W <= w) for the truncated product of n independent uniforms, taking
// ln(w) to stay stable for very small statistics:
//   sum over k = 1..n of C(n,k) (1-tau)^(n-k) m_k, where m_k = tau^k when
//   w > tau^k and otherwise w * sum_{s<k} (k ln tau - ln w)^s / s!.
double log_stat_pvalue(double log_w, std::size_t n, double tau) {
  check_tau(tau);
  if (n == 0) throw InputError("no p-values to combine");
  if (log_w >= 0.0) return 1.0;
  if (log_w == kNegInf) return 0.0;

  const double log_tau = std::log(tau);
  const double log1m_tau = tau < 1.0 ? std::log1p(-tau) : kNegInf;
  const double lgn = std::lgamma(static_cast<double>(n) + 1.0);

  double total = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    // binomial coefficient times (1-tau)^(n-k); tau == 1 kills every term
    // except k == n
    if (tau >= 1.0 && k < n) continue;
    double log_coef = lgn - std::lgamma(static_cast<double>(k) + 1.0) -
                      std::lgamma(static_cast<double>(n - k) + 1.0);
    if (k < n) log_coef += (static_cast<double>(n - k)) * log1m_tau;

    double log_mk;
    const double log_tau_k = k * log_tau;
    if (log_w > log_tau_k) {
      log_mk = log_tau_k;
    } else {
      // log of sum_{s<k} x^s / s! with x = k ln tau - ln w >= 0
      const double x = log_tau_k - log_w;
      double log_sum = 0.0;  // s = 0 term
      if (x > 0.0) {
        const double log_x = std::log(x);
        for (std::size_t s = 1; s < k; ++s) {
          const double term = s * log_x - std::lgamma(static_cast<double>(s) + 1.0);
          const double hi = std::max(log_sum, term);
          log_sum = hi + std::log(std::exp(log_sum - hi) + std::exp(term - hi));
        }
      }
      log_mk = log_w + log_sum;
    }
    total += std::exp(log_coef + log_mk);
  }
  return std::clamp(total, 0.0, 1.0);
}

}  // namespace

double truncated_product_stat(std::span<const double> pvalues, double tau) {
  return std::exp(log_truncated_product(pvalues, tau));
}

double truncated_product_pvalue(double stat, std::size_t n_pvalues, double tau) {
  if (stat < 0.0 || stat > 1.0)
    throw InputError("truncated product statistic outside [0,1]");
  return log_stat_pvalue(std::log(stat), n_pvalues, tau);
}

double truncated_product_test(std::span<const double> pvalues, double tau) {
  return log_stat_pvalue(log_truncated_product(pvalues, tau), pvalues.size(), tau);
}

bool ClosedTestingReport::subset_rejected(std::uint32_t mask) const {
  if (mask == 0 || mask >= adjusted_subset_pvalues.size())
    throw InputError("subset mask out of range");
  return adjusted_subset_pvalues[mask] <= alpha;
}

double ClosedTestingReport::global_pvalue() const {
  return adjusted_subset_pvalues.back();
}

ClosedTestingReport closed_test(std::span<const double> pvalues,
                                std::span<const std::string> group_ids,
                                const TruncatedProductParams& params) {
  const std::size_t n = pvalues.size();
  if (n == 0) throw InputError("closed testing needs at least one group");
  if (n != group_ids.size())
    throw InputError("group id list does not match the p-value list");
  if (n > kMaxClosedTestingGroups)
    throw InputError("closed testing over " + std::to_string(n) +
                     " groups exceeds the limit of " +
                     std::to_string(kMaxClosedTestingGroups));
  check_tau(params.tau);
  if (!(params.alpha > 0.0) || params.alpha >= 1.0)
    throw InputError("alpha must lie in (0, 1)");

  ClosedTestingReport report;
  report.group_ids.assign(group_ids.begin(), group_ids.end());
  report.tau = params.tau;
  report.alpha = params.alpha;

  const std::uint32_t n_masks = 1u << n;
  report.subset_pvalues.assign(n_masks, 0.0);
  const double log_tau = std::log(params.tau);
  std::vector<double> log_p(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (pvalues[i] < 0.0 || pvalues[i] > 1.0)
      throw InputError("p-value outside [0,1]: " + format_double(pvalues[i]));
    log_p[i] = std::log(pvalues[i]);
  }
  for (std::uint32_t mask = 1; mask < n_masks; ++mask) {
    double log_w = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if ((mask >> i) & 1u) {
        if (log_p[i] <= log_tau) log_w += log_p[i];
      }
    report.subset_pvalues[mask] =
        log_stat_pvalue(log_w, static_cast<std::size_t>(std::popcount(mask)), params.tau);
  }

  // adjusted p of a subset is the largest raw p over its supersets; filling
  // in decreasing subset size lets each mask take the max over one-element
  // extensions only
  report.adjusted_subset_pvalues.assign(n_masks, 0.0);
  std::vector<std::uint32_t> order;
  order.reserve(n_masks - 1);
  for (std::uint32_t mask = 1; mask < n_masks; ++mask) order.push_back(mask);
  std::sort(order.begin(), order.end(), [](std::uint32_t a, std::uint32_t b) {
    return std::popcount(a) > std::popcount(b);
  });
  for (std::uint32_t mask : order) {
    double adj = report.subset_pvalues[mask];
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t wider = mask | (1u << i);
      if (wider != mask) adj = std::max(adj, report.adjusted_subset_pvalues[wider]);
    }
    report.adjusted_subset_pvalues[mask] = adj;
  }

  for (std::size_t i = 0; i < n; ++i) {
    const double adj = report.adjusted_subset_pvalues[1u << i];
    report.adjusted_group_pvalues.push_back(adj);
    if (adj <= params.alpha) report.rejected_groups.push_back(report.group_ids[i]);
  }
  return report;
}

GammaRejectionScan max_gamma_rejection(const std::vector<DiscordantSummary>& summaries,
                                       const TruncatedProductParams& params, double resolution,
                                       double gamma_limit, Direction direction,
                                       TailMethod method) {
  if (!(resolution > 0.0)) throw InputError("scan resolution must be positive");
  if (!(gamma_limit >= 1.0)) throw InputError("scan limit must be at least 1");

  std::vector<const DiscordantSummary*> groups;
  for (const auto& s : summaries)
    if (s.group_id != "pooled") groups.push_back(&s);
  if (groups.empty()) throw InputError("no group summaries given");

  GammaRejectionScan scan;
  for (const auto* g : groups) scan.group_ids.push_back(g->group_id);
  scan.group_max_gamma.assign(groups.size(), 0.0);

  std::vector<std::string> ids = scan.group_ids;
  for (long step = 0;; ++step) {
    const double gamma = 1.0 + step * resolution;
    if (gamma > gamma_limit + 1e-9) break;
    const GammaValue gv(gamma);
    std::vector<double> pvalues;
    pvalues.reserve(groups.size());
    for (const auto* g : groups)
      pvalues.push_back(
          mcnemar_upper_pvalue(g->n_discordant, evidence_count(*g, direction), gv, method));
    const auto report = closed_test(pvalues, ids, params);
    scan.gammas.push_back(gamma);
    scan.global_pvalues.push_back(report.global_pvalue());
    // nothing survives once the global hypothesis does, since every subset
    // requires the full set rejected and bounds only grow with gamma
    if (report.global_pvalue() > params.alpha) break;
    scan.global_max_gamma = gamma;
    for (std::size_t g = 0; g < groups.size(); ++g)
      if (report.adjusted_group_pvalues[g] <= params.alpha) scan.group_max_gamma[g] = gamma;
  }
  return scan;
}

std::string closed_report_to_json(const ClosedTestingReport& report) {
  nlohmann::ordered_json j;
  j["group_ids"] = report.group_ids;
  j["tau"] = report.tau;
  j["alpha"] = report.alpha;
  j["adjusted_group_pvalues"] = report.adjusted_group_pvalues;
  j["rejected_groups"] = report.rejected_groups;
  j["global_pvalue"] = report.global_pvalue();
  auto subsets = nlohmann::ordered_json::array();
  for (std::uint32_t mask = 1; mask < report.subset_pvalues.size(); ++mask) {
    nlohmann::ordered_json entry;
    auto members = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < report.group_ids.size(); ++i)
      if ((mask >> i) & 1u) members.push_back(report.group_ids[i]);
    entry["groups"] = std::move(members);
    entry["pvalue"] = report.subset_pvalues[mask];
    entry["adjusted_pvalue"] = report.adjusted_subset_pvalues[mask];
    entry["rejected"] = report.adjusted_subset_pvalues[mask] <= report.alpha;
    subsets.push_back(std::move(entry));
  }
  j["subsets"] = std::move(subsets);
  return j.dump(2) + "\n";
}

}  // namespace effectmod
