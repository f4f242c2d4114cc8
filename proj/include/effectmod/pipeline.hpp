#ifndef EFFECTMOD_PIPELINE_HPP
#define EFFECTMOD_PIPELINE_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "effectmod/discover_tree.hpp"
#include "effectmod/multiplicity.hpp"
#include "effectmod/pair_store.hpp"
#include "effectmod/sensitivity.hpp"

namespace effectmod {

struct AnalysisConfig {
  // First entry is the primary outcome; groups are formed on it and reused
  // for the rest.
  std::vector<std::string> outcomes;
  // "tree" grows a tree on the primary outcome; anything else names a pair
  // covariate column holding precomputed group labels.
  std::string group_source = "tree";
  std::vector<std::string> tree_covariates;  // empty means every covariate column
  TreeConfig tree;
  // Test direction per outcome. The primary outcome defaults to benefit;
  // every other outcome must be listed explicitly.
  std::map<std::string, Direction> directions;
  std::vector<double> gammas = {1.00, 1.05, 1.10, 1.15, 1.17, 1.20};
  TruncatedProductParams trunc;
  std::vector<double> lambdas;  // amplification points at the max gamma
  TailMethod method = TailMethod::exact;
  double scan_resolution = 0.01;  // step for the max-gamma scan
  double scan_limit = 3.0;        // scan ceiling
  // Refit within each primary leaf on a secondary outcome's unsigned
  // differences, subdividing its groups (ids like "2.1").
  bool secondary_subtrees = false;
};

struct AmplificationPoint {
  double gamma = 0.0;
  double lambda = 0.0;
  double delta = 0.0;
};

struct OutcomeAnalysis {
  std::string outcome;
  Direction direction = Direction::benefit;
  Partition partition;
  Tree tree;  // populated only when the partition came from a tree
  bool has_tree = false;
  std::vector<DiscordantSummary> summaries;  // groups then pooled
  SensitivityGrid grid;                      // combined column filled
  std::vector<ClosedTestingReport> closed;   // one per grid gamma
  GammaRejectionScan scan;
  // amplify(scan.global_max_gamma, lambda) for each configured lambda
  // exceeding that gamma; empty when the global null was never rejected.
  std::vector<AmplificationPoint> amplification;
};

struct ReportBundle {
  std::string version;
  std::uint64_t config_hash = 0;  // over the canonical config JSON
  std::uint64_t input_hash = 0;   // over the canonical pair CSV bytes
  AnalysisConfig config;
  std::vector<OutcomeAnalysis> outcomes;
};

ReportBundle analyze(const PairData& data, const AnalysisConfig& config);

std::string config_to_json(const AnalysisConfig& config);
std::string report_to_json(const ReportBundle& bundle);
std::string report_to_text(const ReportBundle& bundle);
// Gamma grid CSV for one outcome: one row per gamma, one column per group,
// then pooled, then the combined column.
std::string outcome_grid_csv(const OutcomeAnalysis& outcome);

// Synthetic matched-pair generator. Each group contributes n_pairs pairs
// whose members share the listed covariates. Within a pair, who is labeled
// treated follows the two members' unobserved binaries u via assignment odds
// gamma_true; event probabilities are p_treated or p_control per the label,
// shifted by u_outcome_shift on the logit scale when u = 1. Each member's
// event indicator uses one uniform shared across outcome columns and labels,
// so equal probabilities give identical potential outcomes.
struct SyntheticGroupSpec {
  std::string name;
  std::map<std::string, std::string> covariates;
  std::size_t n_pairs = 0;
  double p_treated = 0.1;
  double p_control = 0.1;
  double u_outcome_shift = 0.0;
};

struct SyntheticSpec {
  std::vector<SyntheticGroupSpec> groups;
  std::vector<std::string> outcome_names = {"y"};
  double gamma_true = 1.0;
  std::uint64_t seed = 1;
};

PairData simulate(const SyntheticSpec& spec);

SyntheticSpec synthetic_spec_from_json(const std::string& text);
// Which groups carry a true effect (p_treated != p_control), for power studies.
std::string truth_to_json(const SyntheticSpec& spec);

std::uint64_t fnv1a64(const void* data, std::size_t size);
std::uint64_t fnv1a64(const std::string& text);

}  // namespace effectmod

#endif
