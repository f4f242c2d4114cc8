#ifndef EFFECTMOD_DISCOVER_TREE_HPP
#define EFFECTMOD_DISCOVER_TREE_HPP

#include <optional>
#include <string>
#include <vector>

#include "effectmod/pair_store.hpp"

namespace effectmod {

enum class CovariateKind { binary, categorical };

struct CovariateSpec {
  std::string name;
  CovariateKind kind = CovariateKind::categorical;
  // Categorical: observed levels in first-appearance order. Binary: empty
  // (the domain is fixed at {"0", "1"}).
  std::vector<std::string> levels;
};

// Inspects a pair covariate column: binary when every value is "0" or "1",
// categorical otherwise. Missing values are rejected.
CovariateSpec infer_covariate(const PairData& data, const std::string& name);

struct TreeConfig {
  std::size_t min_split = 100;  // node size needed to attempt a split
  std::size_t min_leaf = 50;    // smallest admissible child
  double cp = 0.001;            // required SSE drop as a fraction of root SSE
  std::size_t max_depth = 5;    // root is depth 0; nodes at max_depth stay leaves
};

struct TreeNode {
  int node_id = 0;
  int left = -1;   // child indices into Tree::nodes, -1 at a leaf
  int right = -1;
  int depth = 0;

  int covariate = -1;  // split covariate index, -1 at a leaf
  // Values sent left. Binary covariates list exactly one value; anything
  // else goes right. Values outside the fit-time levels also go right.
  std::vector<std::string> levels_left;

  std::string leaf_group_id;  // "1".."G" in depth-first order, leaves only
  std::size_t n_pairs = 0;
  double mean_response = 0.0;  // mean unsigned difference
  double sse = 0.0;

  bool is_leaf() const { return covariate < 0; }
};

struct Tree {
  std::vector<CovariateSpec> covariates;
  std::string outcome;
  TreeConfig config;
  std::vector<TreeNode> nodes;  // nodes[0] is the root, children follow parents
  double root_sse = 0.0;

  std::size_t n_leaves() const;
};

// Greedy least-squares regression tree on the unsigned pair difference
// |y_treated - y_control| for the named outcome. Split search is exhaustive:
// levels are ordered by child mean response and the order-respecting cuts
// are scanned, which is optimal for a binary response. A split is accepted
// when it strictly reduces SSE by at least cp times the root SSE and both
// children hold min_leaf pairs. Ties prefer the earlier covariate, then the
// earlier cut. Missing covariate values are rejected at fit time.
Tree build_tree(const PairData& data, const std::vector<std::string>& covariates,
                const std::string& outcome, const TreeConfig& config);

struct AssignResult {
  Partition partition;
  std::size_t unseen_routed_right = 0;  // pairs hitting an unknown level or NA
};

// Drops each pair down the tree; leaf group ids become the partition.
AssignResult assign_groups(const Tree& tree, const PairData& data);

std::string tree_to_json(const Tree& tree);
Tree tree_from_json(const std::string& text);

// Node annotated for reporting: discordant odds ratio and event rates,
// aggregated over the leaves under each internal node.
struct AnnotatedNode {
  int node_id = 0;
  std::string label;  // split condition met on arrival, or "all pairs"
  long n_pairs = 0;
  long n_discordant = 0;
  long n_control_only = 0;
  long n_treated_only = 0;
  long n_events_treated = 0;
  long n_events_control = 0;
  std::optional<double> odds_ratio;  // control-only over treated-only
  double rate_treated = 0.0;         // event fraction among treated members
  double rate_control = 0.0;
};

// Pairs the tree with per-leaf discordant summaries (group ids must cover
// every leaf) and aggregates counts upward. Output is in node order.
std::vector<AnnotatedNode> describe_tree(const Tree& tree,
                                         const std::vector<DiscordantSummary>& leaf_summaries);

// Indented text rendering, one node per line, with odds ratio and event
// rate annotations.
std::string render_tree(const Tree& tree,
                        const std::vector<AnnotatedNode>& annotated);

}  // namespace effectmod

#endif
