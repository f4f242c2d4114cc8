#include "effectmod/discover_tree.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "json.hpp"

#include "effectmod/errors.hpp"
#include "text_util.hpp"

namespace effectmod {

std::size_t Tree::n_leaves() const {
  std::size_t n = 0;
  for (const auto& node : nodes)
    if (node.is_leaf()) ++n;
  return n;
}

CovariateSpec infer_covariate(const PairData& data, const std::string& name) {
  const std::size_t col = data.covariate_index(name);
  CovariateSpec spec;
  spec.name = name;
  spec.kind = CovariateKind::binary;
  std::unordered_map<std::string, std::size_t> seen;
  for (const auto& pair : data.pairs) {
    const std::string& v = pair.covariates[col];
    if (v == kMissingValue)
      throw InputError("covariate '" + name + "' has a missing value at pair '" +
                       pair.pair_id + "'; drop the column or complete the data");
    if (v != "0" && v != "1") spec.kind = CovariateKind::categorical;
    if (seen.emplace(v, spec.levels.size()).second) spec.levels.push_back(v);
  }
  if (spec.kind == CovariateKind::binary) spec.levels.clear();
  return spec;
}

namespace {

// Column of level indices for one covariate; binary columns use 0/1 directly.
struct CovariateColumn {
  CovariateSpec spec;
  std::vector<int> level_of_pair;
  std::size_t n_levels = 0;
};

struct SplitChoice {
  bool found = false;
  std::size_t covariate = 0;
  std::vector<int> levels_left;  // level indices sent left
  double reduction = 0.0;
};

double sse_of(double sum, double n) { return sum - sum * sum / n; }

struct Builder {
  const std::vector<CovariateColumn>& columns;
  const std::vector<int>& response;
  const TreeConfig& config;
  double root_sse = 0.0;
  std::vector<TreeNode> nodes;

  SplitChoice best_split(const std::vector<std::size_t>& members, double node_sse) const {
    SplitChoice best;
    for (std::size_t c = 0; c < columns.size(); ++c) {
      const auto& column = columns[c];
      if (column.n_levels < 2) continue;
      std::vector<double> count(column.n_levels, 0.0), events(column.n_levels, 0.0);
      for (std::size_t i : members) {
        const int lv = column.level_of_pair[i];
        count[lv] += 1.0;
        events[lv] += response[i];
      }
      std::vector<int> present;
      for (std::size_t lv = 0; lv < column.n_levels; ++lv)
        if (count[lv] > 0.0) present.push_back(static_cast<int>(lv));
      if (present.size() < 2) continue;
      // For a binary response the optimal level subset is a prefix of the
      // levels ordered by mean response, so only those cuts are scanned.
      std::sort(present.begin(), present.end(), [&](int a, int b) {
        const double ma = events[a] / count[a];
        const double mb = events[b] / count[b];
        if (ma != mb) return ma < mb;
        return a < b;
      });
      const double n_total = static_cast<double>(members.size());
      double s_total = 0.0;
      for (int lv : present) s_total += events[lv];
      double n_left = 0.0, s_left = 0.0;
      for (std::size_t cut = 0; cut + 1 < present.size(); ++cut) {
        n_left += count[present[cut]];
        s_left += events[present[cut]];
        const double n_right = n_total - n_left;
        if (n_left < static_cast<double>(config.min_leaf) ||
            n_right < static_cast<double>(config.min_leaf))
          continue;
        const double split_sse = sse_of(s_left, n_left) + sse_of(s_total - s_left, n_right);
        const double reduction = node_sse - split_sse;
        if (reduction > best.reduction) {
          best.found = true;
          best.covariate = c;
          best.levels_left.assign(present.begin(), present.begin() + cut + 1);
          best.reduction = reduction;
        }
      }
    }
    if (best.found &&
        !(best.reduction > 0.0 && best.reduction >= config.cp * root_sse))
      best.found = false;
    return best;
  }

  int grow(std::vector<std::size_t>&& members, int depth) {
    const int id = static_cast<int>(nodes.size());
    nodes.emplace_back();
    const double n = static_cast<double>(members.size());
    double sum = 0.0;
    for (std::size_t i : members) sum += response[i];
    {
      TreeNode& node = nodes[id];
      node.node_id = id;
      node.depth = depth;
      node.n_pairs = members.size();
      node.mean_response = sum / n;
      node.sse = sse_of(sum, n);
    }
    if (depth == 0) root_sse = nodes[id].sse;

    if (members.size() < config.min_split || nodes[id].sse <= 0.0 ||
        static_cast<std::size_t>(depth) >= config.max_depth)
      return id;
    const SplitChoice split = best_split(members, nodes[id].sse);
    if (!split.found) return id;

    const auto& column = columns[split.covariate];
    std::vector<bool> goes_left(column.n_levels, false);
    for (int lv : split.levels_left) goes_left[lv] = true;
    std::vector<std::size_t> left_members, right_members;
    for (std::size_t i : members)
      (goes_left[column.level_of_pair[i]] ? left_members : right_members).push_back(i);
    members.clear();
    members.shrink_to_fit();

    nodes[id].covariate = static_cast<int>(split.covariate);
    if (column.spec.kind == CovariateKind::binary) {
      for (int lv : split.levels_left)
        nodes[id].levels_left.push_back(lv ? "1" : "0");
    } else {
      // recorded in the declared level order, not mean order
      for (std::size_t lv = 0; lv < column.n_levels; ++lv)
        if (goes_left[lv]) nodes[id].levels_left.push_back(column.spec.levels[lv]);
    }
    const int left = grow(std::move(left_members), depth + 1);
    nodes[id].left = left;
    const int right = grow(std::move(right_members), depth + 1);
    nodes[id].right = right;
    return id;
  }
};

}  // namespace

Tree build_tree(const PairData& data, const std::vector<std::string>& covariates,
                const std::string& outcome, const TreeConfig& config) {
  if (data.pairs.empty()) throw InputError("no pairs to fit a tree on");
  if (covariates.empty()) throw InputError("no covariates declared for the tree");
  if (config.min_leaf < 1 || config.cp < 0.0 || config.cp >= 1.0 || config.max_depth < 1)
    throw InputError("invalid tree configuration");
  const std::size_t outcome_idx = data.outcome_index(outcome);

  Tree tree;
  tree.outcome = outcome;
  tree.config = config;

  std::vector<CovariateColumn> columns;
  for (const auto& name : covariates) {
    CovariateColumn column;
    column.spec = infer_covariate(data, name);
    const std::size_t col = data.covariate_index(name);
    column.level_of_pair.reserve(data.pairs.size());
    if (column.spec.kind == CovariateKind::binary) {
      column.n_levels = 2;
      for (const auto& pair : data.pairs)
        column.level_of_pair.push_back(pair.covariates[col] == "1" ? 1 : 0);
    } else {
      std::unordered_map<std::string, int> index_of;
      for (std::size_t lv = 0; lv < column.spec.levels.size(); ++lv)
        index_of[column.spec.levels[lv]] = static_cast<int>(lv);
      column.n_levels = column.spec.levels.size();
      for (const auto& pair : data.pairs)
        column.level_of_pair.push_back(index_of.at(pair.covariates[col]));
    }
    tree.covariates.push_back(column.spec);
    columns.push_back(std::move(column));
  }

  std::vector<int> response;
  response.reserve(data.pairs.size());
  for (const auto& pair : data.pairs) response.push_back(pair.unsigned_diff(outcome_idx));

  Builder builder{columns, response, config, 0.0, {}};
  std::vector<std::size_t> all(data.pairs.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  builder.grow(std::move(all), 0);

  tree.nodes = std::move(builder.nodes);
  tree.root_sse = builder.root_sse;
  int next_group = 0;
  for (auto& node : tree.nodes)
    if (node.is_leaf()) node.leaf_group_id = std::to_string(++next_group);
  return tree;
}

AssignResult assign_groups(const Tree& tree, const PairData& data) {
  if (tree.nodes.empty()) throw InputError("tree has no nodes");
  std::vector<std::size_t> cols;
  for (const auto& spec : tree.covariates) cols.push_back(data.covariate_index(spec.name));

  AssignResult result;
  result.partition.provenance = Partition::Provenance::tree;
  std::vector<int> group_of_node(tree.nodes.size(), -1);
  for (const auto& node : tree.nodes)
    if (node.is_leaf()) {
      group_of_node[node.node_id] = static_cast<int>(result.partition.group_ids.size());
      result.partition.group_ids.push_back(node.leaf_group_id);
    }

  for (const auto& pair : data.pairs) {
    int at = 0;
    bool unseen = false;
    while (!tree.nodes[at].is_leaf()) {
      const TreeNode& node = tree.nodes[at];
      const CovariateSpec& spec = tree.covariates[node.covariate];
      const std::string& value = pair.covariates[cols[node.covariate]];
      bool known;
      if (value == kMissingValue) {
        known = false;
      } else if (spec.kind == CovariateKind::binary) {
        known = value == "0" || value == "1";
      } else {
        known = std::find(spec.levels.begin(), spec.levels.end(), value) != spec.levels.end();
      }
      if (!known) unseen = true;
      const bool left = known && std::find(node.levels_left.begin(), node.levels_left.end(),
                                           value) != node.levels_left.end();
      at = left ? node.left : node.right;
    }
    if (unseen) ++result.unseen_routed_right;
    result.partition.assignment.push_back(group_of_node[at]);
  }
  return result;
}

namespace {

const char* kind_name(CovariateKind kind) {
  return kind == CovariateKind::binary ? "binary" : "categorical";
}

CovariateKind kind_from_name(const std::string& name) {
  if (name == "binary") return CovariateKind::binary;
  if (name == "categorical") return CovariateKind::categorical;
  throw InputError("unknown covariate kind '" + name + "'");
}

}  // namespace

std::string tree_to_json(const Tree& tree) {
  nlohmann::ordered_json j;
  j["outcome"] = tree.outcome;
  j["config"] = {{"min_split", tree.config.min_split},
                 {"min_leaf", tree.config.min_leaf},
                 {"cp", tree.config.cp},
                 {"max_depth", tree.config.max_depth}};
  j["root_sse"] = tree.root_sse;
  auto covs = nlohmann::ordered_json::array();
  for (const auto& spec : tree.covariates) {
    nlohmann::ordered_json c;
    c["name"] = spec.name;
    c["kind"] = kind_name(spec.kind);
    if (spec.kind == CovariateKind::categorical) c["levels"] = spec.levels;
    covs.push_back(std::move(c));
  }
  j["covariates"] = std::move(covs);
  auto nodes = nlohmann::ordered_json::array();
  for (const auto& node : tree.nodes) {
    nlohmann::ordered_json n;
    n["id"] = node.node_id;
    n["depth"] = node.depth;
    n["n_pairs"] = node.n_pairs;
    n["mean_response"] = node.mean_response;
    n["sse"] = node.sse;
    if (node.is_leaf()) {
      n["group"] = node.leaf_group_id;
    } else {
      n["covariate"] = tree.covariates[node.covariate].name;
      if (tree.covariates[node.covariate].kind == CovariateKind::binary)
        n["value_left"] = node.levels_left.at(0);
      else
        n["levels_left"] = node.levels_left;
      n["left"] = node.left;
      n["right"] = node.right;
    }
    nodes.push_back(std::move(n));
  }
  j["nodes"] = std::move(nodes);
  return j.dump(2) + "\n";
}

Tree tree_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("tree JSON is malformed: ") + e.what());
  }
  try {
    Tree tree;
    tree.outcome = j.at("outcome").get<std::string>();
    const auto& cfg = j.at("config");
    tree.config.min_split = cfg.at("min_split").get<std::size_t>();
    tree.config.min_leaf = cfg.at("min_leaf").get<std::size_t>();
    tree.config.cp = cfg.at("cp").get<double>();
    tree.config.max_depth = cfg.at("max_depth").get<std::size_t>();
    tree.root_sse = j.at("root_sse").get<double>();
    std::unordered_map<std::string, int> cov_index;
    for (const auto& c : j.at("covariates")) {
      CovariateSpec spec;
      spec.name = c.at("name").get<std::string>();
      spec.kind = kind_from_name(c.at("kind").get<std::string>());
      if (spec.kind == CovariateKind::categorical)
        spec.levels = c.at("levels").get<std::vector<std::string>>();
      cov_index[spec.name] = static_cast<int>(tree.covariates.size());
      tree.covariates.push_back(std::move(spec));
    }
    for (const auto& n : j.at("nodes")) {
      TreeNode node;
      node.node_id = n.at("id").get<int>();
      node.depth = n.at("depth").get<int>();
      node.n_pairs = n.at("n_pairs").get<std::size_t>();
      node.mean_response = n.at("mean_response").get<double>();
      node.sse = n.at("sse").get<double>();
      if (n.contains("group")) {
        node.leaf_group_id = n.at("group").get<std::string>();
      } else {
        node.covariate = cov_index.at(n.at("covariate").get<std::string>());
        if (n.contains("value_left"))
          node.levels_left = {n.at("value_left").get<std::string>()};
        else
          node.levels_left = n.at("levels_left").get<std::vector<std::string>>();
        node.left = n.at("left").get<int>();
        node.right = n.at("right").get<int>();
      }
      if (static_cast<std::size_t>(node.node_id) != tree.nodes.size())
        throw InputError("tree JSON nodes are out of order");
      tree.nodes.push_back(std::move(node));
    }
    if (tree.nodes.empty()) throw InputError("tree JSON has no nodes");
    for (const auto& node : tree.nodes)
      if (!node.is_leaf() &&
          (node.left <= node.node_id || node.right <= node.node_id ||
           node.left >= static_cast<int>(tree.nodes.size()) ||
           node.right >= static_cast<int>(tree.nodes.size())))
        throw InputError("tree JSON has dangling child links");
    return tree;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("tree JSON is missing fields: ") + e.what());
  }
}

namespace {

std::string split_label(const Tree& tree, const TreeNode& parent, bool went_left) {
  const CovariateSpec& spec = tree.covariates[parent.covariate];
  if (spec.kind == CovariateKind::binary) {
    const std::string& left_value = parent.levels_left.at(0);
    if (went_left) return spec.name + "=" + left_value;
    return spec.name + "=" + (left_value == "0" ? "1" : "0");
  }
  std::string label = spec.name + (went_left ? " in {" : " not in {");
  for (std::size_t i = 0; i < parent.levels_left.size(); ++i) {
    if (i > 0) label += ",";
    label += parent.levels_left[i];
  }
  return label + "}";
}

}  // namespace

std::vector<AnnotatedNode> describe_tree(const Tree& tree,
                                         const std::vector<DiscordantSummary>& leaf_summaries) {
  std::unordered_map<std::string, const DiscordantSummary*> by_group;
  for (const auto& s : leaf_summaries) by_group[s.group_id] = &s;

  std::vector<AnnotatedNode> out(tree.nodes.size());
  // children precede nothing (preorder), so accumulate in reverse
  for (std::size_t idx = tree.nodes.size(); idx-- > 0;) {
    const TreeNode& node = tree.nodes[idx];
    AnnotatedNode& a = out[idx];
    a.node_id = node.node_id;
    if (node.is_leaf()) {
      auto it = by_group.find(node.leaf_group_id);
      if (it == by_group.end())
        throw InputError("no summary for leaf group '" + node.leaf_group_id + "'");
      const DiscordantSummary& s = *it->second;
      a.n_pairs = s.n_pairs;
      a.n_discordant = s.n_discordant;
      a.n_control_only = s.n_control_only;
      a.n_treated_only = s.n_treated_only;
      a.n_events_treated = s.n_events_treated;
      a.n_events_control = s.n_events_control;
    } else {
      const AnnotatedNode& l = out[node.left];
      const AnnotatedNode& r = out[node.right];
      a.n_pairs = l.n_pairs + r.n_pairs;
      a.n_discordant = l.n_discordant + r.n_discordant;
      a.n_control_only = l.n_control_only + r.n_control_only;
      a.n_treated_only = l.n_treated_only + r.n_treated_only;
      a.n_events_treated = l.n_events_treated + r.n_events_treated;
      a.n_events_control = l.n_events_control + r.n_events_control;
    }
    if (a.n_treated_only > 0)
      a.odds_ratio = static_cast<double>(a.n_control_only) / a.n_treated_only;
    if (a.n_pairs > 0) {
      a.rate_treated = static_cast<double>(a.n_events_treated) / a.n_pairs;
      a.rate_control = static_cast<double>(a.n_events_control) / a.n_pairs;
    }
  }

  out[0].label = "all pairs";
  for (const auto& node : tree.nodes)
    if (!node.is_leaf()) {
      out[node.left].label = split_label(tree, node, true);
      out[node.right].label = split_label(tree, node, false);
    }
  return out;
}

std::string render_tree(const Tree& tree, const std::vector<AnnotatedNode>& annotated) {
  if (annotated.size() != tree.nodes.size())
    throw InputError("annotation list does not match the tree");
  std::string out;
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    const TreeNode& node = tree.nodes[i];
    const AnnotatedNode& a = annotated[i];
    out.append(static_cast<std::size_t>(node.depth) * 2, ' ');
    if (node.is_leaf()) out += "group " + node.leaf_group_id + ": ";
    out += a.label;
    out += "  n=" + std::to_string(a.n_pairs);
    out += "  OR=" + (a.odds_ratio ? format_fixed(*a.odds_ratio, 2) : std::string("—"));
    out += "  treated " + format_fixed(100.0 * a.rate_treated, 1) + "%";
    out += "  control " + format_fixed(100.0 * a.rate_control, 1) + "%";
    out += '\n';
  }
  return out;
}

}  // namespace effectmod
