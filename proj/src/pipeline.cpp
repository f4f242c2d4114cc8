#include "effectmod/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "json.hpp"

#include "effectmod/errors.hpp"
#include "effectmod/version.hpp"
#include "text_util.hpp"

namespace effectmod {

std::uint64_t fnv1a64(const void* data, std::size_t size) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t hash = 14695981039346656037ull;
  for (std::size_t i = 0; i < size; ++i) {
    hash ^= bytes[i];
    hash *= 1099511628211ull;
  }
  return hash;
}

std::uint64_t fnv1a64(const std::string& text) { return fnv1a64(text.data(), text.size()); }

namespace {

const char* direction_name(Direction d) {
  return d == Direction::benefit ? "benefit" : "harm";
}

const char* method_name(TailMethod m) {
  return m == TailMethod::exact ? "exact" : "normal_approx";
}

Direction direction_of(const AnalysisConfig& config, const std::string& outcome,
                       bool is_primary) {
  auto it = config.directions.find(outcome);
  if (it != config.directions.end()) return it->second;
  if (is_primary) return Direction::benefit;
  throw InputError("direction unspecified for secondary outcome '" + outcome + "'");
}

// Subdivides each group by a tree grown within it on the given outcome's
// unsigned differences; groups whose subtree stays a single leaf keep their
// id, others become id.1, id.2, ...
Partition subdivide_by_outcome(const PairData& data, const Partition& base,
                               const std::vector<std::string>& covariates,
                               const std::string& outcome, const TreeConfig& tree_config) {
  Partition out;
  out.provenance = Partition::Provenance::tree;
  out.assignment.assign(data.pairs.size(), -1);
  for (std::size_t g = 0; g < base.group_ids.size(); ++g) {
    PairData subset;
    subset.covariate_cols = data.covariate_cols;
    subset.outcome_cols = data.outcome_cols;
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < data.pairs.size(); ++i)
      if (base.assignment[i] == static_cast<int>(g)) {
        members.push_back(i);
        subset.pairs.push_back(data.pairs[i]);
      }
    const Tree sub = build_tree(subset, covariates, outcome, tree_config);
    const AssignResult assigned = assign_groups(sub, subset);
    const int base_index = static_cast<int>(out.group_ids.size());
    if (assigned.partition.n_groups() == 1) {
      out.group_ids.push_back(base.group_ids[g]);
      for (std::size_t i : members) out.assignment[i] = base_index;
    } else {
      for (const auto& leaf_id : assigned.partition.group_ids)
        out.group_ids.push_back(base.group_ids[g] + "." + leaf_id);
      for (std::size_t j = 0; j < members.size(); ++j)
        out.assignment[members[j]] = base_index + assigned.partition.assignment[j];
    }
  }
  return out;
}

}  // namespace

ReportBundle analyze(const PairData& data, const AnalysisConfig& config) {
  if (config.outcomes.empty()) throw InputError("no outcomes requested");
  if (data.pairs.empty()) throw InputError("no pairs to analyze");
  for (const auto& outcome : config.outcomes) data.outcome_index(outcome);

  ReportBundle bundle;
  bundle.version = kVersion;
  bundle.config = config;
  bundle.config_hash = fnv1a64(config_to_json(config));
  bundle.input_hash = fnv1a64(pairs_to_csv(data));

  const std::string& primary = config.outcomes.front();
  std::vector<std::string> tree_covariates = config.tree_covariates;
  if (tree_covariates.empty()) tree_covariates = data.covariate_cols;

  Partition base;
  Tree tree;
  bool grew_tree = false;
  if (config.group_source == "tree") {
    tree = build_tree(data, tree_covariates, primary, config.tree);
    base = assign_groups(tree, data).partition;
    grew_tree = true;
  } else {
    base = partition_from_column(data, config.group_source);
  }
  validate_partition(base, data.pairs.size());

  for (const auto& outcome : config.outcomes) {
    const bool is_primary = outcome == primary;
    OutcomeAnalysis analysis;
    analysis.outcome = outcome;
    analysis.direction = direction_of(config, outcome, is_primary);

    analysis.partition = base;
    if (!is_primary && config.secondary_subtrees && grew_tree) {
      analysis.partition =
          subdivide_by_outcome(data, base, tree_covariates, outcome, config.tree);
      validate_partition(analysis.partition, data.pairs.size());
    }
    if (grew_tree && analysis.partition.group_ids == base.group_ids) {
      analysis.tree = tree;
      analysis.has_tree = true;
    }

    analysis.summaries = summarize(data, analysis.partition, outcome);
    analysis.grid =
        gamma_grid_bounds(analysis.summaries, config.gammas, analysis.direction, config.method);

    const std::size_t n_groups = analysis.partition.n_groups();
    std::vector<std::string> group_ids(analysis.grid.group_ids.begin(),
                                       analysis.grid.group_ids.begin() + n_groups);
    for (std::size_t gi = 0; gi < analysis.grid.gammas.size(); ++gi) {
      std::span<const double> group_p(analysis.grid.p_upper[gi].data(), n_groups);
      analysis.grid.combined.push_back(truncated_product_test(group_p, config.trunc.tau));
      analysis.closed.push_back(closed_test(group_p, group_ids, config.trunc));
    }

    analysis.scan = max_gamma_rejection(analysis.summaries, config.trunc,
                                        config.scan_resolution, config.scan_limit,
                                        analysis.direction, config.method);
    if (analysis.scan.global_max_gamma >= 1.0)
      for (double lambda : config.lambdas)
        if (lambda > analysis.scan.global_max_gamma)
          analysis.amplification.push_back(
              {analysis.scan.global_max_gamma, lambda,
               amplify(analysis.scan.global_max_gamma, lambda)});

    bundle.outcomes.push_back(std::move(analysis));
  }
  return bundle;
}

std::string config_to_json(const AnalysisConfig& config) {
  nlohmann::ordered_json j;
  j["outcomes"] = config.outcomes;
  j["group_source"] = config.group_source;
  j["tree_covariates"] = config.tree_covariates;
  j["tree"] = {{"min_split", config.tree.min_split},
               {"min_leaf", config.tree.min_leaf},
               {"cp", config.tree.cp},
               {"max_depth", config.tree.max_depth}};
  auto directions = nlohmann::ordered_json::object();
  for (const auto& [outcome, d] : config.directions) directions[outcome] = direction_name(d);
  j["directions"] = std::move(directions);
  j["gammas"] = config.gammas;
  j["tau"] = config.trunc.tau;
  j["alpha"] = config.trunc.alpha;
  j["lambdas"] = config.lambdas;
  j["method"] = method_name(config.method);
  j["scan_resolution"] = config.scan_resolution;
  j["scan_limit"] = config.scan_limit;
  j["secondary_subtrees"] = config.secondary_subtrees;
  return j.dump(2) + "\n";
}

namespace {

std::string hash_hex(std::uint64_t hash) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
  return std::string(buf);
}

nlohmann::ordered_json summary_json(const DiscordantSummary& s) {
  nlohmann::ordered_json j;
  j["group"] = s.group_id;
  j["n_pairs"] = s.n_pairs;
  j["n_discordant"] = s.n_discordant;
  j["n_control_only"] = s.n_control_only;
  j["n_treated_only"] = s.n_treated_only;
  j["n_events_treated"] = s.n_events_treated;
  j["n_events_control"] = s.n_events_control;
  j["event_rate_treated"] = s.event_rate_treated();
  j["event_rate_control"] = s.event_rate_control();
  const DiscordantSummary& cs = s;
  if (cs.n_treated_only > 0)
    j["odds_ratio"] = static_cast<double>(cs.n_control_only) / cs.n_treated_only;
  else
    j["odds_ratio"] = nullptr;
  return j;
}

nlohmann::ordered_json scan_json(const GammaRejectionScan& scan) {
  nlohmann::ordered_json j;
  j["gammas"] = scan.gammas;
  j["global_pvalues"] = scan.global_pvalues;
  j["global_max_gamma"] = scan.global_max_gamma;
  auto groups = nlohmann::ordered_json::object();
  for (std::size_t g = 0; g < scan.group_ids.size(); ++g)
    groups[scan.group_ids[g]] = scan.group_max_gamma[g];
  j["group_max_gamma"] = std::move(groups);
  return j;
}

// Right-aligns every column but the first.
std::string render_columns(const std::vector<std::vector<std::string>>& rows) {
  std::size_t n_cols = 0;
  for (const auto& row : rows) n_cols = std::max(n_cols, row.size());
  std::vector<std::size_t> width(n_cols, 0);
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::string out;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c > 0) out += "  ";
      const std::size_t pad = width[c] - row[c].size();
      if (c == 0) {
        out += row[c];
        out.append(pad, ' ');
      } else {
        out.append(pad, ' ');
        out += row[c];
      }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    out += '\n';
  }
  return out;
}

std::string od_or_dash(const DiscordantSummary& s) {
  auto odds = mcnemar_odds_ratio(s);
  return odds ? format_fixed(*odds, 2) : std::string("—");
}

}  // namespace

std::string report_to_json(const ReportBundle& bundle) {
  nlohmann::ordered_json j;
  j["version"] = bundle.version;
  j["schema_version"] = kReportSchemaVersion;
  j["config_hash"] = hash_hex(bundle.config_hash);
  j["input_hash"] = hash_hex(bundle.input_hash);
  j["config"] = nlohmann::ordered_json::parse(config_to_json(bundle.config));
  auto outcomes = nlohmann::ordered_json::array();
  for (const auto& a : bundle.outcomes) {
    nlohmann::ordered_json o;
    o["outcome"] = a.outcome;
    o["direction"] = direction_name(a.direction);
    o["groups"] = a.partition.group_ids;
    o["partition_provenance"] =
        a.partition.provenance == Partition::Provenance::tree ? "tree" : "user";
    if (a.has_tree) o["tree"] = nlohmann::ordered_json::parse(tree_to_json(a.tree));
    auto summaries = nlohmann::ordered_json::array();
    for (const auto& s : a.summaries) summaries.push_back(summary_json(s));
    o["summaries"] = std::move(summaries);
    o["grid"] = nlohmann::ordered_json::parse(grid_to_json(a.grid));
    auto closed = nlohmann::ordered_json::array();
    for (const auto& report : a.closed)
      closed.push_back(nlohmann::ordered_json::parse(closed_report_to_json(report)));
    o["closed_testing"] = std::move(closed);
    o["scan"] = scan_json(a.scan);
    auto amp = nlohmann::ordered_json::array();
    for (const auto& point : a.amplification)
      amp.push_back({{"gamma", point.gamma}, {"lambda", point.lambda}, {"delta", point.delta}});
    o["amplification"] = std::move(amp);
    outcomes.push_back(std::move(o));
  }
  j["outcomes"] = std::move(outcomes);
  return j.dump(2) + "\n";
}

std::string report_to_text(const ReportBundle& bundle) {
  std::string out;
  out += "effectmod " + bundle.version + "  config " + hash_hex(bundle.config_hash) +
         "  input " + hash_hex(bundle.input_hash) + "\n";
  for (const auto& a : bundle.outcomes) {
    out += "\n== outcome " + a.outcome + " (direction " + std::string(direction_name(a.direction)) +
           ") ==\n";
    if (a.has_tree) {
      out += "\n";
      const std::vector<DiscordantSummary> leaf_summaries(a.summaries.begin(),
                                                          a.summaries.end() - 1);
      out += render_tree(a.tree, describe_tree(a.tree, leaf_summaries));
    }

    std::vector<std::vector<std::string>> table;
    std::vector<std::string> header{"group"};
    for (const auto& s : a.summaries) header.push_back(s.group_id);
    table.push_back(header);
    std::vector<std::string> row{"pairs"};
    for (const auto& s : a.summaries) row.push_back(std::to_string(s.n_pairs));
    table.push_back(row);
    row = {"discordant"};
    for (const auto& s : a.summaries) row.push_back(std::to_string(s.n_discordant));
    table.push_back(row);
    row = {"odds ratio"};
    for (const auto& s : a.summaries) row.push_back(od_or_dash(s));
    table.push_back(row);
    row = {"treated rate (%)"};
    for (const auto& s : a.summaries) row.push_back(format_fixed(100.0 * s.event_rate_treated(), 1));
    table.push_back(row);
    row = {"control rate (%)"};
    for (const auto& s : a.summaries) row.push_back(format_fixed(100.0 * s.event_rate_control(), 1));
    table.push_back(row);
    out += "\n" + render_columns(table);

    table.clear();
    header = {"gamma"};
    for (const auto& id : a.grid.group_ids) header.push_back(id);
    header.push_back("combined");
    table.push_back(header);
    for (std::size_t gi = 0; gi < a.grid.gammas.size(); ++gi) {
      row = {format_fixed(a.grid.gammas[gi], 2)};
      for (double p : a.grid.p_upper[gi]) row.push_back(format_fixed(p, 3));
      row.push_back(format_fixed(a.grid.combined[gi], 3));
      table.push_back(row);
    }
    out += "\nupper bounds on one-sided p-values\n" + render_columns(table);

    table.clear();
    table.push_back({"gamma", "global p", "rejected groups"});
    for (std::size_t gi = 0; gi < a.grid.gammas.size(); ++gi) {
      const auto& report = a.closed[gi];
      std::string rejected = report.rejected_groups.empty() ? "none"
                                                            : join(report.rejected_groups, ", ");
      table.push_back({format_fixed(a.grid.gammas[gi], 2),
                       format_fixed(report.global_pvalue(), 3), rejected});
    }
    out += "\nclosed testing (tau " + format_double(a.closed.front().tau) + ", alpha " +
           format_double(a.closed.front().alpha) + ")\n" + render_columns(table);

    out += "\nsensitivity scan (step " + format_double(bundle.config.scan_resolution) + "): ";
    if (a.scan.global_max_gamma > 0.0)
      out += "global null rejected up to gamma " + format_fixed(a.scan.global_max_gamma, 2) + "\n";
    else
      out += "global null not rejected at gamma 1\n";
    table.clear();
    table.push_back({"group", "rejected up to gamma"});
    for (std::size_t g = 0; g < a.scan.group_ids.size(); ++g)
      table.push_back({a.scan.group_ids[g],
                       a.scan.group_max_gamma[g] > 0.0
                           ? format_fixed(a.scan.group_max_gamma[g], 2)
                           : std::string("not rejected")});
    out += render_columns(table);

    if (!a.amplification.empty()) {
      table.clear();
      table.push_back({"gamma", "lambda", "delta"});
      for (const auto& point : a.amplification)
        table.push_back({format_fixed(point.gamma, 2), format_fixed(point.lambda, 2),
                         format_fixed(point.delta, 2)});
      out += "\namplification of the surviving gamma\n" + render_columns(table);
    }
  }
  return out;
}

std::string outcome_grid_csv(const OutcomeAnalysis& outcome) {
  return grid_to_csv(outcome.grid);
}

namespace {

struct Rng {
  std::mt19937_64 engine;

  explicit Rng(std::uint64_t seed) : engine(seed) {}
  double uniform() { return (engine() >> 11) * 0x1.0p-53; }
  int bernoulli(double p) { return uniform() < p ? 1 : 0; }
};

double shifted_probability(double p, double shift, int u) {
  if (u == 0 || shift == 0.0) return p;
  if (p <= 0.0 || p >= 1.0) return p;
  const double logit = std::log(p / (1.0 - p)) + shift;
  return 1.0 / (1.0 + std::exp(-logit));
}

}  // namespace

PairData simulate(const SyntheticSpec& spec) {
  if (!(spec.gamma_true >= 1.0)) throw InputError("gamma_true must be at least 1");
  if (spec.outcome_names.empty()) throw InputError("no outcome names given");
  if (spec.groups.empty()) throw InputError("synthetic spec declares no groups");
  for (const auto& group : spec.groups) {
    if (group.name.empty()) throw InputError("synthetic group without a name");
    if (group.p_treated < 0.0 || group.p_treated > 1.0 || group.p_control < 0.0 ||
        group.p_control > 1.0)
      throw InputError("event probabilities must lie in [0,1] for group '" + group.name + "'");
    if (group.covariates.count("group"))
      throw InputError("covariate name 'group' is reserved by the generator");
  }

  PairData data;
  data.covariate_cols.push_back("group");
  std::set<std::string> extra;
  for (const auto& group : spec.groups)
    for (const auto& [name, value] : group.covariates) extra.insert(name);
  for (const auto& name : extra) data.covariate_cols.push_back(name);
  data.outcome_cols = spec.outcome_names;

  Rng rng(spec.seed);
  // Draw order per pair: u for both members, the assignment uniform, then
  // one outcome uniform per member per outcome column.
  for (const auto& group : spec.groups) {
    const double g = spec.gamma_true;
    for (std::size_t i = 0; i < group.n_pairs; ++i) {
      PairRecord pair;
      pair.pair_id = "P" + std::to_string(data.pairs.size() + 1);
      pair.covariates.push_back(group.name);
      for (const auto& name : extra) {
        auto it = group.covariates.find(name);
        pair.covariates.push_back(it == group.covariates.end() ? std::string(kMissingValue)
                                                               : it->second);
      }
      const int u_a = rng.bernoulli(0.5);
      const int u_b = rng.bernoulli(0.5);
      const double odds_a = std::pow(g, u_a);
      const double odds_b = std::pow(g, u_b);
      const bool a_treated = rng.uniform() < odds_a / (odds_a + odds_b);
      const int u_treated = a_treated ? u_a : u_b;
      const int u_control = a_treated ? u_b : u_a;
      for (std::size_t k = 0; k < spec.outcome_names.size(); ++k) {
        const double v_a = rng.uniform();
        const double v_b = rng.uniform();
        const double v_treated = a_treated ? v_a : v_b;
        const double v_control = a_treated ? v_b : v_a;
        pair.y_treated.push_back(
            v_treated < shifted_probability(group.p_treated, group.u_outcome_shift, u_treated)
                ? 1
                : 0);
        pair.y_control.push_back(
            v_control < shifted_probability(group.p_control, group.u_outcome_shift, u_control)
                ? 1
                : 0);
      }
      data.pairs.push_back(std::move(pair));
    }
  }
  return data;
}

SyntheticSpec synthetic_spec_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("synthetic spec JSON is malformed: ") + e.what());
  }
  try {
    SyntheticSpec spec;
    if (j.contains("outcomes")) spec.outcome_names = j["outcomes"].get<std::vector<std::string>>();
    if (j.contains("gamma_true")) spec.gamma_true = j["gamma_true"].get<double>();
    if (j.contains("seed")) spec.seed = j["seed"].get<std::uint64_t>();
    for (const auto& g : j.at("groups")) {
      SyntheticGroupSpec group;
      group.name = g.at("name").get<std::string>();
      group.n_pairs = g.at("n_pairs").get<std::size_t>();
      group.p_treated = g.at("p_treated").get<double>();
      group.p_control = g.at("p_control").get<double>();
      if (g.contains("u_outcome_shift")) group.u_outcome_shift = g["u_outcome_shift"].get<double>();
      if (g.contains("covariates"))
        group.covariates = g["covariates"].get<std::map<std::string, std::string>>();
      spec.groups.push_back(std::move(group));
    }
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("synthetic spec JSON is missing fields: ") + e.what());
  }
}

std::string truth_to_json(const SyntheticSpec& spec) {
  nlohmann::ordered_json j;
  j["gamma_true"] = spec.gamma_true;
  j["seed"] = spec.seed;
  j["outcomes"] = spec.outcome_names;
  auto groups = nlohmann::ordered_json::array();
  for (const auto& g : spec.groups) {
    nlohmann::ordered_json entry;
    entry["name"] = g.name;
    entry["n_pairs"] = g.n_pairs;
    entry["p_treated"] = g.p_treated;
    entry["p_control"] = g.p_control;
    entry["u_outcome_shift"] = g.u_outcome_shift;
    entry["true_effect"] = g.p_treated != g.p_control;
    groups.push_back(std::move(entry));
  }
  j["groups"] = std::move(groups);
  return j.dump(2) + "\n";
}

}  // namespace effectmod
