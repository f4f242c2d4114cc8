#include "effectmod/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "effectmod/errors.hpp"
#include "effectmod/pipeline.hpp"
#include "effectmod/version.hpp"
#include "text_util.hpp"

namespace effectmod {

namespace {

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  out << content;
  if (!out) throw InputError("write failed: " + path.string());
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::filesystem::path prepare_out_dir(const std::string& out) {
  std::filesystem::path dir(out);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw InputError("cannot create output directory " + out + ": " + ec.message());
  return dir;
}

TailMethod method_from_flag(const std::string& name) {
  if (name == "exact") return TailMethod::exact;
  if (name == "normal") return TailMethod::normal_approx;
  throw InputError("unknown method '" + name + "' (want exact or normal)");
}

Direction direction_from_flag(const std::string& name) {
  if (name == "benefit") return Direction::benefit;
  if (name == "harm") return Direction::harm;
  throw InputError("unknown direction '" + name + "' (want benefit or harm)");
}

struct PairArgs {
  std::string patients;
  std::vector<std::string> stratum, fine, coarse, outcomes;
  std::string out;
  std::string format = "text";
};

int run_pair(const PairArgs& args) {
  PatientSchema schema;
  schema.stratum_cols = args.stratum;
  schema.refinement_cols = args.fine;
  schema.outcome_cols = args.outcomes;
  const PatientData patients = load_patients(args.patients, schema);
  const RepairResult result = repair_exact(patients, args.fine, args.coarse);

  if (!args.out.empty()) {
    const auto dir = prepare_out_dir(args.out);
    write_text_file(dir / "pairs.csv", pairs_to_csv(result.pairs));
    write_text_file(dir / "pairing.json", pairing_report_to_json(result.report));
  }
  if (args.format == "json") {
    std::cout << pairing_report_to_json(result.report);
  } else {
    const auto& r = result.report;
    std::cout << "paired " << r.n_patients << " patients (" << r.n_treated << " treated, "
              << r.n_control << " control) into " << r.fine_pairs << " fine + "
              << r.coarse_pairs << " coarse pairs; " << r.n_unpaired << " unpaired\n";
  }
  return 0;
}

struct TreeArgs {
  std::string pairs;
  std::vector<std::string> outcomes;
  std::vector<std::string> covariates;
  TreeConfig config;
  std::string out;
  std::string format = "text";
};

int run_tree(const TreeArgs& args) {
  if (args.outcomes.size() != 1)
    throw InputError("tree fitting takes exactly one outcome");
  const PairData data = load_pairs(args.pairs);
  std::vector<std::string> covariates = args.covariates;
  if (covariates.empty()) covariates = data.covariate_cols;
  const Tree tree = build_tree(data, covariates, args.outcomes[0], args.config);
  const AssignResult assigned = assign_groups(tree, data);
  if (assigned.unseen_routed_right > 0)
    std::cerr << "warning: " << assigned.unseen_routed_right
              << " pairs routed right on unseen covariate values\n";
  const auto summaries = summarize(data, assigned.partition, args.outcomes[0]);
  const std::vector<DiscordantSummary> leaves(summaries.begin(), summaries.end() - 1);
  const std::string rendering = render_tree(tree, describe_tree(tree, leaves));

  if (!args.out.empty()) {
    const auto dir = prepare_out_dir(args.out);
    write_text_file(dir / "tree.json", tree_to_json(tree));
    write_text_file(dir / "tree.txt", rendering);
  }
  std::cout << (args.format == "json" ? tree_to_json(tree) : rendering);
  return 0;
}

struct AnalyzeArgs {
  std::string pairs;
  std::vector<std::string> outcomes;
  std::string groups = "tree";
  std::vector<std::string> covariates;
  std::vector<std::string> directions;
  std::vector<double> gammas;
  std::vector<double> lambdas;
  TreeConfig tree;
  double tau = 0.1;
  double alpha = 0.05;
  std::string method = "exact";
  double scan_resolution = 0.01;
  double scan_limit = 3.0;
  bool secondary_subtrees = false;
  std::string out;
  std::string format = "text";
};

int run_analyze(const AnalyzeArgs& args) {
  const PairData data = load_pairs(args.pairs);
  AnalysisConfig config;
  config.outcomes = args.outcomes;
  config.group_source = args.groups;
  config.tree_covariates = args.covariates;
  config.tree = args.tree;
  if (args.directions.size() > args.outcomes.size())
    throw InputError("more directions than outcomes");
  for (std::size_t i = 0; i < args.directions.size(); ++i)
    config.directions[args.outcomes[i]] = direction_from_flag(args.directions[i]);
  if (!args.gammas.empty()) config.gammas = args.gammas;
  config.trunc.tau = args.tau;
  config.trunc.alpha = args.alpha;
  config.lambdas = args.lambdas;
  config.method = method_from_flag(args.method);
  config.scan_resolution = args.scan_resolution;
  config.scan_limit = args.scan_limit;
  config.secondary_subtrees = args.secondary_subtrees;

  const ReportBundle bundle = analyze(data, config);

  if (!args.out.empty()) {
    const auto dir = prepare_out_dir(args.out);
    write_text_file(dir / "report.json", report_to_json(bundle));
    write_text_file(dir / "report.txt", report_to_text(bundle));
    for (const auto& outcome : bundle.outcomes)
      write_text_file(dir / ("grid_" + outcome.outcome + ".csv"), outcome_grid_csv(outcome));
  }
  if (args.format == "json") {
    std::cout << report_to_json(bundle);
  } else if (args.format == "csv") {
    for (const auto& outcome : bundle.outcomes) std::cout << outcome_grid_csv(outcome);
  } else {
    std::cout << report_to_text(bundle);
  }
  return 0;
}

struct SimulateArgs {
  std::string spec_path;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out;
};

int run_simulate(const SimulateArgs& args) {
  SyntheticSpec spec = synthetic_spec_from_json(read_text_file(args.spec_path));
  if (args.seed_given) spec.seed = args.seed;
  const PairData data = simulate(spec);
  const auto dir = prepare_out_dir(args.out);
  write_text_file(dir / "pairs.csv", pairs_to_csv(data));
  write_text_file(dir / "truth.json", truth_to_json(spec));
  std::cout << "wrote " << data.pairs.size() << " pairs to " << (dir / "pairs.csv").string()
            << "\n";
  return 0;
}

struct AmplifyArgs {
  double gamma = 1.0;
  std::vector<double> lambdas;
  std::string out;
  std::string format = "text";
};

int run_amplify(const AmplifyArgs& args) {
  csv::Table table;
  table.header = {"gamma", "lambda", "delta"};
  for (double lambda : args.lambdas)
    table.rows.push_back({format_double(args.gamma), format_double(lambda),
                          format_double(amplify(args.gamma, lambda))});

  if (!args.out.empty()) {
    const auto dir = prepare_out_dir(args.out);
    write_text_file(dir / "amplify.csv", csv::to_string(table));
  }
  if (args.format == "json") {
    auto rows = nlohmann::ordered_json::array();
    for (const auto& row : table.rows)
      rows.push_back({{"gamma", std::stod(row[0])},
                      {"lambda", std::stod(row[1])},
                      {"delta", std::stod(row[2])}});
    std::cout << rows.dump(2) << "\n";
  } else if (args.format == "csv") {
    std::cout << csv::to_string(table);
  } else {
    for (const auto& row : table.rows)
      std::cout << "gamma " << format_fixed(std::stod(row[0]), 2) << "  lambda "
                << format_fixed(std::stod(row[1]), 2) << "  delta "
                << format_fixed(std::stod(row[2]), 2) << "\n";
  }
  return 0;
}

void emit_error(const char* type, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = type;
  j["message"] = message;
  std::cerr << j.dump() << "\n";
}

}  // namespace

int cli_main(const std::vector<std::string>& args) {
  CLI::App app{"subgroup discovery and sensitivity analysis for matched binary outcomes",
               "effectmod"};
  app.set_version_flag("--version", kVersion);
  app.set_config("--config", "", "key=value config file; command-line flags take precedence");
  app.require_subcommand(1);

  PairArgs pair_args;
  auto* pair_cmd = app.add_subcommand("pair", "re-pair patient records exactly within strata");
  pair_cmd->add_option("--patients", pair_args.patients, "patient CSV")->required();
  pair_cmd->add_option("--stratum", pair_args.stratum, "stratum columns")
      ->delimiter(',')
      ->required();
  pair_cmd->add_option("--fine", pair_args.fine, "binary refinement columns for phase 1")
      ->delimiter(',')
      ->required();
  pair_cmd->add_option("--coarse", pair_args.coarse,
                       "subset of stratum/fine columns kept for phase 2")
      ->delimiter(',');
  pair_cmd->add_option("--outcome", pair_args.outcomes, "binary outcome columns")
      ->delimiter(',')
      ->required();
  pair_cmd->add_option("--out", pair_args.out, "output directory for pairs.csv, pairing.json");
  pair_cmd->add_option("--format", pair_args.format, "stdout format")
      ->check(CLI::IsMember({"text", "json"}));

  TreeArgs tree_args;
  auto* tree_cmd = app.add_subcommand("tree", "fit the discordance tree and print it");
  tree_cmd->add_option("--pairs", tree_args.pairs, "pair CSV")->required();
  tree_cmd->add_option("--outcome", tree_args.outcomes, "outcome the tree is fit on")
      ->delimiter(',')
      ->required();
  tree_cmd->add_option("--covariates", tree_args.covariates,
                       "covariate columns (default: all)")
      ->delimiter(',');
  tree_cmd->add_option("--min-split", tree_args.config.min_split, "pairs needed to try a split");
  tree_cmd->add_option("--min-leaf", tree_args.config.min_leaf, "smallest admissible leaf");
  tree_cmd->add_option("--cp", tree_args.config.cp, "required SSE drop over root SSE");
  tree_cmd->add_option("--max-depth", tree_args.config.max_depth, "depth limit, root is 0");
  tree_cmd->add_option("--out", tree_args.out, "output directory for tree.json, tree.txt");
  tree_cmd->add_option("--format", tree_args.format, "stdout format")
      ->check(CLI::IsMember({"text", "json"}));

  AnalyzeArgs analyze_args;
  auto* analyze_cmd =
      app.add_subcommand("analyze", "grid of sensitivity bounds with closed testing");
  analyze_cmd->add_option("--pairs", analyze_args.pairs, "pair CSV")->required();
  analyze_cmd
      ->add_option("--outcome", analyze_args.outcomes, "outcomes, primary first")
      ->delimiter(',')
      ->required();
  analyze_cmd->add_option("--groups", analyze_args.groups,
                          "'tree' or the pair column holding group labels");
  analyze_cmd
      ->add_option("--covariates", analyze_args.covariates,
                   "tree covariate columns (default: all)")
      ->delimiter(',');
  analyze_cmd
      ->add_option("--direction", analyze_args.directions,
                   "benefit|harm per outcome, aligned with --outcome")
      ->delimiter(',');
  analyze_cmd->add_option("--gamma", analyze_args.gammas, "gamma grid")->delimiter(',');
  analyze_cmd->add_option("--tau", analyze_args.tau, "truncation point");
  analyze_cmd->add_option("--alpha", analyze_args.alpha, "familywise level");
  analyze_cmd->add_option("--lambda", analyze_args.lambdas, "amplification lambdas")
      ->delimiter(',');
  analyze_cmd->add_option("--method", analyze_args.method, "exact or normal tails")
      ->check(CLI::IsMember({"exact", "normal"}));
  analyze_cmd->add_option("--scan-resolution", analyze_args.scan_resolution,
                          "gamma step for the rejection scan");
  analyze_cmd->add_option("--scan-limit", analyze_args.scan_limit, "gamma ceiling for the scan");
  analyze_cmd->add_flag("--secondary-subtrees", analyze_args.secondary_subtrees,
                        "subdivide groups per secondary outcome");
  analyze_cmd->add_option("--min-split", analyze_args.tree.min_split,
                          "pairs needed to try a split");
  analyze_cmd->add_option("--min-leaf", analyze_args.tree.min_leaf, "smallest admissible leaf");
  analyze_cmd->add_option("--cp", analyze_args.tree.cp, "required SSE drop over root SSE");
  analyze_cmd->add_option("--max-depth", analyze_args.tree.max_depth, "depth limit, root is 0");
  analyze_cmd->add_option("--out", analyze_args.out,
                          "output directory for report.json, report.txt, grid CSVs");
  analyze_cmd->add_option("--format", analyze_args.format, "stdout format")
      ->check(CLI::IsMember({"text", "json", "csv"}));

  SimulateArgs simulate_args;
  auto* simulate_cmd = app.add_subcommand("simulate", "generate synthetic matched pairs");
  simulate_cmd->add_option("--spec", simulate_args.spec_path, "synthetic spec JSON")->required();
  auto* seed_opt = simulate_cmd->add_option("--seed", simulate_args.seed,
                                            "override the spec's seed");
  simulate_cmd->add_option("--out", simulate_args.out, "output directory")->required();

  AmplifyArgs amplify_args;
  auto* amplify_cmd = app.add_subcommand("amplify", "amplify gamma into (lambda, delta) pairs");
  amplify_cmd->add_option("--gamma", amplify_args.gamma, "sensitivity parameter")->required();
  amplify_cmd->add_option("--lambda", amplify_args.lambdas, "treatment odds multipliers")
      ->delimiter(',')
      ->required();
  amplify_cmd->add_option("--out", amplify_args.out, "output directory for amplify.csv");
  amplify_cmd->add_option("--format", amplify_args.format, "stdout format")
      ->check(CLI::IsMember({"text", "json", "csv"}));

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
    simulate_args.seed_given = seed_opt->count() > 0;
    if (pair_cmd->parsed()) return run_pair(pair_args);
    if (tree_cmd->parsed()) return run_tree(tree_args);
    if (analyze_cmd->parsed()) return run_analyze(analyze_args);
    if (simulate_cmd->parsed()) return run_simulate(simulate_args);
    if (amplify_cmd->parsed()) return run_amplify(amplify_args);
    throw InputError("no subcommand given");
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    emit_error("input", e.what());
    return 1;
  } catch (const InputError& e) {
    emit_error("input", e.what());
    return 1;
  } catch (const NumericError& e) {
    emit_error("numeric", e.what());
    return 2;
  } catch (const std::exception& e) {
    emit_error("internal", e.what());
    return 2;
  }
}

int cli_main(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return cli_main(args);
}

}  // namespace effectmod
