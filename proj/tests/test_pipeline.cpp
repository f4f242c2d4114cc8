#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "effectmod/cli.hpp"
#include "effectmod/errors.hpp"
#include "effectmod/pipeline.hpp"
#include "study_fixture.hpp"

using effectmod::AnalysisConfig;
using effectmod::Direction;
using effectmod::InputError;
using effectmod::PairData;
using effectmod::SyntheticSpec;

namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void spill(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  REQUIRE(out.good());
  out << content;
}

std::filesystem::path fresh_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("effectmod_test_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

const PairData& study_pairs() {
  static PairData data = fixture::make_study_pairs();
  return data;
}

}  // namespace

TEST_CASE("analysis of the reference cohort matches the frozen grids") {
  AnalysisConfig config;
  config.outcomes = {"mortality"};
  config.group_source = "group";
  config.gammas.assign(std::begin(fixture::kMortGammas), std::end(fixture::kMortGammas));
  config.lambdas = {2.0, 3.0};

  auto bundle = effectmod::analyze(study_pairs(), config);
  REQUIRE(bundle.outcomes.size() == 1);
  const auto& res = bundle.outcomes[0];
  CHECK(res.direction == Direction::benefit);
  CHECK_FALSE(res.has_tree);
  REQUIRE(res.grid.group_ids ==
          std::vector<std::string>{"1", "2", "3", "4", "5", "pooled"});

  for (int gi = 0; gi < 6; ++gi) {
    for (int g = 0; g < 5; ++g)
      CHECK(std::fabs(res.grid.p_upper[gi][g] - fixture::kMortPanel[gi][g]) <= 0.002);
    CHECK(std::fabs(res.grid.combined[gi] - fixture::kMortCombined[gi]) <= 0.002);
  }

  // closed testing column by column
  REQUIRE(res.closed.size() == 6);
  CHECK(res.closed[0].rejected_groups == std::vector<std::string>{"1", "2", "5"});
  CHECK(res.closed[1].rejected_groups == std::vector<std::string>{"1", "2"});
  CHECK(res.closed[2].rejected_groups == std::vector<std::string>{"2"});
  CHECK(res.closed[4].rejected_groups.empty());
  CHECK(res.closed[4].subset_rejected(0b00011));
  CHECK(std::fabs(res.closed[4].global_pvalue() - 0.044) <= 0.002);

  CHECK(std::fabs(res.scan.global_max_gamma - 1.17) <= 1e-9);
  REQUIRE(res.amplification.size() == 2);
  CHECK(res.amplification[0].gamma == doctest::Approx(res.scan.global_max_gamma));
  CHECK(std::fabs(res.amplification[0].delta - 1.61) <= 0.01);

  // pooled column at its own reference point
  auto gi = res.grid.gamma_index(1.15);
  CHECK(std::fabs(res.grid.p_upper[gi][5] - 0.063) <= 0.002);
}

TEST_CASE("analysis of the secondary outcome grid") {
  AnalysisConfig config;
  config.outcomes = {"icu"};
  config.group_source = "group";
  config.gammas.assign(std::begin(fixture::kIcuGammas), std::end(fixture::kIcuGammas));

  auto bundle = effectmod::analyze(study_pairs(), config);
  const auto& res = bundle.outcomes[0];
  for (int gi = 0; gi < 6; ++gi)
    for (int g = 0; g < 5; ++g)
      CHECK(std::fabs(res.grid.p_upper[gi][g] - fixture::kIcuPanel[gi][g]) <= 0.003);

  CHECK(res.closed[1].rejected_groups ==
        std::vector<std::string>{"1", "2", "3", "4", "5"});
  CHECK(res.closed[2].rejected_groups == std::vector<std::string>{"2"});
  CHECK(res.closed[3].rejected_groups == std::vector<std::string>{"2"});
  CHECK(res.closed[4].rejected_groups == std::vector<std::string>{"2"});
}

TEST_CASE("secondary outcomes need an explicit direction") {
  AnalysisConfig config;
  config.outcomes = {"mortality", "icu"};
  config.group_source = "group";
  CHECK_THROWS_AS(effectmod::analyze(study_pairs(), config), InputError);

  config.directions["icu"] = Direction::benefit;
  auto bundle = effectmod::analyze(study_pairs(), config);
  REQUIRE(bundle.outcomes.size() == 2);
  CHECK(bundle.outcomes[0].outcome == "mortality");
  CHECK(bundle.outcomes[1].outcome == "icu");
  // both outcomes share the groups formed once
  CHECK(bundle.outcomes[1].partition.group_ids == bundle.outcomes[0].partition.group_ids);
}

TEST_CASE("a single-group cohort degenerates to the pooled bound") {
  PairData data = study_pairs();
  for (auto& p : data.pairs) p.covariates[0] = "all";
  AnalysisConfig config;
  config.outcomes = {"mortality"};
  config.group_source = "group";
  config.gammas = {1.15};
  auto bundle = effectmod::analyze(data, config);
  const auto& res = bundle.outcomes[0];
  REQUIRE(res.grid.group_ids == std::vector<std::string>{"all", "pooled"});
  CHECK(std::fabs(res.grid.p_upper[0][0] - 0.063) <= 0.002);
  CHECK(res.grid.p_upper[0][0] == doctest::Approx(res.grid.p_upper[0][1]));
  CHECK(res.grid.combined[0] == doctest::Approx(res.grid.p_upper[0][0]));
}

TEST_CASE("analyze validates its inputs") {
  AnalysisConfig config;
  config.group_source = "group";
  CHECK_THROWS_AS(effectmod::analyze(study_pairs(), config), InputError);

  config.outcomes = {"nope"};
  CHECK_THROWS_AS(effectmod::analyze(study_pairs(), config), InputError);

  config.outcomes = {"mortality"};
  config.group_source = "not_a_column";
  CHECK_THROWS_AS(effectmod::analyze(study_pairs(), config), InputError);

  PairData empty;
  empty.covariate_cols = {"group"};
  empty.outcome_cols = {"mortality"};
  config.group_source = "group";
  CHECK_THROWS_AS(effectmod::analyze(empty, config), InputError);
}

TEST_CASE("tree-formed groups flow through the full analysis") {
  SyntheticSpec spec;
  spec.seed = 404;
  effectmod::SyntheticGroupSpec lo;
  lo.name = "lo";
  lo.n_pairs = 2000;
  lo.p_treated = 0.10;
  lo.p_control = 0.10;
  effectmod::SyntheticGroupSpec hi;
  hi.name = "hi";
  hi.n_pairs = 2000;
  hi.p_treated = 0.08;
  hi.p_control = 0.28;
  spec.groups = {lo, hi};
  PairData data = effectmod::simulate(spec);

  AnalysisConfig config;
  config.outcomes = {"y"};
  config.group_source = "tree";
  config.gammas = {1.0, 1.2};
  auto bundle = effectmod::analyze(data, config);
  const auto& res = bundle.outcomes[0];
  CHECK(res.has_tree);
  CHECK(res.partition.provenance == effectmod::Partition::Provenance::tree);
  CHECK(res.partition.n_groups() >= 2);
  std::string json = effectmod::report_to_json(bundle);
  CHECK(json.find("\"tree\"") != std::string::npos);
  std::string text = effectmod::report_to_text(bundle);
  CHECK(text.find("group") != std::string::npos);
}

TEST_CASE("reports are deterministic") {
  AnalysisConfig config;
  config.outcomes = {"mortality"};
  config.group_source = "group";
  config.gammas = {1.0, 1.1};
  auto a = effectmod::analyze(study_pairs(), config);
  auto b = effectmod::analyze(study_pairs(), config);
  CHECK(effectmod::report_to_json(a) == effectmod::report_to_json(b));
  CHECK(a.config_hash == b.config_hash);
  CHECK(a.input_hash == b.input_hash);

  config.gammas = {1.0, 1.2};
  auto c = effectmod::analyze(study_pairs(), config);
  CHECK(c.config_hash != a.config_hash);
  CHECK(c.input_hash == a.input_hash);
}

TEST_CASE("hash primitive matches its reference vectors") {
  CHECK(effectmod::fnv1a64("") == 14695981039346656037ull);
  CHECK(effectmod::fnv1a64("a") == 0xaf63dc4c8601ec8cull);
}

TEST_CASE("grid CSV highlights every group column") {
  AnalysisConfig config;
  config.outcomes = {"mortality"};
  config.group_source = "group";
  config.gammas = {1.0};
  auto bundle = effectmod::analyze(study_pairs(), config);
  std::string csv = effectmod::outcome_grid_csv(bundle.outcomes[0]);
  CHECK(csv.rfind("gamma,", 0) == 0);
  CHECK(csv.find("pooled") != std::string::npos);
  CHECK(csv.find("combined") != std::string::npos);
}

TEST_CASE("simulation is seed-deterministic") {
  SyntheticSpec spec;
  spec.seed = 7;
  effectmod::SyntheticGroupSpec g;
  g.name = "a";
  g.n_pairs = 500;
  g.p_treated = 0.1;
  g.p_control = 0.2;
  g.covariates["sex"] = "f";
  spec.groups = {g};
  g.name = "b";
  g.covariates["sex"] = "m";
  spec.groups.push_back(g);

  PairData one = effectmod::simulate(spec);
  PairData two = effectmod::simulate(spec);
  CHECK(effectmod::pairs_to_csv(one) == effectmod::pairs_to_csv(two));
  REQUIRE(one.pairs.size() == 1000);
  CHECK(one.covariate_cols == std::vector<std::string>{"group", "sex"});
  CHECK(one.pairs[0].covariates[0] == "a");
  CHECK(one.pairs[999].covariates[0] == "b");

  spec.seed = 8;
  PairData three = effectmod::simulate(spec);
  CHECK(effectmod::pairs_to_csv(three) != effectmod::pairs_to_csv(one));
}

TEST_CASE("simulation guards its parameters") {
  SyntheticSpec spec;
  effectmod::SyntheticGroupSpec g;
  g.name = "a";
  g.n_pairs = 10;
  spec.groups = {g};
  spec.gamma_true = 0.5;
  CHECK_THROWS_AS(effectmod::simulate(spec), InputError);

  spec.gamma_true = 1.0;
  spec.groups[0].p_treated = 1.5;
  CHECK_THROWS_AS(effectmod::simulate(spec), InputError);

  spec.groups[0].p_treated = 0.1;
  spec.groups[0].covariates["group"] = "x";
  CHECK_THROWS_AS(effectmod::simulate(spec), InputError);

  spec.groups.clear();
  CHECK_THROWS_AS(effectmod::simulate(spec), InputError);
}

TEST_CASE("equal probabilities leave outcomes independent of the label") {
  SyntheticSpec spec;
  spec.seed = 12;
  effectmod::SyntheticGroupSpec g;
  g.name = "a";
  g.n_pairs = 4000;
  g.p_treated = 0.3;
  g.p_control = 0.3;
  g.u_outcome_shift = 0.0;
  spec.groups = {g};

  // changing only the assignment bias relabels members within pairs but
  // cannot change any member's outcome, so per-pair outcome multisets match
  spec.gamma_true = 1.0;
  PairData fair = effectmod::simulate(spec);
  spec.gamma_true = 1.6;
  PairData biased = effectmod::simulate(spec);
  REQUIRE(fair.pairs.size() == biased.pairs.size());
  for (std::size_t i = 0; i < fair.pairs.size(); ++i) {
    int lo_f = std::min(fair.pairs[i].y_treated[0], fair.pairs[i].y_control[0]);
    int hi_f = std::max(fair.pairs[i].y_treated[0], fair.pairs[i].y_control[0]);
    int lo_b = std::min(biased.pairs[i].y_treated[0], biased.pairs[i].y_control[0]);
    int hi_b = std::max(biased.pairs[i].y_treated[0], biased.pairs[i].y_control[0]);
    REQUIRE(lo_f == lo_b);
    REQUIRE(hi_f == hi_b);
  }

  // and the discordant pairs still split evenly however biased the labels
  long d = 0, t = 0;
  for (int rep = 0; rep < 50; ++rep) {
    spec.seed = 100 + rep;
    PairData data = effectmod::simulate(spec);
    for (const auto& p : data.pairs) {
      if (p.y_treated[0] != p.y_control[0]) {
        ++d;
        if (p.y_control[0] == 1) ++t;
      }
    }
  }
  double frac = (double)t / (double)d;
  CHECK(std::fabs(frac - 0.5) <= 3.0 * std::sqrt(0.25 / (double)d));
}

TEST_CASE("spec JSON parsing") {
  std::string text = R"({
    "gamma_true": 1.25,
    "seed": 99,
    "outcomes": ["death"],
    "groups": [
      {"name": "a", "n_pairs": 50, "p_treated": 0.05, "p_control": 0.11,
       "covariates": {"region": "north"}, "u_outcome_shift": 0.4}
    ]
  })";
  SyntheticSpec spec = effectmod::synthetic_spec_from_json(text);
  CHECK(spec.gamma_true == doctest::Approx(1.25));
  CHECK(spec.seed == 99);
  CHECK(spec.outcome_names == std::vector<std::string>{"death"});
  REQUIRE(spec.groups.size() == 1);
  CHECK(spec.groups[0].covariates.at("region") == "north");
  CHECK(spec.groups[0].u_outcome_shift == doctest::Approx(0.4));

  std::string truth = effectmod::truth_to_json(spec);
  CHECK(truth.find("true_effect") != std::string::npos);

  CHECK_THROWS_AS(effectmod::synthetic_spec_from_json("{}"), InputError);
  CHECK_THROWS_AS(effectmod::synthetic_spec_from_json("not json"), InputError);
}

TEST_CASE("null simulations keep the familywise error in check") {
  SyntheticSpec spec;
  effectmod::SyntheticGroupSpec g;
  g.n_pairs = 200;
  g.p_treated = 0.3;
  g.p_control = 0.3;
  for (const char* name : {"a", "b", "c", "d", "e"}) {
    g.name = name;
    spec.groups.push_back(g);
  }

  effectmod::TruncatedProductParams params;
  effectmod::GammaValue g1(1.0);
  int any_rejected = 0;
  const int kReps = 400;
  for (int rep = 0; rep < kReps; ++rep) {
    spec.seed = 1000 + rep;
    PairData data = effectmod::simulate(spec);
    auto partition = effectmod::partition_from_column(data, "group");
    auto summaries = effectmod::summarize(data, partition, "y");
    std::vector<double> pvalues;
    std::vector<std::string> ids;
    for (const auto& s : summaries) {
      if (s.group_id == "pooled") continue;
      pvalues.push_back(effectmod::mcnemar_upper_pvalue(s.n_discordant,
                                                        s.n_control_only, g1));
      ids.push_back(s.group_id);
    }
    auto report = effectmod::closed_test(pvalues, ids, params);
    if (!report.rejected_groups.empty()) ++any_rejected;
  }
  CHECK((double)any_rejected / kReps <= 0.08);
}

TEST_CASE("the affected group is rejected most often") {
  SyntheticSpec spec;
  effectmod::SyntheticGroupSpec g;
  g.n_pairs = 300;
  g.p_treated = 0.2;
  g.p_control = 0.2;
  for (const char* name : {"a", "b", "c", "d"}) {
    g.name = name;
    spec.groups.push_back(g);
  }
  spec.groups[2].p_treated = 0.06;  // group c carries the only true effect

  effectmod::TruncatedProductParams params;
  effectmod::GammaValue g1(1.0);
  std::vector<int> rejections(4, 0);
  for (int rep = 0; rep < 200; ++rep) {
    spec.seed = 5000 + rep;
    PairData data = effectmod::simulate(spec);
    auto partition = effectmod::partition_from_column(data, "group");
    auto summaries = effectmod::summarize(data, partition, "y");
    std::vector<double> pvalues;
    std::vector<std::string> ids;
    for (const auto& s : summaries) {
      if (s.group_id == "pooled") continue;
      pvalues.push_back(effectmod::mcnemar_upper_pvalue(s.n_discordant,
                                                        s.n_control_only, g1));
      ids.push_back(s.group_id);
    }
    auto report = effectmod::closed_test(pvalues, ids, params);
    for (const auto& id : report.rejected_groups)
      rejections[(std::size_t)(id[0] - 'a')]++;
  }
  CHECK(rejections[2] > rejections[0]);
  CHECK(rejections[2] > rejections[1]);
  CHECK(rejections[2] > rejections[3]);
  CHECK(rejections[2] > 100);  // detected in most runs
}

TEST_CASE("cli re-pairs the toy cohort byte for byte") {
  auto dir = fresh_dir("pair");
  spill(dir / "patients.csv",
        "patient_id,treated,site,elderly,mortality\n"
        "t1,1,A,1,0\n"
        "t2,1,A,0,1\n"
        "t3,1,B,0,0\n"
        "c1,0,A,1,1\n"
        "c2,0,A,1,0\n"
        "c3,0,B,0,0\n");

  int code = effectmod::cli_main({"pair", "--patients", (dir / "patients.csv").string(),
                                  "--stratum", "site", "--fine", "elderly",
                                  "--outcome", "mortality", "--out", dir.string()});
  REQUIRE(code == 0);
  CHECK(slurp(dir / "pairs.csv") ==
        "pair_id,site,elderly,mortality_treated,mortality_control\n"
        "P1,A,1,0,1\n"
        "P2,B,0,0,0\n"
        "P3,A,NA,1,0\n");
  CHECK(slurp(dir / "pairing.json").find("\"fine_pairs\": 2") != std::string::npos);
}

TEST_CASE("cli analyze writes the report set") {
  auto dir = fresh_dir("analyze");
  effectmod::write_pairs_csv((dir / "pairs.csv").string(), study_pairs());

  int code = effectmod::cli_main(
      {"analyze", "--pairs", (dir / "pairs.csv").string(), "--outcome", "mortality",
       "--groups", "group", "--gamma", "1.0,1.1", "--lambda", "2.0", "--format",
       "json", "--out", dir.string()});
  REQUIRE(code == 0);
  std::string report = slurp(dir / "report.json");
  CHECK(report.find("\"version\"") != std::string::npos);
  CHECK(report.find("\"rejected_groups\"") != std::string::npos);
  std::string grid = slurp(dir / "grid_mortality.csv");
  CHECK(grid.rfind("gamma,", 0) == 0);
  CHECK_FALSE(slurp(dir / "report.txt").empty());

  // identical invocations give identical bytes
  auto dir2 = fresh_dir("analyze2");
  int code2 = effectmod::cli_main(
      {"analyze", "--pairs", (dir / "pairs.csv").string(), "--outcome", "mortality",
       "--groups", "group", "--gamma", "1.0,1.1", "--lambda", "2.0", "--format",
       "json", "--out", dir2.string()});
  REQUIRE(code2 == 0);
  CHECK(slurp(dir / "report.json") == slurp(dir2 / "report.json"));
}

TEST_CASE("cli tree fits and serializes") {
  auto dir = fresh_dir("tree");
  SyntheticSpec spec;
  spec.seed = 31;
  effectmod::SyntheticGroupSpec lo;
  lo.name = "lo";
  lo.n_pairs = 1500;
  lo.p_treated = 0.1;
  lo.p_control = 0.1;
  effectmod::SyntheticGroupSpec hi = lo;
  hi.name = "hi";
  hi.p_treated = 0.05;
  hi.p_control = 0.30;
  spec.groups = {lo, hi};
  effectmod::write_pairs_csv((dir / "pairs.csv").string(), effectmod::simulate(spec));

  int code = effectmod::cli_main({"tree", "--pairs", (dir / "pairs.csv").string(),
                                  "--outcome", "y", "--out", dir.string()});
  REQUIRE(code == 0);
  std::string json = slurp(dir / "tree.json");
  CHECK(json.find("\"nodes\"") != std::string::npos);
  CHECK(slurp(dir / "tree.txt").find("all pairs") != std::string::npos);
  CHECK_NOTHROW(effectmod::tree_from_json(json));
}

TEST_CASE("cli simulate honors the seed override") {
  auto dir = fresh_dir("simulate");
  spill(dir / "spec.json", R"({
    "seed": 3,
    "groups": [{"name": "a", "n_pairs": 100, "p_treated": 0.1, "p_control": 0.2}]
  })");

  auto out1 = fresh_dir("simulate_a");
  auto out2 = fresh_dir("simulate_b");
  auto out3 = fresh_dir("simulate_c");
  REQUIRE(effectmod::cli_main({"simulate", "--spec", (dir / "spec.json").string(),
                               "--out", out1.string()}) == 0);
  REQUIRE(effectmod::cli_main({"simulate", "--spec", (dir / "spec.json").string(),
                               "--out", out2.string()}) == 0);
  REQUIRE(effectmod::cli_main({"simulate", "--spec", (dir / "spec.json").string(),
                               "--seed", "4", "--out", out3.string()}) == 0);
  CHECK(slurp(out1 / "pairs.csv") == slurp(out2 / "pairs.csv"));
  CHECK(slurp(out1 / "pairs.csv") != slurp(out3 / "pairs.csv"));
  CHECK(slurp(out1 / "truth.json").find("true_effect") != std::string::npos);
}

TEST_CASE("cli amplify emits the reference deltas") {
  auto dir = fresh_dir("amplify");
  int code = effectmod::cli_main({"amplify", "--gamma", "1.17", "--lambda", "2.0",
                                  "--format", "csv", "--out", dir.string()});
  REQUIRE(code == 0);
  std::string csv = slurp(dir / "amplify.csv");
  CHECK(csv.rfind("gamma,lambda,delta", 0) == 0);
  CHECK(csv.find("1.17,2,1.61445783132530") != std::string::npos);
}

TEST_CASE("cli exit codes distinguish input errors") {
  CHECK(effectmod::cli_main({"analyze", "--pairs", "/nonexistent.csv", "--outcome",
                             "y"}) == 1);
  CHECK(effectmod::cli_main({"analyze"}) == 1);
  CHECK(effectmod::cli_main({"bogus"}) == 1);
  CHECK(effectmod::cli_main({"amplify", "--gamma", "2.0", "--lambda", "1.5"}) == 1);
  CHECK(effectmod::cli_main({"amplify", "--gamma", "abc", "--lambda", "2"}) == 1);
}

TEST_CASE("config file values yield to explicit flags") {
  auto dir = fresh_dir("config");
  effectmod::write_pairs_csv((dir / "pairs.csv").string(), study_pairs());
  spill(dir / "run.cfg",
        "[analyze]\n"
        "pairs=" + (dir / "pairs.csv").string() + "\n" +
        "outcome=mortality\n"
        "groups=group\n"
        "gamma=1.0,1.1\n"
        "tau=0.2\n"
        "format=json\n"
        "out=" + dir.string() + "\n");

  REQUIRE(effectmod::cli_main({"--config", (dir / "run.cfg").string(), "analyze"}) == 0);
  std::string from_file = slurp(dir / "report.json");
  CHECK(from_file.find("\"tau\": 0.2") != std::string::npos);

  REQUIRE(effectmod::cli_main({"--config", (dir / "run.cfg").string(), "analyze",
                               "--tau", "0.3"}) == 0);
  std::string overridden = slurp(dir / "report.json");
  CHECK(overridden.find("\"tau\": 0.3") != std::string::npos);
}
