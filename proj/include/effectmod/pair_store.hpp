#ifndef EFFECTMOD_PAIR_STORE_HPP
#define EFFECTMOD_PAIR_STORE_HPP

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "effectmod/csv.hpp"

namespace effectmod {

// Value recorded for a pair covariate on which the two members disagree
// (possible only for fine keys of coarse-matched pairs).
inline constexpr const char* kMissingValue = "NA";

struct PatientSchema {
  std::vector<std::string> stratum_cols;     // categorical, free-form values
  std::vector<std::string> refinement_cols;  // binary 0/1
  std::vector<std::string> outcome_cols;     // binary, 1 = event
};

struct PatientRecord {
  std::string patient_id;
  int treated = 0;  // 1 treated, 0 control
  std::vector<std::string> stratum;  // aligned with schema.stratum_cols
  std::vector<int> refinement;       // aligned with schema.refinement_cols
  std::vector<int> outcomes;         // aligned with schema.outcome_cols
};

struct PatientData {
  PatientSchema schema;
  std::vector<PatientRecord> patients;

  long n_treated() const;
  long n_control() const;
};

PatientData load_patients(const std::string& path, const PatientSchema& schema);
PatientData parse_patients(const csv::Table& table, const PatientSchema& schema,
                           const std::string& origin);

// One matched pair. Covariates hold only values shared by both members;
// kMissingValue marks a covariate the pair is not exact on.
struct PairRecord {
  std::string pair_id;
  std::vector<std::string> covariates;  // aligned with PairData::covariate_cols
  std::vector<int> y_treated;           // aligned with PairData::outcome_cols
  std::vector<int> y_control;

  int signed_diff(std::size_t outcome) const {
    return y_treated[outcome] - y_control[outcome];
  }
  int unsigned_diff(std::size_t outcome) const {
    int d = signed_diff(outcome);
    return d < 0 ? -d : d;
  }
};

struct PairData {
  std::vector<std::string> covariate_cols;
  std::vector<std::string> outcome_cols;
  std::vector<PairRecord> pairs;

  std::size_t covariate_index(std::string_view name) const;  // throws InputError
  std::size_t outcome_index(std::string_view name) const;    // throws InputError
};

struct PairingReport {
  long n_patients = 0;
  long n_treated = 0;
  long n_control = 0;
  long fine_pairs = 0;    // phase 1: exact on stratum + fine keys
  long coarse_pairs = 0;  // phase 2: exact on stratum + coarse keys
  long n_unpaired = 0;
};

struct RepairResult {
  PairData pairs;
  std::vector<PatientRecord> unpaired;
  PairingReport report;
};

// Two-phase exact re-pairing. Phase 1 pairs min(#treated, #control) within
// each cell of stratum x fine_keys, by ascending input order; phase 2 pairs
// the leftovers within stratum x coarse_keys cells the same way. fine_keys
// must name refinement columns; coarse_keys must be a subset of
// fine_keys + stratum columns.
RepairResult repair_exact(const PatientData& data,
                          const std::vector<std::string>& fine_keys,
                          const std::vector<std::string>& coarse_keys);

struct Partition {
  enum class Provenance { tree, user };

  std::vector<std::string> group_ids;  // ordered, nonempty groups
  std::vector<int> assignment;         // pair index -> index into group_ids
  Provenance provenance = Provenance::user;

  std::size_t n_groups() const { return group_ids.size(); }
};

// Groups from a covariate column; group ids ordered by first appearance.
Partition partition_from_column(const PairData& data, const std::string& column);
Partition single_group_partition(const PairData& data);

void validate_partition(const Partition& partition, std::size_t n_pairs);

struct DiscordantSummary {
  std::string group_id;
  long n_pairs = 0;        // I_g
  long n_discordant = 0;   // D
  long n_control_only = 0; // T: discordant with the event on the control side
  long n_treated_only = 0; // D - T
  long n_events_treated = 0;
  long n_events_control = 0;

  double event_rate_treated() const;
  double event_rate_control() const;
};

// One summary per group plus a pooled summary (group_id "pooled") appended.
std::vector<DiscordantSummary> summarize(const PairData& data,
                                         const Partition& partition,
                                         const std::string& outcome);

// Composite outcome axis for pair cross-tabulation. A member belongs to the
// first category whose conditions (outcome == value) all hold; a member
// matching no category is an input error.
struct CrossTabCategory {
  std::string name;
  std::vector<std::pair<std::string, int>> conditions;
};

struct CrossTabAxis {
  std::vector<CrossTabCategory> categories;
};

struct PairedCrossTab {
  std::vector<std::string> categories;
  std::vector<std::vector<long>> counts;  // counts[control category][treated category]
  std::vector<long> row_margins;          // per control category
  std::vector<long> col_margins;          // per treated category
  long grand_total = 0;
};

PairedCrossTab crosstab(const PairData& data, const CrossTabAxis& axis);

// Pair CSV: pair_id,<covariate cols>,<outcome>_treated,<outcome>_control.
// Outcome columns are recognized by the _treated/_control suffix pairing.
PairData load_pairs(const std::string& path);
PairData parse_pairs(const csv::Table& table, const std::string& origin);
std::string pairs_to_csv(const PairData& data);
void write_pairs_csv(const std::string& path, const PairData& data);

std::string pairing_report_to_json(const PairingReport& report);

}  // namespace effectmod

#endif
