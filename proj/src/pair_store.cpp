#include "effectmod/pair_store.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

#include "effectmod/errors.hpp"

namespace effectmod {

namespace {

// Cell keys join covariate values with a separator that cannot occur in a
// CSV field.
constexpr char kKeySep = '\x1f';

int parse_binary(const std::string& value, const std::string& column,
                 const std::string& origin, long line_no) {
  if (value == "0") return 0;
  if (value == "1") return 1;
  throw InputError(origin + ":" + std::to_string(line_no) + ": column '" + column +
                   "' must be 0 or 1, got '" + value + "'");
}

std::size_t require_column(const csv::Table& table, const std::string& name,
                           const std::string& origin) {
  for (std::size_t i = 0; i < table.header.size(); ++i)
    if (table.header[i] == name) return i;
  throw InputError(origin + ": missing column '" + name + "'");
}

}  // namespace

long PatientData::n_treated() const {
  long n = 0;
  for (const auto& p : patients) n += p.treated;
  return n;
}

long PatientData::n_control() const {
  return static_cast<long>(patients.size()) - n_treated();
}

PatientData parse_patients(const csv::Table& table, const PatientSchema& schema,
                           const std::string& origin) {
  const std::size_t id_col = require_column(table, "patient_id", origin);
  const std::size_t treated_col = require_column(table, "treated", origin);
  std::vector<std::size_t> stratum_cols, refinement_cols, outcome_cols;
  for (const auto& name : schema.stratum_cols)
    stratum_cols.push_back(require_column(table, name, origin));
  for (const auto& name : schema.refinement_cols)
    refinement_cols.push_back(require_column(table, name, origin));
  for (const auto& name : schema.outcome_cols)
    outcome_cols.push_back(require_column(table, name, origin));

  PatientData data;
  data.schema = schema;
  data.patients.reserve(table.rows.size());
  std::unordered_set<std::string> seen_ids;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const long line_no = static_cast<long>(r) + 2;
    PatientRecord rec;
    rec.patient_id = row[id_col];
    if (rec.patient_id.empty())
      throw InputError(origin + ":" + std::to_string(line_no) + ": empty patient_id");
    if (!seen_ids.insert(rec.patient_id).second)
      throw InputError(origin + ":" + std::to_string(line_no) +
                       ": duplicate patient_id '" + rec.patient_id + "'");
    rec.treated = parse_binary(row[treated_col], "treated", origin, line_no);
    for (std::size_t i = 0; i < stratum_cols.size(); ++i) {
      const std::string& v = row[stratum_cols[i]];
      if (v.empty())
        throw InputError(origin + ":" + std::to_string(line_no) + ": empty value in '" +
                         schema.stratum_cols[i] + "'");
      rec.stratum.push_back(v);
    }
    for (std::size_t i = 0; i < refinement_cols.size(); ++i)
      rec.refinement.push_back(
          parse_binary(row[refinement_cols[i]], schema.refinement_cols[i], origin, line_no));
    for (std::size_t i = 0; i < outcome_cols.size(); ++i)
      rec.outcomes.push_back(
          parse_binary(row[outcome_cols[i]], schema.outcome_cols[i], origin, line_no));
    data.patients.push_back(std::move(rec));
  }
  return data;
}

PatientData load_patients(const std::string& path, const PatientSchema& schema) {
  return parse_patients(csv::read_file(path), schema, path);
}

std::size_t PairData::covariate_index(std::string_view name) const {
  for (std::size_t i = 0; i < covariate_cols.size(); ++i)
    if (covariate_cols[i] == name) return i;
  throw InputError("unknown pair covariate '" + std::string(name) + "'");
}

std::size_t PairData::outcome_index(std::string_view name) const {
  for (std::size_t i = 0; i < outcome_cols.size(); ++i)
    if (outcome_cols[i] == name) return i;
  throw InputError("unknown outcome '" + std::string(name) + "'");
}

namespace {

// Indices of the named keys: refinement columns for the fine phase, and
// refinement or stratum columns for the coarse phase (stratum values enter
// every cell key anyway, so a stratum coarse key adds nothing new).
struct KeyPlan {
  std::vector<std::size_t> fine_refinement;
  std::vector<std::size_t> coarse_refinement;
};

KeyPlan plan_keys(const PatientSchema& schema, const std::vector<std::string>& fine_keys,
                  const std::vector<std::string>& coarse_keys) {
  auto refinement_index = [&](const std::string& name) -> long {
    for (std::size_t i = 0; i < schema.refinement_cols.size(); ++i)
      if (schema.refinement_cols[i] == name) return static_cast<long>(i);
    return -1;
  };
  auto is_stratum = [&](const std::string& name) {
    return std::find(schema.stratum_cols.begin(), schema.stratum_cols.end(), name) !=
           schema.stratum_cols.end();
  };

  KeyPlan plan;
  for (const auto& name : fine_keys) {
    long idx = refinement_index(name);
    if (idx < 0)
      throw InputError("fine key '" + name + "' is not a declared refinement column");
    plan.fine_refinement.push_back(static_cast<std::size_t>(idx));
  }
  for (const auto& name : coarse_keys) {
    if (is_stratum(name)) continue;
    long idx = refinement_index(name);
    if (idx < 0 || std::find(fine_keys.begin(), fine_keys.end(), name) == fine_keys.end())
      throw InputError("coarse key '" + name + "' is not a fine key or stratum column");
    plan.coarse_refinement.push_back(static_cast<std::size_t>(idx));
  }
  return plan;
}

std::string cell_key(const PatientRecord& p, const std::vector<std::size_t>& refinement_keys) {
  std::string key;
  for (const auto& v : p.stratum) {
    key += v;
    key += kKeySep;
  }
  for (std::size_t idx : refinement_keys) {
    key += p.refinement[idx] ? '1' : '0';
    key += kKeySep;
  }
  return key;
}

// Pairs min(#treated, #control) within each cell, consuming members in
// ascending input order. Emits (treated index, control index) pairs ordered
// by treated index; leftovers stay in `remaining` in input order.
std::vector<std::pair<std::size_t, std::size_t>> pair_within_cells(
    const PatientData& data, std::vector<std::size_t>& remaining,
    const std::vector<std::size_t>& refinement_keys) {
  std::map<std::string, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> cells;
  for (std::size_t idx : remaining) {
    const auto& p = data.patients[idx];
    auto& cell = cells[cell_key(p, refinement_keys)];
    (p.treated ? cell.first : cell.second).push_back(idx);
  }

  std::vector<std::pair<std::size_t, std::size_t>> matched;
  std::vector<std::size_t> leftover;
  for (auto& [key, cell] : cells) {
    const std::size_t n = std::min(cell.first.size(), cell.second.size());
    for (std::size_t i = 0; i < n; ++i) matched.emplace_back(cell.first[i], cell.second[i]);
    for (std::size_t i = n; i < cell.first.size(); ++i) leftover.push_back(cell.first[i]);
    for (std::size_t i = n; i < cell.second.size(); ++i) leftover.push_back(cell.second[i]);
  }
  std::sort(matched.begin(), matched.end());
  std::sort(leftover.begin(), leftover.end());
  remaining = std::move(leftover);
  return matched;
}

}  // namespace

RepairResult repair_exact(const PatientData& data, const std::vector<std::string>& fine_keys,
                          const std::vector<std::string>& coarse_keys) {
  const KeyPlan plan = plan_keys(data.schema, fine_keys, coarse_keys);

  std::vector<std::size_t> remaining(data.patients.size());
  for (std::size_t i = 0; i < remaining.size(); ++i) remaining[i] = i;

  auto fine = pair_within_cells(data, remaining, plan.fine_refinement);
  auto coarse = pair_within_cells(data, remaining, plan.coarse_refinement);

  RepairResult result;
  result.pairs.covariate_cols = data.schema.stratum_cols;
  result.pairs.covariate_cols.insert(result.pairs.covariate_cols.end(),
                                     data.schema.refinement_cols.begin(),
                                     data.schema.refinement_cols.end());
  result.pairs.outcome_cols = data.schema.outcome_cols;

  auto emit = [&](std::size_t treated_idx, std::size_t control_idx) {
    const auto& t = data.patients[treated_idx];
    const auto& c = data.patients[control_idx];
    PairRecord pair;
    pair.pair_id = "P" + std::to_string(result.pairs.pairs.size() + 1);
    pair.covariates = t.stratum;
    for (std::size_t i = 0; i < t.refinement.size(); ++i)
      pair.covariates.push_back(t.refinement[i] == c.refinement[i]
                                    ? std::string(t.refinement[i] ? "1" : "0")
                                    : std::string(kMissingValue));
    pair.y_treated = t.outcomes;
    pair.y_control = c.outcomes;
    result.pairs.pairs.push_back(std::move(pair));
  };
  for (const auto& [t, c] : fine) emit(t, c);
  for (const auto& [t, c] : coarse) emit(t, c);

  for (std::size_t idx : remaining) result.unpaired.push_back(data.patients[idx]);

  result.report.n_patients = static_cast<long>(data.patients.size());
  result.report.n_treated = data.n_treated();
  result.report.n_control = data.n_control();
  result.report.fine_pairs = static_cast<long>(fine.size());
  result.report.coarse_pairs = static_cast<long>(coarse.size());
  result.report.n_unpaired = static_cast<long>(remaining.size());
  return result;
}

Partition partition_from_column(const PairData& data, const std::string& column) {
  const std::size_t col = data.covariate_index(column);
  Partition partition;
  partition.provenance = Partition::Provenance::user;
  std::unordered_map<std::string, int> index_of;
  for (const auto& pair : data.pairs) {
    const std::string& label = pair.covariates[col];
    auto [it, added] = index_of.emplace(label, static_cast<int>(partition.group_ids.size()));
    if (added) partition.group_ids.push_back(label);
    partition.assignment.push_back(it->second);
  }
  return partition;
}

Partition single_group_partition(const PairData& data) {
  Partition partition;
  partition.provenance = Partition::Provenance::user;
  partition.group_ids = {"all"};
  partition.assignment.assign(data.pairs.size(), 0);
  return partition;
}

void validate_partition(const Partition& partition, std::size_t n_pairs) {
  if (partition.assignment.size() != n_pairs)
    throw InputError("partition covers " + std::to_string(partition.assignment.size()) +
                     " pairs, expected " + std::to_string(n_pairs));
  std::vector<long> sizes(partition.group_ids.size(), 0);
  for (int g : partition.assignment) {
    if (g < 0 || static_cast<std::size_t>(g) >= sizes.size())
      throw InputError("partition assigns a pair to a group out of range");
    ++sizes[static_cast<std::size_t>(g)];
  }
  for (std::size_t g = 0; g < sizes.size(); ++g)
    if (sizes[g] == 0)
      throw InputError("group '" + partition.group_ids[g] + "' is empty");
}

double DiscordantSummary::event_rate_treated() const {
  return n_pairs == 0 ? 0.0 : static_cast<double>(n_events_treated) / n_pairs;
}

double DiscordantSummary::event_rate_control() const {
  return n_pairs == 0 ? 0.0 : static_cast<double>(n_events_control) / n_pairs;
}

std::vector<DiscordantSummary> summarize(const PairData& data, const Partition& partition,
                                         const std::string& outcome) {
  validate_partition(partition, data.pairs.size());
  for (const auto& id : partition.group_ids)
    if (id == "pooled") throw InputError("group label 'pooled' is reserved");
  const std::size_t k = data.outcome_index(outcome);

  std::vector<DiscordantSummary> out(partition.group_ids.size() + 1);
  for (std::size_t g = 0; g < partition.group_ids.size(); ++g)
    out[g].group_id = partition.group_ids[g];
  out.back().group_id = "pooled";

  for (std::size_t i = 0; i < data.pairs.size(); ++i) {
    const auto& pair = data.pairs[i];
    auto tally = [&](DiscordantSummary& s) {
      ++s.n_pairs;
      s.n_events_treated += pair.y_treated[k];
      s.n_events_control += pair.y_control[k];
      if (pair.y_treated[k] != pair.y_control[k]) {
        ++s.n_discordant;
        if (pair.y_control[k]) ++s.n_control_only;
        else ++s.n_treated_only;
      }
    };
    tally(out[static_cast<std::size_t>(partition.assignment[i])]);
    tally(out.back());
  }
  return out;
}

PairedCrossTab crosstab(const PairData& data, const CrossTabAxis& axis) {
  if (axis.categories.empty()) throw InputError("crosstab axis has no categories");
  // Conditions resolved to outcome indices once.
  std::vector<std::vector<std::pair<std::size_t, int>>> conditions(axis.categories.size());
  for (std::size_t c = 0; c < axis.categories.size(); ++c)
    for (const auto& [name, value] : axis.categories[c].conditions)
      conditions[c].emplace_back(data.outcome_index(name), value);

  const std::size_t n = axis.categories.size();
  PairedCrossTab tab;
  for (const auto& cat : axis.categories) tab.categories.push_back(cat.name);
  tab.counts.assign(n, std::vector<long>(n, 0));
  tab.row_margins.assign(n, 0);
  tab.col_margins.assign(n, 0);

  auto category_of = [&](const std::vector<int>& outcomes, const std::string& pair_id) {
    for (std::size_t c = 0; c < n; ++c) {
      bool all = true;
      for (const auto& [k, v] : conditions[c])
        if (outcomes[k] != v) { all = false; break; }
      if (all) return c;
    }
    throw InputError("pair '" + pair_id + "': member matches no crosstab category");
  };

  for (const auto& pair : data.pairs) {
    const std::size_t tc = category_of(pair.y_treated, pair.pair_id);
    const std::size_t cc = category_of(pair.y_control, pair.pair_id);
    ++tab.counts[cc][tc];
    ++tab.row_margins[cc];
    ++tab.col_margins[tc];
    ++tab.grand_total;
  }
  return tab;
}

namespace {

constexpr const char* kTreatedSuffix = "_treated";
constexpr const char* kControlSuffix = "_control";

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

PairData parse_pairs(const csv::Table& table, const std::string& origin) {
  if (table.header.empty() || table.header[0] != "pair_id")
    throw InputError(origin + ": first column must be pair_id");

  PairData data;
  std::vector<std::size_t> covariate_cols;
  std::vector<std::pair<std::size_t, std::size_t>> outcome_cols;  // treated, control
  std::set<std::string> consumed;
  for (std::size_t i = 1; i < table.header.size(); ++i) {
    const std::string& name = table.header[i];
    if (consumed.count(name)) continue;
    if (ends_with(name, kTreatedSuffix)) {
      const std::string base = name.substr(0, name.size() - std::string(kTreatedSuffix).size());
      const std::string partner = base + kControlSuffix;
      std::size_t partner_col = 0;
      for (std::size_t j = 1; j < table.header.size(); ++j)
        if (table.header[j] == partner) { partner_col = j; break; }
      if (partner_col == 0)
        throw InputError(origin + ": outcome column '" + name + "' has no matching '" +
                         partner + "'");
      data.outcome_cols.push_back(base);
      outcome_cols.emplace_back(i, partner_col);
      consumed.insert(partner);
      continue;
    }
    if (ends_with(name, kControlSuffix))
      throw InputError(origin + ": outcome column '" + name + "' has no matching '" +
                       name.substr(0, name.size() - std::string(kControlSuffix).size()) +
                       kTreatedSuffix + "'");
    data.covariate_cols.push_back(name);
    covariate_cols.push_back(i);
  }

  std::unordered_set<std::string> seen_ids;
  data.pairs.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const long line_no = static_cast<long>(r) + 2;
    PairRecord pair;
    pair.pair_id = row[0];
    if (pair.pair_id.empty())
      throw InputError(origin + ":" + std::to_string(line_no) + ": empty pair_id");
    if (!seen_ids.insert(pair.pair_id).second)
      throw InputError(origin + ":" + std::to_string(line_no) + ": duplicate pair_id '" +
                       pair.pair_id + "'");
    for (std::size_t c : covariate_cols) pair.covariates.push_back(row[c]);
    for (auto [t, c] : outcome_cols) {
      pair.y_treated.push_back(parse_binary(row[t], table.header[t], origin, line_no));
      pair.y_control.push_back(parse_binary(row[c], table.header[c], origin, line_no));
    }
    data.pairs.push_back(std::move(pair));
  }
  return data;
}

PairData load_pairs(const std::string& path) {
  return parse_pairs(csv::read_file(path), path);
}

std::string pairs_to_csv(const PairData& data) {
  csv::Table table;
  table.header.push_back("pair_id");
  for (const auto& c : data.covariate_cols) table.header.push_back(c);
  for (const auto& o : data.outcome_cols) {
    table.header.push_back(o + kTreatedSuffix);
    table.header.push_back(o + kControlSuffix);
  }
  for (const auto& pair : data.pairs) {
    std::vector<std::string> row;
    row.push_back(pair.pair_id);
    for (const auto& v : pair.covariates) row.push_back(v);
    for (std::size_t k = 0; k < data.outcome_cols.size(); ++k) {
      row.push_back(pair.y_treated[k] ? "1" : "0");
      row.push_back(pair.y_control[k] ? "1" : "0");
    }
    table.rows.push_back(std::move(row));
  }
  return csv::to_string(table);
}

void write_pairs_csv(const std::string& path, const PairData& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open " + path + " for writing");
  out << pairs_to_csv(data);
  if (!out) throw InputError("write failed: " + path);
}

std::string pairing_report_to_json(const PairingReport& report) {
  nlohmann::ordered_json j;
  j["n_patients"] = report.n_patients;
  j["n_treated"] = report.n_treated;
  j["n_control"] = report.n_control;
  j["fine_pairs"] = report.fine_pairs;
  j["coarse_pairs"] = report.coarse_pairs;
  j["n_unpaired"] = report.n_unpaired;
  return j.dump(2) + "\n";
}

}  // namespace effectmod
