#include "claimcast/strata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "claimcast/csv.hpp"

namespace claimcast {

EntropyBreakdown entropy_breakdown(int dx_count, int px_count, int rx_count) {
  if (dx_count < 0 || px_count < 0 || rx_count < 0) throw std::invalid_argument("code counts must be nonnegative");
  EntropyBreakdown b;
  b.counts = {dx_count, px_count, rx_count};
  b.length = dx_count + px_count + rx_count;
  const double denom = static_cast<double>(b.length + 3);
  for (std::size_t i = 0; i < 3; ++i) {
    b.probability[i] = static_cast<double>(b.counts[i] + 1) / denom;
    b.log_probability[i] = std::log10(b.probability[i]);
    b.product[i] = b.probability[i] * b.log_probability[i];
  }
  b.sum = b.product[0] + b.product[1] + b.product[2];
  b.entropy = static_cast<double>(b.length) * std::abs(b.sum);
  return b;
}

double event_entropy(int dx_count, int px_count, int rx_count) {
  return entropy_breakdown(dx_count, px_count, rx_count).entropy;
}

std::optional<double> profile_entropy(const PatientProfile& profile) {
  if (profile.events.empty()) return std::nullopt;
  double total = 0.0;
  for (const auto& e : profile.events) {
    total += event_entropy(static_cast<int>(e.dx_codes.size()), static_cast<int>(e.px_codes.size()),
                           static_cast<int>(e.rx_codes.size()));
  }
  return total / static_cast<double>(profile.events.size());
}

EntropyBuckets normalize_and_bucket(std::span<const double> entropies, std::span<const std::string> patient_ids) {
  if (entropies.empty()) throw std::invalid_argument("cannot bucket an empty cohort");
  if (entropies.size() != patient_ids.size()) throw std::invalid_argument("entropy and id lists differ in length");
  const std::size_t n = entropies.size();
  EntropyBuckets out;
  out.normalized.assign(n, 0.0);
  out.quintile.assign(n, 1);
  const auto [lo, hi] = std::minmax_element(entropies.begin(), entropies.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) {
    out.degenerate = true;
    return out;
  }
  for (std::size_t i = 0; i < n; ++i) out.normalized[i] = (entropies[i] - *lo) / range;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (entropies[a] != entropies[b]) return entropies[a] < entropies[b];
    return patient_ids[a] < patient_ids[b];
  });
  for (std::size_t rank = 0; rank < n; ++rank) {
    out.quintile[order[rank]] = static_cast<int>(rank * 5 / n) + 1;
  }
  return out;
}

std::string_view to_string(Severity s) {
  switch (s) {
    case Severity::relatively_healthy: return "relatively_healthy";
    case Severity::simple_chronic: return "simple_chronic";
    case Severity::minor_complex_chronic: return "minor_complex_chronic";
    case Severity::major_complex_chronic: return "major_complex_chronic";
    case Severity::frail_elderly: return "frail_elderly";
    case Severity::disabled: return "disabled";
  }
  return "relatively_healthy";
}

Severity parse_severity(std::string_view text) {
  for (Severity s : kAllSeverities) {
    if (to_string(s) == text) return s;
  }
  throw std::invalid_argument("unknown severity '" + std::string(text) + "'");
}

std::string_view to_string(ConditionCategory c) {
  switch (c) {
    case ConditionCategory::ccc: return "CCC";
    case ConditionCategory::ncc: return "NCC";
    case ConditionCategory::frailty: return "frailty";
    case ConditionCategory::disabled_flag: return "disabled_flag";
  }
  return "NCC";
}

ConditionCategory parse_condition_category(std::string_view text) {
  for (auto c : {ConditionCategory::ccc, ConditionCategory::ncc, ConditionCategory::frailty,
                 ConditionCategory::disabled_flag}) {
    if (to_string(c) == text) return c;
  }
  throw std::invalid_argument("unknown condition category '" + std::string(text) + "'");
}

void ConditionMap::add(const std::string& condition_name, ConditionCategory category,
                       const std::vector<std::string>& codes) {
  const std::size_t index = conditions_.size();
  for (const auto& code : codes) {
    if (by_code_.count(code)) {
      throw std::invalid_argument("code '" + code + "' listed under both '" + conditions_[by_code_[code]].name +
                                  "' and '" + condition_name + "'");
    }
    by_code_[code] = index;
  }
  conditions_.push_back({condition_name, category});
  codes_.push_back(codes);
}

const Condition* ConditionMap::find(const std::string& code) const {
  const auto it = by_code_.find(code);
  return it == by_code_.end() ? nullptr : &conditions_[it->second];
}

std::vector<Condition> ConditionMap::conditions() const { return conditions_; }

ConditionMap ConditionMap::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open condition map: " + path.string());
  std::string line;
  if (!csv::read_line(in, line)) throw std::runtime_error("condition map is empty: " + path.string());
  const auto header = csv::split_line(line);
  if (!header || *header != std::vector<std::string>{"condition_name", "category", "codes"}) {
    throw std::runtime_error("condition map header must be: condition_name,category,codes");
  }
  ConditionMap map;
  std::size_t line_number = 1;
  while (csv::read_line(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    const auto f = csv::split_line(line);
    if (!f || f->size() != 3) {
      throw std::runtime_error(path.string() + " line " + std::to_string(line_number) + ": expected 3 fields");
    }
    std::vector<std::string> codes;
    std::stringstream ss((*f)[2]);
    std::string code;
    while (std::getline(ss, code, ';')) {
      if (!code.empty()) codes.push_back(code);
    }
    map.add((*f)[0], parse_condition_category((*f)[1]), codes);
  }
  return map;
}

void ConditionMap::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "condition_name,category,codes\n";
  for (std::size_t i = 0; i < conditions_.size(); ++i) {
    std::string joined;
    for (std::size_t j = 0; j < codes_[i].size(); ++j) {
      if (j) joined.push_back(';');
      joined += codes_[i][j];
    }
    out << csv::join({conditions_[i].name, std::string(to_string(conditions_[i].category)), joined}) << '\n';
  }
}

SeverityResult assign_severity(const PatientProfile& profile, const ConditionMap& map) {
  std::set<std::string> ccc, ncc, frailty;
  SeverityResult r;
  auto visit = [&](const std::string& code) {
    const Condition* c = map.find(code);
    if (!c) {
      ++r.unmapped_codes;
      return;
    }
    switch (c->category) {
      case ConditionCategory::ccc: ccc.insert(c->name); break;
      case ConditionCategory::ncc: ncc.insert(c->name); break;
      case ConditionCategory::frailty: frailty.insert(c->name); break;
      case ConditionCategory::disabled_flag: r.esrd_or_disabled = true; break;
    }
  };
  for (const auto& e : profile.events) {
    for (const auto& code : e.dx_codes) visit(code);
    for (const auto& code : e.px_codes) visit(code);
  }
  r.ccc_count = static_cast<int>(ccc.size());
  r.ncc_count = static_cast<int>(ncc.size());
  r.frailty_count = static_cast<int>(frailty.size());
  if (r.esrd_or_disabled) {
    r.severity = Severity::disabled;
  } else if (r.frailty_count >= 2) {
    r.severity = Severity::frail_elderly;
  } else if (r.ccc_count >= 3) {
    r.severity = Severity::major_complex_chronic;
  } else if (r.ncc_count >= 6) {
    r.severity = Severity::major_complex_chronic;
    r.boundary_case = true;
  } else if (r.ccc_count >= 1) {
    r.severity = Severity::minor_complex_chronic;
  } else if (r.ncc_count >= 1) {
    r.severity = Severity::simple_chronic;
  } else {
    r.severity = Severity::relatively_healthy;
  }
  return r;
}

StrataSummary stratify(std::span<const PatientProfile> profiles, const ConditionMap& map, Granularity granularity) {
  StrataSummary summary;
  std::vector<double> entropies;
  std::vector<std::string> ids;
  for (const auto& p : profiles) {
    const auto entropy = profile_entropy(p.granularity == granularity ? p : aggregate_events(p, granularity));
    if (!entropy) {
      summary.excluded.push_back(p.patient_id);
      continue;
    }
    const auto sev = assign_severity(p, map);
    summary.unmapped_codes += sev.unmapped_codes;
    summary.boundary_cases += sev.boundary_case ? 1 : 0;
    StrataAssignment a;
    a.patient_id = p.patient_id;
    a.profile_entropy = *entropy;
    a.severity = sev.severity;
    a.ccc_count = sev.ccc_count;
    a.ncc_count = sev.ncc_count;
    a.frailty_count = sev.frailty_count;
    a.esrd_or_disabled = sev.esrd_or_disabled;
    entropies.push_back(*entropy);
    ids.push_back(p.patient_id);
    summary.assignments.push_back(std::move(a));
  }
  if (summary.assignments.empty()) return summary;
  const auto buckets = normalize_and_bucket(entropies, ids);
  summary.degenerate_entropy = buckets.degenerate;
  for (std::size_t i = 0; i < summary.assignments.size(); ++i) {
    summary.assignments[i].normalized_entropy = buckets.normalized[i];
    summary.assignments[i].entropy_quintile = buckets.quintile[i];
  }
  return summary;
}

namespace {
const std::vector<std::string> kStrataHeader{"patient_id", "profile_entropy", "normalized", "quintile", "severity",
                                             "ccc_count",  "ncc_count",       "frailty_count", "esrd_or_disabled"};

std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace

void write_strata(const std::filesystem::path& path, std::span<const StrataAssignment> strata) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << csv::join(kStrataHeader) << '\n';
  for (const auto& s : strata) {
    out << csv::join({s.patient_id, exact(s.profile_entropy), exact(s.normalized_entropy),
                      std::to_string(s.entropy_quintile), std::string(to_string(s.severity)),
                      std::to_string(s.ccc_count), std::to_string(s.ncc_count), std::to_string(s.frailty_count),
                      s.esrd_or_disabled ? "1" : "0"})
        << '\n';
  }
}

std::vector<StrataAssignment> read_strata(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open strata file: " + path.string());
  std::string line;
  if (!csv::read_line(in, line) || csv::split_line(line) != kStrataHeader) {
    throw std::runtime_error("strata file header mismatch: " + path.string());
  }
  std::vector<StrataAssignment> out;
  while (csv::read_line(in, line)) {
    if (line.empty()) continue;
    const auto f = csv::split_line(line);
    if (!f || f->size() != kStrataHeader.size()) throw std::runtime_error("malformed strata row in " + path.string());
    StrataAssignment s;
    s.patient_id = (*f)[0];
    s.profile_entropy = std::stod((*f)[1]);
    s.normalized_entropy = std::stod((*f)[2]);
    s.entropy_quintile = std::stoi((*f)[3]);
    s.severity = parse_severity((*f)[4]);
    s.ccc_count = std::stoi((*f)[5]);
    s.ncc_count = std::stoi((*f)[6]);
    s.frailty_count = std::stoi((*f)[7]);
    s.esrd_or_disabled = (*f)[8] == "1";
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace claimcast
