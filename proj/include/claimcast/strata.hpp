#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "claimcast/claims.hpp"

namespace claimcast {

// Multi-channel entropy of one claim event with +1 smoothing per code type and
// base-10 logarithms. Intermediate values are kept for reporting.
struct EntropyBreakdown {
  std::array<int, 3> counts{};  // dx, px, rx
  int length = 0;
  std::array<double, 3> probability{};
  std::array<double, 3> log_probability{};
  std::array<double, 3> product{};
  double sum = 0.0;      // sum of products, <= 0
  double entropy = 0.0;  // length * |sum|, >= 0
};

EntropyBreakdown entropy_breakdown(int dx_count, int px_count, int rx_count);
double event_entropy(int dx_count, int px_count, int rx_count);

// Mean event entropy over the profile's events at its granularity.
// std::nullopt when the profile has no events.
std::optional<double> profile_entropy(const PatientProfile& profile);

struct EntropyBuckets {
  std::vector<double> normalized;  // min-max scaled, input order
  std::vector<int> quintile;       // 1..5, input order
  bool degenerate = false;         // zero variance: all 0 and quintile 1
};

// Quintiles come from the rank order of (entropy, patient_id).
EntropyBuckets normalize_and_bucket(std::span<const double> entropies, std::span<const std::string> patient_ids);

enum class Severity {
  relatively_healthy = 1,
  simple_chronic = 2,
  minor_complex_chronic = 3,
  major_complex_chronic = 4,
  frail_elderly = 5,
  disabled = 6,
};

inline constexpr std::array<Severity, 6> kAllSeverities{
    Severity::relatively_healthy,    Severity::simple_chronic, Severity::minor_complex_chronic,
    Severity::major_complex_chronic, Severity::frail_elderly,  Severity::disabled};

std::string_view to_string(Severity s);
Severity parse_severity(std::string_view text);
inline bool is_high_need(Severity s) { return static_cast<int>(s) >= 4; }

enum class ConditionCategory { ccc, ncc, frailty, disabled_flag };

std::string_view to_string(ConditionCategory c);
ConditionCategory parse_condition_category(std::string_view text);

struct Condition {
  std::string name;
  ConditionCategory category = ConditionCategory::ncc;
};

// Code -> condition association. A code belongs to exactly one condition.
class ConditionMap {
 public:
  void add(const std::string& condition_name, ConditionCategory category, const std::vector<std::string>& codes);
  const Condition* find(const std::string& code) const;
  std::size_t code_count() const { return by_code_.size(); }
  std::vector<Condition> conditions() const;

  // File columns: condition_name, category, codes (';'-separated).
  static ConditionMap load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<Condition> conditions_;
  std::vector<std::vector<std::string>> codes_;
  std::map<std::string, std::size_t> by_code_;
};

struct SeverityResult {
  Severity severity = Severity::relatively_healthy;
  int ccc_count = 0;
  int ncc_count = 0;
  int frailty_count = 0;
  bool esrd_or_disabled = false;
  std::size_t unmapped_codes = 0;
  bool boundary_case = false;  // >= 6 NCC with < 3 CCC, not covered by the category table
};

// Counts distinct conditions from diagnosis and procedure codes, then applies
// the precedence Disabled > Frail elderly > Major > Minor > Simple > Healthy.
SeverityResult assign_severity(const PatientProfile& profile, const ConditionMap& map);

struct StrataAssignment {
  std::string patient_id;
  double profile_entropy = 0.0;
  double normalized_entropy = 0.0;
  int entropy_quintile = 1;
  Severity severity = Severity::relatively_healthy;
  int ccc_count = 0;
  int ncc_count = 0;
  int frailty_count = 0;
  bool esrd_or_disabled = false;
};

struct StrataSummary {
  std::vector<StrataAssignment> assignments;
  std::vector<std::string> excluded;  // profiles without events
  std::size_t unmapped_codes = 0;
  std::size_t boundary_cases = 0;
  bool degenerate_entropy = false;
};

// Entropy is computed at `granularity`; severity always from the raw codes.
StrataSummary stratify(std::span<const PatientProfile> profiles, const ConditionMap& map, Granularity granularity);

void write_strata(const std::filesystem::path& path, std::span<const StrataAssignment> strata);
std::vector<StrataAssignment> read_strata(const std::filesystem::path& path);

}  // namespace claimcast
