#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace claimcast {

using Day = std::chrono::sys_days;

class ClaimsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ClaimKind { medical, pharmacy };

inline constexpr std::size_t kMaxDxCodes = 10;

struct ClaimRecord {
  std::string patient_id;
  std::string claim_id;
  std::string provider_id;
  ClaimKind kind = ClaimKind::medical;
  Day service_date{};
  std::vector<std::string> dx_codes;
  std::optional<std::string> px_code;
  std::optional<std::string> rx_code;
  double amount_paid = 0.0;
  double amount_billed = 0.0;
  double amount_allowed = 0.0;

  bool operator==(const ClaimRecord&) const = default;
};

struct RejectedRow {
  std::string file;
  std::size_t line = 0;
  std::string reason;
};

struct IngestResult {
  std::vector<ClaimRecord> records;  // medical rows first, then pharmacy rows
  std::vector<RejectedRow> rejected;
  std::size_t data_rows = 0;
};

// Parses "YYYY-MM-DD". Returns std::nullopt for anything else or invalid days.
std::optional<Day> parse_date(std::string_view text);
std::string format_date(Day day);
int year_of(Day day);

// Reads the medical and pharmacy claim files. Malformed rows are rejected and
// reported; more than `max_reject_fraction` of rejected rows overall, a missing
// file, or a bad header throws ClaimsError.
IngestResult ingest_claims(const std::filesystem::path& medical_path,
                           const std::filesystem::path& pharmacy_path,
                           double max_reject_fraction = 0.01);

// One "line N: reason" entry per rejected row.
std::string format_rejects(const IngestResult& result);

void write_medical_claims(const std::filesystem::path& path, std::span<const ClaimRecord> records);
void write_pharmacy_claims(const std::filesystem::path& path, std::span<const ClaimRecord> records);

const std::vector<std::string>& medical_header();
const std::vector<std::string>& pharmacy_header();

enum class Granularity { day, week, month };

std::string_view to_string(Granularity g);
Granularity parse_granularity(std::string_view text);

// Bucket index of a day: days since epoch, ISO-8601 week number since epoch
// (Monday start), or year * 12 + month.
std::int64_t bucket_of(Day day, Granularity g);

// All claims of one patient within one bucket (a single day at day level).
// Code lists are sorted multisets; provider ids are sorted and unique.
struct ClaimEvent {
  Day day{};  // first service day in the bucket
  std::int64_t bucket = 0;
  std::vector<std::string> dx_codes;
  std::vector<std::string> px_codes;
  std::vector<std::string> rx_codes;
  double medical_cost = 0.0;
  double pharmacy_cost = 0.0;
  std::vector<std::string> provider_ids;
  int medical_claims = 0;
  int pharmacy_claims = 0;
  int service_days = 0;  // distinct service days merged into this event

  double total_cost() const { return medical_cost + pharmacy_cost; }
  std::size_t code_count() const { return dx_codes.size() + px_codes.size() + rx_codes.size(); }
  bool operator==(const ClaimEvent&) const = default;
};

struct PatientProfile {
  std::string patient_id;
  int observation_year = 0;
  Granularity granularity = Granularity::day;
  std::vector<ClaimEvent> events;  // strictly increasing bucket
  double target_cost = 0.0;
  std::size_t observation_claims = 0;

  bool operator==(const PatientProfile&) const = default;
};

enum class Channel { dx, px, rx, cost, all };

std::string_view to_string(Channel c);
Channel parse_channel(std::string_view text);

// One step of a channel sequence. `gap` is the distance to the previous step of
// the same channel in granularity units; 0 for the first step.
struct ChannelStep {
  std::size_t event_index = 0;
  std::int64_t gap = 0;
};

// Diagnosis and procedure channels follow medical events, the medication
// channel follows pharmacy events, and the cost/all channels follow every event.
std::vector<ChannelStep> channel_steps(const PatientProfile& profile, Channel channel);

struct ProfileSet {
  std::vector<PatientProfile> profiles;  // sorted by patient_id
  std::size_t excluded_patients = 0;     // fewer than two observation-year claims
};

// Groups observation-year records into day-level events and sums result-year
// paid amounts (medical and pharmacy) into the target.
ProfileSet build_profiles(std::span<const ClaimRecord> records, int observation_year, int result_year);

PatientProfile aggregate_events(const PatientProfile& profile, Granularity granularity);

struct GranularityStats {
  double providers = 0.0;     // distinct providers per active bucket
  double unique_codes = 0.0;  // distinct clinical codes per active bucket
  double claims = 0.0;        // claims per bucket of the observation year
  double claim_events = 0.0;  // day-level claim events per bucket of the observation year
};

struct JourneyStats {
  std::string patient_id;
  std::array<GranularityStats, 3> by_granularity{};  // indexed by Granularity
  std::size_t distinct_providers = 0;
  std::size_t distinct_codes = 0;
  std::size_t claim_count = 0;
  std::size_t claim_event_count = 0;
};

struct CohortJourney {
  std::vector<JourneyStats> patients;
  std::array<GranularityStats, 3> averages{};
};

// Expects day-level profiles.
CohortJourney journey_stats(std::span<const PatientProfile> profiles);

}  // namespace claimcast
