#include "claimcast/claims.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "claimcast/csv.hpp"

namespace claimcast {

namespace {

using namespace std::chrono;

std::optional<double> parse_amount(std::string_view text) {
  if (text.empty()) return std::nullopt;
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) return std::nullopt;
  if (!std::isfinite(value) || value < 0.0) return std::nullopt;
  return value;
}

std::string format_amount(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

std::optional<std::string> optional_field(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return s;
}

struct FileReport {
  std::size_t data_rows = 0;
};

template <typename RowParser>
FileReport read_claim_file(const std::filesystem::path& path, const std::vector<std::string>& header,
                           IngestResult& result, RowParser&& parse_row) {
  std::ifstream in(path);
  if (!in) throw ClaimsError("cannot open claims file: " + path.string());
  std::string line;
  if (!csv::read_line(in, line)) throw ClaimsError("claims file has no header row: " + path.string());
  const auto columns = csv::split_line(line);
  if (!columns || *columns != header) {
    throw ClaimsError("header of " + path.string() + " does not match the documented schema (expected: " +
                      csv::join(header) + ")");
  }
  FileReport report;
  std::size_t line_number = 1;
  while (csv::read_line(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    ++report.data_rows;
    auto fields = csv::split_line(line);
    std::string reason;
    if (!fields) {
      reason = "unterminated quote";
    } else if (fields->size() != header.size()) {
      reason = "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields->size());
    } else {
      reason = parse_row(*fields);
    }
    if (!reason.empty()) result.rejected.push_back({path.string(), line_number, std::move(reason)});
  }
  return report;
}

// Shared tail columns: amount_paid, amount_billed, amount_allowed.
std::string parse_amounts(const std::vector<std::string>& f, std::size_t first, ClaimRecord& rec) {
  const char* names[] = {"amount_paid", "amount_billed", "amount_allowed"};
  double* targets[] = {&rec.amount_paid, &rec.amount_billed, &rec.amount_allowed};
  for (std::size_t i = 0; i < 3; ++i) {
    const auto v = parse_amount(f[first + i]);
    if (!v) return std::string("unparseable ") + names[i] + " '" + f[first + i] + "'";
    *targets[i] = *v;
  }
  return {};
}

std::string parse_common(const std::vector<std::string>& f, ClaimRecord& rec) {
  if (f[0].empty()) return "empty patient_id";
  rec.patient_id = f[0];
  rec.claim_id = f[1];
  rec.provider_id = f[2];
  const auto day = parse_date(f[3]);
  if (!day) return "unparseable service_date '" + f[3] + "'";
  rec.service_date = *day;
  return {};
}

template <typename T>
void sorted_insert(std::vector<T>& v, const T& value) {
  v.insert(std::upper_bound(v.begin(), v.end(), value), value);
}

void merge_sorted(std::vector<std::string>& into, const std::vector<std::string>& from) {
  std::vector<std::string> out;
  out.reserve(into.size() + from.size());
  std::merge(into.begin(), into.end(), from.begin(), from.end(), std::back_inserter(out));
  into = std::move(out);
}

void merge_unique(std::vector<std::string>& into, const std::vector<std::string>& from) {
  std::vector<std::string> out;
  std::set_union(into.begin(), into.end(), from.begin(), from.end(), std::back_inserter(out));
  into = std::move(out);
}

}  // namespace

std::optional<Day> parse_date(std::string_view text) {
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
  int y = 0;
  unsigned m = 0, d = 0;
  auto num = [&](std::size_t pos, std::size_t len, auto& out) {
    const auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + pos + len, out);
    return ec == std::errc{} && ptr == text.data() + pos + len;
  };
  if (!num(0, 4, y) || !num(5, 2, m) || !num(8, 2, d)) return std::nullopt;
  const year_month_day ymd{year{y}, month{m}, day{d}};
  if (!ymd.ok()) return std::nullopt;
  return sys_days{ymd};
}

std::string format_date(Day day) {
  const year_month_day ymd{day};
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

int year_of(Day day) { return static_cast<int>(year_month_day{day}.year()); }

const std::vector<std::string>& medical_header() {
  static const std::vector<std::string> header = [] {
    std::vector<std::string> h{"patient_id", "claim_id", "provider_id", "service_date"};
    for (std::size_t i = 1; i <= kMaxDxCodes; ++i) h.push_back("dx" + std::to_string(i));
    h.insert(h.end(), {"px_code", "amount_paid", "amount_billed", "amount_allowed"});
    return h;
  }();
  return header;
}

const std::vector<std::string>& pharmacy_header() {
  static const std::vector<std::string> header{"patient_id",  "claim_id",      "provider_id",
                                               "service_date", "rx_code",       "amount_paid",
                                               "amount_billed", "amount_allowed"};
  return header;
}

IngestResult ingest_claims(const std::filesystem::path& medical_path, const std::filesystem::path& pharmacy_path,
                           double max_reject_fraction) {
  for (const auto& p : {medical_path, pharmacy_path}) {
    if (!std::filesystem::exists(p)) throw ClaimsError("claims file not found: " + p.string());
  }
  IngestResult result;
  const auto med = read_claim_file(medical_path, medical_header(), result, [&](const std::vector<std::string>& f) {
    ClaimRecord rec;
    rec.kind = ClaimKind::medical;
    if (auto err = parse_common(f, rec); !err.empty()) return err;
    for (std::size_t i = 0; i < kMaxDxCodes; ++i) {
      if (!f[4 + i].empty()) rec.dx_codes.push_back(f[4 + i]);
    }
    rec.px_code = optional_field(f[4 + kMaxDxCodes]);
    if (auto err = parse_amounts(f, 5 + kMaxDxCodes, rec); !err.empty()) return err;
    result.records.push_back(std::move(rec));
    return std::string{};
  });
  const auto rx = read_claim_file(pharmacy_path, pharmacy_header(), result, [&](const std::vector<std::string>& f) {
    ClaimRecord rec;
    rec.kind = ClaimKind::pharmacy;
    if (auto err = parse_common(f, rec); !err.empty()) return err;
    rec.rx_code = optional_field(f[4]);
    if (auto err = parse_amounts(f, 5, rec); !err.empty()) return err;
    result.records.push_back(std::move(rec));
    return std::string{};
  });
  result.data_rows = med.data_rows + rx.data_rows;
  if (result.data_rows > 0 &&
      static_cast<double>(result.rejected.size()) > max_reject_fraction * static_cast<double>(result.data_rows)) {
    std::ostringstream msg;
    msg << result.rejected.size() << " of " << result.data_rows << " claim rows rejected (limit "
        << max_reject_fraction * 100.0 << "%)\n"
        << format_rejects(result);
    throw ClaimsError(msg.str());
  }
  return result;
}

std::string format_rejects(const IngestResult& result) {
  std::ostringstream out;
  for (const auto& r : result.rejected) out << r.file << " line " << r.line << ": " << r.reason << '\n';
  return out.str();
}

void write_medical_claims(const std::filesystem::path& path, std::span<const ClaimRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ClaimsError("cannot write " + path.string());
  out << csv::join(medical_header()) << '\n';
  for (const auto& r : records) {
    if (r.kind != ClaimKind::medical) continue;
    if (r.dx_codes.size() > kMaxDxCodes) throw ClaimsError("claim " + r.claim_id + " has more than 10 dx codes");
    std::vector<std::string> f{r.patient_id, r.claim_id, r.provider_id, format_date(r.service_date)};
    for (std::size_t i = 0; i < kMaxDxCodes; ++i) f.push_back(i < r.dx_codes.size() ? r.dx_codes[i] : "");
    f.push_back(r.px_code.value_or(""));
    f.push_back(format_amount(r.amount_paid));
    f.push_back(format_amount(r.amount_billed));
    f.push_back(format_amount(r.amount_allowed));
    out << csv::join(f) << '\n';
  }
}

void write_pharmacy_claims(const std::filesystem::path& path, std::span<const ClaimRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ClaimsError("cannot write " + path.string());
  out << csv::join(pharmacy_header()) << '\n';
  for (const auto& r : records) {
    if (r.kind != ClaimKind::pharmacy) continue;
    out << csv::join({r.patient_id, r.claim_id, r.provider_id, format_date(r.service_date), r.rx_code.value_or(""),
                      format_amount(r.amount_paid), format_amount(r.amount_billed),
                      format_amount(r.amount_allowed)})
        << '\n';
  }
}

std::string_view to_string(Granularity g) {
  switch (g) {
    case Granularity::day: return "day";
    case Granularity::week: return "week";
    case Granularity::month: return "month";
  }
  return "day";
}

Granularity parse_granularity(std::string_view text) {
  if (text == "day") return Granularity::day;
  if (text == "week") return Granularity::week;
  if (text == "month") return Granularity::month;
  throw std::invalid_argument("unknown granularity '" + std::string(text) + "' (expected day, week or month)");
}

std::int64_t bucket_of(Day day, Granularity g) {
  const std::int64_t days = day.time_since_epoch().count();
  switch (g) {
    case Granularity::day: return days;
    case Granularity::week: {
      // 1970-01-01 was a Thursday; shifting by 3 aligns buckets to Mondays.
      const std::int64_t shifted = days + 3;
      return shifted >= 0 ? shifted / 7 : -((-shifted + 6) / 7);
    }
    case Granularity::month: {
      const year_month_day ymd{day};
      return static_cast<std::int64_t>(static_cast<int>(ymd.year())) * 12 +
             static_cast<unsigned>(ymd.month()) - 1;
    }
  }
  return days;
}

std::string_view to_string(Channel c) {
  switch (c) {
    case Channel::dx: return "dx";
    case Channel::px: return "px";
    case Channel::rx: return "rx";
    case Channel::cost: return "cost";
    case Channel::all: return "all";
  }
  return "dx";
}

Channel parse_channel(std::string_view text) {
  for (Channel c : {Channel::dx, Channel::px, Channel::rx, Channel::cost, Channel::all}) {
    if (to_string(c) == text) return c;
  }
  throw std::invalid_argument("unknown channel '" + std::string(text) + "'");
}

std::vector<ChannelStep> channel_steps(const PatientProfile& profile, Channel channel) {
  std::vector<ChannelStep> steps;
  std::optional<std::int64_t> previous;
  for (std::size_t i = 0; i < profile.events.size(); ++i) {
    const auto& e = profile.events[i];
    const bool member = (channel == Channel::dx || channel == Channel::px)
                            ? e.medical_claims > 0
                            : (channel == Channel::rx ? e.pharmacy_claims > 0 : true);
    if (!member) continue;
    steps.push_back({i, previous ? e.bucket - *previous : 0});
    previous = e.bucket;
  }
  return steps;
}

ProfileSet build_profiles(std::span<const ClaimRecord> records, int observation_year, int result_year) {
  if (result_year != observation_year + 1) {
    throw std::invalid_argument("result year must follow the observation year");
  }
  struct Accumulator {
    std::map<std::int64_t, ClaimEvent> events;
    std::size_t observation_claims = 0;
    double target = 0.0;
  };
  std::map<std::string, Accumulator> by_patient;
  for (const auto& r : records) {
    const int y = year_of(r.service_date);
    if (y != observation_year && y != result_year) continue;
    auto& acc = by_patient[r.patient_id];
    if (y == result_year) {
      acc.target += r.amount_paid;
      continue;
    }
    ++acc.observation_claims;
    const bool has_codes = !r.dx_codes.empty() || r.px_code || r.rx_code;
    if (!has_codes && r.amount_paid == 0.0) continue;
    const auto key = bucket_of(r.service_date, Granularity::day);
    auto& e = acc.events[key];
    e.day = r.service_date;
    e.bucket = key;
    e.service_days = 1;
    if (r.kind == ClaimKind::medical) {
      ++e.medical_claims;
      e.medical_cost += r.amount_paid;
      for (const auto& c : r.dx_codes) sorted_insert(e.dx_codes, c);
      if (r.px_code) sorted_insert(e.px_codes, *r.px_code);
    } else {
      ++e.pharmacy_claims;
      e.pharmacy_cost += r.amount_paid;
      if (r.rx_code) sorted_insert(e.rx_codes, *r.rx_code);
    }
    if (!std::binary_search(e.provider_ids.begin(), e.provider_ids.end(), r.provider_id)) {
      sorted_insert(e.provider_ids, r.provider_id);
    }
  }
  ProfileSet set;
  for (auto& [id, acc] : by_patient) {
    if (acc.observation_claims < 2 || acc.events.empty()) {
      ++set.excluded_patients;
      continue;
    }
    PatientProfile p;
    p.patient_id = id;
    p.observation_year = observation_year;
    p.target_cost = acc.target;
    p.observation_claims = acc.observation_claims;
    p.events.reserve(acc.events.size());
    for (auto& [key, e] : acc.events) p.events.push_back(std::move(e));
    set.profiles.push_back(std::move(p));
  }
  return set;
}

PatientProfile aggregate_events(const PatientProfile& profile, Granularity granularity) {
  PatientProfile out = profile;
  out.granularity = granularity;
  out.events.clear();
  for (const auto& e : profile.events) {
    const auto key = bucket_of(e.day, granularity);
    if (out.events.empty() || out.events.back().bucket != key) {
      ClaimEvent merged = e;
      merged.bucket = key;
      out.events.push_back(std::move(merged));
      continue;
    }
    auto& m = out.events.back();
    merge_sorted(m.dx_codes, e.dx_codes);
    merge_sorted(m.px_codes, e.px_codes);
    merge_sorted(m.rx_codes, e.rx_codes);
    merge_unique(m.provider_ids, e.provider_ids);
    m.medical_cost += e.medical_cost;
    m.pharmacy_cost += e.pharmacy_cost;
    m.medical_claims += e.medical_claims;
    m.pharmacy_claims += e.pharmacy_claims;
    m.service_days += e.service_days;
  }
  return out;
}

CohortJourney journey_stats(std::span<const PatientProfile> profiles) {
  if (profiles.empty()) throw std::invalid_argument("journey_stats needs at least one profile");
  CohortJourney cohort;
  for (const auto& profile : profiles) {
    JourneyStats js;
    js.patient_id = profile.patient_id;
    std::set<std::string> providers, codes;
    for (const auto& e : profile.events) {
      providers.insert(e.provider_ids.begin(), e.provider_ids.end());
      for (const auto* list : {&e.dx_codes, &e.px_codes, &e.rx_codes}) codes.insert(list->begin(), list->end());
      js.claim_count += static_cast<std::size_t>(e.medical_claims + e.pharmacy_claims);
      js.claim_event_count += static_cast<std::size_t>(e.service_days);
    }
    js.distinct_providers = providers.size();
    js.distinct_codes = codes.size();

    const Day first{std::chrono::year{profile.observation_year} / std::chrono::January / 1};
    const Day last{std::chrono::year{profile.observation_year} / std::chrono::December / 31};
    for (Granularity g : {Granularity::day, Granularity::week, Granularity::month}) {
      const auto agg = aggregate_events(profile, g);
      auto& s = js.by_granularity[static_cast<std::size_t>(g)];
      double providers_sum = 0.0, codes_sum = 0.0;
      for (const auto& e : agg.events) {
        providers_sum += static_cast<double>(e.provider_ids.size());
        std::set<std::string> bucket_codes;
        for (const auto* list : {&e.dx_codes, &e.px_codes, &e.rx_codes}) {
          bucket_codes.insert(list->begin(), list->end());
        }
        codes_sum += static_cast<double>(bucket_codes.size());
      }
      const double active = static_cast<double>(agg.events.size());
      const double buckets = static_cast<double>(bucket_of(last, g) - bucket_of(first, g) + 1);
      s.providers = active > 0 ? providers_sum / active : 0.0;
      s.unique_codes = active > 0 ? codes_sum / active : 0.0;
      s.claims = static_cast<double>(js.claim_count) / buckets;
      s.claim_events = static_cast<double>(js.claim_event_count) / buckets;
    }
    cohort.patients.push_back(std::move(js));
  }
  const double n = static_cast<double>(cohort.patients.size());
  for (std::size_t g = 0; g < 3; ++g) {
    auto& avg = cohort.averages[g];
    for (const auto& js : cohort.patients) {
      avg.providers += js.by_granularity[g].providers;
      avg.unique_codes += js.by_granularity[g].unique_codes;
      avg.claims += js.by_granularity[g].claims;
      avg.claim_events += js.by_granularity[g].claim_events;
    }
    avg.providers /= n;
    avg.unique_codes /= n;
    avg.claims /= n;
    avg.claim_events /= n;
  }
  return cohort;
}

}  // namespace claimcast
