#include <doctest.h>

#include <algorithm>
#include <map>
#include <random>

#include "claimcast/claims.hpp"
#include "claimcast/synth.hpp"
#include "helpers.hpp"

using namespace claimcast;
using namespace claimcast::testing;

namespace {

std::string medical_csv_header() {
  std::string h;
  for (const auto& f : medical_header()) h += (h.empty() ? "" : ",") + f;
  return h + "\n";
}

std::string pharmacy_csv_header() {
  std::string h;
  for (const auto& f : pharmacy_header()) h += (h.empty() ? "" : ",") + f;
  return h + "\n";
}

}  // namespace

TEST_CASE("ingest: worked-example medical row") {
  TempDir dir("ingest-row");
  write_text(dir / "m.csv", medical_csv_header() + "pt1,clm1,prov1,2022-03-01,Dx1,Dx2,Dx8,,,,,,,,Px4,10,12,11\n");
  write_text(dir / "p.csv", pharmacy_csv_header());
  const auto r = ingest_claims(dir / "m.csv", dir / "p.csv");
  REQUIRE(r.records.size() == 1);
  const auto& rec = r.records[0];
  CHECK(rec.kind == ClaimKind::medical);
  CHECK(rec.dx_codes == std::vector<std::string>{"Dx1", "Dx2", "Dx8"});
  CHECK(rec.px_code == std::optional<std::string>("Px4"));
  CHECK_FALSE(rec.rx_code.has_value());
  CHECK(r.rejected.empty());
}

TEST_CASE("ingest: header-only files give no records") {
  TempDir dir("ingest-empty");
  write_text(dir / "m.csv", medical_csv_header());
  write_text(dir / "p.csv", pharmacy_csv_header());
  const auto r = ingest_claims(dir / "m.csv", dir / "p.csv");
  CHECK(r.records.empty());
  CHECK(r.rejected.empty());
}

TEST_CASE("ingest: single pharmacy row") {
  TempDir dir("ingest-rx");
  write_text(dir / "m.csv", medical_csv_header());
  write_text(dir / "p.csv", pharmacy_csv_header() + "pt1,clm5,prov3,2022-03-02,Rx1,12.50,13,12.5\n");
  const auto r = ingest_claims(dir / "m.csv", dir / "p.csv");
  REQUIRE(r.records.size() == 1);
  CHECK(r.records[0].kind == ClaimKind::pharmacy);
  CHECK(r.records[0].rx_code == std::optional<std::string>("Rx1"));
  CHECK(r.records[0].amount_paid == 12.5);
}

TEST_CASE("ingest: malformed rows are rejected with line numbers, too many is fatal") {
  TempDir dir("ingest-bad");
  std::string rows = medical_csv_header();
  for (int i = 0; i < 200; ++i) rows += "pt1,c" + std::to_string(i) + ",prov1,2022-03-01,Dx1,,,,,,,,,,,10,10,10\n";
  rows += "pt1,bad,prov1,2022-02-30,Dx1,,,,,,,,,,,10,10,10\n";
  write_text(dir / "m.csv", rows);
  write_text(dir / "p.csv", pharmacy_csv_header());
  const auto r = ingest_claims(dir / "m.csv", dir / "p.csv");
  REQUIRE(r.rejected.size() == 1);
  CHECK(r.rejected[0].line == 202);

  write_text(dir / "m2.csv", medical_csv_header() + "pt1,c1,prov1,2022-03-01,Dx1,,,,,,,,,,,-5,10,10\n" +
                                 "pt1,c2,prov1,2022-03-01,Dx1,,,,,,,,,,,5,10,10\n");
  CHECK_THROWS_AS(ingest_claims(dir / "m2.csv", dir / "p.csv"), ClaimsError);
  CHECK_THROWS_AS(ingest_claims(dir / "missing.csv", dir / "p.csv"), ClaimsError);
}

TEST_CASE("claims files round-trip") {
  TempDir dir("roundtrip");
  const auto records = pt1_records();
  std::vector<ClaimRecord> med, rx;
  for (const auto& r : records) (r.kind == ClaimKind::medical ? med : rx).push_back(r);
  write_medical_claims(dir / "m.csv", med);
  write_pharmacy_claims(dir / "p.csv", rx);
  const auto back = ingest_claims(dir / "m.csv", dir / "p.csv");
  std::vector<ClaimRecord> expected = med;
  expected.insert(expected.end(), rx.begin(), rx.end());
  CHECK(back.records == expected);
}

TEST_CASE("build_profiles: worked-example patient") {
  const auto set = build_profiles(pt1_records(), 2022, 2023);
  REQUIRE(set.profiles.size() == 1);
  const auto& p = set.profiles[0];
  REQUIRE(p.events.size() == 3);
  CHECK(p.events[1].provider_ids == std::vector<std::string>{"prov1", "prov2", "prov3"});
  CHECK(p.events[1].dx_codes == std::vector<std::string>{"Dx1", "Dx3"});
  CHECK(p.events[1].rx_codes == std::vector<std::string>{"Rx1"});
  CHECK(p.target_cost == 500.0);
  CHECK(channel_steps(p, Channel::cost).size() == 3);
  const auto rx = channel_steps(p, Channel::rx);
  REQUIRE(rx.size() == 1);
  CHECK(rx[0].event_index == 1);
  CHECK(rx[0].gap == 0);
  const auto dx = channel_steps(p, Channel::dx);
  CHECK(dx.size() == 3);
  CHECK(dx[2].gap == 1);
}

TEST_CASE("build_profiles: filters and empty targets") {
  std::vector<ClaimRecord> r;
  r.push_back(medical("only-result", "a", "v", day(2023, 1, 5), {"D1"}, std::nullopt, 10));
  r.push_back(medical("only-result", "b", "v", day(2023, 1, 6), {"D1"}, std::nullopt, 10));
  r.push_back(medical("two", "c", "v", day(2022, 1, 5), {"D1"}, std::nullopt, 10));
  r.push_back(pharmacy("two", "d", "v", day(2022, 2, 5), "R1", 10));
  r.push_back(medical("one", "e", "v", day(2022, 1, 5), {"D1"}, std::nullopt, 10));
  const auto set = build_profiles(r, 2022, 2023);
  REQUIRE(set.profiles.size() == 1);
  CHECK(set.profiles[0].patient_id == "two");
  CHECK(set.profiles[0].target_cost == 0.0);
  CHECK(set.excluded_patients == 2);
}

TEST_CASE("aggregate_events: identity, merging and conservation") {
  const auto p = build_profiles(pt1_records(), 2022, 2023).profiles.at(0);
  CHECK(aggregate_events(p, Granularity::day) == p);

  std::vector<ClaimRecord> r{medical("x", "1", "v", day(2022, 5, 3), {"D1"}, std::nullopt, 10),
                             medical("x", "2", "w", day(2022, 5, 6), {"D2"}, "P1", 15)};
  const auto month = aggregate_events(build_profiles(r, 2022, 2023).profiles.at(0), Granularity::month);
  REQUIRE(month.events.size() == 1);
  CHECK(month.events[0].medical_cost == 25.0);
  CHECK(month.events[0].dx_codes == std::vector<std::string>{"D1", "D2"});

  // Random 40-event profile against a calendar-month bucketing oracle.
  std::mt19937_64 rng(3);
  std::vector<ClaimRecord> many;
  std::map<unsigned, double> month_cost;
  std::map<std::string, int> code_count;
  for (int i = 0; i < 40; ++i) {
    const unsigned m = 1 + static_cast<unsigned>(rng() % 12);
    const unsigned d = 1 + static_cast<unsigned>(rng() % 28);
    const std::string code = "D" + std::to_string(rng() % 7);
    const double cost = static_cast<double>(1 + rng() % 100);
    many.push_back(medical("y", "c" + std::to_string(i), "v", day(2022, m, d), {code}, std::nullopt, cost));
    month_cost[m] += cost;
    ++code_count[code];
  }
  const auto base = build_profiles(many, 2022, 2023).profiles.at(0);
  for (Granularity g : {Granularity::day, Granularity::week, Granularity::month}) {
    const auto agg = aggregate_events(base, g);
    double total = 0.0;
    std::map<std::string, int> codes;
    for (const auto& e : agg.events) {
      total += e.total_cost();
      for (const auto& c : e.dx_codes) ++codes[c];
    }
    double expected = 0.0;
    for (const auto& [m, c] : month_cost) expected += c;
    CHECK(total == doctest::Approx(expected).epsilon(1e-12));
    CHECK(codes == code_count);
  }
  const auto by_month = aggregate_events(base, Granularity::month);
  CHECK(by_month.events.size() == month_cost.size());
  CHECK(by_month.events.size() <= 12);
  for (std::size_t i = 0; i < by_month.events.size(); ++i) {
    const auto ymd = std::chrono::year_month_day{by_month.events[i].day};
    CHECK(by_month.events[i].total_cost() ==
          doctest::Approx(month_cost[static_cast<unsigned>(ymd.month())]).epsilon(1e-12));
  }
}

TEST_CASE("event partition: event costs sum to observation-year paid amounts") {
  SynthConfig cfg;
  cfg.n_patients = 60;
  cfg.seed = 4;
  const auto cohort = generate_cohort(cfg);
  std::vector<ClaimRecord> all = cohort.medical;
  all.insert(all.end(), cohort.pharmacy.begin(), cohort.pharmacy.end());
  std::map<std::string, double> paid;
  for (const auto& r : all) {
    if (year_of(r.service_date) == 2022) paid[r.patient_id] += r.amount_paid;
  }
  for (const auto& p : build_profiles(all, 2022, 2023).profiles) {
    double sum = 0.0;
    for (const auto& e : p.events) sum += e.total_cost();
    CHECK(sum == doctest::Approx(paid[p.patient_id]).epsilon(1e-9));
  }
}

TEST_CASE("journey_stats: small cases") {
  std::vector<ClaimRecord> r{medical("a", "1", "v1", day(2022, 5, 3), {"D1"}, std::nullopt, 10),
                             medical("a", "2", "v2", day(2022, 5, 3), {"D2"}, std::nullopt, 10)};
  const auto one = journey_stats(build_profiles(r, 2022, 2023).profiles);
  CHECK(one.patients[0].by_granularity[0].providers == 2.0);

  std::vector<ClaimRecord> two{medical("a", "1", "v", day(2022, 5, 3), {"D1"}, std::nullopt, 10),
                               medical("a", "2", "v", day(2022, 5, 9), {"D1"}, std::nullopt, 10),
                               medical("b", "3", "v", day(2022, 5, 3), {"D1", "D2"}, "P1", 10),
                               medical("b", "4", "v", day(2022, 5, 4), {"D2"}, std::nullopt, 10)};
  const auto cohort = journey_stats(build_profiles(two, 2022, 2023).profiles);
  CHECK(cohort.averages[static_cast<std::size_t>(Granularity::month)].unique_codes == 2.0);
}

TEST_CASE("journey_stats: higher tiers see more providers") {
  SynthConfig cfg;
  cfg.n_patients = 2000;
  cfg.seed = 5;
  const auto cohort = generate_cohort(cfg);
  std::vector<ClaimRecord> all = cohort.medical;
  all.insert(all.end(), cohort.pharmacy.begin(), cohort.pharmacy.end());
  const auto set = build_profiles(all, 2022, 2023);
  const auto journey = journey_stats(set.profiles);
  std::map<std::string, int> tier;
  for (const auto& l : cohort.labels) tier[l.patient_id] = l.true_tier;
  std::array<double, 6> providers{}, events{};
  std::array<int, 6> n{};
  for (std::size_t i = 0; i < journey.patients.size(); ++i) {
    const int t = tier[journey.patients[i].patient_id] - 1;
    providers[t] += journey.patients[i].by_granularity[0].providers;
    events[t] += static_cast<double>(set.profiles[i].events.size());
    ++n[t];
  }
  for (int t = 1; t < 6; ++t) {
    CHECK(providers[t] / n[t] > providers[t - 1] / n[t - 1]);
    CHECK(events[t] / n[t] > events[t - 1] / n[t - 1]);
  }
}
