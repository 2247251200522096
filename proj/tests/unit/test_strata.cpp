#include <doctest.h>

#include <cmath>
#include <map>
#include <random>

#include "claimcast/strata.hpp"
#include "claimcast/synth.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace claimcast;
using namespace claimcast::testing;

namespace {

PatientProfile profile_with(std::vector<std::array<int, 3>> counts) {
  PatientProfile p;
  p.patient_id = "p";
  p.observation_year = 2022;
  int d = 1;
  for (const auto& c : counts) {
    ClaimEvent e;
    e.day = day(2022, 1, static_cast<unsigned>(d));
    e.bucket = d++;
    for (int i = 0; i < c[0]; ++i) e.dx_codes.push_back("D" + std::to_string(i));
    for (int i = 0; i < c[1]; ++i) e.px_codes.push_back("P" + std::to_string(i));
    for (int i = 0; i < c[2]; ++i) e.rx_codes.push_back("R" + std::to_string(i));
    e.medical_claims = 1;
    e.service_days = 1;
    p.events.push_back(e);
  }
  return p;
}

}  // namespace

TEST_CASE("entropy: worked examples and degenerate event") {
  const auto ex1 = entropy_breakdown(12, 0, 0);
  CHECK(std::abs(ex1.probability[0] - 0.867) <= 0.005);
  CHECK(std::abs(ex1.probability[1] - 0.067) <= 0.005);
  CHECK(std::abs(ex1.log_probability[0] - -0.062) <= 0.005);
  CHECK(std::abs(ex1.log_probability[1] - -1.176) <= 0.005);
  CHECK(std::abs(ex1.sum - -0.211) <= 0.005);
  CHECK(std::abs(ex1.entropy - 2.53) <= 0.01);

  const auto ex3 = entropy_breakdown(4, 4, 4);
  CHECK(std::abs(ex3.probability[2] - 0.333) <= 0.005);
  CHECK(std::abs(ex3.sum - -0.477) <= 0.005);
  CHECK(std::abs(ex3.entropy - 5.73) <= 0.01);

  CHECK(event_entropy(0, 0, 0) == 0.0);
}

TEST_CASE("entropy: matches a direct oracle and is symmetric") {
  for (int a = 0; a <= 12; ++a) {
    for (int b = 0; b <= 12; ++b) {
      for (int c = 0; c <= 6; ++c) {
        const double e = event_entropy(a, b, c);
        CHECK(e == doctest::Approx(oracle::event_entropy(a, b, c)).epsilon(1e-13));
        CHECK(e == doctest::Approx(event_entropy(b, c, a)).epsilon(1e-13));
        CHECK(e == doctest::Approx(event_entropy(c, a, b)).epsilon(1e-13));
        CHECK(e >= 0.0);
      }
    }
  }
}

TEST_CASE("profile entropy: mean over events") {
  CHECK(std::abs(*profile_entropy(profile_with({{4, 4, 4}})) - 5.73) <= 0.01);
  const double a = event_entropy(12, 0, 0), b = event_entropy(2, 2, 2);
  CHECK(*profile_entropy(profile_with({{12, 0, 0}, {2, 2, 2}})) == (a + b) / 2.0);
  CHECK_FALSE(profile_entropy(PatientProfile{}).has_value());
}

TEST_CASE("normalize_and_bucket") {
  const std::vector<double> e{1, 2, 3, 4, 5};
  const std::vector<std::string> ids{"a", "b", "c", "d", "e"};
  const auto b = normalize_and_bucket(e, ids);
  CHECK(b.normalized == std::vector<double>{0, 0.25, 0.5, 0.75, 1});
  CHECK(b.quintile == std::vector<int>{1, 2, 3, 4, 5});

  const std::vector<double> flat{2, 2, 2};
  const auto d = normalize_and_bucket(flat, std::vector<std::string>{"a", "b", "c"});
  CHECK(d.degenerate);
  CHECK(d.normalized == std::vector<double>{0, 0, 0});
  CHECK(d.quintile == std::vector<int>{1, 1, 1});

  std::mt19937_64 rng(8);
  std::vector<double> big(10000);
  std::vector<std::string> big_ids(10000);
  for (std::size_t i = 0; i < big.size(); ++i) {
    big[i] = std::uniform_real_distribution<double>(0, 10)(rng);
    big_ids[i] = std::to_string(i);
  }
  const auto q = normalize_and_bucket(big, big_ids);
  std::array<int, 5> count{};
  for (int k : q.quintile) ++count[static_cast<std::size_t>(k - 1)];
  for (int c : count) CHECK(c == 2000);
}

TEST_CASE("assign_severity: category rules and precedence") {
  ConditionMap map;
  for (int i = 0; i < 4; ++i) map.add("ccc" + std::to_string(i), ConditionCategory::ccc, {"C" + std::to_string(i)});
  for (int i = 0; i < 7; ++i) map.add("ncc" + std::to_string(i), ConditionCategory::ncc, {"N" + std::to_string(i)});
  for (int i = 0; i < 2; ++i) {
    map.add("frail" + std::to_string(i), ConditionCategory::frailty, {"F" + std::to_string(i)});
  }
  map.add("esrd", ConditionCategory::disabled_flag, {"E0"});

  const auto with_codes = [](std::vector<std::string> codes) {
    PatientProfile p;
    ClaimEvent e;
    e.dx_codes = std::move(codes);
    p.events.push_back(e);
    return p;
  };
  CHECK(assign_severity(with_codes({"N0", "N1", "N2"}), map).severity == Severity::simple_chronic);
  CHECK(assign_severity(with_codes({"F0", "F1", "C0"}), map).severity == Severity::frail_elderly);
  CHECK(assign_severity(with_codes({"E0", "C0", "C1", "C2", "C3"}), map).severity == Severity::disabled);
  CHECK(assign_severity(with_codes({"C0"}), map).severity == Severity::minor_complex_chronic);
  CHECK(assign_severity(with_codes({"C0", "C1", "C2"}), map).severity == Severity::major_complex_chronic);
  CHECK(assign_severity(with_codes({"X9"}), map).severity == Severity::relatively_healthy);
  CHECK(assign_severity(with_codes({"X9"}), map).unmapped_codes == 1);
  // Repeated codes of one condition count once.
  CHECK(assign_severity(with_codes({"C0", "C0", "C0"}), map).ccc_count == 1);
}

TEST_CASE("condition map and strata files round-trip") {
  TempDir dir("strata-files");
  ConditionMap map;
  map.add("Heart failure", ConditionCategory::ccc, {"D1", "D2"});
  map.add("Frail, falls", ConditionCategory::frailty, {"D3"});
  map.save(dir / "map.csv");
  const auto back = ConditionMap::load(dir / "map.csv");
  REQUIRE(back.find("D2") != nullptr);
  CHECK(back.find("D2")->name == "Heart failure");
  CHECK(back.find("D3")->category == ConditionCategory::frailty);
  CHECK_THROWS(map.add("dup", ConditionCategory::ncc, {"D1"}));

  std::vector<StrataAssignment> rows(2);
  rows[0].patient_id = "a";
  rows[0].profile_entropy = 1.0 / 3.0;
  rows[0].severity = Severity::frail_elderly;
  rows[1].patient_id = "b,\"quoted\"";
  rows[1].entropy_quintile = 5;
  write_strata(dir / "strata.csv", rows);
  const auto read = read_strata(dir / "strata.csv");
  REQUIRE(read.size() == 2);
  CHECK(read[0].profile_entropy == rows[0].profile_entropy);
  CHECK(read[0].severity == Severity::frail_elderly);
  CHECK(read[1].patient_id == rows[1].patient_id);
  CHECK(read[1].entropy_quintile == 5);
}

TEST_CASE("stratify: generated tiers align with entropy") {
  SynthConfig cfg;
  cfg.n_patients = 2000;
  cfg.seed = 9;
  const auto cohort = generate_cohort(cfg);
  std::vector<ClaimRecord> all = cohort.medical;
  all.insert(all.end(), cohort.pharmacy.begin(), cohort.pharmacy.end());
  const auto set = build_profiles(all, 2022, 2023);
  const auto s = stratify(set.profiles, synthetic_condition_map(cfg), Granularity::day);
  std::map<std::string, int> tier;
  for (const auto& l : cohort.labels) tier[l.patient_id] = l.true_tier;
  std::array<double, 6> sum{};
  std::array<int, 6> n{};
  int agree = 0;
  for (const auto& a : s.assignments) {
    const int t = tier[a.patient_id];
    sum[static_cast<std::size_t>(t - 1)] += a.profile_entropy;
    ++n[static_cast<std::size_t>(t - 1)];
    agree += static_cast<int>(a.severity) == t ? 1 : 0;
  }
  for (int t = 1; t < 6; ++t) CHECK(sum[t] / n[t] > sum[t - 1] / n[t - 1]);
  // The generator plants the conditions that define each tier.
  CHECK(agree == static_cast<int>(s.assignments.size()));
}
