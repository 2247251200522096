#include "claimcast/synth.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "claimcast/csv.hpp"
#include "claimcast/rng.hpp"

namespace claimcast {

namespace {

using std::chrono::days;

constexpr std::uint64_t kTierStream = 0x7143;
constexpr std::uint64_t kPatientStream = 0x9a71;

constexpr std::array<const char*, 9> kComplexConditions{
    "Acute MI / Ischemic heart disease", "Chronic kidney disease", "Congestive heart failure",
    "Diabetes",                          "Dementia",               "Lung disease",
    "Psychiatric disease",               "Specified heart arrhythmias", "Stroke"};

constexpr std::array<const char*, 20> kNonComplexConditions{
    "Amputation status", "Arthritis and other inflammatory tissue disease", "Artificial openings",
    "Benign prostatic hyperplasia", "Neuromuscular disease", "Cystic fibrosis",
    "Endocrine and metabolic disorders", "Eye disease", "Hematological disease",
    "Inflammatory bowel disease", "Immune disorders", "Hyperlipidemia",
    "Liver and biliary disease", "Cancer", "Osteoporosis",
    "Paralytic diseases", "Skin ulcer", "Substance abuse",
    "Thyroid disease", "Hypertension"};

constexpr std::array<const char*, 12> kFrailtyIndicators{
    "Abnormality of gait", "Protein-calorie malnutrition", "Adult failure to thrive", "Cachexia",
    "Debility", "Difficulty in walking", "Fall", "Muscular wasting and disuse atrophy",
    "Muscle weakness", "Decubitus ulcer of skin", "Senility without mention of psychosis",
    "Durable medical equipment (cane, walker, bath equipment, and commode)"};

constexpr const char* kDisabledFlag = "ESRD or disabled";

constexpr std::size_t kCodesPerCondition = 2;
constexpr std::size_t kConditionCount = kComplexConditions.size() + kNonComplexConditions.size() + kFrailtyIndicators.size();
constexpr std::size_t kChronicCount = kComplexConditions.size() + kNonComplexConditions.size();
constexpr std::size_t kDisabledDx = kConditionCount * kCodesPerCondition;
constexpr std::size_t kSignalDxStart = kDisabledDx + 1;
constexpr std::size_t kNoiseDxStart = kSignalDxStart + kSignalPairs;
constexpr std::size_t kSignalRxStart = kChronicCount;
constexpr std::size_t kNoiseRxStart = kSignalRxStart + kSignalPairs;
constexpr std::size_t kMinNoiseCodes = 20;
constexpr std::size_t kProviderUniverse = 1000;

// Per-tier journey shape, indexed by tier - 1.
constexpr std::array<double, 6> kDaysMean{8, 14, 22, 32, 40, 48};
constexpr std::array<double, 6> kExtraMedicalClaims{0.1, 0.35, 0.65, 1.0, 1.35, 1.7};
constexpr std::array<double, 6> kPharmacyDayShare{0.30, 0.40, 0.45, 0.50, 0.55, 0.60};
constexpr std::array<double, 6> kSignalPrevalence{0.10, 0.18, 0.26, 0.34, 0.42, 0.50};
constexpr std::array<std::size_t, 6> kProviderPool{3, 5, 8, 12, 16, 20};
constexpr double kMedicalDayShare = 0.8;
constexpr double kConditionCodeShare = 0.55;
constexpr double kIntensitySigma = 0.45;

std::string code_name(char prefix, std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%c%04zu", prefix, i);
  return buf;
}

double to_cents(double x) { return std::round(x * 100.0) / 100.0; }

// Zipf(1) over [begin, end) so frequent and rare (UNK-bound) codes coexist.
class ZipfTable {
 public:
  ZipfTable(std::size_t begin, std::size_t end) : begin_(begin) {
    double total = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
      total += 1.0 / static_cast<double>(i - begin + 1);
      cumulative_.push_back(total);
    }
    for (double& c : cumulative_) c /= total;
  }
  std::size_t sample(std::mt19937_64& rng) const {
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), uniform01(rng));
    return begin_ + std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()), cumulative_.size() - 1);
  }

 private:
  std::size_t begin_;
  std::vector<double> cumulative_;
};

// k distinct values from [0, n), sorted.
std::vector<std::size_t> sample_distinct(std::mt19937_64& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  k = std::min(k, n);
  for (std::size_t i = 0; i < k; ++i) std::swap(all[i], all[i + uniform_index(rng, n - i)]);
  all.resize(k);
  std::sort(all.begin(), all.end());
  return all;
}

std::size_t uniform_count(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return lo + uniform_index(rng, hi - lo + 1);
}

// Largest-remainder apportionment of n over the mix, then a seeded shuffle.
std::vector<int> assign_tiers(const SynthConfig& config) {
  const std::size_t n = config.n_patients;
  std::array<std::size_t, 6> counts{};
  std::array<double, 6> remainder{};
  std::size_t assigned = 0;
  for (std::size_t t = 0; t < 6; ++t) {
    const double exact = config.severity_mix[t] * static_cast<double>(n);
    counts[t] = static_cast<std::size_t>(std::floor(exact));
    remainder[t] = exact - static_cast<double>(counts[t]);
    assigned += counts[t];
  }
  std::array<std::size_t, 6> order{0, 1, 2, 3, 4, 5};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[order[i % 6]];

  std::vector<int> tiers;
  tiers.reserve(n);
  for (std::size_t t = 0; t < 6; ++t) tiers.insert(tiers.end(), counts[t], static_cast<int>(t + 1));
  std::mt19937_64 rng(derive_seed(config.seed, kTierStream, 0));
  shuffle_indices(tiers, rng);
  return tiers;
}

struct PatientConditions {
  std::vector<std::size_t> conditions;  // indices into the combined condition list
  std::vector<std::size_t> chronic;     // subset with a medication code
  bool disabled = false;
};

PatientConditions draw_conditions(int tier, std::mt19937_64& rng) {
  const std::size_t n_ccc = kComplexConditions.size();
  const std::size_t n_ncc = kNonComplexConditions.size();
  const std::size_t n_frail = kFrailtyIndicators.size();
  std::size_t ccc = 0, ncc = 0, frail = 0;
  PatientConditions out;
  switch (tier) {
    case 1: break;
    case 2: ncc = uniform_count(rng, 1, 5); break;
    case 3: ccc = uniform_count(rng, 1, 2); ncc = uniform_count(rng, 0, 3); break;
    case 4: ccc = uniform_count(rng, 3, 5); ncc = uniform_count(rng, 0, 4); break;
    case 5: frail = uniform_count(rng, 2, 4); ccc = uniform_count(rng, 0, 3); ncc = uniform_count(rng, 0, 3); break;
    default:
      out.disabled = true;
      ccc = uniform_count(rng, 0, 3);
      ncc = uniform_count(rng, 0, 4);
      frail = uniform_count(rng, 0, 1);
      break;
  }
  for (std::size_t i : sample_distinct(rng, n_ccc, ccc)) out.conditions.push_back(i);
  for (std::size_t i : sample_distinct(rng, n_ncc, ncc)) out.conditions.push_back(n_ccc + i);
  for (std::size_t i : sample_distinct(rng, n_frail, frail)) out.conditions.push_back(n_ccc + n_ncc + i);
  for (std::size_t c : out.conditions) {
    if (c < kChronicCount) out.chronic.push_back(c);
  }
  return out;
}

struct Generator {
  const SynthConfig& config;
  CodeUniverse codes;
  ZipfTable noise_dx, noise_px, noise_rx;

  explicit Generator(const SynthConfig& c)
      : config(c),
        codes(code_universe(c)),
        noise_dx(kNoiseDxStart, c.dx_vocab),
        noise_px(0, c.px_vocab),
        noise_rx(kNoiseRxStart, c.rx_vocab) {}

  void patient(std::size_t index, int tier, SynthCohort& out) const;
};

void Generator::patient(std::size_t index, int tier, SynthCohort& out) const {
  std::mt19937_64 rng(derive_seed(config.seed, kPatientStream, index));
  const std::size_t t = static_cast<std::size_t>(tier - 1);
  char id_buf[32];
  std::snprintf(id_buf, sizeof id_buf, "%06zu", index + 1);
  const std::string pid = config.id_prefix + id_buf;

  const PatientConditions cond = draw_conditions(tier, rng);
  const double intensity = lognormal(rng, 0.0, kIntensitySigma);
  std::vector<std::string> providers;
  for (std::size_t p : sample_distinct(rng, kProviderUniverse, kProviderPool[t])) providers.push_back(code_name('V', p));

  const std::chrono::year obs_year{config.observation_year};
  const Day obs_start{obs_year / std::chrono::January / 1};
  const Day res_start{(obs_year + std::chrono::years{1}) / std::chrono::January / 1};
  const auto obs_len = static_cast<std::size_t>((res_start - obs_start).count());
  const Day res_end{(obs_year + std::chrono::years{2}) / std::chrono::January / 1};
  const auto res_len = static_cast<std::size_t>((res_end - res_start).count());

  const std::size_t n_days = std::clamp<std::size_t>(
      static_cast<std::size_t>(poisson(rng, kDaysMean[t] * std::sqrt(intensity))), 2, 300);
  const std::vector<std::size_t> day_offsets = sample_distinct(rng, obs_len, n_days);

  const bool has_signal = bernoulli(rng, kSignalPrevalence[t]);
  const std::size_t signal_pair = uniform_index(rng, kSignalPairs);
  std::vector<bool> signal_day(n_days, false);
  if (has_signal) {
    // The pair recurs on about a quarter of the patient's days.
    const auto k = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(0.25 * static_cast<double>(n_days))), 2,
                                           n_days);
    for (std::size_t d : sample_distinct(rng, n_days, k)) signal_day[d] = true;
  }

  const double medical_scale = 60.0 * (1.0 + 0.35 * static_cast<double>(t)) * intensity;
  const double pharmacy_scale = 25.0 * (1.0 + 0.30 * static_cast<double>(t)) * intensity;
  const double dx_extra = 0.6 + 0.25 * static_cast<double>(t);
  std::size_t claim_seq = 0;
  const auto claim_id = [&] { return pid + "-c" + std::to_string(++claim_seq); };
  const auto add_amounts = [](ClaimRecord& r, double paid) {
    r.amount_paid = std::max(0.01, to_cents(paid));
    r.amount_billed = to_cents(r.amount_paid * 1.4);
    r.amount_allowed = to_cents(r.amount_paid * 1.15);
  };

  const std::size_t first_medical = out.medical.size();
  for (std::size_t d = 0; d < n_days; ++d) {
    const Day day = obs_start + days{static_cast<int>(day_offsets[d])};
    bool medical = bernoulli(rng, kMedicalDayShare);
    bool pharmacy = bernoulli(rng, kPharmacyDayShare[t]);
    if (signal_day[d]) medical = pharmacy = true;
    if (!medical && !pharmacy) medical = true;

    if (medical) {
      const std::size_t n_claims = std::min(providers.size(), 1 + static_cast<std::size_t>(poisson(rng, kExtraMedicalClaims[t])));
      for (std::size_t p : sample_distinct(rng, providers.size(), n_claims)) {
        ClaimRecord r{pid, claim_id(), providers[p], ClaimKind::medical, day, {}, std::nullopt, std::nullopt, 0, 0, 0};
        const std::size_t n_dx = std::min<std::size_t>(kMaxDxCodes - 2, 1 + static_cast<std::size_t>(poisson(rng, dx_extra)));
        for (std::size_t k = 0; k < n_dx; ++k) {
          std::string code;
          if (!cond.conditions.empty() && bernoulli(rng, kConditionCodeShare)) {
            const std::size_t c = cond.conditions[uniform_index(rng, cond.conditions.size())];
            code = codes.dx[c * kCodesPerCondition + uniform_index(rng, kCodesPerCondition)];
          } else {
            code = codes.dx[noise_dx.sample(rng)];
          }
          if (std::find(r.dx_codes.begin(), r.dx_codes.end(), code) == r.dx_codes.end()) r.dx_codes.push_back(code);
        }
        if (bernoulli(rng, 0.6)) r.px_code = codes.px[noise_px.sample(rng)];
        add_amounts(r, lognormal(rng, std::log(medical_scale), 0.9));
        out.medical.push_back(std::move(r));
      }
      if (signal_day[d]) {
        ClaimRecord r{pid, claim_id(), providers[uniform_index(rng, providers.size())], ClaimKind::medical, day,
                      {codes.signal_dx[signal_pair]}, std::nullopt, std::nullopt, 0, 0, 0};
        add_amounts(r, lognormal(rng, std::log(medical_scale), 0.9));
        out.medical.push_back(std::move(r));
      }
    }
    if (pharmacy) {
      const std::size_t n_fills = 1 + static_cast<std::size_t>(poisson(rng, 0.2 + 0.15 * static_cast<double>(t)));
      for (std::size_t k = 0; k < n_fills; ++k) {
        ClaimRecord r{pid, claim_id(), providers[uniform_index(rng, providers.size())], ClaimKind::pharmacy, day,
                      {}, std::nullopt, std::nullopt, 0, 0, 0};
        if (!cond.chronic.empty() && bernoulli(rng, 0.6)) {
          r.rx_code = codes.rx[cond.chronic[uniform_index(rng, cond.chronic.size())]];
        } else {
          r.rx_code = codes.rx[noise_rx.sample(rng)];
        }
        add_amounts(r, lognormal(rng, std::log(pharmacy_scale), 0.8));
        out.pharmacy.push_back(std::move(r));
      }
      if (signal_day[d]) {
        ClaimRecord r{pid, claim_id(), providers[uniform_index(rng, providers.size())], ClaimKind::pharmacy, day,
                      {}, std::nullopt, codes.signal_rx[signal_pair], 0, 0, 0};
        add_amounts(r, lognormal(rng, std::log(pharmacy_scale), 0.8));
        out.pharmacy.push_back(std::move(r));
      }
    }
  }

  // Every drawn condition (and the disabled flag) is coded at least once so
  // the severity codifier recovers the tier.
  std::vector<std::string> required;
  for (std::size_t c : cond.conditions) required.push_back(codes.dx[c * kCodesPerCondition]);
  if (cond.disabled) required.push_back(codes.dx[kDisabledDx]);
  const std::size_t n_medical = out.medical.size() - first_medical;
  if (n_medical == 0 && !required.empty()) {
    // Only pharmacy days were drawn; attach a coding visit on the first day.
    ClaimRecord r{pid, claim_id(), providers[0], ClaimKind::medical, obs_start + days{static_cast<int>(day_offsets[0])},
                  {}, std::nullopt, std::nullopt, 0, 0, 0};
    add_amounts(r, lognormal(rng, std::log(medical_scale), 0.9));
    out.medical.push_back(std::move(r));
  }
  for (const auto& code : required) {
    const std::size_t span = out.medical.size() - first_medical;
    for (std::size_t attempt = 0; attempt < span; ++attempt) {
      ClaimRecord& r = out.medical[first_medical + (uniform_index(rng, span) + attempt) % span];
      if (std::find(r.dx_codes.begin(), r.dx_codes.end(), code) != r.dx_codes.end()) break;
      const bool signal_claim =
          std::find(codes.signal_dx.begin(), codes.signal_dx.end(), r.dx_codes.empty() ? "" : r.dx_codes[0]) !=
          codes.signal_dx.end();
      if (r.dx_codes.size() < kMaxDxCodes && !signal_claim) {
        r.dx_codes.push_back(code);
        break;
      }
    }
  }

  // Next-year cost.
  const TierCost& tc = config.base_cost[t];
  const double multiplier = has_signal ? 1.0 + 3.0 * config.signal_strength : 1.0;
  const double expected = std::exp(tc.log_mean) * intensity * multiplier;
  const double realised = expected * std::exp(tc.sigma * standard_normal(rng) - 0.5 * tc.sigma * tc.sigma);
  const auto total_cents = static_cast<std::int64_t>(std::llround(realised * 100.0));

  const std::size_t n_result = 2 + static_cast<std::size_t>(poisson(rng, 1.0 + static_cast<double>(tier)));
  std::vector<double> weights(n_result);
  for (double& w : weights) w = 0.05 + uniform01(rng);
  const double weight_sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::int64_t remaining = total_cents;
  const std::vector<std::size_t> result_days = sample_distinct(rng, res_len, n_result);
  for (std::size_t k = 0; k < n_result; ++k) {
    const std::int64_t cents = k + 1 == n_result ? remaining
                                                 : static_cast<std::int64_t>(std::floor(static_cast<double>(total_cents) * weights[k] / weight_sum));
    remaining -= cents;
    const Day day = res_start + days{static_cast<int>(result_days[std::min(k, result_days.size() - 1)])};
    const bool pharmacy = k > 0 && bernoulli(rng, 0.25);
    ClaimRecord r{pid, claim_id(), providers[uniform_index(rng, providers.size())],
                  pharmacy ? ClaimKind::pharmacy : ClaimKind::medical, day, {}, std::nullopt, std::nullopt, 0, 0, 0};
    if (pharmacy) {
      r.rx_code = codes.rx[noise_rx.sample(rng)];
    } else {
      r.dx_codes.push_back(codes.dx[noise_dx.sample(rng)]);
    }
    r.amount_paid = static_cast<double>(cents) / 100.0;
    r.amount_billed = to_cents(r.amount_paid * 1.4);
    r.amount_allowed = to_cents(r.amount_paid * 1.15);
    (pharmacy ? out.pharmacy : out.medical).push_back(std::move(r));
  }

  out.labels.push_back({pid, tier, expected, has_signal});
}

}  // namespace

void SynthConfig::validate() const {
  if (n_patients < 1) throw SynthError("n_patients: must be at least 1");
  double total = 0.0;
  for (double p : severity_mix) {
    if (!(p >= 0.0)) throw SynthError("severity_mix: probabilities must be nonnegative");
    total += p;
  }
  if (std::fabs(total - 1.0) > 1e-9) {
    throw SynthError("severity_mix: probabilities sum to " + std::to_string(total) + ", expected 1");
  }
  if (dx_vocab < kNoiseDxStart + kMinNoiseCodes) {
    throw SynthError("dx_vocab: must be at least " + std::to_string(kNoiseDxStart + kMinNoiseCodes));
  }
  if (px_vocab < 1) throw SynthError("px_vocab: must be at least 1");
  if (rx_vocab < kNoiseRxStart + kMinNoiseCodes) {
    throw SynthError("rx_vocab: must be at least " + std::to_string(kNoiseRxStart + kMinNoiseCodes));
  }
  if (!(signal_strength >= 0.0 && signal_strength <= 1.0)) throw SynthError("signal_strength: must lie in [0, 1]");
  for (const auto& c : base_cost) {
    if (!std::isfinite(c.log_mean) || !(c.sigma >= 0.0)) throw SynthError("base_cost: invalid lognormal parameters");
  }
  if (observation_year < 1900 || observation_year > 2200) throw SynthError("observation_year: out of range");
}

CodeUniverse code_universe(const SynthConfig& config) {
  CodeUniverse u;
  for (std::size_t i = 0; i < config.dx_vocab; ++i) u.dx.push_back(code_name('D', i));
  for (std::size_t i = 0; i < config.px_vocab; ++i) u.px.push_back(code_name('P', i));
  for (std::size_t i = 0; i < config.rx_vocab; ++i) u.rx.push_back(code_name('R', i));
  for (std::size_t k = 0; k < kSignalPairs; ++k) {
    u.signal_dx.push_back(u.dx[kSignalDxStart + k]);
    u.signal_rx.push_back(u.rx[kSignalRxStart + k]);
  }
  return u;
}

ConditionMap synthetic_condition_map(const SynthConfig& config) {
  const CodeUniverse u = code_universe(config);
  ConditionMap map;
  std::size_t c = 0;
  const auto add = [&](const char* name, ConditionCategory category) {
    std::vector<std::string> codes;
    for (std::size_t k = 0; k < kCodesPerCondition; ++k) codes.push_back(u.dx[c * kCodesPerCondition + k]);
    map.add(name, category, codes);
    ++c;
  };
  for (const char* name : kComplexConditions) add(name, ConditionCategory::ccc);
  for (const char* name : kNonComplexConditions) add(name, ConditionCategory::ncc);
  for (const char* name : kFrailtyIndicators) add(name, ConditionCategory::frailty);
  map.add(kDisabledFlag, ConditionCategory::disabled_flag, {u.dx[kDisabledDx]});
  return map;
}

SynthCohort generate_cohort(const SynthConfig& config) {
  config.validate();
  const Generator gen(config);
  const std::vector<int> tiers = assign_tiers(config);
  SynthCohort cohort;
  for (std::size_t i = 0; i < config.n_patients; ++i) gen.patient(i, tiers[i], cohort);
  const auto by_patient_date = [](const ClaimRecord& a, const ClaimRecord& b) {
    return std::tie(a.patient_id, a.service_date) < std::tie(b.patient_id, b.service_date);
  };
  std::stable_sort(cohort.medical.begin(), cohort.medical.end(), by_patient_date);
  std::stable_sort(cohort.pharmacy.begin(), cohort.pharmacy.end(), by_patient_date);
  return cohort;
}

SynthPaths default_synth_paths(const std::filesystem::path& dir) {
  return {dir / "medical_claims.csv", dir / "pharmacy_claims.csv", dir / "labels.csv", dir / "condition_map.csv"};
}

void write_cohort(const SynthCohort& cohort, const SynthConfig& config, const SynthPaths& paths) {
  write_medical_claims(paths.medical, cohort.medical);
  write_pharmacy_claims(paths.pharmacy, cohort.pharmacy);
  write_labels(paths.labels, cohort.labels);
  synthetic_condition_map(config).save(paths.condition_map);
}

void write_labels(const std::filesystem::path& path, const std::vector<PatientLabel>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw SynthError("cannot write labels file " + path.string());
  out << "patient_id,true_tier,true_expected_cost,has_signal\n";
  char buf[64];
  for (const auto& l : labels) {
    std::snprintf(buf, sizeof buf, "%.2f", l.true_expected_cost);
    out << csv::escape(l.patient_id) << ',' << l.true_tier << ',' << buf << ',' << (l.has_signal ? 1 : 0) << '\n';
  }
}

std::vector<PatientLabel> read_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SynthError("cannot open labels file " + path.string());
  std::string line;
  if (!csv::read_line(in, line) || line != "patient_id,true_tier,true_expected_cost,has_signal") {
    throw SynthError("labels file " + path.string() + " has an unexpected header");
  }
  std::vector<PatientLabel> labels;
  std::size_t line_no = 1;
  while (csv::read_line(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = csv::split_line(line);
    if (!f || f->size() != 4) throw SynthError("labels file line " + std::to_string(line_no) + ": expected 4 fields");
    PatientLabel l;
    l.patient_id = (*f)[0];
    l.true_tier = std::stoi((*f)[1]);
    l.true_expected_cost = std::stod((*f)[2]);
    l.has_signal = (*f)[3] == "1";
    labels.push_back(std::move(l));
  }
  return labels;
}

}  // namespace claimcast
