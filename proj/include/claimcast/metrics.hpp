#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "claimcast/strata.hpp"

namespace claimcast {

class MetricsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct MapeResult {
  double value = 0.0;  // percent
  std::size_t used = 0;
  std::size_t excluded_zero_actual = 0;
};

// Patients with a zero actual are excluded and counted; all-zero actuals throw.
MapeResult mape(std::span<const double> actuals, std::span<const double> predictions);

// Money is accumulated in integer cents so that the partition identities
// (Netpay = Overpay + Underpay, additivity over strata) hold exactly.
std::int64_t to_cents(double dollars);

struct Monetary {
  std::size_t n = 0;
  std::int64_t underpay_cents = 0;
  std::int64_t overpay_cents = 0;
  std::int64_t netpay_cents = 0;
  double mae = 0.0;  // dollars; netpay / n

  double underpay() const { return static_cast<double>(underpay_cents) / 100.0; }
  double overpay() const { return static_cast<double>(overpay_cents) / 100.0; }
  double netpay() const { return static_cast<double>(netpay_cents) / 100.0; }
};

Monetary monetary(std::span<const double> actuals, std::span<const double> predictions);

struct WilcoxonResult {
  double p_value = 1.0;  // two-sided
  double w_plus = 0.0;   // rank sum of positive differences
  std::size_t n_nonzero = 0;
  bool exact = true;
  bool all_zero = false;       // every difference was zero; p = 1 by convention
  bool below_minimum = false;  // fewer than five nonzero differences
};

// Zero differences are dropped. Exact null distribution (midranks for ties)
// up to `exact_limit` nonzero differences, normal approximation with tie and
// continuity corrections above.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> differences, std::size_t exact_limit = 25);
WilcoxonResult wilcoxon_signed_rank(std::span<const double> errors_a, std::span<const double> errors_b,
                                    std::size_t exact_limit = 25);

double pearson(std::span<const double> x, std::span<const double> y);

struct SplitPlan {
  std::uint64_t seed = 1;
  std::size_t n_shuffles = 20;
  std::array<double, 3> fractions{0.6, 0.2, 0.2};  // train, validation, test
};

struct Partition {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

// Partitions indices 0..n-1 independently for each shuffle.
std::vector<Partition> make_splits(std::size_t n_patients, const SplitPlan& plan);

struct PatientPrediction {
  std::string patient_id;
  double actual = 0.0;
  double predicted = 0.0;
};

enum class GroupBy { severity, entropy_quintile, cost_level, need_level };

std::string_view to_string(GroupBy g);
GroupBy parse_group_by(std::string_view text);
std::vector<std::string> stratum_labels(GroupBy g);

struct StratumMetrics {
  std::string stratum;
  std::size_t n = 0;
  std::optional<double> mape;
  std::size_t mape_excluded = 0;
  std::optional<Monetary> money;
};

// Returns the overall row ("all") followed by one row per stratum label, in
// label order. High cost means the top 5% of `predictions` by actual cost.
std::vector<StratumMetrics> stratified_metrics(std::span<const PatientPrediction> predictions,
                                               const std::map<std::string, StrataAssignment>& strata,
                                               GroupBy group_by);

struct VariantRun {
  std::string variant;
  std::size_t shuffle = 0;
  std::vector<PatientPrediction> predictions;
};

struct ReportRow {
  std::string variant;
  std::size_t shuffle = 0;
  StratumMetrics metrics;
};

struct SummaryRow {
  std::string variant;
  std::string stratum;
  std::size_t shuffles = 0;
  double mape_mean = 0.0;
  double mape_sd = 0.0;
  double mae_mean = 0.0;
  double mae_sd = 0.0;
  double underpay_mean = 0.0;
  double overpay_mean = 0.0;
  double netpay_mean = 0.0;
};

struct ImprovementRow {
  std::string baseline;
  std::string candidate;
  std::string stratum;
  double mape_difference = 0.0;  // baseline minus candidate, percentage points
};

struct SignificanceRow {
  std::string baseline;
  std::string candidate;
  std::string scope;  // "shuffle:<k>", "pooled", or "shuffles" (paired per-shuffle MAPE)
  std::size_t n = 0;
  double p_value = 1.0;
  bool exact = false;
  bool all_zero = false;
};

struct EvaluationReport {
  GroupBy group_by = GroupBy::severity;
  std::vector<ReportRow> rows;
  std::vector<SummaryRow> summary;
  std::vector<ImprovementRow> improvements;
  std::vector<SignificanceRow> significance;

  const SummaryRow* find_summary(const std::string& variant, const std::string& stratum) const;
  const ImprovementRow* find_improvement(const std::string& baseline, const std::string& candidate,
                                         const std::string& stratum) const;
};

// Wilcoxon pairs are per-patient absolute percentage errors within a shuffle;
// the pooled test concatenates the pairs of every shuffle, and the "shuffles"
// test pairs the two variants' overall MAPE per shuffle.
EvaluationReport stratified_report(std::span<const VariantRun> runs, std::span<const StrataAssignment> strata,
                                   GroupBy group_by,
                                   std::span<const std::pair<std::string, std::string>> comparisons);

void write_report_csv(const std::filesystem::path& path, const EvaluationReport& report);
void write_report_json(const std::filesystem::path& path, const EvaluationReport& report);
std::string format_report_table(const EvaluationReport& report);

}  // namespace claimcast
