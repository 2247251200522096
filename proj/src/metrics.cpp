#include "claimcast/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "claimcast/csv.hpp"
#include "claimcast/rng.hpp"

namespace claimcast {

namespace {

void require_same_length(std::size_t a, std::size_t b) {
  if (a != b) throw MetricsError("actuals and predictions differ in length (" + std::to_string(a) + " vs " +
                                 std::to_string(b) + ")");
}

}  // namespace

MapeResult mape(std::span<const double> actuals, std::span<const double> predictions) {
  require_same_length(actuals.size(), predictions.size());
  MapeResult r;
  double total = 0.0;
  for (std::size_t i = 0; i < actuals.size(); ++i) {
    if (actuals[i] > 0.0) {
      total += std::abs(actuals[i] - predictions[i]) / actuals[i];
      ++r.used;
    } else {
      ++r.excluded_zero_actual;
    }
  }
  if (r.used == 0) throw MetricsError("MAPE undefined: no patient has a positive actual cost");
  r.value = 100.0 * total / static_cast<double>(r.used);
  return r;
}

std::int64_t to_cents(double dollars) { return std::llround(dollars * 100.0); }

Monetary monetary(std::span<const double> actuals, std::span<const double> predictions) {
  require_same_length(actuals.size(), predictions.size());
  Monetary m;
  m.n = actuals.size();
  for (std::size_t i = 0; i < actuals.size(); ++i) {
    const std::int64_t diff = to_cents(actuals[i]) - to_cents(predictions[i]);
    if (diff > 0) {
      m.underpay_cents += diff;
    } else {
      m.overpay_cents -= diff;
    }
  }
  m.netpay_cents = m.overpay_cents + m.underpay_cents;
  m.mae = m.n ? static_cast<double>(m.netpay_cents) / 100.0 / static_cast<double>(m.n) : 0.0;
  return m;
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> differences, std::size_t exact_limit) {
  std::vector<double> d;
  for (double x : differences) {
    if (x != 0.0) d.push_back(x);
  }
  WilcoxonResult r;
  r.n_nonzero = d.size();
  if (d.empty()) {
    r.all_zero = true;
    r.p_value = 1.0;
    return r;
  }
  r.below_minimum = d.size() < 5;
  const std::size_t n = d.size();

  // Midranks of |d|, doubled so that tied ranks stay integral.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return std::abs(d[a]) < std::abs(d[b]); });
  std::vector<long> rank2(n);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    const long doubled = static_cast<long>(i + 1 + j + 1);  // 2 * average of ranks i+1..j+1
    for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = doubled;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  long w2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (d[i] > 0) w2 += rank2[i];
  }
  r.w_plus = static_cast<double>(w2) / 2.0;

  if (n <= exact_limit) {
    const long max_sum = std::accumulate(rank2.begin(), rank2.end(), 0L);
    std::vector<double> counts(static_cast<std::size_t>(max_sum) + 1, 0.0);
    counts[0] = 1.0;
    long reach = 0;
    for (long rk : rank2) {
      for (long s = reach; s >= 0; --s) {
        if (counts[static_cast<std::size_t>(s)] != 0.0) counts[static_cast<std::size_t>(s + rk)] += counts[static_cast<std::size_t>(s)];
      }
      reach += rk;
    }
    const double total = std::ldexp(1.0, static_cast<int>(n));
    double lower = 0.0, upper = 0.0;
    for (long s = 0; s <= max_sum; ++s) {
      if (s <= w2) lower += counts[static_cast<std::size_t>(s)];
      if (s >= w2) upper += counts[static_cast<std::size_t>(s)];
    }
    r.exact = true;
    r.p_value = std::min(1.0, 2.0 * std::min(lower, upper) / total);
    return r;
  }

  const double nn = static_cast<double>(n);
  const double mean = nn * (nn + 1.0) / 4.0;
  const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
  r.exact = false;
  if (!(var > 0.0)) {
    r.p_value = 1.0;
    return r;
  }
  const double z = std::max(0.0, std::abs(r.w_plus - mean) - 0.5) / std::sqrt(var);
  r.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return r;
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> errors_a, std::span<const double> errors_b,
                                    std::size_t exact_limit) {
  require_same_length(errors_a.size(), errors_b.size());
  std::vector<double> diff(errors_a.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = errors_a[i] - errors_b[i];
  return wilcoxon_signed_rank(diff, exact_limit);
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw MetricsError("pearson: inputs differ in length");
  if (x.size() < 2) throw MetricsError("pearson: need at least two pairs");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) {
    throw MetricsError(std::string("pearson: zero variance in ") + (sxx > 0.0 ? "y" : "x"));
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<Partition> make_splits(std::size_t n_patients, const SplitPlan& plan) {
  if (n_patients < 10) throw MetricsError("splitting needs at least 10 patients");
  const double sum = plan.fractions[0] + plan.fractions[1] + plan.fractions[2];
  if (std::abs(sum - 1.0) > 1e-9) throw MetricsError("split fractions must sum to 1");
  for (double f : plan.fractions) {
    if (f < 0.0) throw MetricsError("split fractions must be nonnegative");
  }
  const auto n = static_cast<double>(n_patients);
  const auto n_train = static_cast<std::size_t>(std::llround(plan.fractions[0] * n));
  const auto n_val = std::min(n_patients - n_train, static_cast<std::size_t>(std::llround(plan.fractions[1] * n)));
  std::vector<Partition> out;
  for (std::size_t s = 0; s < plan.n_shuffles; ++s) {
    std::vector<std::size_t> idx(n_patients);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(derive_seed(plan.seed, 0x5b117ULL, s));
    shuffle_indices(idx, rng);
    Partition p;
    p.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    p.validation.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                        idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    p.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
    out.push_back(std::move(p));
  }
  return out;
}

std::string_view to_string(GroupBy g) {
  switch (g) {
    case GroupBy::severity: return "severity";
    case GroupBy::entropy_quintile: return "entropy_quintile";
    case GroupBy::cost_level: return "cost_level";
    case GroupBy::need_level: return "need_level";
  }
  return "severity";
}

GroupBy parse_group_by(std::string_view text) {
  for (auto g : {GroupBy::severity, GroupBy::entropy_quintile, GroupBy::cost_level, GroupBy::need_level}) {
    if (to_string(g) == text) return g;
  }
  throw std::invalid_argument("unknown grouping '" + std::string(text) + "'");
}

std::vector<std::string> stratum_labels(GroupBy g) {
  switch (g) {
    case GroupBy::severity: {
      std::vector<std::string> out;
      for (auto s : kAllSeverities) out.emplace_back(to_string(s));
      return out;
    }
    case GroupBy::entropy_quintile: return {"q1", "q2", "q3", "q4", "q5"};
    case GroupBy::cost_level: return {"low_cost", "high_cost"};
    case GroupBy::need_level: return {"low_need", "high_need"};
  }
  return {};
}

namespace {

StratumMetrics metrics_for(const std::string& label, std::span<const PatientPrediction> preds) {
  StratumMetrics m;
  m.stratum = label;
  m.n = preds.size();
  if (preds.empty()) return m;
  std::vector<double> a, p;
  for (const auto& x : preds) {
    a.push_back(x.actual);
    p.push_back(x.predicted);
  }
  m.money = monetary(a, p);
  try {
    const auto r = mape(a, p);
    m.mape = r.value;
    m.mape_excluded = r.excluded_zero_actual;
  } catch (const MetricsError&) {
    m.mape_excluded = preds.size();
  }
  return m;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

std::vector<StratumMetrics> stratified_metrics(std::span<const PatientPrediction> predictions,
                                               const std::map<std::string, StrataAssignment>& strata,
                                               GroupBy group_by) {
  const auto labels = stratum_labels(group_by);
  std::vector<std::vector<PatientPrediction>> groups(labels.size());

  std::size_t high_cost_count = 0;
  std::vector<std::size_t> by_cost;
  if (group_by == GroupBy::cost_level && !predictions.empty()) {
    by_cost.resize(predictions.size());
    std::iota(by_cost.begin(), by_cost.end(), 0);
    std::sort(by_cost.begin(), by_cost.end(), [&](std::size_t a, std::size_t b) {
      if (predictions[a].actual != predictions[b].actual) return predictions[a].actual > predictions[b].actual;
      return predictions[a].patient_id < predictions[b].patient_id;
    });
    high_cost_count = static_cast<std::size_t>(std::ceil(0.05 * static_cast<double>(predictions.size())));
  }
  std::vector<char> is_high_cost(predictions.size(), 0);
  for (std::size_t k = 0; k < high_cost_count; ++k) is_high_cost[by_cost[k]] = 1;

  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& pred = predictions[i];
    std::size_t slot = 0;
    if (group_by == GroupBy::cost_level) {
      slot = is_high_cost[i] ? 1 : 0;
    } else {
      const auto it = strata.find(pred.patient_id);
      if (it == strata.end()) throw MetricsError("patient " + pred.patient_id + " has no stratum assignment");
      const auto& s = it->second;
      switch (group_by) {
        case GroupBy::severity: slot = static_cast<std::size_t>(s.severity) - 1; break;
        case GroupBy::entropy_quintile: slot = static_cast<std::size_t>(std::clamp(s.entropy_quintile, 1, 5) - 1); break;
        case GroupBy::need_level: slot = is_high_need(s.severity) ? 1 : 0; break;
        case GroupBy::cost_level: break;
      }
    }
    groups[slot].push_back(pred);
  }
  std::vector<StratumMetrics> out;
  out.push_back(metrics_for("all", predictions));
  for (std::size_t g = 0; g < labels.size(); ++g) out.push_back(metrics_for(labels[g], groups[g]));
  return out;
}

const SummaryRow* EvaluationReport::find_summary(const std::string& variant, const std::string& stratum) const {
  for (const auto& r : summary) {
    if (r.variant == variant && r.stratum == stratum) return &r;
  }
  return nullptr;
}

const ImprovementRow* EvaluationReport::find_improvement(const std::string& baseline, const std::string& candidate,
                                                         const std::string& stratum) const {
  for (const auto& r : improvements) {
    if (r.baseline == baseline && r.candidate == candidate && r.stratum == stratum) return &r;
  }
  return nullptr;
}

EvaluationReport stratified_report(std::span<const VariantRun> runs, std::span<const StrataAssignment> strata,
                                   GroupBy group_by,
                                   std::span<const std::pair<std::string, std::string>> comparisons) {
  std::map<std::string, StrataAssignment> by_id;
  for (const auto& s : strata) by_id[s.patient_id] = s;

  EvaluationReport report;
  report.group_by = group_by;
  std::vector<std::string> variants;
  for (const auto& run : runs) {
    if (std::find(variants.begin(), variants.end(), run.variant) == variants.end()) variants.push_back(run.variant);
    for (auto& m : stratified_metrics(run.predictions, by_id, group_by)) {
      report.rows.push_back({run.variant, run.shuffle, std::move(m)});
    }
  }

  std::vector<std::string> labels{"all"};
  for (auto& l : stratum_labels(group_by)) labels.push_back(l);

  // (variant, stratum) -> per-shuffle MAPE, keyed by shuffle for pairing.
  std::map<std::pair<std::string, std::string>, std::map<std::size_t, double>> mape_by;
  for (const auto& variant : variants) {
    for (const auto& label : labels) {
      std::vector<double> mapes, maes, under, over, net;
      for (const auto& row : report.rows) {
        if (row.variant != variant || row.metrics.stratum != label || !row.metrics.mape) continue;
        mapes.push_back(*row.metrics.mape);
        mape_by[{variant, label}][row.shuffle] = *row.metrics.mape;
        maes.push_back(row.metrics.money->mae);
        under.push_back(row.metrics.money->underpay());
        over.push_back(row.metrics.money->overpay());
        net.push_back(row.metrics.money->netpay());
      }
      SummaryRow s;
      s.variant = variant;
      s.stratum = label;
      s.shuffles = mapes.size();
      s.mape_mean = mean_of(mapes);
      s.mape_sd = sd_of(mapes);
      s.mae_mean = mean_of(maes);
      s.mae_sd = sd_of(maes);
      s.underpay_mean = mean_of(under);
      s.overpay_mean = mean_of(over);
      s.netpay_mean = mean_of(net);
      report.summary.push_back(s);
    }
  }

  for (const auto& [baseline, candidate] : comparisons) {
    for (const auto& label : labels) {
      const auto& base = mape_by[{baseline, label}];
      const auto& cand = mape_by[{candidate, label}];
      std::vector<double> diffs;
      for (const auto& [shuffle, value] : base) {
        const auto it = cand.find(shuffle);
        if (it != cand.end()) diffs.push_back(value - it->second);
      }
      if (!diffs.empty()) report.improvements.push_back({baseline, candidate, label, mean_of(diffs)});
    }

    std::vector<double> pooled;
    std::map<std::size_t, const VariantRun*> base_runs, cand_runs;
    for (const auto& run : runs) {
      if (run.variant == baseline) base_runs[run.shuffle] = &run;
      if (run.variant == candidate) cand_runs[run.shuffle] = &run;
    }
    for (const auto& [shuffle, base_run] : base_runs) {
      const auto it = cand_runs.find(shuffle);
      if (it == cand_runs.end()) continue;
      std::map<std::string, double> cand_ape;
      for (const auto& p : it->second->predictions) {
        if (p.actual > 0.0) cand_ape[p.patient_id] = std::abs(p.actual - p.predicted) / p.actual;
      }
      std::vector<double> diffs;
      for (const auto& p : base_run->predictions) {
        const auto c = cand_ape.find(p.patient_id);
        if (p.actual > 0.0 && c != cand_ape.end()) {
          diffs.push_back(std::abs(p.actual - p.predicted) / p.actual - c->second);
        }
      }
      pooled.insert(pooled.end(), diffs.begin(), diffs.end());
      const auto w = wilcoxon_signed_rank(diffs);
      report.significance.push_back(
          {baseline, candidate, "shuffle:" + std::to_string(shuffle), w.n_nonzero, w.p_value, w.exact, w.all_zero});
    }
    if (!pooled.empty()) {
      const auto w = wilcoxon_signed_rank(pooled);
      report.significance.push_back({baseline, candidate, "pooled", w.n_nonzero, w.p_value, w.exact, w.all_zero});
    }
    // One pair per shuffle: the overall MAPE of each variant.
    std::vector<double> shuffle_diffs;
    const auto& base_all = mape_by[{baseline, "all"}];
    const auto& cand_all = mape_by[{candidate, "all"}];
    for (const auto& [shuffle, value] : base_all) {
      const auto it = cand_all.find(shuffle);
      if (it != cand_all.end()) shuffle_diffs.push_back(value - it->second);
    }
    if (!shuffle_diffs.empty()) {
      const auto w = wilcoxon_signed_rank(shuffle_diffs);
      report.significance.push_back({baseline, candidate, "shuffles", w.n_nonzero, w.p_value, w.exact, w.all_zero});
    }
  }
  return report;
}

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string num(std::optional<double> v) { return v ? num(*v) : ""; }

}  // namespace

void write_report_csv(const std::filesystem::path& path, const EvaluationReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "variant,shuffle,group_by,stratum,n,mape,mape_excluded,mae,underpay,overpay,netpay\n";
  for (const auto& r : report.rows) {
    const auto& m = r.metrics;
    out << csv::join({r.variant, std::to_string(r.shuffle), std::string(to_string(report.group_by)), m.stratum,
                      std::to_string(m.n), num(m.mape), std::to_string(m.mape_excluded),
                      m.money ? num(m.money->mae) : "", m.money ? num(m.money->underpay()) : "",
                      m.money ? num(m.money->overpay()) : "", m.money ? num(m.money->netpay()) : ""})
        << '\n';
  }
}

void write_report_json(const std::filesystem::path& path, const EvaluationReport& report) {
  nlohmann::ordered_json j;
  j["group_by"] = to_string(report.group_by);
  j["summary"] = nlohmann::ordered_json::array();
  for (const auto& s : report.summary) {
    j["summary"].push_back({{"variant", s.variant},
                            {"stratum", s.stratum},
                            {"shuffles", s.shuffles},
                            {"mape_mean", s.mape_mean},
                            {"mape_sd", s.mape_sd},
                            {"mae_mean", s.mae_mean},
                            {"mae_sd", s.mae_sd},
                            {"underpay_mean", s.underpay_mean},
                            {"overpay_mean", s.overpay_mean},
                            {"netpay_mean", s.netpay_mean}});
  }
  j["improvements"] = nlohmann::ordered_json::array();
  for (const auto& i : report.improvements) {
    j["improvements"].push_back({{"baseline", i.baseline},
                                 {"candidate", i.candidate},
                                 {"stratum", i.stratum},
                                 {"mape_difference", i.mape_difference}});
  }
  j["significance"] = nlohmann::ordered_json::array();
  for (const auto& s : report.significance) {
    j["significance"].push_back({{"baseline", s.baseline},
                                 {"candidate", s.candidate},
                                 {"scope", s.scope},
                                 {"n", s.n},
                                 {"p_value", s.p_value},
                                 {"exact", s.exact},
                                 {"all_zero", s.all_zero}});
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::string format_report_table(const EvaluationReport& report) {
  std::vector<std::string> labels{"all"};
  for (auto& l : stratum_labels(report.group_by)) labels.push_back(l);
  std::vector<std::string> variants;
  for (const auto& s : report.summary) {
    if (std::find(variants.begin(), variants.end(), s.variant) == variants.end()) variants.push_back(s.variant);
  }
  std::ostringstream out;
  out << "MAPE (%) by " << to_string(report.group_by) << ", mean over shuffles\n";
  out << std::left << std::setw(34) << "variant";
  for (const auto& l : labels) out << std::right << std::setw(std::max<int>(10, static_cast<int>(l.size()) + 2)) << l;
  out << '\n';
  auto row = [&](const std::string& name, auto&& value) {
    out << std::left << std::setw(34) << name;
    for (const auto& l : labels) {
      const int w = std::max<int>(10, static_cast<int>(l.size()) + 2);
      const auto v = value(l);
      if (v) {
        out << std::right << std::setw(w) << std::fixed << std::setprecision(1) << *v;
      } else {
        out << std::right << std::setw(w) << "-";
      }
    }
    out << '\n';
  };
  for (const auto& v : variants) {
    row(v, [&](const std::string& l) -> std::optional<double> {
      const auto* s = report.find_summary(v, l);
      if (!s || s->shuffles == 0) return std::nullopt;
      return s->mape_mean;
    });
  }
  for (const auto& imp : report.improvements) {
    if (imp.stratum != "all") continue;
    row("improvement " + imp.candidate + " vs " + imp.baseline, [&](const std::string& l) -> std::optional<double> {
      const auto* i = report.find_improvement(imp.baseline, imp.candidate, l);
      if (!i) return std::nullopt;
      return i->mape_difference;
    });
  }
  for (const auto& s : report.significance) {
    if (s.scope != "pooled") continue;
    out << "Wilcoxon " << s.candidate << " vs " << s.baseline << " (pooled, n=" << s.n << "): p=" << std::scientific
        << std::setprecision(3) << s.p_value << '\n';
  }
  return out.str();
}

}  // namespace claimcast
