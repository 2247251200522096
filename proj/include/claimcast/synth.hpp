#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "claimcast/claims.hpp"
#include "claimcast/strata.hpp"

// Synthetic claims cohorts with six severity tiers and a planted same-day
// (diagnosis, medication) pair that multiplies next-year cost.
namespace claimcast {

class SynthError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TierCost {
  double log_mean = 0.0;  // log of the median next-year cost at intensity 1
  double sigma = 0.6;     // lognormal noise of the realised next-year cost
};

struct SynthConfig {
  std::size_t n_patients = 2000;
  std::array<double, 6> severity_mix{0.11, 0.19, 0.26, 0.18, 0.17, 0.09};
  std::size_t dx_vocab = 1600;
  std::size_t px_vocab = 480;
  std::size_t rx_vocab = 800;
  std::uint64_t seed = 1;
  double signal_strength = 0.8;
  std::array<TierCost, 6> base_cost{{{6.6, 0.3}, {7.3, 0.4}, {7.9, 0.5}, {8.4, 0.6}, {8.7, 0.7}, {8.9, 0.8}}};
  int observation_year = 2022;
  std::string id_prefix = "pt";

  // Throws SynthError naming the offending field.
  void validate() const;
};

// Number of planted (dx, rx) signal pairs.
inline constexpr std::size_t kSignalPairs = 4;

struct PatientLabel {
  std::string patient_id;
  int true_tier = 1;  // 1..6 in severity order
  double true_expected_cost = 0.0;
  bool has_signal = false;
};

struct SynthCohort {
  std::vector<ClaimRecord> medical;
  std::vector<ClaimRecord> pharmacy;
  std::vector<PatientLabel> labels;
};

// The code universe depends only on the vocabulary sizes, so cohorts drawn
// with different seeds share codes (needed for embedding transfer).
struct CodeUniverse {
  std::vector<std::string> dx, px, rx;
  std::vector<std::string> signal_dx, signal_rx;  // kSignalPairs each, pairwise aligned
};

CodeUniverse code_universe(const SynthConfig& config);

// The condition map matching the generator's diagnosis codes.
ConditionMap synthetic_condition_map(const SynthConfig& config);

SynthCohort generate_cohort(const SynthConfig& config);

struct SynthPaths {
  std::filesystem::path medical, pharmacy, labels, condition_map;
};

SynthPaths default_synth_paths(const std::filesystem::path& dir);
void write_cohort(const SynthCohort& cohort, const SynthConfig& config, const SynthPaths& paths);

void write_labels(const std::filesystem::path& path, const std::vector<PatientLabel>& labels);
std::vector<PatientLabel> read_labels(const std::filesystem::path& path);

}  // namespace claimcast
