#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "claimcast/claims.hpp"

namespace claimcast::testing {

// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("claimcast-test-" + name)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Day day(int y, unsigned m, unsigned d) {
  return Day{std::chrono::year{y} / std::chrono::month{m} / std::chrono::day{d}};
}

inline ClaimRecord medical(const std::string& pid, const std::string& claim, const std::string& provider, Day date,
                           std::vector<std::string> dx, std::optional<std::string> px, double paid) {
  ClaimRecord r;
  r.patient_id = pid;
  r.claim_id = claim;
  r.provider_id = provider;
  r.kind = ClaimKind::medical;
  r.service_date = date;
  r.dx_codes = std::move(dx);
  r.px_code = std::move(px);
  r.amount_paid = paid;
  r.amount_billed = paid;
  r.amount_allowed = paid;
  return r;
}

inline ClaimRecord pharmacy(const std::string& pid, const std::string& claim, const std::string& provider, Day date,
                            const std::string& rx, double paid) {
  ClaimRecord r;
  r.patient_id = pid;
  r.claim_id = claim;
  r.provider_id = provider;
  r.kind = ClaimKind::pharmacy;
  r.service_date = date;
  r.rx_code = rx;
  r.amount_paid = paid;
  r.amount_billed = paid;
  r.amount_allowed = paid;
  return r;
}

// Patient pt1 of the worked example: claims on d1, d2, d3 from three
// providers, with the only pharmacy claim on d2.
inline std::vector<ClaimRecord> pt1_records() {
  const Day d1 = day(2022, 3, 1), d2 = day(2022, 3, 2), d3 = day(2022, 3, 3);
  return {
      medical("pt1", "clm1", "prov1", d1, {"Dx1", "Dx2", "Dx8"}, "Px4", 120.0),
      medical("pt1", "clm2", "prov1", d2, {"Dx1"}, std::nullopt, 80.0),
      medical("pt1", "clm3", "prov2", d2, {"Dx3"}, "Px1", 60.0),
      pharmacy("pt1", "clm5", "prov3", d2, "Rx1", 12.5),
      medical("pt1", "clm6", "prov2", d3, {"Dx2"}, std::nullopt, 40.0),
      medical("pt1", "clm9", "prov1", day(2023, 2, 1), {"Dx1"}, std::nullopt, 500.0),
  };
}

}  // namespace claimcast::testing
