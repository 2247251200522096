#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "claimcast/claims.hpp"
#include "claimcast/nn.hpp"

namespace claimcast {

class EmbeddingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Code vocabulary with frequencies. Id 0 is the UNK bucket collecting codes
// seen fewer than `min_count` times.
class Vocabulary {
 public:
  static constexpr std::int32_t kUnk = 0;
  static constexpr const char* kUnkToken = "<UNK>";

  static Vocabulary build(std::span<const std::vector<std::string>> bags, std::size_t min_count);
  static Vocabulary from_entries(std::vector<std::string> codes, std::vector<std::uint64_t> counts);

  std::int32_t id(const std::string& code) const;
  const std::string& code(std::int32_t id) const { return codes_[static_cast<std::size_t>(id)]; }
  std::uint64_t count(std::int32_t id) const { return counts_[static_cast<std::size_t>(id)]; }
  std::size_t size() const { return codes_.size(); }
  // Ids of the bag in canonical (sorted code) order, UNK entries removed.
  std::vector<std::int32_t> known_ids(std::span<const std::string> bag) const;
  bool operator==(const Vocabulary& o) const { return codes_ == o.codes_ && counts_ == o.counts_; }

 private:
  std::vector<std::string> codes_;
  std::vector<std::uint64_t> counts_;
  std::unordered_map<std::string, std::int32_t> index_;
};

struct EventDocument {
  std::string key;                 // see event_key
  std::vector<std::string> codes;  // unordered bag
};

std::string event_key(const std::string& patient_id, Day day);

// One document per channel event with a nonempty bag. dx/px/rx documents
// hold that channel's codes; `all` holds every code of the event.
std::vector<EventDocument> channel_corpus(std::span<const PatientProfile> profiles, Channel channel);

struct PvDbowOptions {
  std::size_t dim = 64;
  std::size_t epochs = 30;
  std::size_t negatives = 5;
  std::uint64_t seed = 1;
  std::size_t min_count = 2;
  double learning_rate = 0.05;
};

struct EmbeddingTable {
  Channel channel = Channel::dx;
  std::size_t dim = 0;
  Vocabulary vocab;
  nn::Tensor code_weights;  // vocab x dim output vectors
  std::vector<std::string> document_keys;
  nn::Tensor document_vectors;  // documents x dim
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  std::size_t negatives = 0;
  std::size_t min_count = 0;

  std::optional<std::span<const double>> document(const std::string& key) const;
  // Forget the training documents so every lookup goes through inference.
  void drop_documents();
  void rebuild_index();

 private:
  std::unordered_map<std::string, std::size_t> document_index_;
};

// PV-DBOW with negative sampling (unigram^0.75 noise). Serial and
// deterministic given the seed; codes are sorted before sampling.
EmbeddingTable train_pvdbow(Channel channel, std::span<const EventDocument> corpus, const PvDbowOptions& options);

// Fits a fresh document vector against the frozen code weights. Unknown codes
// are ignored; a bag with no known codes maps to the zero vector.
nn::Vec infer_event_vector(const EmbeddingTable& table, std::span<const std::string> codes, std::size_t steps = 20,
                           double learning_rate = 0.025);

// Stored vector when the key was part of training, inferred otherwise.
nn::Vec event_vector(const EmbeddingTable& table, const std::string& key, std::span<const std::string> codes);

// Layout:
//   claimcast-embedding 1
//   channel <name> / dim <m> / vocab <V> / documents <D> / seed / epochs /
//   negatives / min_count      (one "key value" line each)
//   vocabulary                 then V lines "<count>\t<code>"
//   document_keys              then D lines "<key>"
//   matrices                   then V*m and D*m little-endian float64 values
void export_table(const EmbeddingTable& table, const std::filesystem::path& path);
EmbeddingTable import_table(const std::filesystem::path& path, std::optional<std::size_t> expected_dim = std::nullopt);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace claimcast
