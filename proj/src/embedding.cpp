#include "claimcast/embedding.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "claimcast/rng.hpp"

namespace claimcast {

namespace {

constexpr const char* kMagic = "claimcast-embedding";
constexpr int kVersion = 1;
constexpr std::uint64_t kEpochStream = 0xe90c;
constexpr std::uint64_t kInitStream = 0x1417;

std::vector<std::string> sorted_bag(std::span<const std::string> bag) {
  std::vector<std::string> out(bag.begin(), bag.end());
  std::sort(out.begin(), out.end());
  return out;
}

// Cumulative unigram^0.75 weights over ids 1..V-1 for negative sampling.
class NoiseSampler {
 public:
  explicit NoiseSampler(const Vocabulary& vocab) {
    double total = 0.0;
    for (std::size_t id = 1; id < vocab.size(); ++id) {
      total += std::pow(static_cast<double>(vocab.count(static_cast<std::int32_t>(id))), 0.75);
      cumulative_.push_back(total);
    }
    for (double& c : cumulative_) c /= total;
  }

  std::int32_t sample(std::mt19937_64& rng) const {
    const double u = uniform01(rng);
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    const auto pos = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()), cumulative_.size() - 1);
    return static_cast<std::int32_t>(pos + 1);
  }

 private:
  std::vector<double> cumulative_;
};

// One negative-sampling update of `doc` towards predicting `target`. The
// document gradient is accumulated into `doc_grad`; code rows are updated in
// `trainable` when it is non-null (it aliases `code_weights` during training).
void train_pair(std::span<const double> doc, std::int32_t target, std::size_t negatives, const NoiseSampler& noise,
                const nn::Tensor& code_weights, nn::Tensor* trainable, double alpha, std::mt19937_64& rng,
                std::span<double> doc_grad) {
  const std::size_t m = doc.size();
  for (std::size_t k = 0; k <= negatives; ++k) {
    std::int32_t code = target;
    double label = 1.0;
    if (k > 0) {
      code = noise.sample(rng);
      if (code == target) continue;
      label = 0.0;
    }
    const auto row = code_weights.row(static_cast<std::size_t>(code));
    double f = 0.0;
    for (std::size_t j = 0; j < m; ++j) f += doc[j] * row[j];
    const double g = (label - nn::sigmoid(f)) * alpha;
    for (std::size_t j = 0; j < m; ++j) doc_grad[j] += g * row[j];
    if (trainable) {
      auto out = trainable->row(static_cast<std::size_t>(code));
      for (std::size_t j = 0; j < m; ++j) out[j] += g * doc[j];
    }
  }
}

std::uint64_t bag_hash(std::span<const std::int32_t> ids) {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (std::int32_t id : ids) h = splitmix64(h ^ static_cast<std::uint64_t>(id));
  return h;
}

void write_doubles(std::ostream& out, std::span<const double> values) {
  static_assert(std::endian::native == std::endian::little, "table files are little-endian");
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
}

void read_doubles(std::istream& in, std::span<double> values, const std::string& what) {
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != values.size() * sizeof(double)) {
    throw EmbeddingError("embedding table truncated in " + what);
  }
}

std::string expect_line(std::istream& in, const std::string& what) {
  std::string line;
  if (!std::getline(in, line)) throw EmbeddingError("embedding table truncated before " + what);
  return line;
}

std::uint64_t header_value(std::istream& in, const std::string& key) {
  const std::string line = expect_line(in, key);
  std::istringstream fields(line);
  std::string name;
  std::uint64_t value = 0;
  if (!(fields >> name >> value) || name != key) {
    throw EmbeddingError("embedding table header: expected '" + key + "', found '" + line + "'");
  }
  return value;
}

}  // namespace

// ---------------------------------------------------------------- vocabulary

Vocabulary Vocabulary::build(std::span<const std::vector<std::string>> bags, std::size_t min_count) {
  std::map<std::string, std::uint64_t> counts;
  for (const auto& bag : bags) {
    for (const auto& code : bag) ++counts[code];
  }
  std::vector<std::string> codes{kUnkToken};
  std::vector<std::uint64_t> freq{0};
  for (const auto& [code, n] : counts) {
    if (n >= min_count) {
      codes.push_back(code);
      freq.push_back(n);
    } else {
      freq[0] += n;
    }
  }
  return from_entries(std::move(codes), std::move(freq));
}

Vocabulary Vocabulary::from_entries(std::vector<std::string> codes, std::vector<std::uint64_t> counts) {
  if (codes.size() != counts.size() || codes.empty() || codes[0] != kUnkToken) {
    throw EmbeddingError("vocabulary must start with " + std::string(kUnkToken) + " and have one count per code");
  }
  Vocabulary v;
  v.codes_ = std::move(codes);
  v.counts_ = std::move(counts);
  for (std::size_t i = 0; i < v.codes_.size(); ++i) {
    if (!v.index_.emplace(v.codes_[i], static_cast<std::int32_t>(i)).second) {
      throw EmbeddingError("duplicate vocabulary code '" + v.codes_[i] + "'");
    }
  }
  return v;
}

std::int32_t Vocabulary::id(const std::string& code) const {
  auto it = index_.find(code);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<std::int32_t> Vocabulary::known_ids(std::span<const std::string> bag) const {
  std::vector<std::int32_t> ids;
  for (const auto& code : sorted_bag(bag)) {
    const std::int32_t i = id(code);
    if (i != kUnk) ids.push_back(i);
  }
  return ids;
}

// ---------------------------------------------------------------- corpus

std::string event_key(const std::string& patient_id, Day day) { return patient_id + "@" + format_date(day); }

std::vector<EventDocument> channel_corpus(std::span<const PatientProfile> profiles, Channel channel) {
  if (channel == Channel::cost) throw EmbeddingError("the cost channel has no codes to embed");
  std::vector<EventDocument> docs;
  for (const auto& profile : profiles) {
    for (const auto& step : channel_steps(profile, channel)) {
      const ClaimEvent& e = profile.events[step.event_index];
      EventDocument doc{event_key(profile.patient_id, e.day), {}};
      switch (channel) {
        case Channel::dx: doc.codes = e.dx_codes; break;
        case Channel::px: doc.codes = e.px_codes; break;
        case Channel::rx: doc.codes = e.rx_codes; break;
        default:
          doc.codes = e.dx_codes;
          doc.codes.insert(doc.codes.end(), e.px_codes.begin(), e.px_codes.end());
          doc.codes.insert(doc.codes.end(), e.rx_codes.begin(), e.rx_codes.end());
          break;
      }
      if (!doc.codes.empty()) docs.push_back(std::move(doc));
    }
  }
  return docs;
}

// ---------------------------------------------------------------- table

std::optional<std::span<const double>> EmbeddingTable::document(const std::string& key) const {
  auto it = document_index_.find(key);
  if (it == document_index_.end()) return std::nullopt;
  return document_vectors.row(it->second);
}

void EmbeddingTable::drop_documents() {
  document_keys.clear();
  document_vectors = nn::Tensor::matrix(0, dim);
  document_index_.clear();
}

void EmbeddingTable::rebuild_index() {
  document_index_.clear();
  for (std::size_t i = 0; i < document_keys.size(); ++i) {
    if (!document_index_.emplace(document_keys[i], i).second) {
      throw EmbeddingError("duplicate document key '" + document_keys[i] + "'");
    }
  }
}

EmbeddingTable train_pvdbow(Channel channel, std::span<const EventDocument> corpus, const PvDbowOptions& options) {
  if (corpus.empty()) throw EmbeddingError("PV-DBOW corpus is empty");
  if (options.dim < 2) throw EmbeddingError("embedding dimension must be at least 2");

  std::vector<std::vector<std::string>> bags;
  bags.reserve(corpus.size());
  for (const auto& doc : corpus) bags.push_back(doc.codes);

  EmbeddingTable table;
  table.channel = channel;
  table.dim = options.dim;
  table.vocab = Vocabulary::build(bags, options.min_count);
  if (table.vocab.size() <= 1) {
    throw EmbeddingError("vocabulary is empty after the min-count filter (min_count=" +
                         std::to_string(options.min_count) + ")");
  }
  table.seed = options.seed;
  table.epochs = options.epochs;
  table.negatives = options.negatives;
  table.min_count = options.min_count;

  const std::size_t m = options.dim;
  const std::size_t n_docs = corpus.size();
  table.code_weights = nn::Tensor::matrix(table.vocab.size(), m);
  table.document_vectors = nn::Tensor::matrix(n_docs, m);
  table.document_keys.reserve(n_docs);
  for (const auto& doc : corpus) table.document_keys.push_back(doc.key);
  table.rebuild_index();

  std::mt19937_64 init_rng(derive_seed(options.seed, kInitStream, 0));
  for (double& v : table.document_vectors.data()) v = (uniform01(init_rng) - 0.5) / static_cast<double>(m);

  std::vector<std::vector<std::int32_t>> ids(n_docs);
  std::size_t words_per_epoch = 0;
  for (std::size_t d = 0; d < n_docs; ++d) {
    ids[d] = table.vocab.known_ids(corpus[d].codes);
    words_per_epoch += ids[d].size();
  }
  const double total_words = static_cast<double>(std::max<std::size_t>(1, words_per_epoch * options.epochs));

  const NoiseSampler noise(table.vocab);
  std::vector<std::size_t> order(n_docs);
  std::vector<double> grad(m);
  std::size_t processed = 0;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::mt19937_64 rng(derive_seed(options.seed, kEpochStream, epoch));
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_indices(order, rng);
    for (std::size_t d : order) {
      auto doc = table.document_vectors.row(d);
      for (std::int32_t code : ids[d]) {
        const double alpha =
            options.learning_rate * std::max(1e-4, 1.0 - static_cast<double>(processed) / total_words);
        std::fill(grad.begin(), grad.end(), 0.0);
        train_pair(doc, code, options.negatives, noise, table.code_weights, &table.code_weights, alpha, rng, grad);
        for (std::size_t j = 0; j < m; ++j) doc[j] += grad[j];
        ++processed;
      }
    }
  }
  // Documents without a known code never trained; they carry the zero vector,
  // matching what inference returns for such a bag.
  for (std::size_t d = 0; d < n_docs; ++d) {
    if (ids[d].empty()) std::ranges::fill(table.document_vectors.row(d), 0.0);
  }
  return table;
}

nn::Vec infer_event_vector(const EmbeddingTable& table, std::span<const std::string> codes, std::size_t steps,
                           double learning_rate) {
  const std::size_t m = table.dim;
  nn::Vec doc(m, 0.0);
  const std::vector<std::int32_t> ids = table.vocab.known_ids(codes);
  if (ids.empty() || table.vocab.size() <= 1) return doc;

  std::mt19937_64 rng(derive_seed(table.seed, bag_hash(ids), 0));
  for (double& v : doc) v = (uniform01(rng) - 0.5) / static_cast<double>(m);

  const NoiseSampler noise(table.vocab);
  std::vector<double> grad(m);
  const double total = static_cast<double>(steps * ids.size());
  std::size_t processed = 0;
  for (std::size_t step = 0; step < steps; ++step) {
    for (std::int32_t code : ids) {
      const double alpha = learning_rate * std::max(1e-4, 1.0 - static_cast<double>(processed) / total);
      std::fill(grad.begin(), grad.end(), 0.0);
      train_pair(doc, code, table.negatives, noise, table.code_weights, nullptr, alpha, rng, grad);
      for (std::size_t j = 0; j < m; ++j) doc[j] += grad[j];
      ++processed;
    }
  }
  return doc;
}

nn::Vec event_vector(const EmbeddingTable& table, const std::string& key, std::span<const std::string> codes) {
  if (auto stored = table.document(key)) return nn::Vec(stored->begin(), stored->end());
  return infer_event_vector(table, codes);
}

// ---------------------------------------------------------------- files

void export_table(const EmbeddingTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw EmbeddingError("cannot write embedding table " + path.string());
  out << kMagic << ' ' << kVersion << '\n'
      << "channel " << to_string(table.channel) << '\n'
      << "dim " << table.dim << '\n'
      << "vocab " << table.vocab.size() << '\n'
      << "documents " << table.document_keys.size() << '\n'
      << "seed " << table.seed << '\n'
      << "epochs " << table.epochs << '\n'
      << "negatives " << table.negatives << '\n'
      << "min_count " << table.min_count << '\n'
      << "vocabulary\n";
  for (std::size_t i = 0; i < table.vocab.size(); ++i) {
    const std::string& code = table.vocab.code(static_cast<std::int32_t>(i));
    if (code.find('\n') != std::string::npos) throw EmbeddingError("code contains a newline: " + code);
    out << table.vocab.count(static_cast<std::int32_t>(i)) << '\t' << code << '\n';
  }
  out << "document_keys\n";
  for (const auto& key : table.document_keys) out << key << '\n';
  out << "matrices\n";
  write_doubles(out, table.code_weights.data());
  write_doubles(out, table.document_vectors.data());
  if (!out) throw EmbeddingError("failed writing embedding table " + path.string());
}

EmbeddingTable import_table(const std::filesystem::path& path, std::optional<std::size_t> expected_dim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw EmbeddingError("cannot open embedding table " + path.string());

  const std::string magic_line = expect_line(in, "magic");
  std::istringstream magic_fields(magic_line);
  std::string magic;
  int version = 0;
  if (!(magic_fields >> magic >> version) || magic != kMagic) {
    throw EmbeddingError(path.string() + " is not an embedding table");
  }
  if (version != kVersion) {
    throw EmbeddingError("embedding table version mismatch: expected " + std::to_string(kVersion) + ", found " +
                         std::to_string(version));
  }

  EmbeddingTable table;
  {
    const std::string line = expect_line(in, "channel");
    if (line.rfind("channel ", 0) != 0) throw EmbeddingError("embedding table header: expected 'channel'");
    table.channel = parse_channel(line.substr(8));
  }
  table.dim = header_value(in, "dim");
  if (expected_dim && *expected_dim != table.dim) {
    throw EmbeddingError("embedding dimension mismatch in " + path.string() + ": expected " +
                         std::to_string(*expected_dim) + ", found " + std::to_string(table.dim));
  }
  const std::size_t vocab_size = header_value(in, "vocab");
  const std::size_t n_docs = header_value(in, "documents");
  table.seed = header_value(in, "seed");
  table.epochs = header_value(in, "epochs");
  table.negatives = header_value(in, "negatives");
  table.min_count = header_value(in, "min_count");

  if (expect_line(in, "vocabulary") != "vocabulary") throw EmbeddingError("embedding table: missing vocabulary block");
  std::vector<std::string> codes;
  std::vector<std::uint64_t> counts;
  for (std::size_t i = 0; i < vocab_size; ++i) {
    const std::string line = expect_line(in, "vocabulary entry");
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw EmbeddingError("embedding table: malformed vocabulary line '" + line + "'");
    counts.push_back(std::stoull(line.substr(0, tab)));
    codes.push_back(line.substr(tab + 1));
  }
  table.vocab = Vocabulary::from_entries(std::move(codes), std::move(counts));

  if (expect_line(in, "document_keys") != "document_keys") {
    throw EmbeddingError("embedding table: missing document_keys block");
  }
  for (std::size_t i = 0; i < n_docs; ++i) table.document_keys.push_back(expect_line(in, "document key"));
  if (expect_line(in, "matrices") != "matrices") throw EmbeddingError("embedding table: missing matrices block");

  table.code_weights = nn::Tensor::matrix(vocab_size, table.dim);
  table.document_vectors = nn::Tensor::matrix(n_docs, table.dim);
  read_doubles(in, table.code_weights.data(), "code weights");
  read_doubles(in, table.document_vectors.data(), "document vectors");
  for (double v : table.code_weights.data()) {
    if (!std::isfinite(v)) throw EmbeddingError("embedding table holds a non-finite code weight");
  }
  table.rebuild_index();
  return table;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

}  // namespace claimcast
