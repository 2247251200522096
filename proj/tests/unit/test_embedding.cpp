#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "claimcast/embedding.hpp"
#include "claimcast/synth.hpp"
#include "helpers.hpp"

using namespace claimcast;
using namespace claimcast::testing;

namespace {

// Documents drawn from disjoint code clusters: cluster k uses codes "k:0".."k:19".
std::vector<EventDocument> cluster_corpus(std::size_t clusters, std::size_t docs_per_cluster, std::uint64_t seed,
                                          std::vector<std::size_t>* cluster_of = nullptr) {
  std::mt19937_64 rng(seed);
  std::vector<EventDocument> docs;
  for (std::size_t k = 0; k < clusters; ++k) {
    for (std::size_t d = 0; d < docs_per_cluster; ++d) {
      EventDocument doc;
      doc.key = "c" + std::to_string(k) + "d" + std::to_string(d);
      for (int i = 0; i < 5; ++i) doc.codes.push_back(std::to_string(k) + ":" + std::to_string(rng() % 20));
      docs.push_back(doc);
      if (cluster_of) cluster_of->push_back(k);
    }
  }
  return docs;
}

std::span<const double> doc_vec(const EmbeddingTable& t, std::size_t i) { return t.document_vectors.row(i); }

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  return v[static_cast<std::size_t>(q * static_cast<double>(v.size() - 1))];
}

}  // namespace

TEST_CASE("pvdbow: identical bags end up close, disjoint clusters apart") {
  auto docs = cluster_corpus(4, 50, 21);
  docs.push_back({"twin-a", {"0:1", "0:2", "0:3", "0:4"}});
  docs.push_back({"twin-b", {"0:1", "0:2", "0:3", "0:4"}});
  docs.push_back({"far", {"3:5", "3:6", "3:7", "3:8"}});
  PvDbowOptions opt;
  opt.dim = 16;
  const auto table = train_pvdbow(Channel::dx, docs, opt);

  std::mt19937_64 rng(4);
  std::vector<double> random_pairs;
  const std::size_t n = docs.size();
  for (int i = 0; i < 2000; ++i) {
    const std::size_t a = rng() % n, b = rng() % n;
    if (a != b) random_pairs.push_back(cosine_similarity(doc_vec(table, a), doc_vec(table, b)));
  }
  const auto twin = cosine_similarity(*table.document("twin-a"), *table.document("twin-b"));
  const auto far = cosine_similarity(*table.document("twin-a"), *table.document("far"));
  CHECK(twin > quantile(random_pairs, 0.95));
  CHECK(far < quantile(random_pairs, 0.5));
}

TEST_CASE("pvdbow: same-cluster pairs are more similar under bootstrap") {
  std::vector<std::size_t> cluster;
  const auto docs = cluster_corpus(4, 50, 33, &cluster);
  PvDbowOptions opt;
  opt.dim = 16;
  const auto table = train_pvdbow(Channel::dx, docs, opt);

  std::vector<double> same, cross;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    for (std::size_t j = i + 1; j < docs.size(); ++j) {
      (cluster[i] == cluster[j] ? same : cross).push_back(cosine_similarity(doc_vec(table, i), doc_vec(table, j)));
    }
  }
  std::mt19937_64 rng(6);
  const auto resample_mean = [&rng](const std::vector<double>& v) {
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) s += v[rng() % v.size()];
    return s / static_cast<double>(v.size());
  };
  int wins = 0;
  const int resamples = 200;
  for (int b = 0; b < resamples; ++b) wins += resample_mean(same) > resample_mean(cross) ? 1 : 0;
  CHECK(wins >= resamples * 95 / 100);
}

TEST_CASE("pvdbow: determinism, order invariance and vocabulary") {
  const auto docs = cluster_corpus(2, 10, 8);
  PvDbowOptions opt;
  opt.dim = 2;
  opt.epochs = 1;
  const auto a = train_pvdbow(Channel::rx, docs, opt);
  const auto b = train_pvdbow(Channel::rx, docs, opt);
  CHECK(a.code_weights == b.code_weights);
  CHECK(a.document_vectors == b.document_vectors);

  auto shuffled = docs;
  std::mt19937_64 rng(1);
  for (auto& d : shuffled) std::shuffle(d.codes.begin(), d.codes.end(), rng);
  const auto c = train_pvdbow(Channel::rx, shuffled, opt);
  CHECK(c.document_vectors == a.document_vectors);

  CHECK(a.vocab.code(Vocabulary::kUnk) == Vocabulary::kUnkToken);
  const std::vector<EventDocument> rare{{"x", {"only-once"}}};
  CHECK_THROWS_AS(train_pvdbow(Channel::dx, rare, opt), EmbeddingError);
}

TEST_CASE("pvdbow: channel tables keep their own codes") {
  SynthConfig cfg;
  cfg.n_patients = 100;
  const auto cohort = generate_cohort(cfg);
  std::vector<ClaimRecord> all = cohort.medical;
  all.insert(all.end(), cohort.pharmacy.begin(), cohort.pharmacy.end());
  const auto profiles = build_profiles(all, 2022, 2023).profiles;
  const auto universe = code_universe(cfg);
  for (const auto& doc : channel_corpus(profiles, Channel::rx)) {
    for (const auto& code : doc.codes) {
      CHECK(std::find(universe.rx.begin(), universe.rx.end(), code) != universe.rx.end());
    }
  }
  std::size_t all_codes = 0, split_codes = 0;
  for (const auto& doc : channel_corpus(profiles, Channel::all)) all_codes += doc.codes.size();
  for (Channel c : {Channel::dx, Channel::px, Channel::rx}) {
    for (const auto& doc : channel_corpus(profiles, c)) split_codes += doc.codes.size();
  }
  CHECK(all_codes == split_codes);
}

TEST_CASE("inference: degenerate bags and agreement with training vectors") {
  const auto docs = cluster_corpus(4, 50, 12);
  PvDbowOptions opt;
  opt.dim = 16;
  const auto table = train_pvdbow(Channel::dx, docs, opt);

  const std::vector<std::string> empty;
  CHECK(infer_event_vector(table, empty) == nn::Vec(16, 0.0));
  const std::vector<std::string> unseen{"zz:1", "zz:2"};
  CHECK(infer_event_vector(table, unseen) == nn::Vec(16, 0.0));

  std::size_t close = 0;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const auto v = infer_event_vector(table, docs[i].codes);
    close += cosine_similarity(v, doc_vec(table, i)) >= 0.8 ? 1 : 0;
  }
  CHECK(close * 10 >= docs.size() * 9);

  // event_vector uses the stored row for training keys and inference otherwise.
  const auto stored = event_vector(table, docs[3].key, docs[3].codes);
  CHECK(std::equal(stored.begin(), stored.end(), doc_vec(table, 3).begin()));
  CHECK(event_vector(table, "new-key", docs[3].codes) == infer_event_vector(table, docs[3].codes));
}

TEST_CASE("embedding tables round-trip and check dimensions") {
  TempDir dir("embedding");
  const auto docs = cluster_corpus(2, 20, 2);
  PvDbowOptions opt;
  opt.dim = 8;
  opt.epochs = 2;
  const auto table = train_pvdbow(Channel::px, docs, opt);
  export_table(table, dir / "px.emb");
  const auto back = import_table(dir / "px.emb", 8);
  CHECK(back.channel == Channel::px);
  CHECK(back.vocab == table.vocab);
  CHECK(back.code_weights == table.code_weights);
  CHECK(back.document_vectors == table.document_vectors);
  CHECK(back.document_keys == table.document_keys);

  try {
    import_table(dir / "px.emb", 16);
    FAIL("expected a dimension error");
  } catch (const EmbeddingError& e) {
    const std::string what = e.what();
    CHECK(what.find("16") != std::string::npos);
    CHECK(what.find("8") != std::string::npos);
  }
  write_text(dir / "bad.emb", "claimcast-embedding 99\n");
  CHECK_THROWS_AS(import_table(dir / "bad.emb"), EmbeddingError);

  auto dropped = back;
  dropped.drop_documents();
  CHECK_FALSE(dropped.document(docs[0].key).has_value());
}
