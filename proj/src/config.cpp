#include "claimcast/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace claimcast {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc() || r.ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  }
  return v;
}

std::uint64_t parse_uint(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc() || r.ptr != text.data() + text.size()) {
    throw ConfigError(key + ": expected a nonnegative integer, got '" + text + "'");
  }
  return v;
}

int parse_int(const std::string& key, const std::string& text) {
  int v = 0;
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc() || r.ptr != text.data() + text.size()) {
    throw ConfigError(key + ": expected an integer, got '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "on" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "off" || text == "0" || text == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

template <std::size_t N>
std::array<double, N> parse_array(const std::string& key, const std::string& text) {
  const auto items = split_list(text);
  if (items.size() != N) {
    throw ConfigError(key + ": expected " + std::to_string(N) + " comma-separated values, got " +
                      std::to_string(items.size()));
  }
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = parse_double(key, items[i]);
  return out;
}

template <std::size_t N>
std::string format_array(const std::array<double, N>& a) {
  std::string out;
  for (std::size_t i = 0; i < N; ++i) out += (i ? "," : "") + format_double(a[i]);
  return out;
}

// Wraps enum parsers so their errors name the config key.
template <typename F>
auto parse_named(const std::string& key, const std::string& text, F parse) {
  try {
    return parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

#define CC_PATH(name, member)                                                            \
  {name,                                                                                 \
   {[](const RunConfig& c) { return c.member.string(); },                                \
    [](RunConfig& c, const std::string&, const std::string& v) { c.member = v; }}}
#define CC_UINT(name, member)                                                            \
  {name,                                                                                 \
   {[](const RunConfig& c) { return std::to_string(c.member); },                         \
    [](RunConfig& c, const std::string& k, const std::string& v) {                       \
      c.member = static_cast<decltype(c.member)>(parse_uint(k, v));                      \
    }}}
#define CC_DOUBLE(name, member)                                                          \
  {name,                                                                                 \
   {[](const RunConfig& c) { return format_double(c.member); },                          \
    [](RunConfig& c, const std::string& k, const std::string& v) { c.member = parse_double(k, v); }}}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      CC_PATH("out_dir", out_dir),
      CC_PATH("medical", medical),
      CC_PATH("pharmacy", pharmacy),
      CC_PATH("labels", labels),
      CC_PATH("condition_map", condition_map),
      CC_PATH("embedding_dir", embedding_dir),
      CC_PATH("model", model),
      {"observation_year",
       {[](const RunConfig& c) { return std::to_string(c.observation_year); },
        [](RunConfig& c, const std::string& k, const std::string& v) { c.observation_year = parse_int(k, v); }}},
      {"result_year",
       {[](const RunConfig& c) { return std::to_string(c.result_year); },
        [](RunConfig& c, const std::string& k, const std::string& v) { c.result_year = parse_int(k, v); }}},
      CC_UINT("seed", seed),
      {"serial",
       {[](const RunConfig& c) { return std::string(c.serial ? "true" : "false"); },
        [](RunConfig& c, const std::string& k, const std::string& v) { c.serial = parse_bool(k, v); }}},

      CC_UINT("n_patients", synth.n_patients),
      {"severity_mix",
       {[](const RunConfig& c) { return format_array(c.synth.severity_mix); },
        [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.severity_mix = parse_array<6>(k, v); }}},
      CC_UINT("dx_vocab", synth.dx_vocab),
      CC_UINT("px_vocab", synth.px_vocab),
      CC_UINT("rx_vocab", synth.rx_vocab),
      CC_DOUBLE("signal_strength", synth.signal_strength),

      CC_UINT("pvdbow_epochs", pvdbow.epochs),
      CC_UINT("pvdbow_negatives", pvdbow.negatives),
      CC_UINT("pvdbow_min_count", pvdbow.min_count),
      CC_DOUBLE("pvdbow_learning_rate", pvdbow.learning_rate),

      {"mode",
       {[](const RunConfig& c) { return std::string(to_string(c.model_config.mode)); },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.model_config.mode = parse_named(k, v, parse_model_mode);
        }}},
      {"embedding",
       {[](const RunConfig& c) { return std::string(to_string(c.model_config.embedding)); },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.model_config.embedding = parse_named(k, v, parse_embedding_mode);
        }}},
      {"attention",
       {[](const RunConfig& c) { return std::string(c.model_config.attention ? "true" : "false"); },
        [](RunConfig& c, const std::string& k, const std::string& v) { c.model_config.attention = parse_bool(k, v); }}},
      {"granularity",
       {[](const RunConfig& c) { return std::string(to_string(c.model_config.granularity)); },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.model_config.granularity = parse_named(k, v, parse_granularity);
        }}},
      {"loss",
       {[](const RunConfig& c) { return std::string(to_string(c.model_config.loss)); },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.model_config.loss = parse_named(k, v, parse_loss);
        }}},
      CC_UINT("embedding_dim", model_config.embedding_dim),
      CC_UINT("hidden_dim", model_config.hidden_dim),
      CC_UINT("layers", model_config.layers),
      CC_UINT("attention_dim", model_config.attention_dim),
      CC_UINT("attended_dim", model_config.attended_dim),
      CC_UINT("sequence_cap", model_config.sequence_cap),
      CC_UINT("per_code_channels", model_config.per_code_channels),
      CC_UINT("min_code_count", model_config.min_code_count),
      CC_DOUBLE("learning_rate", model_config.learning_rate),
      CC_DOUBLE("clip_norm", model_config.clip_norm),
      CC_UINT("epochs", model_config.epochs),
      CC_UINT("batch_size", model_config.batch_size),
      CC_UINT("patience", model_config.patience),
      CC_UINT("threads", model_config.threads),

      CC_UINT("shuffles", split.n_shuffles),
      {"fractions",
       {[](const RunConfig& c) { return format_array(c.split.fractions); },
        [](RunConfig& c, const std::string& k, const std::string& v) { c.split.fractions = parse_array<3>(k, v); }}},
      CC_UINT("shuffle", shuffle),
      {"group_by",
       {[](const RunConfig& c) { return std::string(to_string(c.group_by)); },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.group_by = parse_named(k, v, parse_group_by);
        }}},
  };
  return table;
}

#undef CC_PATH
#undef CC_UINT
#undef CC_DOUBLE

std::filesystem::path or_default(const std::filesystem::path& set, const std::filesystem::path& fallback) {
  return set.empty() ? fallback : set;
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& [k, f] : fields()) out.push_back(k);
  return out;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(*this, key, trim(value));
}

std::map<std::string, std::string> RunConfig::snapshot() const {
  std::map<std::string, std::string> out;
  for (const auto& [k, f] : fields()) out[k] = f.get(*this);
  return out;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : snapshot()) out += k + " = " + v + "\n";
  return out;
}

void RunConfig::validate() const {
  if (result_year != observation_year + 1) {
    throw ConfigError("result_year: must be observation_year + 1 (" + std::to_string(observation_year + 1) + ")");
  }
  if (out_dir.empty()) throw ConfigError("out_dir: must not be empty");
  try {
    synth.validate();
  } catch (const SynthError& e) {
    throw ConfigError(e.what());
  }
  if (pvdbow.epochs == 0) throw ConfigError("pvdbow_epochs: must be positive");
  if (pvdbow.negatives == 0) throw ConfigError("pvdbow_negatives: must be positive");
  if (!(pvdbow.learning_rate > 0.0)) throw ConfigError("pvdbow_learning_rate: must be positive");
  try {
    model_config.validate();
  } catch (const ModelError& e) {
    throw ConfigError(e.what());
  }
  if (split.n_shuffles == 0) throw ConfigError("shuffles: must be positive");
  double sum = 0.0;
  for (double f : split.fractions) {
    if (!(f > 0.0)) throw ConfigError("fractions: every fraction must be positive");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("fractions: must sum to 1, got " + format_double(sum));
  if (shuffle >= split.n_shuffles) {
    throw ConfigError("shuffle: must be below shuffles (" + std::to_string(split.n_shuffles) + ")");
  }
}

void RunConfig::propagate_seed() {
  synth.seed = seed;
  pvdbow.seed = seed;
  pvdbow.dim = model_config.embedding_dim;
  model_config.seed = seed;
  split.seed = seed;
  synth.observation_year = observation_year;
  if (serial) model_config.threads = 1;
}

std::filesystem::path RunConfig::medical_path() const { return or_default(medical, data_dir() / "medical.csv"); }
std::filesystem::path RunConfig::pharmacy_path() const { return or_default(pharmacy, data_dir() / "pharmacy.csv"); }
std::filesystem::path RunConfig::labels_path() const { return or_default(labels, data_dir() / "labels.csv"); }
std::filesystem::path RunConfig::condition_map_path() const {
  return or_default(condition_map, data_dir() / "condition_map.csv");
}
std::filesystem::path RunConfig::embeddings_path() const { return or_default(embedding_dir, out_dir / "embeddings"); }
std::filesystem::path RunConfig::model_path() const { return or_default(model, out_dir / "model" / "model.ckpt"); }

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(number) + ": expected 'key = value'");
    }
    try {
      base.set(trim(body.substr(0, eq)), body.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return base;
}

}  // namespace claimcast
