#include "claimcast/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "claimcast/csv.hpp"
#include "claimcast/rng.hpp"

namespace claimcast {

namespace {

constexpr std::uint64_t kInitStream = 0x1a17;
constexpr std::uint64_t kBatchStream = 0xba7c;
constexpr std::uint64_t kShuffleSeedStream = 0x5eed;
constexpr const char* kModelMagic = "claimcast-model";
constexpr int kModelVersion = 1;
// Cost inputs are log1p(dollars) divided by this so they share the unit scale
// of the embeddings and the gap feature.
constexpr double kCostInputScale = 10.0;

template <typename E, std::size_t N>
E parse_enum(std::string_view text, const std::array<std::pair<std::string_view, E>, N>& names, const char* what) {
  for (const auto& [name, value] : names) {
    if (name == text) return value;
  }
  throw ModelError(std::string("unknown ") + what + " '" + std::string(text) + "'");
}

constexpr std::array<std::pair<std::string_view, ModelMode>, 3> kModeNames{
    {{"channel_wise", ModelMode::channel_wise}, {"single_channel", ModelMode::single_channel},
     {"per_code", ModelMode::per_code}}};
constexpr std::array<std::pair<std::string_view, EmbeddingMode>, 2> kEmbeddingNames{
    {{"pretrained", EmbeddingMode::pretrained}, {"trainable", EmbeddingMode::trainable}}};
constexpr std::array<std::pair<std::string_view, LossKind>, 2> kLossNames{
    {{"log_mse", LossKind::log_mse}, {"log_mae", LossKind::log_mae}}};

template <typename E, std::size_t N>
std::string_view enum_name(E value, const std::array<std::pair<std::string_view, E>, N>& names) {
  for (const auto& [name, v] : names) {
    if (v == value) return name;
  }
  return "?";
}

bool uses_embedding(const ChannelModel& model, std::size_t channel) {
  const Channel c = model.channels[channel].channel;
  return model.config.mode != ModelMode::per_code && c != Channel::cost;
}

const std::vector<std::string>& event_codes(const ClaimEvent& e, Channel c, std::vector<std::string>& scratch) {
  switch (c) {
    case Channel::dx: return e.dx_codes;
    case Channel::px: return e.px_codes;
    case Channel::rx: return e.rx_codes;
    default:
      scratch = e.dx_codes;
      scratch.insert(scratch.end(), e.px_codes.begin(), e.px_codes.end());
      scratch.insert(scratch.end(), e.rx_codes.begin(), e.rx_codes.end());
      return scratch;
  }
}

std::size_t code_multiplicity(const ClaimEvent& e, const ChannelSpec& spec) {
  std::vector<std::string> scratch;
  const auto& codes = event_codes(e, spec.channel, scratch);
  return static_cast<std::size_t>(std::count(codes.begin(), codes.end(), spec.code));
}

double encode_cost_input(double dollars) { return std::log1p(std::max(0.0, dollars)) / kCostInputScale; }

double target_of(double cost) { return encode_cost(cost); }

// Forward state kept for the reverse pass of one channel.
struct StackTrace {
  std::vector<nn::Vec> inputs;
  std::vector<nn::GruTrace> layers;
  std::vector<std::vector<nn::Vec>> outputs;  // per layer
  nn::AttentionTrace attention;
  nn::Vec attended;
};

nn::Vec embed_step(const StackParams& stack, const ChannelSequence& seq, std::size_t t) {
  const auto& ids = seq.codes[t];
  const std::size_t m = stack.embedding.cols();
  nn::Vec x(m + seq.features[t].size(), 0.0);
  if (!ids.empty()) {
    for (std::int32_t id : ids) {
      const auto row = stack.embedding.row(static_cast<std::size_t>(id));
      for (std::size_t j = 0; j < m; ++j) x[j] += row[j];
    }
    const double inv = 1.0 / static_cast<double>(ids.size());
    for (std::size_t j = 0; j < m; ++j) x[j] *= inv;
  }
  std::copy(seq.features[t].begin(), seq.features[t].end(), x.begin() + static_cast<std::ptrdiff_t>(m));
  return x;
}

nn::Vec run_stack(const ChannelModel& model, std::size_t c, const ChannelSequence& seq, StackTrace* trace,
                  std::vector<double>* weights) {
  const StackParams& stack = model.stacks[c];
  const bool trainable = stack.embedding.size() > 0;
  std::vector<nn::Vec> x;
  x.reserve(seq.features.size());
  for (std::size_t t = 0; t < seq.features.size(); ++t) {
    x.push_back(trainable ? embed_step(stack, seq, t) : seq.features[t]);
  }
  if (x.empty()) throw ModelError("channel " + model.channels[c].name() + " has an empty sequence");
  if (x[0].size() != model.input_dim(c)) {
    throw ModelError("channel " + model.channels[c].name() + ": input width " + std::to_string(x[0].size()) +
                     " does not match the model (" + std::to_string(model.input_dim(c)) + ")");
  }
  static const std::vector<bool> kAllValid;
  std::vector<nn::Vec> h = x;
  if (trace) {
    trace->inputs = x;
    trace->layers.resize(stack.layers.size());
    trace->outputs.clear();
  }
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    h = nn::gru_forward(stack.layers[l], h, kAllValid, trace ? &trace->layers[l] : nullptr);
    if (trace) trace->outputs.push_back(h);
  }
  nn::Vec attended;
  if (model.config.attention) {
    const auto out = nn::attention_forward(stack.attention, h, h.size() - 1, trace ? &trace->attention : nullptr);
    attended = out.attended;
    if (weights) *weights = out.weights;
  } else {
    attended = nn::project_last(stack.attention, h.back());
    if (weights) weights->clear();
  }
  if (trace) trace->attended = attended;
  return attended;
}

void backprop_stack(const ChannelModel& model, std::size_t c, const ChannelSequence& seq, const StackTrace& trace,
                    std::span<const double> d_attended, StackParams& grad) {
  const StackParams& stack = model.stacks[c];
  const std::vector<nn::Vec>& top = trace.outputs.back();
  std::vector<nn::Vec> d_h(top.size(), nn::Vec(top[0].size(), 0.0));
  if (model.config.attention) {
    nn::attention_backward(stack.attention, top, trace.attention, d_attended, grad.attention, d_h);
  } else {
    nn::project_last_backward(stack.attention, top.back(), trace.attended, d_attended, grad.attention, d_h.back());
  }
  for (std::size_t l = stack.layers.size(); l-- > 0;) {
    d_h = nn::gru_backward(stack.layers[l], trace.layers[l], d_h, grad.layers[l]);
  }
  if (stack.embedding.size() == 0) return;
  const std::size_t m = stack.embedding.cols();
  for (std::size_t t = 0; t < seq.codes.size(); ++t) {
    const auto& ids = seq.codes[t];
    if (ids.empty()) continue;
    const double inv = 1.0 / static_cast<double>(ids.size());
    for (std::int32_t id : ids) {
      auto row = grad.embedding.row(static_cast<std::size_t>(id));
      for (std::size_t j = 0; j < m; ++j) row[j] += inv * d_h[t][j];
    }
  }
}

struct ForwardResult {
  double raw = 0.0;
  nn::Vec fused;
  std::vector<StackTrace> traces;
  std::vector<std::vector<double>> weights;
};

ForwardResult forward_impl(const ChannelModel& model, const ChannelInputs& inputs, bool keep_trace) {
  if (inputs.channels.size() != model.channels.size()) {
    throw ModelError("input has " + std::to_string(inputs.channels.size()) + " channels, model expects " +
                     std::to_string(model.channels.size()));
  }
  ForwardResult r;
  r.weights.resize(model.channels.size());
  if (keep_trace) r.traces.resize(model.channels.size());
  for (std::size_t c = 0; c < model.channels.size(); ++c) {
    const nn::Vec a = run_stack(model, c, inputs.channels[c], keep_trace ? &r.traces[c] : nullptr, &r.weights[c]);
    r.fused.insert(r.fused.end(), a.begin(), a.end());
  }
  r.raw = nn::dense_forward(model.head, r.fused)[0];
  return r;
}

double loss_of(LossKind kind, double raw, double target, double* d_raw) {
  const double diff = raw - target;
  if (kind == LossKind::log_mae) {
    if (d_raw) *d_raw = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    return std::abs(diff);
  }
  if (d_raw) *d_raw = 2.0 * diff;
  return diff * diff;
}

void allocate(ChannelModel& model) {
  const ModelConfig& cfg = model.config;
  model.stacks.clear();
  for (std::size_t c = 0; c < model.channels.size(); ++c) {
    StackParams s;
    std::size_t in = model.input_dim(c);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      s.layers.push_back(nn::GruLayerParams::create(in, cfg.hidden_dim, true));
      in = 2 * cfg.hidden_dim;
    }
    s.attention = nn::AttentionParams::create(2 * cfg.hidden_dim, cfg.attention_dim, cfg.attended_dim);
    if (cfg.embedding == EmbeddingMode::trainable && uses_embedding(model, c)) {
      s.embedding = nn::Tensor::matrix(model.vocabularies[c].size(), cfg.embedding_dim);
    }
    model.stacks.push_back(std::move(s));
  }
  model.head = nn::DenseParams::create(model.channels.size() * cfg.attended_dim, 1);
}

std::vector<ChannelSpec> per_code_channels(const ModelConfig& config, std::span<const PatientProfile> training) {
  std::map<std::pair<int, std::string>, std::size_t> counts;
  for (const auto& p : training) {
    for (const auto& e : p.events) {
      for (const auto& code : e.dx_codes) ++counts[{0, code}];
      for (const auto& code : e.px_codes) ++counts[{1, code}];
      for (const auto& code : e.rx_codes) ++counts[{2, code}];
    }
  }
  std::vector<std::pair<std::size_t, std::pair<int, std::string>>> ranked;
  for (const auto& [key, n] : counts) ranked.push_back({n, key});
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  constexpr std::array<Channel, 3> kinds{Channel::dx, Channel::px, Channel::rx};
  std::vector<ChannelSpec> out;
  for (std::size_t i = 0; i < std::min(config.per_code_channels, ranked.size()); ++i) {
    out.push_back({kinds[static_cast<std::size_t>(ranked[i].second.first)], ranked[i].second.second});
  }
  out.push_back({Channel::cost, ""});
  return out;
}

void write_config(std::ostream& out, const ModelConfig& c) {
  out << "mode " << to_string(c.mode) << '\n'
      << "embedding " << to_string(c.embedding) << '\n'
      << "attention " << (c.attention ? 1 : 0) << '\n'
      << "granularity " << to_string(c.granularity) << '\n'
      << "embedding_dim " << c.embedding_dim << '\n'
      << "hidden_dim " << c.hidden_dim << '\n'
      << "layers " << c.layers << '\n'
      << "attention_dim " << c.attention_dim << '\n'
      << "attended_dim " << c.attended_dim << '\n'
      << "sequence_cap " << c.sequence_cap << '\n'
      << "per_code_channels " << c.per_code_channels << '\n'
      << "min_code_count " << c.min_code_count << '\n'
      << "loss " << to_string(c.loss) << '\n'
      << "seed " << c.seed << '\n';
}

}  // namespace

// ---------------------------------------------------------------- names

std::string_view to_string(ModelMode m) { return enum_name(m, kModeNames); }
std::string_view to_string(EmbeddingMode m) { return enum_name(m, kEmbeddingNames); }
std::string_view to_string(LossKind l) { return enum_name(l, kLossNames); }
ModelMode parse_model_mode(std::string_view text) { return parse_enum(text, kModeNames, "model mode"); }
EmbeddingMode parse_embedding_mode(std::string_view text) {
  return parse_enum(text, kEmbeddingNames, "embedding mode");
}
LossKind parse_loss(std::string_view text) { return parse_enum(text, kLossNames, "loss"); }

void ModelConfig::validate() const {
  const auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ModelError(std::string(name) + ": must be positive");
  };
  positive(embedding_dim, "embedding_dim");
  positive(hidden_dim, "hidden_dim");
  positive(layers, "layers");
  positive(attention_dim, "attention_dim");
  positive(attended_dim, "attended_dim");
  positive(sequence_cap, "sequence_cap");
  positive(batch_size, "batch_size");
  positive(threads, "threads");
  if (embedding_dim < 2) throw ModelError("embedding_dim: must be at least 2");
  if (mode == ModelMode::per_code && (per_code_channels == 0 || per_code_channels > kMaxPerCodeChannels)) {
    throw ModelError("per_code_channels: must lie in 1.." + std::to_string(kMaxPerCodeChannels));
  }
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ModelError("learning_rate: must be >= 0");
  if (!(clip_norm > 0.0)) throw ModelError("clip_norm: must be positive");
}

std::string ChannelSpec::name() const {
  std::string n(to_string(channel));
  if (!code.empty()) n += ":" + code;
  return n;
}

std::vector<ChannelSpec> default_channels(ModelMode mode) {
  if (mode == ModelMode::single_channel) return {{Channel::all, ""}};
  return {{Channel::dx, ""}, {Channel::px, ""}, {Channel::rx, ""}, {Channel::cost, ""}};
}

std::vector<Channel> embedded_channels(ModelMode mode) {
  if (mode == ModelMode::single_channel) return {Channel::all};
  if (mode == ModelMode::channel_wise) return {Channel::dx, Channel::px, Channel::rx};
  return {};
}

void StackParams::collect(const std::string& prefix, nn::ParamList& out) {
  for (std::size_t l = 0; l < layers.size(); ++l) layers[l].collect(prefix + ".gru" + std::to_string(l), out);
  attention.collect(prefix + ".attention", out);
  if (embedding.size() > 0) out.push_back({prefix + ".embedding", &embedding});
}

std::size_t ChannelModel::input_dim(std::size_t c) const {
  const Channel ch = channels[c].channel;
  if (ch == Channel::cost) return 3;
  if (config.mode == ModelMode::per_code) return 2;
  if (ch == Channel::all) return config.embedding_dim + 2;
  return config.embedding_dim + 1;
}

nn::ParamList ChannelModel::parameters() {
  nn::ParamList out;
  for (std::size_t c = 0; c < stacks.size(); ++c) stacks[c].collect("channel" + std::to_string(c), out);
  head.collect("head", out);
  return out;
}

ChannelModel ChannelModel::zeros_like() const {
  ChannelModel z = *this;
  nn::zero(z.parameters());
  return z;
}

std::size_t count_parameters(const ChannelModel& model) {
  ChannelModel copy = model;
  return nn::count_scalars(copy.parameters());
}

const EmbeddingTable& EmbeddingTables::at(Channel c) const {
  auto it = by_channel.find(c);
  if (it == by_channel.end()) {
    throw ModelError("no pretrained embedding table for channel " + std::string(to_string(c)));
  }
  return it->second;
}

ChannelModel create_model(const ModelConfig& config, std::span<const PatientProfile> training) {
  config.validate();
  ChannelModel model;
  model.config = config;
  model.channels =
      config.mode == ModelMode::per_code ? per_code_channels(config, training) : default_channels(config.mode);
  model.vocabularies.resize(model.channels.size());
  if (config.embedding == EmbeddingMode::trainable) {
    for (std::size_t c = 0; c < model.channels.size(); ++c) {
      if (!uses_embedding(model, c)) continue;
      const std::vector<EventDocument> docs = channel_corpus(training, model.channels[c].channel);
      std::vector<std::vector<std::string>> bags;
      bags.reserve(docs.size());
      for (const auto& d : docs) bags.push_back(d.codes);
      model.vocabularies[c] = Vocabulary::build(bags, config.min_code_count);
    }
  }
  allocate(model);

  std::mt19937_64 rng(derive_seed(config.seed, kInitStream, 0));
  for (auto& s : model.stacks) {
    for (auto& l : s.layers) l.init(rng);
    s.attention.init(rng);
    if (s.embedding.size() > 0) nn::xavier_init(s.embedding, rng);
  }
  model.head.init(rng);
  double mean_target = 0.0;
  for (const auto& p : training) mean_target += target_of(p.target_cost);
  if (!training.empty()) mean_target /= static_cast<double>(training.size());
  model.head.bias[0] = mean_target;
  return model;
}

double encode_gap(std::int64_t gap) { return std::log1p(static_cast<double>(std::max<std::int64_t>(0, gap))); }
double encode_cost(double dollars) { return std::log1p(std::max(0.0, dollars)); }
double decode_cost(double raw) { return std::max(0.0, std::expm1(raw)); }

ChannelInputs build_channel_inputs(const PatientProfile& profile, const ChannelModel& model,
                                   const EmbeddingTables* tables) {
  if (profile.granularity != model.config.granularity) {
    throw ModelError("profile " + profile.patient_id + " is at " + std::string(to_string(profile.granularity)) +
                     " granularity, model expects " + std::string(to_string(model.config.granularity)));
  }
  const ModelConfig& cfg = model.config;
  ChannelInputs out;
  out.patient_id = profile.patient_id;
  out.target_cost = profile.target_cost;
  std::vector<std::string> scratch;
  for (std::size_t c = 0; c < model.channels.size(); ++c) {
    const ChannelSpec& spec = model.channels[c];
    const bool embedded = uses_embedding(model, c);
    const bool trainable = embedded && cfg.embedding == EmbeddingMode::trainable;
    const EmbeddingTable* table = nullptr;
    if (embedded && !trainable) {
      if (!tables) throw ModelError("pretrained mode needs embedding tables");
      table = &tables->at(spec.channel);
      if (table->dim != cfg.embedding_dim) {
        throw ModelError("embedding table for " + spec.name() + " has dimension " + std::to_string(table->dim) +
                         ", model expects " + std::to_string(cfg.embedding_dim));
      }
    }

    std::vector<ChannelStep> steps;
    if (spec.code.empty()) {
      steps = channel_steps(profile, spec.channel);
    } else {
      std::int64_t prev = 0;
      bool first = true;
      for (std::size_t i = 0; i < profile.events.size(); ++i) {
        if (code_multiplicity(profile.events[i], spec) == 0) continue;
        const std::int64_t b = profile.events[i].bucket;
        steps.push_back({i, first ? 0 : b - prev});
        prev = b;
        first = false;
      }
    }
    if (steps.size() > cfg.sequence_cap) steps.erase(steps.begin(), steps.end() - static_cast<std::ptrdiff_t>(cfg.sequence_cap));

    ChannelSequence seq;
    for (const auto& step : steps) {
      const ClaimEvent& e = profile.events[step.event_index];
      nn::Vec f;
      std::vector<std::int32_t> ids;
      if (spec.channel == Channel::cost) {
        f = {encode_cost_input(e.medical_cost), encode_cost_input(e.pharmacy_cost)};
      } else if (!spec.code.empty()) {
        f = {std::log1p(static_cast<double>(code_multiplicity(e, spec)))};
      } else {
        const auto& codes = event_codes(e, spec.channel, scratch);
        if (trainable) {
          for (const auto& code : codes) ids.push_back(model.vocabularies[c].id(code));
          std::sort(ids.begin(), ids.end());
        } else {
          f = event_vector(*table, event_key(profile.patient_id, e.day), codes);
        }
        if (spec.channel == Channel::all) f.push_back(encode_cost_input(e.total_cost()));
      }
      f.push_back(encode_gap(step.gap));
      seq.features.push_back(std::move(f));
      seq.codes.push_back(std::move(ids));
      seq.days.push_back(e.day);
    }
    if (seq.features.empty()) {
      seq.sentinel = true;
      const std::size_t width = model.input_dim(c) - (trainable ? cfg.embedding_dim : 0);
      seq.features.push_back(nn::Vec(width, 0.0));
      seq.codes.emplace_back();
    }
    out.channels.push_back(std::move(seq));
  }
  return out;
}

std::vector<ChannelInputs> build_all_inputs(std::span<const PatientProfile> profiles, const ChannelModel& model,
                                            const EmbeddingTables* tables) {
  std::vector<ChannelInputs> out;
  out.reserve(profiles.size());
  for (const auto& p : profiles) out.push_back(build_channel_inputs(p, model, tables));
  return out;
}

Prediction forward(const ChannelModel& model, const ChannelInputs& inputs) {
  ForwardResult r = forward_impl(model, inputs, false);
  return {inputs.patient_id, decode_cost(r.raw), r.raw, std::move(r.weights), std::move(r.fused)};
}

double loss_value(const ChannelModel& model, const ChannelInputs& inputs) {
  return loss_of(model.config.loss, forward_impl(model, inputs, false).raw, target_of(inputs.target_cost), nullptr);
}

double loss_and_gradient(const ChannelModel& model, const ChannelInputs& inputs, ChannelModel& grad) {
  const ForwardResult r = forward_impl(model, inputs, true);
  double d_raw = 0.0;
  const double loss = loss_of(model.config.loss, r.raw, target_of(inputs.target_cost), &d_raw);
  nn::Vec d_fused(r.fused.size(), 0.0);
  const nn::Vec d_out{d_raw};
  nn::dense_backward(model.head, r.fused, d_out, grad.head, d_fused);
  const std::size_t width = model.config.attended_dim;
  for (std::size_t c = 0; c < model.channels.size(); ++c) {
    backprop_stack(model, c, inputs.channels[c], r.traces[c],
                   std::span<const double>(d_fused).subspan(c * width, width), grad.stacks[c]);
  }
  return loss;
}

TrainingLog train(ChannelModel& model, std::span<const ChannelInputs> training,
                  std::span<const ChannelInputs> validation) {
  const ModelConfig& cfg = model.config;
  if (training.empty()) throw ModelError("training set is empty");
  const nn::ParamList params = model.parameters();
  nn::Adam adam({cfg.learning_rate, 0.9, 0.999, 1e-8}, params);

  const std::size_t n_threads = std::max<std::size_t>(1, std::min(cfg.threads, cfg.batch_size));
  std::vector<ChannelModel> grads;
  std::vector<nn::ParamList> grad_params;
  for (std::size_t k = 0; k < n_threads; ++k) grads.push_back(model.zeros_like());
  for (auto& g : grads) grad_params.push_back(g.parameters());

  const auto mean_loss = [&](std::span<const ChannelInputs> set) {
    double total = 0.0;
    for (const auto& in : set) total += loss_value(model, in);
    return total / static_cast<double>(set.size());
  };

  TrainingLog log;
  ChannelModel best = model;
  log.best_validation_loss = validation.empty() ? mean_loss(training) : mean_loss(validation);
  std::size_t stale = 0;
  std::vector<std::size_t> order(training.size());
  std::vector<double> batch_losses(n_threads);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(cfg.seed, kBatchStream, epoch));
    shuffle_indices(order, rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::size_t n = end - start;
      const auto work = [&](std::size_t k) {
        nn::zero(grad_params[k]);
        batch_losses[k] = 0.0;
        const std::size_t lo = start + n * k / n_threads, hi = start + n * (k + 1) / n_threads;
        for (std::size_t i = lo; i < hi; ++i) batch_losses[k] += loss_and_gradient(model, training[order[i]], grads[k]);
      };
      if (n_threads == 1) {
        work(0);
      } else {
        std::vector<std::thread> pool;
        for (std::size_t k = 0; k < n_threads; ++k) pool.emplace_back(work, k);
        for (auto& t : pool) t.join();
      }
      double batch_loss = 0.0;
      for (std::size_t k = 0; k < n_threads; ++k) batch_loss += batch_losses[k];
      if (!std::isfinite(batch_loss)) {
        throw ModelError("training diverged: non-finite loss in epoch " + std::to_string(epoch));
      }
      // Fixed-order reduction into the first buffer, then the batch mean.
      for (std::size_t k = 1; k < n_threads; ++k) {
        for (std::size_t p = 0; p < grad_params[0].size(); ++p) {
          auto dst = grad_params[0][p].tensor->data();
          const auto src = grad_params[k][p].tensor->data();
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        }
      }
      const double inv = 1.0 / static_cast<double>(n);
      for (const auto& g : grad_params[0]) {
        for (double& v : g.tensor->data()) v *= inv;
      }
      nn::clip_global_norm(grad_params[0], cfg.clip_norm);
      adam.step(params, grad_params[0]);
      epoch_loss += batch_loss;
    }
    EpochLog entry{epoch, epoch_loss / static_cast<double>(training.size()), 0.0};
    entry.validation_loss = validation.empty() ? mean_loss(training) : mean_loss(validation);
    if (!std::isfinite(entry.validation_loss)) {
      throw ModelError("training diverged: non-finite validation loss in epoch " + std::to_string(epoch));
    }
    log.epochs.push_back(entry);
    if (entry.validation_loss < log.best_validation_loss) {
      log.best_validation_loss = entry.validation_loss;
      log.best_epoch = epoch;
      best = model;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      log.early_stopped = true;
      break;
    }
  }
  model = std::move(best);
  return log;
}

std::vector<AttentionRow> export_attention(const ChannelModel& model, const ChannelInputs& inputs) {
  std::vector<AttentionRow> rows;
  if (!model.config.attention) return rows;
  const Prediction p = forward(model, inputs);
  for (std::size_t c = 0; c < model.channels.size(); ++c) {
    const ChannelSequence& seq = inputs.channels[c];
    if (seq.sentinel) continue;
    const auto& w = p.attention[c];
    for (std::size_t i = 0; i < w.size(); ++i) {
      rows.push_back({inputs.patient_id, model.channels[c].name(), seq.days[i], w[i]});
    }
  }
  return rows;
}

// ---------------------------------------------------------------- checkpoints

void save_model(const ChannelModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ModelError("cannot write model checkpoint " + path.string());
  out << kModelMagic << ' ' << kModelVersion << '\n';
  write_config(out, model.config);
  out << "channels " << model.channels.size() << '\n';
  for (std::size_t c = 0; c < model.channels.size(); ++c) {
    const Vocabulary& v = model.vocabularies[c];
    out << "channel " << model.channels[c].name() << ' ' << v.size() << '\n';
    for (std::size_t i = 0; i < v.size(); ++i) {
      out << v.count(static_cast<std::int32_t>(i)) << '\t' << v.code(static_cast<std::int32_t>(i)) << '\n';
    }
  }
  ChannelModel copy = model;
  nn::write_tensors(out, copy.parameters());
  if (!out) throw ModelError("failed writing model checkpoint " + path.string());
}

ChannelModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelError("cannot open model checkpoint " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != std::string(kModelMagic) + " " + std::to_string(kModelVersion)) {
    throw ModelError(path.string() + " is not a version " + std::to_string(kModelVersion) + " model checkpoint");
  }
  std::map<std::string, std::string> header;
  while (std::getline(in, line)) {
    const auto space = line.find(' ');
    const std::string key = line.substr(0, space);
    if (key == "channels") {
      header[key] = line.substr(space + 1);
      break;
    }
    header[key] = space == std::string::npos ? "" : line.substr(space + 1);
  }
  const auto get = [&](const char* key) {
    auto it = header.find(key);
    if (it == header.end()) throw ModelError("model checkpoint is missing '" + std::string(key) + "'");
    return it->second;
  };
  ChannelModel model;
  ModelConfig& c = model.config;
  try {
    c.mode = parse_model_mode(get("mode"));
    c.embedding = parse_embedding_mode(get("embedding"));
    c.attention = get("attention") == "1";
    c.granularity = parse_granularity(get("granularity"));
    c.embedding_dim = std::stoul(get("embedding_dim"));
    c.hidden_dim = std::stoul(get("hidden_dim"));
    c.layers = std::stoul(get("layers"));
    c.attention_dim = std::stoul(get("attention_dim"));
    c.attended_dim = std::stoul(get("attended_dim"));
    c.sequence_cap = std::stoul(get("sequence_cap"));
    c.per_code_channels = std::stoul(get("per_code_channels"));
    c.min_code_count = std::stoul(get("min_code_count"));
    c.loss = parse_loss(get("loss"));
    c.seed = std::stoull(get("seed"));
  } catch (const std::logic_error& e) {
    throw ModelError("model checkpoint header: " + std::string(e.what()));
  }
  const std::size_t n_channels = std::stoul(get("channels"));
  for (std::size_t k = 0; k < n_channels; ++k) {
    if (!std::getline(in, line)) throw ModelError("model checkpoint truncated in the channel block");
    std::istringstream fields(line);
    std::string tag, name;
    std::size_t vocab_size = 0;
    fields >> tag >> name >> vocab_size;
    if (tag != "channel") throw ModelError("model checkpoint: expected a channel line, found '" + line + "'");
    ChannelSpec spec;
    const auto colon = name.find(':');
    spec.channel = parse_channel(name.substr(0, colon));
    if (colon != std::string::npos) spec.code = name.substr(colon + 1);
    model.channels.push_back(spec);
    std::vector<std::string> codes;
    std::vector<std::uint64_t> counts;
    for (std::size_t i = 0; i < vocab_size; ++i) {
      if (!std::getline(in, line)) throw ModelError("model checkpoint truncated in a vocabulary");
      const auto tab = line.find('\t');
      counts.push_back(std::stoull(line.substr(0, tab)));
      codes.push_back(line.substr(tab + 1));
    }
    model.vocabularies.push_back(vocab_size ? Vocabulary::from_entries(codes, counts) : Vocabulary{});
  }
  if (c.mode != ModelMode::per_code && model.channels != default_channels(c.mode)) {
    std::string found;
    for (const auto& s : model.channels) found += (found.empty() ? "" : ",") + s.name();
    throw ModelError("model checkpoint channel order '" + found + "' does not match the " +
                     std::string(to_string(c.mode)) + " fusion order");
  }
  allocate(model);
  try {
    nn::read_tensors(in, model.parameters());
  } catch (const std::exception& e) {
    throw ModelError("model checkpoint tensors: " + std::string(e.what()));
  }
  return model;
}

void write_predictions(const std::filesystem::path& path, std::span<const PatientPrediction> predictions) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ModelError("cannot write predictions file " + path.string());
  out << "patient_id,predicted_cost,actual_cost\n";
  char buf[96];
  for (const auto& p : predictions) {
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g\n", p.predicted, p.actual);
    out << csv::escape(p.patient_id) << buf;
  }
}

std::vector<PatientPrediction> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ModelError("cannot open predictions file " + path.string());
  std::string line;
  if (!csv::read_line(in, line) || line != "patient_id,predicted_cost,actual_cost") {
    throw ModelError("predictions file " + path.string() + " has an unexpected header");
  }
  std::vector<PatientPrediction> out;
  while (csv::read_line(in, line)) {
    if (line.empty()) continue;
    const auto f = csv::split_line(line);
    if (!f || f->size() != 3) throw ModelError("predictions file: malformed line '" + line + "'");
    out.push_back({(*f)[0], std::stod((*f)[2]), std::stod((*f)[1])});
  }
  return out;
}

void write_attention(const std::filesystem::path& path, std::span<const AttentionRow> rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ModelError("cannot write attention file " + path.string());
  out << "patient_id,channel,day,weight\n";
  char buf[48];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g", r.weight);
    out << csv::escape(r.patient_id) << ',' << csv::escape(r.channel) << ',' << format_date(r.day) << ',' << buf
        << '\n';
  }
}

void write_representations(const std::filesystem::path& path, std::span<const Prediction> predictions) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ModelError("cannot write representation file " + path.string());
  const std::size_t width = predictions.empty() ? 0 : predictions.front().representation.size();
  out << "patient_id";
  for (std::size_t k = 0; k < width; ++k) out << ",v" << k;
  out << '\n';
  char buf[48];
  for (const auto& p : predictions) {
    out << csv::escape(p.patient_id);
    for (double v : p.representation) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << ',' << buf;
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------- ablation

std::string AblationCell::label() const {
  return std::string(to_string(mode)) + "/" + std::string(to_string(embedding)) + "/" +
         (attention ? "attention" : "no_attention") + "/" + std::string(to_string(granularity));
}

std::vector<AblationCell> AblationGrid::cells() const {
  std::vector<AblationCell> out;
  for (Granularity g : granularities) {
    for (ModelMode m : modes) {
      for (EmbeddingMode e : embeddings) {
        for (bool a : attention) out.push_back({m, e, a, g});
      }
    }
  }
  return out;
}

AblationRun run_ablation(std::span<const PatientProfile> profiles, const AblationGrid& grid,
                         const ModelConfig& base, const SplitPlan& plan, const TableSource& tables,
                         const std::function<void(const std::string&)>& progress) {
  const std::vector<AblationCell> cells = grid.cells();
  if (cells.empty()) throw ModelError("ablation grid is empty");
  const std::vector<Partition> splits = make_splits(profiles.size(), plan);
  AblationRun result;

  for (Granularity g : grid.granularities) {
    std::vector<PatientProfile> level;
    level.reserve(profiles.size());
    for (const auto& p : profiles) level.push_back(aggregate_events(p, g));
    std::optional<EmbeddingTables> level_tables;
    // Pretrained inputs do not depend on the split; build them once per mode.
    std::map<ModelMode, std::vector<ChannelInputs>> pretrained_inputs;

    for (const AblationCell& cell : cells) {
      if (cell.granularity != g) continue;
      const std::string label = cell.label();
      for (std::size_t s = 0; s < splits.size(); ++s) {
        if (progress) progress(label + " shuffle " + std::to_string(s + 1) + "/" + std::to_string(splits.size()));
        try {
          ModelConfig cfg = base;
          cfg.mode = cell.mode;
          cfg.embedding = cell.embedding;
          cfg.attention = cell.attention;
          cfg.granularity = g;
          cfg.seed = derive_seed(base.seed, kShuffleSeedStream, s);
          const Partition& part = splits[s];
          std::vector<PatientProfile> train_profiles;
          for (std::size_t i : part.train) train_profiles.push_back(level[i]);
          ChannelModel model = create_model(cfg, train_profiles);
          result.parameter_counts[label] = count_parameters(model);

          const bool needs_tables = cfg.embedding == EmbeddingMode::pretrained && cfg.mode != ModelMode::per_code;
          std::vector<ChannelInputs> fresh;
          const std::vector<ChannelInputs>* inputs = &fresh;
          if (needs_tables) {
            if (!level_tables) level_tables = tables(g);
            auto it = pretrained_inputs.find(cfg.mode);
            if (it == pretrained_inputs.end()) {
              it = pretrained_inputs.emplace(cfg.mode, build_all_inputs(level, model, &*level_tables)).first;
            }
            inputs = &it->second;
          } else {
            fresh = build_all_inputs(level, model, nullptr);
          }
          std::vector<ChannelInputs> tr, va;
          for (std::size_t i : part.train) tr.push_back((*inputs)[i]);
          for (std::size_t i : part.validation) va.push_back((*inputs)[i]);
          train(model, tr, va);

          VariantRun run{label, s, {}};
          for (std::size_t i : part.test) {
            const Prediction p = forward(model, (*inputs)[i]);
            run.predictions.push_back({level[i].patient_id, level[i].target_cost, p.predicted_cost});
          }
          result.runs.push_back(std::move(run));
        } catch (const std::exception& e) {
          result.failures.push_back({label, s, e.what()});
        }
      }
    }
  }
  return result;
}

}  // namespace claimcast
