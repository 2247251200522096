#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "claimcast/claims.hpp"
#include "claimcast/embedding.hpp"
#include "claimcast/metrics.hpp"
#include "claimcast/nn.hpp"

// Channel-wise next-year cost model: one BiGRU stack with attention per input
// channel, fused by concatenation in a fixed order into a dense output head.
namespace claimcast {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ModelMode { channel_wise, single_channel, per_code };
enum class EmbeddingMode { pretrained, trainable };
enum class LossKind { log_mse, log_mae };

std::string_view to_string(ModelMode m);
std::string_view to_string(EmbeddingMode m);
std::string_view to_string(LossKind l);
ModelMode parse_model_mode(std::string_view text);
EmbeddingMode parse_embedding_mode(std::string_view text);
LossKind parse_loss(std::string_view text);

// Per-code mode gives each of the most frequent codes its own channel; it is
// limited to this many codes.
inline constexpr std::size_t kMaxPerCodeChannels = 32;

struct ModelConfig {
  ModelMode mode = ModelMode::channel_wise;
  EmbeddingMode embedding = EmbeddingMode::pretrained;
  bool attention = true;
  Granularity granularity = Granularity::day;
  std::size_t embedding_dim = 64;  // m
  std::size_t hidden_dim = 32;     // p, per direction
  std::size_t layers = 2;          // BiGRU layers per channel
  std::size_t attention_dim = 32;  // q
  std::size_t attended_dim = 64;   // r
  std::size_t sequence_cap = 256;  // newest steps kept per channel
  std::size_t per_code_channels = 16;
  std::size_t min_code_count = 2;  // trainable vocabularies

  LossKind loss = LossKind::log_mse;
  double learning_rate = 1e-3;
  double clip_norm = 5.0;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  std::size_t patience = 5;
  std::uint64_t seed = 1;
  std::size_t threads = 1;  // 1 = serial reference; gradients are reduced in a fixed order either way

  void validate() const;
};

// One fused input stream. `code` is set only for per-code channels.
struct ChannelSpec {
  Channel channel = Channel::dx;
  std::string code;

  std::string name() const;
  bool operator==(const ChannelSpec&) const = default;
};

// Fusion order for the fixed modes: dx, px, rx, cost or the single `all`.
std::vector<ChannelSpec> default_channels(ModelMode mode);

struct StackParams {
  std::vector<nn::GruLayerParams> layers;
  nn::AttentionParams attention;
  nn::Tensor embedding;  // vocabulary x m, trainable mode only

  void collect(const std::string& prefix, nn::ParamList& out);
};

struct ChannelModel {
  ModelConfig config;
  std::vector<ChannelSpec> channels;
  std::vector<Vocabulary> vocabularies;  // per channel, trainable mode only
  std::vector<StackParams> stacks;
  nn::DenseParams head;  // 1 x (channels * r): W_s, b_s

  std::size_t input_dim(std::size_t channel) const;
  nn::ParamList parameters();
  // Same architecture with every parameter zero; used as a gradient buffer.
  ChannelModel zeros_like() const;
};

std::size_t count_parameters(const ChannelModel& model);

// Provider of pretrained tables, keyed by channel (dx, px, rx or all).
struct EmbeddingTables {
  std::map<Channel, EmbeddingTable> by_channel;
  const EmbeddingTable& at(Channel c) const;
};

// Channels the pretrained mode needs tables for.
std::vector<Channel> embedded_channels(ModelMode mode);

// Builds an untrained model: channels, vocabularies (trainable mode, from the
// training profiles), Xavier weights from config.seed, and the head bias at
// the mean transformed training target.
ChannelModel create_model(const ModelConfig& config, std::span<const PatientProfile> training);

struct ChannelSequence {
  // Input vectors in step order. In trainable mode the embedding part is
  // computed from `codes` during the forward pass and `features` holds only
  // the remaining components.
  std::vector<nn::Vec> features;
  std::vector<std::vector<std::int32_t>> codes;
  std::vector<Day> days;
  bool sentinel = false;  // channel had no events; one zero step stands in
};

struct ChannelInputs {
  std::string patient_id;
  double target_cost = 0.0;
  std::vector<ChannelSequence> channels;  // model channel order
};

// `profile` must already be at the model's granularity. `tables` is required
// in pretrained mode.
ChannelInputs build_channel_inputs(const PatientProfile& profile, const ChannelModel& model,
                                   const EmbeddingTables* tables);
std::vector<ChannelInputs> build_all_inputs(std::span<const PatientProfile> profiles, const ChannelModel& model,
                                            const EmbeddingTables* tables);

double encode_gap(std::int64_t gap);
double encode_cost(double dollars);
double decode_cost(double raw);

struct Prediction {
  std::string patient_id;
  double predicted_cost = 0.0;  // clamped at 0
  double raw_output = 0.0;      // log-scale head output
  std::vector<std::vector<double>> attention;  // per channel, over the weighted steps
  std::vector<double> representation;          // fused attended vectors fed to the head
};

Prediction forward(const ChannelModel& model, const ChannelInputs& inputs);

// Loss for one patient; accumulates parameter gradients into `grad`.
double loss_and_gradient(const ChannelModel& model, const ChannelInputs& inputs, ChannelModel& grad);
double loss_value(const ChannelModel& model, const ChannelInputs& inputs);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
};

struct TrainingLog {
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  double best_validation_loss = 0.0;
  bool early_stopped = false;
};

// Mini-batch Adam with global-norm clipping; keeps the parameters of the best
// validation epoch. Throws ModelError on a non-finite loss.
TrainingLog train(ChannelModel& model, std::span<const ChannelInputs> training,
                  std::span<const ChannelInputs> validation);

struct AttentionRow {
  std::string patient_id;
  std::string channel;
  Day day{};
  double weight = 0.0;
};

// Sentinel channels are skipped. With attention off no weights exist and the
// result is empty.
std::vector<AttentionRow> export_attention(const ChannelModel& model, const ChannelInputs& inputs);

// Checkpoint: a header with the architecture and the fusion order, the
// trainable vocabularies, then the tensor dump.
void save_model(const ChannelModel& model, const std::filesystem::path& path);
ChannelModel load_model(const std::filesystem::path& path);

void write_predictions(const std::filesystem::path& path, std::span<const PatientPrediction> predictions);
std::vector<PatientPrediction> read_predictions(const std::filesystem::path& path);
void write_attention(const std::filesystem::path& path, std::span<const AttentionRow> rows);
// One row per patient: patient_id, then the fused representation components.
void write_representations(const std::filesystem::path& path, std::span<const Prediction> predictions);

// ---------------------------------------------------------------- ablation

struct AblationCell {
  ModelMode mode = ModelMode::channel_wise;
  EmbeddingMode embedding = EmbeddingMode::pretrained;
  bool attention = true;
  Granularity granularity = Granularity::day;

  std::string label() const;
};

struct AblationGrid {
  std::vector<ModelMode> modes{ModelMode::channel_wise};
  std::vector<EmbeddingMode> embeddings{EmbeddingMode::pretrained};
  std::vector<bool> attention{true};
  std::vector<Granularity> granularities{Granularity::day};

  std::vector<AblationCell> cells() const;
};

struct CellFailure {
  std::string cell;
  std::size_t shuffle = 0;
  std::string message;
};

struct AblationRun {
  std::vector<VariantRun> runs;  // one per (cell, shuffle)
  std::vector<CellFailure> failures;
  std::map<std::string, std::size_t> parameter_counts;  // per cell label
};

// Tables for one granularity; called once per granularity in the grid.
using TableSource = std::function<EmbeddingTables(Granularity)>;

// Trains one model per cell per shuffle on day-level `profiles`, aggregating
// to each cell's granularity. Failed cells are recorded and skipped.
AblationRun run_ablation(std::span<const PatientProfile> profiles, const AblationGrid& grid,
                         const ModelConfig& base, const SplitPlan& plan, const TableSource& tables,
                         const std::function<void(const std::string&)>& progress = {});

}  // namespace claimcast
