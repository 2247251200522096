#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "claimcast/claims.hpp"
#include "claimcast/config.hpp"
#include "claimcast/embedding.hpp"
#include "claimcast/metrics.hpp"
#include "claimcast/predictor.hpp"
#include "claimcast/strata.hpp"
#include "claimcast/synth.hpp"

namespace claimcast {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

class CliError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::exists(path)) throw CliError("missing " + what + ": " + path.string());
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// The manifest carries wall time, so it is the one artifact that differs
// between otherwise identical reruns.
void write_manifest(const fs::path& dir, const std::string& command, const RunConfig& cfg,
                    const std::vector<fs::path>& artifacts, Clock::time_point start) {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["version"] = CLAIMCAST_VERSION;
  j["seed"] = cfg.seed;
  j["serial"] = cfg.serial;
  j["config"] = cfg.snapshot();
  std::vector<std::string> names;
  for (const auto& a : artifacts) names.push_back(a.string());
  j["artifacts"] = names;
  j["wall_time_seconds"] = std::chrono::duration<double>(Clock::now() - start).count();
  std::ofstream out(dir / (command + ".manifest.json"), std::ios::binary);
  if (!out) throw CliError("cannot write manifest in " + dir.string());
  out << j.dump(2) << '\n';
}

ProfileSet load_cohort(const RunConfig& cfg, std::ostream& err) {
  require_file(cfg.medical_path(), "medical claims file");
  require_file(cfg.pharmacy_path(), "pharmacy claims file");
  IngestResult ingest = ingest_claims(cfg.medical_path(), cfg.pharmacy_path());
  if (!ingest.rejected.empty()) {
    err << "warning: " << ingest.rejected.size() << " malformed claim rows skipped\n" << format_rejects(ingest);
  }
  ProfileSet set = build_profiles(ingest.records, cfg.observation_year, cfg.result_year);
  if (set.profiles.empty()) throw CliError("no patient has at least two observation-year claims");
  return set;
}

std::vector<PatientProfile> at_granularity(std::span<const PatientProfile> profiles, Granularity g) {
  std::vector<PatientProfile> out;
  out.reserve(profiles.size());
  for (const auto& p : profiles) out.push_back(aggregate_events(p, g));
  return out;
}

std::vector<PatientProfile> subset(std::span<const PatientProfile> profiles, std::span<const std::size_t> idx) {
  std::vector<PatientProfile> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(profiles[i]);
  return out;
}

fs::path table_path(const fs::path& dir, Channel c) { return dir / (std::string(to_string(c)) + ".emb"); }

EmbeddingTables load_tables(const RunConfig& cfg, ModelMode mode, std::size_t dim) {
  EmbeddingTables tables;
  for (Channel c : embedded_channels(mode)) {
    const fs::path path = table_path(cfg.embeddings_path(), c);
    require_file(path, "embedding table (run `claimcast embed` first)");
    tables.by_channel[c] = import_table(path, dim);
  }
  return tables;
}

EmbeddingTables train_tables(std::span<const PatientProfile> level, const PvDbowOptions& opts,
                             const std::vector<Channel>& channels) {
  EmbeddingTables tables;
  for (Channel c : channels) tables.by_channel[c] = train_pvdbow(c, channel_corpus(level, c), opts);
  return tables;
}

bool needs_tables(const ModelConfig& m) {
  return m.embedding == EmbeddingMode::pretrained && m.mode != ModelMode::per_code;
}

// ---------------------------------------------------------------- commands

void cmd_generate(const RunConfig& cfg, std::ostream& out, Clock::time_point start) {
  const SynthCohort cohort = generate_cohort(cfg.synth);
  const SynthPaths paths{cfg.medical_path(), cfg.pharmacy_path(), cfg.labels_path(), cfg.condition_map_path()};
  for (const fs::path& p : {paths.medical, paths.pharmacy, paths.labels, paths.condition_map}) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
  }
  write_cohort(cohort, cfg.synth, paths);

  std::array<std::size_t, 6> per_tier{};
  std::size_t with_signal = 0;
  for (const auto& l : cohort.labels) {
    ++per_tier[static_cast<std::size_t>(l.true_tier - 1)];
    with_signal += l.has_signal ? 1 : 0;
  }
  out << "patients " << cohort.labels.size() << ", medical claims " << cohort.medical.size()
      << ", pharmacy claims " << cohort.pharmacy.size() << ", planted signal " << with_signal << "\n";
  out << "patients per tier:";
  for (std::size_t t = 0; t < 6; ++t) out << ' ' << per_tier[t];
  out << "\n";
  for (const fs::path& p : {paths.medical, paths.pharmacy, paths.labels, paths.condition_map}) {
    out << "wrote " << p.string() << "\n";
  }
  fs::path dir = paths.medical.has_parent_path() ? paths.medical.parent_path() : fs::path(".");
  write_manifest(dir, "generate", cfg, {paths.medical, paths.pharmacy, paths.labels, paths.condition_map}, start);
}

void cmd_embed(const RunConfig& cfg, std::ostream& out, std::ostream& err, Clock::time_point start) {
  const ProfileSet set = load_cohort(cfg, err);
  const auto level = at_granularity(set.profiles, cfg.model_config.granularity);
  const fs::path dir = cfg.embeddings_path();
  fs::create_directories(dir);
  std::vector<fs::path> written;
  for (Channel c : {Channel::dx, Channel::px, Channel::rx, Channel::all}) {
    const auto docs = channel_corpus(level, c);
    const EmbeddingTable table = train_pvdbow(c, docs, cfg.pvdbow);
    const fs::path path = table_path(dir, c);
    export_table(table, path);
    written.push_back(path);
    out << to_string(c) << ": " << docs.size() << " events, vocabulary " << table.vocab.size() << ", wrote "
        << path.string() << "\n";
  }
  write_manifest(dir, "embed", cfg, written, start);
}

void cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err, Clock::time_point start) {
  const ModelConfig& mc = cfg.model_config;
  std::optional<EmbeddingTables> tables;
  if (needs_tables(mc)) tables = load_tables(cfg, mc.mode, mc.embedding_dim);
  const ProfileSet set = load_cohort(cfg, err);
  const auto level = at_granularity(set.profiles, mc.granularity);
  const Partition part = make_splits(level.size(), cfg.split).at(cfg.shuffle);
  const auto training = subset(level, part.train);
  const auto validation = subset(level, part.validation);

  ChannelModel model = create_model(mc, training);
  const EmbeddingTables* tp = tables ? &*tables : nullptr;
  const auto train_inputs = build_all_inputs(training, model, tp);
  const auto val_inputs = build_all_inputs(validation, model, tp);
  const TrainingLog log = train(model, train_inputs, val_inputs);

  const fs::path path = cfg.model_path();
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  fs::create_directories(dir);
  save_model(model, path);
  const fs::path log_path = dir / "training_log.csv";
  std::ofstream lf(log_path, std::ios::binary);
  if (!lf) throw CliError("cannot write " + log_path.string());
  lf << "epoch,train_loss,validation_loss\n";
  for (const auto& e : log.epochs) {
    lf << e.epoch << ',' << fmt("%.17g", e.train_loss) << ',' << fmt("%.17g", e.validation_loss) << '\n';
  }
  lf.close();

  out << "parameters " << count_parameters(model) << ", epochs run " << log.epochs.size() << ", best epoch "
      << log.best_epoch << " (validation loss " << fmt("%.4f", log.best_validation_loss) << ")"
      << (log.early_stopped ? ", stopped early" : "") << "\n";
  out << "wrote " << path.string() << "\nwrote " << log_path.string() << "\n";
  write_manifest(dir, "train", cfg, {path, log_path}, start);
}

void cmd_evaluate(const RunConfig& cfg, std::ostream& out, std::ostream& err, Clock::time_point start) {
  // Everything is computed before the output directory is touched, so a
  // failure leaves no partial output behind.
  require_file(cfg.model_path(), "trained model (run `claimcast train` first)");
  const ChannelModel model = load_model(cfg.model_path());
  const ModelConfig& mc = model.config;
  require_file(cfg.condition_map_path(), "condition map");
  const ConditionMap map = ConditionMap::load(cfg.condition_map_path());
  std::optional<EmbeddingTables> tables;
  if (needs_tables(mc)) tables = load_tables(cfg, mc.mode, mc.embedding_dim);

  const ProfileSet set = load_cohort(cfg, err);
  const auto level = at_granularity(set.profiles, mc.granularity);
  const Partition part = make_splits(level.size(), cfg.split).at(cfg.shuffle);
  const auto test = subset(level, part.test);
  const auto inputs = build_all_inputs(test, model, tables ? &*tables : nullptr);

  std::vector<Prediction> predictions;
  std::vector<PatientPrediction> rows;
  std::vector<AttentionRow> attention;
  for (const auto& in : inputs) {
    Prediction p = forward(model, in);
    rows.push_back({in.patient_id, in.target_cost, p.predicted_cost});
    const auto a = export_attention(model, in);
    attention.insert(attention.end(), a.begin(), a.end());
    predictions.push_back(std::move(p));
  }
  const StrataSummary strata = stratify(set.profiles, map, mc.granularity);
  const std::string variant = AblationCell{mc.mode, mc.embedding, mc.attention, mc.granularity}.label();
  const std::vector<VariantRun> runs{{variant, cfg.shuffle, rows}};
  const EvaluationReport report = stratified_report(runs, strata.assignments, cfg.group_by, {});

  const fs::path dir = cfg.out_dir / "evaluate";
  fs::create_directories(dir);
  const std::vector<fs::path> files{dir / "predictions.csv", dir / "attention.csv", dir / "representations.csv",
                                    dir / "report.csv", dir / "report.json"};
  write_predictions(files[0], rows);
  write_attention(files[1], attention);
  write_representations(files[2], predictions);
  write_report_csv(files[3], report);
  write_report_json(files[4], report);
  out << format_report_table(report);
  for (const auto& f : files) out << "wrote " << f.string() << "\n";
  write_manifest(dir, "evaluate", cfg, files, start);
}

void cmd_stratify(const RunConfig& cfg, std::ostream& out, std::ostream& err, Clock::time_point start) {
  require_file(cfg.condition_map_path(), "condition map");
  const ConditionMap map = ConditionMap::load(cfg.condition_map_path());
  const ProfileSet set = load_cohort(cfg, err);
  const StrataSummary strata = stratify(set.profiles, map, cfg.model_config.granularity);

  const fs::path dir = cfg.out_dir / "strata";
  fs::create_directories(dir);
  std::vector<fs::path> files{dir / "strata.csv"};
  write_strata(files[0], strata.assignments);

  // Entropy against the number of distinct clinical codes per patient.
  const CohortJourney journey = journey_stats(set.profiles);
  std::map<std::string, std::size_t> distinct;
  for (const auto& j : journey.patients) distinct[j.patient_id] = j.distinct_codes;
  std::vector<double> entropy, codes;
  for (const auto& a : strata.assignments) {
    entropy.push_back(a.profile_entropy);
    codes.push_back(static_cast<double>(distinct[a.patient_id]));
  }

  std::map<Severity, std::pair<double, std::size_t>> by_severity;
  for (const auto& a : strata.assignments) {
    auto& s = by_severity[a.severity];
    s.first += a.profile_entropy;
    ++s.second;
  }
  out << "patients " << strata.assignments.size() << ", excluded " << strata.excluded.size()
      << ", unmapped codes " << strata.unmapped_codes << ", boundary cases " << strata.boundary_cases << "\n";
  out << "mean profile entropy by assigned severity:\n";
  for (const auto& [sev, s] : by_severity) {
    out << "  " << to_string(sev) << ": " << fmt("%.4f", s.first / static_cast<double>(s.second)) << " (n=" << s.second
        << ")\n";
  }
  if (entropy.size() >= 2) {
    out << "pearson(profile entropy, distinct codes) = " << fmt("%.4f", pearson(entropy, codes)) << "\n";
  }

  if (fs::exists(cfg.labels_path())) {
    const auto labels = read_labels(cfg.labels_path());
    std::map<std::string, int> tier;
    for (const auto& l : labels) tier[l.patient_id] = l.true_tier;
    std::array<std::pair<double, std::size_t>, 6> by_tier{};
    for (const auto& a : strata.assignments) {
      const auto it = tier.find(a.patient_id);
      if (it == tier.end()) continue;
      by_tier[static_cast<std::size_t>(it->second - 1)].first += a.profile_entropy;
      ++by_tier[static_cast<std::size_t>(it->second - 1)].second;
    }
    const fs::path tier_path = dir / "tier_entropy.csv";
    std::ofstream tf(tier_path, std::ios::binary);
    if (!tf) throw CliError("cannot write " + tier_path.string());
    tf << "tier,patients,mean_profile_entropy\n";
    out << "mean profile entropy by generated tier:\n";
    for (std::size_t t = 0; t < 6; ++t) {
      const auto& [sum, n] = by_tier[t];
      const double mean = n ? sum / static_cast<double>(n) : 0.0;
      tf << t + 1 << ',' << n << ',' << fmt("%.17g", mean) << '\n';
      out << "  tier " << t + 1 << ": " << fmt("%.4f", mean) << " (n=" << n << ")\n";
    }
    files.push_back(tier_path);
  }
  for (const auto& f : files) out << "wrote " << f.string() << "\n";
  write_manifest(dir, "stratify", cfg, files, start);
}

AblationGrid parse_grid(const std::string& axes, const ModelConfig& base, bool per_code) {
  AblationGrid grid;
  grid.modes = {base.mode};
  grid.embeddings = {base.embedding};
  grid.attention = {base.attention};
  grid.granularities = {base.granularity};
  std::set<std::string> seen;
  std::stringstream in(axes);
  std::string axis;
  while (std::getline(in, axis, ',')) {
    if (axis.empty()) continue;
    if (!seen.insert(axis).second) throw CliError("--grid: axis '" + axis + "' listed twice");
    if (axis == "mode") {
      grid.modes = {ModelMode::channel_wise, ModelMode::single_channel};
      if (per_code) grid.modes.push_back(ModelMode::per_code);
    } else if (axis == "embedding") {
      grid.embeddings = {EmbeddingMode::pretrained, EmbeddingMode::trainable};
    } else if (axis == "attention") {
      grid.attention = {true, false};
    } else if (axis == "granularity") {
      grid.granularities = {Granularity::day, Granularity::week, Granularity::month};
    } else {
      throw CliError("--grid: unknown axis '" + axis + "' (expected mode, embedding, attention, granularity)");
    }
  }
  return grid;
}

void cmd_ablate(const RunConfig& cfg, const std::string& axes, bool per_code, std::ostream& out, std::ostream& err,
                Clock::time_point start) {
  const AblationGrid grid = parse_grid(axes, cfg.model_config, per_code);
  require_file(cfg.condition_map_path(), "condition map");
  const ConditionMap map = ConditionMap::load(cfg.condition_map_path());
  const ProfileSet set = load_cohort(cfg, err);

  PvDbowOptions opts = cfg.pvdbow;
  opts.dim = cfg.model_config.embedding_dim;
  const TableSource tables = [&](Granularity g) {
    return train_tables(at_granularity(set.profiles, g), opts, {Channel::dx, Channel::px, Channel::rx, Channel::all});
  };
  const AblationRun run = run_ablation(set.profiles, grid, cfg.model_config, cfg.split, tables,
                                       [&](const std::string& msg) { err << msg << "\n"; });

  // Every cell is compared against the full model at the base granularity.
  const std::string reference =
      AblationCell{ModelMode::channel_wise, EmbeddingMode::pretrained, true, cfg.model_config.granularity}.label();
  std::vector<std::pair<std::string, std::string>> comparisons;
  const auto cells = grid.cells();
  const bool has_reference =
      std::any_of(cells.begin(), cells.end(), [&](const AblationCell& c) { return c.label() == reference; });
  if (has_reference) {
    for (const auto& c : cells) {
      if (c.label() != reference) comparisons.emplace_back(c.label(), reference);
    }
  }
  const StrataSummary strata = stratify(set.profiles, map, cfg.model_config.granularity);
  const EvaluationReport report = stratified_report(run.runs, strata.assignments, cfg.group_by, comparisons);

  const fs::path dir = cfg.out_dir / "ablate";
  fs::create_directories(dir);
  const std::vector<fs::path> files{dir / "report.csv", dir / "report.json", dir / "parameter_counts.csv",
                                    dir / "failures.csv"};
  write_report_csv(files[0], report);
  write_report_json(files[1], report);
  std::ofstream pc(files[2], std::ios::binary);
  pc << "cell,parameters\n";
  for (const auto& [cell, n] : run.parameter_counts) pc << cell << ',' << n << '\n';
  pc.close();
  std::ofstream fc(files[3], std::ios::binary);
  fc << "cell,shuffle,message\n";
  for (const auto& f : run.failures) fc << f.cell << ',' << f.shuffle << ",\"" << f.message << "\"\n";
  fc.close();

  out << cells.size() << " cells x " << cfg.split.n_shuffles << " shuffles, " << run.failures.size()
      << " failed runs\n";
  out << format_report_table(report);
  for (const auto& f : files) out << "wrote " << f.string() << "\n";
  write_manifest(dir, "ablate", cfg, files, start);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"claimcast: channel-wise claims cost prediction pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool serial = false;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "master seed");
  app.add_option("--out-dir", out_dir, "output directory");
  app.add_flag("--serial", serial, "single-threaded, bit-reproducible mode");
  app.add_option("--set", overrides, "config override key=value (repeatable)");

  auto* generate = app.add_subcommand("generate", "write a synthetic claims cohort");
  std::optional<std::size_t> n_patients;
  std::string severity_mix;
  std::optional<double> signal_strength;
  generate->add_option("--n", n_patients, "number of patients");
  generate->add_option("--severity-mix", severity_mix, "six comma-separated tier probabilities");
  generate->add_option("--signal-strength", signal_strength, "planted signal strength in [0, 1]");

  app.add_subcommand("embed", "train PV-DBOW event embeddings per channel");
  app.add_subcommand("train", "train the cost model on one shuffle");
  app.add_subcommand("evaluate", "predict the test split and write the stratified report");
  app.add_subcommand("stratify", "entropy and severity strata");
  auto* ablate = app.add_subcommand("ablate", "train every cell of an ablation grid");
  std::string grid_axes = "mode,embedding,attention";
  bool per_code = false;
  ablate->add_option("--grid", grid_axes, "axes among mode, embedding, attention, granularity");
  ablate->add_flag("--per-code", per_code, "add the channel-per-code mode to the mode axis");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  const auto start = Clock::now();
  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_config(config_path, cfg);
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
      cfg.set(o.substr(0, eq), o.substr(eq + 1));
    }
    if (seed) cfg.seed = *seed;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (serial) cfg.serial = true;
    if (n_patients) cfg.set("n_patients", std::to_string(*n_patients));
    if (!severity_mix.empty()) cfg.set("severity_mix", severity_mix);
    if (signal_strength) cfg.synth.signal_strength = *signal_strength;
    cfg.propagate_seed();
    cfg.validate();

    const std::string command = app.get_subcommands().front()->get_name();
    if (command == "generate") cmd_generate(cfg, out, start);
    if (command == "embed") cmd_embed(cfg, out, err, start);
    if (command == "train") cmd_train(cfg, out, err, start);
    if (command == "evaluate") cmd_evaluate(cfg, out, err, start);
    if (command == "stratify") cmd_stratify(cfg, out, err, start);
    if (command == "ablate") cmd_ablate(cfg, grid_axes, per_code, out, err, start);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace claimcast
