#include "trajpred/cli.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "trajpred/cellspace.hpp"
#include "trajpred/checkpoint.hpp"
#include "trajpred/error.hpp"
#include "trajpred/eval.hpp"
#include "trajpred/hypersearch.hpp"
#include "trajpred/rng.hpp"
#include "trajpred/synthworld.hpp"

#ifndef TRAJPRED_VERSION
#define TRAJPRED_VERSION "0.0.0"
#endif

namespace trajpred {

namespace fs = std::filesystem;
using nlohmann::json;

std::string version_string() { return TRAJPRED_VERSION; }

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::is_regular_file(p)) throw Error(std::string(what) + " not found: " + p.string());
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw Error("cannot create output directory " + p.string());
}

// Resolved option values of a subcommand, keyed by long name.
json resolved_options(const CLI::App& sub) {
  json opts = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string& name = opt->get_lnames().front();
    if (name == "help" || name == "config") continue;
    if (opt->count() > 0) {
      // TakeLast: the final occurrence is the effective value.
      opts[name] = opt->results().back();
    } else {
      opts[name] = opt->get_default_str();
    }
  }
  return opts;
}

void write_manifest(const fs::path& dir, const CLI::App& sub, const json& seeds, const json& extra) {
  json m;
  m["stage"] = sub.get_name();
  m["version"] = version_string();
  m["options"] = resolved_options(sub);
  m["config_hash"] = hex64(fnv1a64(m["options"].dump()));
  m["seeds"] = seeds;
  std::vector<std::string> command{"trajpred", sub.get_name()};
  for (const auto& [k, v] : m["options"].items()) {
    const std::string val = v.get<std::string>();
    if (!val.empty()) command.push_back("--" + k + "=" + val);
  }
  m["command"] = command;
  for (const auto& [k, v] : extra.items()) m[k] = v;
  std::ofstream f(dir / "manifest.json");
  if (!f) throw Error("cannot write manifest in " + dir.string());
  f << m.dump(2) << '\n';
}

SplitFractions parse_fractions(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      v.push_back(std::stod(trim(part)));
    } catch (const std::exception&) {
      throw Error("bad split fractions: " + text);
    }
  }
  if (v.size() != 3) throw Error("split fractions need three values: " + text);
  for (double f : v) {
    if (!(f >= 0.0) || f > 1.0) throw Error("split fraction outside [0,1]: " + text);
  }
  if (v[0] + v[1] + v[2] > 1.0 + 1e-9) throw Error("split fractions sum above 1: " + text);
  return {v[0], v[1], v[2]};
}

std::vector<CellId> parse_prefix(const std::string& text) {
  std::vector<CellId> tokens;
  std::stringstream ss(text);
  std::string tok;
  while (ss >> tok) tokens.push_back(token_from_string(tok));
  if (tokens.empty() || tokens.front() != kStartToken) tokens.insert(tokens.begin(), kStartToken);
  return tokens;
}

struct Stage {
  CLI::App* app = nullptr;
  std::function<void()> run;
};

// ---- synth

struct SynthArgs {
  fs::path out;
  int rows = 3;
  int cols = 10;
  double spacing = 800.0;
  std::size_t trips = 6000;
  std::uint64_t seed = 1;
  WorldOptions world;
};

void run_synth(const SynthArgs& a, const CLI::App& sub, std::ostream& out) {
  ensure_dir(a.out);
  const std::uint64_t world_seed = derive_seed(a.seed, 1);
  const std::uint64_t trip_seed = derive_seed(a.seed, 2);
  const World world = generate_world(a.rows, a.cols, a.spacing, world_seed, a.world);
  const Simulation sim = simulate_trips(world, a.trips, trip_seed);
  const auto all = sim.all_trajectories();
  write_trajectories(a.out / "trajectories.csv", all);
  json desc = world.describe();
  desc["trips"] = sim.trips.size();
  desc["background_vehicles"] = sim.background.size();
  std::ofstream(a.out / "world.json") << desc.dump(2) << '\n';
  write_manifest(a.out, sub, {{"master", a.seed}, {"world", world_seed}, {"trips", trip_seed}},
                 {{"outputs", {"trajectories.csv", "world.json"}}});
  out << "synth: " << sim.trips.size() << " trips, " << sim.background.size() << " background vehicles\n";
}

// ---- discretize

struct DiscretizeArgs {
  fs::path in;
  fs::path out;
  double radius = 300.0;
  std::string splits = "0.8,0.1,0.1";
  std::size_t min_cells = 1;
  std::uint64_t seed = 1;
};

void run_discretize(const DiscretizeArgs& a, const CLI::App& sub, std::ostream& out) {
  require_file(a.in, "trajectory file");
  ensure_dir(a.out);
  const SplitFractions fractions = parse_fractions(a.splits);
  const std::uint64_t split_seed = derive_seed(a.seed, 1);
  const auto rows = read_trajectory_rows(a.in);
  const auto trips = load_and_terminate(rows);
  const auto labels = split_indices(trips.size(), fractions, split_seed);

  // Cells come from training trips only.
  std::vector<Point2> points;
  for (std::size_t i = 0; i < trips.size(); ++i) {
    if (labels[i] != Split::kTrain) continue;
    for (const auto& p : trips[i].points) points.push_back({p.x, p.y});
  }
  if (points.empty()) throw Error("discretize: training split is empty");
  const CellMap map = cluster_points(points, a.radius);
  map.save(a.out / "cellmap.txt");

  Dataset ds;
  std::size_t dropped = 0;
  for (std::size_t i = 0; i < trips.size(); ++i) {
    if (labels[i] == Split::kUnused) continue;
    CellSequence seq = discretize_trajectory(trips[i], map);
    if (seq.length() < a.min_cells) {
      ++dropped;
      continue;
    }
    ds.records.push_back({trips[i].trip_id, trips[i].points.front().t, std::move(seq), labels[i]});
  }
  ds.save(a.out / "sequences.csv");
  write_manifest(a.out, sub, {{"master", a.seed}, {"split", split_seed}},
                 {{"outputs", {"cellmap.txt", "sequences.csv"}},
                  {"cells", map.size()},
                  {"trips", trips.size()},
                  {"dropped_short", dropped},
                  {"sequences",
                   {{"train", ds.count(Split::kTrain)},
                    {"validation", ds.count(Split::kValidation)},
                    {"test", ds.count(Split::kTest)}}}});
  out << "discretize: " << map.size() << " cells, " << ds.records.size() << " sequences (" << dropped
      << " dropped)\n";
}

// ---- accumulate

struct AccumulateArgs {
  fs::path in;
  fs::path cells;
  fs::path data;
  fs::path out;
};

void run_accumulate(const AccumulateArgs& a, const CLI::App& sub, std::ostream& out) {
  require_file(a.in, "trajectory file");
  require_file(a.cells, "cell map");
  if (!a.data.empty()) require_file(a.data, "dataset");
  ensure_dir(a.out);
  const CellMap map = CellMap::load(a.cells);
  const auto trips = load_and_terminate(read_trajectory_rows(a.in));
  AccumulationSeries series = compute_accumulation(trips, map);
  std::string maxima_from = "all";
  if (!a.data.empty()) {
    // Historical maxima over the time span of the training trips.
    const Dataset ds = Dataset::load(a.data);
    std::set<std::string> train_ids;
    for (const auto* r : ds.subset(Split::kTrain)) train_ids.insert(r->trip_id);
    double lo = 0.0, hi = 0.0;
    bool any = false;
    for (const auto& tr : trips) {
      if (!train_ids.count(tr.trip_id)) continue;
      const double b = tr.points.front().t, e = tr.points.back().t;
      lo = any ? std::min(lo, b) : b;
      hi = any ? std::max(hi, e) : e;
      any = true;
    }
    if (!any) throw Error("accumulate: no training trips found in the trajectory file");
    const std::int64_t begin = std::max(series.minute_begin, epoch_minute(lo));
    const std::int64_t end = std::min(series.minute_end(), epoch_minute(hi) + 1);
    set_historical_maxima(series, begin, end);
    maxima_from = "train";
  }
  const AccumulationSeries normalized = normalize(series);
  normalized.save(a.out / "accumulation.csv");
  write_manifest(a.out, sub, json::object(),
                 {{"outputs", {"accumulation.csv"}},
                  {"maxima_from", maxima_from},
                  {"minutes", series.minute_count},
                  {"clamped", normalized.clamped}});
  out << "accumulate: " << series.n_cells << " cells x " << series.minute_count << " minutes, "
      << normalized.clamped << " clamped\n";
}

// ---- shared model arguments

struct ModelArgs {
  std::string kind = "rnn";
  std::string preset;
  double lr = 1e-3;
  int embed = 16;
  int hidden = 32;
  int feature = 0;
  int attention = 0;
  bool cell_identity = true;
};

void add_model_options(CLI::App* sub, ModelArgs& m) {
  sub->add_option("--kind", m.kind, "Model kind: rnn or arnn")->check(CLI::IsMember({"rnn", "arnn"}));
  sub->add_option("--preset", m.preset, "Named hyperparameters (overrides --lr/--embed/--hidden)");
  sub->add_option("--lr", m.lr, "Adam learning rate");
  sub->add_option("--embed", m.embed, "Embedding dimension");
  sub->add_option("--hidden", m.hidden, "LSTM hidden dimension");
  sub->add_option("--feature-dim", m.feature, "Traffic feature dimension (0 = hidden)");
  sub->add_option("--attention-dim", m.attention, "Attention dimension (0 = hidden)");
  sub->add_option("--cell-identity", m.cell_identity, "Learned per-cell term in the traffic encoder");
}

ModelConfig model_config(ModelArgs& m) {
  if (!m.preset.empty()) {
    const auto p = preset(m.preset);
    if (!p) throw Error("unknown preset: " + m.preset);
    m.lr = p->learning_rate;
    m.embed = p->embed_dim;
    m.hidden = p->hidden_dim;
  }
  ModelConfig cfg;
  cfg.kind = model_kind_from_string(m.kind);
  cfg.embed_dim = m.embed;
  cfg.hidden_dim = m.hidden;
  cfg.feature_dim = m.feature;
  cfg.attention_dim = m.attention;
  cfg.cell_identity = m.cell_identity;
  if (cfg.embed_dim < 1 || cfg.hidden_dim < 1 || cfg.feature_dim < 0 || cfg.attention_dim < 0) {
    throw Error("model dimensions must be positive");
  }
  if (!(m.lr > 0.0)) throw Error("learning rate must be positive");
  return cfg;
}

std::optional<AccumulationSeries> load_series(ModelKind kind, const fs::path& path) {
  if (kind == ModelKind::kRnn) return std::nullopt;
  if (path.empty()) throw Error("arnn needs --accumulation");
  require_file(path, "accumulation file");
  return AccumulationSeries::load(path);
}

// ---- train

struct TrainArgs {
  fs::path data;
  fs::path accumulation;
  fs::path out;
  ModelArgs model;
  int epochs = 10;
  std::size_t batch = 1;
  double clip = 5.0;
  std::uint64_t seed = 1;
  bool verbose = false;
};

void run_train(TrainArgs& a, const CLI::App& sub, std::ostream& out) {
  require_file(a.data, "dataset");
  ensure_dir(a.out);
  const ModelConfig cfg = model_config(a.model);
  const Dataset ds = Dataset::load(a.data);
  const auto train_records = ds.subset(Split::kTrain);
  if (train_records.empty()) throw Error("train: training split is empty");
  const Vocabulary vocab = Vocabulary::from_sequences(train_records);
  const auto series = load_series(cfg.kind, a.accumulation);
  const SampleSet train_set = build_samples(train_records, vocab, series ? &*series : nullptr);
  if (train_set.samples.empty()) throw Error("train: no usable training samples");
  const SampleSet val_set = build_samples(ds.subset(Split::kValidation), vocab, series ? &*series : nullptr);

  const std::uint64_t init_seed = derive_seed(a.seed, 1);
  const std::uint64_t shuffle_seed = derive_seed(a.seed, 2);
  SequenceModel model(cfg, vocab, init_seed);
  TrainOptions to;
  to.learning_rate = a.model.lr;
  to.epochs = a.epochs;
  to.batch_size = a.batch;
  to.clip_norm = a.clip;
  to.seed = shuffle_seed;
  if (a.verbose) {
    to.on_epoch = [&out](int epoch, double loss) { out << "epoch " << epoch << " loss " << loss << '\n'; };
  }
  const TrainReport report = train(model, train_set.samples, to);

  Checkpoint ck = model.to_checkpoint();
  ck.metadata["training"] = {{"learning_rate", a.model.lr}, {"epochs", a.epochs}, {"batch_size", a.batch},
                             {"clip_norm", a.clip},         {"seed", a.seed},     {"samples", train_set.samples.size()}};
  ck.save(a.out / "model.ckpt");
  {
    std::ofstream log(a.out / "train_log.csv");
    log << "epoch,loss\n";
    char buf[64];
    for (std::size_t e = 0; e < report.epoch_loss.size(); ++e) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g\n", e + 1, report.epoch_loss[e]);
      log << buf;
    }
  }
  json extra = {{"outputs", {"model.ckpt", "train_log.csv"}},
                {"train_samples", train_set.samples.size()},
                {"skipped_no_history", train_set.no_history},
                {"clipped_updates", report.clipped_updates}};
  if (!report.epoch_loss.empty()) extra["final_train_loss"] = report.epoch_loss.back();
  if (!val_set.samples.empty()) extra["validation_loss"] = mean_step_loss(model, val_set.samples);
  write_manifest(a.out, sub, {{"master", a.seed}, {"init", init_seed}, {"shuffle", shuffle_seed}}, extra);
  out << "train: " << to_string(cfg.kind) << ", " << train_set.samples.size() << " samples, final loss "
      << (report.epoch_loss.empty() ? 0.0 : report.epoch_loss.back()) << '\n';
}

// ---- generate

struct GenerateArgs {
  fs::path model;
  fs::path accumulation;
  fs::path out;
  std::string prefix = "#start";
  double start_time = 0.0;
  std::size_t k = 1;
  std::size_t max_len = 100;
  std::uint64_t seed = 1;
};

void run_generate(const GenerateArgs& a, std::ostream& out) {
  require_file(a.model, "checkpoint");
  const SequenceModel model = SequenceModel::from_checkpoint(Checkpoint::load(a.model));
  const auto series = load_series(model.kind(), a.accumulation);
  std::optional<TrafficStateTensor> traffic;
  if (series) traffic = traffic_window(*series, a.start_time, model.vocab().cells());
  const auto prefix = parse_prefix(a.prefix);
  std::ostringstream lines;
  lines << "candidate,terminated,tokens\n";
  for (std::size_t i = 0; i < a.k; ++i) {
    const auto g = model.generate(prefix, traffic ? &*traffic : nullptr, derive_seed(a.seed, i), a.max_len);
    lines << i << ',' << (g.terminated ? 1 : 0) << ',';
    for (std::size_t t = 0; t < g.tokens.size(); ++t) lines << (t ? " " : "") << token_to_string(g.tokens[t]);
    lines << '\n';
  }
  if (a.out.empty()) {
    out << lines.str();
  } else {
    std::ofstream f(a.out);
    if (!f) throw Error("cannot write " + a.out.string());
    f << lines.str();
  }
}

// ---- evaluate

struct EvaluateArgs {
  fs::path model;
  fs::path data;
  fs::path accumulation;
  fs::path out;
  std::string split = "test";
  std::size_t k = kDefaultCandidates;
  std::string g = "all";
  std::size_t limit = 500;
  int threads = 0;
  bool serial = false;
  std::uint64_t seed = 1;
};

void run_evaluate(const EvaluateArgs& a, const CLI::App& sub, std::ostream& out) {
  require_file(a.model, "checkpoint");
  require_file(a.data, "dataset");
  ensure_dir(a.out);
  const SequenceModel model = SequenceModel::from_checkpoint(Checkpoint::load(a.model));
  const auto series = load_series(model.kind(), a.accumulation);
  const Dataset ds = Dataset::load(a.data);
  auto records = ds.subset(split_from_string(a.split));
  if (a.limit > 0 && records.size() > a.limit) records.resize(a.limit);

  // Keep records the model can condition on.
  const SampleSet usable = build_samples(records, model.vocab(), series ? &*series : nullptr);
  const TaskSet set = make_tasks(usable.records, GPolicy::parse(a.g), a.k);
  const std::vector<CellId>& cells = model.vocab().cells();
  TrafficLookup lookup;
  if (series) {
    lookup = [&](const EvalTask& t) { return traffic_window(*series, t.start_time, cells); };
  }
  if (a.threads > 0) omp_set_num_threads(a.threads);
  const auto t0 = std::chrono::steady_clock::now();
  const EvalRun run = a.serial ? run_tasks_serial(set.tasks, model, lookup, a.seed)
                               : run_tasks(set.tasks, model, lookup, a.seed);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_scores(a.out / "scores.csv", run.records);
  write_manifest(a.out, sub, {{"master", a.seed}, {"candidate_seeds", kSeedMixing}},
                 {{"outputs", {"scores.csv"}},
                  {"model_kind", to_string(model.kind())},
                  {"tasks", set.tasks.size()},
                  {"skipped_short", set.skipped_short},
                  {"skipped_unknown_cells", usable.unknown_cells},
                  {"skipped_no_history", usable.no_history},
                  {"unterminated_candidates", run.unterminated}});
  out << "evaluate: " << set.tasks.size() << " tasks in " << seconds << " s, mean meteor "
      << mean_score(run.records, 4) << '\n';
}

// ---- hypersearch

struct HypersearchArgs {
  fs::path data;
  fs::path accumulation;
  fs::path out;
  ModelArgs model;
  std::size_t budget = 10;
  int epochs = 10;
  double clip = 5.0;
  std::uint64_t seed = 1;
  SearchSpace space;
};

void run_hypersearch(HypersearchArgs& a, const CLI::App& sub, std::ostream& out) {
  require_file(a.data, "dataset");
  ensure_dir(a.out);
  const ModelConfig base = model_config(a.model);
  const Dataset ds = Dataset::load(a.data);
  const auto train_records = ds.subset(Split::kTrain);
  if (train_records.empty()) throw Error("hypersearch: training split is empty");
  const Vocabulary vocab = Vocabulary::from_sequences(train_records);
  const auto series = load_series(base.kind, a.accumulation);
  const SampleSet train_set = build_samples(train_records, vocab, series ? &*series : nullptr);
  const SampleSet val_set = build_samples(ds.subset(Split::kValidation), vocab, series ? &*series : nullptr);
  SearchOptions so;
  so.budget = a.budget;
  so.epochs_per_trial = a.epochs;
  so.seed = derive_seed(a.seed, 1);
  so.clip_norm = a.clip;
  so.base = base;
  const SearchResult result = search(a.space, vocab, train_set.samples, val_set.samples, so);
  {
    std::ofstream f(a.out / "history.csv");
    write_history(f, result, so.seed);
  }
  const HyperConfig& best = result.best_config();
  json best_json = {{"learning_rate", best.learning_rate},
                    {"embed_dim", best.embed_dim},
                    {"hidden_dim", best.hidden_dim},
                    {"objective", result.best().objective},
                    {"trial", result.bayes.incumbent}};
  std::ofstream(a.out / "best.json") << best_json.dump(2) << '\n';
  write_manifest(a.out, sub, {{"master", a.seed}, {"search", so.seed}},
                 {{"outputs", {"history.csv", "best.json"}}, {"space", a.space.describe()}});
  out << "hypersearch: best lr " << best.learning_rate << " embed " << best.embed_dim << " hidden "
      << best.hidden_dim << " objective " << result.best().objective << '\n';
}

// ---- report

struct ReportArgs {
  fs::path scores;
  fs::path baseline;
  fs::path out;
  bool per_g = false;
};

void run_report(const ReportArgs& a, const CLI::App& sub, std::ostream& out) {
  require_file(a.scores, "score file");
  if (!a.baseline.empty()) require_file(a.baseline, "baseline score file");
  ensure_dir(a.out);
  const auto scores = read_scores(a.scores);
  std::vector<std::string> outputs{"summary.csv"};
  {
    std::ofstream f(a.out / "summary.csv");
    write_aggregates(f, aggregate_by_length(scores, a.per_g));
  }
  out << "report: meteor g=1 " << mean_score(scores, 4, 1) << ", all " << mean_score(scores, 4) << '\n';
  if (!a.baseline.empty()) {
    const auto base = read_scores(a.baseline);
    {
      std::ofstream f(a.out / "baseline_summary.csv");
      write_aggregates(f, aggregate_by_length(base, a.per_g));
    }
    const ImprovementReport rep = improvement_rate(scores, base);
    {
      std::ofstream f(a.out / "improvement.csv");
      write_improvement(f, rep);
    }
    {
      std::ofstream f(a.out / "improvement_by_length.csv");
      write_improvement_by_length(f, rep);
    }
    outputs.insert(outputs.end(), {"baseline_summary.csv", "improvement.csv", "improvement_by_length.csv"});
    const double b1 = mean_score(base, 4, 1);
    out << "report: baseline meteor g=1 " << b1 << ", ratio " << (b1 > 0 ? mean_score(scores, 4, 1) / b1 : 0.0)
        << ", undefined ratios " << rep.undefined << '\n';
  }
  write_manifest(a.out, sub, json::object(), {{"outputs", outputs}});
}

}  // namespace

std::vector<std::pair<std::string, std::string>> read_config(const fs::path& path, const std::string& section) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line, current;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = trim(line);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw Error("config line " + std::to_string(lineno) + ": bad section header");
      current = trim(s.substr(1, s.size() - 2));
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw Error("config line " + std::to_string(lineno) + ": expected key = value");
    if (current.empty() || current == section) out.emplace_back(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  return out;
}

SampleSet build_samples(std::span<const SequenceRecord* const> records, const Vocabulary& vocab,
                        const AccumulationSeries* series) {
  SampleSet set;
  for (const auto* r : records) {
    const auto cells = r->sequence.cells();
    if (!std::all_of(cells.begin(), cells.end(), [&](CellId c) { return vocab.contains(c); })) {
      ++set.unknown_cells;
      continue;
    }
    TrainingSample s;
    s.xy = split_xy(r->sequence);
    if (series) {
      try {
        s.traffic = traffic_window(*series, r->start_time, vocab.cells());
      } catch (const Error&) {
        ++set.no_history;
        continue;
      }
    }
    set.samples.push_back(std::move(s));
    set.records.push_back(r);
  }
  return set;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Trajectory prediction toolkit", "trajpred"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string config;

  std::vector<Stage> stages;
  auto add = [&](const char* name, const char* desc) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", config, "INI file; its values override flags")->check(CLI::ExistingFile);
    stages.push_back({sub, {}});
    return sub;
  };

  SynthArgs synth;
  {
    auto* s = add("synth", "Simulate the two-corridor world");
    s->add_option("--out", synth.out, "Output directory")->required();
    s->add_option("--rows", synth.rows, "Grid rows");
    s->add_option("--cols", synth.cols, "Grid columns");
    s->add_option("--spacing", synth.spacing, "Cell spacing in metres");
    s->add_option("--trips", synth.trips, "Number of trips");
    s->add_option("--seed", synth.seed, "Master seed");
    s->add_option("--epsilon", synth.world.epsilon, "Probability of choosing the congested corridor");
    s->add_option("--block-minutes", synth.world.block_minutes, "Congestion block length");
    s->add_option("--departure-offset", synth.world.departure_offset_minutes, "First departure minute in a block");
    s->add_option("--cell-seconds", synth.world.cell_seconds, "Free-flow seconds per cell");
    s->add_option("--slowdown", synth.world.congestion_slowdown, "Travel-time factor on the loaded corridor");
    s->add_option("--dwellers", synth.world.dwellers_per_cell, "Background vehicles per loaded cell");
    s->add_option("--trips-per-minute", synth.world.trips_per_minute, "Departure rate");
    s->add_option("--jitter", synth.world.jitter_meters, "Point jitter in metres");
    stages.back().run = [&, s] { run_synth(synth, *s, out); };
  }

  DiscretizeArgs disc;
  {
    auto* s = add("discretize", "Cluster points into cells and build cell sequences");
    s->add_option("--in", disc.in, "Trajectory file")->required();
    s->add_option("--out", disc.out, "Output directory")->required();
    s->add_option("--radius", disc.radius, "Cluster radius in metres");
    s->add_option("--splits", disc.splits, "Train,validation,test fractions");
    s->add_option("--min-cells", disc.min_cells, "Drop sequences with fewer cells");
    s->add_option("--seed", disc.seed, "Master seed");
    stages.back().run = [&, s] { run_discretize(disc, *s, out); };
  }

  AccumulateArgs acc;
  {
    auto* s = add("accumulate", "Vehicle accumulation per cell and minute");
    s->add_option("--in", acc.in, "Trajectory file")->required();
    s->add_option("--cells", acc.cells, "Cell map")->required();
    s->add_option("--data", acc.data, "Dataset; maxima are taken over its training period");
    s->add_option("--out", acc.out, "Output directory")->required();
    stages.back().run = [&, s] { run_accumulate(acc, *s, out); };
  }

  TrainArgs tr;
  {
    auto* s = add("train", "Train an RNN or ARNN");
    s->add_option("--data", tr.data, "Dataset")->required();
    s->add_option("--accumulation", tr.accumulation, "Accumulation file (arnn)");
    s->add_option("--out", tr.out, "Output directory")->required();
    add_model_options(s, tr.model);
    s->add_option("--epochs", tr.epochs, "Epochs");
    s->add_option("--batch", tr.batch, "Minibatch size");
    s->add_option("--clip", tr.clip, "Global gradient norm clip (0 disables)");
    s->add_option("--seed", tr.seed, "Master seed");
    s->add_flag("--verbose", tr.verbose, "Print per-epoch loss");
    stages.back().run = [&, s] { run_train(tr, *s, out); };
  }

  GenerateArgs gen;
  {
    auto* s = add("generate", "Sample continuations from a checkpoint");
    s->add_option("--model", gen.model, "Checkpoint")->required();
    s->add_option("--accumulation", gen.accumulation, "Accumulation file (arnn)");
    s->add_option("--prefix", gen.prefix, "Prefix tokens, e.g. \"#start 3 4\"");
    s->add_option("--start-time", gen.start_time, "Trip start, epoch seconds (arnn)");
    s->add_option("--k", gen.k, "Number of candidates");
    s->add_option("--max-len", gen.max_len, "Maximum tokens per candidate");
    s->add_option("--seed", gen.seed, "Master seed");
    s->add_option("--out", gen.out, "Output file (default stdout)");
    stages.back().run = [&] { run_generate(gen, out); };
  }

  EvaluateArgs ev;
  {
    auto* s = add("evaluate", "Score sampled continuations against held-out sequences");
    s->add_option("--model", ev.model, "Checkpoint")->required();
    s->add_option("--data", ev.data, "Dataset")->required();
    s->add_option("--accumulation", ev.accumulation, "Accumulation file (arnn)");
    s->add_option("--out", ev.out, "Output directory")->required();
    s->add_option("--split", ev.split, "Split to evaluate")->check(CLI::IsMember({"train", "validation", "test"}));
    s->add_option("--k", ev.k, "Candidates per task");
    s->add_option("--g", ev.g, "Prefix lengths: all or a list like 1,2,5");
    s->add_option("--limit", ev.limit, "Evaluate at most N sequences (0 = all)");
    s->add_option("--threads", ev.threads, "OpenMP threads (0 = runtime default)");
    s->add_flag("--serial", ev.serial, "Use the serial reference runner");
    s->add_option("--seed", ev.seed, "Master seed");
    stages.back().run = [&, s] { run_evaluate(ev, *s, out); };
  }

  HypersearchArgs hs;
  {
    auto* s = add("hypersearch", "Bayesian optimisation of learning rate and dimensions");
    s->add_option("--data", hs.data, "Dataset")->required();
    s->add_option("--accumulation", hs.accumulation, "Accumulation file (arnn)");
    s->add_option("--out", hs.out, "Output directory")->required();
    add_model_options(s, hs.model);
    s->add_option("--budget", hs.budget, "Trials");
    s->add_option("--epochs", hs.epochs, "Epochs per trial");
    s->add_option("--clip", hs.clip, "Global gradient norm clip (0 disables)");
    s->add_option("--seed", hs.seed, "Master seed");
    s->add_option("--lr-min", hs.space.lr_min, "Learning-rate lower bound");
    s->add_option("--lr-max", hs.space.lr_max, "Learning-rate upper bound");
    s->add_option("--embed-min", hs.space.embed_min, "Embedding lower bound");
    s->add_option("--embed-max", hs.space.embed_max, "Embedding upper bound");
    s->add_option("--hidden-min", hs.space.hidden_min, "Hidden lower bound");
    s->add_option("--hidden-max", hs.space.hidden_max, "Hidden upper bound");
    stages.back().run = [&, s] { run_hypersearch(hs, *s, out); };
  }

  ReportArgs rep;
  {
    auto* s = add("report", "Per-length summaries and improvement rates");
    s->add_option("--scores", rep.scores, "Score file")->required();
    s->add_option("--baseline", rep.baseline, "Baseline score file for improvement rates");
    s->add_option("--out", rep.out, "Output directory")->required();
    s->add_flag("--per-g", rep.per_g, "Also summarise per (g, m)");
    stages.back().run = [&, s] { run_report(rep, *s, out); };
  }

  auto parse = [&](std::vector<std::string> argv) {
    std::reverse(argv.begin(), argv.end());
    app.parse(argv);
  };

  try {
    parse(args);
    if (!config.empty()) {
      // Config values are appended so they take precedence over flags.
      const CLI::App* sub = app.get_subcommands().front();
      std::vector<std::string> merged = args;
      for (const auto& [k, v] : read_config(config, sub->get_name())) merged.push_back("--" + k + "=" + v);
      app.clear();
      config.clear();
      parse(merged);
    }
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return kExitOk;
    if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::RequiredError) ||
        e.get_exit_code() == static_cast<int>(CLI::ExitCodes::ExtrasError)) {
      err << app.help();
    }
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }

  try {
    for (const auto& st : stages) {
      if (st.app->parsed()) st.run();
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace trajpred
