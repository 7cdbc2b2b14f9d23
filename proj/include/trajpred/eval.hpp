#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "trajpred/corpus.hpp"
#include "trajpred/metrics.hpp"
#include "trajpred/models.hpp"

namespace trajpred {

inline constexpr std::size_t kDefaultCandidates = 100;

struct EvalTask {
  std::string trip_id;
  double start_time = 0.0;
  CellSequence reference;
  std::size_t g = 1;  // given prefix cells
  std::size_t k = kDefaultCandidates;

  std::size_t m() const { return reference.length(); }
};

// Which prefix lengths to evaluate. Empty `values` means every g in 1..m-1.
struct GPolicy {
  std::vector<std::size_t> values;

  static GPolicy parse(const std::string& text);  // "all" or "1,2,5"
  std::string to_string() const;
};

struct TaskSet {
  std::vector<EvalTask> tasks;
  std::size_t skipped_short = 0;  // sequences with m < 2
};

TaskSet make_tasks(std::span<const SequenceRecord* const> records, const GPolicy& policy,
                   std::size_t k = kDefaultCandidates);

struct ScoreRecord {
  std::string trip_id;
  std::size_t g = 0;
  std::size_t m = 0;
  ScoreVector mean;
  std::vector<ScoreVector> raw;
  std::size_t unterminated = 0;  // candidates that hit max_len
};

// Seed of candidate `index` of the (trip_id, g) task.
std::uint64_t candidate_seed(std::uint64_t master_seed, const std::string& trip_id, std::size_t g,
                             std::size_t index);
inline constexpr const char* kSeedMixing =
    "splitmix64 chain over (master_seed, fnv1a64(trip_id), g, candidate_index)";

/// Generates task.k candidates from the reference prefix and scores each
/// continuation (up to, excluding #end) against the reference continuation.
ScoreRecord run_task(const EvalTask& task, const SequenceModel& model, const TrafficStateTensor* traffic,
                     std::uint64_t master_seed);

using TrafficLookup = std::function<TrafficStateTensor(const EvalTask&)>;

struct EvalRun {
  std::vector<ScoreRecord> records;  // same order as the tasks
  std::size_t unterminated = 0;
};

// Reference implementation: one task after another.
EvalRun run_tasks_serial(std::span<const EvalTask> tasks, const SequenceModel& model,
                         const TrafficLookup& traffic, std::uint64_t master_seed);

/// OpenMP over tasks. Output is identical to run_tasks_serial.
EvalRun run_tasks(std::span<const EvalTask> tasks, const SequenceModel& model, const TrafficLookup& traffic,
                  std::uint64_t master_seed);

void write_scores(std::ostream& out, std::span<const ScoreRecord> records);
void write_scores(const std::filesystem::path& path, std::span<const ScoreRecord> records);
std::vector<ScoreRecord> read_scores(std::istream& in);
std::vector<ScoreRecord> read_scores(const std::filesystem::path& path);

struct Summary {
  std::size_t count = 0;
  double mean = 0.0;
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
};

// Linear-interpolation quantile of sorted values.
double quantile_sorted(std::span<const double> sorted, double q);
Summary summarize(std::vector<double> values);

struct LengthAggregate {
  std::size_t m = 0;
  std::size_t g = 0;  // 0 = marginal over all g
  std::array<Summary, kScoreCount> scores;
};

/// Per-m summaries of the record means (marginal over g), optionally
/// followed by per-(g, m) rows.
std::vector<LengthAggregate> aggregate_by_length(std::span<const ScoreRecord> records, bool per_g = false);
void write_aggregates(std::ostream& out, std::span<const LengthAggregate> rows);

struct ImprovementRow {
  std::size_t g = 0;
  std::size_t m = 0;
  std::array<double, kScoreCount> ratio{};
  std::array<bool, kScoreCount> defined{};
};

struct ImprovementByLength {
  std::size_t m = 0;
  std::array<double, kScoreCount> average{};
  std::array<double, kScoreCount> min{};
  std::array<double, kScoreCount> max{};
  std::array<std::size_t, kScoreCount> groups{};
};

struct ImprovementReport {
  std::vector<ImprovementRow> rows;          // per (g, m)
  std::vector<ImprovementByLength> by_length;  // across g, per m
  std::size_t undefined = 0;                 // (g, m, score) cells with a zero baseline
};

/// Ratio of mean ARNN to mean RNN score per (g, m). Both record sets must
/// cover the same (trip_id, g) keys.
ImprovementReport improvement_rate(std::span<const ScoreRecord> arnn, std::span<const ScoreRecord> rnn);
void write_improvement(std::ostream& out, const ImprovementReport& report);
void write_improvement_by_length(std::ostream& out, const ImprovementReport& report);

// Mean of one score over records with the given g (all g when g == 0).
double mean_score(std::span<const ScoreRecord> records, std::size_t score, std::size_t g = 0);

}  // namespace trajpred
