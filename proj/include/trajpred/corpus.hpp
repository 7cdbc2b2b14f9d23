#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trajpred/cellspace.hpp"

namespace trajpred {

// One delimited row of the trajectory text format: trip_id, t, x, y.
struct TrajectoryRow {
  std::string trip_id;
  double t = 0.0;
  double x = 0.0;
  double y = 0.0;
};

inline constexpr double kTripGapSeconds = 3600.0;

std::vector<TrajectoryRow> read_trajectory_rows(std::istream& in);
std::vector<TrajectoryRow> read_trajectory_rows(const std::filesystem::path& path);
void write_trajectories(std::ostream& out, std::span<const RawTrajectory> trips);
void write_trajectories(const std::filesystem::path& path, std::span<const RawTrajectory> trips);

/// Groups rows per device and cuts a new trip wherever the device is idle for
/// more than an hour. The first trip keeps the device id, later ones get
/// "<id>#<n>".
std::vector<RawTrajectory> load_and_terminate(std::span<const TrajectoryRow> rows);

enum class Split : std::uint8_t { kTrain, kValidation, kTest, kUnused };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct SplitFractions {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

// Seeded random assignment of n items to splits with floor(fraction * n)
// items each; leftovers are kUnused.
std::vector<Split> split_indices(std::size_t n, const SplitFractions& fractions, std::uint64_t seed);

struct SequenceRecord {
  std::string trip_id;
  double start_time = 0.0;
  CellSequence sequence;
  Split split = Split::kTrain;
};

struct Dataset {
  std::vector<SequenceRecord> records;

  std::vector<const SequenceRecord*> subset(Split s) const;
  std::size_t count(Split s) const;

  void write(std::ostream& out) const;
  static Dataset read(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static Dataset load(const std::filesystem::path& path);
};

Dataset split_dataset(std::vector<SequenceRecord> seqs, const SplitFractions& fractions,
                      std::uint64_t seed);

// Vehicle accumulation per (minute, cell). Minute k is the instant 60*k
// seconds since epoch. Cells are the 1-based indices of the CellMap.
struct AccumulationSeries {
  static constexpr int kFormatVersion = 1;

  std::int64_t minute_begin = 0;
  std::int64_t minute_count = 0;
  std::size_t n_cells = 0;
  std::vector<double> values;  // row-major [minute][cell]
  std::vector<double> maxima;  // historical max raw count per cell
  std::int64_t maxima_begin = 0;  // minute range the maxima were taken over
  std::int64_t maxima_end = 0;    // exclusive
  bool normalized = false;
  std::size_t clamped = 0;  // entries above their historical max after normalize

  double at(std::int64_t minute, CellId cell) const;
  double& at(std::int64_t minute, CellId cell);
  std::int64_t minute_end() const { return minute_begin + minute_count; }

  // The counts/maxima file. Normalized series are written as raw counts.
  void write(std::ostream& out) const;
  static AccumulationSeries read(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static AccumulationSeries load(const std::filesystem::path& path);
};

std::int64_t epoch_minute(double seconds);

/// Raw counts on the epoch-minute grid. A vehicle is present in the cell of
/// its most recent detection from its first to its last detection. Maxima
/// are taken over the whole span.
AccumulationSeries compute_accumulation(std::span<const RawTrajectory> trips, const CellMap& map);

// Recomputes per-cell maxima over minutes [begin, end) of a raw series.
void set_historical_maxima(AccumulationSeries& series, std::int64_t begin, std::int64_t end);

/// Divides by the per-cell historical maximum; zero-max cells become 0 and
/// entries above the maximum are clamped to 1 (counted in `clamped`).
AccumulationSeries normalize(const AccumulationSeries& series);

inline constexpr int kTrafficWindowMinutes = 10;

// [N, 10] normalized accumulation, column k = minute (start - 10 + k).
using TrafficStateTensor = Eigen::MatrixXd;

/// Window of the 10 minutes before `trip_start` over `cells` (1-based map
/// indices, row order of the result). An empty `cells` means all cells.
TrafficStateTensor traffic_window(const AccumulationSeries& series, double trip_start,
                                  std::span<const CellId> cells = {});

}  // namespace trajpred
