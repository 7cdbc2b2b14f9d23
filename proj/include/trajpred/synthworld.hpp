#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "json.hpp"
#include "trajpred/cellspace.hpp"

namespace trajpred {

struct WorldOptions {
  int block_minutes = 30;            // congestion schedule block length
  int departure_offset_minutes = 10; // departures start this far into a block
  double epsilon = 0.1;              // probability of taking the congested corridor
  double cell_seconds = 60.0;        // free-flow travel time per cell
  double congestion_slowdown = 3.0;  // travel-time multiplier on the loaded corridor
  int dwellers_per_cell = 8;         // background vehicles parked on loaded corridor cells
  double trips_per_minute = 3.0;
  double jitter_meters = 20.0;
  double epoch_base = 1'700'000'040.0;  // first block start, minute-aligned
};

/// Grid of cell centres `spacing` metres apart. Trips run between two cells of
/// the middle row over one of two corridors: the top row (0) or the bottom
/// row (rows - 1). A block schedule says which corridor is loaded.
struct World {
  int rows = 0;
  int cols = 0;
  double spacing = 0.0;
  std::uint64_t seed = 0;
  WorldOptions options;
  int first_loaded = 0;  // corridor loaded in block 0; blocks alternate

  int od_row() const { return rows / 2; }
  int corridor_row(int corridor) const { return corridor == 0 ? 0 : rows - 1; }
  std::size_t cell_count() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
  Point2 cell_center(int row, int col) const;
  std::vector<Point2> centers() const;

  double block_start(std::int64_t block) const;
  std::int64_t block_of(double t) const;
  int loaded_corridor(double t) const;
  World flipped() const;

  /// Cells (row, col) of the route from column `from` to column `to` of
  /// the middle row over the given corridor.
  std::vector<std::pair<int, int>> route(int from, int to, int corridor) const;

  nlohmann::json describe() const;
};

World generate_world(int rows, int cols, double spacing, std::uint64_t seed, const WorldOptions& options = {});

struct SimulatedTrip {
  RawTrajectory trajectory;
  int from_col = 0;
  int to_col = 0;
  int corridor = 0;
  int loaded = 0;  // corridor loaded at departure
};

struct Simulation {
  std::vector<SimulatedTrip> trips;
  std::vector<RawTrajectory> background;  // stationary dwellers, ids "bg-..."

  // Trips followed by background vehicles, trip_id-grouped and time-sorted.
  std::vector<RawTrajectory> all_trajectories() const;
};

Simulation simulate_trips(const World& world, std::size_t n_trips, std::uint64_t seed);

}  // namespace trajpred
