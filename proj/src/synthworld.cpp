#include "trajpred/synthworld.hpp"

#include <cmath>

#include "trajpred/error.hpp"
#include "trajpred/rng.hpp"

namespace trajpred {

Point2 World::cell_center(int row, int col) const {
  return {spacing * static_cast<double>(col), -spacing * static_cast<double>(row)};
}

std::vector<Point2> World::centers() const {
  std::vector<Point2> out;
  out.reserve(cell_count());
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) out.push_back(cell_center(r, c));
  }
  return out;
}

double World::block_start(std::int64_t block) const {
  return options.epoch_base + 60.0 * static_cast<double>(options.block_minutes) * static_cast<double>(block);
}

std::int64_t World::block_of(double t) const {
  return static_cast<std::int64_t>(std::floor((t - options.epoch_base) / (60.0 * options.block_minutes)));
}

int World::loaded_corridor(double t) const {
  const std::int64_t b = block_of(t);
  return static_cast<int>((first_loaded + (b % 2 + 2) % 2) % 2);
}

World World::flipped() const {
  World w = *this;
  w.first_loaded = 1 - first_loaded;
  return w;
}

std::vector<std::pair<int, int>> World::route(int from, int to, int corridor) const {
  if (from == to || from < 0 || to < 0 || from >= cols || to >= cols) throw Error("route: bad columns");
  const int r0 = od_row();
  const int rc = corridor_row(corridor);
  const int dr = rc > r0 ? 1 : -1;
  const int dc = to > from ? 1 : -1;
  std::vector<std::pair<int, int>> cells;
  cells.emplace_back(r0, from);
  for (int r = r0; r != rc;) {
    r += dr;
    cells.emplace_back(r, from);
  }
  for (int c = from; c != to;) {
    c += dc;
    cells.emplace_back(rc, c);
  }
  for (int r = rc; r != r0;) {
    r -= dr;
    cells.emplace_back(r, to);
  }
  return cells;
}

nlohmann::json World::describe() const {
  nlohmann::json j;
  j["format"] = "world v1";
  j["rows"] = rows;
  j["cols"] = cols;
  j["spacing"] = spacing;
  j["seed"] = seed;
  j["od_row"] = od_row();
  j["corridor_rows"] = {corridor_row(0), corridor_row(1)};
  j["first_loaded_corridor"] = first_loaded;
  j["schedule"] = "blocks alternate the loaded corridor";
  j["options"] = {{"block_minutes", options.block_minutes},
                  {"departure_offset_minutes", options.departure_offset_minutes},
                  {"epsilon", options.epsilon},
                  {"cell_seconds", options.cell_seconds},
                  {"congestion_slowdown", options.congestion_slowdown},
                  {"dwellers_per_cell", options.dwellers_per_cell},
                  {"trips_per_minute", options.trips_per_minute},
                  {"jitter_meters", options.jitter_meters},
                  {"epoch_base", options.epoch_base}};
  return j;
}

World generate_world(int rows, int cols, double spacing, std::uint64_t seed, const WorldOptions& options) {
  if (rows < 2 || cols < 2) throw Error("world: grid must be at least 2x2");
  if (!(spacing > 0.0) || !std::isfinite(spacing)) throw Error("world: spacing must be positive");
  if (options.block_minutes < 1 || options.departure_offset_minutes < 0 ||
      options.departure_offset_minutes >= options.block_minutes) {
    throw Error("world: departure offset must lie inside a block");
  }
  if (options.epsilon < 0.0 || options.epsilon > 1.0) throw Error("world: epsilon must be in [0,1]");
  if (!(options.cell_seconds > 0.0) || !(options.congestion_slowdown >= 1.0) || !(options.trips_per_minute > 0.0)) {
    throw Error("world: bad speed or demand settings");
  }
  if (options.jitter_meters < 0.0 || options.jitter_meters >= spacing / 4) {
    throw Error("world: jitter must be below a quarter of the spacing");
  }
  World w;
  w.rows = rows;
  w.cols = cols;
  w.spacing = spacing;
  w.seed = seed;
  w.options = options;
  Rng rng(derive_seed(seed, 0x5C4EDULL));
  w.first_loaded = static_cast<int>(uniform_index(rng, 2));
  return w;
}

std::vector<RawTrajectory> Simulation::all_trajectories() const {
  std::vector<RawTrajectory> out;
  out.reserve(trips.size() + background.size());
  for (const auto& t : trips) out.push_back(t.trajectory);
  out.insert(out.end(), background.begin(), background.end());
  return out;
}

Simulation simulate_trips(const World& world, std::size_t n_trips, std::uint64_t seed) {
  if (n_trips < 1) throw Error("simulate: need at least one trip");
  const auto& o = world.options;
  Rng rng(derive_seed(seed, 0x7121ULL));
  auto jittered = [&](int r, int c) {
    Point2 p = world.cell_center(r, c);
    const double angle = uniform(rng, 0.0, 2.0 * 3.14159265358979323846);
    const double radius = o.jitter_meters * std::sqrt(uniform01(rng));
    return Point2{p.x + radius * std::cos(angle), p.y + radius * std::sin(angle)};
  };

  const double window_seconds = 60.0 * (o.block_minutes - o.departure_offset_minutes);
  const auto per_block = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(o.trips_per_minute * window_seconds / 60.0)));
  const std::size_t n_blocks = (n_trips + per_block - 1) / per_block;

  Simulation sim;
  sim.trips.reserve(n_trips);
  for (std::size_t b = 0; b < n_blocks; ++b) {
    const double begin = world.block_start(static_cast<std::int64_t>(b)) + 60.0 * o.departure_offset_minutes;
    const std::size_t count = std::min(per_block, n_trips - sim.trips.size());
    std::vector<double> departures(count);
    for (auto& d : departures) d = std::floor(begin + uniform01(rng) * window_seconds);
    std::sort(departures.begin(), departures.end());
    for (double dep : departures) {
      SimulatedTrip trip;
      trip.from_col = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(world.cols)));
      do {
        trip.to_col = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(world.cols)));
      } while (trip.to_col == trip.from_col);
      trip.loaded = world.loaded_corridor(dep);
      const bool take_congested = uniform01(rng) < o.epsilon;
      trip.corridor = take_congested ? trip.loaded : 1 - trip.loaded;
      char id[32];
      std::snprintf(id, sizeof id, "veh-%06zu", sim.trips.size());
      trip.trajectory.trip_id = id;
      double t = dep;
      for (const auto& [r, c] : world.route(trip.from_col, trip.to_col, trip.corridor)) {
        const Point2 p = jittered(r, c);
        trip.trajectory.points.push_back({p.x, p.y, t});
        const bool slowed = r == world.corridor_row(trip.loaded) && r != world.od_row();
        const double base = o.cell_seconds * (slowed ? o.congestion_slowdown : 1.0);
        t += std::floor(base * uniform(rng, 0.8, 1.2)) + 1.0;
      }
      sim.trips.push_back(std::move(trip));
    }
  }

  // Dwellers occupy every cell of the loaded corridor for the whole block,
  // detected every five minutes.
  const double block_seconds = 60.0 * o.block_minutes;
  std::size_t bg = 0;
  for (std::size_t b = 0; b < n_blocks; ++b) {
    const double start = world.block_start(static_cast<std::int64_t>(b));
    const int row = world.corridor_row(world.loaded_corridor(start));
    for (int c = 0; c < world.cols; ++c) {
      if (row == world.od_row()) continue;
      for (int k = 0; k < o.dwellers_per_cell; ++k) {
        RawTrajectory tr;
        char id[32];
        std::snprintf(id, sizeof id, "bg-%06zu", bg++);
        tr.trip_id = id;
        for (double t = start - 30.0; t < start + block_seconds - 30.0; t += 300.0) {
          const Point2 p = jittered(row, c);
          tr.points.push_back({p.x, p.y, t});
        }
        const Point2 p = jittered(row, c);
        tr.points.push_back({p.x, p.y, start + block_seconds - 30.0});
        sim.background.push_back(std::move(tr));
      }
    }
  }
  return sim;
}

}  // namespace trajpred
