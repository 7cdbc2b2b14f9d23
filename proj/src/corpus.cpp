#include "trajpred/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "trajpred/error.hpp"
#include "trajpred/rng.hpp"

namespace trajpred {

namespace {

constexpr const char* kTrajectoryHeader = "trip_id,t,x,y";

std::vector<std::string> split_fields(const std::string& line, char delim = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delim, start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

double parse_double(const std::string& s, std::size_t row) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw Error("malformed row " + std::to_string(row) + ": bad number '" + s + "'");
  }
  if (used != s.size() || !std::isfinite(v)) {
    throw Error("malformed row " + std::to_string(row) + ": bad number '" + s + "'");
  }
  return v;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

std::string header_value(const std::string& header, const std::string& key) {
  std::istringstream hs(header);
  std::string kv;
  while (hs >> kv) {
    if (kv.rfind(key + "=", 0) == 0) return kv.substr(key.size() + 1);
  }
  throw Error("header is missing '" + key + "'");
}

}  // namespace

std::vector<TrajectoryRow> read_trajectory_rows(std::istream& in) {
  std::vector<TrajectoryRow> rows;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    line = strip_cr(line);
    if (line.empty() || line[0] == '#' || line == kTrajectoryHeader) continue;
    const auto f = split_fields(line);
    if (f.size() != 4 || f[0].empty()) {
      throw Error("malformed row " + std::to_string(row) + ": expected trip_id,t,x,y");
    }
    rows.push_back({f[0], parse_double(f[1], row), parse_double(f[2], row), parse_double(f[3], row)});
  }
  return rows;
}

std::vector<TrajectoryRow> read_trajectory_rows(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  return read_trajectory_rows(in);
}

void write_trajectories(std::ostream& out, std::span<const RawTrajectory> trips) {
  out << kTrajectoryHeader << '\n';
  char buf[128];
  for (const auto& tr : trips) {
    for (const auto& p : tr.points) {
      std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g\n", p.t, p.x, p.y);
      out << tr.trip_id << buf;
    }
  }
}

void write_trajectories(const std::filesystem::path& path, std::span<const RawTrajectory> trips) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_trajectories(out, trips);
}

std::vector<RawTrajectory> load_and_terminate(std::span<const TrajectoryRow> rows) {
  std::vector<RawTrajectory> trips;
  std::unordered_set<std::string> finished;
  std::string device;
  int part = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const bool new_device = i == 0 || r.trip_id != device;
    if (new_device) {
      if (i > 0) finished.insert(device);
      if (finished.contains(r.trip_id)) {
        throw Error("unsorted input: trip '" + r.trip_id + "' reappears at row " + std::to_string(i + 1));
      }
      device = r.trip_id;
      part = 1;
      trips.push_back({device, {}});
    } else {
      const double gap = r.t - trips.back().points.back().t;
      if (gap < 0.0) {
        throw Error("unsorted input: time decreases at row " + std::to_string(i + 1));
      }
      if (gap > kTripGapSeconds) {
        ++part;
        trips.push_back({device + "#" + std::to_string(part), {}});
      }
    }
    trips.back().points.push_back({r.x, r.y, r.t});
  }
  return trips;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTest: return "test";
    case Split::kUnused: return "unused";
  }
  return "unused";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "validation") return Split::kValidation;
  if (s == "test") return Split::kTest;
  if (s == "unused") return Split::kUnused;
  throw Error("unknown split '" + s + "'");
}

std::vector<Split> split_indices(std::size_t n, const SplitFractions& fractions, std::uint64_t seed) {
  if (n == 0) throw Error("split: empty input");
  const double sum = fractions.train + fractions.validation + fractions.test;
  if (fractions.train < 0 || fractions.validation < 0 || fractions.test < 0 || sum > 1.0 + 1e-12) {
    throw Error("split: fractions must be non-negative and sum to at most 1");
  }
  auto count = [n](double f) {
    return static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9));
  };
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    std::swap(order[i], order[uniform_index(rng, i + 1)]);
  }
  std::vector<Split> out(n, Split::kUnused);
  const std::size_t n_train = count(fractions.train);
  const std::size_t n_val = std::min(n - n_train, count(fractions.validation));
  const std::size_t n_test = std::min(n - n_train - n_val, count(fractions.test));
  std::size_t k = 0;
  for (std::size_t i = 0; i < n_train; ++i) out[order[k++]] = Split::kTrain;
  for (std::size_t i = 0; i < n_val; ++i) out[order[k++]] = Split::kValidation;
  for (std::size_t i = 0; i < n_test; ++i) out[order[k++]] = Split::kTest;
  return out;
}

Dataset split_dataset(std::vector<SequenceRecord> seqs, const SplitFractions& fractions,
                      std::uint64_t seed) {
  const auto labels = split_indices(seqs.size(), fractions, seed);
  Dataset d;
  d.records = std::move(seqs);
  for (std::size_t i = 0; i < labels.size(); ++i) d.records[i].split = labels[i];
  return d;
}

std::vector<const SequenceRecord*> Dataset::subset(Split s) const {
  std::vector<const SequenceRecord*> out;
  for (const auto& r : records) {
    if (r.split == s) out.push_back(&r);
  }
  return out;
}

std::size_t Dataset::count(Split s) const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [s](const auto& r) { return r.split == s; }));
}

void Dataset::write(std::ostream& out) const {
  out << "trip_id,start_time,split,tokens\n";
  char buf[64];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%.17g", r.start_time);
    out << r.trip_id << ',' << buf << ',' << to_string(r.split) << ',' << r.sequence.to_string() << '\n';
  }
}

Dataset Dataset::read(std::istream& in) {
  Dataset d;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    line = strip_cr(line);
    if (line.empty() || line.rfind("trip_id,", 0) == 0) continue;
    const auto f = split_fields(line);
    if (f.size() != 4) throw Error("sequences: malformed row " + std::to_string(row));
    SequenceRecord r;
    r.trip_id = f[0];
    r.start_time = parse_double(f[1], row);
    r.split = split_from_string(f[2]);
    r.sequence = CellSequence::parse(f[3]);
    d.records.push_back(std::move(r));
  }
  return d;
}

void Dataset::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write(out);
}

Dataset Dataset::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  return read(in);
}

std::int64_t epoch_minute(double seconds) {
  return static_cast<std::int64_t>(std::floor(seconds / 60.0));
}

double AccumulationSeries::at(std::int64_t minute, CellId cell) const {
  return values[static_cast<std::size_t>(minute - minute_begin) * n_cells + static_cast<std::size_t>(cell - 1)];
}

double& AccumulationSeries::at(std::int64_t minute, CellId cell) {
  return values[static_cast<std::size_t>(minute - minute_begin) * n_cells + static_cast<std::size_t>(cell - 1)];
}

AccumulationSeries compute_accumulation(std::span<const RawTrajectory> trips, const CellMap& map) {
  AccumulationSeries s;
  s.n_cells = map.size();
  if (trips.empty()) {
    s.maxima.assign(s.n_cells, 0.0);
    return s;
  }
  double t_min = std::numeric_limits<double>::infinity();
  double t_max = -std::numeric_limits<double>::infinity();
  for (const auto& tr : trips) {
    validate(tr);
    t_min = std::min(t_min, tr.points.front().t);
    t_max = std::max(t_max, tr.points.back().t);
  }
  s.minute_begin = epoch_minute(t_min);
  s.minute_count = epoch_minute(t_max) - s.minute_begin + 1;
  s.values.assign(static_cast<std::size_t>(s.minute_count) * s.n_cells, 0.0);

  std::vector<CellId> cells;
  for (const auto& tr : trips) {
    cells.clear();
    for (const auto& p : tr.points) cells.push_back(assign_cell({p.x, p.y}, map));
    const auto first = static_cast<std::int64_t>(std::ceil(tr.points.front().t / 60.0));
    const auto last = epoch_minute(tr.points.back().t);
    std::size_t idx = 0;
    for (std::int64_t k = first; k <= last; ++k) {
      const double instant = 60.0 * static_cast<double>(k);
      while (idx + 1 < tr.points.size() && tr.points[idx + 1].t <= instant) ++idx;
      s.at(k, cells[idx]) += 1.0;
    }
  }
  set_historical_maxima(s, s.minute_begin, s.minute_end());
  return s;
}

void set_historical_maxima(AccumulationSeries& series, std::int64_t begin, std::int64_t end) {
  if (series.normalized) throw Error("historical maxima must come from raw counts");
  begin = std::max(begin, series.minute_begin);
  end = std::min(end, series.minute_end());
  series.maxima.assign(series.n_cells, 0.0);
  for (std::int64_t k = begin; k < end; ++k) {
    for (std::size_t c = 0; c < series.n_cells; ++c) {
      series.maxima[c] = std::max(series.maxima[c], series.at(k, static_cast<CellId>(c + 1)));
    }
  }
  series.maxima_begin = begin;
  series.maxima_end = std::max(begin, end);
}

AccumulationSeries normalize(const AccumulationSeries& series) {
  if (series.normalized) return series;
  AccumulationSeries out = series;
  out.normalized = true;
  out.clamped = 0;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    const double max = series.maxima[i % series.n_cells];
    if (max <= 0.0) {
      out.values[i] = 0.0;
      continue;
    }
    double v = series.values[i] / max;
    if (v > 1.0) {
      v = 1.0;
      ++out.clamped;
    }
    out.values[i] = v;
  }
  return out;
}

TrafficStateTensor traffic_window(const AccumulationSeries& series, double trip_start,
                                  std::span<const CellId> cells) {
  const std::int64_t start = epoch_minute(trip_start);
  const std::int64_t first = start - kTrafficWindowMinutes;
  if (first < series.minute_begin) throw Error("insufficient history");
  if (start > series.minute_end()) throw Error("traffic window beyond available data");
  const std::size_t n = cells.empty() ? series.n_cells : cells.size();
  TrafficStateTensor w(static_cast<Eigen::Index>(n), kTrafficWindowMinutes);
  for (std::size_t r = 0; r < n; ++r) {
    const CellId cell = cells.empty() ? static_cast<CellId>(r + 1) : cells[r];
    if (cell < 1 || static_cast<std::size_t>(cell) > series.n_cells) {
      throw Error("traffic window: cell " + std::to_string(cell) + " out of range");
    }
    const double max = series.maxima[static_cast<std::size_t>(cell) - 1];
    for (int k = 0; k < kTrafficWindowMinutes; ++k) {
      double v = series.at(first + k, cell);
      if (!series.normalized) v = max > 0.0 ? std::min(1.0, v / max) : 0.0;
      w(static_cast<Eigen::Index>(r), k) = v;
    }
  }
  return w;
}

void AccumulationSeries::write(std::ostream& out) const {
  out << "accumulation v" << kFormatVersion << " n_cells=" << n_cells << " minute_begin=" << minute_begin
      << " minutes=" << minute_count << " maxima_begin=" << maxima_begin << " maxima_end=" << maxima_end
      << '\n';
  char buf[64];
  out << "maxima";
  for (double m : maxima) {
    std::snprintf(buf, sizeof buf, ",%.17g", m);
    out << buf;
  }
  out << '\n';
  for (std::int64_t k = 0; k < minute_count; ++k) {
    out << (minute_begin + k);
    for (std::size_t c = 0; c < n_cells; ++c) {
      double v = values[static_cast<std::size_t>(k) * n_cells + c];
      // Clamped entries lose their raw value; everything else round-trips.
      if (normalized) v *= maxima[c];
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      out << buf;
    }
    out << '\n';
  }
}

AccumulationSeries AccumulationSeries::read(std::istream& in) {
  AccumulationSeries s;
  std::string header;
  if (!std::getline(in, header)) throw Error("accumulation: missing header");
  if (header.rfind("accumulation v" + std::to_string(kFormatVersion) + " ", 0) != 0) {
    throw Error("accumulation: unsupported header '" + header + "'");
  }
  s.n_cells = std::stoul(header_value(header, "n_cells"));
  s.minute_begin = std::stoll(header_value(header, "minute_begin"));
  s.minute_count = std::stoll(header_value(header, "minutes"));
  s.maxima_begin = std::stoll(header_value(header, "maxima_begin"));
  s.maxima_end = std::stoll(header_value(header, "maxima_end"));
  std::string line;
  std::size_t row = 1;
  if (!std::getline(in, line)) throw Error("accumulation: missing maxima row");
  ++row;
  auto f = split_fields(strip_cr(line));
  if (f.size() != s.n_cells + 1 || f[0] != "maxima") throw Error("accumulation: malformed maxima row");
  for (std::size_t c = 0; c < s.n_cells; ++c) s.maxima.push_back(parse_double(f[c + 1], row));
  s.values.reserve(static_cast<std::size_t>(s.minute_count) * s.n_cells);
  std::int64_t expected = s.minute_begin;
  while (std::getline(in, line)) {
    ++row;
    line = strip_cr(line);
    if (line.empty()) continue;
    f = split_fields(line);
    if (f.size() != s.n_cells + 1) throw Error("accumulation: malformed row " + std::to_string(row));
    if (std::stoll(f[0]) != expected) throw Error("accumulation: minutes not contiguous at row " + std::to_string(row));
    ++expected;
    for (std::size_t c = 0; c < s.n_cells; ++c) s.values.push_back(parse_double(f[c + 1], row));
  }
  if (expected != s.minute_end()) throw Error("accumulation: minute count does not match header");
  return s;
}

void AccumulationSeries::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write(out);
}

AccumulationSeries AccumulationSeries::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  return read(in);
}

}  // namespace trajpred
