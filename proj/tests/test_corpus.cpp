#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "trajpred/corpus.hpp"
#include "trajpred/error.hpp"
#include "trajpred/rng.hpp"

using namespace trajpred;

namespace {

std::vector<TrajectoryRow> rows_with_gaps(const std::vector<double>& gaps) {
  std::vector<TrajectoryRow> rows{{"dev", 1000.0, 0, 0}};
  for (double g : gaps) rows.push_back({"dev", rows.back().t + g, 0, 0});
  return rows;
}

// Cells 1..4 along the x axis, 100 m apart.
CellMap line_map() { return CellMap({{0, 0}, {100, 0}, {200, 0}, {300, 0}}, 40); }

RawTrajectory stay(const std::string& id, double x, double t0, double t1) {
  return {id, {{x, 0, t0}, {x, 0, t1}}};
}

}  // namespace

TEST(Terminate, GapRule) {
  EXPECT_EQ(load_and_terminate(rows_with_gaps({100, 3599, 3600})).size(), 1u);
  const auto two = load_and_terminate(rows_with_gaps({3601}));
  ASSERT_EQ(two.size(), 2u);
  EXPECT_EQ(two[0].trip_id, "dev");
  EXPECT_EQ(two[1].trip_id, "dev#2");
  const auto split = load_and_terminate(rows_with_gaps({100, 4000, 50}));
  ASSERT_EQ(split.size(), 2u);
  EXPECT_EQ(split[0].points.size(), 2u);
  EXPECT_EQ(split[1].points.size(), 2u);
}

TEST(Terminate, UnsortedInput) {
  std::vector<TrajectoryRow> back_in_time{{"a", 10, 0, 0}, {"a", 5, 0, 0}};
  EXPECT_THROW(load_and_terminate(back_in_time), Error);
  std::vector<TrajectoryRow> regrouped{{"a", 1, 0, 0}, {"b", 2, 0, 0}, {"a", 3, 0, 0}};
  EXPECT_THROW(load_and_terminate(regrouped), Error);
}

TEST(Rows, MalformedRowNamesLine) {
  std::stringstream in("trip_id,t,x,y\na,1,2,3\nb,oops,2,3\n");
  try {
    read_trajectory_rows(in);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("3"), std::string::npos) << e.what();
  }
}

TEST(Rows, WriteReadRoundTrip) {
  std::vector<RawTrajectory> trips{{"x", {{0.1, 0.2, 100}, {1e5 / 7, -3, 160}}}, {"y", {{5, 5, 200}}}};
  std::stringstream ss;
  write_trajectories(ss, trips);
  const auto back = load_and_terminate(read_trajectory_rows(ss));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].points[1].x, 1e5 / 7);
  EXPECT_EQ(back[1].trip_id, "y");
}

TEST(Split, ExactSizesAndDeterminism) {
  const auto a = split_indices(100, {0.8, 0.1, 0.1}, 1);
  std::size_t n[4] = {};
  for (auto s : a) ++n[static_cast<int>(s)];
  EXPECT_EQ(n[0], 80u);
  EXPECT_EQ(n[1], 10u);
  EXPECT_EQ(n[2], 10u);
  EXPECT_EQ(a, split_indices(100, {0.8, 0.1, 0.1}, 1));
  const auto b = split_indices(100, {0.8, 0.1, 0.1}, 2);
  EXPECT_NE(a, b);
  std::size_t m[4] = {};
  for (auto s : b) ++m[static_cast<int>(s)];
  EXPECT_EQ(m[0], 80u);
  EXPECT_THROW(split_indices(10, {0.8, 0.2, 0.1}, 1), Error);
}

TEST(Split, DatasetRoundTrip) {
  std::vector<SequenceRecord> seqs;
  for (int i = 0; i < 20; ++i) {
    seqs.push_back({"trip" + std::to_string(i), 1e9 + i, CellSequence::parse("#start 1 2 #end"), Split::kTrain});
  }
  const Dataset ds = split_dataset(seqs, {0.5, 0.25, 0.25}, 4);
  EXPECT_EQ(ds.count(Split::kTrain), 10u);
  EXPECT_EQ(ds.count(Split::kTest), 5u);
  std::stringstream ss;
  ds.write(ss);
  const Dataset back = Dataset::read(ss);
  ASSERT_EQ(back.records.size(), ds.records.size());
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    EXPECT_EQ(back.records[i].trip_id, ds.records[i].trip_id);
    EXPECT_EQ(back.records[i].split, ds.records[i].split);
    EXPECT_EQ(back.records[i].start_time, ds.records[i].start_time);
  }
  EXPECT_THROW(split_dataset({}, {0.8, 0.1, 0.1}, 1), Error);
}

TEST(Accumulation, StationaryVehicle) {
  const std::vector<RawTrajectory> trips{stay("v", 300, 600, 840)};
  const auto s = compute_accumulation(trips, line_map());
  for (std::int64_t k = 10; k <= 14; ++k) EXPECT_EQ(s.at(k, 4), 1.0) << k;
  EXPECT_EQ(s.at(10, 1), 0.0);
}

TEST(Accumulation, OverlapAdds) {
  const std::vector<RawTrajectory> trips{stay("a", 300, 600, 840), stay("b", 300, 720, 960)};
  const auto s = compute_accumulation(trips, line_map());
  EXPECT_EQ(s.at(11, 4), 1.0);
  EXPECT_EQ(s.at(12, 4), 2.0);
  EXPECT_EQ(s.at(14, 4), 2.0);
  EXPECT_EQ(s.at(15, 4), 1.0);
}

TEST(Accumulation, LastSeenCell) {
  // Detected in cell 1 at minute 0, in cell 2 half a minute after minute 3.
  const std::vector<RawTrajectory> trips{{"v", {{0, 0, 0}, {100, 0, 210}, {100, 0, 420}}}};
  const auto s = compute_accumulation(trips, line_map());
  for (std::int64_t k = 0; k <= 3; ++k) {
    EXPECT_EQ(s.at(k, 1), 1.0);
    EXPECT_EQ(s.at(k, 2), 0.0);
  }
  for (std::int64_t k = 4; k <= 7; ++k) {
    EXPECT_EQ(s.at(k, 1), 0.0);
    EXPECT_EQ(s.at(k, 2), 1.0);
  }
}

TEST(Accumulation, ConservationAndMaxima) {
  Rng rng(21);
  std::vector<RawTrajectory> trips;
  for (int v = 0; v < 60; ++v) {
    RawTrajectory tr{"v" + std::to_string(v), {}};
    double t = uniform(rng, 0, 3000);
    const int n = 1 + static_cast<int>(uniform_index(rng, 6));
    for (int i = 0; i < n; ++i) {
      tr.points.push_back({uniform(rng, -20, 320), 0, t});
      t += uniform(rng, 1, 400);
    }
    trips.push_back(tr);
  }
  const auto s = compute_accumulation(trips, line_map());
  for (std::int64_t k = s.minute_begin; k < s.minute_end(); ++k) {
    double total = 0.0;
    for (CellId c = 1; c <= 4; ++c) {
      total += s.at(k, c);
      EXPECT_LE(s.at(k, c), s.maxima[static_cast<std::size_t>(c - 1)]);
      EXPECT_GE(s.at(k, c), 0.0);
    }
    int active = 0;
    for (const auto& tr : trips) active += tr.points.front().t <= 60.0 * k && 60.0 * k <= tr.points.back().t;
    EXPECT_EQ(total, active) << k;
  }
}

TEST(Normalize, Rules) {
  AccumulationSeries s;
  s.n_cells = 3;
  s.minute_begin = 0;
  s.minute_count = 2;
  s.values = {5, 0, 10, 10, 0, 12};
  s.maxima = {10, 0, 10};
  const auto n = normalize(s);
  EXPECT_EQ(n.at(0, 1), 0.5);
  EXPECT_EQ(n.at(1, 1), 1.0);
  EXPECT_EQ(n.at(0, 2), 0.0);
  EXPECT_EQ(n.at(1, 3), 1.0);
  EXPECT_EQ(n.clamped, 1u);
}

TEST(Window, ShapeZerosAndConstant) {
  AccumulationSeries s;
  s.n_cells = 2;
  s.minute_begin = 100;
  s.minute_count = 30;
  s.values.assign(60, 0.0);
  s.maxima = {8, 0};
  const auto zero = traffic_window(s, 60.0 * 120 + 17, {});
  EXPECT_EQ(zero.rows(), 2);
  EXPECT_EQ(zero.cols(), 10);
  EXPECT_EQ(zero.maxCoeff(), 0.0);
  for (std::int64_t k = 110; k < 120; ++k) s.at(k, 1) = 6;
  const auto w = traffic_window(s, 60.0 * 120, {});
  for (int k = 0; k < 10; ++k) EXPECT_EQ(w(0, k), 0.75);
  EXPECT_EQ(w, traffic_window(normalize(s), 60.0 * 120, {}));
  const std::vector<CellId> only{2};
  EXPECT_EQ(traffic_window(s, 60.0 * 120, only).rows(), 1);
  try {
    traffic_window(s, 60.0 * 105, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "insufficient history");
  }
}

TEST(Window, MinuteOrdering) {
  AccumulationSeries s;
  s.n_cells = 1;
  s.minute_begin = 0;
  s.minute_count = 20;
  for (int k = 0; k < 20; ++k) s.values.push_back(k);
  s.maxima = {19};
  const auto w = traffic_window(s, 60.0 * 15 + 59, {});
  for (int k = 0; k < 10; ++k) EXPECT_DOUBLE_EQ(w(0, k), (5.0 + k) / 19.0);
}

TEST(AccumulationFile, RoundTripKeepsMaxima) {
  const std::vector<RawTrajectory> trips{stay("a", 0, 600, 1200), stay("b", 100, 700, 900)};
  auto s = compute_accumulation(trips, line_map());
  set_historical_maxima(s, 10, 13);
  const auto n = normalize(s);
  std::stringstream ss;
  n.write(ss);
  const auto back = AccumulationSeries::read(ss);
  EXPECT_EQ(back.maxima, s.maxima);
  EXPECT_EQ(back.maxima_begin, 10);
  EXPECT_EQ(back.maxima_end, 13);
  EXPECT_EQ(back.minute_begin, s.minute_begin);
  for (std::int64_t k = s.minute_begin; k < s.minute_end(); ++k) {
    for (CellId c = 1; c <= 4; ++c) EXPECT_DOUBLE_EQ(normalize(back).at(k, c), n.at(k, c));
  }
}
