#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "trajpred/cellspace.hpp"
#include "trajpred/error.hpp"
#include "trajpred/rng.hpp"

using namespace trajpred;

namespace {

RawTrajectory trip_through(const std::vector<Point2>& pts) {
  RawTrajectory tr{"t", {}};
  double t = 0.0;
  for (const auto& p : pts) tr.points.push_back({p.x, p.y, t += 10.0});
  return tr;
}

double dist(const Point2& a, const Point2& b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace

TEST(Cluster, SinglePoint) {
  const std::vector<Point2> pts{{0, 0}};
  const CellMap map = cluster_points(pts, 300);
  ASSERT_EQ(map.size(), 1u);
  EXPECT_EQ(map.centroid(1).x, 0.0);
  EXPECT_EQ(map.centroid(1).y, 0.0);
  EXPECT_EQ(map.radius(), 300.0);
}

TEST(Cluster, SeparatedPointsSplit) {
  const std::vector<Point2> pts{{0, 0}, {1000, 0}};
  EXPECT_EQ(cluster_points(pts, 300).size(), 2u);
}

TEST(Cluster, Errors) {
  EXPECT_THROW(cluster_points({}, 300), Error);
  const std::vector<Point2> bad{{0, 0}, {NAN, 1}};
  try {
    cluster_points(bad, 300);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "invalid point");
  }
  const std::vector<Point2> ok{{0, 0}};
  EXPECT_THROW(cluster_points(ok, 0.0), Error);
}

TEST(Cluster, CentroidsAreMemberMeansAndWithinTolerance) {
  Rng rng(11);
  std::vector<Point2> pts;
  for (int i = 0; i < 2000; ++i) pts.push_back({uniform(rng, 0, 5000), uniform(rng, 0, 5000)});
  const double r = 300;
  const CellMap map = cluster_points(pts, r);
  // Replay membership: a point belongs to the cluster it joined. Recompute by
  // nearest-final-centroid is not the same thing, so re-run the greedy rule
  // with an independent brute-force loop.
  std::vector<Point2> sums;
  std::vector<std::size_t> counts;
  std::vector<std::size_t> member(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::size_t best = sums.size();
    double best_d = r;
    for (std::size_t c = 0; c < sums.size(); ++c) {
      const Point2 cen{sums[c].x / counts[c], sums[c].y / counts[c]};
      const double d = dist(pts[i], cen);
      if (d <= best_d && (best == sums.size() || d < best_d)) {
        best = c;
        best_d = d;
      }
    }
    if (best == sums.size()) {
      sums.push_back(pts[i]);
      counts.push_back(1);
    } else {
      sums[best].x += pts[i].x;
      sums[best].y += pts[i].y;
      ++counts[best];
    }
    member[i] = best;
  }
  ASSERT_EQ(map.size(), sums.size());
  for (std::size_t c = 0; c < sums.size(); ++c) {
    const Point2& got = map.centroid(static_cast<CellId>(c + 1));
    EXPECT_NEAR(got.x, sums[c].x / counts[c], 1e-9);
    EXPECT_NEAR(got.y, sums[c].y / counts[c], 1e-9);
  }
  for (std::size_t i = 0; i < pts.size(); ++i) {
    EXPECT_LE(dist(pts[i], map.centroid(static_cast<CellId>(member[i] + 1))), 1.5 * r);
  }
}

TEST(Cluster, DeterministicGivenOrder) {
  Rng rng(3);
  std::vector<Point2> pts;
  for (int i = 0; i < 500; ++i) pts.push_back({uniform(rng, 0, 3000), uniform(rng, 0, 3000)});
  std::ostringstream a, b;
  cluster_points(pts, 250).write(a);
  cluster_points(pts, 250).write(b);
  EXPECT_EQ(a.str(), b.str());
}

TEST(Assign, ExactCentroid) {
  std::vector<Point2> cs;
  for (int i = 0; i < 10; ++i) cs.push_back({100.0 * i, 0});
  const CellMap map(cs, 50);
  EXPECT_EQ(assign_cell({600, 0}, map), 7);
}

TEST(Assign, TieGoesToLowestIndex) {
  const CellMap map({{0, 10}, {-10, 0}, {0, 20}, {10, 0}, {30, 30}}, 5);
  // Equidistant from cell 2 (-10,0) and cell 4 (10,0); cell 1 is farther.
  EXPECT_EQ(assign_cell({0, -1}, map), 2);
  const CellMap m2({{0, 0}, {10, 0}, {3, 9}}, 5);
  EXPECT_EQ(assign_cell({3, 4}, m2), 1);
}

TEST(Assign, VoronoiPropertyAndErrors) {
  Rng rng(5);
  std::vector<Point2> cs;
  for (int i = 0; i < 40; ++i) cs.push_back({uniform(rng, 0, 1000), uniform(rng, 0, 1000)});
  const CellMap map(cs, 100);
  for (int k = 0; k < 500; ++k) {
    const Point2 p{uniform(rng, -200, 1200), uniform(rng, -200, 1200)};
    const CellId c = assign_cell(p, map);
    EXPECT_EQ(assign_cell(p, map), c);
    for (const auto& other : cs) EXPECT_GE(dist(p, other), dist(p, map.centroid(c)));
  }
  EXPECT_THROW(assign_cell({INFINITY, 0}, map), Error);
  EXPECT_THROW(assign_cell({0, 0}, CellMap()), Error);
}

TEST(Discretize, CollapsesAndWraps) {
  const CellMap map({{0, 0}, {100, 0}, {200, 0}}, 40);
  EXPECT_EQ(discretize_trajectory(trip_through({{200, 0}, {201, 1}, {199, 0}}), map).to_string(), "#start 3 #end");
  const auto seq = discretize_trajectory(
      trip_through({{0, 0}, {1, 0}, {100, 0}, {101, 0}, {99, 0}, {2, 0}}), map);
  EXPECT_EQ(seq.to_string(), "#start 1 2 1 #end");
  EXPECT_THROW(discretize_trajectory(RawTrajectory{"e", {}}, map), Error);
}

TEST(Discretize, NoConsecutiveDuplicatesAndShorter) {
  Rng rng(9);
  std::vector<Point2> cs;
  for (int i = 0; i < 15; ++i) cs.push_back({uniform(rng, 0, 1000), uniform(rng, 0, 1000)});
  const CellMap map(cs, 100);
  for (int k = 0; k < 200; ++k) {
    std::vector<Point2> pts(1 + uniform_index(rng, 30));
    for (auto& p : pts) p = {uniform(rng, 0, 1000), uniform(rng, 0, 1000)};
    const auto seq = discretize_trajectory(trip_through(pts), map);
    EXPECT_NO_THROW(validate(seq));
    EXPECT_LE(seq.length(), pts.size());
    const auto cells = seq.cells();
    for (std::size_t i = 1; i < cells.size(); ++i) EXPECT_NE(cells[i], cells[i - 1]);
  }
}

TEST(SplitXY, Layout) {
  const auto s = CellSequence::parse("#start 4 7 9 #end");
  const auto xy = split_xy(s);
  EXPECT_EQ(xy.x, (std::vector<CellId>{kStartToken, 4, 7, 9}));
  EXPECT_EQ(xy.y, (std::vector<CellId>{4, 7, 9, kEndToken}));
  const auto one = split_xy(CellSequence::parse("#start 5 #end"));
  EXPECT_EQ(one.x, (std::vector<CellId>{kStartToken, 5}));
  EXPECT_EQ(one.y, (std::vector<CellId>{5, kEndToken}));
}

TEST(SplitXY, EmptyJourney) {
  try {
    split_xy(CellSequence::parse("#start #end"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "empty journey");
  }
}

TEST(Sequence, ValidationAndParse) {
  EXPECT_THROW(validate(CellSequence{{kStartToken, 1, 1, kEndToken}}), Error);
  EXPECT_THROW(validate(CellSequence{{1, kEndToken}}), Error);
  EXPECT_THROW(validate(CellSequence{{kStartToken, 1}}), Error);
  EXPECT_THROW(validate(CellSequence{{kStartToken, kStartToken, kEndToken}}), Error);
  EXPECT_THROW(CellSequence::parse("#start x #end"), Error);
  const std::vector<CellId> cells{3, 1, 3};
  EXPECT_EQ(make_sequence(cells).to_string(), "#start 3 1 3 #end");
}

TEST(CellMapFile, RoundTrip) {
  const CellMap map({{0.1, -2.5}, {1e6 / 3, 7}}, 300);
  std::stringstream ss;
  map.write(ss);
  const CellMap back = CellMap::read(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.radius(), 300.0);
  EXPECT_EQ(back.centroid(2).x, 1e6 / 3);
  EXPECT_EQ(back.centroid(1).y, -2.5);
  std::stringstream bad("cellmap v9 radius=1 n=0\n");
  EXPECT_THROW(CellMap::read(bad), Error);
}
