#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace trajpred {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

struct TrajectoryPoint {
  double x = 0.0;  // meters east
  double y = 0.0;  // meters north
  double t = 0.0;  // seconds since epoch
};

struct RawTrajectory {
  std::string trip_id;
  std::vector<TrajectoryPoint> points;

  double start_time() const { return points.front().t; }
};

// Throws unless points are non-empty, finite and time-ordered.
void validate(const RawTrajectory& tr);

// 1-based cell index into a CellMap. Virtual tokens are negative.
using CellId = std::int32_t;
inline constexpr CellId kStartToken = -1;
inline constexpr CellId kEndToken = -2;

std::string token_to_string(CellId token);
CellId token_from_string(const std::string& s);

class CellMap {
 public:
  static constexpr int kFormatVersion = 1;

  CellMap() = default;
  CellMap(std::vector<Point2> centroids, double radius);

  std::size_t size() const { return centroids_.size(); }
  double radius() const { return radius_; }
  const std::vector<Point2>& centroids() const { return centroids_; }
  const Point2& centroid(CellId id) const;

  void write(std::ostream& out) const;
  static CellMap read(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static CellMap load(const std::filesystem::path& path);

 private:
  std::vector<Point2> centroids_;
  double radius_ = 0.0;
};

// Interior cells wrapped in #start/#end.
struct CellSequence {
  std::vector<CellId> tokens;

  // Number of interior cells (m).
  std::size_t length() const { return tokens.size() < 2 ? 0 : tokens.size() - 2; }
  std::span<const CellId> cells() const;
  std::string to_string() const;
  static CellSequence parse(const std::string& text);
};

// Throws unless the sequence satisfies the #start/#end framing and has no
// repeated consecutive cells.
void validate(const CellSequence& seq);

CellSequence make_sequence(std::span<const CellId> cells);

struct XYSample {
  std::vector<CellId> x;
  std::vector<CellId> y;
};

/// Single-pass greedy radius clustering. Each point joins the nearest
/// existing cluster whose centroid lies within `radius`, otherwise it opens
/// a new cluster. Centroids are running means of their members, so the
/// result depends on input order.
CellMap cluster_points(std::span<const Point2> points, double radius);

/// Nearest-centroid (Voronoi) assignment, ties to the lowest index.
CellId assign_cell(const Point2& point, const CellMap& map);

CellSequence discretize_trajectory(const RawTrajectory& tr, const CellMap& map);

/// Input/target alignment: X = tokens[0..m], Y = tokens[1..m+1].
XYSample split_xy(const CellSequence& seq);

}  // namespace trajpred
