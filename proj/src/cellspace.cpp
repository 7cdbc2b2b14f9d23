#include "trajpred/cellspace.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "trajpred/error.hpp"

namespace trajpred {

namespace {

bool finite(const Point2& p) { return std::isfinite(p.x) && std::isfinite(p.y); }

double dist2(const Point2& a, const Point2& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return dx * dx + dy * dy;
}

// Bucket grid with side `radius` over cluster centroids. Any centroid within
// `radius` of a query lies in the query's bucket or one of its 8 neighbours.
class CentroidGrid {
 public:
  explicit CentroidGrid(double side) : side_(side) {}

  using Key = std::pair<std::int64_t, std::int64_t>;

  Key key_of(const Point2& p) const {
    return {static_cast<std::int64_t>(std::floor(p.x / side_)),
            static_cast<std::int64_t>(std::floor(p.y / side_))};
  }

  void insert(std::size_t id, const Point2& p) { buckets_[pack(key_of(p))].push_back(id); }

  void move(std::size_t id, const Point2& from, const Point2& to) {
    const Key a = key_of(from);
    const Key b = key_of(to);
    if (a == b) return;
    auto& old_bucket = buckets_[pack(a)];
    std::erase(old_bucket, id);
    buckets_[pack(b)].push_back(id);
  }

  template <typename Fn>
  void for_each_near(const Point2& p, Fn&& fn) const {
    const auto [kx, ky] = key_of(p);
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        auto it = buckets_.find(pack({kx + dx, ky + dy}));
        if (it == buckets_.end()) continue;
        for (std::size_t id : it->second) fn(id);
      }
    }
  }

 private:
  static std::uint64_t pack(const Key& k) {
    return (static_cast<std::uint64_t>(k.first) << 32) ^
           (static_cast<std::uint64_t>(k.second) & 0xFFFFFFFFULL);
  }

  double side_;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> buckets_;
};

}  // namespace

void validate(const RawTrajectory& tr) {
  if (tr.points.empty()) throw Error("trajectory '" + tr.trip_id + "': no points");
  double prev = -std::numeric_limits<double>::infinity();
  for (const auto& p : tr.points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.t)) {
      throw Error("trajectory '" + tr.trip_id + "': invalid point");
    }
    if (p.t < prev) throw Error("trajectory '" + tr.trip_id + "': timestamps decrease");
    prev = p.t;
  }
}

std::string token_to_string(CellId token) {
  if (token == kStartToken) return "#start";
  if (token == kEndToken) return "#end";
  return std::to_string(token);
}

CellId token_from_string(const std::string& s) {
  if (s == "#start") return kStartToken;
  if (s == "#end") return kEndToken;
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(s, &used);
  } catch (const std::exception&) {
    throw Error("bad token '" + s + "'");
  }
  if (used != s.size() || v < 1 || v > std::numeric_limits<CellId>::max()) {
    throw Error("bad token '" + s + "'");
  }
  return static_cast<CellId>(v);
}

CellMap::CellMap(std::vector<Point2> centroids, double radius)
    : centroids_(std::move(centroids)), radius_(radius) {
  if (centroids_.empty()) throw Error("cell map: no cells");
  if (!(radius_ > 0.0) || !std::isfinite(radius_)) throw Error("cell map: radius must be positive");
  for (const auto& c : centroids_) {
    if (!finite(c)) throw Error("cell map: non-finite centroid");
  }
}

const Point2& CellMap::centroid(CellId id) const {
  if (id < 1 || static_cast<std::size_t>(id) > centroids_.size()) {
    throw Error("cell map: index " + std::to_string(id) + " out of range");
  }
  return centroids_[static_cast<std::size_t>(id) - 1];
}

void CellMap::write(std::ostream& out) const {
  out << "cellmap v" << kFormatVersion << " radius=";
  out.precision(17);
  out << radius_ << " n=" << centroids_.size() << '\n';
  for (std::size_t i = 0; i < centroids_.size(); ++i) {
    out << (i + 1) << ',' << centroids_[i].x << ',' << centroids_[i].y << '\n';
  }
}

CellMap CellMap::read(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw Error("cell map: missing header");
  std::istringstream hs(header);
  std::string magic, version, radius_kv, n_kv;
  hs >> magic >> version >> radius_kv >> n_kv;
  if (magic != "cellmap" || version != "v" + std::to_string(kFormatVersion)) {
    throw Error("cell map: unsupported header '" + header + "'");
  }
  if (radius_kv.rfind("radius=", 0) != 0 || n_kv.rfind("n=", 0) != 0) {
    throw Error("cell map: malformed header '" + header + "'");
  }
  const double radius = std::stod(radius_kv.substr(7));
  const std::size_t n = std::stoul(n_kv.substr(2));
  std::vector<Point2> centroids;
  centroids.reserve(n);
  std::string line;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string idx, xs, ys;
    if (!std::getline(ls, idx, ',') || !std::getline(ls, xs, ',') || !std::getline(ls, ys)) {
      throw Error("cell map: malformed row " + std::to_string(row));
    }
    if (std::stoul(idx) != centroids.size() + 1) {
      throw Error("cell map: indices not dense at row " + std::to_string(row));
    }
    centroids.push_back({std::stod(xs), std::stod(ys)});
  }
  if (centroids.size() != n) throw Error("cell map: row count does not match header");
  return CellMap(std::move(centroids), radius);
}

void CellMap::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write(out);
}

CellMap CellMap::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  return read(in);
}

std::span<const CellId> CellSequence::cells() const {
  if (tokens.size() < 2) return {};
  return std::span<const CellId>(tokens).subspan(1, tokens.size() - 2);
}

std::string CellSequence::to_string() const {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += token_to_string(tokens[i]);
  }
  return s;
}

CellSequence CellSequence::parse(const std::string& text) {
  CellSequence seq;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) seq.tokens.push_back(token_from_string(tok));
  validate(seq);
  return seq;
}

void validate(const CellSequence& seq) {
  const auto& t = seq.tokens;
  if (t.size() < 2 || t.front() != kStartToken || t.back() != kEndToken) {
    throw Error("cell sequence must be framed by #start and #end");
  }
  for (std::size_t i = 1; i + 1 < t.size(); ++i) {
    if (t[i] < 1) throw Error("cell sequence has an interior virtual token");
    if (i > 1 && t[i] == t[i - 1]) throw Error("cell sequence repeats a cell consecutively");
  }
}

CellSequence make_sequence(std::span<const CellId> cells) {
  CellSequence seq;
  seq.tokens.reserve(cells.size() + 2);
  seq.tokens.push_back(kStartToken);
  seq.tokens.insert(seq.tokens.end(), cells.begin(), cells.end());
  seq.tokens.push_back(kEndToken);
  validate(seq);
  return seq;
}

CellMap cluster_points(std::span<const Point2> points, double radius) {
  if (points.empty()) throw Error("no points");
  if (!(radius > 0.0) || !std::isfinite(radius)) throw Error("radius must be positive");
  for (const auto& p : points) {
    if (!finite(p)) throw Error("invalid point");
  }

  std::vector<Point2> centroids;
  std::vector<std::size_t> counts;
  CentroidGrid grid(radius);
  const double r2 = radius * radius;

  for (const auto& p : points) {
    std::size_t best = centroids.size();
    double best_d2 = std::numeric_limits<double>::infinity();
    grid.for_each_near(p, [&](std::size_t id) {
      const double d2 = dist2(p, centroids[id]);
      if (d2 < best_d2 || (d2 == best_d2 && id < best)) {
        best = id;
        best_d2 = d2;
      }
    });
    if (best < centroids.size() && best_d2 <= r2) {
      const Point2 old = centroids[best];
      const double n = static_cast<double>(++counts[best]);
      centroids[best].x += (p.x - old.x) / n;
      centroids[best].y += (p.y - old.y) / n;
      grid.move(best, old, centroids[best]);
    } else {
      grid.insert(centroids.size(), p);
      centroids.push_back(p);
      counts.push_back(1);
    }
  }
  return CellMap(std::move(centroids), radius);
}

CellId assign_cell(const Point2& point, const CellMap& map) {
  if (!finite(point)) throw Error("invalid point");
  if (map.size() == 0) throw Error("cell map: no cells");
  const auto& cs = map.centroids();
  std::size_t best = 0;
  double best_d2 = dist2(point, cs[0]);
  for (std::size_t i = 1; i < cs.size(); ++i) {
    const double d2 = dist2(point, cs[i]);
    if (d2 < best_d2) {
      best = i;
      best_d2 = d2;
    }
  }
  return static_cast<CellId>(best + 1);
}

CellSequence discretize_trajectory(const RawTrajectory& tr, const CellMap& map) {
  validate(tr);
  CellSequence seq;
  seq.tokens.reserve(tr.points.size() + 2);
  seq.tokens.push_back(kStartToken);
  for (const auto& p : tr.points) {
    const CellId c = assign_cell({p.x, p.y}, map);
    if (seq.tokens.back() != c) seq.tokens.push_back(c);
  }
  seq.tokens.push_back(kEndToken);
  return seq;
}

XYSample split_xy(const CellSequence& seq) {
  validate(seq);
  if (seq.length() == 0) throw Error("empty journey");
  XYSample s;
  s.x.assign(seq.tokens.begin(), seq.tokens.end() - 1);
  s.y.assign(seq.tokens.begin() + 1, seq.tokens.end());
  return s;
}

}  // namespace trajpred
