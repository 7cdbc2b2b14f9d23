#include "trajpred/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <omp.h>

#include "trajpred/error.hpp"
#include "trajpred/rng.hpp"

namespace trajpred {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

GPolicy GPolicy::parse(const std::string& text) {
  GPolicy p;
  if (text.empty() || text == "all") return p;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t used = 0;
    unsigned long g = 0;
    try {
      g = std::stoul(item, &used);
    } catch (const std::exception&) {
      throw Error("bad g policy '" + text + "'");
    }
    if (used != item.size() || g < 1) throw Error("bad g policy '" + text + "'");
    p.values.push_back(g);
  }
  std::sort(p.values.begin(), p.values.end());
  p.values.erase(std::unique(p.values.begin(), p.values.end()), p.values.end());
  return p;
}

std::string GPolicy::to_string() const {
  if (values.empty()) return "all";
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) s += (i ? "," : "") + std::to_string(values[i]);
  return s;
}

TaskSet make_tasks(std::span<const SequenceRecord* const> records, const GPolicy& policy, std::size_t k) {
  if (k < 1) throw Error("k must be at least 1");
  TaskSet set;
  for (const auto* r : records) {
    const std::size_t m = r->sequence.length();
    if (m < 2) {
      ++set.skipped_short;
      continue;
    }
    auto add = [&](std::size_t g) { set.tasks.push_back({r->trip_id, r->start_time, r->sequence, g, k}); };
    if (policy.values.empty()) {
      for (std::size_t g = 1; g < m; ++g) add(g);
    } else {
      for (std::size_t g : policy.values) {
        if (g < m) add(g);
      }
    }
  }
  return set;
}

std::uint64_t candidate_seed(std::uint64_t master_seed, const std::string& trip_id, std::size_t g,
                             std::size_t index) {
  return derive_seed(master_seed, fnv1a64(trip_id), g, index);
}

ScoreRecord run_task(const EvalTask& task, const SequenceModel& model, const TrafficStateTensor* traffic,
                     std::uint64_t master_seed) {
  const std::size_t m = task.m();
  if (task.g < 1 || task.g >= m) throw Error("task needs 1 <= g < m");
  if (task.k < 1) throw Error("task needs k >= 1");
  const auto& tokens = task.reference.tokens;
  const std::span<const CellId> prefix(tokens.data(), task.g + 1);
  const std::span<const CellId> reference(tokens.data() + task.g + 1, m - task.g);
  const std::size_t max_len = std::max(default_max_len(tokens.size()), prefix.size() + 1);

  ScoreRecord rec;
  rec.trip_id = task.trip_id;
  rec.g = task.g;
  rec.m = m;
  rec.raw.reserve(task.k);
  for (std::size_t i = 0; i < task.k; ++i) {
    const auto gen = model.generate(prefix, traffic, candidate_seed(master_seed, task.trip_id, task.g, i), max_len);
    if (!gen.terminated) ++rec.unterminated;
    const auto continuation =
        strip_virtual(std::span<const CellId>(gen.tokens).subspan(prefix.size()));
    rec.raw.push_back(score_sequence(continuation, reference));
  }
  for (std::size_t s = 0; s < kScoreCount; ++s) {
    double sum = 0.0;
    for (const auto& r : rec.raw) sum += r.get(s);
    rec.mean.get(s) = sum / static_cast<double>(rec.raw.size());
  }
  return rec;
}

namespace {

std::vector<TrafficStateTensor> lookup_all(std::span<const EvalTask> tasks, const SequenceModel& model,
                                           const TrafficLookup& traffic) {
  std::vector<TrafficStateTensor> out;
  if (model.kind() != ModelKind::kArnn) return out;
  if (!traffic) throw Error("arnn evaluation needs a traffic lookup");
  out.reserve(tasks.size());
  for (const auto& t : tasks) out.push_back(traffic(t));
  return out;
}

const TrafficStateTensor* nth(const std::vector<TrafficStateTensor>& v, std::size_t i) {
  return v.empty() ? nullptr : &v[i];
}

}  // namespace

EvalRun run_tasks_serial(std::span<const EvalTask> tasks, const SequenceModel& model,
                         const TrafficLookup& traffic, std::uint64_t master_seed) {
  const auto windows = lookup_all(tasks, model, traffic);
  EvalRun run;
  run.records.reserve(tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    run.records.push_back(run_task(tasks[i], model, nth(windows, i), master_seed));
    run.unterminated += run.records.back().unterminated;
  }
  return run;
}

EvalRun run_tasks(std::span<const EvalTask> tasks, const SequenceModel& model, const TrafficLookup& traffic,
                  std::uint64_t master_seed) {
  const auto windows = lookup_all(tasks, model, traffic);
  EvalRun run;
  run.records.resize(tasks.size());
  const auto n = static_cast<std::int64_t>(tasks.size());
  std::string failure;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    try {
      run.records[idx] = run_task(tasks[idx], model, nth(windows, idx), master_seed);
    } catch (const std::exception& e) {
#pragma omp critical(trajpred_eval_failure)
      if (failure.empty()) failure = e.what();
    }
  }
  if (!failure.empty()) throw Error(failure);
  for (const auto& r : run.records) run.unterminated += r.unterminated;
  return run;
}

void write_scores(std::ostream& out, std::span<const ScoreRecord> records) {
  out << "trip_id,g,m";
  for (const char* name : kScoreNames) out << ',' << name;
  out << '\n';
  for (const auto& r : records) {
    out << r.trip_id << ',' << r.g << ',' << r.m;
    for (std::size_t s = 0; s < kScoreCount; ++s) out << ',' << fmt(r.mean.get(s));
    out << '\n';
  }
}

void write_scores(const std::filesystem::path& path, std::span<const ScoreRecord> records) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_scores(out, records);
}

std::vector<ScoreRecord> read_scores(std::istream& in) {
  std::vector<ScoreRecord> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.rfind("trip_id,", 0) == 0) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string item;
    while (std::getline(ls, item, ',')) f.push_back(item);
    if (f.size() != 3 + kScoreCount) throw Error("scores: malformed row " + std::to_string(row));
    ScoreRecord r;
    r.trip_id = f[0];
    r.g = std::stoul(f[1]);
    r.m = std::stoul(f[2]);
    for (std::size_t s = 0; s < kScoreCount; ++s) r.mean.get(s) = std::stod(f[3 + s]);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<ScoreRecord> read_scores(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  return read_scores(in);
}

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw Error("quantile of empty set");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

Summary summarize(std::vector<double> values) {
  if (values.empty()) throw Error("summary of empty set");
  std::sort(values.begin(), values.end());
  Summary s;
  s.count = values.size();
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  s.min = values.front();
  s.max = values.back();
  s.q1 = quantile_sorted(values, 0.25);
  s.median = quantile_sorted(values, 0.5);
  s.q3 = quantile_sorted(values, 0.75);
  return s;
}

std::vector<LengthAggregate> aggregate_by_length(std::span<const ScoreRecord> records, bool per_g) {
  if (records.empty()) throw Error("aggregate: no records");
  std::map<std::pair<std::size_t, std::size_t>, std::vector<const ScoreRecord*>> groups;  // (m, g)
  for (const auto& r : records) {
    groups[{r.m, 0}].push_back(&r);
    if (per_g) groups[{r.m, r.g}].push_back(&r);
  }
  std::vector<LengthAggregate> out;
  for (const auto& [key, members] : groups) {
    LengthAggregate a;
    a.m = key.first;
    a.g = key.second;
    for (std::size_t s = 0; s < kScoreCount; ++s) {
      std::vector<double> v;
      v.reserve(members.size());
      for (const auto* r : members) v.push_back(r->mean.get(s));
      a.scores[s] = summarize(std::move(v));
    }
    out.push_back(a);
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return std::pair(a.g != 0, a.m) < std::pair(b.g != 0, b.m);
  });
  return out;
}

void write_aggregates(std::ostream& out, std::span<const LengthAggregate> rows) {
  out << "m,g,score,count,mean,min,q1,median,q3,max\n";
  for (const auto& a : rows) {
    for (std::size_t s = 0; s < kScoreCount; ++s) {
      const auto& x = a.scores[s];
      out << a.m << ',' << (a.g == 0 ? std::string("all") : std::to_string(a.g)) << ',' << kScoreNames[s] << ','
          << x.count << ',' << fmt(x.mean) << ',' << fmt(x.min) << ',' << fmt(x.q1) << ',' << fmt(x.median) << ','
          << fmt(x.q3) << ',' << fmt(x.max) << '\n';
    }
  }
}

ImprovementReport improvement_rate(std::span<const ScoreRecord> arnn, std::span<const ScoreRecord> rnn) {
  auto keys = [](std::span<const ScoreRecord> rs) {
    std::set<std::pair<std::string, std::size_t>> k;
    for (const auto& r : rs) k.emplace(r.trip_id, r.g);
    return k;
  };
  if (keys(arnn) != keys(rnn)) throw Error("improvement rate: record sets are keyed differently");

  using Sums = std::array<double, kScoreCount>;
  std::map<std::pair<std::size_t, std::size_t>, std::pair<Sums, Sums>> by_gm;  // (m, g)
  for (const auto& r : arnn) {
    auto& e = by_gm[{r.m, r.g}].first;
    for (std::size_t s = 0; s < kScoreCount; ++s) e[s] += r.mean.get(s);
  }
  for (const auto& r : rnn) {
    auto& e = by_gm[{r.m, r.g}].second;
    for (std::size_t s = 0; s < kScoreCount; ++s) e[s] += r.mean.get(s);
  }

  ImprovementReport rep;
  for (const auto& [key, sums] : by_gm) {
    ImprovementRow row;
    row.m = key.first;
    row.g = key.second;
    for (std::size_t s = 0; s < kScoreCount; ++s) {
      // Group sizes are equal, so the ratio of sums is the ratio of means.
      if (sums.second[s] > 0.0) {
        row.ratio[s] = sums.first[s] / sums.second[s];
        row.defined[s] = true;
      } else {
        ++rep.undefined;
      }
    }
    rep.rows.push_back(row);
  }

  std::map<std::size_t, std::vector<const ImprovementRow*>> per_m;
  for (const auto& row : rep.rows) per_m[row.m].push_back(&row);
  for (const auto& [m, rows] : per_m) {
    ImprovementByLength agg;
    agg.m = m;
    for (std::size_t s = 0; s < kScoreCount; ++s) {
      double sum = 0.0;
      double lo = std::numeric_limits<double>::infinity();
      double hi = -std::numeric_limits<double>::infinity();
      std::size_t n = 0;
      for (const auto* row : rows) {
        if (!row->defined[s]) continue;
        sum += row->ratio[s];
        lo = std::min(lo, row->ratio[s]);
        hi = std::max(hi, row->ratio[s]);
        ++n;
      }
      agg.groups[s] = n;
      agg.average[s] = n ? sum / static_cast<double>(n) : std::nan("");
      agg.min[s] = n ? lo : std::nan("");
      agg.max[s] = n ? hi : std::nan("");
    }
    rep.by_length.push_back(agg);
  }
  return rep;
}

void write_improvement(std::ostream& out, const ImprovementReport& report) {
  out << "g,m";
  for (const char* name : kScoreNames) out << ',' << name;
  out << '\n';
  for (const auto& row : report.rows) {
    out << row.g << ',' << row.m;
    for (std::size_t s = 0; s < kScoreCount; ++s) out << ',' << (row.defined[s] ? fmt(row.ratio[s]) : "nan");
    out << '\n';
  }
}

void write_improvement_by_length(std::ostream& out, const ImprovementReport& report) {
  out << "m,score,groups,average,min,max\n";
  for (const auto& a : report.by_length) {
    for (std::size_t s = 0; s < kScoreCount; ++s) {
      out << a.m << ',' << kScoreNames[s] << ',' << a.groups[s] << ',' << fmt(a.average[s]) << ','
          << fmt(a.min[s]) << ',' << fmt(a.max[s]) << '\n';
    }
  }
}

double mean_score(std::span<const ScoreRecord> records, std::size_t score, std::size_t g) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : records) {
    if (g != 0 && r.g != g) continue;
    sum += r.mean.get(score);
    ++n;
  }
  if (n == 0) throw Error("mean_score: no matching records");
  return sum / static_cast<double>(n);
}

}  // namespace trajpred
