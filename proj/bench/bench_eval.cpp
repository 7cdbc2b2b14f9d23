// Serial reference runner vs the OpenMP runner on the same task set.

#include <benchmark/benchmark.h>

#include "trajpred/eval.hpp"

using namespace trajpred;

namespace {

struct Fixture {
  SequenceModel model;
  std::vector<SequenceRecord> records;
  std::vector<EvalTask> tasks;
  TrafficStateTensor traffic;

  Fixture() : model(config(), vocab(), 1) {
    Rng rng(2);
    for (int i = 0; i < 64; ++i) {
      std::vector<CellId> cells;
      while (cells.size() < 8) {
        const auto c = static_cast<CellId>(1 + uniform_index(rng, 30));
        if (cells.empty() || cells.back() != c) cells.push_back(c);
      }
      records.push_back({"trip-" + std::to_string(i), 0.0, make_sequence(cells), Split::kTest});
    }
    std::vector<const SequenceRecord*> ptrs;
    for (const auto& r : records) ptrs.push_back(&r);
    tasks = make_tasks(ptrs, GPolicy::parse("1,4"), 20).tasks;
    traffic = TrafficStateTensor::Constant(30, kTrafficWindowMinutes, 0.5);
  }

  static ModelConfig config() {
    ModelConfig c;
    c.kind = ModelKind::kArnn;
    c.embed_dim = 16;
    c.hidden_dim = 32;
    return c;
  }

  static Vocabulary vocab() {
    std::vector<CellId> cells(30);
    for (int i = 0; i < 30; ++i) cells[static_cast<std::size_t>(i)] = i + 1;
    return Vocabulary(cells);
  }

  TrafficLookup lookup() const {
    return [this](const EvalTask&) { return traffic; };
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

void BM_Serial(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(run_tasks_serial(f.tasks, f.model, f.lookup(), 3));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.tasks.size()));
}

void BM_OpenMP(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(run_tasks(f.tasks, f.model, f.lookup(), 3));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.tasks.size()));
}

}  // namespace

BENCHMARK(BM_Serial)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_OpenMP)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
