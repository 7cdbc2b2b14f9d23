#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trajpred/corpus.hpp"
#include "trajpred/models.hpp"

namespace trajpred {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

std::string version_string();

/// Dispatches `args` (without the program name) to a subcommand.
/// Returns 0 on success, 1 on stage failure and 2 on usage errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Key-value pairs from an INI file: unsectioned keys plus those under
/// `[section]`, in file order.
std::vector<std::pair<std::string, std::string>> read_config(const std::filesystem::path& path,
                                                             const std::string& section);

struct SampleSet {
  std::vector<TrainingSample> samples;
  std::vector<const SequenceRecord*> records;  // parallel to samples
  std::size_t unknown_cells = 0;               // records with cells outside the vocabulary
  std::size_t no_history = 0;                  // ARNN records without a full traffic window
};

// Samples for `records`; traffic windows are attached when `series` is given.
SampleSet build_samples(std::span<const SequenceRecord* const> records, const Vocabulary& vocab,
                        const AccumulationSeries* series);

}  // namespace trajpred
