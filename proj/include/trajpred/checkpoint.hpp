#pragma once

#include <filesystem>
#include <iosfwd>

#include "json.hpp"
#include "trajpred/nncore.hpp"

namespace trajpred {

// Binary container: magic, version, JSON metadata, then (name, shape, raw
// little-endian float64 values) per parameter in store order.
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  ModelParams params;
  nlohmann::json metadata = nlohmann::json::object();

  void write(std::ostream& out) const;
  static Checkpoint read(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

}  // namespace trajpred
