#include "trajpred/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <string>

#include "trajpred/error.hpp"

namespace trajpred {

namespace {

constexpr char kMagic[8] = {'T', 'R', 'J', 'P', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw Error("checkpoint: truncated");
  return v;
}

std::string get_string(std::istream& in, std::uint64_t n) {
  if (n > (1ULL << 32)) throw Error("checkpoint: corrupt length");
  std::string s(n, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(n))) throw Error("checkpoint: truncated");
  return s;
}

}  // namespace

void Checkpoint::write(std::ostream& out) const {
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kFormatVersion);
  const std::string meta = metadata.dump();
  put<std::uint64_t>(out, meta.size());
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  put<std::uint64_t>(out, params.size());
  for (const auto& e : params.entries()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put<std::uint32_t>(out, 2);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(e.value.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(e.value.cols()));
    out.write(reinterpret_cast<const char*>(e.value.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(e.value.size())));
  }
}

Checkpoint Checkpoint::read(std::istream& in) {
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw Error("checkpoint: bad magic");
  }
  const auto version = get<std::uint32_t>(in);
  if (version != kFormatVersion) throw Error("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  ck.metadata = nlohmann::json::parse(get_string(in, get<std::uint64_t>(in)));
  const auto n = get<std::uint64_t>(in);
  for (std::uint64_t k = 0; k < n; ++k) {
    std::string name = get_string(in, get<std::uint32_t>(in));
    const auto ndim = get<std::uint32_t>(in);
    if (ndim != 2) throw Error("checkpoint: entry '" + name + "' has unsupported rank");
    const auto rows = get<std::uint64_t>(in);
    const auto cols = get<std::uint64_t>(in);
    if (rows > (1ULL << 28) || cols > (1ULL << 28)) throw Error("checkpoint: corrupt shape");
    Matrix& m = ck.params.add(std::move(name), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    if (!in.read(reinterpret_cast<char*>(m.data()),
                 static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())))) {
      throw Error("checkpoint: truncated");
    }
  }
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write(out);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  return read(in);
}

}  // namespace trajpred
