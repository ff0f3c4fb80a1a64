#pragma once

// Content digests and the on-disk, content-addressed FRF cache.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "modlink/interconnect.hpp"
#include "modlink/lti.hpp"

namespace modlink {

/// Incremental SHA-256 (OpenSSL EVP).
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  Sha256& update(const void* data, std::size_t size);
  Sha256& update(std::string_view text);
  Sha256& update_u64(std::uint64_t value);
  Sha256& update_f64(double value);
  /// Length-prefixed, so adjacent strings cannot alias.
  Sha256& update_string(std::string_view text);
  Sha256& update(const SparseMatrix& x);
  Sha256& update(const Matrix& x);

  /// Finalizes; the object cannot be updated afterwards.
  std::string hex_digest();

 private:
  void* ctx_;
  bool done_ = false;
};

std::string sha256_hex(std::string_view data);

/// Digest of a realization (matrices, port labels) and a frequency grid.
std::string frf_cache_key(const DescriptorStateSpace& ss, const std::vector<double>& omega);

/// Binary serialization of an FrfSweep; parse(serialize(x)) == x bit for bit.
std::string serialize_frf(const FrfSweep& sweep);
/// Returns nothing if the payload is truncated or its checksum does not match.
std::optional<FrfSweep> deserialize_frf(std::string_view bytes);

/// Directory of <key>.frf files. Writes go to a unique temporary file that is
/// renamed into place, so concurrent writers never expose partial payloads.
class FrfCache {
 public:
  struct Stats {
    std::size_t hits = 0;
    std::size_t misses = 0;
    std::size_t evaluations = 0;  ///< subsystem FRF computations performed
  };

  explicit FrfCache(std::filesystem::path directory);

  const std::filesystem::path& directory() const noexcept { return dir_; }
  std::optional<FrfSweep> load(const std::string& key);
  void store(const std::string& key, const FrfSweep& sweep);

  FrfSweep get_or_compute(const DescriptorStateSpace& ss, const std::vector<double>& omega,
                          const FrfOptions& options = {});
  BlockFrf block(const BlockSystem& block, const std::vector<double>& omega, const FrfOptions& options = {});

  const Stats& stats() const noexcept { return stats_; }

 private:
  std::filesystem::path dir_;
  Stats stats_;
};

}  // namespace modlink
