#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace leda {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid or inconsistent configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A required input artifact (dataset, checkpoint, codebook, ...) is missing.
class PrerequisiteError : public Error {
 public:
  using Error::Error;
};

/// A file exists but its content cannot be parsed.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss and was stopped.
class NanAbort : public Error {
 public:
  using Error::Error;
};

// --- hashing ---------------------------------------------------------------

std::uint64_t fnv1a64(const void* data, std::size_t size,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(const std::string& s);
std::uint64_t hash_file(const std::filesystem::path& path);
std::string hash_hex(std::uint64_t h);

// --- seeding ---------------------------------------------------------------

/// splitmix64 mix step; used to derive independent substream seeds.
std::uint64_t mix_seed(std::uint64_t x);

/// Seed for the item with the given index, independent of generation order.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);
std::uint64_t derive_seed(std::uint64_t base, const std::string& key);

// --- string / parsing helpers ----------------------------------------------

std::string trim(const std::string& s);
std::vector<std::string> split(const std::string& s, char sep);
bool parse_double(const std::string& s, double& out);
bool parse_int64(const std::string& s, std::int64_t& out);

/// Flat key=value configuration, dotted section keys, '#' comments.
using KvMap = std::map<std::string, std::string>;

KvMap parse_kv_text(const std::string& text);
KvMap load_kv_file(const std::filesystem::path& path);
std::string render_kv(const KvMap& kv);

}  // namespace leda
