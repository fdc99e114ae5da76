#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace forge {

using json = nlohmann::json;

/// Raised when an input file cannot be used at all (unreadable, wrong version).
class FatalInputError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Raised on a violated precondition of a pure computation.
class DomainError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------- hashing

/// 64-bit FNV-1a. Used for opaque, stable identifiers only.
std::uint64_t fnv1a64(std::string_view data);
std::string hex64(std::uint64_t v);

/// Stable identifier "<prefix><16 hex>" over the tab-joined parts.
std::string stable_id(std::string_view prefix, std::initializer_list<std::string_view> parts);

/// Hex SHA-256 of a file's contents.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_hex(std::string_view data);

// ---------------------------------------------------------------- strings

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
/// Collapses whitespace runs to a single space and trims both ends.
std::string normalize_ws(std::string_view s);
std::vector<std::string> split_ws(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

// ---------------------------------------------------------------- rng

/// Deterministic generator whose derived draws do not depend on the standard
/// library's distribution implementations, so seeded runs are reproducible
/// across toolchains.
class Rng {
  public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next();
    /// Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi);
    /// Uniform integer in [0, n). n must be > 0.
    std::size_t below(std::size_t n);
    /// Standard normal via Box-Muller.
    double normal();

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

  private:
    std::uint64_t state_[4];
};

// ---------------------------------------------------------------- files

/// Reads a whole file. Throws FatalInputError when unreadable.
std::string read_file(const std::filesystem::path& path);

/// Writes through a sibling temp file and renames into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// Calls `fn(line_no, parsed)` for each non-blank line that parses as JSON.
/// Returns the number of malformed lines (which are skipped).
std::size_t for_each_jsonl(const std::filesystem::path& path,
                           const std::function<void(std::size_t, const json&)>& fn);

std::string to_jsonl(const std::vector<json>& rows);

/// Formats a double with enough digits to round-trip.
std::string format_double(double v);

}  // namespace forge
