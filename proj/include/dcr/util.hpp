#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace dcr::util {

std::string sha256_hex(std::string_view data);

std::string to_lower(std::string_view s);
bool iequals(std::string_view a, std::string_view b);
bool icontains(std::string_view haystack, std::string_view needle);
std::size_t ifind(std::string_view haystack, std::string_view needle);

std::string_view trim(std::string_view s);
std::vector<std::string> split_lines(std::string_view s);
std::string replace_all(std::string_view text, std::string_view from, std::string_view to);
std::vector<std::string> tokenize_whitespace(std::string_view text);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

// UTC wall clock that can be frozen for reproducible runs.
struct Clock {
  std::optional<std::int64_t> frozen_epoch;
  std::int64_t now_epoch() const;
  std::string now_iso() const;
};

std::string format_utc_iso8601(std::int64_t epoch_seconds);
std::int64_t parse_utc_iso8601(const std::string& text);

using Rng = std::mt19937_64;

// Unbiased-enough deterministic index draw; avoids the implementation-defined
// sequences of std::uniform_int_distribution.
std::size_t draw_index(Rng& rng, std::size_t n);

template <typename T>
void shuffle_deterministic(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = draw_index(rng, i);
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace dcr::util
