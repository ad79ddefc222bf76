#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace screenkit::text {

// Replaces every invalid UTF-8 sequence with U+FFFD.
std::string sanitize_utf8(std::string_view in);

// Number of Unicode code points (input assumed valid UTF-8).
std::size_t utf8_length(std::string_view s) noexcept;

// Trims and collapses whitespace runs (ASCII whitespace and NBSP) into one space.
std::string collapse_whitespace(std::string_view in);

// Matching key for titles: collapsed whitespace, ASCII case-folded, trailing
// punctuation stripped.
std::string title_key(std::string_view title);

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);
bool iequals(std::string_view a, std::string_view b) noexcept;
bool istarts_with(std::string_view s, std::string_view prefix) noexcept;
std::vector<std::string> split(std::string_view s, char sep);
std::vector<std::string> split_lines(std::string_view s);

std::uint64_t fnv1a64(std::string_view s) noexcept;
std::string hex64(std::uint64_t v);

// Shortest representation that round-trips to the same double.
std::string format_double(double v);

// Number of whitespace-separated words; first_words keeps at most n of them.
std::size_t word_count(std::string_view s);
std::string first_words(std::string_view s, std::size_t n);

std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temp file and renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
void append_file(const std::filesystem::path& path, std::string_view content);

}  // namespace screenkit::text
