#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace duacm {

/// Shortest decimal form that parses back to the same double.
std::string format_real(double value);

/// Strict parse of a full field; nullopt on any trailing garbage.
std::optional<double> parse_real(std::string_view text);
std::optional<long long> parse_integer(std::string_view text);

std::vector<std::string_view> split_view(std::string_view text, char delimiter);

/// Writes `contents` to a temporary file next to `path`, then renames it over
/// `path`. A failure leaves no file at `path`.
void write_file_atomically(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

/// 64-bit FNV-1a, used for provenance fingerprints.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

}  // namespace duacm
