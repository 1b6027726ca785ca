#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace rangelab::csv {

/// Shortest round-trip decimal ("%.17g"); byte-stable across runs.
std::string num(double v);
std::string num(std::uint64_t v);

std::vector<std::string> split_line(std::string_view line);
/// Splits into rows, skipping blank lines.
std::vector<std::vector<std::string>> parse(std::string_view text);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

/// FNV-1a 64-bit digest, hex-encoded.
std::string checksum(std::string_view content);

}  // namespace rangelab::csv
