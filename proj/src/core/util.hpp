#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rlfolio {

// 64-bit FNV-1a over a byte range; used for dataset identity in run manifests.
std::uint64_t fnv1a64(const void* data, std::size_t len);
std::string fnv1a64_file_hex(const std::string& path);

// Canonical float formatting for CSV/JSON outputs. %.17g round-trips doubles,
// which is what makes deterministic runs byte-comparable.
std::string format_double(double v);

std::vector<std::string> split(const std::string& s, char delim);
std::string trim(const std::string& s);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace rlfolio
