#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

namespace mig {

// Shortest-exact double formatting for CSV/JSONL output. %.17g round-trips;
// we first try shorter precisions so files stay readable and byte-stable.
std::string fmt_double(double v);

std::string read_text_file(const std::string& path);       // throws std::runtime_error on I/O failure
void write_text_file(const std::string& path, std::string_view content);

std::vector<std::string> split_lines(std::string_view text);

// FNV-1a 64-bit, used for manifest/run-id and task-set content hashes.
uint64_t fnv1a64(std::string_view data);
std::string hex64(uint64_t v);

}  // namespace mig
