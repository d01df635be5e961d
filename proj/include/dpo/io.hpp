#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace dpo::io {

// Shortest decimal that round-trips to the same double.
std::string format_double(double value);

std::vector<std::string> split_csv_line(std::string_view line);

// Writes to <path>.tmp then renames over <path>.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

}  // namespace dpo::io
