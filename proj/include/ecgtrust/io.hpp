#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace ecgtrust::io {

/// "%.17g"; non-finite values become "nan", "inf", "-inf".
std::string format_double(double v);

/// Deterministic JSON text: keys sorted, floats at 17 significant digits,
/// two-space indent, trailing newline.
std::string dump_json(const nlohmann::json& value);

/// RFC-4180 field quoting (only when the field needs it).
std::string csv_field(std::string_view field);
std::string csv_row(const std::vector<std::string>& fields);

void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

nlohmann::json read_json(const std::filesystem::path& path);

/// FNV-1a 64-bit of the bytes, as 16 hex digits.
std::string content_hash(std::string_view bytes);

}  // namespace ecgtrust::io
