#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "json.hpp"

namespace coe {

using json = nlohmann::json;

// Rounds every floating-point value in `j` to 9 significant digits and
// returns the compact dump (object keys are already sorted by nlohmann).
// Two documents that differ only in float noise past the 9th digit dump to
// the same bytes.
std::string canonical_dump(const json& j);

// Float rounded to 9 significant digits, the precision used in every
// serialized artifact.
double round_sig9(double v);

json read_json_file(const std::filesystem::path& path);
std::string read_file_bytes(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

// Extracts the outermost {...} object from free-form model text. Markdown
// code fences are stripped first. Throws ParseError when nothing parses.
json extract_json_object(std::string_view text);

}  // namespace coe
