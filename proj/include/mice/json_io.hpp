#pragma once

#include <string>

#include "json.hpp"

namespace mice {

// Formats a double with enough digits to round-trip exactly (17 significant
// digits), with a stable textual form across platforms.
std::string format_real(double v);

// Serializer that routes every number through format_real. nlohmann's dump()
// prints shortest-round-trip forms; file outputs here are required to carry
// full precision decimals instead.
std::string dump_json(const nlohmann::json& j, int indent = 2);

nlohmann::json load_json_file(const std::string& path);
void write_json_file(const std::string& path, const nlohmann::json& j);
void write_text_file(const std::string& path, const std::string& body);

}  // namespace mice
