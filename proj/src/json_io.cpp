#include "mice/json_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mice {

std::string format_real(double v) {
  if (std::isnan(v)) return "null";
  if (std::isinf(v)) return v > 0 ? "1e999" : "-1e999";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  std::string s(buf);
  // Guarantee the token parses back as a JSON number, not an integer with a
  // different type.
  if (s.find_first_of(".eE") == std::string::npos) s += ".0";
  return s;
}

namespace {

void dump_rec(const nlohmann::json& j, std::ostringstream& out, int indent, int depth) {
  const std::string pad(static_cast<std::size_t>(indent * depth), ' ');
  const std::string pad_in(static_cast<std::size_t>(indent * (depth + 1)), ' ');
  switch (j.type()) {
    case nlohmann::json::value_t::object: {
      if (j.empty()) {
        out << "{}";
        return;
      }
      out << "{\n";
      std::size_t i = 0;
      for (auto it = j.begin(); it != j.end(); ++it, ++i) {
        out << pad_in << nlohmann::json(it.key()).dump() << ": ";
        dump_rec(it.value(), out, indent, depth + 1);
        if (i + 1 < j.size()) out << ",";
        out << "\n";
      }
      out << pad << "}";
      return;
    }
    case nlohmann::json::value_t::array: {
      if (j.empty()) {
        out << "[]";
        return;
      }
      bool scalars_only = true;
      for (const auto& e : j) {
        if (e.is_structured()) {
          scalars_only = false;
          break;
        }
      }
      if (scalars_only) {
        out << "[";
        for (std::size_t i = 0; i < j.size(); ++i) {
          dump_rec(j[i], out, indent, depth + 1);
          if (i + 1 < j.size()) out << ", ";
        }
        out << "]";
        return;
      }
      out << "[\n";
      for (std::size_t i = 0; i < j.size(); ++i) {
        out << pad_in;
        dump_rec(j[i], out, indent, depth + 1);
        if (i + 1 < j.size()) out << ",";
        out << "\n";
      }
      out << pad << "]";
      return;
    }
    case nlohmann::json::value_t::number_float:
      out << format_real(j.get<double>());
      return;
    default:
      out << j.dump();
      return;
  }
}

}  // namespace

std::string dump_json(const nlohmann::json& j, int indent) {
  std::ostringstream out;
  dump_rec(j, out, indent, 0);
  out << "\n";
  return out.str();
}

nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error("invalid JSON in " + path + ": " + e.what());
  }
  return j;
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
  write_text_file(path, dump_json(j));
}

void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << body;
}

}  // namespace mice
