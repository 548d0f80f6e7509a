#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"
#include "superfilter/error.hpp"

namespace superfilter {

struct InstructionSample {
  std::string id;
  std::string instruction;
  std::optional<std::string> input;
  std::string response;

  [[nodiscard]] bool has_input() const { return input.has_value() && !input->empty(); }

  friend bool operator==(const InstructionSample&, const InstructionSample&) = default;
};

/// Ordered collection of samples. The position of a sample in `samples` is the
/// tie-break key for every downstream ranking.
struct Dataset {
  std::vector<InstructionSample> samples;
  std::string source_path;

  [[nodiscard]] std::size_t size() const { return samples.size(); }
  [[nodiscard]] bool empty() const { return samples.empty(); }

  /// id -> position
  [[nodiscard]] std::unordered_map<std::string, std::size_t> index() const {
    std::unordered_map<std::string, std::size_t> out;
    out.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) out.emplace(samples[i].id, i);
    return out;
  }
};

enum class DatasetFormat { kAlpacaJson, kJsonl };

namespace detail {

inline bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write file: " + path);
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw DataError("write failed: " + path);
}

inline std::string positional_id(std::size_t index, std::size_t n) {
  std::size_t width = 6;
  for (std::size_t v = n > 0 ? n - 1 : 0; v >= 1000000; v /= 10) ++width;
  std::string digits = std::to_string(index);
  return std::string(width > digits.size() ? width - digits.size() : 0, '0') + digits;
}

inline std::string field_string(const nlohmann::json& record, const char* key, std::size_t index) {
  const auto it = record.find(key);
  if (it == record.end() || !it->is_string()) {
    throw FormatError("record " + std::to_string(index) + ": missing or non-string field '" + key + "'");
  }
  return it->get<std::string>();
}

inline InstructionSample sample_from_json(const nlohmann::json& record, std::size_t index, std::size_t n) {
  if (!record.is_object()) throw FormatError("record " + std::to_string(index) + ": not a JSON object");
  InstructionSample s;
  s.instruction = field_string(record, "instruction", index);
  if (record.contains("response")) {
    s.response = field_string(record, "response", index);
  } else {
    s.response = field_string(record, "output", index);
  }
  if (const auto it = record.find("input"); it != record.end() && !it->is_null()) {
    if (!it->is_string()) throw FormatError("record " + std::to_string(index) + ": non-string field 'input'");
    s.input = it->get<std::string>();
  }
  if (const auto it = record.find("id"); it != record.end() && !it->is_null()) {
    if (it->is_string()) {
      s.id = it->get<std::string>();
    } else if (it->is_number_integer()) {
      s.id = std::to_string(it->get<long long>());
    } else {
      throw FormatError("record " + std::to_string(index) + ": field 'id' must be a string or integer");
    }
  } else {
    s.id = positional_id(index, n);
  }
  return s;
}

inline void validate_dataset(const Dataset& ds) {
  std::vector<std::string> empty;
  std::unordered_set<std::string> seen;
  std::vector<std::string> dupes;
  for (const auto& s : ds.samples) {
    if (is_blank(s.response)) empty.push_back(s.id);
    if (!seen.insert(s.id).second) dupes.push_back(s.id);
  }
  auto join = [](const std::vector<std::string>& ids) {
    std::string out;
    for (const auto& id : ids) out += (out.empty() ? "" : ", ") + id;
    return out;
  };
  if (!empty.empty()) throw ValidationError("empty response in samples: " + join(empty));
  if (!dupes.empty()) throw ValidationError("duplicate sample ids: " + join(dupes));
}

}  // namespace detail

inline DatasetFormat format_from_path(std::string_view path) {
  return path.ends_with(".jsonl") ? DatasetFormat::kJsonl : DatasetFormat::kAlpacaJson;
}

inline Dataset parse_dataset(std::string_view text, DatasetFormat format, std::string source_path = {}) {
  Dataset ds;
  ds.source_path = std::move(source_path);
  if (format == DatasetFormat::kAlpacaJson) {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(std::string("invalid JSON: ") + e.what());
    }
    if (!doc.is_array()) throw FormatError("expected a JSON array of records");
    ds.samples.reserve(doc.size());
    for (std::size_t i = 0; i < doc.size(); ++i) {
      ds.samples.push_back(detail::sample_from_json(doc[i], i, doc.size()));
    }
  } else {
    std::vector<nlohmann::json> records;
    std::istringstream lines{std::string(text)};
    std::string line;
    while (std::getline(lines, line)) {
      if (detail::is_blank(line)) continue;
      try {
        records.push_back(nlohmann::json::parse(line));
      } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("record " + std::to_string(records.size()) + ": " + e.what());
      }
    }
    ds.samples.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
      ds.samples.push_back(detail::sample_from_json(records[i], i, records.size()));
    }
  }
  detail::validate_dataset(ds);
  return ds;
}

inline Dataset load_dataset(const std::string& path, std::optional<DatasetFormat> format = std::nullopt) {
  return parse_dataset(detail::read_file(path), format.value_or(format_from_path(path)), path);
}

/// Canonical JSONL: one {id, instruction, input, response} object per line.
inline std::string to_jsonl(const Dataset& ds) {
  std::string out;
  for (const auto& s : ds.samples) {
    nlohmann::ordered_json row;
    row["id"] = s.id;
    row["instruction"] = s.instruction;
    row["input"] = s.input ? nlohmann::ordered_json(*s.input) : nlohmann::ordered_json(nullptr);
    row["response"] = s.response;
    out += row.dump();
    out += '\n';
  }
  return out;
}

/// Alpaca-format array of {id, instruction, input, output}, suitable for finetuning scripts.
inline std::string to_alpaca_json(const Dataset& ds) {
  nlohmann::ordered_json doc = nlohmann::ordered_json::array();
  for (const auto& s : ds.samples) {
    nlohmann::ordered_json row;
    row["id"] = s.id;
    row["instruction"] = s.instruction;
    row["input"] = s.input.value_or("");
    row["output"] = s.response;
    doc.push_back(std::move(row));
  }
  return doc.dump(2) + "\n";
}

inline void save_dataset(const Dataset& ds, const std::string& path, std::optional<DatasetFormat> format = std::nullopt) {
  const auto fmt = format.value_or(format_from_path(path));
  detail::write_file(path, fmt == DatasetFormat::kJsonl ? to_jsonl(ds) : to_alpaca_json(ds));
}

}  // namespace superfilter
