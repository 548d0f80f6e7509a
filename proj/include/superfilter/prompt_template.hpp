#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "superfilter/dataset.hpp"
#include "superfilter/error.hpp"

namespace superfilter {

inline constexpr std::string_view kInstructionSlot = "{instruction}";
inline constexpr std::string_view kInputSlot = "{input}";

struct PromptTemplate {
  std::string name;
  std::string with_input_pattern;
  std::string without_input_pattern;
};

namespace detail {

inline std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  std::size_t count = 0;
  for (auto pos = haystack.find(needle); pos != std::string_view::npos; pos = haystack.find(needle, pos + needle.size())) {
    ++count;
  }
  return count;
}

}  // namespace detail

inline void validate(const PromptTemplate& t) {
  using detail::count_occurrences;
  if (count_occurrences(t.with_input_pattern, kInstructionSlot) != 1 ||
      count_occurrences(t.with_input_pattern, kInputSlot) != 1) {
    throw ConfigError("template '" + t.name + "': with-input pattern needs {instruction} and {input} exactly once");
  }
  if (count_occurrences(t.without_input_pattern, kInstructionSlot) != 1 ||
      count_occurrences(t.without_input_pattern, kInputSlot) != 0) {
    throw ConfigError("template '" + t.name + "': without-input pattern needs {instruction} exactly once and no {input}");
  }
}

/// Substitutes slots in a single left-to-right pass, so slot-like text inside
/// the sample itself is never expanded.
inline std::string render_prompt(const InstructionSample& sample, const PromptTemplate& t) {
  const std::string_view pattern = sample.has_input() ? t.with_input_pattern : t.without_input_pattern;
  std::string out;
  out.reserve(pattern.size() + sample.instruction.size() + (sample.input ? sample.input->size() : 0));
  std::size_t pos = 0;
  while (pos < pattern.size()) {
    if (pattern.compare(pos, kInstructionSlot.size(), kInstructionSlot) == 0) {
      out += sample.instruction;
      pos += kInstructionSlot.size();
    } else if (sample.has_input() && pattern.compare(pos, kInputSlot.size(), kInputSlot) == 0) {
      out += *sample.input;
      pos += kInputSlot.size();
    } else {
      out += pattern[pos++];
    }
  }
  return out;
}

// Vicuna v1.1 conversation format with its system preamble.
inline PromptTemplate vicuna_v1_template() {
  constexpr std::string_view system =
      "A chat between a curious user and an artificial intelligence assistant. "
      "The assistant gives helpful, detailed, and polite answers to the user's questions.";
  return {"vicuna-v1", std::string(system) + " USER: {instruction}\n{input} ASSISTANT:",
          std::string(system) + " USER: {instruction} ASSISTANT:"};
}

inline PromptTemplate alpaca_template() {
  return {"alpaca",
          "Below is an instruction that describes a task, paired with an input that provides further context. "
          "Write a response that appropriately completes the request.\n\n"
          "### Instruction:\n{instruction}\n\n### Input:\n{input}\n\n### Response:",
          "Below is an instruction that describes a task. "
          "Write a response that appropriately completes the request.\n\n"
          "### Instruction:\n{instruction}\n\n### Response:"};
}

inline PromptTemplate plain_template() { return {"plain", "{instruction}\n{input}\n", "{instruction}\n"}; }

inline std::vector<PromptTemplate> builtin_templates() {
  return {vicuna_v1_template(), alpaca_template(), plain_template()};
}

inline std::optional<PromptTemplate> find_builtin_template(std::string_view name) {
  for (auto& t : builtin_templates()) {
    if (t.name == name) return t;
  }
  return std::nullopt;
}

/// Template file: {"name": ..., "with_input": ..., "without_input": ...}
inline PromptTemplate load_template(const std::string& path) {
  std::string text;
  try {
    text = detail::read_file(path);
  } catch (const DataError&) {
    throw ConfigError("unknown template '" + path + "' (not a built-in name or readable file)");
  }
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("template file " + path + ": " + e.what());
  }
  try {
    PromptTemplate t{doc.at("name").get<std::string>(), doc.at("with_input").get<std::string>(),
                     doc.at("without_input").get<std::string>()};
    validate(t);
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("template file " + path + ": " + e.what());
  }
}

/// Resolves a built-in template name, or a path to a template file.
inline PromptTemplate resolve_template(const std::string& name_or_path) {
  if (auto t = find_builtin_template(name_or_path)) return *t;
  return load_template(name_or_path);
}

}  // namespace superfilter
