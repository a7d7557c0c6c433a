#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "apmae/errors.hpp"

namespace apmae {

/// The eleven completion-task families. Values are stable on disk.
enum class TaskKind : std::uint8_t {
  Identifier = 0,
  BoolLiteral = 1,
  StringLiteral = 2,
  NumericLiteral = 3,
  BoolOperator = 4,
  ArithOperator = 5,
  AssignOperator = 6,
  ClosingBracket = 7,
  EndOfLine = 8,
  RandomSpan = 9,
  Noise = 10,
};

inline constexpr std::size_t kTaskKindCount = 11;

inline constexpr std::array<TaskKind, kTaskKindCount> kAllTaskKinds = {
    TaskKind::Identifier,     TaskKind::BoolLiteral,   TaskKind::StringLiteral,
    TaskKind::NumericLiteral, TaskKind::BoolOperator,  TaskKind::ArithOperator,
    TaskKind::AssignOperator, TaskKind::ClosingBracket, TaskKind::EndOfLine,
    TaskKind::RandomSpan,     TaskKind::Noise,
};

inline constexpr std::array<std::string_view, kTaskKindCount> kTaskKindNames = {
    "IDENTIFIER",      "BOOL_LITERAL",    "STRING_LITERAL", "NUMERIC_LITERAL",
    "BOOL_OPERATOR",   "ARITH_OPERATOR",  "ASSIGN_OPERATOR", "CLOSING_BRACKET",
    "END_OF_LINE",     "RANDOM_SPAN",     "NOISE",
};

inline std::string_view to_string(TaskKind kind) {
  return kTaskKindNames.at(static_cast<std::size_t>(kind));
}

inline std::optional<TaskKind> parse_task_kind(std::string_view name) {
  for (std::size_t i = 0; i < kTaskKindCount; ++i) {
    if (kTaskKindNames[i] == name) return static_cast<TaskKind>(i);
  }
  return std::nullopt;
}

inline TaskKind task_kind_from_code(std::uint8_t code) {
  if (code >= kTaskKindCount) throw FormatError("unknown task code " + std::to_string(code));
  return static_cast<TaskKind>(code);
}

}  // namespace apmae
